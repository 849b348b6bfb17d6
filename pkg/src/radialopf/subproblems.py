"""Per-bus solver kernels for the distributed OPF iteration.

Each bus alternates between two kinds of local problems:

* an x-step that pulls its own variable copies toward the neighborhood
  observations: square completion collapses the weighted penalty terms
  into a single squared distance, after which the matrix part is a
  projection onto the PSD cone and the injection part splits into
  per-phase scalar problems with closed forms (box clamp, or half-disk
  with at most one positive multiplier root);
* a y-step that re-solves the neighborhood observations subject to the
  branch-flow equalities, a positive-diagonal quadratic over a real
  parameter vector with a full-row-rank constraint matrix, solved in
  closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .hermitian import psd_project
from .network import PhaseSet, phase_lift, phase_project

__all__ = [
    "XBlock",
    "HatConstants",
    "SelfObservation",
    "FlowObservation",
    "VoltageObservation",
    "complete_square_x0",
    "solve_x0_matrix",
    "project_injection_box",
    "project_injection_disk",
    "solve_disk_multiplier",
    "disk_case",
    "solve_x1_voltage",
    "YContext",
    "YLocal",
    "ConstraintSystem",
    "YNodeSolver",
    "build_constraint_system",
    "solve_y_node",
]

SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# x-update: square completion and block projection
# ---------------------------------------------------------------------------


@dataclass
class XBlock:
    """One bus's primal tuple (v, s, S, ell); S and ell are absent at the root."""

    v: np.ndarray
    s: np.ndarray
    S: np.ndarray | None = None
    ell: np.ndarray | None = None

    def copy(self) -> "XBlock":
        return XBlock(
            self.v.copy(),
            self.s.copy(),
            None if self.S is None else self.S.copy(),
            None if self.ell is None else self.ell.copy(),
        )


@dataclass
class SelfObservation:
    """A bus's own observation copies and their multipliers."""

    v: np.ndarray
    s: np.ndarray
    S: np.ndarray | None
    ell: np.ndarray | None
    mu_v: np.ndarray
    mu_s: np.ndarray
    mu_S: np.ndarray | None
    mu_ell: np.ndarray | None


@dataclass
class FlowObservation:
    """Branch-flow observation a parent holds about one of its children."""

    S: np.ndarray
    ell: np.ndarray
    mu_S: np.ndarray
    mu_ell: np.ndarray


@dataclass
class VoltageObservation:
    """Voltage observation a child holds about its parent."""

    v: np.ndarray
    mu_v: np.ndarray


@dataclass
class HatConstants:
    """Square-completion targets for one bus's x-step.

    ``v_hat``/``S_hat``/``ell_hat`` assemble into the Hermitian target of
    the PSD block distance; ``s_hat`` is the injection prox center. The
    root has no branch variables, so its S/ell targets are None.
    """

    v_hat: np.ndarray
    s_hat: np.ndarray
    S_hat: np.ndarray | None = None
    ell_hat: np.ndarray | None = None

    def block(self) -> np.ndarray:
        if self.S_hat is None or self.ell_hat is None:
            raise ValueError("root hat constants have no matrix block")
        m = self.v_hat.shape[0]
        w = np.empty((2 * m, 2 * m), dtype=complex)
        w[:m, :m] = self.v_hat
        w[:m, m:] = self.S_hat
        w[m:, :m] = self.S_hat.conj().T
        w[m:, m:] = self.ell_hat
        return w


def complete_square_x0(
    self_obs: SelfObservation,
    parent_obs: FlowObservation | None,
    child_obs: list[VoltageObservation],
    rho: float,
) -> HatConstants:
    """Collapse the weighted observation penalties into prox targets.

    Every scalar variable w appears in several penalty terms
    sum_j kappa_j/2 * rho * |w - w_j|^2 plus a linear multiplier term;
    completing the square gives the target
    (sum_j kappa_j w_j - mu_w / rho) / sum_j kappa_j. The observation
    weights are chosen so the v/S/ell targets combine into a single
    Hermitian block distance: self weights (2|C|+3, 1, 2, |C|+1) for
    (S, s, v, ell), parent weight 1 for S and ell, and weight 1 for the
    voltage copy held by each child.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    nc = len(child_obs)

    v_num = 2.0 * self_obs.v - (self_obs.mu_v / rho)
    for ob in child_obs:
        v_num = v_num + ob.v - ob.mu_v / rho
    v_hat = v_num / (nc + 2.0)

    s_hat = self_obs.s - self_obs.mu_s / rho

    if parent_obs is None:
        if self_obs.S is not None:
            raise ValueError("bus with branch variables needs a parent observation")
        return HatConstants(v_hat, s_hat)

    if self_obs.S is None or self_obs.ell is None:
        raise ValueError("missing self branch observation")
    s_weight = 2.0 * nc + 3.0
    S_hat = (
        s_weight * self_obs.S
        + parent_obs.S
        - (self_obs.mu_S + parent_obs.mu_S) / rho
    ) / (s_weight + 1.0)
    ell_hat = (
        (nc + 1.0) * self_obs.ell
        + parent_obs.ell
        - (self_obs.mu_ell + parent_obs.mu_ell) / rho
    ) / (nc + 2.0)
    return HatConstants(v_hat, s_hat, S_hat, ell_hat)


def solve_x0_matrix(hat: HatConstants) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Minimize the block distance over the PSD cone; returns (v, S, ell)."""
    w = hat.block()
    m = hat.v_hat.shape[0]
    x = psd_project(w).to_matrix()
    return x[:m, :m], x[:m, m:], x[m:, m:]


# ---------------------------------------------------------------------------
# x-update: per-phase injection projections
# ---------------------------------------------------------------------------


def _clamp(x: float, lo: float, hi: float) -> float:
    return min(max(x, lo), hi)


def project_injection_box(
    a1: float,
    b1: float,
    a2: float,
    b2: float,
    p_lo: float,
    p_hi: float,
    q_lo: float,
    q_hi: float,
) -> tuple[float, float]:
    """Minimize a1/2 p^2 + b1 p + a2/2 q^2 + b2 q over a rectangle.

    Separable strictly convex quadratic: clamp each unconstrained
    minimizer into its interval.
    """
    if a1 <= 0 or a2 <= 0:
        raise ValueError("nonpositive curvature")
    return _clamp(-b1 / a1, p_lo, p_hi), _clamp(-b2 / a2, q_lo, q_hi)


def disk_case(a1: float, b1: float, a2: float, b2: float, c: float) -> int:
    """Which closed-form branch applies for the half-disk projection (1, 2, or 3)."""
    if a1 <= 0 or a2 <= 0 or c <= 0:
        raise ValueError("nonpositive curvature or radius")
    if b1 >= 0:
        return 1
    if (b1 / a1) ** 2 + (b2 / a2) ** 2 <= c * c:
        return 2
    return 3


def solve_disk_multiplier(
    a1: float, b1: float, a2: float, b2: float, c: float
) -> float:
    """Unique positive root of g(lam) = b1^2/(a1+2lam)^2 + b2^2/(a2+2lam)^2 - c^2.

    g is strictly decreasing and convex on lam >= 0 and g(0) > 0 whenever
    the unconstrained minimizer lies outside the disk, so a safeguarded
    Newton iteration from the left converges monotonically.
    """

    def g(lam: float) -> float:
        return (b1 / (a1 + 2.0 * lam)) ** 2 + (b2 / (a2 + 2.0 * lam)) ** 2 - c * c

    def dg(lam: float) -> float:
        return (
            -4.0 * b1 * b1 / (a1 + 2.0 * lam) ** 3
            - 4.0 * b2 * b2 / (a2 + 2.0 * lam) ** 3
        )

    lo = 0.0
    if g(lo) <= 0.0:
        raise ValueError("bracketing failure: minimizer already inside the disk")
    hi = max(
        1.0,
        0.5 * (SQRT2 * abs(b1) / c - a1),
        0.5 * (SQRT2 * abs(b2) / c - a2),
    )
    for _ in range(200):
        if g(hi) <= 0.0:
            break
        hi *= 2.0
    else:
        raise ValueError("bracketing failure: no sign change found")

    lam = lo
    val = g(lam)
    for _ in range(200):
        if abs(val) <= 1e-12:
            break
        step = lam - val / dg(lam)
        if not (lo < step < hi):
            step = 0.5 * (lo + hi)
        lam = step
        val = g(lam)
        if val > 0.0:
            lo = lam
        else:
            hi = lam
        if hi - lo <= 1e-16 * (1.0 + hi):
            break
    return lam


def project_injection_disk(
    a1: float, b1: float, a2: float, b2: float, c: float
) -> tuple[float, float]:
    """Minimize a1/2 p^2 + b1 p + a2/2 q^2 + b2 q over p >= 0, p^2 + q^2 <= c^2."""
    case = disk_case(a1, b1, a2, b2, c)
    if case == 1:
        return 0.0, _clamp(-b2 / a2, -c, c)
    if case == 2:
        return -b1 / a1, -b2 / a2
    lam = solve_disk_multiplier(a1, b1, a2, b2, c)
    return -b1 / (a1 + 2.0 * lam), -b2 / (a2 + 2.0 * lam)


# ---------------------------------------------------------------------------
# x-update: voltage magnitude clamp
# ---------------------------------------------------------------------------


def solve_x1_voltage(
    lam: np.ndarray,
    y_v: np.ndarray,
    v_lo,
    v_hi,
    rho: float,
) -> np.ndarray:
    """Prox of the voltage-limit indicator around the consensus pull.

    Minimizes <lam, x> + rho/2 ||x - y_v||^2 with per-phase bounds on the
    diagonal, so the base point is y_v - lam/rho; diagonal entries clamp
    into [v_lo, v_hi] and off-diagonal entries pass through.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    out = y_v - lam / rho
    diag = np.clip(out.diagonal().real, v_lo, v_hi)
    np.fill_diagonal(out, diag)
    return out


# ---------------------------------------------------------------------------
# y-update: equality-constrained quadratic over a real parameterization
# ---------------------------------------------------------------------------


def _herm_nparams(n: int) -> int:
    return n * n


def herm_to_params(a: np.ndarray, n: int) -> np.ndarray:
    """Isometric real parameters of a Hermitian matrix (||a||_F = ||theta||_2)."""
    theta = np.empty(n * n)
    theta[:n] = a.diagonal().real
    k = n
    for i in range(n):
        for j in range(i + 1, n):
            theta[k] = SQRT2 * a[i, j].real
            theta[k + 1] = SQRT2 * a[i, j].imag
            k += 2
    return theta


def params_to_herm(theta: np.ndarray, n: int) -> np.ndarray:
    a = np.zeros((n, n), dtype=complex)
    a[np.diag_indices(n)] = theta[:n]
    k = n
    for i in range(n):
        for j in range(i + 1, n):
            z = complex(theta[k], theta[k + 1]) / SQRT2
            a[i, j] = z
            a[j, i] = z.conjugate()
            k += 2
    return a


def cmat_to_params(a: np.ndarray) -> np.ndarray:
    return np.concatenate([a.real.ravel(), a.imag.ravel()])


def params_to_cmat(theta: np.ndarray, n: int) -> np.ndarray:
    half = n * n
    return theta[:half].reshape(n, n) + 1j * theta[half:].reshape(n, n)


def cvec_to_params(a: np.ndarray) -> np.ndarray:
    return np.concatenate([a.real, a.imag])


def params_to_cvec(theta: np.ndarray, n: int) -> np.ndarray:
    return theta[:n] + 1j * theta[n:]


def _herm_rows(a: np.ndarray, n: int) -> np.ndarray:
    """Flatten a Hermitian-valued equation into n^2 independent real rows."""
    rows = np.empty(n * n)
    rows[:n] = a.diagonal().real
    k = n
    for i in range(n):
        for j in range(i + 1, n):
            rows[k] = a[i, j].real
            rows[k + 1] = a[i, j].imag
            k += 2
    return rows


@dataclass(frozen=True)
class YContext:
    """Static shape of one bus's y-subproblem.

    ``z`` and ``parent_phases`` are None at the root; ``children`` lists
    (bus id, phases, line impedance) for each child in ascending id order.
    """

    bus_id: int
    phases: PhaseSet
    z: np.ndarray | None
    parent_phases: PhaseSet | None
    children: tuple[tuple[int, PhaseSet, np.ndarray], ...]

    @property
    def is_root(self) -> bool:
        return self.z is None


@dataclass
class YLocal:
    """Solution of one bus's y-subproblem, unpacked to complex variables."""

    v_self: np.ndarray
    s_self: np.ndarray
    S_self: np.ndarray | None
    ell_self: np.ndarray | None
    v_parent: np.ndarray | None
    child_flows: dict[int, tuple[np.ndarray, np.ndarray]]


@dataclass
class ConstraintSystem:
    """Real quadratic min 1/2 y^T M y + c^T y subject to A y = 0.

    ``a_mat`` has full row rank and ``m_diag`` is strictly positive; both
    are fixed by the network, only ``c_vec`` changes across iterations.
    """

    a_mat: np.ndarray
    m_diag: np.ndarray
    c_vec: np.ndarray
    context: YContext


class _Layout:
    """Offsets of each variable block inside the stacked parameter vector."""

    def __init__(self, ctx: YContext):
        m = len(ctx.phases)
        self.m = m
        pos = 0

        def take(count: int) -> slice:
            nonlocal pos
            sl = slice(pos, pos + count)
            pos += count
            return sl

        self.v_self = take(_herm_nparams(m))
        self.s_self = take(2 * m)
        if ctx.is_root:
            self.S_self = None
            self.ell_self = None
            self.v_parent = None
        else:
            self.S_self = take(2 * m * m)
            self.ell_self = take(_herm_nparams(m))
            mp = len(ctx.parent_phases)
            self.v_parent = take(_herm_nparams(mp))
        self.child = {}
        for cid, cph, _ in ctx.children:
            mc = len(cph)
            self.child[cid] = (take(2 * mc * mc), take(_herm_nparams(mc)))
        self.size = pos

    def unpack(self, theta: np.ndarray, ctx: YContext) -> YLocal:
        m = self.m
        v_self = params_to_herm(theta[self.v_self], m)
        s_self = params_to_cvec(theta[self.s_self], m)
        S_self = ell_self = v_parent = None
        if not ctx.is_root:
            S_self = params_to_cmat(theta[self.S_self], m)
            ell_self = params_to_herm(theta[self.ell_self], m)
            v_parent = params_to_herm(theta[self.v_parent], len(ctx.parent_phases))
        flows = {}
        for cid, cph, _ in ctx.children:
            mc = len(cph)
            s_sl, l_sl = self.child[cid]
            flows[cid] = (
                params_to_cmat(theta[s_sl], mc),
                params_to_herm(theta[l_sl], mc),
            )
        return YLocal(v_self, s_self, S_self, ell_self, v_parent, flows)


def _constraint_values(local: YLocal, ctx: YContext) -> np.ndarray:
    """Stacked branch-flow residual rows at a candidate y point (linear in y)."""
    m = len(ctx.phases)
    rows = []
    if not ctx.is_root:
        z = ctx.z
        drop = (
            phase_project(local.v_parent, ctx.parent_phases, ctx.phases)
            - local.v_self
            + z @ local.S_self.conj().T
            + local.S_self @ z.conj().T
            - z @ local.ell_self @ z.conj().T
        )
        rows.append(_herm_rows(drop, m))
    acc = np.zeros(m, dtype=complex)
    for cid, cph, zc in ctx.children:
        s_j, ell_j = local.child_flows[cid]
        acc += phase_lift(s_j - zc @ ell_j, cph, ctx.phases).diagonal()
    if not ctx.is_root:
        acc -= local.S_self.diagonal()
    balance = local.s_self + acc
    rows.append(np.concatenate([balance.real, balance.imag]))
    return np.concatenate(rows)


class YNodeSolver:
    """Prefactored closed-form solver for one bus's y-subproblem.

    The constraint matrix and penalty weights depend only on the network,
    so the full solution operator
    P = M^-1 A^T (A M^-1 A^T)^-1 A M^-1 - M^-1 is computed once and every
    iteration reduces to assembling c and one matrix-vector product.
    """

    def __init__(self, ctx: YContext, rho: float):
        if rho <= 0:
            raise ValueError("rho must be positive")
        self.ctx = ctx
        self.rho = rho
        self.layout = _Layout(ctx)
        n = self.layout.size
        m = len(ctx.phases)
        nc = len(ctx.children)

        a_rows = (0 if ctx.is_root else m * m) + 2 * m
        a_mat = np.zeros((a_rows, n))
        for col in range(n):
            theta = np.zeros(n)
            theta[col] = 1.0
            local = self.layout.unpack(theta, ctx)
            a_mat[:, col] = _constraint_values(local, ctx)
        if np.linalg.matrix_rank(a_mat) != a_rows:
            raise ValueError(
                f"bus {ctx.bus_id}: rank-deficient constraint matrix "
                "(malformed phase data)"
            )

        weights = np.empty(n)
        weights[self.layout.v_self] = 3.0  # observation weight 2 + voltage copy
        weights[self.layout.s_self] = 1.0
        if not ctx.is_root:
            weights[self.layout.S_self] = 2.0 * nc + 3.0
            weights[self.layout.ell_self] = nc + 1.0
            weights[self.layout.v_parent] = 1.0
        for s_sl, l_sl in self.layout.child.values():
            weights[s_sl] = 1.0
            weights[l_sl] = 1.0
        m_diag = rho * weights

        self.a_mat = a_mat
        self.m_diag = m_diag
        minv = 1.0 / m_diag
        gram = (a_mat * minv) @ a_mat.T
        operator = (minv[:, None] * a_mat.T) @ np.linalg.solve(gram, a_mat * minv)
        operator[np.diag_indices(n)] -= minv
        self._operator = operator

    def assemble_c(
        self,
        x_self: XBlock,
        x1_v: np.ndarray,
        mu_self: SelfObservation,
        lam1: np.ndarray,
        mu_parent_v: np.ndarray | None,
        x_parent_v: np.ndarray | None,
        child_mults: dict[int, tuple[np.ndarray, np.ndarray]],
        child_x: dict[int, tuple[np.ndarray, np.ndarray]],
    ) -> np.ndarray:
        """Linear coefficients -mu - rho * weight * x for each parameter block."""
        rho = self.rho
        lay = self.layout
        nc = len(self.ctx.children)
        m = lay.m
        c = np.empty(lay.size)
        c[lay.v_self] = -herm_to_params(mu_self.mu_v + lam1, m) - rho * herm_to_params(
            2.0 * x_self.v + x1_v, m
        )
        c[lay.s_self] = -cvec_to_params(mu_self.mu_s) - rho * cvec_to_params(x_self.s)
        if not self.ctx.is_root:
            c[lay.S_self] = -cmat_to_params(mu_self.mu_S) - rho * (
                2.0 * nc + 3.0
            ) * cmat_to_params(x_self.S)
            c[lay.ell_self] = -herm_to_params(mu_self.mu_ell, m) - rho * (
                nc + 1.0
            ) * herm_to_params(x_self.ell, m)
            mp = len(self.ctx.parent_phases)
            c[lay.v_parent] = -herm_to_params(mu_parent_v, mp) - rho * herm_to_params(
                x_parent_v, mp
            )
        for cid, cph, _ in self.ctx.children:
            mc = len(cph)
            s_sl, l_sl = lay.child[cid]
            mu_S_j, mu_ell_j = child_mults[cid]
            S_j, ell_j = child_x[cid]
            c[s_sl] = -cmat_to_params(mu_S_j) - rho * cmat_to_params(S_j)
            c[l_sl] = -herm_to_params(mu_ell_j, mc) - rho * herm_to_params(ell_j, mc)
        return c

    def solve(self, c: np.ndarray) -> YLocal:
        theta = self._operator @ c
        return self.layout.unpack(theta, self.ctx)

    def system(self, c: np.ndarray) -> ConstraintSystem:
        return ConstraintSystem(self.a_mat, self.m_diag, c, self.ctx)


def build_constraint_system(
    ctx: YContext,
    rho: float,
    x_self: XBlock,
    x1_v: np.ndarray,
    mu_self: SelfObservation,
    lam1: np.ndarray,
    mu_parent_v: np.ndarray | None,
    x_parent_v: np.ndarray | None,
    child_mults: dict[int, tuple[np.ndarray, np.ndarray]],
    child_x: dict[int, tuple[np.ndarray, np.ndarray]],
) -> ConstraintSystem:
    """Assemble the full (A, M, c) system for one bus's y-subproblem."""
    solver = YNodeSolver(ctx, rho)
    c = solver.assemble_c(
        x_self, x1_v, mu_self, lam1, mu_parent_v, x_parent_v, child_mults, child_x
    )
    return solver.system(c)


def solve_y_node(sys: ConstraintSystem) -> YLocal:
    """Closed-form minimizer y = (M^-1 A^T (A M^-1 A^T)^-1 A M^-1 - M^-1) c."""
    a = sys.a_mat
    minv = 1.0 / sys.m_diag
    u = minv * sys.c_vec
    gram = (a * minv) @ a.T
    try:
        nu = np.linalg.solve(gram, a @ u)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular constraint Gram matrix") from exc
    theta = minv * (a.T @ nu) - u
    return _Layout(sys.context).unpack(theta, sys.context)
