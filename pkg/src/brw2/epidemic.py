"""Infected/immune two-type model: closed-form moments and correlations.

Type 1 (infected) particles walk, die at rate mu1, infect n - 1 new
particles at rate b_n, and build immunity (convert to type 2) at rate r;
type 2 (immune) particles only walk and die.  With

    beta = sum (n - 1) b_n,     beta2 = sum n (n - 1) b_n,
    A    = beta - mu1 - r,

the first moments have closed forms (R1 = e^{At} p1, R2 by variation of
constants), the second moment of the infected count follows Duhamel's
principle

    M2(t,x,y) = M1(t,x,y) + beta2 int_0^t sum_w M1(t-s,x,w) M1^2(s,w,y) ds,

and the pair correlation functions R11, R12, R22 close into a linear ODE
system driven by the first moments.  The pair system is integrated over
full (x, y) boxes: the single-particle initial condition delta_0(x)
delta_0(y) is not translation invariant, so no difference reduction is
applied to the stored fields; origin-anchored u = y - x slices are exposed
for output.

Everything here is pure evaluation; box integrations own their state and
distinct times can be computed concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.integrate import solve_ivp

from .branching import BranchingLaw
from .lattice import JumpKernel, ThetaGrid, fourier_symbol
from .moments import (BOUNDARY_TOL, MAX_SIMPSON_NODES, SIMPSON_TOL, BoxTransform,
                      _box_shape, _clip_roundoff, _exp_diff_quotient, box_sites,
                      build_box_generator)

__all__ = [
    "EpidemicLaw",
    "CorrelationField",
    "M2Value",
    "RatioPoint",
    "epidemic_first_moments",
    "epidemic_first_moment_profiles",
    "epidemic_m2",
    "epidemic_m2_ode",
    "intermittency_ratio",
    "correlation_ode",
    "gk_ode",
]

ODE_RTOL = 1e-7
ODE_ATOL = 1e-9
M1_FLOOR = 1e-280


@dataclass(frozen=True)
class EpidemicLaw:
    """Infection intensities b_n (n >= 2), death rates, and conversion rate."""

    mu1: float
    mu2: float
    infection_rates: tuple[tuple[int, float], ...]
    conversion_rate: float
    beta: float = field(init=False)
    beta2: float = field(init=False)
    growth: float = field(init=False)    # A = beta - mu1 - r

    def __init__(self, mu1: float, mu2: float, infection_rates,
                 conversion_rate: float = 0.0):
        mu1, mu2, r = float(mu1), float(mu2), float(conversion_rate)
        for name, v in (("mu1", mu1), ("mu2", mu2), ("conversion_rate", r)):
            if v < 0 or not math.isfinite(v):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        rates = []
        for n, bn in dict(infection_rates).items():
            n, bn = int(n), float(bn)
            if n < 2:
                raise ValueError(f"infection entry n={n}: requires n >= 2")
            if bn < 0 or not math.isfinite(bn):
                raise ValueError(f"infection rate b_{n} must be finite and >= 0")
            if bn > 0:
                rates.append((n, bn))
        rates = tuple(sorted(rates))
        beta = sum((n - 1) * bn for n, bn in rates)
        beta2 = sum(n * (n - 1) * bn for n, bn in rates)
        object.__setattr__(self, "mu1", mu1)
        object.__setattr__(self, "mu2", mu2)
        object.__setattr__(self, "infection_rates", rates)
        object.__setattr__(self, "conversion_rate", r)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "beta2", beta2)
        object.__setattr__(self, "growth", beta - mu1 - r)

    def to_branching_law(self) -> BranchingLaw:
        """Map onto the generic engine: beta_1(n, 0) = b_n, beta_2 = 0."""
        return BranchingLaw(
            mu1=self.mu1, mu2=self.mu2,
            beta1={(n, 0): bn for n, bn in self.infection_rates},
            beta2={}, conversion_rate=self.conversion_rate)


# ---------------------------------------------------------------------------
# first moments
# ---------------------------------------------------------------------------

def _symbol_pair(law, kernel1, kappa1, kernel2, kappa2, pts):
    s1 = kappa1 * fourier_symbol(kernel1, pts)
    s2 = kappa2 * fourier_symbol(kernel2, pts)
    p = s1 + law.growth            # exponent of R1hat
    q = s2 - law.mu2               # homogeneous exponent of R2hat
    return p, q


def epidemic_first_moment_profiles(law: EpidemicLaw, kernel1: JumpKernel,
                                   kappa1: float, kernel2: JumpKernel, kappa2: float,
                                   t: float, box_radius: int,
                                   grid: ThetaGrid | None = None):
    """(R1, R2) fields over the box, started from one infected at the origin.

    R1hat = e^{(A + kappa1 ahat1) t}; R2hat = r (e^{pt} - e^{qt}) / (p - q)
    with p = kappa1 ahat1 + A and q = kappa2 ahat2 - mu2, the coinciding
    exponent branch r t e^{qt} taken inside the stable quotient.
    """
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    grid = grid or ThetaGrid.for_dim(kernel1.dim)
    tr = BoxTransform(grid, box_radius)
    p, q = _symbol_pair(law, kernel1, kappa1, kernel2, kappa2, grid.points)
    r1_hat = np.exp(p * t)
    r2_hat = law.conversion_rate * _exp_diff_quotient(p, q, t)
    r1 = _clip_roundoff(tr.to_box(r1_hat.astype(complex)))
    r2 = _clip_roundoff(tr.to_box(r2_hat.astype(complex)))
    return r1, r2


def epidemic_first_moments(law: EpidemicLaw, kernel1: JumpKernel, kappa1: float,
                           kernel2: JumpKernel, kappa2: float, t: float, x,
                           grid: ThetaGrid | None = None) -> tuple[float, float]:
    """(R1(t, x), R2(t, x)) at a single site."""
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    grid = grid or ThetaGrid.for_dim(kernel1.dim)
    pts = grid.points
    p, q = _symbol_pair(law, kernel1, kappa1, kernel2, kappa2, pts)
    xv = np.asarray((x,) if isinstance(x, (int, np.integer)) else tuple(x),
                    dtype=np.float64)
    phase = np.cos(pts @ xv)
    r1 = float(np.exp(p * t) @ phase) / grid.n_points
    r2 = float((law.conversion_rate * _exp_diff_quotient(p, q, t)) @ phase) / grid.n_points
    return r1, r2


# ---------------------------------------------------------------------------
# second moment of the infected count
# ---------------------------------------------------------------------------

class M2Value(NamedTuple):
    value: float
    boundary_mass: float
    degraded: bool


def epidemic_m2(law: EpidemicLaw, kernel1: JumpKernel, kappa1: float, t: float,
                x, y, grid: ThetaGrid | None = None, box_radius: int = 30,
                n_nodes: int = 200, tol: float = SIMPSON_TOL) -> M2Value:
    """M2(t, x, y) by the Duhamel route.

    The lattice convolution sum_w M1(t-s, x, w) M1^2(s, w, y) is evaluated
    as a theta-space product of the walk symbol with the transform of the
    squared (box-truncated) walk profile; composite Simpson in s with node
    doubling until ``tol``.  ``boundary_mass`` is the worst walk mass
    outside the box over the time nodes.
    """
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    grid = grid or ThetaGrid.for_dim(kernel1.dim)
    tr = BoxTransform(grid, box_radius)
    u = np.asarray(_vec(y), dtype=np.int64) - np.asarray(_vec(x), dtype=np.int64)
    pts = grid.points
    sym = kappa1 * fourier_symbol(kernel1, pts)
    phase = np.cos(pts @ u.astype(np.float64))
    a_gr = law.growth
    m1 = math.exp(a_gr * t) * float(np.exp(sym * t) @ phase) / grid.n_points
    if t == 0.0 or law.beta2 == 0.0:
        return M2Value(value=m1, boundary_mass=0.0, degraded=False)

    nodes = max(2, n_nodes - n_nodes % 2)
    prev = None
    while True:
        integral, defect = _duhamel_walk_integral(sym, tr, grid, t, nodes, phase, a_gr)
        val = m1 + law.beta2 * math.exp(a_gr * t) * integral
        if prev is not None and abs(val - prev) <= tol * (1.0 + abs(val)):
            break
        if nodes >= MAX_SIMPSON_NODES:
            break
        prev = val
        nodes *= 2
    return M2Value(value=val, boundary_mass=defect, degraded=defect > BOUNDARY_TOL)


def _duhamel_walk_integral(sym, tr: BoxTransform, grid: ThetaGrid, t: float,
                           n_nodes: int, phase, a_gr: float) -> tuple[float, float]:
    """int_0^t e^{As} (p_{t-s} * p_s^2)(u) ds; returns (integral, box defect)."""
    s_nodes = np.linspace(0.0, t, n_nodes + 1)
    w = np.ones(n_nodes + 1)
    w[1:-1:2], w[2:-1:2] = 4.0, 2.0
    w *= (t / n_nodes) / 3.0
    box_shape = _box_shape(tr.box_radius, tr.dim)
    total = 0.0
    defect = 0.0
    block = 64
    for lo in range(0, n_nodes + 1, block):
        s_blk = s_nodes[lo:lo + block]
        w_blk = w[lo:lo + block]
        prof = tr.to_box(np.exp(sym[None, :] * s_blk[:, None]).astype(complex))
        flat = prof.reshape(len(s_blk), -1)
        defect = max(defect, float(np.abs(1.0 - flat.sum(axis=1)).max()))
        sq_hat = tr.to_theta((flat ** 2).reshape((len(s_blk),) + box_shape))
        mixed = np.exp(sym[None, :] * (t - s_blk)[:, None]) * sq_hat
        vals = (mixed @ phase).real / grid.n_points
        total += float(np.sum(w_blk * np.exp(a_gr * s_blk) * vals))
    return total, defect


def _vec(x):
    return (x,) if isinstance(x, (int, np.integer)) else tuple(x)


def _chain_solves(rhs, y0, times, max_step) -> dict:
    """Endpoint-to-endpoint integration at each requested time (no dense
    output: interpolated interior evaluations cost an order of accuracy)."""
    sols = {}
    state, reached = y0, 0.0
    for tv in times:
        res = solve_ivp(rhs, (reached, tv), state, method="DOP853",
                        rtol=ODE_RTOL, atol=ODE_ATOL, max_step=min(tv, max_step))
        if not res.success:
            raise RuntimeError(f"box integration failed: {res.message}")
        state, reached = res.y[:, -1], tv
        sols[tv] = state
    return sols


def epidemic_m2_ode(law: EpidemicLaw, kernel1: JumpKernel, kappa1: float, t,
                    box_radius: int, boundary_tol: float = BOUNDARY_TOL):
    """Direct box integration of the M2 equation (independent oracle route).

    Returns (m1_field, m2_field, boundary_mass) per time, fields over x with
    y = 0; M1 is co-integrated from its own equation.
    """
    times = [float(t)] if np.ndim(t) == 0 else [float(v) for v in t]
    scalar = np.ndim(t) == 0
    op, outflow = build_box_generator(kernel1, kappa1, box_radius)
    n = op.shape[0]
    center = (n - 1) // 2
    a_gr, b2 = law.growth, law.beta2

    def rhs(_s, yv):
        m1 = yv[:n]
        m2 = yv[n:2 * n]
        dm1 = op @ m1 + a_gr * m1
        dm2 = op @ m2 + a_gr * m2 + b2 * m1 ** 2
        return np.concatenate([dm1, dm2, [outflow @ m2]])

    y0 = np.zeros(2 * n + 1)
    y0[center] = 1.0
    y0[n + center] = 1.0
    positive = [v for v in times if v > 0]
    sols = _chain_solves(rhs, y0, positive,
                         max_step=4.0 / (kappa1 + abs(a_gr) + 1.0))
    out = []
    shape = _box_shape(box_radius, kernel1.dim)
    for tv in times:
        col = y0 if tv == 0.0 else sols[tv]
        out.append((col[:n].reshape(shape).copy(), col[n:2 * n].reshape(shape).copy(),
                    float(abs(col[-1]))))
    return out[0] if scalar else out


@dataclass(frozen=True)
class RatioPoint:
    t: float
    ratio: float | None
    m1: float
    m2: float
    in_sqrt_regime: bool
    flagged: bool


def intermittency_ratio(law: EpidemicLaw, kernel1: JumpKernel, kappa1: float,
                        t_list, x, y, grid: ThetaGrid | None = None,
                        box_radius: int = 30, regime_c: float = 2.0) -> list[RatioPoint]:
    """Pointwise M2 / M1^2 along ``t_list``.

    Each point records whether |x - y| <= regime_c * sqrt(t); M1 underflow
    (below the floor) yields a flagged point instead of a fabricated ratio.
    """
    xv = np.asarray(_vec(x), dtype=float)
    yv = np.asarray(_vec(y), dtype=float)
    dist = float(np.linalg.norm(yv - xv))
    g = grid or ThetaGrid.for_dim(kernel1.dim)
    sym = kappa1 * fourier_symbol(kernel1, g.points) + law.growth
    phase = np.cos(g.points @ (yv - xv))
    out = []
    for t in sorted(float(v) for v in t_list):
        m2 = epidemic_m2(law, kernel1, kappa1, t, x, y, g, box_radius)
        m1 = float(np.exp(sym * t) @ phase) / g.n_points
        in_regime = dist <= regime_c * math.sqrt(t) if t > 0 else True
        if m1 <= M1_FLOOR:
            out.append(RatioPoint(t=t, ratio=None, m1=m1, m2=m2.value,
                                  in_sqrt_regime=in_regime, flagged=True))
        else:
            out.append(RatioPoint(t=t, ratio=m2.value / m1 ** 2, m1=m1, m2=m2.value,
                                  in_sqrt_regime=in_regime, flagged=m2.degraded))
    return out


# ---------------------------------------------------------------------------
# correlation functions R11, R12, R22
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CorrelationField:
    """Pair correlation fields over box x box, started from one infected at 0.

    ``r11``/``r22`` are symmetric in (x, y) by representation; ``r12`` is
    E[N1(x) N2(y)] and is not.  The fields are stored over full pairs: the
    localized initial condition breaks translation invariance, so u = y - x
    reduction is exposed only as origin-anchored slices (``u_slice``).
    """

    t: float
    box_radius: int
    dim: int
    r1: np.ndarray = field(repr=False)
    r2: np.ndarray = field(repr=False)
    r11: np.ndarray = field(repr=False)
    r12: np.ndarray = field(repr=False)
    r22: np.ndarray = field(repr=False)
    boundary_mass: float = 0.0
    degraded: bool = False

    def _idx(self, x) -> int:
        xv = _vec(x)
        if any(abs(int(c)) > self.box_radius for c in xv):
            raise ValueError(f"site {x} outside box of radius {self.box_radius}")
        side = 2 * self.box_radius + 1
        flat = 0
        for c in xv:
            flat = flat * side + (int(c) + self.box_radius)
        return flat

    def pair(self, name: str, x, y) -> float:
        return float(getattr(self, name)[self._idx(x), self._idx(y)])

    def first(self, name: str, x) -> float:
        return float(getattr(self, name)[self._idx(x)])

    def u_slice(self, name: str) -> np.ndarray:
        """Origin-anchored slice R(t, 0, u) over the box (not homogeneous)."""
        return getattr(self, name)[self._idx((0,) * self.dim)].copy()


def _full_jump_matrix(kernel: JumpKernel, box_radius: int) -> np.ndarray:
    """Dense a(x - y) over box pairs, with the a(0) = -1 convention."""
    sites = box_sites(box_radius, kernel.dim)
    n = len(sites)
    out = np.zeros((n, n))
    diff = sites[:, None, :] - sites[None, :, :]
    for off, w in zip(kernel.offsets, kernel.weights):
        out[(diff == off[None, None, :]).all(axis=2)] = w
    np.fill_diagonal(out, -1.0)
    return out


def correlation_ode(law: EpidemicLaw, kernel1: JumpKernel, kappa1: float,
                    kernel2: JumpKernel, kappa2: float, t, box_radius: int,
                    boundary_tol: float = BOUNDARY_TOL):
    """Co-integrate {R1, R2, R11, R12, R22} on the truncated box.

    The diagonal sources follow the forward-equation derivation validated
    against Monte Carlo: with q = beta2 - beta + mu1 + r,

        dR11 has delta_x(y) [q R1 + (L1 R1)(x)] and the off-diagonal
        correction -kappa1 a1(x - y) (R1(x) + R1(y)) taken with a1(0) = -1
        (whose diagonal value supplies the +2 kappa1 R1 term),

    and symmetrically for R22 with source [(L2 R2)(x) + mu2 R2 + r R1].
    """
    times = [float(t)] if np.ndim(t) == 0 else [float(v) for v in t]
    scalar = np.ndim(t) == 0
    op1, out1 = build_box_generator(kernel1, kappa1, box_radius)
    op2, out2 = build_box_generator(kernel2, kappa2, box_radius)
    af1 = kappa1 * _full_jump_matrix(kernel1, box_radius)
    af2 = kappa2 * _full_jump_matrix(kernel2, box_radius)
    n = op1.shape[0]
    center = (n - 1) // 2
    a_gr, mu2, r = law.growth, law.mu2, law.conversion_rate
    q_diag = law.beta2 - law.beta + law.mu1 + r
    op1t, op2t = op1.T.tocsr(), op2.T.tocsr()

    def unpack(yv):
        r1 = yv[:n]
        r2 = yv[n:2 * n]
        r11 = yv[2 * n:2 * n + n * n].reshape(n, n)
        r12 = yv[2 * n + n * n:2 * n + 2 * n * n].reshape(n, n)
        r22 = yv[2 * n + 2 * n * n:2 * n + 3 * n * n].reshape(n, n)
        return r1, r2, r11, r12, r22

    def rhs(_s, yv):
        r1, r2, r11, r12, r22 = unpack(yv)
        dr1 = op1 @ r1 + a_gr * r1
        dr2 = op2 @ r2 - mu2 * r2 + r * r1
        d11 = (op1 @ r11 + r11 @ op1t + 2.0 * a_gr * r11
               - af1 * (r1[:, None] + r1[None, :]))
        d11[np.diag_indices(n)] += q_diag * r1 + op1 @ r1
        d12 = (op1 @ r12 + r12 @ op2t + (a_gr - mu2) * r12 + r * r11)
        d12[np.diag_indices(n)] -= r * r1
        d22 = (op2 @ r22 + r22 @ op2t - 2.0 * mu2 * r22 + r * (r12 + r12.T)
               - af2 * (r2[:, None] + r2[None, :]))
        d22[np.diag_indices(n)] += op2 @ r2 + mu2 * r2 + r * r1
        dflux = np.array([out1 @ r1 + out2 @ r2])
        return np.concatenate([dr1, dr2, d11.ravel(), d12.ravel(), d22.ravel(), dflux])

    y0 = np.zeros(2 * n + 3 * n * n + 1)
    y0[center] = 1.0
    y0[2 * n + center * n + center] = 1.0      # R11(0) = delta_0(x) delta_0(y)
    positive = [v for v in times if v > 0]
    sols = _chain_solves(rhs, y0, positive,
                         max_step=4.0 / (kappa1 + kappa2 + abs(a_gr) + mu2 + r + 1.0))
    out = []
    for tv in times:
        col = y0 if tv == 0.0 else sols[tv]
        r1, r2, r11, r12, r22 = unpack(col)
        flux = float(abs(col[-1])) if tv > 0 else 0.0
        out.append(CorrelationField(
            t=tv, box_radius=box_radius, dim=kernel1.dim,
            r1=r1.copy(), r2=r2.copy(),
            r11=0.5 * (r11 + r11.T), r12=r12.copy(), r22=0.5 * (r22 + r22.T),
            boundary_mass=flux, degraded=flux > boundary_tol))
    return out[0] if scalar else out


def gk_ode(law: EpidemicLaw, kernel1: JumpKernel, kappa1: float,
           kernel2: JumpKernel, kappa2: float, t: float, box_radius: int):
    """Direct integration of the product-moment identities:

        G' = (L1x + L2y) G + (A - mu2) G + r K,      G(0) = 0,
        K' = (L1x + L1y) K + 2 A K,                  K(0) = delta_0 x delta_0.

    Their solutions must equal R1(x) R2(y) and R1(x) R1(y) computed from the
    (box-truncated) first moments; exposed for the property test.
    """
    op1, _ = build_box_generator(kernel1, kappa1, box_radius)
    op2, _ = build_box_generator(kernel2, kappa2, box_radius)
    n = op1.shape[0]
    center = (n - 1) // 2
    a_gr, mu2, r = law.growth, law.mu2, law.conversion_rate
    op1t, op2t = op1.T.tocsr(), op2.T.tocsr()

    def rhs(_s, yv):
        g = yv[:n * n].reshape(n, n)
        k = yv[n * n:].reshape(n, n)
        dg = op1 @ g + g @ op2t + (a_gr - mu2) * g + r * k
        dk = op1 @ k + k @ op1t + 2.0 * a_gr * k
        return np.concatenate([dg.ravel(), dk.ravel()])

    y0 = np.zeros(2 * n * n)
    y0[n * n + center * n + center] = 1.0
    res = solve_ivp(rhs, (0.0, t), y0, method="DOP853", rtol=ODE_RTOL, atol=ODE_ATOL,
                    t_eval=[t])
    if not res.success:
        raise RuntimeError(f"G/K integration failed: {res.message}")
    col = res.y[:, -1]
    return col[:n * n].reshape(n, n).copy(), col[n * n:].reshape(n, n).copy()
