"""Primal-dual and extragradient iterations over the stacked iterate
z = [theta; alpha; phi; beta], plus the classical baselines running on raw
voltages and multipliers.

Both engines step against the signed field g(z) = [grad_theta; grad_alpha;
-grad_phi; -grad_beta], so a plain step z - mu * g descends in the primal
blocks and ascends in the dual ones.  The scale variables alpha and beta
(and the classical multipliers) are clipped at zero after every update.
The extragradient first moves to a midpoint with step 2*mu and then applies
the field evaluated there with step mu, exactly as specified; a symmetric
(mu, mu) variant is available behind a flag since the 2*mu prefactor is
unusual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .grid import QcqpProblem, ValidationError
from .model import EvalMode, LagrangianContext, PrimalPoint, DualPoint, grad, lagrangian

PD = "pd"
EG = "eg"


class DivergenceError(RuntimeError):
    def __init__(self, iteration: int, value: float):
        self.iteration = iteration
        self.value = value
        super().__init__(
            f"|L| = {value:.3e} exceeded the divergence ceiling at iteration {iteration}"
        )


@dataclass(frozen=True)
class SaddlePointState:
    theta: np.ndarray
    alpha: float
    phi: np.ndarray
    beta: float
    iteration: int = 0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValidationError("alpha and beta must be nonnegative")

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.theta, [self.alpha], self.phi, [self.beta]])

    @classmethod
    def from_stacked(cls, vec: np.ndarray, p_count: int, q_count: int,
                     iteration: int = 0) -> "SaddlePointState":
        theta = vec[:p_count]
        alpha = float(vec[p_count])
        phi = vec[p_count + 1:p_count + 1 + q_count]
        beta = float(vec[p_count + 1 + q_count])
        return cls(theta.copy(), alpha, phi.copy(), beta, iteration)


@dataclass(frozen=True)
class StepSchedule:
    """Per-block step sizes mu(t) = base * decay**t."""

    theta: tuple[float, float]
    alpha: tuple[float, float]
    phi: tuple[float, float]
    beta: tuple[float, float]

    def __post_init__(self):
        for base, decay in (self.theta, self.alpha, self.phi, self.beta):
            if base < 0 or decay <= 0:
                raise ValidationError("step bases must be >= 0 and decays positive")

    @classmethod
    def constant(cls, mu: float, mu_alpha: float | None = None,
                 mu_phi: float | None = None, mu_beta: float | None = None):
        a = mu if mu_alpha is None else mu_alpha
        f = mu if mu_phi is None else mu_phi
        b = mu if mu_beta is None else mu_beta
        return cls((mu, 1.0), (a, 1.0), (f, 1.0), (b, 1.0))

    @classmethod
    def exponential(cls, theta=(0.015, 0.99985), alpha=(1e-5, 0.999),
                    phi=(0.01, 0.99985), beta=(1e-5, 0.999)):
        """The benchmark defaults: mu_theta = 0.015*0.99985^t,
        mu_phi = 0.01*0.99985^t, mu_alpha = mu_beta = 1e-5*0.999^t."""
        return cls(tuple(theta), tuple(alpha), tuple(phi), tuple(beta))

    @classmethod
    def from_lipschitz(cls, lipschitz: float):
        """The constant step 1/(2*sqrt(2)*L) whose extragradient iterates
        carry the stationarity guarantee."""
        mu = 1.0 / (2.0 * math.sqrt(2.0) * lipschitz)
        return cls.constant(mu)

    def rates(self, t: int) -> tuple[float, float, float, float]:
        return tuple(base * decay**t for base, decay in
                     (self.theta, self.alpha, self.phi, self.beta))


@dataclass(frozen=True)
class StopRule:
    theta_tol: float = 1e-6
    phi_tol: float = 1e-6
    max_iters: int = 10_000

    def __post_init__(self):
        if self.theta_tol <= 0 or self.phi_tol <= 0:
            raise ValidationError("stop tolerances must be positive")


def _mu_vector(rates, p_count: int, q_count: int) -> np.ndarray:
    mu_t, mu_a, mu_f, mu_b = rates
    return np.concatenate([
        np.full(p_count, mu_t), [mu_a], np.full(q_count, mu_f), [mu_b],
    ])


def _project(vec: np.ndarray, p_count: int, q_count: int) -> np.ndarray:
    vec[p_count] = max(vec[p_count], 0.0)
    vec[p_count + 1 + q_count] = max(vec[p_count + 1 + q_count], 0.0)
    return vec


def pd_step(g_fn, z: SaddlePointState, rates) -> tuple[SaddlePointState, dict]:
    """One primal-dual step: all four blocks move against g evaluated once
    at z (Jacobi style), with alpha and beta clipped at zero."""
    p_count, q_count = len(z.theta), len(z.phi)
    g, shots = g_fn(z, z.iteration, 0)
    vec = z.stacked() - _mu_vector(rates, p_count, q_count) * g
    _project(vec, p_count, q_count)
    nxt = SaddlePointState.from_stacked(vec, p_count, q_count, z.iteration + 1)
    return nxt, {"g": g, "shots": shots}


def eg_step(g_fn, z: SaddlePointState, rates,
            symmetric: bool = False) -> tuple[SaddlePointState, dict]:
    """One extragradient step: midpoint with step 2*mu (or mu when
    ``symmetric``), final update with the field at the midpoint and step mu;
    fresh gradient evaluation at both points, projections at both."""
    p_count, q_count = len(z.theta), len(z.phi)
    mu = _mu_vector(rates, p_count, q_count)
    g1, shots1 = g_fn(z, z.iteration, 0)
    lead = 1.0 if symmetric else 2.0
    mid_vec = _project(z.stacked() - lead * mu * g1, p_count, q_count)
    mid = SaddlePointState.from_stacked(mid_vec, p_count, q_count, z.iteration)
    g2, shots2 = g_fn(mid, z.iteration, 1)
    vec = _project(z.stacked() - mu * g2, p_count, q_count)
    nxt = SaddlePointState.from_stacked(vec, p_count, q_count, z.iteration + 1)
    return nxt, {"g": g1, "g_mid": g2, "shots": shots1 + shots2, "midpoint": mid}


@dataclass
class Trajectory:
    """Per-iteration history of a run plus the final state."""

    states: list[SaddlePointState] = field(default_factory=list)
    lagrangians: list[float] = field(default_factory=list)
    g_norms: list[dict[str, float]] = field(default_factory=list)
    shots: list[int] = field(default_factory=list)
    stop_reason: str = "max_iters"

    @property
    def final(self) -> SaddlePointState:
        return self.states[-1]

    @property
    def iterations(self) -> int:
        return len(self.states) - 1

    @property
    def total_shots(self) -> int:
        return int(sum(self.shots))


def _block_norms(g: np.ndarray, p_count: int, q_count: int) -> dict[str, float]:
    return {
        "theta": float(np.linalg.norm(g[:p_count])),
        "alpha": float(abs(g[p_count])),
        "phi": float(np.linalg.norm(g[p_count + 1:p_count + 1 + q_count])),
        "beta": float(abs(g[p_count + 1 + q_count])),
        "total": float(np.linalg.norm(g)),
    }


def make_variational_g(ctx: LagrangianContext, mode: EvalMode):
    """Adapter: a (z, *tags) -> (g vector, shots) field backed by the
    variational gradients, with per-evaluation derived seeds."""

    def g_fn(z: SaddlePointState, *tags):
        result = grad(ctx, PrimalPoint(z.theta, z.alpha), DualPoint(z.phi, z.beta),
                      mode.reseeded(*tags))
        return result.stacked(), result.shots_spent

    return g_fn


def run(ctx: LagrangianContext, init: SaddlePointState, method: str,
        schedule: StepSchedule, stop: StopRule, mode: EvalMode = EvalMode(),
        divergence_ceiling: float = 1e9, symmetric_eg: bool = False,
        record_lagrangian: bool = True) -> Trajectory:
    """Iterate PD or EG from ``init`` until the stop rule fires.

    Records the Lagrangian (evaluated in the run's mode), per-block gradient
    norms, and shots per iteration.  Aborts with DivergenceError when |L|
    exceeds the ceiling.  Deterministic for a fixed mode seed.
    """
    if method not in (PD, EG):
        raise ValidationError(f"unknown method {method!r}")
    g_fn = make_variational_g(ctx, mode)

    def lag(z: SaddlePointState, tag: int) -> float:
        return lagrangian(ctx, PrimalPoint(z.theta, z.alpha),
                          DualPoint(z.phi, z.beta), mode.reseeded(9, z.iteration, tag))

    traj = Trajectory()
    z = init
    traj.states.append(z)
    p_count, q_count = len(z.theta), len(z.phi)
    for t in range(stop.max_iters):
        rates = schedule.rates(t)
        if method == PD:
            nxt, info = pd_step(g_fn, z, rates)
        else:
            nxt, info = eg_step(g_fn, z, rates, symmetric=symmetric_eg)
        value = lag(nxt, 1) if record_lagrangian else math.nan
        if record_lagrangian and abs(value) > divergence_ceiling:
            raise DivergenceError(t, value)
        traj.states.append(nxt)
        traj.lagrangians.append(value)
        traj.g_norms.append(_block_norms(info["g"], p_count, q_count))
        traj.shots.append(info["shots"])
        moved_theta = float(np.linalg.norm(nxt.theta - z.theta))
        moved_phi = float(np.linalg.norm(nxt.phi - z.phi))
        z = nxt
        if moved_theta <= stop.theta_tol and moved_phi <= stop.phi_tol:
            traj.stop_reason = "converged"
            break
    return traj


# ---------------------------------------------------------------------------
# Classical baselines on the raw QCQP


@dataclass(frozen=True)
class ClassicalState:
    v: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        if np.any(self.lam < 0):
            raise ValidationError("multipliers must be nonnegative")


def classical_lagrangian(problem: QcqpProblem, v: np.ndarray, lam: np.ndarray,
                         tensor: np.ndarray | None = None) -> float:
    """L(v, lambda) = v^dag M0 v + sum_m lambda_m (v^dag M_m v - b_m).

    The multiplier sum uses exact (fsum) accumulation so inert padding rows
    cannot perturb the value through summation order.
    """
    if tensor is None:
        tensor = problem.dense_constraints()
    forms = np.real(np.einsum("i,mij,j->m", v.conj(), tensor, v))
    cost = float(np.real(np.vdot(v, problem.dense_m0() @ v)))
    return cost + math.fsum(lam * (forms - problem.bounds))


def _classical_field(problem: QcqpProblem, v: np.ndarray, lam: np.ndarray,
                     m0: np.ndarray, tensor: np.ndarray):
    grad_v = 2.0 * (m0 @ v + np.einsum("m,mij,j->i", lam, tensor, v))
    forms = np.real(np.einsum("i,mij,j->m", v.conj(), tensor, v))
    grad_lam = forms - problem.bounds
    return grad_v, grad_lam


def classical_pd_step(problem: QcqpProblem, s: ClassicalState, steps,
                      m0: np.ndarray | None = None,
                      tensor: np.ndarray | None = None) -> ClassicalState:
    """Gauss-Seidel primal-dual step on the raw QCQP: descend v at
    (v^t, lam^t), then ascend lambda at (v^{t+1}, lam^t) with projection."""
    mu_v, mu_lam = steps
    m0 = problem.dense_m0() if m0 is None else m0
    tensor = problem.dense_constraints() if tensor is None else tensor
    grad_v, _ = _classical_field(problem, s.v, s.lam, m0, tensor)
    v_next = s.v - mu_v * grad_v
    forms = np.real(np.einsum("i,mij,j->m", v_next.conj(), tensor, v_next))
    lam_next = np.maximum(s.lam + mu_lam * (forms - problem.bounds), 0.0)
    return ClassicalState(v_next, lam_next)


def classical_eg_step(problem: QcqpProblem, s: ClassicalState, steps,
                      m0: np.ndarray | None = None,
                      tensor: np.ndarray | None = None,
                      symmetric: bool = False) -> ClassicalState:
    """Extragradient on the stacked (v, lambda) with the same signed-field
    template as the variational engine (both gradients per stage evaluated
    at the stage point)."""
    mu_v, mu_lam = steps
    m0 = problem.dense_m0() if m0 is None else m0
    tensor = problem.dense_constraints() if tensor is None else tensor
    lead = 1.0 if symmetric else 2.0
    grad_v, grad_lam = _classical_field(problem, s.v, s.lam, m0, tensor)
    v_mid = s.v - lead * mu_v * grad_v
    lam_mid = np.maximum(s.lam + lead * mu_lam * grad_lam, 0.0)
    grad_v2, grad_lam2 = _classical_field(problem, v_mid, lam_mid, m0, tensor)
    v_next = s.v - mu_v * grad_v2
    lam_next = np.maximum(s.lam + mu_lam * grad_lam2, 0.0)
    return ClassicalState(v_next, lam_next)


@dataclass
class ClassicalTrajectory:
    states: list[ClassicalState] = field(default_factory=list)
    lagrangians: list[float] = field(default_factory=list)
    stop_reason: str = "max_iters"

    @property
    def final(self) -> ClassicalState:
        return self.states[-1]


def run_classical(problem: QcqpProblem, init: ClassicalState, method: str,
                  schedule: StepSchedule, stop: StopRule,
                  divergence_ceiling: float = 1e9,
                  symmetric_eg: bool = False) -> ClassicalTrajectory:
    """Iterate the classical PD or EG baseline; stop when both state blocks
    move less than the tolerances."""
    if method not in (PD, EG):
        raise ValidationError(f"unknown method {method!r}")
    m0 = problem.dense_m0()
    tensor = problem.dense_constraints()
    traj = ClassicalTrajectory()
    traj.states.append(init)
    s = init
    for t in range(stop.max_iters):
        mu_v, _, mu_lam, _ = schedule.rates(t)
        steps = (mu_v, mu_lam)
        if method == PD:
            nxt = classical_pd_step(problem, s, steps, m0, tensor)
        else:
            nxt = classical_eg_step(problem, s, steps, m0, tensor,
                                    symmetric=symmetric_eg)
        value = classical_lagrangian(problem, nxt.v, nxt.lam, tensor)
        if abs(value) > divergence_ceiling:
            raise DivergenceError(t, value)
        traj.states.append(nxt)
        traj.lagrangians.append(value)
        moved_v = float(np.linalg.norm(nxt.v - s.v))
        moved_lam = float(np.linalg.norm(nxt.lam - s.lam))
        s = nxt
        if moved_v <= stop.theta_tol and moved_lam <= stop.phi_tol:
            traj.stop_reason = "converged"
            break
    return traj


def default_quantum_init(ctx: LagrangianContext, case_n: int, n_loads: int,
                         seed) -> SaddlePointState:
    """Benchmark initialization: angles uniform on [0, 2pi], alpha = sqrt(N),
    beta = 2 * (number of load nodes)."""
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.0, 2.0 * math.pi, ctx.p_count)
    phi = rng.uniform(0.0, 2.0 * math.pi, ctx.q_count)
    return SaddlePointState(theta, math.sqrt(case_n), phi, 2.0 * n_loads)


def default_classical_init(problem: QcqpProblem, n_loads: int, seed) -> ClassicalState:
    """Flat voltage profile; multipliers |N(0,1)| scaled by 2 * #loads
    (absolute values keep the nonnegativity invariant)."""
    rng = np.random.default_rng(seed)
    v = np.ones(problem.dim, dtype=complex)
    v[problem.n:] = 0.0
    lam = np.abs(rng.standard_normal(problem.m_stored)) * 2.0 * n_loads
    lam[problem.m:] = 0.0
    return ClassicalState(v, lam)
