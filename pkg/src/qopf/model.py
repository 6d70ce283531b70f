"""The doubly variational OPF model.

Primal voltages are a scaled circuit state v = alpha |psi(theta)>; dual
multipliers are a scaled probability mass function lambda_m = beta^2
|xi_m(phi)|^2, which keeps them nonnegative by construction.  The Lagrangian
then splits into three observable expectations,

    L(theta, alpha; phi, beta) = alpha^2 F0(theta)
                                 + alpha^2 beta^2 F(theta, phi)
                                 - beta^2 G(phi),

with F0 the cost expectation on the primal circuit, G a diagonal observable
(the constraint bounds) on the dual circuit, and F the constraint term,
whose exact value is the PMF-weighted sum of per-constraint expectations
and whose sampled value pairs a dual basis draw with a color-rotated primal
draw.  Gradients in the circuit parameters come from the two-point
parameter-shift rule; the scale gradients are the closed forms
dL/dalpha = 2 alpha (F0 + beta^2 F) and dL/dbeta = 2 beta (alpha^2 F - G).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import xbm
from .grid import QcqpProblem, ValidationError
from .sim import AnsatzSpec, chain_seed, prepare, shift_points

EXACT = "exact"
SAMPLED = "sampled"


@dataclass(frozen=True)
class EvalMode:
    """Exact dense evaluation, or sampled with a shot budget per circuit."""

    kind: str = EXACT
    shots: int = 0
    seed: object = None

    def __post_init__(self):
        if self.kind not in (EXACT, SAMPLED):
            raise ValidationError(f"unknown evaluation mode {self.kind!r}")
        if self.kind == SAMPLED and (self.shots < 1 or self.seed is None):
            raise ValidationError("sampled mode needs shots >= 1 and a seed")

    def reseeded(self, *tags) -> "EvalMode":
        if self.kind == EXACT:
            return self
        return EvalMode(SAMPLED, self.shots, chain_seed(self.seed, *tags))


def exact_mode() -> EvalMode:
    return EvalMode(EXACT)


def sampled_mode(shots: int, seed) -> EvalMode:
    return EvalMode(SAMPLED, shots, seed)


@dataclass(frozen=True)
class PrimalPoint:
    theta: np.ndarray
    alpha: float


@dataclass(frozen=True)
class DualPoint:
    phi: np.ndarray
    beta: float


@dataclass(frozen=True)
class GradResult:
    """All four gradient blocks plus the circuit/shot ledger of the call."""

    theta: np.ndarray
    alpha: float
    phi: np.ndarray
    beta: float
    primal_circuits: int
    dual_circuits: int
    shots_spent: int

    def stacked(self) -> np.ndarray:
        """g(z) = [grad_theta; grad_alpha; -grad_phi; -grad_beta]."""
        return np.concatenate([
            self.theta, [self.alpha], -self.phi, [-self.beta],
        ])


class LagrangianContext:
    """Everything needed to evaluate L and its gradients on one problem.

    Holds the padded (and usually permuted) QCQP in dense form, the ansatz
    pair, the color decomposition of the cost matrix, and the per-color
    diagonals of every constraint matrix (the block-diagonal joint
    observable, stored per color instead of materialized at size MN x MN).
    """

    def __init__(self, problem: QcqpProblem, primal_spec: AnsatzSpec,
                 dual_spec: AnsatzSpec):
        dim = problem.dim
        m_stored = problem.m_stored
        if 2**primal_spec.n_qubits != dim:
            raise ValidationError(
                f"primal ansatz has {primal_spec.n_qubits} qubits but the problem "
                f"dimension is {dim}; pad the problem first")
        if 2**dual_spec.n_qubits != m_stored:
            raise ValidationError(
                f"dual ansatz has {dual_spec.n_qubits} qubits but the problem "
                f"stores {m_stored} constraints; pad the problem first")
        self.problem = problem
        self.primal_spec = primal_spec
        self.dual_spec = dual_spec
        self.m0 = problem.dense_m0()
        self.tensor = problem.dense_constraints()
        self.s_diag = problem.bounds
        self.m0_decomposition = xbm.decompose(self.m0)
        self.joint_diagonals = self._build_joint_diagonals()
        self.colors = self._union_colors()
        # constraint matrices are a few entries each; flattened COO triples
        # turn the M quadratic forms into one gather + bincount
        segs, rows, cols, vals = [], [], [], []
        for m_idx in range(self.tensor.shape[0]):
            r, c = np.nonzero(self.tensor[m_idx])
            segs.append(np.full(len(r), m_idx))
            rows.append(r)
            cols.append(c)
            vals.append(self.tensor[m_idx, r, c])
        self._coo_segs = np.concatenate(segs) if segs else np.zeros(0, dtype=int)
        self._coo_rows = np.concatenate(rows) if rows else np.zeros(0, dtype=int)
        self._coo_cols = np.concatenate(cols) if cols else np.zeros(0, dtype=int)
        self._coo_vals = np.concatenate(vals) if vals else np.zeros(0, dtype=complex)

    def _build_joint_diagonals(self) -> dict[tuple[int, str], np.ndarray]:
        """(color, part) -> (M, dim) array of rotated constraint diagonals."""
        m_stored, dim = self.tensor.shape[0], self.tensor.shape[1]
        out: dict[tuple[int, str], np.ndarray] = {}
        for m in range(m_stored):
            for piece in xbm.decompose(self.tensor[m]).pieces:
                key = (piece.color, piece.part)
                if key not in out:
                    out[key] = np.zeros((m_stored, dim))
                out[key][m] = piece.diagonal
        ordered = sorted(out, key=lambda key: (key[1] != xbm.REAL, key[0]))
        return {key: out[key] for key in ordered}

    def _union_colors(self) -> set[int]:
        colors = {c for c, _ in self.joint_diagonals}
        colors |= self.m0_decomposition.colors
        return colors

    @property
    def p_count(self) -> int:
        return self.primal_spec.param_count

    @property
    def q_count(self) -> int:
        return self.dual_spec.param_count

    @property
    def color_count(self) -> int:
        return len(self.colors)

    def circuits_per_gradient(self) -> tuple[int, int]:
        """Rotated primal and dual circuit counts of one full gradient,
        (2P+1)(2C-1) and 2Q+1."""
        c = self.color_count
        return (2 * self.p_count + 1) * (2 * c - 1), 2 * self.q_count + 1


class TermValues:
    __slots__ = ("f0", "f", "g")

    def __init__(self, f0: float, f: float, g: float):
        self.f0 = f0
        self.f = f
        self.g = g


def primal_vector(ctx: LagrangianContext, p: PrimalPoint) -> np.ndarray:
    """v = alpha |psi(theta)>; its Euclidean norm is alpha."""
    return p.alpha * prepare(ctx.primal_spec, p.theta)


def dual_state(ctx: LagrangianContext, d: DualPoint) -> np.ndarray:
    return prepare(ctx.dual_spec, d.phi)


def dual_pmf(ctx: LagrangianContext, d: DualPoint) -> np.ndarray:
    state = dual_state(ctx, d)
    return np.abs(state) ** 2


def dual_vector(ctx: LagrangianContext, d: DualPoint) -> np.ndarray:
    """lambda_m = beta^2 |xi_m(phi)|^2; sums to beta^2."""
    return d.beta**2 * dual_pmf(ctx, d)


def constraint_expectations(ctx: LagrangianContext, psi: np.ndarray) -> np.ndarray:
    """All F_m = <psi|M_m|psi> in one pass over the flattened sparse triples."""
    contrib = np.real(psi.conj()[ctx._coo_rows] * ctx._coo_vals * psi[ctx._coo_cols])
    return np.bincount(ctx._coo_segs, weights=contrib,
                       minlength=ctx.tensor.shape[0]).astype(float)


def eval_terms_exact(ctx: LagrangianContext, p: PrimalPoint, d: DualPoint) -> TermValues:
    psi = prepare(ctx.primal_spec, p.theta)
    w = dual_pmf(ctx, d)
    f0 = float(np.real(np.vdot(psi, ctx.m0 @ psi)))
    f = float(w @ constraint_expectations(ctx, psi))
    g = float(w @ ctx.s_diag)
    return TermValues(f0, f, g)


def joint_observable(ctx: LagrangianContext) -> np.ndarray:
    """The MN x MN block-diagonal matrix sum_m e_m e_m^T (x) M_m.

    Conceptual only; materialized for identity checks on tiny problems."""
    m_stored, dim = ctx.tensor.shape[0], ctx.tensor.shape[1]
    out = np.zeros((m_stored * dim, m_stored * dim), dtype=complex)
    for m in range(m_stored):
        out[m * dim:(m + 1) * dim, m * dim:(m + 1) * dim] = ctx.tensor[m]
    return out


# ---------------------------------------------------------------------------
# Sampled estimators


def _sample_f0(ctx: LagrangianContext, psi: np.ndarray, mode: EvalMode) -> tuple[float, int]:
    report = xbm.estimate_expectation(psi, ctx.m0_decomposition, mode.shots, mode.seed)
    return report.estimate, mode.shots * len(ctx.m0_decomposition.pieces)


def _sample_g(ctx: LagrangianContext, w: np.ndarray, mode: EvalMode) -> tuple[float, int]:
    rng = np.random.default_rng(mode.seed)
    counts = rng.multinomial(mode.shots, w / w.sum())
    return float(counts @ ctx.s_diag) / mode.shots, mode.shots


def _sample_f(ctx: LagrangianContext, psi: np.ndarray, w: np.ndarray,
              mode: EvalMode, primal_shots_per_draw: int = 1) -> tuple[float, int]:
    """Two-step estimate of F: per color piece, outcomes of the dual circuit
    pair with outcomes of the color-rotated primal circuit, and the piece
    diagonal of the drawn constraint is averaged.

    With one primal shot per dual draw (the default) the pairing is a single
    multinomial over the product distribution; larger values average that
    many rotated-primal outcomes per drawn constraint index.
    """
    w = w / w.sum()
    total = 0.0
    shots = 0
    for k, (key, diagonals) in enumerate(ctx.joint_diagonals.items()):
        color, part = key
        if color == 0:
            rotated = psi
        else:
            circuit = xbm.rotation_circuit(color, ctx.primal_spec.n_qubits, part)
            rotated = circuit.apply(psi)
        probs = np.abs(rotated) ** 2
        probs = probs / probs.sum()
        rng = np.random.default_rng(chain_seed(mode.seed, k))
        if primal_shots_per_draw == 1:
            joint = np.outer(w, probs).ravel()
            counts = rng.multinomial(mode.shots, joint / joint.sum())
            total += float(counts @ diagonals.ravel()) / mode.shots
            shots += mode.shots
        else:
            dual_counts = rng.multinomial(mode.shots, w)
            value = 0.0
            for m_idx in np.nonzero(dual_counts)[0]:
                draws = int(dual_counts[m_idx]) * primal_shots_per_draw
                primal_counts = rng.multinomial(draws, probs)
                value += float(primal_counts @ diagonals[m_idx]) / primal_shots_per_draw
                shots += draws
            total += value / mode.shots
    return total, shots


def eval_F_sampled(ctx: LagrangianContext, p: PrimalPoint, d: DualPoint,
                   shots: int, seed, primal_shots_per_draw: int = 1) -> float:
    """Unbiased sampled estimate of F(theta, phi)."""
    if primal_shots_per_draw < 1:
        raise ValidationError("primal_shots_per_draw must be >= 1")
    psi = prepare(ctx.primal_spec, p.theta)
    w = dual_pmf(ctx, d)
    value, _ = _sample_f(ctx, psi, w, sampled_mode(shots, seed),
                         primal_shots_per_draw)
    return value


def eval_terms(ctx: LagrangianContext, p: PrimalPoint, d: DualPoint,
               mode: EvalMode) -> TermValues:
    if mode.kind == EXACT:
        return eval_terms_exact(ctx, p, d)
    psi = prepare(ctx.primal_spec, p.theta)
    w = dual_pmf(ctx, d)
    f0, _ = _sample_f0(ctx, psi, mode.reseeded(0))
    f, _ = _sample_f(ctx, psi, w, mode.reseeded(1))
    g, _ = _sample_g(ctx, w, mode.reseeded(2))
    return TermValues(f0, f, g)


def lagrangian(ctx: LagrangianContext, p: PrimalPoint, d: DualPoint,
               mode: EvalMode = EvalMode()) -> float:
    """alpha^2 F0 + alpha^2 beta^2 F - beta^2 G in the requested mode."""
    terms = eval_terms(ctx, p, d, mode)
    a2, b2 = p.alpha**2, d.beta**2
    return a2 * terms.f0 + a2 * b2 * terms.f - b2 * terms.g


# ---------------------------------------------------------------------------
# Gradients


def grad(ctx: LagrangianContext, p: PrimalPoint, d: DualPoint,
         mode: EvalMode = EvalMode()) -> GradResult:
    """All four gradient blocks of the Lagrangian at (p, d).

    theta and phi entries use the parameter-shift rule (two evaluations at
    +-pi/2 per parameter); alpha and beta use their closed forms.  In
    sampled mode every named expectation draws from its own derived stream,
    keeping the blocks unbiased and the per-coordinate variances additive.
    """
    alpha, beta = p.alpha, d.beta
    a2, b2 = alpha**2, beta**2
    p_count, q_count = ctx.p_count, ctx.q_count
    shots_spent = 0

    psi = prepare(ctx.primal_spec, p.theta)
    w = dual_pmf(ctx, d)
    fm_base: np.ndarray | None = None
    if mode.kind == EXACT:
        f0 = float(np.real(np.vdot(psi, ctx.m0 @ psi)))
        fm_base = constraint_expectations(ctx, psi)
        f = float(w @ fm_base)
        g = float(w @ ctx.s_diag)
    else:
        f0, spent = _sample_f0(ctx, psi, mode.reseeded(0))
        shots_spent += spent
        f, spent = _sample_f(ctx, psi, w, mode.reseeded(1))
        shots_spent += spent
        g, spent = _sample_g(ctx, w, mode.reseeded(2))
        shots_spent += spent

    g_alpha = 2 * alpha * f0 + 2 * alpha * b2 * f
    g_beta = 2 * beta * (a2 * f - g)

    g_theta = np.zeros(p_count)
    for j in range(p_count):
        plus, minus = shift_points(p.theta, j)
        psi_p = prepare(ctx.primal_spec, plus)
        psi_m = prepare(ctx.primal_spec, minus)
        if mode.kind == EXACT:
            df0 = float(np.real(np.vdot(psi_p, ctx.m0 @ psi_p))
                        - np.real(np.vdot(psi_m, ctx.m0 @ psi_m)))
            df = float(w @ constraint_expectations(ctx, psi_p)
                       - w @ constraint_expectations(ctx, psi_m))
        else:
            f0p, spent = _sample_f0(ctx, psi_p, mode.reseeded(10, j, 0))
            shots_spent += spent
            f0m, spent = _sample_f0(ctx, psi_m, mode.reseeded(10, j, 1))
            shots_spent += spent
            fp, spent = _sample_f(ctx, psi_p, w, mode.reseeded(11, j, 0))
            shots_spent += spent
            fm, spent = _sample_f(ctx, psi_m, w, mode.reseeded(11, j, 1))
            shots_spent += spent
            df0, df = f0p - f0m, fp - fm
        g_theta[j] = a2 / 2 * df0 + a2 * b2 / 2 * df

    g_phi = np.zeros(q_count)
    for j in range(q_count):
        plus, minus = shift_points(d.phi, j)
        w_p = np.abs(prepare(ctx.dual_spec, plus)) ** 2
        w_m = np.abs(prepare(ctx.dual_spec, minus)) ** 2
        if mode.kind == EXACT:
            df = float((w_p - w_m) @ fm_base)
            dg = float((w_p - w_m) @ ctx.s_diag)
        else:
            fp, spent = _sample_f(ctx, psi, w_p, mode.reseeded(12, j, 0))
            shots_spent += spent
            fm, spent = _sample_f(ctx, psi, w_m, mode.reseeded(12, j, 1))
            shots_spent += spent
            gp, spent = _sample_g(ctx, w_p, mode.reseeded(13, j, 0))
            shots_spent += spent
            gm, spent = _sample_g(ctx, w_m, mode.reseeded(13, j, 1))
            shots_spent += spent
            df, dg = fp - fm, gp - gm
        g_phi[j] = a2 * b2 / 2 * df - b2 / 2 * dg

    primal_circuits, dual_circuits = ctx.circuits_per_gradient()
    return GradResult(
        theta=g_theta, alpha=g_alpha, phi=g_phi, beta=g_beta,
        primal_circuits=primal_circuits, dual_circuits=dual_circuits,
        shots_spent=shots_spent,
    )


def g_operator(ctx: LagrangianContext, z, mode: EvalMode = EvalMode()) -> np.ndarray:
    """Signed saddle field [grad_theta; grad_alpha; -grad_phi; -grad_beta]
    at a stacked iterate z (anything with theta/alpha/phi/beta)."""
    result = grad(ctx, PrimalPoint(z.theta, z.alpha), DualPoint(z.phi, z.beta), mode)
    return result.stacked()
