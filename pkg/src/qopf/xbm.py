"""Extended Bell measurements: XOR-color decomposition of Hermitian
observables into simultaneously measurable pieces.

Entries (i, j) of an observable sharing i ^ j = c form color c.  The color-c
submatrix splits into a real-symmetric part and a purely imaginary Hermitian
part, and each is diagonalized by the same O(log N)-gate circuit: CX gates
fanning out from qubit k_c (the most significant set bit of c) to every other
set bit of c, followed by a Hadamard on k_c.  The imaginary part additionally
takes an S^dag prefix on k_c, realized here as Rz(-pi/2) (equal up to an
irrelevant global phase).

With that rotation R applied to the state, the piece expectation becomes a
computational-basis average of a fixed real diagonal: for every index i whose
k_c bit is clear, pairing it with j = i ^ c,

    real part:      lambda[i] = +Re M[i, j],  lambda[i ^ 2^k_c] = -Re M[i, j]
    imaginary part: lambda[i] = -Im M[i, j],  lambda[i ^ 2^k_c] = +Im M[i, j]

The construction is validated functionally by the test suite: R M_c R^dag
must be diagonal and equal diag(lambda) for every color and part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .sim import GateOp, apply_circuit, chain_seed, sample_basis

REAL = "real"
IMAG = "imag"


class DecompositionError(ValueError):
    pass


def most_significant_bit(c: int) -> int:
    if c < 1:
        raise DecompositionError("color must be >= 1")
    return c.bit_length() - 1


def rotation_circuit(color: int, n_qubits: int, part: str = REAL) -> "RotationCircuit":
    """Measurement rotation for a color-c piece (c >= 1).

    Gate count is at most log2(N) for real parts and log2(N) + 1 for
    imaginary parts.  Color 0 is diagonal already and needs no rotation.
    """
    if not (1 <= color < 2**n_qubits):
        raise DecompositionError(
            f"color {color} outside 1..{2 ** n_qubits - 1} "
            "(color 0 needs no rotation)"
        )
    if part not in (REAL, IMAG):
        raise DecompositionError(f"unknown part {part!r}")
    k = most_significant_bit(color)
    gates: list[GateOp] = []
    if part == IMAG:
        gates.append(GateOp("rz", target=k, angle=-math.pi / 2))
    for bit in range(k):
        if (color >> bit) & 1:
            gates.append(GateOp("cx", target=bit, control=k))
    gates.append(GateOp("h", target=k))
    return RotationCircuit(color=color, part=part, gates=tuple(gates))


@dataclass(frozen=True)
class RotationCircuit:
    color: int
    part: str
    gates: tuple[GateOp, ...]

    def __post_init__(self):
        n_gates = len(self.gates)
        limit = self.color.bit_length() + (1 if self.part == IMAG else 0)
        if n_gates > limit:
            raise DecompositionError(
                f"rotation for color {self.color} uses {n_gates} gates (> {limit})"
            )

    def apply(self, state: np.ndarray) -> np.ndarray:
        return apply_circuit(state, self.gates)


def eigen_diagonal(matrix: np.ndarray, color: int, part: str) -> np.ndarray:
    """Diagonal of the rotated color-c piece of a matrix supported on color c."""
    m = np.asarray(matrix, dtype=complex)
    dim = m.shape[0]
    rows, cols = np.nonzero(m)
    if np.any(rows ^ cols != color):
        raise DecompositionError(f"matrix has support outside color {color}")
    return _piece_diagonal(m, dim, color, part)


def _piece_diagonal(m: np.ndarray, dim: int, color: int, part: str) -> np.ndarray:
    diag = np.zeros(dim)
    if color == 0:
        if part != REAL:
            raise DecompositionError("color 0 has no imaginary part")
        diag[:] = np.real(np.diagonal(m))
        return diag
    k = most_significant_bit(color)
    idx = np.arange(dim)
    low = idx[(idx >> k) & 1 == 0]
    entries = m[low, low ^ color]
    if part == REAL:
        diag[low] = entries.real
        diag[low ^ (1 << k)] = -entries.real
    else:
        diag[low] = -entries.imag
        diag[low ^ (1 << k)] = entries.imag
    return diag


@dataclass(frozen=True)
class ColorPiece:
    """One simultaneously measurable piece: a color, a part, and the real
    diagonal seen after that color's rotation."""

    color: int
    part: str
    diagonal: np.ndarray
    k_c: int | None

    @property
    def norm(self) -> float:
        """Spectral norm of the piece (max |eigenvalue|)."""
        return float(np.max(np.abs(self.diagonal))) if len(self.diagonal) else 0.0

    def circuit(self, n_qubits: int) -> RotationCircuit | None:
        if self.color == 0:
            return None
        return rotation_circuit(self.color, n_qubits, self.part)

    def rotate(self, state: np.ndarray) -> np.ndarray:
        circuit = self.circuit(int(math.log2(len(self.diagonal))))
        return state if circuit is None else circuit.apply(state)


@dataclass(frozen=True)
class ColorDecomposition:
    """All nonzero pieces of one Hermitian observable, real pieces first
    (ascending color) then imaginary ones; at most 2C - 1 pieces for C
    occupied colors."""

    n_qubits: int
    pieces: tuple[ColorPiece, ...]

    @property
    def colors(self) -> set[int]:
        return {p.color for p in self.pieces}

    @property
    def piece_norms(self) -> np.ndarray:
        return np.array([p.norm for p in self.pieces])

    @property
    def sum_norm_sq(self) -> float:
        return float(np.sum(self.piece_norms**2))

    def reconstruct(self) -> np.ndarray:
        """Rebuild the source matrix exactly from the piece diagonals."""
        dim = 2**self.n_qubits
        out = np.zeros((dim, dim), dtype=complex)
        idx = np.arange(dim)
        for piece in self.pieces:
            if piece.color == 0:
                out[idx, idx] += piece.diagonal
                continue
            k = piece.k_c
            low = idx[(idx >> k) & 1 == 0]
            vals = piece.diagonal[low]
            if piece.part == REAL:
                out[low, low ^ piece.color] += vals
                out[low ^ piece.color, low] += vals
            else:
                out[low, low ^ piece.color] += -1j * vals
                out[low ^ piece.color, low] += 1j * vals
        return out


def decompose(matrix: np.ndarray, tol: float = 1e-10) -> ColorDecomposition:
    """Split a Hermitian matrix into its nonzero color pieces.

    Pieces whose diagonal is identically zero are omitted, so no shots are
    ever spent on structurally zero expectations.
    """
    m = np.asarray(matrix, dtype=complex)
    dim = m.shape[0]
    n_qubits = int(math.log2(dim))
    if 2**n_qubits != dim or m.shape != (dim, dim):
        raise DecompositionError(f"matrix must be square with power-of-two size, got {m.shape}")
    residual = np.max(np.abs(m - m.conj().T)) if m.size else 0.0
    if residual > tol:
        raise DecompositionError(f"matrix not Hermitian (residual {residual:.2e})")
    rows, cols = np.nonzero(m)
    colors = sorted(set(int(i) ^ int(j) for i, j in zip(rows, cols)))
    real_pieces: list[ColorPiece] = []
    imag_pieces: list[ColorPiece] = []
    for c in colors:
        k = most_significant_bit(c) if c else None
        real_diag = _piece_diagonal(m, dim, c, REAL)
        if np.any(real_diag):
            real_pieces.append(ColorPiece(c, REAL, real_diag, k))
        if c:
            imag_diag = _piece_diagonal(m, dim, c, IMAG)
            if np.any(imag_diag):
                imag_pieces.append(ColorPiece(c, IMAG, imag_diag, k))
    return ColorDecomposition(n_qubits, tuple(real_pieces + imag_pieces))


class EstimateReport(NamedTuple):
    estimate: float
    per_piece: list[tuple[ColorPiece, float]]


class VarianceReport(NamedTuple):
    variance: float
    bound: float


def estimate_expectation(
    state: np.ndarray,
    decomposition: ColorDecomposition,
    shots_per_piece: int,
    seed,
    scheme: str = "sequential",
) -> EstimateReport:
    """Sampled estimate of <psi|M|psi> from the color pieces.

    Per piece: rotate the state, sample the computational basis, average the
    piece diagonal over the outcomes.  ``sequential`` derives an independent
    seed per piece; ``joint`` draws every piece from one shared stream in
    piece order.  Either way the estimate is unbiased and reproducible.
    """
    if shots_per_piece < 1:
        raise DecompositionError("shots_per_piece must be >= 1")
    if scheme not in ("sequential", "joint"):
        raise DecompositionError(f"unknown sampling scheme {scheme!r}")
    joint_rng = np.random.default_rng(seed) if scheme == "joint" else None
    total = 0.0
    per_piece: list[tuple[ColorPiece, float]] = []
    for k, piece in enumerate(decomposition.pieces):
        rotated = piece.rotate(state)
        if joint_rng is not None:
            probs = np.abs(rotated) ** 2
            counts = joint_rng.multinomial(shots_per_piece, probs / probs.sum())
        else:
            counts = sample_basis(rotated, shots_per_piece, chain_seed(seed, k))
        value = float(counts @ piece.diagonal) / shots_per_piece
        per_piece.append((piece, value))
        total += value
    return EstimateReport(total, per_piece)


def estimator_variance(
    decomposition: ColorDecomposition,
    state: np.ndarray,
    shots_per_piece: int,
) -> VarianceReport:
    """Exact variance of the sampled estimator and its norm upper bound.

    variance = (1/S) sum_c ( <psi_c|L^2|psi_c> - <psi_c|L|psi_c>^2 )
    bound    = (1/S) sum_c ||M^c||^2
    """
    if shots_per_piece < 1:
        raise DecompositionError("shots_per_piece must be >= 1")
    variance = 0.0
    bound = 0.0
    for piece in decomposition.pieces:
        probs = np.abs(piece.rotate(state)) ** 2
        mean = float(probs @ piece.diagonal)
        second = float(probs @ piece.diagonal**2)
        variance += second - mean**2
        bound += piece.norm**2
    return VarianceReport(variance / shots_per_piece, bound / shots_per_piece)
