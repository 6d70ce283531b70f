"""Exact dense statevector simulation of the layered ansatz circuits.

States are complex vectors of length 2**n_qubits with qubit 0 as the least
significant bit of the basis index (so basis index arithmetic matches the
XOR bookkeeping of the measurement module).  All simulation is exact in
double precision; shot noise enters only through ``sample_basis``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SQRT2 = math.sqrt(2.0)


def chain_seed(seed, *tags) -> list[int]:
    """Flatten a base seed plus derivation tags into one entropy list, so
    independent streams are reproducible functions of (seed, role)."""
    base = list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]
    return base + [int(t) for t in tags]


ROTATIONS = ("rx", "ry", "rz")

# One layer of each tested architecture, as the gate-token sequence applied
# to every qubit (rotations) or along the linear chain (cx).
ARCHITECTURES: dict[int, tuple[str, ...]] = {
    1: ("rx", "cx"),
    2: ("ry", "cx"),
    3: ("rz", "cx"),
    4: ("rx", "cx", "ry", "cx"),
    5: ("rx", "cx", "rz", "cx"),
    6: ("ry", "cx", "rz", "cx"),
    7: ("rx", "cx", "ry", "cx", "rz", "cx"),
    8: ("rx", "ry", "rz", "cx"),
}

# Layer counts used when fitting each architecture (primal, dual).
DEFAULT_LAYERS: dict[int, tuple[int, int]] = {
    1: (20, 35), 2: (20, 35), 3: (20, 35),
    4: (10, 18), 5: (10, 18), 6: (10, 18),
    7: (6, 12), 8: (7, 12),
}


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class GateOp:
    """A single elementary gate; ``angle`` only for rotations, ``control``
    only for CX."""

    kind: str
    target: int
    control: int | None = None
    angle: float | None = None

    def __post_init__(self):
        if self.kind == "cx":
            if self.control is None or self.control == self.target:
                raise SimulationError("cx needs a control distinct from its target")
        elif self.kind in ROTATIONS:
            if self.angle is None:
                raise SimulationError(f"{self.kind} needs an angle")
        elif self.kind not in ("h", "s", "x"):
            raise SimulationError(f"unknown gate kind {self.kind!r}")


@dataclass(frozen=True)
class AnsatzSpec:
    """Layered circuit: ``layers`` repetitions of a per-layer token sequence.

    Rotation tokens act on every qubit with one fresh parameter each; "cx"
    entangles the linear chain q -> q+1.  ``param_count`` therefore equals
    (#rotation tokens) * layers * n_qubits.
    """

    n_qubits: int
    template: tuple[str, ...]
    layers: int
    row: int | None = None

    def __post_init__(self):
        for token in self.template:
            if token != "cx" and token not in ROTATIONS:
                raise SimulationError(f"unknown layer token {token!r}")
        if self.n_qubits < 1 or self.layers < 0:
            raise SimulationError("need at least one qubit and layers >= 0")

    @classmethod
    def from_row(cls, row: int, n_qubits: int, layers: int) -> "AnsatzSpec":
        if row not in ARCHITECTURES:
            raise SimulationError(f"architecture row {row} not in 1..8")
        return cls(n_qubits, ARCHITECTURES[row], layers, row=row)

    @property
    def rotations_per_layer(self) -> int:
        return sum(1 for t in self.template if t in ROTATIONS)

    @property
    def param_count(self) -> int:
        return self.rotations_per_layer * self.layers * self.n_qubits

    def gates(self, params: np.ndarray) -> list[GateOp]:
        params = np.asarray(params, dtype=float)
        if params.shape != (self.param_count,):
            raise SimulationError(
                f"expected {self.param_count} parameters, got {params.shape}"
            )
        ops: list[GateOp] = []
        k = 0
        for _ in range(self.layers):
            for token in self.template:
                if token == "cx":
                    ops.extend(
                        GateOp("cx", target=q + 1, control=q)
                        for q in range(self.n_qubits - 1)
                    )
                else:
                    for q in range(self.n_qubits):
                        ops.append(GateOp(token, target=q, angle=float(params[k])))
                        k += 1
        return ops


def zero_state(n_qubits: int) -> np.ndarray:
    state = np.zeros(2**n_qubits, dtype=complex)
    state[0] = 1.0
    return state


def n_qubits_of(state: np.ndarray) -> int:
    n = int(math.log2(len(state)))
    if 2**n != len(state):
        raise SimulationError(f"state length {len(state)} is not a power of two")
    return n


def _rotation_matrix(kind: str, angle: float) -> np.ndarray:
    c, s = math.cos(angle / 2), math.sin(angle / 2)
    if kind == "rx":
        return np.array([[c, -1j * s], [-1j * s, c]])
    if kind == "ry":
        return np.array([[c, -s], [s, c]])
    return np.array([[c - 1j * s, 0], [0, c + 1j * s]])  # rz


_FIXED = {
    "h": np.array([[1, 1], [1, -1]]) / SQRT2,
    "s": np.array([[1, 0], [0, 1j]]),
    "x": np.array([[0, 1], [1, 0]]),
}


def _apply_single(state: np.ndarray, n: int, qubit: int, u: np.ndarray) -> np.ndarray:
    view = state.reshape(2 ** (n - qubit - 1), 2, 2**qubit)
    out = np.empty_like(view)
    out[:, 0, :] = u[0, 0] * view[:, 0, :] + u[0, 1] * view[:, 1, :]
    out[:, 1, :] = u[1, 0] * view[:, 0, :] + u[1, 1] * view[:, 1, :]
    return out.reshape(-1)


def apply_gate(state: np.ndarray, gate: GateOp) -> np.ndarray:
    """Apply one gate, returning a new state vector."""
    n = n_qubits_of(state)
    if gate.target >= n or (gate.control is not None and gate.control >= n):
        raise SimulationError(f"gate {gate.kind} out of range for {n} qubits")
    if gate.kind == "cx":
        idx = np.arange(len(state))
        controlled = (idx >> gate.control) & 1 == 1
        out = state.copy()
        out[idx[controlled]] = state[idx[controlled] ^ (1 << gate.target)]
        return out
    u = _rotation_matrix(gate.kind, gate.angle) if gate.kind in ROTATIONS \
        else _FIXED[gate.kind]
    return _apply_single(state, n, gate.target, u)


def apply_circuit(state: np.ndarray, gates) -> np.ndarray:
    for gate in gates:
        state = apply_gate(state, gate)
    return state


_CHAIN_CACHE: dict[int, np.ndarray] = {}


def _chain_permutation(n: int) -> np.ndarray:
    """Basis permutation of the CX chain (control q, target q+1, q = 0..n-2);
    CX gates permute computational basis states, so a whole chain is one
    precomputed index gather."""
    perm = _CHAIN_CACHE.get(n)
    if perm is None:
        idx = np.arange(2**n)
        for q in range(n - 1):
            controlled = (idx >> q) & 1 == 1
            idx = np.where(controlled, idx ^ (1 << (q + 1)), idx)
        # idx maps input basis -> output basis; invert for amplitude gather
        perm = np.empty_like(idx)
        perm[idx] = np.arange(2**n)
        _CHAIN_CACHE[n] = perm
    return perm


_TOKEN_CODES = {"rx": 0, "ry": 1, "rz": 2, "cx": 3}

try:
    from numba import njit as _njit

    @_njit(cache=True)
    def _prepare_kernel(n, layers, tokens, cos, sin):   # pragma: no cover
        dim = 1 << n
        state = np.zeros(dim, np.complex128)
        state[0] = 1.0
        k = 0
        for _ in range(layers):
            for token in tokens:
                if token == 3:
                    for q in range(n - 1):
                        control = 1 << q
                        target = 1 << (q + 1)
                        for i in range(dim):
                            if (i & control) and not (i & target):
                                j = i | target
                                state[i], state[j] = state[j], state[i]
                    continue
                for q in range(n):
                    c, s = cos[k], sin[k]
                    k += 1
                    mask = 1 << q
                    for i in range(dim):
                        if i & mask:
                            continue
                        j = i | mask
                        a, b = state[i], state[j]
                        if token == 1:      # ry
                            state[i] = c * a - s * b
                            state[j] = s * a + c * b
                        elif token == 0:    # rx
                            state[i] = c * a - 1j * s * b
                            state[j] = -1j * s * a + c * b
                        else:               # rz
                            state[i] = (c - 1j * s) * a
                            state[j] = (c + 1j * s) * b
        return state

    _HAVE_NUMBA = True
except ImportError:          # pragma: no cover - numba is a hard dependency
    _HAVE_NUMBA = False


def _prepare_numpy(n, layers, tokens, cos, sin):
    state = zero_state(n)
    chain = _chain_permutation(n)
    k = 0
    for _ in range(layers):
        for token in tokens:
            if token == 3:
                if n > 1:
                    state = state[chain]
                continue
            for q in range(n):
                c, s = cos[k], sin[k]
                k += 1
                view = state.reshape(2 ** (n - q - 1), 2, 2**q)
                out = np.empty_like(view)
                lo, hi = view[:, 0, :], view[:, 1, :]
                if token == 1:
                    out[:, 0, :] = c * lo - s * hi
                    out[:, 1, :] = s * lo + c * hi
                elif token == 0:
                    out[:, 0, :] = c * lo - 1j * s * hi
                    out[:, 1, :] = -1j * s * lo + c * hi
                else:
                    out[:, 0, :] = (c - 1j * s) * lo
                    out[:, 1, :] = (c + 1j * s) * hi
                state = out.reshape(-1)
    return state


def prepare(spec: AnsatzSpec, params: np.ndarray) -> np.ndarray:
    """State produced by the ansatz on |0...0>.

    The iteration engines call this in a tight loop (every parameter-shift
    evaluation re-prepares a state), so the gate sweep runs as a compiled
    kernel when numba is importable, with an equivalent numpy fallback.
    """
    params = np.asarray(params, dtype=float)
    if params.shape != (spec.param_count,):
        raise SimulationError(
            f"expected {spec.param_count} parameters, got {params.shape}"
        )
    half = params * 0.5
    cos, sin = np.cos(half), np.sin(half)
    tokens = np.array([_TOKEN_CODES[t] for t in spec.template], dtype=np.int64)
    if _HAVE_NUMBA:
        return _prepare_kernel(spec.n_qubits, spec.layers, tokens, cos, sin)
    return _prepare_numpy(spec.n_qubits, spec.layers, tokens, cos, sin)


def exact_expectation(state: np.ndarray, observable: np.ndarray) -> float:
    """psi^dag M psi for a Hermitian observable; the brute-force oracle all
    sampled estimators are tested against."""
    m = np.asarray(observable)
    if m.shape != (len(state), len(state)):
        raise SimulationError("observable dimension does not match the state")
    residual = np.max(np.abs(m - m.conj().T)) if m.size else 0.0
    if residual > 1e-10:
        raise SimulationError(f"observable not Hermitian (residual {residual:.2e})")
    return float(np.real(np.vdot(state, m @ state)))


def sample_basis(state: np.ndarray, shots: int, seed) -> np.ndarray:
    """Multinomial computational-basis counts (length 2**n), deterministic
    per seed."""
    if shots < 1:
        raise SimulationError("shots must be >= 1")
    probs = np.abs(np.asarray(state)) ** 2
    probs = probs / probs.sum()
    rng = np.random.default_rng(seed)
    return rng.multinomial(shots, probs)


def shift_points(params: np.ndarray, index: int) -> tuple[np.ndarray, np.ndarray]:
    """The two parameter-shift evaluation points for entry ``index``
    (+- pi/2, the r = 1/2 convention for Pauli-generated rotations)."""
    params = np.asarray(params, dtype=float)
    if not (0 <= index < len(params)):
        raise SimulationError(f"parameter index {index} out of range")
    plus = params.copy()
    minus = params.copy()
    plus[index] += math.pi / 2
    minus[index] -= math.pi / 2
    return plus, minus
