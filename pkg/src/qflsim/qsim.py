"""Dense statevector simulation for small gate circuits.

Big-endian convention throughout: qubit 0 is the most significant bit of a
basis-state index, i.e. the leftmost character of a bitstring key. The
register is capped at ``MAX_QUBITS`` qubits because states are stored as
dense complex vectors of length ``2**n``.

Supported gates: H, RX, RY, RZ, P (phase), CX, CZ. All gate applications
return fresh arrays; input states are never mutated.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

MAX_QUBITS = 10

GATES_1Q = frozenset({"h", "rx", "ry", "rz", "p"})
GATES_2Q = frozenset({"cx", "cz"})
GATE_KINDS = GATES_1Q | GATES_2Q

_PARAM_COUNT = {"h": 0, "rx": 1, "ry": 1, "rz": 1, "p": 1, "cx": 0, "cz": 0}

_SQRT1_2 = 1.0 / math.sqrt(2.0)

_H = np.array([[_SQRT1_2, _SQRT1_2], [_SQRT1_2, -_SQRT1_2]], dtype=np.complex128)
# |control, target> ordering with the control axis first
_CX = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=np.complex128
)
_CZ = np.diag([1, 1, 1, -1]).astype(np.complex128)

_PAULIS = (
    np.eye(2, dtype=np.complex128),
    np.array([[0, 1], [1, 0]], dtype=np.complex128),
    np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    np.array([[1, 0], [0, -1]], dtype=np.complex128),
)


class CircuitError(ValueError):
    """Structurally invalid gate or circuit."""


@dataclass(frozen=True)
class GateOp:
    """One gate: kind, target qubit indices, rotation/phase parameters.

    For two-qubit kinds the first target is the control. Validation here
    covers arity and parameter count; register bounds are checked by the
    circuit that owns the op.
    """

    kind: str
    targets: tuple[int, ...]
    params: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise CircuitError(f"unknown gate kind {self.kind!r}")
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        arity = 1 if self.kind in GATES_1Q else 2
        if len(self.targets) != arity:
            raise CircuitError(
                f"{self.kind} takes {arity} target(s), got {len(self.targets)}"
            )
        if len(set(self.targets)) != len(self.targets):
            raise CircuitError(f"{self.kind} targets must be distinct: {self.targets}")
        if min(self.targets) < 0:
            raise CircuitError(f"negative qubit index in {self.targets}")
        want = _PARAM_COUNT[self.kind]
        if len(self.params) != want:
            raise CircuitError(
                f"{self.kind} takes {want} parameter(s), got {len(self.params)}"
            )
        if self.params and not all(math.isfinite(p) for p in self.params):
            raise CircuitError(f"non-finite gate parameter in {self.params}")


class QuantumCircuit:
    """Ordered list of gates over a fixed register.

    Ops are validated against the register size on append. Builder methods
    return self so circuits can be written as chains::

        qc = QuantumCircuit(2).h(0).cx(0, 1)
    """

    def __init__(self, num_qubits: int, ops=()):
        num_qubits = int(num_qubits)
        if not 1 <= num_qubits <= MAX_QUBITS:
            raise CircuitError(
                f"num_qubits must be in [1, {MAX_QUBITS}], got {num_qubits}"
            )
        self.num_qubits = num_qubits
        self.ops: list[GateOp] = []
        for op in ops:
            self.append(op)

    def append(self, op: GateOp) -> "QuantumCircuit":
        if not isinstance(op, GateOp):
            raise CircuitError(f"expected GateOp, got {type(op).__name__}")
        if max(op.targets) >= self.num_qubits:
            raise CircuitError(
                f"target {max(op.targets)} out of range for {self.num_qubits} qubits"
            )
        self.ops.append(op)
        return self

    def h(self, q):
        return self.append(GateOp("h", (q,)))

    def rx(self, theta, q):
        return self.append(GateOp("rx", (q,), (theta,)))

    def ry(self, theta, q):
        return self.append(GateOp("ry", (q,), (theta,)))

    def rz(self, theta, q):
        return self.append(GateOp("rz", (q,), (theta,)))

    def p(self, lam, q):
        return self.append(GateOp("p", (q,), (lam,)))

    def cx(self, control, target):
        return self.append(GateOp("cx", (control, target)))

    def cz(self, a, b):
        return self.append(GateOp("cz", (a, b)))

    def __len__(self):
        return len(self.ops)

    def __repr__(self):
        return f"QuantumCircuit(num_qubits={self.num_qubits}, ops={len(self.ops)})"


@dataclass(frozen=True)
class NoiseSpec:
    """Depolarizing stub: with probability ``depolarizing_prob`` per gate,
    replace the gate's action on each of its targets by a uniformly random
    Pauli (I, X, Y or Z). ``seed`` also drives shot sampling, so a spec with
    probability 0 still gives seeded noiseless sampling."""

    depolarizing_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.depolarizing_prob < 1.0:
            raise ValueError(
                f"depolarizing_prob must be in [0, 1), got {self.depolarizing_prob}"
            )


@dataclass(frozen=True)
class SampleResult:
    """Measurement counts keyed by big-endian bitstring."""

    counts: dict[str, int]
    shots: int

    def quasi_probs(self) -> dict[str, float]:
        return {k: v / self.shots for k, v in self.counts.items()}


def zero_state(num_qubits: int) -> np.ndarray:
    """|0...0> as a dense complex vector."""
    if not 1 <= num_qubits <= MAX_QUBITS:
        raise CircuitError(f"num_qubits must be in [1, {MAX_QUBITS}]")
    state = np.zeros(2**num_qubits, dtype=np.complex128)
    state[0] = 1.0
    return state


def _num_qubits_of(dim: int) -> int:
    n = dim.bit_length() - 1
    if dim != 2**n or n < 1:
        raise CircuitError(f"state length {dim} is not a power of two >= 2")
    return n


def _mat_1q(kind: str, params: tuple[float, ...]) -> np.ndarray:
    if kind == "h":
        return _H
    (theta,) = params
    half = theta / 2.0
    if kind == "rx":
        c, s = math.cos(half), math.sin(half)
        return np.array([[c, -1j * s], [-1j * s, c]], dtype=np.complex128)
    if kind == "ry":
        c, s = math.cos(half), math.sin(half)
        return np.array([[c, -s], [s, c]], dtype=np.complex128)
    if kind == "rz":
        return np.array(
            [[np.exp(-1j * half), 0], [0, np.exp(1j * half)]], dtype=np.complex128
        )
    if kind == "p":
        return np.array([[1, 0], [0, np.exp(1j * theta)]], dtype=np.complex128)
    raise CircuitError(f"not a single-qubit kind: {kind}")


def _mat_2q(kind: str) -> np.ndarray:
    return _CX if kind == "cx" else _CZ


def _apply_mat_1q(state: np.ndarray, mat: np.ndarray, q: int, n: int) -> np.ndarray:
    psi = state.reshape((2,) * n)
    out = np.tensordot(mat, psi, axes=(1, q))
    return np.moveaxis(out, 0, q).reshape(-1)


def _apply_mat_2q(
    state: np.ndarray, mat: np.ndarray, qa: int, qb: int, n: int
) -> np.ndarray:
    psi = state.reshape((2,) * n)
    out = np.tensordot(mat.reshape(2, 2, 2, 2), psi, axes=([2, 3], [qa, qb]))
    return np.moveaxis(out, (0, 1), (qa, qb)).reshape(-1)


def apply_gate(state: np.ndarray, op: GateOp) -> np.ndarray:
    """Apply one gate to a dense state, returning a new array.

    The register size is inferred from the state length; op targets must
    fit inside it. Norm is preserved up to float rounding since every
    supported gate is unitary.
    """
    state = np.asarray(state, dtype=np.complex128)
    n = _num_qubits_of(state.shape[0])
    if max(op.targets) >= n:
        raise CircuitError(f"target {max(op.targets)} out of range for {n} qubits")
    if op.kind in GATES_1Q:
        return _apply_mat_1q(state, _mat_1q(op.kind, op.params), op.targets[0], n)
    return _apply_mat_2q(state, _mat_2q(op.kind), op.targets[0], op.targets[1], n)


def run(circuit: QuantumCircuit, initial: np.ndarray | None = None) -> np.ndarray:
    """Run all gates in order from |0...0> (or a caller-supplied state)."""
    if initial is None:
        state = zero_state(circuit.num_qubits)
    else:
        state = np.asarray(initial, dtype=np.complex128).copy()
        if state.shape != (2**circuit.num_qubits,):
            raise CircuitError(
                f"initial state has length {state.shape}, expected {2**circuit.num_qubits}"
            )
    for op in circuit.ops:
        state = apply_gate(state, op)
    return state


def probabilities(state: np.ndarray) -> np.ndarray:
    """Born-rule probabilities |amp|^2, renormalized against float drift."""
    probs = np.abs(np.asarray(state)) ** 2
    total = probs.sum(axis=-1, keepdims=True)
    return probs / total


def bitstring(index: int, num_qubits: int) -> str:
    return format(index, f"0{num_qubits}b")


def _run_noisy_once(circuit: QuantumCircuit, prob: float, rng) -> np.ndarray | None:
    """One noise trajectory; None means no gate was corrupted."""
    n = circuit.num_qubits
    corrupt = rng.random(len(circuit.ops)) < prob
    if not corrupt.any():
        return None
    state = zero_state(n)
    for hit, op in zip(corrupt, circuit.ops):
        if hit:
            # the gate is dropped; each of its targets gets a random Pauli
            for t in op.targets:
                pauli = _PAULIS[rng.integers(4)]
                state = _apply_mat_1q(state, pauli, t, n)
        else:
            state = apply_gate(state, op)
    return state


def sample(
    circuit: QuantumCircuit, shots: int, noise: NoiseSpec | None = None
) -> SampleResult:
    """Draw measurement counts from the circuit's output distribution.

    Noiseless sampling draws a single multinomial from |psi|^2. With a
    nonzero depolarizing probability each shot is its own trajectory, so
    the cost grows with shots * gates; the stub is intended for small shot
    counts. Identical (circuit, shots, noise) always reproduce the same
    counts.
    """
    shots = int(shots)
    if shots < 1:
        raise ValueError(f"shots must be >= 1, got {shots}")
    spec = noise if noise is not None else NoiseSpec()
    rng = np.random.default_rng(spec.seed)
    n = circuit.num_qubits

    if spec.depolarizing_prob == 0.0:
        probs = probabilities(run(circuit))
        vec = rng.multinomial(shots, probs)
        counts = {bitstring(i, n): int(c) for i, c in enumerate(vec) if c}
        return SampleResult(counts=counts, shots=shots)

    clean_probs = None
    counts: Counter[str] = Counter()
    dim = 2**n
    for _ in range(shots):
        state = _run_noisy_once(circuit, spec.depolarizing_prob, rng)
        if state is None:
            if clean_probs is None:
                clean_probs = probabilities(run(circuit))
            probs = clean_probs
        else:
            probs = probabilities(state)
        outcome = int(rng.choice(dim, p=probs))
        counts[bitstring(outcome, n)] += 1
    return SampleResult(counts=dict(counts), shots=shots)


# ---------------------------------------------------------------------------
# Batched engine: many states evolved under the same gate sequence but with
# per-state angles. This is what keeps dataset-sized model evaluation cheap.
# ---------------------------------------------------------------------------


def batch_zero_states(batch: int, num_qubits: int) -> np.ndarray:
    """(batch, 2**n) array of |0...0> rows."""
    if batch < 1:
        raise ValueError(f"batch must be >= 1, got {batch}")
    states = np.zeros((batch, 2**num_qubits), dtype=np.complex128)
    states[:, 0] = 1.0
    return states


def _mats_1q_batch(kind: str, angles) -> np.ndarray:
    """(B, 2, 2) gate matrices for a vector of angles (or a constant (2,2))."""
    if kind == "h":
        return _H
    theta = np.asarray(angles, dtype=np.float64)
    half = theta / 2.0
    mats = np.zeros(half.shape + (2, 2), dtype=np.complex128)
    if kind == "rx":
        c, s = np.cos(half), np.sin(half)
        mats[..., 0, 0] = c
        mats[..., 0, 1] = -1j * s
        mats[..., 1, 0] = -1j * s
        mats[..., 1, 1] = c
    elif kind == "ry":
        c, s = np.cos(half), np.sin(half)
        mats[..., 0, 0] = c
        mats[..., 0, 1] = -s
        mats[..., 1, 0] = s
        mats[..., 1, 1] = c
    elif kind == "rz":
        mats[..., 0, 0] = np.exp(-1j * half)
        mats[..., 1, 1] = np.exp(1j * half)
    elif kind == "p":
        mats[..., 0, 0] = 1.0
        mats[..., 1, 1] = np.exp(1j * theta)
    else:
        raise CircuitError(f"not a single-qubit kind: {kind}")
    return mats


def batch_apply(states: np.ndarray, kind: str, targets, angles=None) -> np.ndarray:
    """Apply one gate to every row of a (B, 2**n) state matrix.

    ``angles`` may be None (H/CX/CZ), a scalar, or a length-B vector giving
    each row its own rotation angle. Returns a new array.
    """
    batch, dim = states.shape
    n = _num_qubits_of(dim)
    if kind in GATES_1Q:
        q = targets[0]
        if angles is None:
            mats = _mats_1q_batch(kind, None)
        else:
            ang = np.broadcast_to(np.asarray(angles, dtype=np.float64), (batch,))
            mats = _mats_1q_batch(kind, ang)
        psi = states.reshape((batch,) + (2,) * n)
        psi = np.moveaxis(psi, 1 + q, 1).reshape(batch, 2, -1)
        out = np.matmul(mats, psi)
        out = np.moveaxis(out.reshape((batch,) + (2,) * n), 1, 1 + q)
        return out.reshape(batch, dim)
    qa, qb = targets
    psi = states.reshape((batch,) + (2,) * n)
    psi = np.moveaxis(psi, (1 + qa, 1 + qb), (1, 2)).reshape(batch, 4, -1)
    out = np.matmul(_mat_2q(kind), psi)
    out = out.reshape((batch, 2, 2) + (2,) * (n - 2))
    out = np.moveaxis(out, (1, 2), (1 + qa, 1 + qb))
    return out.reshape(batch, dim)
