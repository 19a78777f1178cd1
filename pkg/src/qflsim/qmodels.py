"""Variational circuit models: ZZ-feature-map VQC and a small QCNN.

A model is described by frozen spec dataclasses; the gate sequence is
derived once per spec as a symbolic program whose angles reference either
a feature slot, a feature pair, or a trainable weight slot. The same
program drives both the single-sample circuit builder and the batched
evaluator, so the two cannot drift apart.

Readout is computed from sampled counts over the full register:

* ``parity``: class = popcount(bitstring) mod 2
* ``last_qubit``: class = bit of the last register qubit (the qubit the
  QCNN pooling cascade leaves active)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import qsim
from .qsim import GateOp, NoiseSpec, QuantumCircuit

PROB_FLOOR = 1e-12

INTERPRETERS = ("parity", "last_qubit")
ANSATZ_KINDS = ("real_amplitudes", "qcnn")


class ModelError(ValueError):
    """Inconsistent model structure or parameter binding."""


@dataclass(frozen=True)
class FeatureMapSpec:
    """ZZ feature map: per repetition, H on every qubit, P(2 x_i) on qubit
    i, then for every ordered pair i<j the sandwich CX(i,j), P on j with
    angle 2 (pi - x_i)(pi - x_j), CX(i,j)."""

    num_features: int
    reps: int = 2
    kind: str = "zz"

    def __post_init__(self):
        if self.kind != "zz":
            raise ModelError(f"unknown feature map kind {self.kind!r}")
        if self.num_features < 1:
            raise ModelError("num_features must be >= 1")
        if self.reps < 1:
            raise ModelError("feature map reps must be >= 1")


@dataclass(frozen=True)
class AnsatzSpec:
    """Trainable block. ``real_amplitudes``: RY layers separated by ring CX
    entanglement, reps entangling blocks, so n*(reps+1) weights. ``qcnn``:
    alternating convolution and pooling stages until one active qubit is
    left; needs a power-of-two register."""

    kind: str
    num_qubits: int
    reps: int = 1

    def __post_init__(self):
        if self.kind not in ANSATZ_KINDS:
            raise ModelError(f"unknown ansatz kind {self.kind!r}")
        if self.num_qubits < 1:
            raise ModelError("num_qubits must be >= 1")
        if self.reps < 1:
            raise ModelError("ansatz reps must be >= 1")
        if self.kind == "qcnn":
            n = self.num_qubits
            if n < 2 or n & (n - 1):
                raise ModelError(f"qcnn needs a power-of-two register >= 2, got {n}")

    @property
    def num_weights(self) -> int:
        if self.kind == "real_amplitudes":
            return self.num_qubits * (self.reps + 1)
        ops, count, _ = _qcnn_program(self.num_qubits, self.reps)
        return count


@dataclass(frozen=True)
class QModel:
    """Feature map + ansatz + shot-based readout."""

    feature_map: FeatureMapSpec
    ansatz: AnsatzSpec
    shots: int = 128
    interpreter: str = "parity"
    num_classes: int = 2

    def __post_init__(self):
        if self.feature_map.num_features != self.ansatz.num_qubits:
            raise ModelError(
                f"feature map width {self.feature_map.num_features} != "
                f"register size {self.ansatz.num_qubits}"
            )
        if self.shots < 1:
            raise ModelError("shots must be >= 1")
        if self.interpreter not in INTERPRETERS:
            raise ModelError(f"unknown interpreter {self.interpreter!r}")
        if self.num_classes != 2:
            raise ModelError("only binary readout is supported")

    @property
    def num_qubits(self) -> int:
        return self.ansatz.num_qubits

    @property
    def num_features(self) -> int:
        return self.feature_map.num_features

    @property
    def num_weights(self) -> int:
        return self.ansatz.num_weights


def vqc_model(
    num_qubits: int,
    feature_reps: int = 2,
    ansatz_reps: int = 1,
    shots: int = 128,
    interpreter: str = "parity",
) -> QModel:
    return QModel(
        feature_map=FeatureMapSpec(num_features=num_qubits, reps=feature_reps),
        ansatz=AnsatzSpec("real_amplitudes", num_qubits, ansatz_reps),
        shots=shots,
        interpreter=interpreter,
    )


def qcnn_model(
    num_qubits: int,
    feature_reps: int = 2,
    conv_reps: int = 1,
    shots: int = 128,
) -> QModel:
    return QModel(
        feature_map=FeatureMapSpec(num_features=num_qubits, reps=feature_reps),
        ansatz=AnsatzSpec("qcnn", num_qubits, conv_reps),
        shots=shots,
        interpreter="last_qubit",
    )


# ---------------------------------------------------------------------------
# symbolic programs
# ---------------------------------------------------------------------------
# Each entry is (gate kind, targets, angle ref) with angle ref one of
#   None              fixed gate
#   ("x", i)          2 * x_i
#   ("xx", i, j)      2 * (pi - x_i) * (pi - x_j)
#   ("w", k)          trainable weight k


def _zz_feature_program(n: int, reps: int):
    ops = []
    for _ in range(reps):
        for q in range(n):
            ops.append(("h", (q,), None))
        for q in range(n):
            ops.append(("p", (q,), ("x", q)))
        for i in range(n):
            for j in range(i + 1, n):
                ops.append(("cx", (i, j), None))
                ops.append(("p", (j,), ("xx", i, j)))
                ops.append(("cx", (i, j), None))
    return ops


def _real_amplitudes_program(n: int, reps: int):
    ops = []
    k = 0
    for _ in range(reps):
        for q in range(n):
            ops.append(("ry", (q,), ("w", k)))
            k += 1
        if n >= 2:
            for q in range(n):
                ops.append(("cx", (q, (q + 1) % n), None))
    for q in range(n):
        ops.append(("ry", (q,), ("w", k)))
        k += 1
    return ops, k


def _qcnn_program(n: int, conv_reps: int):
    """Convolution blocks on disjoint adjacent active pairs, then pooling
    that folds each first-half qubit into its second-half partner and drops
    it, halving the active set until one qubit (always the last) remains."""
    ops = []
    k = 0
    active = list(range(n))
    while len(active) > 1:
        half = len(active) // 2
        for _ in range(conv_reps):
            for idx in range(0, len(active) - 1, 2):
                qa, qb = active[idx], active[idx + 1]
                ops.append(("ry", (qa,), ("w", k)))
                ops.append(("ry", (qb,), ("w", k + 1)))
                ops.append(("cx", (qa, qb), None))
                ops.append(("ry", (qa,), ("w", k + 2)))
                ops.append(("ry", (qb,), ("w", k + 3)))
                k += 4
        for idx in range(half):
            qa, qb = active[idx], active[idx + half]
            ops.append(("ry", (qb,), ("w", k)))
            ops.append(("cx", (qa, qb), None))
            ops.append(("ry", (qb,), ("w", k + 1)))
            k += 2
        active = active[half:]
    return ops, k, active[0]


@lru_cache(maxsize=None)
def _model_program(model: QModel):
    n = model.num_qubits
    ops = list(_zz_feature_program(n, model.feature_map.reps))
    if model.ansatz.kind == "real_amplitudes":
        body, count = _real_amplitudes_program(n, model.ansatz.reps)
    else:
        body, count, _ = _qcnn_program(n, model.ansatz.reps)
    ops.extend(body)
    return tuple(ops), count


def _check_bindings(model: QModel, features, weights):
    features = np.asarray(features, dtype=float).reshape(-1)
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if features.shape[0] != model.num_features:
        raise ModelError(
            f"expected {model.num_features} features, got {features.shape[0]}"
        )
    if weights.shape[0] != model.num_weights:
        raise ModelError(
            f"expected {model.num_weights} weights, got {weights.shape[0]}"
        )
    if not np.all(np.isfinite(features)) or not np.all(np.isfinite(weights)):
        raise ModelError("features and weights must be finite")
    return features, weights


def _scalar_angle(ref, features, weights) -> float:
    tag = ref[0]
    if tag == "x":
        return 2.0 * features[ref[1]]
    if tag == "xx":
        return 2.0 * (math.pi - features[ref[1]]) * (math.pi - features[ref[2]])
    return float(weights[ref[1]])


def build_circuit(model: QModel, features, weights) -> QuantumCircuit:
    """Bind one feature vector and one weight vector into a concrete circuit."""
    features, weights = _check_bindings(model, features, weights)
    program, _ = _model_program(model)
    qc = QuantumCircuit(model.num_qubits)
    for kind, targets, ref in program:
        params = () if ref is None else (_scalar_angle(ref, features, weights),)
        qc.append(GateOp(kind, targets, params))
    return qc


def build_vqc(features, weights, model: QModel) -> QuantumCircuit:
    if model.ansatz.kind != "real_amplitudes":
        raise ModelError("model is not a VQC")
    return build_circuit(model, features, weights)


def build_qcnn(features, weights, model: QModel) -> QuantumCircuit:
    if model.ansatz.kind != "qcnn":
        raise ModelError("model is not a QCNN")
    return build_circuit(model, features, weights)


# ---------------------------------------------------------------------------
# readout
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _class_one_mask(num_qubits: int, interpreter: str) -> np.ndarray:
    idx = np.arange(2**num_qubits)
    if interpreter == "parity":
        bits = (idx[:, None] >> np.arange(num_qubits)) & 1
        return (bits.sum(axis=1) % 2).astype(float)
    # big-endian: the last register qubit is the least significant bit
    return (idx & 1).astype(float)


def interpret_counts(model: QModel, counts: dict[str, int], shots: int) -> np.ndarray:
    """Aggregate bitstring counts into [P(class 0), P(class 1)]."""
    mask = _class_one_mask(model.num_qubits, model.interpreter)
    one = 0
    for bits, c in counts.items():
        one += c * mask[int(bits, 2)]
    p1 = one / shots
    return np.array([1.0 - p1, p1])


def forward(
    model: QModel, features, weights, noise: NoiseSpec | None = None, seed: int = 0
) -> np.ndarray:
    """Class probabilities for one sample, estimated from ``model.shots``
    seeded measurement shots. ``noise`` overrides the default noiseless
    seeded sampling."""
    qc = build_circuit(model, features, weights)
    spec = noise if noise is not None else NoiseSpec(0.0, seed=seed)
    res = qsim.sample(qc, model.shots, spec)
    return interpret_counts(model, res.counts, res.shots)


def _batch_states(model: QModel, features_mat: np.ndarray, weights) -> np.ndarray:
    program, _ = _model_program(model)
    batch = features_mat.shape[0]
    states = qsim.batch_zero_states(batch, model.num_qubits)
    pi = math.pi
    for kind, targets, ref in program:
        if ref is None:
            states = qsim.batch_apply(states, kind, targets)
            continue
        tag = ref[0]
        if tag == "x":
            angles = 2.0 * features_mat[:, ref[1]]
        elif tag == "xx":
            angles = 2.0 * (pi - features_mat[:, ref[1]]) * (pi - features_mat[:, ref[2]])
        else:
            angles = float(weights[ref[1]])
        states = qsim.batch_apply(states, kind, targets, angles)
    return states


def forward_batch(
    model: QModel, features_mat, weights, seed: int = 0
) -> np.ndarray:
    """Class probabilities for a whole feature matrix, shape (B, 2).

    Row 0 consumes the seeded sample stream first, so per-row results are
    reproducible for a fixed (matrix, weights, seed, shots) but are not the
    same draws as B independent ``forward`` calls.
    """
    features_mat = np.asarray(features_mat, dtype=float)
    if features_mat.ndim != 2 or features_mat.shape[1] != model.num_features:
        raise ModelError(
            f"feature matrix must be (B, {model.num_features}), got {features_mat.shape}"
        )
    weights = np.asarray(weights, dtype=float).reshape(-1)
    _check_bindings(model, features_mat[0], weights)
    states = _batch_states(model, features_mat, weights)
    probs = qsim.probabilities(states)
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(model.shots, probs)
    mask = _class_one_mask(model.num_qubits, model.interpreter)
    p1 = counts @ mask / model.shots
    return np.column_stack([1.0 - p1, p1])


def loss(model: QModel, dataset, weights, seed: int = 0) -> float:
    """Mean cross-entropy of the shot-estimated class probabilities.

    ``dataset`` is anything with .features (B, n) and .labels (B,) in
    {0, 1}. Probabilities are floored at PROB_FLOOR before the log, so the
    result lies in [0, -ln(PROB_FLOOR)].
    """
    features = np.asarray(dataset.features, dtype=float)
    labels = np.asarray(dataset.labels, dtype=int)
    if features.shape[0] == 0:
        raise ModelError("empty dataset")
    if features.shape[0] != labels.shape[0]:
        raise ModelError("features and labels length mismatch")
    probs = forward_batch(model, features, weights, seed=seed)
    p_true = probs[np.arange(labels.shape[0]), labels]
    return float(-np.mean(np.log(np.clip(p_true, PROB_FLOOR, None))))
