"""Reference loss providers that steer optimizer budget regulation.

Two interchangeable providers:

* ``BaselineProvider``: a multinomial logistic regression trained once by
  full-batch gradient descent on the device's encoded features. Its
  held-out cross-entropy is the per-round reference loss (constant across
  rounds since the model is frozen after fine-tuning).
* ``ReplayProvider``: replays a recorded per-round loss curve from a
  JSON-lines file, reusing the last value beyond the recorded horizon.

Both enforce the fine-tune-once contract: federation fine-tunes at round 1
only, and a second call raises.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PROB_FLOOR = 1e-12
LOSS_FLOOR = 1e-9


class RefModelError(RuntimeError):
    """Provider misuse or malformed replay data."""


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def _cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    p_true = probs[np.arange(labels.shape[0]), labels]
    return float(-np.mean(np.log(np.clip(p_true, PROB_FLOOR, None))))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    learning_rate: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


class BaselineProvider:
    """Logistic regression reference trained by full-batch gradient descent.

    Deterministic for a fixed (dataset, config): weights start at zero and
    the gradient path has no stochasticity.
    """

    kind = "classical_baseline"

    def __init__(self, config: TrainConfig | None = None):
        self.config = config or TrainConfig()
        self.weights: np.ndarray | None = None
        self.bias: np.ndarray | None = None
        self._fine_tuned = False

    def fine_tune(self, dataset) -> dict[str, float]:
        """Train on the dataset; returns training loss and accuracy.

        May be called exactly once (the federation loop fine-tunes at
        round 1 only); a repeat call raises RefModelError.
        """
        if self._fine_tuned:
            raise RefModelError("fine_tune may only be called once, at round 1")
        x = np.asarray(dataset.features, dtype=float)
        y = np.asarray(dataset.labels, dtype=int)
        if x.shape[0] < 2:
            raise RefModelError("need at least 2 samples to fine-tune")
        num_classes = 2
        w = np.zeros((x.shape[1], num_classes))
        b = np.zeros(num_classes)
        targets = _one_hot(y, num_classes)
        lr = self.config.learning_rate
        n = x.shape[0]
        for _ in range(self.config.epochs):
            probs = _softmax(x @ w + b)
            err = (probs - targets) / n
            w -= lr * (x.T @ err)
            b -= lr * err.sum(axis=0)
        self.weights, self.bias = w, b
        self._fine_tuned = True
        probs = _softmax(x @ w + b)
        acc = float(np.mean(probs.argmax(axis=1) == y))
        return {"loss": max(_cross_entropy(probs, y), LOSS_FLOOR), "accuracy": acc}

    def eval_loss(self, dataset, round_index: int) -> float:
        """Held-out cross-entropy; constant across rounds once trained."""
        if round_index < 1:
            raise ValueError(f"round_index must be >= 1, got {round_index}")
        if not self._fine_tuned:
            raise RefModelError("eval_loss requires a fine-tuned provider")
        x = np.asarray(dataset.features, dtype=float)
        y = np.asarray(dataset.labels, dtype=int)
        probs = _softmax(x @ self.weights + self.bias)
        return max(_cross_entropy(probs, y), LOSS_FLOOR)

    def predict_proba(self, features) -> np.ndarray:
        if not self._fine_tuned:
            raise RefModelError("provider is not fine-tuned")
        x = np.asarray(features, dtype=float)
        return _softmax(x @ self.weights + self.bias)


@dataclass(frozen=True)
class ReplayRecord:
    """One device's recorded reference curve."""

    device_id: int
    losses: tuple[float, ...]
    f1: float | None = None

    def __post_init__(self):
        if self.device_id < 0:
            raise RefModelError(f"device_id must be >= 0, got {self.device_id}")
        if not self.losses:
            raise RefModelError(f"device {self.device_id}: empty loss list")
        for v in self.losses:
            if not math.isfinite(v) or v <= 0:
                raise RefModelError(
                    f"device {self.device_id}: losses must be positive and finite"
                )
        if self.f1 is not None and not math.isfinite(self.f1):
            raise RefModelError(f"device {self.device_id}: non-finite f1")


class ReplayProvider:
    """Replays a recorded loss curve; rounds past the end reuse the last
    value. fine_tune is a no-op that reports the recorded round-1 metrics."""

    kind = "replay"

    def __init__(self, record: ReplayRecord):
        self.record = record
        self._fine_tuned = False

    def fine_tune(self, dataset) -> dict[str, float]:
        if self._fine_tuned:
            raise RefModelError("fine_tune may only be called once, at round 1")
        self._fine_tuned = True
        f1 = self.record.f1
        return {
            "loss": self.record.losses[0],
            "accuracy": f1 if f1 is not None else math.nan,
        }

    def eval_loss(self, dataset, round_index: int) -> float:
        if round_index < 1:
            raise ValueError(f"round_index must be >= 1, got {round_index}")
        losses = self.record.losses
        return losses[min(round_index, len(losses)) - 1]


def load_replay(path) -> dict[int, ReplayRecord]:
    """Parse a JSON-lines replay file into records keyed by device id.

    Each line is an object with integer ``device_id``, a non-empty array
    ``losses`` of positive finite reals, and an optional ``f1``.
    """
    records: dict[int, ReplayRecord] = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise RefModelError(f"line {lineno}: invalid JSON ({exc})") from exc
        if not isinstance(obj, dict):
            raise RefModelError(f"line {lineno}: expected an object")
        try:
            device_id = int(obj["device_id"])
            losses = tuple(float(v) for v in obj["losses"])
        except (KeyError, TypeError, ValueError) as exc:
            raise RefModelError(f"line {lineno}: {exc}") from exc
        f1 = obj.get("f1")
        if f1 is not None:
            f1 = float(f1)
        if device_id in records:
            raise RefModelError(f"line {lineno}: duplicate device_id {device_id}")
        try:
            records[device_id] = ReplayRecord(device_id, losses, f1)
        except RefModelError as exc:
            raise RefModelError(f"line {lineno}: {exc}") from exc
    if not records:
        raise RefModelError(f"no replay records found in {path}")
    return records


def save_replay(path, records) -> None:
    """Write records (iterable of ReplayRecord) as JSON lines."""
    lines = []
    for rec in sorted(records, key=lambda r: r.device_id):
        obj = {"device_id": rec.device_id, "losses": list(rec.losses)}
        if rec.f1 is not None:
            obj["f1"] = rec.f1
        lines.append(json.dumps(obj, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n")


def kl_divergence(p, q) -> float:
    """KL(p || q) = sum p_i ln(p_i / q_i) over matching-length distributions.

    q is floored at PROB_FLOOR inside the log; terms with p_i = 0
    contribute zero. Both inputs must sum to 1 within 1e-9.
    """
    p = np.asarray(p, dtype=float).reshape(-1)
    q = np.asarray(q, dtype=float).reshape(-1)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape[0]} vs {q.shape[0]}")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("distributions must be non-negative")
    if abs(p.sum() - 1.0) > 1e-9 or abs(q.sum() - 1.0) > 1e-9:
        raise ValueError("distributions must each sum to 1 within 1e-9")
    mask = p > 0
    terms = p[mask] * np.log(p[mask] / np.clip(q[mask], PROB_FLOOR, None))
    # clipping q can only leave a vanishing negative residue; report >= 0
    return max(float(terms.sum()), 0.0)
