"""Independent reference implementations used to pin expected test values.

Everything here is deliberately written the slow, obvious way (full kron
unitaries, explicit loops, exhaustive enumeration) and shares no code with
the package under test.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

_I2 = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)
_P0 = np.array([[1, 0], [0, 0]], dtype=complex)
_P1 = np.array([[0, 0], [0, 1]], dtype=complex)


def _oracle_mat_1q(kind: str, params) -> np.ndarray:
    if kind == "h":
        return np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
    (theta,) = params
    if kind == "rx":
        return np.array(
            [
                [math.cos(theta / 2), -1j * math.sin(theta / 2)],
                [-1j * math.sin(theta / 2), math.cos(theta / 2)],
            ],
            dtype=complex,
        )
    if kind == "ry":
        return np.array(
            [
                [math.cos(theta / 2), -math.sin(theta / 2)],
                [math.sin(theta / 2), math.cos(theta / 2)],
            ],
            dtype=complex,
        )
    if kind == "rz":
        return np.diag([np.exp(-1j * theta / 2), np.exp(1j * theta / 2)])
    if kind == "p":
        return np.diag([1.0, np.exp(1j * theta)])
    raise ValueError(kind)


def _kron_chain(factors) -> np.ndarray:
    # qubit 0 is the leftmost kron factor (most significant index bit)
    out = factors[0]
    for f in factors[1:]:
        out = np.kron(out, f)
    return out


def _embed_1q(mat: np.ndarray, q: int, n: int) -> np.ndarray:
    factors = [_I2] * n
    factors[q] = mat
    return _kron_chain(factors)


def _embed_controlled(apply_mat: np.ndarray, control: int, target: int, n: int):
    idle = [_I2] * n
    idle[control] = _P0
    term0 = _kron_chain(idle)
    active = [_I2] * n
    active[control] = _P1
    active[target] = apply_mat
    return term0 + _kron_chain(active)


def gate_unitary(kind: str, targets, params, num_qubits: int) -> np.ndarray:
    """Full 2^n x 2^n unitary of a single gate, built by kron embedding."""
    if kind == "cx":
        return _embed_controlled(_X, targets[0], targets[1], num_qubits)
    if kind == "cz":
        return _embed_controlled(_Z, targets[0], targets[1], num_qubits)
    return _embed_1q(_oracle_mat_1q(kind, params), targets[0], num_qubits)


def circuit_unitary(num_qubits: int, ops) -> np.ndarray:
    """Product of per-gate unitaries; ops is an iterable of objects with
    .kind/.targets/.params (later gates multiply from the left)."""
    u = np.eye(2**num_qubits, dtype=complex)
    for op in ops:
        u = gate_unitary(op.kind, op.targets, op.params, num_qubits) @ u
    return u


def circuit_state(num_qubits: int, ops) -> np.ndarray:
    state = np.zeros(2**num_qubits, dtype=complex)
    state[0] = 1.0
    return circuit_unitary(num_qubits, ops) @ state


def parity_class(bits: str) -> int:
    """Class label of one bitstring: popcount mod 2, counted by loop."""
    total = 0
    for ch in bits:
        if ch == "1":
            total += 1
        elif ch != "0":
            raise ValueError(f"not a bit: {ch!r}")
    return total % 2


def parity_masses(probs_by_bitstring: dict[str, float]) -> tuple[float, float]:
    """(even mass, odd mass) by exhaustive walk over the given dict."""
    even = odd = 0.0
    for bits, p in probs_by_bitstring.items():
        if parity_class(bits) == 0:
            even += p
        else:
            odd += p
    return even, odd


def cross_entropy(prob_true: list[float], floor: float = 1e-12) -> float:
    """Mean negative log likelihood computed with a plain python loop."""
    total = 0.0
    for p in prob_true:
        total += -math.log(max(p, floor))
    return total / len(prob_true)


def kl_divergence(p, q, floor: float = 1e-12) -> float:
    """Sum p_i ln(p_i/q_i) term by term; zero-probability p terms skipped."""
    total = 0.0
    for pi, qi in zip(p, q):
        if pi > 0.0:
            total += pi * math.log(pi / max(qi, floor))
    return total


def pca_reference(x: np.ndarray, n_components: int):
    """Brute-force PCA: explicit covariance accumulation, then eig.

    Returns (mean, components (d, k), variances (k,)) with each component's
    largest-magnitude entry made positive.
    """
    x = np.asarray(x, dtype=float)
    n, d = x.shape
    mean = np.array([sum(x[:, j]) / n for j in range(d)])
    cov = np.zeros((d, d))
    for row in x:
        diff = row - mean
        cov += np.outer(diff, diff)
    cov /= n - 1
    vals, vecs = np.linalg.eig(cov)
    vals = vals.real
    vecs = vecs.real
    order = np.argsort(vals)[::-1][:n_components]
    comps = vecs[:, order]
    for k in range(comps.shape[1]):
        j = int(np.argmax(np.abs(comps[:, k])))
        if comps[j, k] < 0:
            comps[:, k] = -comps[:, k]
    return mean, comps, vals[order]


def min_subset_sum_sq(distances, size: int) -> float:
    """Exhaustive minimum of sum(d_i^2) over all subsets of the given size."""
    best = math.inf
    for combo in itertools.combinations(range(len(distances)), size):
        s = sum(distances[i] ** 2 for i in combo)
        best = min(best, s)
    return best


def mean_subset_mean_sq(distances, size: int) -> float:
    """Mean over all size-``size`` subsets of the subset mean of d_i^2."""
    total = 0.0
    count = 0
    for combo in itertools.combinations(range(len(distances)), size):
        total += sum(distances[i] ** 2 for i in combo) / size
        count += 1
    return total / count


def quadratic_global_minimum(diags: np.ndarray, anchors: np.ndarray, weights):
    """Closed-form minimizer of sum_i w_i * 0.5 (x-a_i)^T diag(A_i) (x-a_i).

    Solved coordinate-wise: x*_j = sum_i w_i A_ij a_ij / sum_i w_i A_ij.
    """
    diags = np.asarray(diags, dtype=float)
    anchors = np.asarray(anchors, dtype=float)
    w = np.asarray(weights, dtype=float)
    num = np.zeros(diags.shape[1])
    den = np.zeros(diags.shape[1])
    for i in range(diags.shape[0]):
        num += w[i] * diags[i] * anchors[i]
        den += w[i] * diags[i]
    return num / den


def quadratic_grid_minimum(loss_fn, lo, hi, steps: int = 41, rounds: int = 12):
    """Minimize a 2-D loss by repeated grid refinement around the best cell.

    Independent of any closed form: evaluates loss_fn on a steps x steps
    lattice over [lo, hi]^2, re-centers a 4x-smaller box on the argmin, and
    repeats. Resolves the minimizer to ~(hi-lo) * 4^-rounds.
    """
    lo_x = lo_y = float(lo)
    hi_x = hi_y = float(hi)
    best = None
    for _ in range(rounds):
        xs = np.linspace(lo_x, hi_x, steps)
        ys = np.linspace(lo_y, hi_y, steps)
        vals = np.array([[loss_fn(np.array([x, y])) for y in ys] for x in xs])
        i, j = np.unravel_index(np.argmin(vals), vals.shape)
        best = np.array([xs[i], ys[j]])
        span_x = (hi_x - lo_x) / 4.0
        span_y = (hi_y - lo_y) / 4.0
        lo_x, hi_x = best[0] - span_x / 2, best[0] + span_x / 2
        lo_y, hi_y = best[1] - span_y / 2, best[1] + span_y / 2
    return best


def random_circuit(rng: np.random.Generator, max_qubits: int = 4, max_gates: int = 12):
    """Random (num_qubits, op tuples) pair for oracle-equivalence sweeps.

    Returns plain tuples (kind, targets, params) so both the oracle and the
    package can consume them without sharing types.
    """
    n = int(rng.integers(1, max_qubits + 1))
    n_gates = int(rng.integers(1, max_gates + 1))
    kinds_1q = ["h", "rx", "ry", "rz", "p"]
    ops = []
    for _ in range(n_gates):
        if n >= 2 and rng.random() < 0.35:
            kind = "cx" if rng.random() < 0.5 else "cz"
            a, b = rng.choice(n, size=2, replace=False)
            ops.append((kind, (int(a), int(b)), ()))
        else:
            kind = kinds_1q[int(rng.integers(len(kinds_1q)))]
            q = int(rng.integers(n))
            params = () if kind == "h" else (float(rng.uniform(-2 * math.pi, 2 * math.pi)),)
            ops.append((kind, (q,), params))
    return n, ops
