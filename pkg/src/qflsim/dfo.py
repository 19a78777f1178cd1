"""Budgeted derivative-free optimizers and optimizer budget regulation.

Two methods are provided behind one interface: a Nelder-Mead simplex
(stand-in for the COBYLA class of simplex solvers) and SPSA. Both respect a
hard iteration budget, record a per-iteration objective trace, and abort
with the partial trace preserved if the objective ever returns a non-finite
value.

An "iteration" is one simplex transformation step for Nelder-Mead and one
perturbation pair plus iterate evaluation for SPSA, so worst-case objective
evaluations are bounded by:

* nelder_mead: (dim + 1) initial simplex + (dim + 2) per iteration
* spsa: 3 per iteration

``regulate`` maps a device/reference loss pair to the next iteration
budget. All four strategies grow the budget when the reference loss beats
the device loss (ratio r = loss_dev / loss_ref > 1) and the result is
clamped to [1, cap].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAXITER_CAP = 100

METHODS = ("nelder_mead", "spsa")
REGULATION_KINDS = ("adaptive", "incremental", "logarithmic", "dynamic")

# SPSA gain schedule constants (standard exponents)
_SPSA_A = 0.2
_SPSA_C = 0.15
_SPSA_ALPHA = 0.602
_SPSA_GAMMA = 0.101


class ObjectiveError(RuntimeError):
    """Objective returned a non-finite value; .trace holds progress so far."""

    def __init__(self, message: str, trace: "OptimizerTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class Budget:
    """Hard iteration budget; cap bounds any later regulated growth."""

    maxiter: int
    cap: int = MAXITER_CAP

    def __post_init__(self):
        if self.cap < 1:
            raise ValueError(f"cap must be >= 1, got {self.cap}")
        if not 1 <= self.maxiter <= self.cap:
            raise ValueError(
                f"maxiter must be in [1, {self.cap}], got {self.maxiter}"
            )


@dataclass
class OptimizerTrace:
    """objective_history has one entry per iteration (the value accepted as
    that iteration's iterate), so best_value == min(objective_history)."""

    objective_history: list[float] = field(default_factory=list)
    best_params: np.ndarray | None = None
    best_value: float = math.inf
    evals_used: int = 0


@dataclass(frozen=True)
class RegulationStrategy:
    """kind selects the budget update rule; step feeds ``incremental`` and
    beta weights ``dynamic`` between the old budget and the adaptive one."""

    kind: str
    step: int = 1
    beta: float = 0.5

    def __post_init__(self):
        if self.kind not in REGULATION_KINDS:
            raise ValueError(f"unknown regulation kind {self.kind!r}")
        if self.step < 1:
            raise ValueError(f"step must be >= 1, got {self.step}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def regulate(
    strategy: RegulationStrategy,
    maxiter: int,
    loss_dev: float,
    loss_ref: float,
    cap: int = MAXITER_CAP,
) -> int:
    """Next iteration budget given the device and reference losses.

    Callers apply this only when loss_ref < loss_dev; the formulas are
    still defined for any positive pair. With r = loss_dev / loss_ref:

    * adaptive:     round(maxiter * r)
    * incremental:  maxiter + step
    * logarithmic:  round(maxiter * (1 + ln r))
    * dynamic:      round((1 - beta) * maxiter + beta * maxiter * r)

    Rounding is half-up; the result is clamped to [1, cap].
    """
    if loss_ref <= 0.0 or not math.isfinite(loss_ref):
        raise ValueError(f"loss_ref must be positive and finite, got {loss_ref}")
    if loss_dev < 0.0 or not math.isfinite(loss_dev):
        raise ValueError(f"loss_dev must be non-negative and finite, got {loss_dev}")
    if maxiter < 1:
        raise ValueError(f"maxiter must be >= 1, got {maxiter}")
    ratio = loss_dev / loss_ref
    if strategy.kind == "adaptive":
        raw = maxiter * ratio
    elif strategy.kind == "incremental":
        raw = maxiter + strategy.step
    elif strategy.kind == "logarithmic":
        raw = maxiter * (1.0 + math.log(ratio))
    else:  # dynamic
        raw = (1.0 - strategy.beta) * maxiter + strategy.beta * maxiter * ratio
    return max(1, min(_round_half_up(raw), cap))


def nm_eval_bound(dim: int, maxiter: int) -> int:
    """Worst-case objective evaluations for a Nelder-Mead run."""
    return (dim + 1) + maxiter * (dim + 2)


def spsa_eval_bound(maxiter: int) -> int:
    return 3 * maxiter


def _wrap_objective(objective, trace: OptimizerTrace):
    def call(x):
        value = float(objective(np.asarray(x, dtype=float)))
        trace.evals_used += 1
        if not math.isfinite(value):
            raise ObjectiveError(
                f"objective returned non-finite value {value!r} after "
                f"{trace.evals_used} evaluations",
                trace,
            )
        return value

    return call


def _record(trace: OptimizerTrace, x: np.ndarray, value: float):
    trace.objective_history.append(value)
    if value < trace.best_value:
        trace.best_value = value
        trace.best_params = x.copy()


def _nelder_mead(f, x0: np.ndarray, maxiter: int, trace: OptimizerTrace):
    n = x0.shape[0]
    alpha, gamma, rho, sigma = 1.0, 2.0, 0.5, 0.5
    nonzdelt, zdelt = 0.05, 0.00025

    sim = np.tile(x0, (n + 1, 1))
    for i in range(n):
        if sim[i + 1, i] != 0.0:
            sim[i + 1, i] *= 1.0 + nonzdelt
        else:
            sim[i + 1, i] = zdelt
    fsim = np.array([f(sim[i]) for i in range(n + 1)])

    order = np.argsort(fsim, kind="stable")
    sim, fsim = sim[order], fsim[order]
    _record(trace, sim[0], float(fsim[0]))
    # seed entry is the pre-loop best; iterations overwrite the history
    trace.objective_history.clear()

    for _ in range(maxiter):
        centroid = sim[:-1].mean(axis=0)
        xr = centroid + alpha * (centroid - sim[-1])
        fr = f(xr)
        if fr < fsim[0]:
            xe = centroid + gamma * (centroid - sim[-1])
            fe = f(xe)
            if fe < fr:
                sim[-1], fsim[-1] = xe, fe
            else:
                sim[-1], fsim[-1] = xr, fr
        elif fr < fsim[-2]:
            sim[-1], fsim[-1] = xr, fr
        else:
            if fr < fsim[-1]:
                xc = centroid + rho * (xr - centroid)
                fc = f(xc)
            else:
                xc = centroid + rho * (sim[-1] - centroid)
                fc = f(xc)
            if fc < min(fr, fsim[-1]):
                sim[-1], fsim[-1] = xc, fc
            else:
                for i in range(1, n + 1):
                    sim[i] = sim[0] + sigma * (sim[i] - sim[0])
                    fsim[i] = f(sim[i])
        order = np.argsort(fsim, kind="stable")
        sim, fsim = sim[order], fsim[order]
        _record(trace, sim[0], float(fsim[0]))


def _spsa(f, x0: np.ndarray, maxiter: int, trace: OptimizerTrace, rng):
    n = x0.shape[0]
    x = x0.copy()
    big_a = max(1.0, 0.1 * maxiter)
    for k in range(maxiter):
        ck = _SPSA_C / (k + 1) ** _SPSA_GAMMA
        ak = _SPSA_A / (big_a + k + 1) ** _SPSA_ALPHA
        delta = rng.integers(0, 2, n) * 2.0 - 1.0
        f_plus = f(x + ck * delta)
        f_minus = f(x - ck * delta)
        ghat = (f_plus - f_minus) / (2.0 * ck) * (1.0 / delta)
        x = x - ak * ghat
        _record(trace, x, f(x))


def minimize(
    objective,
    x0,
    budget: Budget,
    method: str = "nelder_mead",
    seed: int = 0,
) -> OptimizerTrace:
    """Minimize a scalar objective from x0 under a hard iteration budget.

    Returns an OptimizerTrace. Runs are deterministic for a fixed
    (objective, x0, budget, method, seed); the seed only matters for SPSA.
    Raises ObjectiveError (with the partial trace attached) if the
    objective ever returns NaN or infinity.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.size == 0:
        raise ValueError("x0 must be non-empty")
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")

    trace = OptimizerTrace()
    f = _wrap_objective(objective, trace)
    if method == "nelder_mead":
        _nelder_mead(f, x0, budget.maxiter, trace)
    else:
        _spsa(f, x0, budget.maxiter, trace, np.random.default_rng(seed))
    return trace
