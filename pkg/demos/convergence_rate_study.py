"""
Convergence-rate study on synthetic federated quadratics
========================================================

The convergence story behind budget regulation predicts an O(1/T) optimality
gap for federated averaging with the decaying step size eta_t = 2/(mu(t+gamma))
on smooth strongly convex problems. This script builds such a problem with a
known optimum, runs noisy federated averaging on it, and fits the decay rate;
then it checks the companion claim that picking the clients closest to the
global loss shrinks selection variance below a random pick.
"""

import numpy as np

from qflsim import theory

# ---------------------------------------------------------------------------
# a federated quadratic with a closed-form optimum
# ---------------------------------------------------------------------------

problem = theory.synth_federated_quadratic(
    num_clients=8, dim=4, heterogeneity=1.0, mu=1.0, smoothness=4.0, seed=0
)
x_star = problem.optimum()
print(f"clients: 8, dim: 4, F* = {problem.f_star:.4f}")
print(f"client-optima spread (non-IID gap): {problem.hetero_gap:.4f}")

params = theory.TheoryParams(
    smoothness=4.0,
    strong_convexity=1.0,
    local_steps=4,
    grad_variances=(25.0,) * 8,
    grad_bound_sq=100.0,
)
print(f"gamma = max(8L/mu, E) = {params.gamma}")
print("first step sizes:", [round(theory.lr_schedule(t, params), 4) for t in range(4)])

# ---------------------------------------------------------------------------
# run and fit: the gap should decay like 1/(t+gamma)
# ---------------------------------------------------------------------------

# Starting at the optimum isolates the noise-driven stationary decay; from a
# cold start the deterministic bias transient dominates the early rounds and
# bends the log-log fit.
trace = theory.run_fedavg(
    problem, params, rounds=200, seed=0, replicates=256, x0=x_star
)
fit = theory.fit_rate(trace.gaps, params.gamma)
print(f"\nlog-log fit over 200 rounds: slope {fit.slope:.3f}, R^2 {fit.r_squared:.3f}")
print("(a slope near -1 is the predicted 1/T decay)")

bound0 = params.gap_bound(
    0, hetero_gap=problem.hetero_gap,
    init_dist_sq=float(np.sum(x_star**2)), num_selected=8,
)
print(f"round-0 worst-case gap bound: {bound0:.1f} (loose by design)")

# ---------------------------------------------------------------------------
# alignment selection vs random selection
# ---------------------------------------------------------------------------

print("\nselection variance reduction (10 clients, 500 loss profiles)")
for size in (2, 5):
    rep = theory.variance_reduction_check(size, 10, trials=500, seed=1)
    print(
        f"  pick {size}/10: selected/random mean d^2 = {rep.achieved_ratio:.3f}"
        f"  (bound {1 - size / 10:.1f}, "
        f"{rep.minimality_failures} non-minimal picks in {rep.trials} trials)"
    )

# ---------------------------------------------------------------------------
# what regulation buys on this testbed
# ---------------------------------------------------------------------------

plain = theory.run_fedavg(problem, params, rounds=120, seed=2, replicates=8)
regulated = theory.run_fedavg(
    problem, params, rounds=120, seed=2, replicates=8,
    regulation_ref=2.0, budget_cap=12,
)
threshold = 0.1 * (problem.global_loss(np.zeros(4)) - problem.f_star)
eff = theory.efficiency_ratio(plain, regulated, threshold)
print(
    f"\nrounds to reach a 10x gap cut: plain {eff.rounds_plain}, "
    f"regulated {eff.rounds_regulated} "
    f"(speedup {eff.rounds_ratio:.1f}x at {eff.budget_ratio:.1f}x the local work)"
)
