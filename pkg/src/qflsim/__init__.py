"""qflsim: desk-scale quantum federated learning simulation.

Subpackages cover the dense statevector engine (qsim), variational circuit
models (qmodels), budgeted derivative-free optimizers and budget regulation
(dfo), reference loss providers (refmodel), sequence data preparation
(dataprep), the federation loop (fed), and the convergence-theory
verification harness (theory). The command line lives in cli.
"""

__version__ = "0.1.0"
