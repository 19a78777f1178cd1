"""
Genomic data pipeline tour
==========================

From raw nucleotide strings to a trained quantum classifier: synthesize
motif-labeled sequences, one-hot encode them, compress to a qubit-sized
feature vector with PCA, and run one device's local training step.
"""

import numpy as np

from qflsim import dataprep, dfo, qmodels

rng = np.random.default_rng(4)

# ---------------------------------------------------------------------------
# synthesize and inspect
# ---------------------------------------------------------------------------

seqs = dataprep.synth_genomic(num_samples=24, length=20, noise=0.05, seed=4)
print("first three sequences:")
for s in seqs[:3]:
    print(f"  label {s.label}: {s.bases}")

# One-hot turns each base into a unit row: A=[1,0,0,0] ... T=[0,0,0,1].
print("\none_hot('ACGT') =", dataprep.one_hot_encode("ACGT").astype(int))

dataset = dataprep.encode_sequences(seqs)
print(f"encoded feature matrix: {dataset.features.shape} (4 columns per base)")

# ---------------------------------------------------------------------------
# PCA down to one feature per qubit
# ---------------------------------------------------------------------------

pca = dataprep.pca_fit(dataset.features, n_components=2)
compressed = dataprep.pca_transform(pca, dataset.features)
print(
    f"\nPCA to 2 components: explained variance {np.round(pca.explained_variance, 3)}"
)

# Rescale into a narrow angle band so the phase encoding stays separable.
lo, hi = compressed.min(axis=0), compressed.max(axis=0)
angles = 0.5 * (compressed - lo) / np.where(hi > lo, hi - lo, 1.0)
features = dataprep.EncodedDataset(angles, dataset.labels)

# ---------------------------------------------------------------------------
# one local training step of a 2-qubit classifier
# ---------------------------------------------------------------------------

model = qmodels.vqc_model(2, feature_reps=1, ansatz_reps=1, shots=128)
theta0 = rng.uniform(-np.pi, np.pi, model.num_weights)
print(f"\n2-qubit classifier with {model.num_weights} trainable angles")
print(f"initial loss: {qmodels.loss(model, features, theta0, seed=0):.4f}")

trace = dfo.minimize(
    lambda w: qmodels.loss(model, features, w, seed=0),
    theta0,
    dfo.Budget(maxiter=40),
)
print(
    f"after 40 simplex iterations ({trace.evals_used} evaluations): "
    f"loss {trace.best_value:.4f}"
)

rows = [0, 1, 12, 13]  # two sequences from each class
probs = qmodels.forward_batch(model, features.features[rows], trace.best_params, seed=0)
print("\npredictions on two sequences per class:")
for p, y in zip(probs, features.labels[rows]):
    print(f"  class-1 mass {p[1]:.3f}  label {y}")
