"""Sequence encoding, dimensionality reduction, and dataset plumbing.

The pipeline that feeds the quantum models is: nucleotide strings ->
one-hot vectors (A, C, G, T blocks per position) -> PCA down to the
register width -> affine rescale of each feature into [0, angle_max].

PCA is computed from the eigendecomposition of the mean-centered sample
covariance (ddof=1), not via SVD, with components ordered by descending
variance and signed so each component's largest-magnitude entry is
positive.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

NUCLEOTIDES = "ACGT"
_NUC_INDEX = {ch: i for i, ch in enumerate(NUCLEOTIDES)}


class ParseError(ValueError):
    """Malformed sequence or CSV input; messages carry the offending spot."""


class DataError(ValueError):
    """Structurally invalid dataset or degenerate numeric input."""


@dataclass(frozen=True)
class NucleotideSequence:
    bases: str
    label: int

    def __post_init__(self):
        for i, ch in enumerate(self.bases):
            if ch not in _NUC_INDEX:
                raise ParseError(f"invalid base {ch!r} at position {i}")
        if self.label not in (0, 1):
            raise DataError(f"label must be 0 or 1, got {self.label}")
        if not self.bases:
            raise DataError("empty sequence")

    def __len__(self):
        return len(self.bases)


@dataclass
class EncodedDataset:
    """Feature matrix plus binary labels; rows stay aligned."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.features.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {self.features.shape}")
        if self.features.shape[0] != self.labels.shape[0]:
            raise DataError(
                f"{self.features.shape[0]} feature rows vs {self.labels.shape[0]} labels"
            )
        if not np.all(np.isfinite(self.features)):
            raise DataError("non-finite feature values")
        if self.labels.size and not np.all(np.isin(self.labels, (0, 1))):
            raise DataError("labels must be 0 or 1")

    def __len__(self):
        return self.features.shape[0]

    def subset(self, idx) -> "EncodedDataset":
        idx = np.asarray(idx, dtype=int)
        return EncodedDataset(self.features[idx], self.labels[idx])


def integer_encode(seq: str) -> np.ndarray:
    """A->0, C->1, G->2, T->3."""
    out = np.empty(len(seq), dtype=np.int64)
    for i, ch in enumerate(seq):
        code = _NUC_INDEX.get(ch)
        if code is None:
            raise ParseError(f"invalid base {ch!r} at position {i}")
        out[i] = code
    return out


def one_hot_encode(seq: str) -> np.ndarray:
    """Concatenated per-position one-hot rows: A=[1,0,0,0] ... T=[0,0,0,1]."""
    codes = integer_encode(seq)
    out = np.zeros(4 * len(seq))
    out[np.arange(len(seq)) * 4 + codes] = 1.0
    return out


def encode_sequences(seqs) -> EncodedDataset:
    """One-hot encode a list of equal-length sequences."""
    seqs = list(seqs)
    if not seqs:
        raise DataError("no sequences to encode")
    length = len(seqs[0])
    for i, s in enumerate(seqs):
        if len(s) != length:
            raise DataError(f"sequence {i} has length {len(s)}, expected {length}")
    features = np.stack([one_hot_encode(s.bases) for s in seqs])
    labels = np.array([s.label for s in seqs])
    return EncodedDataset(features, labels)


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (d_in, n_components), orthonormal columns
    explained_variance: np.ndarray  # descending eigenvalues

    @property
    def n_components(self) -> int:
        return self.components.shape[1]


def pca_fit(features, n_components: int) -> PcaModel:
    """Fit PCA by eigendecomposition of the sample covariance.

    Requires more samples than components. Raises DataError when every
    column has zero variance (there is no principal direction to report).
    """
    x = np.asarray(features, dtype=float)
    if x.ndim != 2:
        raise DataError(f"features must be 2-D, got shape {x.shape}")
    n, d = x.shape
    if n_components < 1 or n_components > d:
        raise DataError(f"n_components must be in [1, {d}], got {n_components}")
    if n <= n_components:
        raise DataError(f"need more than {n_components} samples, got {n}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    if not np.any(np.diag(cov) > 0):
        raise DataError("degenerate input: zero variance in every column")
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:n_components]
    variance = np.clip(eigvals[order], 0.0, None)
    components = eigvecs[:, order]
    for k in range(components.shape[1]):
        j = int(np.argmax(np.abs(components[:, k])))
        if components[j, k] < 0:
            components[:, k] = -components[:, k]
    return PcaModel(mean=mean, components=components, explained_variance=variance)


def pca_transform(model: PcaModel, features) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[1] != model.mean.shape[0]:
        raise DataError(
            f"features must be (B, {model.mean.shape[0]}), got {x.shape}"
        )
    return (x - model.mean) @ model.components


# ---------------------------------------------------------------------------
# feature rescaling
# ---------------------------------------------------------------------------


@dataclass
class FeatureScaler:
    """Per-column affine map onto [0, angle_max] learned from fit data.

    Constant columns map to angle_max / 2. Transform does not clip, so
    out-of-range inputs land slightly outside the target interval.
    """

    angle_max: float = math.pi
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    def fit(self, features) -> "FeatureScaler":
        x = np.asarray(features, dtype=float)
        if x.ndim != 2 or x.shape[0] == 0:
            raise DataError("scaler needs a non-empty 2-D feature matrix")
        self.lo = x.min(axis=0)
        self.hi = x.max(axis=0)
        return self

    def transform(self, features) -> np.ndarray:
        if self.lo is None:
            raise DataError("scaler is not fitted")
        x = np.asarray(features, dtype=float)
        span = self.hi - self.lo
        out = np.empty_like(x)
        flat = span == 0
        out[:, flat] = self.angle_max / 2.0
        good = ~flat
        out[:, good] = (x[:, good] - self.lo[good]) / span[good] * self.angle_max
        return out


# ---------------------------------------------------------------------------
# synthetic generator and splits
# ---------------------------------------------------------------------------


def synth_genomic(
    num_samples: int,
    length: int,
    motifs: tuple[str, str] = ("AAAAGGGGAAAA", "TTTTCCCCTTTT"),
    noise: float = 0.05,
    seed: int = 0,
) -> list[NucleotideSequence]:
    """Balanced two-class motif-planting generator.

    Class c sequences are uniform random backgrounds with motif c implanted
    at a random position, then every base is independently corrupted to a
    random nucleotide with probability ``noise``. Odd sample counts give
    class 0 the extra sequence.

    The default motifs differ in base composition, not just order. A
    random-position motif is only visible to the PCA-reduced one-hot
    features through the composition shift it causes, so composition-
    neutral motif pairs produce a task that is essentially unlearnable
    downstream; keep the motif a sizable fraction of the length.
    """
    if num_samples < 2:
        raise DataError("num_samples must be >= 2")
    if not 0.0 <= noise < 1.0:
        raise DataError(f"noise must be in [0, 1), got {noise}")
    if len(motifs) != 2 or motifs[0] == motifs[1]:
        raise DataError("need two distinct motifs")
    for m in motifs:
        if not m or len(m) >= length:
            raise DataError(f"motif {m!r} must be shorter than length {length}")
        for ch in m:
            if ch not in _NUC_INDEX:
                raise ParseError(f"invalid base {ch!r} in motif {m!r}")
    rng = np.random.default_rng(seed)
    counts = (num_samples + 1) // 2, num_samples // 2
    out = []
    for label in (0, 1):
        motif = motifs[label]
        for _ in range(counts[label]):
            codes = rng.integers(0, 4, length)
            pos = int(rng.integers(0, length - len(motif) + 1))
            codes[pos : pos + len(motif)] = [_NUC_INDEX[ch] for ch in motif]
            corrupt = rng.random(length) < noise
            codes[corrupt] = rng.integers(0, 4, int(corrupt.sum()))
            out.append(
                NucleotideSequence("".join(NUCLEOTIDES[c] for c in codes), label)
            )
    return out


def split_dataset(
    dataset: EncodedDataset, test_fraction: float, seed: int = 0
) -> tuple[EncodedDataset, EncodedDataset]:
    """Shuffled disjoint train/test split; sizes honor the fraction +-1."""
    if not 0.0 < test_fraction < 1.0:
        raise DataError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = len(dataset)
    if n < 2:
        raise DataError("need at least 2 samples to split")
    idx = np.random.default_rng(seed).permutation(n)
    n_test = max(1, round(n * test_fraction))
    n_test = min(n_test, n - 1)
    return dataset.subset(idx[n_test:]), dataset.subset(idx[:n_test])


# ---------------------------------------------------------------------------
# CSV input and output
# ---------------------------------------------------------------------------


def load_csv(path):
    """Load a dataset CSV.

    Two layouts, detected from the header line: ``seq,label`` yields a list
    of NucleotideSequence, ``f0,...,fk,label`` yields an EncodedDataset.
    Errors name the file line (header is line 1).
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header == ["seq", "label"]:
            return _load_sequence_rows(reader, path)
        if (
            len(header) >= 2
            and header[-1] == "label"
            and all(h == f"f{i}" for i, h in enumerate(header[:-1]))
        ):
            return _load_feature_rows(reader, path, len(header) - 1)
        raise ParseError(
            f"{path}: line 1: header must be 'seq,label' or 'f0,...,fk,label', "
            f"got {','.join(header)!r}"
        )


def _parse_label(raw: str, path, lineno: int) -> int:
    try:
        label = int(raw)
    except ValueError:
        raise ParseError(f"{path}: line {lineno}: bad label {raw!r}") from None
    if label not in (0, 1):
        raise ParseError(f"{path}: line {lineno}: label must be 0 or 1, got {label}")
    return label


def _load_sequence_rows(reader, path):
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 2:
            raise ParseError(f"{path}: line {lineno}: expected 2 fields, got {len(row)}")
        label = _parse_label(row[1].strip(), path, lineno)
        try:
            out.append(NucleotideSequence(row[0].strip(), label))
        except (ParseError, DataError) as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}") from exc
    if not out:
        raise ParseError(f"{path}: no data rows")
    if len({len(s) for s in out}) > 1:
        raise ParseError(f"{path}: sequences must share one length")
    return out


def _load_feature_rows(reader, path, width):
    features, labels = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != width + 1:
            raise ParseError(
                f"{path}: line {lineno}: expected {width + 1} fields, got {len(row)}"
            )
        vals = []
        for j, raw in enumerate(row[:-1]):
            try:
                v = float(raw)
            except ValueError:
                raise ParseError(
                    f"{path}: line {lineno}: bad value {raw!r} in column f{j}"
                ) from None
            if not math.isfinite(v):
                raise ParseError(
                    f"{path}: line {lineno}: non-finite value in column f{j}"
                )
            vals.append(v)
        labels.append(_parse_label(row[-1].strip(), path, lineno))
        features.append(vals)
    if not features:
        raise ParseError(f"{path}: no data rows")
    return EncodedDataset(np.array(features), np.array(labels))


def save_sequences_csv(path, seqs) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seq", "label"])
        for s in seqs:
            writer.writerow([s.bases, s.label])


def save_encoded_csv(path, dataset: EncodedDataset) -> None:
    """Floats are written with repr so a reload reproduces them bit-exactly."""
    width = dataset.features.shape[1]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(width)] + ["label"])
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])
