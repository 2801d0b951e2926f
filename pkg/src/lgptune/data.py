"""Spectral dataset handling.

CSV layout: the header carries the wavenumber axis followed by the literal
columns `target` and `group`; each data row is one spectrum. All spectrum
treatments are strictly per row, so applying them before a train/test split
cannot leak statistics across the split. Augmentation multiplies a training
fold with perturbed copies and flags them, and the k-fold splitter deals
whole sample groups so replicate scans never straddle a fold boundary.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigError, ParseError

DEFAULT_AUGMENT_FACTOR = 50.0
DEFAULT_AUGMENT_MIX = (0.5, 0.25, 0.25)


@dataclass(frozen=True)
class SpectralDataset:
    """Instances (rows of X) with their axis, targets, group ids and an
    augmentation flag per row."""

    X: np.ndarray
    wavenumbers: np.ndarray
    Y: np.ndarray
    groups: tuple
    augmented_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        wn = np.asarray(self.wavenumbers, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        mask = self.augmented_mask
        mask = np.zeros(X.shape[0], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "wavenumbers", wn)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "groups", tuple(str(g) for g in self.groups))
        object.__setattr__(self, "augmented_mask", mask)
        if X.ndim != 2:
            raise ConfigError("X must be 2-d (instances x features)")
        n, d = X.shape
        if wn.shape != (d,):
            raise ConfigError("wavenumbers must match the feature count")
        if Y.shape != (n,) or len(self.groups) != n or mask.shape != (n,):
            raise ConfigError("Y, groups and augmented_mask must have one entry per row")
        diffs = np.diff(wn)
        if d > 1 and not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise ConfigError("wavenumbers must be strictly monotone")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, indices) -> "SpectralDataset":
        idx = np.asarray(indices, dtype=int)
        return SpectralDataset(
            self.X[idx],
            self.wavenumbers,
            self.Y[idx],
            tuple(self.groups[i] for i in idx),
            self.augmented_mask[idx],
        )

    def with_spectra(self, X, wavenumbers=None) -> "SpectralDataset":
        wn = self.wavenumbers if wavenumbers is None else wavenumbers
        return SpectralDataset(X, wn, self.Y, self.groups, self.augmented_mask)


# ---------------------------------------------------------------------------
# CSV in/out (row/column positions in errors are 1-based, header is row 1)


def load_csv(path) -> SpectralDataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise ParseError(f"{path}: file is empty")
    header = [c.strip() for c in rows[0]]
    if len(header) < 3 or header[-2] != "target" or header[-1] != "group":
        raise ParseError(
            f"{path}: row 1: header must end with 'target,group' "
            "after the wavenumber columns"
        )
    wn = []
    for c, cell in enumerate(header[:-2], start=1):
        try:
            wn.append(float(cell))
        except ValueError:
            raise ParseError(
                f"{path}: row 1, column {c}: wavenumber '{cell}' is not numeric"
            ) from None
    seen = {}
    for c, v in enumerate(wn, start=1):
        if v in seen:
            raise ParseError(
                f"{path}: row 1, column {c}: duplicate wavenumber {v!r} "
                f"(first at column {seen[v]})"
            )
        seen[v] = c
    d = len(wn)
    diffs = np.diff(wn)
    if d > 1 and not (np.all(diffs > 0) or np.all(diffs < 0)):
        raise ParseError(f"{path}: row 1: wavenumbers must be strictly monotone")
    if len(rows) < 2:
        raise ParseError(f"{path}: no data rows")
    X = np.empty((len(rows) - 1, d))
    Y = np.empty(len(rows) - 1)
    groups = []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != d + 2:
            raise ParseError(
                f"{path}: row {r}: expected {d + 2} cells, found {len(row)}"
            )
        for c, cell in enumerate(row[: d + 1], start=1):
            try:
                value = float(cell)
            except ValueError:
                raise ParseError(
                    f"{path}: row {r}, column {c}: '{cell.strip()}' is not numeric"
                ) from None
            if c <= d:
                X[r - 2, c - 1] = value
            else:
                Y[r - 2] = value
        groups.append(row[d + 1].strip())
    return SpectralDataset(X, np.asarray(wn), Y, tuple(groups))


def save_csv(dataset: SpectralDataset, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([repr(float(w)) for w in dataset.wavenumbers] + ["target", "group"])
        for i in range(dataset.n):
            writer.writerow(
                [repr(float(v)) for v in dataset.X[i]]
                + [repr(float(dataset.Y[i])), dataset.groups[i]]
            )


# ---------------------------------------------------------------------------
# per-row treatments


def snv(X) -> np.ndarray:
    """Standard normal variate: center and scale each row by its own mean
    and population standard deviation. Zero-spread rows become all zeros."""
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=1, keepdims=True)
    std = X.std(axis=1, keepdims=True)
    out = np.where(std > 0.0, (X - mean) / np.where(std > 0.0, std, 1.0), 0.0)
    return out


def linear_baseline(X, wavenumbers) -> np.ndarray:
    """Subtract, per row, the straight line through the first and last
    point of the spectrum; both endpoints map to exactly zero."""
    X = np.asarray(X, dtype=float)
    wn = np.asarray(wavenumbers, dtype=float)
    if X.shape[1] != wn.shape[0]:
        raise ConfigError("wavenumbers must match the feature count")
    if X.shape[1] < 2:
        return np.zeros_like(X)
    t = (wn - wn[0]) / (wn[-1] - wn[0])
    first = X[:, :1]
    last = X[:, -1:]
    return X - (first + (last - first) * t)


def first_derivative(X) -> np.ndarray:
    """Successive differences along the axis; output width shrinks by one."""
    X = np.asarray(X, dtype=float)
    if X.shape[1] < 2:
        raise ConfigError("first_derivative needs at least two features")
    return np.diff(X, axis=1)


def sliding_smooth(X, window: int) -> np.ndarray:
    """Centered moving average with a window that shrinks near the edges,
    preserving the feature count. The window must be odd."""
    if window < 1 or window % 2 == 0:
        raise ConfigError("smoothing window must be a positive odd number")
    X = np.asarray(X, dtype=float)
    d = X.shape[1]
    if window > d:
        raise ConfigError(f"smoothing window {window} exceeds the {d} features")
    half = window // 2
    csum = np.cumsum(X, axis=1)
    csum = np.hstack([np.zeros((X.shape[0], 1)), csum])
    idx = np.arange(d)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half, d - 1) + 1
    return (csum[:, hi] - csum[:, lo]) / (hi - lo)


TREATMENT_PRESETS = {
    "ingaas_snv": ("snv",),
    "ingaas_lb": ("linear_baseline",),
    "ft_snv": ("snv",),
    "ingaas_snv_d1_sw17": ("snv", "first_derivative", "smooth17"),
}


def apply_treatment(dataset: SpectralDataset, preset: str) -> SpectralDataset:
    """Apply a named per-row treatment pipeline to a dataset."""
    if preset not in TREATMENT_PRESETS:
        raise ConfigError(
            f"unknown treatment '{preset}' (choose from {sorted(TREATMENT_PRESETS)})"
        )
    out = dataset
    for step in TREATMENT_PRESETS[preset]:
        if step == "snv":
            out = out.with_spectra(snv(out.X))
        elif step == "linear_baseline":
            out = out.with_spectra(linear_baseline(out.X, out.wavenumbers))
        elif step == "first_derivative":
            # the derivative sits between sample points: keep midpoints as axis
            wn = out.wavenumbers
            out = SpectralDataset(
                first_derivative(out.X),
                (wn[1:] + wn[:-1]) / 2.0,
                out.Y,
                out.groups,
                out.augmented_mask,
            )
        elif step.startswith("smooth"):
            out = out.with_spectra(sliding_smooth(out.X, int(step[len("smooth") :])))
        else:  # pragma: no cover - presets are defined above
            raise ConfigError(f"unknown treatment step '{step}'")
    return out


# ---------------------------------------------------------------------------
# augmentation


def augment(
    dataset: SpectralDataset,
    factor: float = DEFAULT_AUGMENT_FACTOR,
    mix: tuple = DEFAULT_AUGMENT_MIX,
    rng: Optional[np.random.Generator] = None,
) -> SpectralDataset:
    """Grow a training fold to `factor` times its size with perturbed rows.

    The (factor - 1) * n new rows split into spectral perturbation / mixup /
    gaussian noise according to `mix` (within rounding). New rows are
    flagged in `augmented_mask` and inherit their source row's group.

    Spectral perturbation: multiplicative scale U(0.95, 1.05), additive
    offset and a linear tilt across the axis, both with amplitude
    U(-0.05, 0.05) times the row's own standard deviation. Mixup combines
    two rows (and their targets) with one uniform weight. Gaussian noise is
    per feature with sigma = 0.01 times that feature's standard deviation
    over the fold.
    """
    if dataset.augmented_mask.any():
        raise ConfigError("augment expects a fold of real rows only")
    if factor < 1.0:
        raise ConfigError("augment factor must be >= 1")
    if len(mix) != 3 or any(v < 0 for v in mix) or abs(sum(mix) - 1.0) > 1e-9:
        raise ConfigError("mix must be three non-negative shares summing to 1")
    rng = np.random.default_rng() if rng is None else rng
    n, d = dataset.X.shape
    n_new = int(round((factor - 1.0) * n))
    if n_new == 0:
        return dataset
    n_spec = int(round(n_new * mix[0]))
    n_mix = int(round(n_new * mix[1]))
    n_gauss = n_new - n_spec - n_mix
    if n_gauss < 0:
        n_mix += n_gauss
        n_gauss = 0

    X, Y = dataset.X, dataset.Y
    row_sigma = X.std(axis=1)
    feature_sigma = X.std(axis=0)
    ramp = np.linspace(-1.0, 1.0, d) if d > 1 else np.zeros(1)

    src = rng.integers(n, size=n_spec)
    scale = rng.uniform(0.95, 1.05, size=n_spec)[:, None]
    offset = (rng.uniform(-0.05, 0.05, size=n_spec) * row_sigma[src])[:, None]
    tilt = (rng.uniform(-0.05, 0.05, size=n_spec) * row_sigma[src])[:, None]
    spec_X = X[src] * scale + offset + tilt * ramp
    spec_Y = Y[src]
    spec_groups = [dataset.groups[i] for i in src]

    src_a = rng.integers(n, size=n_mix)
    src_b = rng.integers(n, size=n_mix)
    lam = rng.uniform(0.0, 1.0, size=n_mix)
    mix_X = lam[:, None] * X[src_a] + (1.0 - lam[:, None]) * X[src_b]
    mix_Y = lam * Y[src_a] + (1.0 - lam) * Y[src_b]
    mix_groups = [dataset.groups[i] for i in src_a]

    src_g = rng.integers(n, size=n_gauss)
    gauss_X = X[src_g] + rng.standard_normal((n_gauss, d)) * (0.01 * feature_sigma)
    gauss_Y = Y[src_g]
    gauss_groups = [dataset.groups[i] for i in src_g]

    new_X = np.vstack([X, spec_X, mix_X, gauss_X])
    new_Y = np.concatenate([Y, spec_Y, mix_Y, gauss_Y])
    new_groups = tuple(list(dataset.groups) + spec_groups + mix_groups + gauss_groups)
    new_mask = np.concatenate([dataset.augmented_mask, np.ones(n_new, dtype=bool)])
    return SpectralDataset(new_X, dataset.wavenumbers, new_Y, new_groups, new_mask)


# ---------------------------------------------------------------------------
# group-aware folds


def grouped_kfold(dataset: SpectralDataset, k: int = 6, rng: Optional[np.random.Generator] = None):
    """Split rows into k folds by sample group.

    Groups are shuffled and dealt round-robin, so fold sizes differ by at
    most one group and no group ever straddles a fold. Returns a list of
    (train_indices, test_indices) pairs covering every row exactly once on
    the test side.
    """
    if dataset.augmented_mask.any():
        raise ConfigError("split before augmenting: augmented rows cannot enter test folds")
    if k < 2:
        raise ConfigError("k must be >= 2")
    unique = list(dict.fromkeys(dataset.groups))
    if len(unique) < k:
        raise ConfigError(f"need at least {k} groups, found {len(unique)}")
    rng = np.random.default_rng() if rng is None else rng
    order = rng.permutation(len(unique))
    fold_of_group = {unique[g]: f % k for f, g in enumerate(order)}
    row_fold = np.array([fold_of_group[g] for g in dataset.groups])
    folds = []
    for f in range(k):
        test = np.flatnonzero(row_fold == f)
        train = np.flatnonzero(row_fold != f)
        folds.append((train, test))
    return folds
