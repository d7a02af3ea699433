"""Train-split conditioning: outlier screening, z-score normalization,
class-balancing sample weights, PCA, safe-level SMOTE, and k-means with
silhouette scoring.

All statistics here are fit on the training split only; the fitted objects
are then applied unchanged to validation/test trials. Trials are flattened
channel-major (channel varies slowest) wherever a C*T vector is needed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import ErpEpoch, SubjectSet

SIGMA_EPS = 1e-8


def flatten_epochs(epochs) -> np.ndarray:
    """(n, C*T) float64 matrix, channel-major within each row."""
    return np.stack([np.asarray(e.signal, dtype=np.float64).reshape(-1)
                     for e in epochs])


# -- outlier detection ----------------------------------------------------------

@dataclass(frozen=True)
class OutlierPolicy:
    """aggressive: flag a trial if ANY feature deviates more than k_sigma
    label-conditional standard deviations; mild: only if more than half do."""

    mode: str = "aggressive"
    k_sigma: float = 3.0
    per_label_stats: bool = True

    def __post_init__(self):
        if self.mode not in ("aggressive", "mild"):
            raise ValueError(f"unknown outlier mode {self.mode!r}")
        if self.k_sigma <= 0:
            raise ValueError("k_sigma must be positive")


def detect_outliers(train_epochs, policy: OutlierPolicy = OutlierPolicy()):
    """Indices (into train_epochs) of trials to remove."""
    epochs = list(train_epochs)
    if not epochs:
        raise ValueError("empty training split")
    x = flatten_epochs(epochs)
    labels = np.array([e.label for e in epochs])
    flagged = np.zeros(len(epochs), dtype=bool)
    groups = [(labels == v) for v in (0, 1)] if policy.per_label_stats \
        else [np.ones(len(epochs), dtype=bool)]
    for sel in groups:
        if not sel.any():
            continue
        if sel.sum() < 2:
            raise ValueError("need at least 2 trials per label group")
        mu = x[sel].mean(axis=0)
        sigma = x[sel].std(axis=0)
        exceed = np.abs(x[sel] - mu) > policy.k_sigma * sigma
        if policy.mode == "aggressive":
            flagged[sel] |= exceed.any(axis=1)
        else:
            flagged[sel] |= exceed.mean(axis=1) > 0.5
    return sorted(np.nonzero(flagged)[0].tolist())


def drop_outliers(train_epochs, policy: OutlierPolicy = OutlierPolicy()):
    removal = set(detect_outliers(train_epochs, policy))
    kept = [e for i, e in enumerate(train_epochs) if i not in removal]
    return kept, len(removal)


# -- normalization ---------------------------------------------------------------

@dataclass
class Normalizer:
    """Per-feature z-score with statistics from the train split only."""

    mu: np.ndarray
    sigma: np.ndarray
    epsilon: float = SIGMA_EPS

    def transform(self, x: np.ndarray) -> np.ndarray:
        """x: (n, C*T) or (n, C, T); returns the same layout, float64."""
        x = np.asarray(x, dtype=np.float64)
        flat = x.reshape(x.shape[0], -1)
        out = (flat - self.mu) / np.maximum(self.sigma, self.epsilon)
        return out.reshape(x.shape)

    def transform_epochs(self, epochs) -> np.ndarray:
        """(n, C, T) float64 normalized stack."""
        shape = epochs[0].signal.shape
        return self.transform(
            np.stack([np.asarray(e.signal, dtype=np.float64) for e in epochs])
        ).reshape(len(epochs), *shape)


def fit_normalizer(train_epochs) -> Normalizer:
    epochs = list(train_epochs)
    if not epochs:
        raise ValueError("cannot fit a normalizer on zero trials")
    x = flatten_epochs(epochs)
    return Normalizer(mu=x.mean(axis=0), sigma=x.std(axis=0))


# -- oversampling ----------------------------------------------------------------

def oversample_weights(labels) -> np.ndarray:
    """Per-trial draw weights inversely proportional to class frequency.

    Weighted draws with replacement then yield a 1:1 expected class ratio.
    Raises on single-class splits (the calibration path handles single-label
    subjects; this entry point must not).
    """
    labels = np.asarray(labels, dtype=int)
    counts = np.bincount(labels, minlength=2)
    if counts[0] == 0 or counts[1] == 0:
        raise ValueError(
            "both classes must be present for oversampling; single-label "
            "subjects are handled by calibration-set construction instead")
    w = 1.0 / counts[labels]
    return w / w.sum()


# -- PCA -------------------------------------------------------------------------

@dataclass
class PcaBasis:
    mean: np.ndarray          # (d,)
    components: np.ndarray    # (k, d), orthonormal rows
    eigenvalues: np.ndarray   # (k,), non-increasing


def pca_fit(x: np.ndarray, k: int) -> PcaBasis:
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if not 1 <= k <= min(n, d):
        raise ValueError(f"k={k} out of range for {n}x{d} data")
    mean = x.mean(axis=0)
    xc = x - mean
    # economic SVD; deterministic sign: largest-|entry| coordinate positive
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    comps = vt[:k]
    for row in comps:
        j = np.argmax(np.abs(row))
        if row[j] < 0:
            row *= -1.0
    eig = (s[:k] ** 2) / max(n - 1, 1)
    return PcaBasis(mean=mean, components=comps, eigenvalues=eig)


def pca_project(basis: PcaBasis, rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    return (rows - basis.mean) @ basis.components.T


def pca_reconstruct(basis: PcaBasis, projected: np.ndarray) -> np.ndarray:
    return np.asarray(projected, dtype=np.float64) @ basis.components + basis.mean


# -- safe-level SMOTE ------------------------------------------------------------

def safe_level_smote(minority: np.ndarray, majority: np.ndarray,
                     k_neighbors: int = 5, target_count: int | None = None,
                     seed: int = 0) -> np.ndarray:
    """Synthesize minority rows on segments between minority neighbors.

    Each synthetic point is seed + gap * (neighbor - seed) with gap in [0, 1]
    biased by the safe-level ratio (count of minority points among a sample's
    k nearest neighbors in the combined data). Seeds whose neighborhood and
    whose partner's neighborhood are both minority-free are skipped.

    target_count is the desired total minority size after synthesis
    (defaults to the majority size); returns the synthetic rows only.
    """
    minority = np.asarray(minority, dtype=np.float64)
    majority = np.asarray(majority, dtype=np.float64)
    n_min, n_maj = len(minority), len(majority)
    if n_min < 2:
        raise ValueError("need at least 2 minority rows")
    if k_neighbors >= n_min + n_maj:
        raise ValueError(f"k_neighbors={k_neighbors} >= population {n_min + n_maj}")
    if target_count is None:
        target_count = n_maj
    n_new = max(0, target_count - n_min)
    if n_new == 0:
        return np.zeros((0, minority.shape[1]))

    combined = np.vstack([minority, majority])
    is_min = np.zeros(len(combined), dtype=bool)
    is_min[:n_min] = True

    # safe level of each point: minority count among its k nearest neighbors
    d2 = ((combined[:, None, :] - combined[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")
    safe = is_min[order[:, :k_neighbors]].sum(axis=1)

    # candidate partners: each minority point's nearest minority neighbors
    dmin = ((minority[:, None, :] - minority[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(dmin, np.inf)
    min_order = np.argsort(dmin, axis=1, kind="stable")
    n_part = min(k_neighbors, n_min - 1)

    rng = np.random.default_rng(seed)
    out = []
    attempts = 0
    while len(out) < n_new and attempts < 20 * n_new:
        attempts += 1
        p = int(rng.integers(n_min))
        q = int(min_order[p, int(rng.integers(n_part))])
        sl_p, sl_q = int(safe[p]), int(safe[q])
        if sl_p == 0 and sl_q == 0:
            continue  # neither endpoint is safe: skip this seed
        if sl_q == 0:
            gap = 0.0                       # stay at the safe seed
        elif sl_p == 0:
            gap = 1.0                       # move fully to the safe partner
        else:
            ratio = sl_p / sl_q
            if ratio >= 1.0:
                gap = rng.random() / ratio  # [0, 1/ratio]: stay near the seed
            else:
                gap = 1.0 - rng.random() * ratio  # lean toward the partner
        out.append(minority[p] + gap * (minority[q] - minority[p]))
    return np.array(out) if out else np.zeros((0, minority.shape[1]))


# -- k-means / silhouette --------------------------------------------------------

def kmeans(rows: np.ndarray, k: int, seed: int = 0, max_iter: int = 300):
    """Lloyd's algorithm with k-means++ seeding.

    Ties in nearest-centroid go to the lowest centroid index; an emptied
    cluster is re-seeded with the point farthest from its centroid.
    Returns (centroids (k, d), assignments (n,)).
    """
    rows = np.asarray(rows, dtype=np.float64)
    n = len(rows)
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for {n} rows")
    rng = np.random.default_rng(seed)

    centroids = np.empty((k, rows.shape[1]))
    centroids[0] = rows[int(rng.integers(n))]
    for j in range(1, k):
        d2 = np.min(((rows[:, None, :] - centroids[None, :j, :]) ** 2
                     ).sum(axis=2), axis=1)
        total = d2.sum()
        if total == 0:
            centroids[j] = rows[int(rng.integers(n))]
            continue
        centroids[j] = rows[int(rng.choice(n, p=d2 / total))]

    assign = np.full(n, -1)
    for _ in range(max_iter):
        d2 = ((rows[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(d2, axis=1)  # argmin takes the lowest index on ties
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            sel = assign == j
            if sel.any():
                centroids[j] = rows[sel].mean(axis=0)
            else:
                worst = int(np.argmax(d2[np.arange(n), assign]))
                centroids[j] = rows[worst]
    return centroids, assign


def silhouette(rows: np.ndarray, assignments) -> float:
    """Mean over points of (b - a) / max(a, b); singleton clusters score 0."""
    rows = np.asarray(rows, dtype=np.float64)
    assignments = np.asarray(assignments, dtype=int)
    labels = np.unique(assignments)
    if len(labels) < 2:
        raise ValueError("silhouette needs at least 2 clusters")
    d = np.sqrt(((rows[:, None, :] - rows[None, :, :]) ** 2).sum(axis=2))
    scores = np.zeros(len(rows))
    for i in range(len(rows)):
        own = assignments == assignments[i]
        n_own = own.sum()
        if n_own == 1:
            scores[i] = 0.0
            continue
        a = d[i, own].sum() / (n_own - 1)
        b = min(d[i, assignments == lab].mean()
                for lab in labels if lab != assignments[i])
        scores[i] = (b - a) / max(a, b)
    return float(scores.mean())
