"""Diagonal-covariance Gaussian mixtures fit by EM, with AIC model selection.

Three guards keep the unbounded mixture likelihood from derailing model
selection at small sample sizes: a per-dimension variance floor scaled to
the data's global variance; a minimum effective cluster support; and an
assignment-ambiguity ceiling (a fit whose components leave many points
with near-even responsibilities is describing one smeared mode, not
distinct clusters). Fits violating the latter two are flagged and skipped
by the selector, though their AIC is still reported in the curve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

VARIANCE_FLOOR = 1e-6
FLOOR_FRACTION = 0.01
AMBIGUITY_MAX = 0.01


@dataclass
class GmmFit:
    n_components: int
    weights: np.ndarray     # [C]
    means: np.ndarray       # [C, d]
    variances: np.ndarray   # [C, d] diagonal
    log_likelihood: float
    ll_trace: list[float] = field(default_factory=list)
    min_support: float = 0.0   # smallest effective component count
    ambiguity: float = 0.0     # mean of (1 - max responsibility) over points

    def well_separated(self, min_support: float) -> bool:
        return (self.min_support >= min_support
                and self.ambiguity <= AMBIGUITY_MAX)

    @property
    def n_params(self) -> int:
        c, d = self.means.shape
        return (c - 1) + c * d + c * d

    @property
    def aic(self) -> float:
        return 2.0 * self.n_params - 2.0 * self.log_likelihood

    def to_dict(self) -> dict:
        return {
            "n_components": self.n_components,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "log_likelihood": self.log_likelihood,
            "n_params": self.n_params,
            "aic": self.aic,
            "min_support": self.min_support,
            "ambiguity": self.ambiguity,
        }


def min_cluster_support(n: int, d: int) -> float:
    """Effective points a component needs before the selector trusts it."""
    return max(2.0 * d, n / 8.0)


def _log_gauss(data: np.ndarray, means: np.ndarray,
               variances: np.ndarray) -> np.ndarray:
    """Log density of each point under each diagonal Gaussian; [n, C]."""
    diff = data[:, None, :] - means[None, :, :]
    return -0.5 * np.sum(
        diff ** 2 / variances[None] + np.log(2.0 * np.pi * variances[None]),
        axis=2)


def _kmeanspp_init(data: np.ndarray, c: int, rng: np.random.Generator) -> np.ndarray:
    n = data.shape[0]
    centers = [data[rng.integers(n)]]
    for _ in range(c - 1):
        d2 = np.min(
            [np.sum((data - m) ** 2, axis=1) for m in centers], axis=0)
        if d2.sum() <= 0:
            centers.append(data[rng.integers(n)])
            continue
        probs = d2 / d2.sum()
        centers.append(data[np.searchsorted(np.cumsum(probs), rng.random())])
    return np.array(centers)


def _em_once(data: np.ndarray, c: int, tol: float, max_iter: int,
             rng: np.random.Generator) -> GmmFit:
    n, d = data.shape
    means = _kmeanspp_init(data, c, rng)
    global_var = np.maximum(data.var(axis=0), VARIANCE_FLOOR)
    floor = np.maximum(VARIANCE_FLOOR, FLOOR_FRACTION * global_var)
    variances = np.tile(global_var, (c, 1))
    weights = np.full(c, 1.0 / c)
    ll_prev = -np.inf
    trace: list[float] = []
    for _ in range(max_iter):
        log_p = _log_gauss(data, means, variances) + np.log(weights)[None]
        log_norm = np.logaddexp.reduce(log_p, axis=1)
        ll = float(log_norm.sum())
        trace.append(ll)
        resp = np.exp(log_p - log_norm[:, None])
        nk = resp.sum(axis=0)
        for k in np.where(nk < 1e-10)[0]:
            # dead component: restart it on a random data point
            means[k] = data[rng.integers(n)]
            variances[k] = global_var
            resp[:, k] = 1.0 / n
            nk = resp.sum(axis=0)
        weights = nk / nk.sum()
        means = (resp.T @ data) / nk[:, None]
        diff2 = (data[:, None, :] - means[None]) ** 2
        variances = np.maximum(
            np.einsum("nk,nkd->kd", resp, diff2) / nk[:, None], floor)
        if ll - ll_prev < tol and np.isfinite(ll_prev):
            break
        ll_prev = ll
    log_p = _log_gauss(data, means, variances) + np.log(weights)[None]
    log_norm = np.logaddexp.reduce(log_p, axis=1)
    ll = float(log_norm.sum())
    trace.append(ll)
    resp = np.exp(log_p - log_norm[:, None])
    support = float(resp.sum(axis=0).min())
    ambiguity = float(np.mean(1.0 - resp.max(axis=1)))
    return GmmFit(c, weights, means, variances, ll, ll_trace=trace,
                  min_support=support, ambiguity=ambiguity)


def em_fit(data: np.ndarray, n_components: int, restarts: int = 5,
           tol: float = 1e-7, max_iter: int = 200,
           rng: np.random.Generator | None = None,
           min_support: float = 0.0) -> GmmFit:
    """Best-of-restarts EM fit with seeded k-means++ initializations.

    When min_support > 0, restarts failing the separation guards (support
    below min_support, or assignment ambiguity above AMBIGUITY_MAX) are
    deprioritized: the best well-separated fit wins, and a degenerate one
    is returned only if no restart qualifies.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    n, d = data.shape
    if n <= n_components:
        raise ValueError(f"need more points ({n}) than components ({n_components})")
    rng = rng or np.random.default_rng(0)
    best: GmmFit | None = None
    for _ in range(restarts):
        fit = _em_once(data, n_components, tol, max_iter, rng)
        if best is None:
            best = fit
            continue
        fit_ok = min_support <= 0 or fit.well_separated(min_support)
        best_ok = min_support <= 0 or best.well_separated(min_support)
        if (fit_ok, fit.log_likelihood) > (best_ok, best.log_likelihood):
            best = fit
    return best


def aic_score(fit: GmmFit) -> float:
    """Akaike information criterion, 2k - 2 log L."""
    return fit.aic


def select_num_clusters(values: np.ndarray, c_max: int,
                        restarts: int = 5,
                        rng: np.random.Generator | None = None
                        ) -> tuple[int, list[float]]:
    """Pick the component count minimizing AIC/N over level-row samples.

    values is the [N_levels, K_states] matrix; each level row is one sample.
    The argmin runs over counts whose best fit passes the separation
    guards (all counts if none do); ties resolve to the smallest count.
    Returns (best C, AIC/N curve).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    n, d = values.shape
    if c_max >= n:
        raise ValueError(f"c_max ({c_max}) must be < number of levels ({n})")
    if np.allclose(values, values.reshape(-1)[0], atol=0, rtol=0):
        raise ValueError("degenerate value matrix: all entries identical")
    rng = rng or np.random.default_rng(0)
    support = min_cluster_support(n, d)
    curve = []
    supported = []
    for c in range(1, c_max + 1):
        fit = em_fit(values, c, restarts=restarts, rng=rng,
                     min_support=support)
        curve.append(fit.aic / n)
        supported.append(fit.well_separated(support))
    candidates = [i for i, ok in enumerate(supported) if ok] \
        or list(range(len(curve)))
    best = min(candidates, key=lambda i: curve[i]) + 1
    return best, curve


def clustering_hypothesis_test(values: np.ndarray, state_idx: int,
                               c_max: int = 4, restarts: int = 5,
                               n_bins: int = 10,
                               rng: np.random.Generator | None = None) -> dict:
    """Single-probe-state multimodality check over per-level values.

    Fits 1-D mixtures to column state_idx of the value matrix and reports
    whether AIC prefers two or more clusters, plus histogram data.
    """
    values = np.asarray(values, dtype=np.float64)
    column = values[:, state_idx]
    best, curve = select_num_clusters(column, c_max, restarts=restarts,
                                      rng=rng)
    counts, edges = np.histogram(column, bins=n_bins)
    return {
        "state_idx": state_idx,
        "preferred_components": best,
        "multimodal": best >= 2,
        "aic_curve": [c * len(column) for c in curve],
        "histogram_counts": counts.tolist(),
        "histogram_edges": edges.tolist(),
    }
