"""Naive Bayes command classifier with semi-supervised EM training.

The latent command state ``C`` of one robot is inferred from three features
that are independent given ``C``:

* ``f_g``  gesture-device confidence in [0, 1], Beta(a_c, b_c)
* ``f_xy`` operator position relative to the robot, binned on a 4x4 grid,
  Categorical(alpha_c) over the 16 flattened bins
* ``f_o``  cosine between operator facing and the direction to the robot,
  Normal(mu_c, sigma_c)

``C`` itself is Bernoulli(theta). Fully observed samples (label known) and
partially observed samples (features only) are combined by EM. All weighted
estimators share one code path, ``fit_weighted``, which receives a per-sample,
per-class weight matrix.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np
from scipy.optimize import minimize
from scipy.special import betaln, digamma, logsumexp, polygamma

from .errors import InsufficientDataError, ParameterError

log = logging.getLogger(__name__)

FG_EPS = 1e-6
SIGMA_FLOOR = 1e-3
BETA_FLOOR = 1e-3
BETA_CEIL = 1e4
BETA_MAX_ITER = 200
LAPLACE = 1.0
UNLABELED = -1
LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class BetaFitWarning(RuntimeWarning):
    pass


# ---------------------------------------------------------------------------
# Data containers


@dataclass(frozen=True)
class FeatureObservation:
    f_g: float
    f_xy: tuple[float, float]
    f_o: float
    label: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.f_g <= 1.0:
            raise ParameterError(f"f_g must lie in [0, 1], got {self.f_g}")
        if not -1.0 <= self.f_o <= 1.0:
            raise ParameterError(f"f_o must lie in [-1, 1], got {self.f_o}")
        if self.label not in (None, 0, 1):
            raise ParameterError(f"label must be 0, 1 or None, got {self.label}")


@dataclass(frozen=True)
class FeatureSet:
    """Column-oriented batch of observations; ``label == -1`` marks unlabeled."""

    f_g: np.ndarray
    f_xy: np.ndarray
    f_o: np.ndarray
    label: np.ndarray = None

    def __post_init__(self):
        f_g = np.asarray(self.f_g, dtype=float).reshape(-1)
        f_xy = np.asarray(self.f_xy, dtype=float).reshape(-1, 2)
        f_o = np.asarray(self.f_o, dtype=float).reshape(-1)
        label = np.full(len(f_g), UNLABELED) if self.label is None else np.asarray(self.label, dtype=int).reshape(-1)
        if not len(f_g) == len(f_xy) == len(f_o) == len(label):
            raise ParameterError("feature columns have different lengths")
        if np.any((f_g < 0) | (f_g > 1)) or np.any((f_o < -1) | (f_o > 1)):
            raise ParameterError("f_g must lie in [0, 1] and f_o in [-1, 1]")
        if not np.isin(label, (UNLABELED, 0, 1)).all():
            raise ParameterError("labels must be 0, 1 or -1")
        for name, arr in (("f_g", f_g), ("f_xy", f_xy), ("f_o", f_o), ("label", label)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return len(self.f_g)

    @classmethod
    def empty(cls) -> "FeatureSet":
        return cls(np.zeros(0), np.zeros((0, 2)), np.zeros(0))

    @classmethod
    def from_observations(cls, obs: Iterable[FeatureObservation]) -> "FeatureSet":
        obs = list(obs)
        if not obs:
            return cls.empty()
        return cls(
            [o.f_g for o in obs],
            [o.f_xy for o in obs],
            [o.f_o for o in obs],
            [UNLABELED if o.label is None else o.label for o in obs],
        )

    def observations(self) -> list[FeatureObservation]:
        return [
            FeatureObservation(float(g), (float(xy[0]), float(xy[1])), float(o), None if c < 0 else int(c))
            for g, xy, o, c in zip(self.f_g, self.f_xy, self.f_o, self.label)
        ]

    def subset(self, idx) -> "FeatureSet":
        return FeatureSet(self.f_g[idx], self.f_xy[idx], self.f_o[idx], self.label[idx])

    def labeled(self) -> "FeatureSet":
        return self.subset(self.label != UNLABELED)

    def unlabeled(self) -> "FeatureSet":
        return self.subset(self.label == UNLABELED)

    def without_labels(self) -> "FeatureSet":
        return replace(self, label=None)

    @staticmethod
    def concat(*sets: "FeatureSet") -> "FeatureSet":
        return FeatureSet(
            np.concatenate([s.f_g for s in sets]),
            np.concatenate([s.f_xy for s in sets]),
            np.concatenate([s.f_o for s in sets]),
            np.concatenate([s.label for s in sets]),
        )


def as_feature_set(data) -> FeatureSet:
    if isinstance(data, FeatureSet):
        return data
    if isinstance(data, FeatureObservation):
        return FeatureSet.from_observations([data])
    return FeatureSet.from_observations(data)


@dataclass(frozen=True)
class GridSpec:
    """Bin edges for the position feature; positions outside clamp to edge bins."""

    x_edges: np.ndarray
    y_edges: np.ndarray

    def __post_init__(self):
        for name in ("x_edges", "y_edges"):
            e = np.asarray(getattr(self, name), dtype=float)
            if e.ndim != 1 or len(e) < 2 or np.any(np.diff(e) <= 0):
                raise ParameterError(f"{name} must be strictly increasing with at least 2 entries")
            e.setflags(write=False)
            object.__setattr__(self, name, e)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.x_edges) - 1, len(self.y_edges) - 1

    @property
    def n_bins(self) -> int:
        nx, ny = self.shape
        return nx * ny

    @classmethod
    def uniform(cls, x_range, y_range, shape=(4, 4)) -> "GridSpec":
        return cls(np.linspace(*x_range, shape[0] + 1), np.linspace(*y_range, shape[1] + 1))

    @classmethod
    def from_data(cls, xy, shape=(4, 4)) -> "GridSpec":
        """Uniform grid over the bounding box of ``xy``."""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        if len(xy) == 0:
            raise InsufficientDataError("cannot derive a grid from zero positions")
        lo, hi = xy.min(axis=0), xy.max(axis=0)
        pad = np.where(hi - lo > 1e-9, 0.0, 0.5)
        return cls.uniform((lo[0] - pad[0], hi[0] + pad[0]), (lo[1] - pad[1], hi[1] + pad[1]), shape)

    def bin_index(self, xy) -> np.ndarray:
        """Flattened (row-major over x bin, y bin) bin index of each position."""
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        nx, ny = self.shape
        ix = np.clip(np.searchsorted(self.x_edges, xy[:, 0], side="right") - 1, 0, nx - 1)
        iy = np.clip(np.searchsorted(self.y_edges, xy[:, 1], side="right") - 1, 0, ny - 1)
        return ix * ny + iy

    def bin_bounds(self, k) -> tuple[np.ndarray, np.ndarray]:
        nx, ny = self.shape
        k = np.asarray(k)
        ix, iy = k // ny, k % ny
        lo = np.stack([self.x_edges[ix], self.y_edges[iy]], axis=-1)
        hi = np.stack([self.x_edges[ix + 1], self.y_edges[iy + 1]], axis=-1)
        return lo, hi


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the two-class model; index 0/1 of each array is the class."""

    theta: float
    a: np.ndarray
    b: np.ndarray
    alpha: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    grid: GridSpec = field(default_factory=lambda: GridSpec.uniform((0.0, 1.0), (0.0, 1.0)))

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).reshape(2)
        b = np.asarray(self.b, dtype=float).reshape(2)
        alpha = np.asarray(self.alpha, dtype=float).reshape(2, -1)
        mu = np.asarray(self.mu, dtype=float).reshape(2)
        sigma = np.asarray(self.sigma, dtype=float).reshape(2)
        if not 0.0 < self.theta < 1.0:
            raise ParameterError(f"theta must lie in (0, 1), got {self.theta}")
        if np.any(a <= 0) or np.any(b <= 0) or np.any(sigma <= 0):
            raise ParameterError("Beta parameters and sigma must be positive")
        if alpha.shape[1] != self.grid.n_bins:
            raise ParameterError(f"alpha has {alpha.shape[1]} bins, grid has {self.grid.n_bins}")
        if np.any(alpha < 0) or np.abs(alpha.sum(axis=1) - 1.0).max() > 1e-9:
            raise ParameterError("each alpha row must be a probability vector")
        for name, arr in (("a", a), ("b", b), ("alpha", alpha), ("mu", mu), ("sigma", sigma)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "theta", float(self.theta))

    def swap_classes(self) -> "ModelParams":
        return ModelParams(
            1.0 - self.theta, self.a[::-1], self.b[::-1], self.alpha[::-1], self.mu[::-1], self.sigma[::-1], self.grid
        )

    def as_dict(self) -> dict:
        return {
            "theta": self.theta,
            "a": self.a.tolist(),
            "b": self.b.tolist(),
            "alpha": self.alpha.tolist(),
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
        }

    def vector(self) -> np.ndarray:
        """All parameters flattened, for comparisons."""
        return np.concatenate([[self.theta], self.a, self.b, self.alpha.ravel(), self.mu, self.sigma])


# ---------------------------------------------------------------------------
# Densities and posterior


def _clamp_fg(f_g: np.ndarray) -> np.ndarray:
    clamped = np.clip(f_g, FG_EPS, 1.0 - FG_EPS)
    if log.isEnabledFor(logging.DEBUG) and np.any(clamped != f_g):
        log.debug("clamped %d gesture confidences into [%g, %g]", np.sum(clamped != f_g), FG_EPS, 1 - FG_EPS)
    return clamped


def beta_logpdf(x, a, b):
    x = _clamp_fg(np.asarray(x, dtype=float))
    return (a - 1.0) * np.log(x) + (b - 1.0) * np.log1p(-x) - betaln(a, b)


def normal_logpdf(x, mu, sigma):
    z = (np.asarray(x, dtype=float) - mu) / sigma
    return -0.5 * z * z - np.log(sigma) - LOG_SQRT_2PI


def class_log_likelihoods(params: ModelParams, data) -> np.ndarray:
    """log p(F | C=c) for both classes; shape (n, 2)."""
    data = as_feature_set(data)
    bins = params.grid.bin_index(data.f_xy)
    out = np.empty((len(data), 2))
    with np.errstate(divide="ignore"):
        log_alpha = np.log(params.alpha)
    for c in (0, 1):
        out[:, c] = (
            beta_logpdf(data.f_g, params.a[c], params.b[c])
            + log_alpha[c, bins]
            + normal_logpdf(data.f_o, params.mu[c], params.sigma[c])
        )
    return out


def log_likelihood_features(params: ModelParams, f, c: int):
    """log p(F | C=c); a float for a single observation, else an array."""
    ll = class_log_likelihoods(params, f)[:, c]
    return float(ll[0]) if isinstance(f, FeatureObservation) else ll


def class_log_joint(params: ModelParams, data) -> np.ndarray:
    """log p(C=c, F); shape (n, 2)."""
    prior = np.array([np.log1p(-params.theta), np.log(params.theta)])
    return class_log_likelihoods(params, data) + prior


def class_posteriors(params: ModelParams, data) -> np.ndarray:
    """p(C=c | F) for both classes, normalized jointly; shape (n, 2)."""
    lj = class_log_joint(params, data)
    return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))


def posterior(params: ModelParams, f):
    """p(C=1 | F); a float for a single observation, else an array."""
    p = class_posteriors(params, f)[:, 1]
    return float(p[0]) if isinstance(f, FeatureObservation) else p


def e_step(params: ModelParams, unlabeled) -> np.ndarray:
    """Responsibilities q_j = p(C=1 | F_j) of the partially observed samples."""
    data = as_feature_set(unlabeled)
    if len(data) == 0:
        return np.zeros(0)
    return class_posteriors(params, data)[:, 1]


# ---------------------------------------------------------------------------
# Weighted estimators


def beta_moments(x, w) -> tuple[float, float]:
    """Weighted method-of-moments estimate of Beta(a, b)."""
    x = _clamp_fg(np.asarray(x, dtype=float))
    w = np.asarray(w, dtype=float)
    W = w.sum()
    m = np.dot(w, x) / W
    v = np.dot(w, (x - m) ** 2) / W
    if v <= 0 or v >= m * (1.0 - m):
        return 1.0, 1.0
    common = m * (1.0 - m) / v - 1.0
    return max(m * common, BETA_FLOOR), max((1.0 - m) * common, BETA_FLOOR)


def beta_loglik(a, b, s1, s2, W):
    """Weighted Beta log-likelihood from sufficient statistics.

    s1 = sum w log x, s2 = sum w log(1 - x), W = sum w.
    """
    return (a - 1.0) * s1 + (b - 1.0) * s2 - W * betaln(a, b)


def beta_loglik_grad(a, b, s1, s2, W) -> np.ndarray:
    dab = digamma(a + b)
    return np.array([s1 - W * (digamma(a) - dab), s2 - W * (digamma(b) - dab)])


def _beta_loglik_hess(a, b, W) -> np.ndarray:
    t = polygamma(1, a + b)
    return -W * np.array([[polygamma(1, a) - t, -t], [-t, polygamma(1, b) - t]])


@dataclass(frozen=True)
class BetaFit:
    a: float
    b: float
    converged: bool
    n_iter: int


def beta_mle(x, w, max_iter: int = BETA_MAX_ITER) -> BetaFit:
    """Weighted Beta maximum likelihood on the box [BETA_FLOOR, BETA_CEIL]^2.

    L-BFGS-B on (log a, log b) with analytic gradients, started from the
    method of moments, followed by safeguarded Newton steps in (a, b) so an
    interior optimum is resolved to machine precision. The log-likelihood is
    concave in (a, b), so the constrained stationary point is the global
    maximum. The box keeps the estimate finite when the weight collapses onto
    a single value, where the unconstrained maximum does not exist.
    """
    x = _clamp_fg(np.asarray(x, dtype=float))
    w = np.asarray(w, dtype=float)
    W = w.sum()
    if W <= 0:
        raise InsufficientDataError("Beta fit needs positive total weight")
    s1 = np.dot(w, np.log(x)) / W
    s2 = np.dot(w, np.log1p(-x)) / W
    lo, hi = BETA_FLOOR, BETA_CEIL

    def negll(z):
        a, b = np.exp(z)
        return -beta_loglik(a, b, s1, s2, 1.0), -beta_loglik_grad(a, b, s1, s2, 1.0) * np.exp(z)

    z0 = np.log(np.clip(beta_moments(x, w), lo, hi))
    bounds = [(np.log(lo), np.log(hi))] * 2
    res = minimize(negll, z0, jac=True, method="L-BFGS-B", bounds=bounds, options={"maxiter": max_iter, "gtol": 1e-12, "ftol": 1e-15})
    a, b = np.clip(np.exp(res.x), lo, hi)
    n_iter = int(res.nit)

    def projected_grad(a, b):
        g = beta_loglik_grad(a, b, s1, s2, 1.0)
        # ascent directions blocked by an active bound do not count
        g[(np.array([a, b]) <= lo) & (g < 0)] = 0.0
        g[(np.array([a, b]) >= hi) & (g > 0)] = 0.0
        return g

    # Newton polish in (a, b), kept inside the box
    for _ in range(20):
        g = beta_loglik_grad(a, b, s1, s2, 1.0)
        if np.abs(projected_grad(a, b)).max() < 1e-13:
            break
        ab = np.array([a, b])
        free = ~(((ab <= lo) & (g < 0)) | ((ab >= hi) & (g > 0)))
        step = np.zeros(2)
        try:
            Hf = _beta_loglik_hess(a, b, 1.0)[np.ix_(free, free)]
            step[free] = -np.linalg.solve(Hf, g[free])
        except np.linalg.LinAlgError:
            break
        t = 1.0
        f0 = beta_loglik(a, b, s1, s2, 1.0)
        g0 = np.abs(g).max()
        while t > 1e-8:
            na, nb = np.clip([a + t * step[0], b + t * step[1]], lo, hi)
            # near the optimum f is flat to rounding; a smaller gradient still counts
            if beta_loglik(na, nb, s1, s2, 1.0) > f0 or np.abs(projected_grad(na, nb)).max() < g0:
                a, b = na, nb
                break
            t *= 0.5
        else:
            break
        n_iter += 1
    gnorm = np.abs(projected_grad(a, b)).max()
    converged = bool(gnorm < 1e-6)
    if not converged:
        warnings.warn(f"Beta MLE did not converge (|grad| = {gnorm:.2e})", BetaFitWarning, stacklevel=2)
    return BetaFit(float(a), float(b), converged, n_iter)


def fit_weighted(data: FeatureSet, W: np.ndarray, grid: GridSpec, beta_fit: str = "mle", smoothing: float = LAPLACE):
    """Closed-form / quasi-Newton parameter estimates from class weights.

    ``W`` has shape (n, 2): the weight sample i contributes to class c.
    Returns (ModelParams, converged flag).
    """
    W = np.asarray(W, dtype=float)
    totals = W.sum(axis=0)
    if np.any(totals <= 1e-12):
        raise InsufficientDataError("each class needs positive effective weight")
    theta = totals[1] / totals.sum()
    bins = grid.bin_index(data.f_xy)
    K = grid.n_bins
    alpha = np.empty((2, K))
    mu = np.empty(2)
    sigma = np.empty(2)
    a = np.empty(2)
    b = np.empty(2)
    converged = True
    for c in (0, 1):
        w = W[:, c]
        counts = np.bincount(bins, weights=w, minlength=K)
        alpha[c] = (counts + smoothing) / (totals[c] + smoothing * K)
        mu[c] = np.dot(w, data.f_o) / totals[c]
        sigma[c] = max(np.sqrt(np.dot(w, (data.f_o - mu[c]) ** 2) / totals[c]), SIGMA_FLOOR)
        if beta_fit == "mle":
            fit = beta_mle(data.f_g, w)
            a[c], b[c] = fit.a, fit.b
            converged &= fit.converged
        elif beta_fit == "moments":
            a[c], b[c] = beta_moments(data.f_g, w)
        else:
            raise ParameterError(f"unknown Beta estimator {beta_fit!r}")
    return ModelParams(theta, a, b, alpha, mu, sigma, grid), converged


def _labeled_weights(labeled: FeatureSet, gain: float) -> np.ndarray:
    if np.any(labeled.label == UNLABELED):
        raise ParameterError("fully observed samples must all carry labels")
    W = np.zeros((len(labeled), 2))
    W[np.arange(len(labeled)), labeled.label] = np.where(labeled.label == 1, gain, 1.0)
    return W


def default_grid(*sets: FeatureSet, shape=(4, 4)) -> GridSpec:
    xy = np.concatenate([s.f_xy for s in sets if len(s)])
    return GridSpec.from_data(xy, shape)


def fit_supervised(
    data, gain: float = 10.0, grid: GridSpec | None = None, beta_fit: str = "moments", smoothing: float = LAPLACE
) -> ModelParams:
    """Fit from fully observed samples; class-1 samples carry weight ``gain``."""
    data = as_feature_set(data)
    if len(data) == 0 or not {0, 1} <= set(np.unique(data.label)):
        raise InsufficientDataError("supervised fit needs at least one sample of each class")
    grid = grid or default_grid(data)
    params, _ = fit_weighted(data, _labeled_weights(data, gain), grid, beta_fit, smoothing)
    return params


def _term_scales(n: int, m: int, balance: bool) -> tuple[float, float]:
    """Per-sample scale of the fully / partially observed terms.

    Balancing gives both terms the same total influence, (n + m) / 2 effective
    samples each, which is 1/n and 1/m up to a common factor.
    """
    if not balance or n == 0 or m == 0:
        return 1.0, 1.0
    half = 0.5 * (n + m)
    return half / n, half / m


def _em_weights(labeled: FeatureSet, unlabeled: FeatureSet, q, balance: bool, gain: float):
    n, m = len(labeled), len(unlabeled)
    s_fo, s_po = _term_scales(n, m, balance)
    q = np.asarray(q, dtype=float).reshape(-1)
    if len(q) != m or np.any((q < 0) | (q > 1)):
        raise ParameterError("responsibilities must be one value in [0, 1] per unlabeled sample")
    W_fo = _labeled_weights(labeled, gain) * s_fo
    W_po = np.stack([1.0 - q, q], axis=1) * s_po
    return W_fo, W_po


def m_step(
    labeled,
    unlabeled,
    q,
    balance: bool = False,
    gain: float = 1.0,
    grid: GridSpec | None = None,
    beta_fit: str = "mle",
    smoothing: float = LAPLACE,
    return_flag: bool = False,
):
    """Maximize the EM lower bound over the parameters for fixed responsibilities."""
    labeled = as_feature_set(labeled)
    unlabeled = as_feature_set(unlabeled).without_labels()
    W_fo, W_po = _em_weights(labeled, unlabeled, q, balance, gain)
    grid = grid or default_grid(labeled, unlabeled)
    data = FeatureSet.concat(labeled.without_labels(), unlabeled)
    params, converged = fit_weighted(data, np.vstack([W_fo, W_po]), grid, beta_fit, smoothing)
    return (params, converged) if return_flag else params


def objective(
    params: ModelParams,
    q,
    labeled,
    unlabeled,
    balance: bool = False,
    gain: float = 1.0,
    smoothing: float = LAPLACE,
) -> float:
    """EM lower bound: labeled log-likelihood + expected unlabeled complete-data
    log-likelihood + entropy of q, plus the Laplace log-prior on the bin
    probabilities that the categorical estimate maximizes (``smoothing``).
    """
    labeled = as_feature_set(labeled)
    unlabeled = as_feature_set(unlabeled)
    W_fo, _ = _em_weights(labeled, unlabeled, q, balance, gain)
    _, s_po = _term_scales(len(labeled), len(unlabeled), balance)
    total = 0.0
    if len(labeled):
        lj = class_log_joint(params, labeled)
        total += float(np.sum(W_fo * np.where(W_fo > 0, lj, 0.0)))
    if len(unlabeled):
        q = np.asarray(q, dtype=float)
        qq = np.stack([1.0 - q, q], axis=1)
        lj = class_log_joint(params, unlabeled)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(qq > 0, qq * (lj - np.log(qq)), 0.0)
        total += s_po * float(np.sum(terms))
    if smoothing:
        with np.errstate(divide="ignore"):
            total += smoothing * float(np.sum(np.log(params.alpha)))
    return total


def fit_semisupervised(
    labeled,
    unlabeled,
    init: ModelParams | str = "from-supervised",
    tol: float = 1e-7,
    max_iter: int = 500,
    balance: bool = True,
    gain: float = 10.0,
    grid: GridSpec | None = None,
    smoothing: float = LAPLACE,
):
    """Semi-supervised EM. Returns (params, objective trace).

    The trace holds L(q_t, params_t) after each M-step and is nondecreasing.
    """
    labeled = as_feature_set(labeled)
    unlabeled = as_feature_set(unlabeled).without_labels()
    if isinstance(init, str):
        if init != "from-supervised":
            raise ParameterError(f"unknown init {init!r}")
        if len(labeled) == 0 or not {0, 1} <= set(np.unique(labeled.label)):
            raise InsufficientDataError("EM initialization needs labeled samples of both classes or explicit params")
        grid = grid or default_grid(labeled, unlabeled)
        params = fit_supervised(labeled, gain=gain, grid=grid, smoothing=smoothing)
    else:
        params = init
        grid = grid or init.grid

    trace = []
    converged = False
    for it in range(max_iter):
        q = e_step(params, unlabeled)
        params, beta_ok = m_step(
            labeled, unlabeled, q, balance, gain, grid, smoothing=smoothing, return_flag=True
        )
        trace.append(objective(params, q, labeled, unlabeled, balance, gain, smoothing))
        if not beta_ok:
            log.warning("Beta M-step did not converge at EM iteration %d", it + 1)
        if len(unlabeled) == 0 or len(trace) > 1 and abs(trace[-1] - trace[-2]) < tol:
            converged = True
            break
    if not converged:
        log.warning("EM stopped after %d iterations without reaching tol=%g", max_iter, tol)
    return params, np.array(trace)


# ---------------------------------------------------------------------------
# Sampling


def sample_features(params: ModelParams, n: int, rng: np.random.Generator, classes=None, truncate_fo: bool = False):
    """Draw ``n`` labeled observations from the generative model.

    ``classes`` fixes the latent states instead of drawing them from theta.
    Positions are uniform inside the drawn bin. With ``truncate_fo`` the
    orientation feature is redrawn until it falls into [-1, 1]; otherwise the
    raw normal draw is clipped into range.
    """
    if classes is None:
        classes = (rng.random(n) < params.theta).astype(int)
    classes = np.asarray(classes, dtype=int)
    n = len(classes)
    f_g = np.empty(n)
    f_o = np.empty(n)
    bins = np.empty(n, dtype=int)
    for c in (0, 1):
        idx = np.flatnonzero(classes == c)
        k = len(idx)
        f_g[idx] = rng.beta(params.a[c], params.b[c], size=k)
        bins[idx] = rng.choice(params.grid.n_bins, size=k, p=params.alpha[c])
        f_o[idx] = _draw_fo(params.mu[c], params.sigma[c], k, rng, truncate_fo)
    lo, hi = params.grid.bin_bounds(bins)
    f_xy = lo + rng.random((n, 2)) * (hi - lo)
    return FeatureSet(f_g, f_xy, f_o, classes)


def _draw_fo(mu, sigma, k, rng, truncate):
    out = rng.normal(mu, sigma, size=k)
    if not truncate:
        return np.clip(out, -1.0, 1.0)
    bad = np.flatnonzero((out < -1) | (out > 1))
    while len(bad):
        out[bad] = rng.normal(mu, sigma, size=len(bad))
        bad = bad[(out[bad] < -1) | (out[bad] > 1)]
    return out


def log_marginal(params: ModelParams, data) -> np.ndarray:
    """log p(F) per sample."""
    return logsumexp(class_log_joint(params, data), axis=1)


__all__ = [
    "FeatureObservation",
    "FeatureSet",
    "GridSpec",
    "ModelParams",
    "beta_logpdf",
    "beta_mle",
    "beta_moments",
    "class_log_likelihoods",
    "class_posteriors",
    "e_step",
    "fit_semisupervised",
    "fit_supervised",
    "fit_weighted",
    "log_likelihood_features",
    "m_step",
    "objective",
    "posterior",
    "sample_features",
]
