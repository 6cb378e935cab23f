"""Local GP regression, EM-weighted fusion of neighbor GPs and exploration grids."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.spatial import cKDTree

from .grid import GridGeometry

DUPLICATE_JITTER = 1e-6
MAX_RIDGE = 1e-4
TRAINING_CAP = 400


class SingularGram(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class Kernel:
    """Squared-exponential covariance."""

    lengthscale: float = 1.0
    signal_var: float = 1.0
    noise_var: float = 0.1

    def __post_init__(self):
        if min(self.lengthscale, self.signal_var, self.noise_var) <= 0:
            raise ValueError("kernel parameters must be positive")

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        d2 = (np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :]
              - 2.0 * a @ b.T)
        np.maximum(d2, 0.0, out=d2)
        return self.signal_var * np.exp(-0.5 * d2 / self.lengthscale ** 2)


@dataclass
class GpModel:
    inputs: np.ndarray
    targets: np.ndarray
    kernel: Kernel
    offset: float
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    ridge: float = 0.0
    _tree: cKDTree | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.targets)

    def support(self, queries: np.ndarray, radius: float) -> np.ndarray:
        """True where a query lies within ``radius`` of some training input."""
        if self._tree is None:
            self._tree = cKDTree(self.inputs)
        d, _ = self._tree.query(queries, k=1, distance_upper_bound=radius)
        return np.isfinite(d)


def _jitter_duplicates(x: np.ndarray) -> np.ndarray:
    x = x.copy()
    _, inverse, counts = np.unique(x, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.all(counts == 1):
        return x
    seen = np.zeros(len(counts), dtype=int)
    for i, g in enumerate(inverse):
        if counts[g] > 1:
            x[i, 0] += DUPLICATE_JITTER * seen[g]
            seen[g] += 1
    return x


def fit_gp(positions, values, kernel: Kernel = Kernel()) -> GpModel:
    """Fit an exact GP. Targets are centered by their mean; the prior mean is zero after that."""
    x = np.atleast_2d(np.asarray(positions, dtype=float))
    y = np.asarray(values, dtype=float).ravel()
    if len(y) < 1 or len(x) != len(y):
        raise ValueError("need at least one (position, value) sample")
    x = _jitter_duplicates(x)
    offset = float(y.mean())
    gram = kernel(x, x)
    gram[np.diag_indices_from(gram)] += kernel.noise_var
    ridge = 0.0
    while True:
        try:
            c, _ = cho_factor(gram + ridge * np.eye(len(y)), lower=True)
            break
        except np.linalg.LinAlgError:
            ridge = 1e-10 if ridge == 0.0 else ridge * 10
            if ridge > MAX_RIDGE:
                raise SingularGram("Gram matrix not positive definite after jitter") from None
    chol = np.tril(c)
    alpha = cho_solve((chol, True), y - offset)
    return GpModel(x, y, kernel, offset, chol, alpha, ridge)


def predict(model: GpModel, queries) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and latent variance at each query."""
    q = np.atleast_2d(np.asarray(queries, dtype=float))
    ks = model.kernel(q, model.inputs)
    mean = model.offset + ks @ model.alpha
    v = solve_triangular(model.chol, ks.T, lower=True)
    var = model.kernel.signal_var - np.sum(v * v, axis=0)
    return mean, np.maximum(var, 1e-12)


def downsample(positions, values, cap: int = TRAINING_CAP, bin_size: float = 0.2):
    """Bin samples on a square grid and average per bin, doubling the bin until <= cap bins."""
    x = np.asarray(positions, dtype=float)
    y = np.asarray(values, dtype=float)
    if len(y) == 0:
        return x.reshape(0, 2), y, bin_size
    while True:
        keys = np.floor(x / bin_size).astype(np.int64)
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        if len(uniq) <= cap:
            break
        bin_size *= 2.0
    inverse = inverse.ravel()
    counts = np.bincount(inverse, minlength=len(uniq)).astype(float)
    vals = np.bincount(inverse, weights=y, minlength=len(uniq)) / counts
    centers = (uniq + 0.5) * bin_size
    return centers, vals, bin_size


@dataclass
class FusedField:
    grid: np.ndarray           # (M, 2) query positions
    mixture_weights: np.ndarray  # (n_models, M)
    mean: np.ndarray
    variance: np.ndarray
    belief: np.ndarray         # normalized confidence in [0, 1]
    support: np.ndarray        # (M,) bool: inside some model's training support


def _gauss(y, mu, var):
    return np.exp(-0.5 * (y - mu) ** 2 / var) / np.sqrt(2 * np.pi * var)


def compute_mixture_weights(models: list[GpModel], grid, iters: int = 5,
                            observations=None, support_radius: float | None = None,
                            predictions=None) -> np.ndarray:
    """Per-cell responsibilities ``b_j^g`` of each model, shape ``(n_models, n_cells)``.

    ``observations`` is an optional ``(positions, values)`` pair of local data
    held out for the E-step. Cells with a local observation get posterior
    responsibilities; every other cell falls back to the EM prior restricted
    to the models whose training support covers it.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    n, m = len(models), len(grid)
    if n == 1:
        return np.ones((1, m))
    if support_radius is None:
        mask = np.ones((n, m), dtype=bool)
    else:
        mask = np.array([mdl.support(grid, support_radius) for mdl in models])
    mask[:, ~mask.any(axis=0)] = True

    prior = np.full(n, 1.0 / n)
    obs_idx = None
    if observations is not None and len(observations[1]) > 0:
        obs_x = np.atleast_2d(np.asarray(observations[0], dtype=float))
        obs_y = np.asarray(observations[1], dtype=float)
        # assign each observation to its nearest grid cell
        _, obs_idx = cKDTree(grid).query(obs_x, k=1)
        if predictions is None:
            preds = [predict(mdl, obs_x) for mdl in models]
        else:
            preds = [(mu[obs_idx], var[obs_idx]) for mu, var in predictions]
        lik = np.array([_gauss(obs_y, mu, var + mdl.kernel.noise_var)
                        for (mu, var), mdl in zip(preds, models)])
        lik *= mask[:, obs_idx]

    weights = np.empty((n, m))
    for _ in range(iters):
        # E-step
        weights[:] = prior[:, None] * mask
        weights /= weights.sum(axis=0, keepdims=True)
        if obs_idx is not None:
            resp = prior[:, None] * lik
            tot = resp.sum(axis=0)
            ok = tot > 0
            resp[:, ok] /= tot[ok]
            resp[:, ~ok] = 1.0 / n
            # several observations may share a cell: average their responsibilities
            cell_sum = np.zeros((n, m))
            for j in range(n):
                cell_sum[j] = np.bincount(obs_idx, weights=resp[j], minlength=m)
            hits = np.bincount(obs_idx, minlength=m)
            seen = hits > 0
            weights[:, seen] = cell_sum[:, seen] / hits[seen]
            # M-step: mixture prior from the responsibilities
            prior = resp.mean(axis=1)
            prior = np.maximum(prior, 1e-12)
            prior /= prior.sum()
        weights /= weights.sum(axis=0, keepdims=True)
    return weights


def fuse_moments(weights: np.ndarray, means: np.ndarray, variances: np.ndarray):
    """Mixture mean and law-of-total-variance spread, per cell."""
    mu = np.sum(weights * means, axis=0)
    var = np.sum(weights * (variances + (means - mu) ** 2), axis=0)
    return mu, np.maximum(var, 0.0)


def fuse_gps(local: GpModel, received: list[GpModel], grid, *, iters: int = 5,
             observations=None, support_radius: float | None = None,
             weights: np.ndarray | None = None) -> FusedField:
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    models = [local, *received]
    preds = [predict(mdl, grid) for mdl in models]
    if weights is None:
        weights = compute_mixture_weights(models, grid, iters, observations,
                                          support_radius, predictions=preds)
    means = np.array([p[0] for p in preds])
    variances = np.array([p[1] for p in preds])
    if len(models) == 1:
        mu, var = means[0].copy(), variances[0].copy()
    else:
        mu, var = fuse_moments(weights, means, variances)
    ref = max(mdl.kernel.signal_var for mdl in models)
    belief = np.clip(1.0 - var / ref, 0.0, 1.0)
    if support_radius is None:
        support = np.ones(len(grid), dtype=bool)
    else:
        support = np.any([mdl.support(grid, support_radius) for mdl in models], axis=0)
    return FusedField(grid, weights, mu, var, belief, support)


@dataclass
class BeliefGrid:
    geometry: GridGeometry
    values: np.ndarray
    explored: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.geometry.shape)
        self.explored = np.asarray(self.explored, dtype=bool).reshape(self.geometry.shape)

    @classmethod
    def blank(cls, geometry: GridGeometry, value: float = 0.0) -> "BeliefGrid":
        return cls(geometry, np.full(geometry.shape, value),
                   np.zeros(geometry.shape, dtype=bool))

    def copy(self) -> "BeliefGrid":
        return BeliefGrid(self.geometry, self.values.copy(), self.explored.copy())


def exploration_grid(field: FusedField, theta: float, geometry: GridGeometry) -> BeliefGrid:
    """Binary exploration layer: explored where the cell is in GP support and belief >= theta."""
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    out = BeliefGrid.blank(geometry)
    idx = geometry.flat_index(field.grid[:, 0], field.grid[:, 1])
    ok = idx >= 0
    out.values.ravel()[idx[ok]] = field.belief[ok]
    flag = field.support & (field.belief >= theta)
    out.explored.ravel()[idx[ok]] = flag[ok]
    return out


def grid_to_csv(grid: BeliefGrid) -> str:
    rows = ["row,col,x,y,belief,explored"]
    g = grid.geometry
    for r in range(g.rows):
        for c in range(g.cols):
            x, y = g.cell_center(r, c)
            rows.append(f"{r},{c},{x:.3f},{y:.3f},{grid.values[r, c]:.6f},"
                        f"{int(grid.explored[r, c])}")
    return "\n".join(rows) + "\n"


def grid_to_image(grid: BeliefGrid) -> np.ndarray:
    """Belief scaled to 0-255, top row first (PGM orientation)."""
    return np.round(np.clip(grid.values, 0, 1) * 255).astype(np.uint8)[::-1]
