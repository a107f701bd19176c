"""Out-of-sample inference, reconstruction, the integrated marginal and graph comparison."""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.spatial.distance import cdist

from .errors import InvalidParameterError, LLLVMError, SingularityError
from .graph import NeighbourhoodGraph
from .inference import (
    EMConfig,
    FitResult,
    LatentPosterior,
    MapPosterior,
    _factor_precision,
    expected_stats_for_c,
    expected_stats_for_x,
    fit_em,
)
from .model import LOG_2PI, Dataset, Hyperparams, PrecisionCache, build_precision_cache

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# out-of-sample extension


@dataclass(frozen=True, eq=False)
class OutOfSamplePosterior:
    """Posterior over the latent ``x*`` and map ``C*`` of a new observation."""

    mean_x: np.ndarray
    cov_x: np.ndarray
    mean_c: np.ndarray
    cov_c: np.ndarray
    neighbour_indices: np.ndarray

    @property
    def qx_star(self):
        return self.mean_x, self.cov_x

    @property
    def qc_star(self):
        """``(mean, column covariance)``; the row covariance is the identity."""
        return self.mean_c, self.cov_c


def nearest_training_points(Y, y_star, k: int) -> np.ndarray:
    """Indices of the ``k`` training rows closest to ``y_star``; ties go to the lower index."""
    d = cdist(np.atleast_2d(y_star), Y, "sqeuclidean")[0]
    return np.sort(np.argsort(d, kind="stable")[:k])


def out_of_sample(fit: FitResult, y_star, y: Dataset, g: NeighbourhoodGraph,
                  h: Hyperparams | None = None, k: int | None = None,
                  neighbours=None, n_passes: int = 1) -> OutOfSamplePosterior:
    """Posterior for a new point with every training posterior held fixed.

    The new point is attached to ``k`` nearest training points (or to an
    explicit ``neighbours`` list) in an enlarged graph. Starting from ``x*`` at
    the mean of its neighbours' latent means, ``q(C*)`` and then ``q(x*)`` are
    set to their optimal values given everything else. ``n_passes > 1``
    repeats that pair of updates.

    Parameters
    ----------
    fit : FitResult
        Converged training fit.
    y_star : array_like, shape (d_y,)
    y, g : Dataset, NeighbourhoodGraph
        Training data and graph of ``fit``.
    h : Hyperparams, optional
        Defaults to ``fit.hyper``.
    k : int, optional
        Number of neighbours; defaults to ``g.k``.
    """
    y_star = np.asarray(y_star, dtype=float).ravel()
    if y_star.shape != (y.d_y,):
        raise InvalidParameterError(f"y_star must have length {y.d_y}, got {y_star.shape}")
    if not np.all(np.isfinite(y_star)):
        raise InvalidParameterError("y_star has non-finite entries")
    if n_passes < 1:
        raise InvalidParameterError("n_passes must be >= 1")
    h = fit.hyper if h is None else h
    n, d_x, d_y = y.n, h.d_x, y.d_y
    if neighbours is None:
        k = g.k if k is None else k
        if k is None or k < 1:
            raise InvalidParameterError("out_of_sample needs k >= 1 or explicit neighbours")
        nb = nearest_training_points(y.Y, y_star, min(int(k), n))
    else:
        nb = np.unique(np.asarray(neighbours, dtype=int))
        if nb.size == 0 or nb.min() < 0 or nb.max() >= n:
            raise InvalidParameterError("neighbour list must be non-empty training indices")

    G = np.zeros((n + 1, n + 1))
    G[:n, :n] = g.adjacency
    G[n, nb] = G[nb, n] = 1.0
    g_aug = NeighbourhoodGraph.from_adjacency(G, k=g.k)
    cache = build_precision_cache(g_aug, h, d_y)
    y_aug = Dataset(np.vstack([y.Y, y_star]))

    N = n * d_x
    star = slice(N, N + d_x)
    mu_xt, sig_xt = fit.qx.mu_x, fit.qx.sigma_x
    mu_ct, sig_ct = fit.qc.mu_c, fit.qc.sigma_c

    mean_x = fit.qx.means[nb].mean(axis=0)
    cov_x = np.zeros((d_x, d_x))
    mean_c = mean_cov_c = None
    for _ in range(n_passes):
        # q(C*) given q(x_t) q(x*) and the frozen q(C_t)
        qx_aug = LatentPosterior(np.concatenate([mu_xt, mean_x]), sla.block_diag(sig_xt, cov_x), d_x)
        EG, EH = expected_stats_for_c(qx_aug, y_aug, g_aug, cache)
        P = EG + cache.prior_c_precision
        cf, cov_c, _ = _factor_precision(P[star, star], "q(C*)")
        rhs = cache.gamma * EH[:, star] - mu_ct @ P[:N, star]
        mean_c = sla.cho_solve(cf, rhs.T).T
        mean_cov_c = cov_c

        # q(x*) given q(C_t) q(C*) and the frozen q(x_t)
        qc_aug = MapPosterior(np.hstack([mu_ct, mean_c]), sla.block_diag(sig_ct, cov_c), d_x)
        EA, Eb = expected_stats_for_x(qc_aug, y_aug, g_aug, cache)
        P = EA + cache.pi_inv
        cf, cov_x, _ = _factor_precision(P[star, star], "q(x*)")
        mean_x = sla.cho_solve(cf, Eb[star] - P[star, :N] @ mu_xt)

    return OutOfSamplePosterior(mean_x, cov_x, mean_c, mean_cov_c, nb)


def reconstruct(x_star, fit: FitResult, y: Dataset, neighbour_indices) -> np.ndarray:
    """Average of the tangent-plane predictions ``y_i + C_i (x* - x_i)`` over the neighbours."""
    nb = np.asarray(neighbour_indices, dtype=int).ravel()
    if nb.size == 0:
        raise InvalidParameterError("reconstruct needs a non-empty neighbour list")
    x_star = np.asarray(x_star, dtype=float).ravel()
    X = fit.qx.means
    Cb = fit.qc.blocks
    preds = y.Y[nb] + np.einsum("kyx,kx->ky", Cb[nb], x_star - X[nb])
    return preds.mean(axis=0)


# ---------------------------------------------------------------------------
# marginal over the maps


def _q_matrices(X, g: NeighbourhoodGraph, gamma: float) -> np.ndarray:
    """Batched ``Q`` (``n*d_x x n``) with column ``i`` holding ``γ η_ij (x_i - x_j)`` at block ``j``.

    ``X`` has shape ``(S, n, d_x)``; the result has shape ``(S, n*d_x, n)``.
    """
    S, n, d_x = X.shape
    eta = g.adjacency
    diff = X[:, None, :, :] - X[:, :, None, :]  # [s, j, i] = x_i - x_j
    Q = gamma * eta[None, :, :, None] * diff  # block j, column i
    Q = Q.transpose(0, 1, 3, 2)  # (S, j, a, i)
    idx = np.arange(n)
    # diagonal block: γ Σ_k η_ik (x_i - x_k)
    Q[:, idx, :, idx] = gamma * np.einsum("ik,sika->sia", eta, X[:, :, None, :] - X[:, None, :, :]).transpose(1, 0, 2)
    return Q.reshape(S, n * d_x, n)


def _w_matrices(X, g: NeighbourhoodGraph) -> np.ndarray:
    """Batched ``W`` (``n x n*d_x``) such that ``H = Yᵀ W``."""
    S, n, d_x = X.shape
    eta = g.adjacency
    diff = X[:, :, None, :] - X[:, None, :, :]  # [s, j, i] = x_j - x_i
    W = eta[None, :, :, None] * diff  # row j, block i
    idx = np.arange(n)
    W[:, idx, idx, :] = -np.einsum("ij,sjia->sia", eta, diff)
    return W.reshape(S, n, n * d_x)


@dataclass(frozen=True, eq=False)
class MarginalPrecision:
    """Precision of ``p(y | x)`` after integrating out the maps.

    ``Lambda`` is the shared ``n*d_x`` factor ``(Γ + ε J Jᵀ + Ω⁻¹)⁻¹``; the full
    operator is ``Lambda ⊗ I_{d_y}``.
    """

    K_LL_inv: np.ndarray
    Lambda: np.ndarray
    W: np.ndarray
    logdet: float

    def log_density(self, y) -> float:
        y = np.asarray(y, dtype=float).ravel()
        return float(-0.5 * (y @ self.K_LL_inv @ y) - 0.5 * (y.size * LOG_2PI - self.logdet))


def marginal_precision(x, g: NeighbourhoodGraph, h: Hyperparams, cache: PrecisionCache | None = None) -> MarginalPrecision:
    """``K_LL⁻¹ = Σ_y⁻¹ - γ² (W Λ Wᵀ) ⊗ I_{d_y}`` at the latent point ``x``."""
    if cache is None:
        raise InvalidParameterError("marginal_precision needs a PrecisionCache (it fixes d_y)")
    x = np.asarray(x, dtype=float).ravel()
    n, d_x, d_y = g.n, h.d_x, cache.d_y
    if x.shape != (n * d_x,):
        raise InvalidParameterError(f"x must have length {n * d_x}")
    X = x.reshape(1, n, d_x)
    Q = _q_matrices(X, g, h.gamma)[0]
    Gamma = Q @ cache.Ltilde @ Q.T
    P = 0.5 * (Gamma + Gamma.T) + cache.prior_c_precision
    try:
        cf = sla.cho_factor(P, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularityError("extensions: Γ + ε J Jᵀ + Ω⁻¹ is singular") from exc
    Lam = sla.cho_solve(cf, np.eye(P.shape[0]))
    W = _w_matrices(X, g)[0]
    inner = h.gamma**2 * (W @ Lam @ W.T)
    K_inv = cache.sigma_y_inv - np.kron(inner, np.eye(d_y))
    K_inv = 0.5 * (K_inv + K_inv.T)
    logdet_P = 2.0 * np.sum(np.log(np.diag(cf[0])))
    logdet = d_y * (cache.logdet_sigma_y_inv_factor + cache.logdet_prior_c - logdet_P)
    return MarginalPrecision(K_inv, Lam, W, float(logdet))


def log_marginal_given_x(y: Dataset, X, cache: PrecisionCache) -> np.ndarray:
    """``log p(y | x, G, θ)`` with the maps integrated out, for a batch of latents.

    ``X`` has shape ``(S, n*d_x)``; returns ``(S,)``. Intended for small ``n``.
    """
    g = cache.graph
    n, d_x, d_y = g.n, cache.d_x, y.d_y
    Xb = np.asarray(X, dtype=float).reshape(-1, n, d_x)
    Q = _q_matrices(Xb, g, cache.gamma)
    Gamma = Q @ cache.Ltilde @ Q.transpose(0, 2, 1)
    P = Gamma + cache.prior_c_precision
    Lc = np.linalg.cholesky(P)
    W = _w_matrices(Xb, g)
    H = np.einsum("iy,sia->sya", y.Y, W)  # (S, d_y, n*d_x)
    Z = np.linalg.solve(Lc, H.transpose(0, 2, 1))  # L⁻¹ Hᵀ
    quad = np.sum((cache.sigma_y_inv_factor @ y.Y) * y.Y) - cache.gamma**2 * np.sum(Z**2, axis=(1, 2))
    logdet_P = 2.0 * np.sum(np.log(np.diagonal(Lc, axis1=1, axis2=2)), axis=1)
    logdet = d_y * (cache.logdet_sigma_y_inv_factor + cache.logdet_prior_c - logdet_P)
    return -0.5 * quad - 0.5 * (n * d_y * LOG_2PI - logdet)


# ---------------------------------------------------------------------------
# graph comparison


@dataclass(frozen=True)
class GraphScore:
    graph_id: str
    k: int | None
    final_elbo: float
    iterations: int
    converged: bool
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def worker_count(default: int = 1) -> int:
    """Number of workers allowed by ``LLLVM_THREADS`` (at least 1)."""
    raw = os.environ.get("LLLVM_THREADS")
    if raw is None:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        raise InvalidParameterError(f"LLLVM_THREADS must be an integer, got {raw!r}") from None


def compare_graphs(y: Dataset, graphs, h0: Hyperparams, config: EMConfig | None = None,
                   graph_ids=None, workers: int | None = None) -> list:
    """Fit every graph with the same initialisation and rank by final ELBO (descending).

    Fits that abort are kept in the result with ``error`` set and ranked last.
    The ranking is stable, so equal ELBOs keep their input order.
    """
    graphs = list(graphs)
    if len(graphs) < 2:
        raise InvalidParameterError("compare_graphs needs at least two graphs")
    ids = [str(i) for i in range(len(graphs))] if graph_ids is None else [str(i) for i in graph_ids]
    if len(ids) != len(graphs):
        raise InvalidParameterError("graph_ids length does not match graphs")
    config = EMConfig() if config is None else config

    def run(item):
        gid, g = item
        try:
            r = fit_em(y, g, h0, config)
            return GraphScore(gid, g.k, r.final_elbo, r.iterations, r.converged)
        except LLLVMError as exc:
            log.warning("fit for graph %s failed: %s", gid, exc)
            return GraphScore(gid, g.k, float("nan"), 0, False, str(exc))

    workers = worker_count() if workers is None else workers
    items = list(zip(ids, graphs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(run, items))
    else:
        scores = [run(it) for it in items]
    return sorted(scores, key=lambda s: (s.failed, -s.final_elbo if not s.failed else 0.0))


def write_ranking_csv(scores, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["graph_id", "k", "final_elbo", "iterations", "converged"])
        for s in scores:
            w.writerow([s.graph_id, "" if s.k is None else s.k, repr(float(s.final_elbo)),
                        s.iterations, int(s.converged)])
