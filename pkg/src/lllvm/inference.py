"""Variational EM for the locally linear latent variable model.

The posterior factorises as ``q(x) q(C)`` with ``q(x) = N(mu_x, Sigma_x)`` and
``q(C) = MN(mu_C, I, Sigma_C)``. Each E-step update is the exact optimum of the
lower bound in one factor, the γ update is closed form and the α update is a
one-dimensional root find, so the bound never decreases.

The expected quadratic statistics are assembled in edge space. With ``B`` the
signed and ``|B|`` the unsigned edge-node incidence and ``R = B L̃ Bᵀ`` (the
four-term ``L̃`` combination indexed by edge pairs)::

    <A>     = γ² (B ⊗ I)ᵀ  [R ∘ ((|B| ⊗ I) <CᵀC> (|B| ⊗ I)ᵀ)] (B ⊗ I)
    <Gamma> = γ² (|B| ⊗ I)ᵀ [R ∘ ((B ⊗ I) <x xᵀ> (B ⊗ I)ᵀ)] (|B| ⊗ I)

where ``∘`` scales each ``d_x x d_x`` block. Only edge pairs are visited.
"""

from __future__ import annotations

import csv
import json
import logging
import struct
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.optimize import brentq, minimize_scalar

from .errors import ELBODecreaseError, InvalidParameterError, NumericalError, ParseError
from .graph import NeighbourhoodGraph
from .model import LOG_2PI, Dataset, Hyperparams, PrecisionCache, build_precision_cache

log = logging.getLogger(__name__)

# bound on the number of float64 entries held per chunk of an edge-space block
_CHUNK_ENTRIES = 2_000_000
SYMMETRY_TOL = 1e-9


class FitWarning(UserWarning):
    """Non-fatal condition worth recording in the fit diagnostics."""


# ---------------------------------------------------------------------------
# posterior containers


@dataclass(frozen=True, eq=False)
class LatentPosterior:
    """Gaussian ``q(x)`` over the point-major latent vector."""

    mu_x: np.ndarray
    sigma_x: np.ndarray
    d_x: int

    @property
    def n(self) -> int:
        return self.mu_x.size // self.d_x

    @property
    def means(self) -> np.ndarray:
        """``(n, d_x)`` posterior means."""
        return self.mu_x.reshape(self.n, self.d_x)

    def block(self, i: int, j: int) -> np.ndarray:
        d = self.d_x
        return self.sigma_x[i * d:(i + 1) * d, j * d:(j + 1) * d]

    @cached_property
    def second_moment(self) -> np.ndarray:
        """``<x xᵀ> = Sigma_x + mu mu^T``."""
        return self.sigma_x + np.outer(self.mu_x, self.mu_x)

    @cached_property
    def logdet_sigma(self) -> float:
        return _logdet_spd(self.sigma_x, "q(x) covariance")


@dataclass(frozen=True, eq=False)
class MapPosterior:
    """Matrix normal ``q(C) = MN(mu_c, I_{d_y}, sigma_c)``."""

    mu_c: np.ndarray
    sigma_c: np.ndarray
    d_x: int

    @property
    def d_y(self) -> int:
        return self.mu_c.shape[0]

    @property
    def n(self) -> int:
        return self.mu_c.shape[1] // self.d_x

    @property
    def blocks(self) -> np.ndarray:
        return self.mu_c.reshape(self.d_y, self.n, self.d_x).transpose(1, 0, 2)

    def block(self, i: int, j: int) -> np.ndarray:
        d = self.d_x
        return self.sigma_c[i * d:(i + 1) * d, j * d:(j + 1) * d]

    @property
    def vec_covariance(self) -> np.ndarray:
        return np.kron(self.sigma_c, np.eye(self.d_y))

    @cached_property
    def second_moment(self) -> np.ndarray:
        """``<CᵀC> = d_y Sigma_C + mu_Cᵀ mu_C``; block ``(i, j)`` is ``<C_iᵀ C_j>``."""
        return self.d_y * self.sigma_c + self.mu_c.T @ self.mu_c

    @cached_property
    def logdet_sigma(self) -> float:
        return _logdet_spd(self.sigma_c, "q(C) column covariance")


@dataclass(frozen=True, eq=False)
class SufficientStats:
    EA: np.ndarray | None = None
    Eb: np.ndarray | None = None
    EGamma: np.ndarray | None = None
    EH: np.ndarray | None = None


@dataclass
class EMConfig:
    max_iterations: int = 50
    rel_tol: float = 1e-6
    seed: int = 0
    init_scheme: str = "identity-maps"
    alpha_bounds: tuple = (1e-6, 1e6)
    monotone_tol: float = 1e-6

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidParameterError("max_iterations must be >= 1")
        if not self.rel_tol > 0:
            raise InvalidParameterError("rel_tol must be > 0")
        if self.init_scheme not in ("identity-maps", "prior-sample"):
            raise InvalidParameterError(f"unknown init_scheme {self.init_scheme!r}")
        lo, hi = self.alpha_bounds
        if not 0 < lo < hi:
            raise InvalidParameterError(f"invalid alpha_bounds {self.alpha_bounds}")


@dataclass(eq=False)
class FitResult:
    qx: LatentPosterior
    qc: MapPosterior
    hyper: Hyperparams
    theta_trace: list = field(default_factory=list)
    elbo_trace: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    diagnostics: list = field(default_factory=list)

    @property
    def final_elbo(self) -> float:
        return self.elbo_trace[-1] if self.elbo_trace else float("nan")


# ---------------------------------------------------------------------------
# linear algebra helpers


def _logdet_spd(M, what="matrix") -> float:
    try:
        c = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"inference: {what} is not positive definite") from exc
    return 2.0 * float(np.sum(np.log(np.diag(c))))


def _symmetrize(M, what):
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    asym = float(np.max(np.abs(M - M.T))) if M.size else 0.0
    if asym > SYMMETRY_TOL * scale:
        raise NumericalError(f"inference: {what} asymmetric by {asym:.3e} (scale {scale:.3e})")
    return 0.5 * (M + M.T)


def _factor_precision(P, what):
    """Cholesky-factor an SPD precision; return ``(factor, covariance, logdet covariance)``."""
    try:
        cf = sla.cho_factor(P, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        w = np.linalg.eigvalsh(0.5 * (P + P.T))
        raise NumericalError(
            f"inference: {what} precision is not positive definite "
            f"(min eigenvalue {w.min():.3e}, max {w.max():.3e})"
        ) from exc
    cov = sla.cho_solve(cf, np.eye(P.shape[0]))
    cov = 0.5 * (cov + cov.T)
    logdet_cov = -2.0 * float(np.sum(np.log(np.diag(cf[0]))))
    return cf, cov, logdet_cov


def _edge_sandwich(outer, inner, kernel, cov, d_x):
    """``(O ⊗ I)ᵀ [(kernel ⊗ 1) ∘ ((I' ⊗ I) cov (I' ⊗ I)ᵀ)] (O ⊗ I)`` for incidences ``O``, ``I'``."""
    m, n = outer.shape
    N = n * d_x
    out = np.zeros((N, N))
    if m == 0:
        return out
    eye = sp.identity(d_x, format="csr")
    Ox = sp.kron(outer, eye, format="csr")
    OxT = Ox.T.tocsr()
    Ix = sp.kron(inner, eye, format="csr")
    IC = np.asarray(Ix @ cov)  # (m d_x, N)
    ones = np.ones((d_x, d_x))
    step = max(1, _CHUNK_ENTRIES // (m * d_x * d_x))
    # fixed chunk order keeps the reduction deterministic
    for e0 in range(0, m, step):
        e1 = min(m, e0 + step)
        r0, r1 = e0 * d_x, e1 * d_x
        blk = np.asarray(Ix @ IC[r0:r1].T).T  # rows r0:r1 of Ix cov Ixᵀ
        blk *= np.kron(kernel[e0:e1], ones)
        right = np.asarray(OxT @ blk.T).T  # blk @ Ox
        out += np.asarray(OxT[:, r0:r1] @ right)
    return out


# ---------------------------------------------------------------------------
# E-step


def expected_stats_for_x(qc: MapPosterior, y: Dataset, g: NeighbourhoodGraph, cache: PrecisionCache):
    """``(<A>, <b>)`` under ``q(C)``."""
    d_x, gam = cache.d_x, cache.gamma
    N = g.n * d_x
    if g.n_edges == 0:
        return np.zeros((N, N)), np.zeros(N)
    B = g.incidence(signed=True)
    Bu = g.incidence(signed=False)
    EA = gam**2 * _edge_sandwich(B, Bu, cache.edge_kernel, qc.second_moment, d_x)
    EA = _symmetrize(EA, "<A>")

    a, b = g.edges[:, 0], g.edges[:, 1]
    Cb = qc.mu_c.reshape(qc.d_y, g.n, d_x)
    D = Cb[:, a, :] + Cb[:, b, :]
    dY = y.Y[a] - y.Y[b]
    t = np.einsum("yex,ey->ex", D, dY)
    # edge (a, b) adds γ Dᵀ(y_a - y_b) to b_a and γ Dᵀ(y_b - y_a) to b_b
    Eb = gam * np.asarray(B.T @ t).ravel()
    return EA, Eb


def update_qx(EA, Eb, cache: PrecisionCache) -> LatentPosterior:
    """``Sigma_x⁻¹ = <A> + Pi⁻¹``, ``mu_x = Sigma_x <b>``."""
    P = EA + cache.pi_inv
    cf, cov, _ = _factor_precision(P, "q(x)")
    mu = sla.cho_solve(cf, Eb)
    return LatentPosterior(mu, cov, cache.d_x)


def H_matrix(X, Y, g: NeighbourhoodGraph) -> np.ndarray:
    """``H_i = Σ_j η_ij (y_j - y_i)(x_j - x_i)ᵀ`` stacked as ``d_y x n*d_x``."""
    n, d_x = X.shape
    d_y = Y.shape[1]
    if g.n_edges == 0:
        return np.zeros((d_y, n * d_x))
    a, b = g.edges[:, 0], g.edges[:, 1]
    P = (Y[a] - Y[b])[:, :, None] * (X[a] - X[b])[:, None, :]
    Hn = np.asarray(g.incidence(signed=False).T @ P.reshape(len(a), d_y * d_x))
    return Hn.reshape(n, d_y, d_x).transpose(1, 0, 2).reshape(d_y, n * d_x)


def expected_stats_for_c(qx: LatentPosterior, y: Dataset, g: NeighbourhoodGraph, cache: PrecisionCache):
    """``(<Gamma>, <H>)`` under ``q(x)``."""
    d_x, gam = cache.d_x, cache.gamma
    N = g.n * d_x
    EH = H_matrix(qx.means, y.Y, g)
    if g.n_edges == 0:
        return np.zeros((N, N)), EH
    EG = gam**2 * _gamma_core(qx, g, cache.edge_kernel, d_x)
    return _symmetrize(EG, "<Gamma>"), EH


def _gamma_core(qx, g, kernel, d_x):
    B = g.incidence(signed=True)
    Bu = g.incidence(signed=False)
    return _edge_sandwich(Bu, B, kernel, qx.second_moment, d_x)


def update_qc(EGamma, EH, cache: PrecisionCache) -> MapPosterior:
    """``Sigma_C⁻¹ = <Gamma> + ε J Jᵀ + Ω⁻¹``, ``mu_C = γ <H> Sigma_C``."""
    P = EGamma + cache.prior_c_precision
    cf, cov, _ = _factor_precision(P, "q(C)")
    mu = sla.cho_solve(cf, cache.gamma * EH.T).T
    return MapPosterior(mu, cov, cache.d_x)


# ---------------------------------------------------------------------------
# M-step


def gamma_objective_terms(qx: LatentPosterior, qc: MapPosterior, y: Dataset, cache: PrecisionCache):
    """Coefficients of ``l(γ) = -a γ + (d_y (n-1) / 2) log(2γ) + const``.

    Returns ``(a, gamma_eps_blocks)``; the second is ``γ² <Q̂ L̃_ε Q̂ᵀ>``,
    which vanishes identically because ``L̃_ε`` is constant.
    """
    g = cache.graph
    d_x = cache.d_x
    if g.n_edges == 0:
        raise NumericalError("inference: γ update undefined on a graph without edges")
    M = qc.second_moment
    GL = _gamma_core(qx, g, cache.edge_kernel_L, d_x)
    G_eps = cache.gamma**2 * _gamma_core(qx, g, cache.edge_kernel_eps, d_x)
    EH = H_matrix(qx.means, y.Y, g)
    Y = y.Y
    a = 0.25 * np.sum(GL * M) - np.sum(qc.mu_c * EH) + np.sum((g.laplacian @ Y) * Y)
    return float(a), G_eps


def update_gamma(qx: LatentPosterior, qc: MapPosterior, y: Dataset, cache: PrecisionCache,
                 bounds=(1e-10, 1e10)) -> float:
    a, G_eps = gamma_objective_terms(qx, qc, y, cache)
    eps_max = float(np.max(np.abs(G_eps)))
    if eps_max > 1e-8:
        raise NumericalError(f"inference: <Gamma_eps> blocks should vanish, max |entry| = {eps_max:.3e}")
    c = 0.5 * y.d_y * (cache.n - 1)
    if np.isfinite(a) and a > 0:
        return c / a
    warnings.warn(
        f"closed-form γ update has non-positive denominator (a={a:.3e}); using bounded search",
        FitWarning, stacklevel=2,
    )

    def neg_l(log_g):
        gm = np.exp(log_g)
        return -(-a * gm + c * np.log(2.0 * gm))

    res = minimize_scalar(neg_l, bounds=np.log(bounds), method="bounded", options={"xatol": 1e-12})
    return float(np.exp(res.x))


def alpha_objective(alpha, qx: LatentPosterior, eigenvalues, d_x) -> float:
    """``d_x Σ log(α + 2ω_i) - α (Tr Sigma_x + mu_xᵀ mu_x)``."""
    s = np.trace(qx.sigma_x) + qx.mu_x @ qx.mu_x
    return float(d_x * np.sum(np.log(alpha + 2.0 * eigenvalues)) - alpha * s)


def update_alpha(qx: LatentPosterior, eigenvalues, d_x: int, bounds=(1e-6, 1e6)) -> float:
    """Maximise the concave α objective on ``bounds`` by root-finding its derivative."""
    w = np.asarray(eigenvalues, dtype=float)
    s = float(np.trace(qx.sigma_x) + qx.mu_x @ qx.mu_x)
    lo, hi = bounds

    def grad(a):
        return d_x * np.sum(1.0 / (a + 2.0 * w)) - s

    if grad(lo) <= 0:
        warnings.warn(f"α update hit lower bound {lo}", FitWarning, stacklevel=2)
        return float(lo)
    if grad(hi) >= 0:
        warnings.warn(f"α update hit upper bound {hi}", FitWarning, stacklevel=2)
        return float(hi)
    return float(brentq(grad, lo, hi, xtol=1e-300, rtol=8.9e-16, maxiter=500))


# ---------------------------------------------------------------------------
# lower bound


def kl_qx(qx: LatentPosterior, cache: PrecisionCache) -> float:
    P = cache.pi_inv
    N = P.shape[0]
    return 0.5 * float(
        np.sum(P * qx.sigma_x) + qx.mu_x @ P @ qx.mu_x - N - cache.logdet_pi_inv - qx.logdet_sigma
    )


def kl_qc(qc: MapPosterior, cache: PrecisionCache) -> float:
    P = cache.prior_c_precision
    N = P.shape[0]
    d_y = qc.d_y
    return 0.5 * float(
        d_y * (np.sum(P * qc.sigma_c) - N - cache.logdet_prior_c - qc.logdet_sigma)
        + np.sum((qc.mu_c @ P) * qc.mu_c)
    )


def expected_log_likelihood(qx, qc, y: Dataset, cache: PrecisionCache, EGamma=None) -> float:
    g = cache.graph
    Y = y.Y
    if EGamma is None:
        EGamma, _ = expected_stats_for_c(qx, y, g, cache)
    EH = H_matrix(qx.means, Y, g)
    quad_y = np.sum((cache.sigma_y_inv_factor @ Y) * Y)
    lin = cache.gamma * np.sum(qc.mu_c * EH)
    quad_e = np.sum(EGamma * qc.second_moment)
    log_norm = y.n * y.d_y * LOG_2PI - y.d_y * cache.logdet_sigma_y_inv_factor
    return float(-0.5 * quad_y + lin - 0.5 * quad_e - 0.5 * log_norm)


def elbo_terms(qx, qc, y: Dataset, cache: PrecisionCache, EGamma=None) -> dict:
    ell = expected_log_likelihood(qx, qc, y, cache, EGamma)
    kc = kl_qc(qc, cache)
    kx = kl_qx(qx, cache)
    for name, val, scale in (("KL(q(C)||p(C))", kc, qc.sigma_c.shape[0] * qc.d_y),
                             ("KL(q(x)||p(x))", kx, qx.sigma_x.shape[0])):
        if val < -1e-8 * max(1.0, scale):
            raise NumericalError(f"inference: negative {name} = {val:.3e}")
    return {"expected_log_likelihood": ell, "kl_c": kc, "kl_x": kx, "elbo": ell - kc - kx}


def elbo(qx, qc, y: Dataset, cache: PrecisionCache, stats: SufficientStats | None = None) -> float:
    EG = None if stats is None else stats.EGamma
    return elbo_terms(qx, qc, y, cache, EG)["elbo"]


# ---------------------------------------------------------------------------
# driver


def initial_map_posterior(cache: PrecisionCache, config: EMConfig) -> MapPosterior:
    """Prior column covariance with either shared orthonormal maps or a prior draw as the mean."""
    rng = np.random.default_rng(config.seed)
    n, d_x, d_y = cache.n, cache.d_x, cache.d_y
    P = cache.prior_c_precision
    _, cov, _ = _factor_precision(P, "prior on C")
    if config.init_scheme == "identity-maps":
        Q, _ = np.linalg.qr(rng.standard_normal((d_y, d_x)))
        mu = np.tile(Q, (1, n))
    else:
        chol = np.linalg.cholesky(cov)
        mu = rng.standard_normal((d_y, n * d_x)) @ chol.T
    return MapPosterior(mu, cov, d_x)


def em_step(qc, y, cache: PrecisionCache, config: EMConfig, on_substep=None):
    """One full iteration: q(x), q(C), γ, α. Returns ``(qx, qc, cache)``."""
    g = cache.graph
    EA, Eb = expected_stats_for_x(qc, y, g, cache)
    qx = update_qx(EA, Eb, cache)
    if on_substep:
        on_substep("qx", qx, qc, cache)
    EG, EH = expected_stats_for_c(qx, y, g, cache)
    qc = update_qc(EG, EH, cache)
    if on_substep:
        on_substep("qc", qx, qc, cache)
    gamma = update_gamma(qx, qc, y, cache)
    cache = cache.with_hyperparams(gamma=gamma)
    if on_substep:
        on_substep("gamma", qx, qc, cache)
    alpha = update_alpha(qx, cache.spectrum.eigenvalues, cache.d_x, config.alpha_bounds)
    cache = cache.with_hyperparams(alpha=alpha)
    if on_substep:
        on_substep("alpha", qx, qc, cache)
    return qx, qc, cache


def fit_em(y: Dataset, g: NeighbourhoodGraph, h0: Hyperparams, config: EMConfig | None = None,
           on_substep=None) -> FitResult:
    """Alternate E- and M-steps until the relative ELBO change drops below ``rel_tol``.

    Raises :class:`ELBODecreaseError` if the bound drops by more than
    ``monotone_tol * (1 + |previous|)`` between iterations.
    """
    config = EMConfig() if config is None else config
    if y.n != g.n:
        raise InvalidParameterError(f"data has {y.n} points but the graph has {g.n} nodes")
    cache = build_precision_cache(g, h0, y.d_y)
    cache.require_regular()
    diagnostics = []
    qc = initial_map_posterior(cache, config)
    qx = None
    elbos, thetas = [], []
    converged = False
    it = 0
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", FitWarning)
        for it in range(1, config.max_iterations + 1):
            qx, qc, cache = em_step(qc, y, cache, config, on_substep)
            value = elbo(qx, qc, y, cache)
            thetas.append((cache.alpha, cache.gamma))
            log.debug("iteration %d: elbo=%.10g alpha=%.6g gamma=%.6g", it, value, cache.alpha, cache.gamma)
            if elbos:
                prev = elbos[-1]
                if value < prev - config.monotone_tol * (1.0 + abs(prev)):
                    elbos.append(value)
                    state = {
                        "iteration": it, "elbo_trace": list(elbos), "theta_trace": list(thetas),
                        "qx": qx, "qc": qc, "hyper": cache.hyper,
                    }
                    raise ELBODecreaseError(
                        f"inference: ELBO decreased at iteration {it}: {prev!r} -> {value!r}", state
                    )
                elbos.append(value)
                if abs(value - prev) < config.rel_tol * abs(prev):
                    converged = True
                    break
            else:
                elbos.append(value)
        for w in caught:
            if issubclass(w.category, FitWarning):
                diagnostics.append(str(w.message))
            else:
                warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
    return FitResult(qx, qc, cache.hyper, thetas, elbos, converged, it, diagnostics)


# ---------------------------------------------------------------------------
# serialisation
#
# covariances.bin layout (all little-endian):
#   6 bytes   magic b"LLLVM1"
#   uint32    number of arrays
#   per array: uint16 name length, UTF-8 name, uint32 ndim, ndim x uint64 shape,
#              then float64 data in row-major order

COVARIANCE_MAGIC = b"LLLVM1"


def write_covariances(path, arrays: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(COVARIANCE_MAGIC)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            a = np.ascontiguousarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
            fh.write(a.tobytes(order="C"))


def read_covariances(path) -> dict:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:6] != COVARIANCE_MAGIC:
        raise ParseError("bad magic in covariance container", line=1)
    pos = 6
    try:
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        out = {}
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + ln].decode("utf-8")
            pos += ln
            (ndim,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", data, pos)
            pos += 8 * ndim
            size = int(np.prod(shape)) * 8
            if pos + size > len(data):
                raise ParseError(f"truncated array {name!r} in covariance container", line=1)
            out[name] = np.frombuffer(data, dtype="<f8", count=size // 8, offset=pos).reshape(shape).copy()
            pos += size
    except struct.error as exc:
        raise ParseError(f"truncated covariance container: {exc}", line=1) from exc
    return out


def save_fit_result(fit: FitResult, directory, extra: dict | None = None) -> list:
    """Write a fit to ``directory``; returns the written paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []

    def csv_rows(name, header, rows):
        p = d / name
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        paths.append(p)

    csv_rows("elbo_trace.csv", ["iteration", "elbo"],
             [[i + 1, repr(float(v))] for i, v in enumerate(fit.elbo_trace)])
    csv_rows("theta_trace.csv", ["iteration", "alpha", "gamma"],
             [[i + 1, repr(float(a)), repr(float(gm))] for i, (a, gm) in enumerate(fit.theta_trace)])
    for name, M in (("mu_x.csv", fit.qx.means), ("mu_c.csv", fit.qc.mu_c)):
        np.savetxt(d / name, M, delimiter=",", fmt="%.17g")
        paths.append(d / name)
    write_covariances(d / "covariances.bin", {"sigma_x": fit.qx.sigma_x, "sigma_c": fit.qc.sigma_c})
    paths.append(d / "covariances.bin")
    meta = {
        "alpha": fit.hyper.alpha, "gamma": fit.hyper.gamma, "epsilon": fit.hyper.epsilon,
        "d_x": fit.hyper.d_x, "converged": fit.converged, "iterations": fit.iterations,
        "final_elbo": fit.final_elbo, "diagnostics": list(fit.diagnostics),
    }
    meta.update(extra or {})
    with open(d / "fit.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    paths.append(d / "fit.json")
    return paths


def load_fit_result(directory) -> tuple:
    """Read a directory written by :func:`save_fit_result`; returns ``(fit, metadata)``."""
    d = Path(directory)
    with open(d / "fit.json") as fh:
        meta = json.load(fh)
    d_x = int(meta["d_x"])
    hyper = Hyperparams(meta["alpha"], meta["gamma"], d_x, meta["epsilon"])
    mu_x = np.loadtxt(d / "mu_x.csv", delimiter=",", ndmin=2).ravel()
    mu_c = np.loadtxt(d / "mu_c.csv", delimiter=",", ndmin=2)
    cov = read_covariances(d / "covariances.bin")
    elbos = np.loadtxt(d / "elbo_trace.csv", delimiter=",", skiprows=1, ndmin=2)
    thetas = np.loadtxt(d / "theta_trace.csv", delimiter=",", skiprows=1, ndmin=2)
    fit = FitResult(
        LatentPosterior(mu_x, cov["sigma_x"], d_x), MapPosterior(mu_c, cov["sigma_c"], d_x), hyper,
        [tuple(r) for r in thetas[:, 1:].tolist()], elbos[:, 1].tolist(),
        bool(meta["converged"]), int(meta["iterations"]), list(meta.get("diagnostics", [])),
    )
    return fit, meta
