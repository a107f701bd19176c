"""Generative model: priors on latents and maps, likelihood of the data.

Layout conventions used throughout the package:

* ``x`` is the point-major concatenation ``[x_1; ...; x_n]`` (length ``n*d_x``),
  so the latent matrix is ``x.reshape(n, d_x)``.
* ``y`` is ``[y_1; ...; y_n]`` (length ``n*d_y``), i.e. ``Y.ravel()`` for the
  ``n x d_y`` data matrix ``Y``. This equals ``vec`` of the ``d_y x n`` matrix
  whose columns are the points, so ``(M ⊗ I_{d_y})`` acts on node indices.
* ``C`` is ``d_y x n*d_x``; block ``i`` (columns ``i*d_x:(i+1)*d_x``) is ``C_i``.
  A matrix-normal ``MN(M, I_{d_y}, S)`` over ``C`` is the vector normal
  ``N(vec M, S ⊗ I_{d_y})`` over the column-major ``vec(C)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from .errors import InvalidParameterError, SingularityError
from .graph import NeighbourhoodGraph

DEFAULT_EPSILON = 1e-4
LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observed points, one per row of ``Y``."""

    Y: np.ndarray

    def __post_init__(self):
        Y = np.array(self.Y, dtype=float)
        if Y.ndim != 2:
            raise InvalidParameterError(f"Y must be 2-D, got shape {Y.shape}")
        if not np.all(np.isfinite(Y)):
            raise InvalidParameterError("Y contains non-finite values")
        Y.setflags(write=False)
        object.__setattr__(self, "Y", Y)

    @classmethod
    def from_flat(cls, y, d_y: int) -> "Dataset":
        return cls(np.asarray(y, dtype=float).reshape(-1, d_y))

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def d_y(self) -> int:
        return self.Y.shape[1]

    @property
    def y_flat(self) -> np.ndarray:
        return self.Y.ravel()


@dataclass(frozen=True)
class Hyperparams:
    alpha: float
    gamma: float
    d_x: int
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        for name in ("alpha", "gamma", "epsilon"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidParameterError(f"{name} must be a positive finite number, got {v!r}")
        if int(self.d_x) != self.d_x or self.d_x < 1:
            raise InvalidParameterError(f"d_x must be a positive integer, got {self.d_x!r}")

    def check_dims(self, d_y: int) -> None:
        if not self.d_x < d_y:
            raise InvalidParameterError(f"latent dimension d_x={self.d_x} must be below d_y={d_y}")

    def replace(self, **changes) -> "Hyperparams":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class LinearMaps:
    """Stack of local linear maps ``C = [C_1, ..., C_n]``."""

    C: np.ndarray
    d_x: int

    @property
    def n(self) -> int:
        return self.C.shape[1] // self.d_x

    @property
    def blocks(self) -> np.ndarray:
        """``(n, d_y, d_x)`` view of the individual maps."""
        d_y = self.C.shape[0]
        return self.C.reshape(d_y, self.n, self.d_x).transpose(1, 0, 2)

    @classmethod
    def from_blocks(cls, blocks) -> "LinearMaps":
        blocks = np.asarray(blocks, dtype=float)
        n, d_y, d_x = blocks.shape
        return cls(blocks.transpose(1, 0, 2).reshape(d_y, n * d_x), d_x)


def _maps_array(C) -> np.ndarray:
    return np.asarray(C.C if isinstance(C, LinearMaps) else C, dtype=float)


def kron_eye(M, d: int) -> np.ndarray:
    """``M ⊗ I_d``."""
    return np.kron(M, np.eye(d))


@dataclass(frozen=True, eq=False)
class PrecisionCache:
    """Precision matrices and spectral quantities for one (graph, hyperparameter) pair.

    The ε-regularised pieces (``Ltilde``, ``prior_c_precision``, ...) raise
    :class:`SingularityError` on access when the graph has more than one
    connected component, since ``ε 1 1ᵀ`` only lifts one null direction.
    """

    graph: NeighbourhoodGraph
    hyper: Hyperparams
    d_y: int

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def d_x(self) -> int:
        return self.hyper.d_x

    @property
    def alpha(self) -> float:
        return self.hyper.alpha

    @property
    def gamma(self) -> float:
        return self.hyper.gamma

    @property
    def epsilon(self) -> float:
        return self.hyper.epsilon

    @property
    def spectrum(self):
        return self.graph.spectrum

    @property
    def singular(self) -> bool:
        return self.spectrum.n_zero > 1

    def require_regular(self):
        if self.singular:
            raise SingularityError(
                f"model: graph has {self.graph.n_components} connected components "
                f"({self.spectrum.n_zero} zero Laplacian eigenvalues); "
                "the ε-regularised precisions are singular"
            )

    # prior on x -------------------------------------------------------
    @cached_property
    def omega_inv(self) -> np.ndarray:
        return kron_eye(2.0 * self.graph.laplacian, self.d_x)

    @cached_property
    def pi_inv(self) -> np.ndarray:
        return self.alpha * np.eye(self.n * self.d_x) + self.omega_inv

    @cached_property
    def logdet_pi_inv(self) -> float:
        return self.d_x * float(np.sum(np.log(self.alpha + 2.0 * self.spectrum.eigenvalues)))

    # prior on C -------------------------------------------------------
    @cached_property
    def J(self) -> np.ndarray:
        return np.kron(np.ones((self.n, 1)), np.eye(self.d_x))

    @cached_property
    def prior_c_precision(self) -> np.ndarray:
        """``ε J Jᵀ + Ω⁻¹ = (ε 1 1ᵀ + 2L) ⊗ I_{d_x}``."""
        self.require_regular()
        n = self.n
        base = self.epsilon * np.ones((n, n)) + 2.0 * self.graph.laplacian
        return kron_eye(base, self.d_x)

    @cached_property
    def logdet_prior_c(self) -> float:
        self.require_regular()
        w = self.spectrum.eigenvalues[1:]
        return self.d_x * (np.log(self.epsilon * self.n) + float(np.sum(np.log(2.0 * w))))

    # likelihood -------------------------------------------------------
    @cached_property
    def _ltilde_parts(self):
        self.require_regular()
        w, U = self.spectrum.eigenvalues, self.spectrum.eigenvectors
        u0 = U[:, 0]
        L_eps = np.outer(u0, u0) / (self.epsilon * self.n)
        Ur = U[:, 1:]
        L_L = (Ur / w[1:]) @ Ur.T
        return L_eps, L_L

    @property
    def Ltilde_eps(self) -> np.ndarray:
        return self._ltilde_parts[0]

    @property
    def Ltilde_L(self) -> np.ndarray:
        return self._ltilde_parts[1]

    @cached_property
    def Ltilde(self) -> np.ndarray:
        """``(ε 1 1ᵀ + 2γL)⁻¹ = L̃_ε + L̃_L / (2γ)``."""
        L_eps, L_L = self._ltilde_parts
        return L_eps + L_L / (2.0 * self.gamma)

    @cached_property
    def sigma_y_inv_factor(self) -> np.ndarray:
        """``ε 1 1ᵀ + 2γL``; the full ``Σ_y⁻¹`` is this ``⊗ I_{d_y}``."""
        n = self.n
        return self.epsilon * np.ones((n, n)) + 2.0 * self.gamma * self.graph.laplacian

    @property
    def sigma_y_inv(self) -> np.ndarray:
        return kron_eye(self.sigma_y_inv_factor, self.d_y)

    @cached_property
    def logdet_sigma_y_inv_factor(self) -> float:
        self.require_regular()
        w = self.spectrum.eigenvalues[1:]
        return float(np.log(self.epsilon * self.n) + np.sum(np.log(2.0 * self.gamma * w)))

    # edge-space kernels used by the sufficient statistics -------------
    def _edge_kernel(self, M):
        B = self.graph.incidence(signed=True)
        if B.shape[0] == 0:
            return np.zeros((0, 0))
        BM = np.asarray(B @ M)
        return np.asarray(B @ BM.T)

    @cached_property
    def edge_kernel(self) -> np.ndarray:
        """``B L̃ Bᵀ``: entry ``(e, e')`` is ``L̃(a,a') - L̃(a,b') - L̃(b,a') + L̃(b,b')``."""
        if self.graph.n_edges == 0:
            return np.zeros((0, 0))
        return self._edge_kernel(self.Ltilde)

    @cached_property
    def edge_kernel_L(self) -> np.ndarray:
        """``B L̃_L Bᵀ`` (independent of γ)."""
        if self.graph.n_edges == 0:
            return np.zeros((0, 0))
        return self._edge_kernel(self.Ltilde_L)

    @cached_property
    def edge_kernel_eps(self) -> np.ndarray:
        if self.graph.n_edges == 0:
            return np.zeros((0, 0))
        return self._edge_kernel(self.Ltilde_eps)

    # cached entries and the hyperparameters they depend on
    _DEPENDS = {
        "omega_inv": (), "J": (), "edge_kernel_L": ("epsilon",),
        "_ltilde_parts": ("epsilon",), "edge_kernel_eps": ("epsilon",),
        "prior_c_precision": ("epsilon",), "logdet_prior_c": ("epsilon",),
        "Ltilde": ("epsilon", "gamma"), "edge_kernel": ("epsilon", "gamma"),
        "sigma_y_inv_factor": ("epsilon", "gamma"), "logdet_sigma_y_inv_factor": ("epsilon", "gamma"),
    }

    def with_hyperparams(self, **changes) -> "PrecisionCache":
        """New cache sharing the graph with updated ``alpha``/``gamma``/``epsilon``.

        Cached matrices that do not depend on the changed values are reused.
        """
        if "d_x" in changes:
            raise InvalidParameterError("with_hyperparams cannot change d_x")
        new = PrecisionCache(self.graph, self.hyper.replace(**changes), self.d_y)
        changed = {k for k, v in changes.items() if v != getattr(self.hyper, k)}
        for key, deps in self._DEPENDS.items():
            if key in self.__dict__ and not changed.intersection(deps):
                new.__dict__[key] = self.__dict__[key]
        return new


def build_precision_cache(g: NeighbourhoodGraph, h: Hyperparams, d_y: int) -> PrecisionCache:
    """Precision cache for ``(g, h)``.

    Construction always succeeds for valid dimensions. On a disconnected graph
    the prior on ``x`` is available but every ε-regularised quantity raises
    :class:`SingularityError` when first requested.
    """
    h.check_dims(d_y)
    return PrecisionCache(g, h, int(d_y))


# ---------------------------------------------------------------------------
# log densities


def log_prior_x(x, cache: PrecisionCache) -> float:
    """``log N(x | 0, Π)`` with ``Π⁻¹ = α I + 2L ⊗ I_{d_x}``."""
    x = np.asarray(x, dtype=float).ravel()
    N = cache.n * cache.d_x
    if x.shape != (N,):
        raise InvalidParameterError(f"x must have length {N}, got {x.shape}")
    quad = x @ cache.pi_inv @ x
    return float(-0.5 * N * LOG_2PI + 0.5 * cache.logdet_pi_inv - 0.5 * quad)


def log_prior_c(C, cache: PrecisionCache) -> float:
    """Matrix-normal ``log MN(C | 0, I_{d_y}, (ε J Jᵀ + Ω⁻¹)⁻¹)``."""
    C = _maps_array(C)
    N = cache.n * cache.d_x
    if C.shape != (cache.d_y, N):
        raise InvalidParameterError(f"C must have shape {(cache.d_y, N)}, got {C.shape}")
    P = cache.prior_c_precision
    quad = np.sum((C @ P) * C)
    return float(-0.5 * N * cache.d_y * LOG_2PI + 0.5 * cache.d_y * cache.logdet_prior_c - 0.5 * quad)


def _edge_residual_vectors(Y, C, x, g: NeighbourhoodGraph, d_x: int):
    """Per-edge ``(C_a + C_b)(x_a - x_b)`` and ``y_a - y_b``."""
    n = g.n
    d_y = C.shape[0]
    Cb = C.reshape(d_y, n, d_x)
    X = x.reshape(n, d_x)
    a, b = g.edges[:, 0], g.edges[:, 1]
    D = Cb[:, a, :] + Cb[:, b, :]  # (d_y, m, d_x)
    dX = X[a] - X[b]
    return np.einsum("yex,ex->ey", D, dX), Y[a] - Y[b], dX


def e_vector(C, x, g: NeighbourhoodGraph, gamma: float, d_x: int) -> np.ndarray:
    """``e_i = -Σ_j η_ji γ (C_j + C_i)(x_j - x_i)`` as an ``(n, d_y)`` array."""
    C = _maps_array(C)
    x = np.asarray(x, dtype=float).ravel()
    n, d_y = g.n, C.shape[0]
    if g.n_edges == 0:
        return np.zeros((n, d_y))
    s, _, _ = _edge_residual_vectors(np.zeros((n, d_y)), C, x, g, d_x)
    # edge (a, b) adds γ s to e_a and -γ s to e_b, with s = (C_a + C_b)(x_a - x_b)
    B = g.incidence(signed=True)
    return gamma * np.asarray(B.T @ s)


def log_likelihood(y: Dataset, C, x, cache: PrecisionCache, g: NeighbourhoodGraph | None = None) -> float:
    """Normalised ``log N(y | Σ_y e, Σ_y)``."""
    g = cache.graph if g is None else g
    C = _maps_array(C)
    x = np.asarray(x, dtype=float).ravel()
    N = cache.n * cache.d_x
    if C.shape != (y.d_y, N) or x.shape != (N,) or y.n != cache.n:
        raise InvalidParameterError("log_likelihood: dimension mismatch between y, C, x and the graph")
    Y = y.Y
    E = e_vector(C, x, g, cache.gamma, cache.d_x)
    quad_y = np.sum((cache.sigma_y_inv_factor @ Y) * Y)
    lin = np.sum(Y * E)
    quad_e = np.sum((cache.Ltilde @ E) * E)
    log_norm = y.n * y.d_y * LOG_2PI - y.d_y * cache.logdet_sigma_y_inv_factor
    return float(-0.5 * (quad_y - 2.0 * lin + quad_e) - 0.5 * log_norm)


# ---------------------------------------------------------------------------
# explicit quadratic forms (dense; meant for small problems and checks)


@dataclass(frozen=True, eq=False)
class InternalQuadratics:
    """Dense intermediate quantities of the likelihood for fixed ``C`` and ``x``.

    ``W`` is ``n x n*d_x`` so that ``H = Yᵀ W`` (``Yᵀ`` being ``d_y x n``).
    """

    A_E: np.ndarray
    e: np.ndarray
    f: float
    b: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    W: np.ndarray
    U_u: np.ndarray
    V_v: np.ndarray
    A: np.ndarray
    Gamma: np.ndarray
    mu_y: np.ndarray


def quadratic_forms(y: Dataset, C, x, cache: PrecisionCache, g: NeighbourhoodGraph | None = None) -> InternalQuadratics:
    g = cache.graph if g is None else g
    C = _maps_array(C)
    x = np.asarray(x, dtype=float).ravel()
    n, d_x, d_y = g.n, cache.d_x, y.d_y
    gam = cache.gamma
    eta = g.adjacency
    Cb = LinearMaps(C, d_x).blocks
    X = x.reshape(n, d_x)
    Y = y.Y

    A_E = np.zeros((n * d_y, n * d_x))
    for i in range(n):
        for j in range(n):
            blk = -eta[i, j] * gam * (Cb[j] + Cb[i])
            if i == j:
                blk = blk + sum(eta[i, k] * gam * (Cb[k] + Cb[i]) for k in range(n))
            A_E[i * d_y:(i + 1) * d_y, j * d_x:(j + 1) * d_x] = blk

    e = A_E @ x
    f = sum(
        eta[i, j] * (X[j] - X[i]) @ Cb[i].T @ (gam * Cb[i]) @ (X[j] - X[i])
        for i in range(n) for j in range(n)
    )
    b = np.concatenate([
        sum(eta[i, j] * (Cb[j].T @ (gam * (Y[i] - Y[j])) - Cb[i].T @ (gam * (Y[j] - Y[i])))
            for j in range(n)) + np.zeros(d_x)
        for i in range(n)
    ])
    H = np.concatenate([
        sum(eta[i, j] * np.outer(Y[j] - Y[i], X[j] - X[i]) for j in range(n)) + np.zeros((d_y, d_x))
        for i in range(n)
    ], axis=1)

    Q = np.zeros((n * d_x, n))
    for i in range(n):
        for j in range(n):
            q = eta[i, j] * gam * (X[i] - X[j])
            if i == j:
                q = q + sum(eta[i, k] * gam * (X[i] - X[k]) for k in range(n))
            Q[j * d_x:(j + 1) * d_x, i] = q

    U_u = np.zeros((n, n * d_x))
    V_v = np.zeros((n, n * d_x))
    for i in range(n):
        for j in range(n):
            U_u[j, i * d_x:(i + 1) * d_x] = eta[i, j] * (X[j] - X[i])
        V_v[i, i * d_x:(i + 1) * d_x] = -sum(eta[i, j] * (X[j] - X[i]) for j in range(n))
    W = U_u + V_v

    Sigma_y = kron_eye(cache.Ltilde, d_y)
    A = A_E.T @ Sigma_y @ A_E
    Gamma = Q @ cache.Ltilde @ Q.T
    return InternalQuadratics(
        A_E=A_E, e=e, f=float(f), b=b, H=H, Q=Q, W=W, U_u=U_u, V_v=V_v,
        A=A, Gamma=Gamma, mu_y=Sigma_y @ e,
    )
