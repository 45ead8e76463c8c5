"""Covariance functions: stationary RBF, the Attentive Kernel, Gibbs and DKL.

Every kernel stores its trainable parameters as one flat unconstrained vector
(positive quantities live in log-space) and can return, alongside the Gram
matrix of a training set, a vector-Jacobian product ``dL/dG -> dL/dparams``.
That is the layout the marginal-likelihood chain rule needs; forming the full
``N x N x P`` Jacobian is only done on request for small problems.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from akgp.nn import (
    DegenerateInputError,
    MLPParams,
    ShapeError,
    init_mlp,
    l2_normalize_rows,
    l2_normalize_rows_vjp,
    mlp_forward,
    mlp_forward_backward,
    softmax_rows,
    softmax_rows_vjp,
)

KERNEL_NAMES = ("rbf", "ak", "ak-weight", "ak-mask", "ak-nnx2", "gibbs", "dkl")


def _as_matrix(X, dim=None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ShapeError(f"expected a 2-D input matrix, got shape {X.shape}")
    if dim is not None and X.shape[1] != dim:
        raise ShapeError(f"input has {X.shape[1]} columns, kernel expects {dim}")
    return X


def sq_distances(X1: np.ndarray, X2: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances via per-dimension differences.

    Differences are formed explicitly (no ``|a|^2 + |b|^2 - 2ab`` expansion)
    so coincident points give exactly zero.
    """
    if X1.shape[1] != X2.shape[1]:
        raise ShapeError(f"column mismatch: {X1.shape[1]} vs {X2.shape[1]}")
    out = np.zeros((X1.shape[0], X2.shape[0]))
    for k in range(X1.shape[1]):
        diff = np.subtract.outer(X1[:, k], X2[:, k])
        out += diff * diff
    return out


@dataclass(frozen=True)
class LengthscaleGrid:
    """``M`` fixed lengthscales evenly spaced over ``[l_min, l_max]``; ``M = 1`` keeps ``l_min``."""

    l_min: float = 0.01
    l_max: float = 0.5
    M: int = 10

    def __post_init__(self):
        if not (0 < self.l_min < self.l_max):
            raise ValueError(f"need 0 < l_min < l_max, got {self.l_min}, {self.l_max}")
        if self.M < 1:
            raise ValueError(f"need M >= 1, got {self.M}")

    @property
    def lengthscales(self) -> np.ndarray:
        return np.linspace(self.l_min, self.l_max, self.M)


class GradBundle:
    """Gram-matrix derivatives, exposed as a vector-Jacobian product."""

    def __init__(self, vjp: Callable[[np.ndarray], np.ndarray], num_params: int, shape):
        self._vjp = vjp
        self.num_params = num_params
        self.shape = shape

    def vjp(self, dG: np.ndarray) -> np.ndarray:
        """Gradient of ``sum(dG * G)`` with respect to the flat parameters."""
        dG = np.asarray(dG, dtype=float)
        if dG.shape != self.shape:
            raise ShapeError(f"upstream {dG.shape} != gram {self.shape}")
        return self._vjp(dG)

    def dense(self) -> np.ndarray:
        """Full Jacobian ``(P, N, N)``; quadratic cost, meant for small N."""
        n1, n2 = self.shape
        jac = np.empty((self.num_params, n1, n2))
        unit = np.zeros(self.shape)
        for i in range(n1):
            for j in range(n2):
                unit[i, j] = 1.0
                jac[:, i, j] = self._vjp(unit)
                unit[i, j] = 0.0
        return jac


class Kernel:
    """Base class. Subclasses implement ``gram``, ``diag`` and ``_gram_vjp``."""

    name = "kernel"
    input_dim: int

    # -- parameters -------------------------------------------------------
    def get_params(self) -> np.ndarray:
        raise NotImplementedError

    def set_params(self, vector: np.ndarray) -> None:
        raise NotImplementedError

    def net_mask(self) -> np.ndarray:
        """Boolean mask over ``get_params()`` marking neural-network entries."""
        raise NotImplementedError

    @property
    def num_params(self) -> int:
        return self.get_params().size

    @property
    def amplitude(self) -> float:
        return float(np.exp(self.log_amplitude))

    # -- evaluation -------------------------------------------------------
    def gram(self, X1, X2=None) -> np.ndarray:
        raise NotImplementedError

    def diag(self, X) -> np.ndarray:
        raise NotImplementedError

    def _gram_vjp(self, X):
        raise NotImplementedError

    def gram_with_grads(self, X) -> tuple[np.ndarray, GradBundle]:
        X = _as_matrix(X, self.input_dim)
        G, vjp = self._gram_vjp(X)
        return G, GradBundle(vjp, self.num_params, G.shape)

    def _pair(self, X1, X2):
        X1 = _as_matrix(X1, self.input_dim)
        X2 = X1 if X2 is None else _as_matrix(X2, self.input_dim)
        return X1, X2


# ---------------------------------------------------------------------------
# RBF
# ---------------------------------------------------------------------------

class RBFKernel(Kernel):
    """``alpha * exp(-|x - x'|^2 / (2 l^2))``; trainable ``log alpha, log l``."""

    name = "rbf"

    def __init__(self, input_dim: int, amplitude: float = 1.0, lengthscale: float = 0.5):
        if amplitude <= 0 or lengthscale <= 0:
            raise ValueError("amplitude and lengthscale must be positive")
        self.input_dim = input_dim
        self.log_amplitude = np.log(amplitude)
        self.log_lengthscale = np.log(lengthscale)

    @property
    def lengthscale(self) -> float:
        return float(np.exp(self.log_lengthscale))

    def get_params(self):
        return np.array([self.log_amplitude, self.log_lengthscale])

    def set_params(self, vector):
        self.log_amplitude, self.log_lengthscale = (float(v) for v in vector)

    def net_mask(self):
        return np.zeros(2, dtype=bool)

    def gram(self, X1, X2=None):
        X1, X2 = self._pair(X1, X2)
        d2 = sq_distances(X1, X2)
        return self.amplitude * np.exp(d2 * (-0.5 / self.lengthscale ** 2))

    def diag(self, X):
        return np.full(_as_matrix(X, self.input_dim).shape[0], self.amplitude)

    def _gram_vjp(self, X):
        d2 = sq_distances(X, X)
        scaled = d2 / self.lengthscale ** 2
        G = self.amplitude * np.exp(-0.5 * scaled)

        def vjp(dG):
            H = dG * G
            return np.array([H.sum(), np.sum(H * scaled)])

        return G, vjp


def rbf_gram(kernel: RBFKernel, X1, X2=None) -> np.ndarray:
    return kernel.gram(X1, X2)


def base_kernel_stack(grid: LengthscaleGrid, X1, X2=None) -> list[np.ndarray]:
    """Unit-amplitude RBF Gram matrices, one per grid lengthscale.

    All ``M`` matrices share one pairwise squared-distance computation.
    """
    X1 = _as_matrix(X1)
    X2 = X1 if X2 is None else _as_matrix(X2)
    d2 = sq_distances(X1, X2)
    return [np.exp(d2 * (-0.5 / ell ** 2)) for ell in grid.lengthscales]


# ---------------------------------------------------------------------------
# Attentive Kernel
# ---------------------------------------------------------------------------

def combine_attention(amplitude, lengthscales, w1, w2, z1, z2, d2) -> np.ndarray:
    """Attentive-kernel matrix from per-row weight/membership vectors.

    ``w1 (N1, M)``, ``w2 (N2, M)`` weight base kernels; ``None`` means uniform
    weights ``1/sqrt(M)``.  ``z1``, ``z2`` form the visibility mask
    ``z1 @ z2.T``; ``None`` means an all-ones mask.  ``d2`` holds pairwise
    squared distances.
    """
    M = len(lengthscales)
    S = np.zeros_like(d2)
    buf = np.empty_like(d2)
    for m, ell in enumerate(lengthscales):
        np.multiply(d2, -0.5 / ell ** 2, out=buf)
        np.exp(buf, out=buf)
        if w1 is not None:
            buf *= w1[:, m, None]
            buf *= w2[None, :, m]
        S += buf
    if w1 is None:
        S /= M
    if z1 is not None:
        S *= z1 @ z2.T
    S *= amplitude
    return S


AK_VARIANTS = ("full", "weight", "mask", "nnx2")


class AttentiveKernel(Kernel):
    """Attentive Kernel over a fixed grid of RBF base kernels.

    ``ak(x, x') = alpha * <z(x), z(x')> * sum_m w_m(x) k_m(x, x') w_m(x')``
    where ``w`` and ``z`` are softmax outputs of a small network, each
    rescaled to unit Euclidean norm.

    Variants
    --------
    full:   one shared network produces both ``w`` and ``z``.
    weight: lengthscale selection only (visibility mask fixed to ones).
    mask:   instance selection only (uniform weights ``1/sqrt(M)``).
    nnx2:   ``w`` from ``net``, ``z`` from ``second_net``.
    """

    name = "ak"

    def __init__(self, input_dim: int, grid: LengthscaleGrid, net: MLPParams,
                 amplitude: float = 1.0, variant: str = "full",
                 second_net: MLPParams | None = None):
        if variant not in AK_VARIANTS:
            raise ValueError(f"unknown AK variant {variant!r}")
        if amplitude <= 0:
            raise ValueError("amplitude must be positive")
        if net.out_dim != grid.M or net.in_dim != input_dim:
            raise ShapeError("network must map input_dim -> M")
        if variant == "nnx2":
            if second_net is None or second_net.out_dim != grid.M or second_net.in_dim != input_dim:
                raise ShapeError("nnx2 variant needs a second network mapping input_dim -> M")
        else:
            second_net = None
        self.input_dim = input_dim
        self.grid = grid
        self.net = net
        self.second_net = second_net
        self.variant = variant
        self.log_amplitude = float(np.log(amplitude))
        self.name = "ak" if variant == "full" else f"ak-{variant}"

    # parameters: [log alpha, net..., second_net...]
    def get_params(self):
        parts = [np.array([self.log_amplitude]), self.net.flatten()]
        if self.second_net is not None:
            parts.append(self.second_net.flatten())
        return np.concatenate(parts)

    def set_params(self, vector):
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (self.num_params,):
            raise ShapeError(f"expected {self.num_params} parameters, got {vector.shape}")
        self.log_amplitude = float(vector[0])
        n = self.net.size
        self.net = self.net.unflatten(vector[1:1 + n])
        if self.second_net is not None:
            self.second_net = self.second_net.unflatten(vector[1 + n:])

    @property
    def num_params(self):
        return 1 + self.net.size + (self.second_net.size if self.second_net is not None else 0)

    def net_mask(self):
        mask = np.ones(self.num_params, dtype=bool)
        mask[0] = False
        return mask

    # attention vectors --------------------------------------------------
    def _attention(self, X, with_backward=False):
        """Unit-norm weight and membership rows, optionally with a pullback.

        Returns ``(w_bar, z_bar)`` where either may be ``None`` meaning the
        variant fixes it (uniform weights / all-ones mask).
        """
        raw_w, back_w = mlp_forward_backward(self.net, X)
        if self.second_net is not None:
            raw_z, back_z = mlp_forward_backward(self.second_net, X)
        else:
            raw_z, back_z = raw_w, None

        p_w = softmax_rows(raw_w)
        w_bar = l2_normalize_rows(p_w)
        p_z = p_w if back_z is None else softmax_rows(raw_z)
        z_bar = w_bar if back_z is None else l2_normalize_rows(p_z)

        if self.variant == "weight":
            z_bar = None
        elif self.variant == "mask":
            w_bar = None
        if not with_backward:
            return w_bar, z_bar

        def backward(g_wbar, g_zbar):
            g_raw_w = np.zeros_like(raw_w)
            g_raw_z = np.zeros_like(raw_z)
            if g_wbar is not None:
                unit = l2_normalize_rows(p_w)
                g_raw_w += softmax_rows_vjp(p_w, l2_normalize_rows_vjp(p_w, unit, g_wbar))
            if g_zbar is not None:
                unit = l2_normalize_rows(p_z)
                g = softmax_rows_vjp(p_z, l2_normalize_rows_vjp(p_z, unit, g_zbar))
                if back_z is None:
                    g_raw_w += g
                else:
                    g_raw_z += g
            parts = [back_w(g_raw_w).flatten()]
            if back_z is not None:
                parts.append(back_z(g_raw_z).flatten())
            return np.concatenate(parts)

        return w_bar, z_bar, backward

    def attention(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Normalized weight and membership vectors per input row (for maps)."""
        X = _as_matrix(X, self.input_dim)
        w_bar, z_bar = self._attention(X)
        n, M = X.shape[0], self.grid.M
        if w_bar is None:
            w_bar = np.full((n, M), 1.0 / np.sqrt(M))
        if z_bar is None:
            z_bar = np.full((n, M), 1.0 / np.sqrt(M))
        return w_bar, z_bar

    def gram(self, X1, X2=None):
        X1, X2 = self._pair(X1, X2)
        w1, z1 = self._attention(X1)
        w2, z2 = (w1, z1) if X2 is X1 else self._attention(X2)
        return combine_attention(self.amplitude, self.grid.lengthscales, w1, w2, z1, z2,
                                 sq_distances(X1, X2))

    def diag(self, X):
        X = _as_matrix(X, self.input_dim)
        w, z = self._attention(X)
        ww = 1.0 if w is None else np.sum(w * w, axis=1)
        zz = 1.0 if z is None else np.sum(z * z, axis=1)
        return self.amplitude * ww * zz * np.ones(X.shape[0])

    def _gram_vjp(self, X):
        w, z, backward = self._attention(X, with_backward=True)
        d2 = sq_distances(X, X)
        stack = [np.exp(d2 * (-0.5 / ell ** 2)) for ell in self.grid.lengthscales]
        M = self.grid.M
        if w is None:
            S = sum(stack) / M
        else:
            S = np.zeros_like(d2)
            for m, K in enumerate(stack):
                S += np.outer(w[:, m], w[:, m]) * K
        O = None if z is None else z @ z.T
        alpha = self.amplitude
        G = alpha * (S if O is None else O * S)

        def vjp(dG):
            g_log_alpha = np.sum(dG * G)
            g_w = g_z = None
            if O is not None:
                dO = alpha * dG * S
                g_z = (dO + dO.T) @ z
            if w is not None:
                dS = alpha * dG if O is None else alpha * dG * O
                g_w = np.empty_like(w)
                for m, K in enumerate(stack):
                    A = dS * K
                    g_w[:, m] = (A + A.T) @ w[:, m]
            return np.concatenate([[g_log_alpha], backward(g_w, g_z)])

        return G, vjp


def ak_gram(kernel: AttentiveKernel, X1, X2=None) -> np.ndarray:
    return kernel.gram(X1, X2)


# ---------------------------------------------------------------------------
# Gibbs
# ---------------------------------------------------------------------------

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class GibbsKernel(Kernel):
    """Gibbs kernel with a scalar, network-valued lengthscale function.

    ``l(x) = l_min + (l_max - l_min) * sigmoid(net(x))`` and

    ``k = alpha * (2 l l' / (l^2 + l'^2))^(D/2) * exp(-|x - x'|^2 / (l^2 + l'^2))``.
    """

    name = "gibbs"

    def __init__(self, input_dim: int, net: MLPParams, amplitude: float = 1.0,
                 l_min: float = 0.01, l_max: float = 0.5):
        if net.out_dim != 1 or net.in_dim != input_dim:
            raise ShapeError("Gibbs lengthscale network must map input_dim -> 1")
        if not (0 < l_min < l_max):
            raise ValueError("need 0 < l_min < l_max")
        self.input_dim = input_dim
        self.net = net
        self.l_min, self.l_max = l_min, l_max
        self.log_amplitude = float(np.log(amplitude))

    def get_params(self):
        return np.concatenate([[self.log_amplitude], self.net.flatten()])

    def set_params(self, vector):
        vector = np.asarray(vector, dtype=float)
        self.log_amplitude = float(vector[0])
        self.net = self.net.unflatten(vector[1:])

    def net_mask(self):
        mask = np.ones(1 + self.net.size, dtype=bool)
        mask[0] = False
        return mask

    def lengthscale(self, X) -> np.ndarray:
        X = _as_matrix(X, self.input_dim)
        return self.l_min + (self.l_max - self.l_min) * _sigmoid(mlp_forward(self.net, X)[:, 0])

    def _from_lengthscales(self, l1, l2, d2):
        s = np.add.outer(l1 ** 2, l2 ** 2)
        prefactor = (2.0 * np.outer(l1, l2) / s) ** (0.5 * self.input_dim)
        return self.amplitude * prefactor * np.exp(-d2 / s), s

    def gram(self, X1, X2=None):
        X1, X2 = self._pair(X1, X2)
        l1 = self.lengthscale(X1)
        l2 = l1 if X2 is X1 else self.lengthscale(X2)
        return self._from_lengthscales(l1, l2, sq_distances(X1, X2))[0]

    def diag(self, X):
        return np.full(_as_matrix(X, self.input_dim).shape[0], self.amplitude)

    def _gram_vjp(self, X):
        raw, back = mlp_forward_backward(self.net, X)
        sig = _sigmoid(raw[:, 0])
        ell = self.l_min + (self.l_max - self.l_min) * sig
        d2 = sq_distances(X, X)
        G, s = self._from_lengthscales(ell, ell, d2)
        half_d = 0.5 * self.input_dim

        def vjp(dG):
            H = dG * G
            # d log G / d l_i for the row role; the column role is its transpose
            row = half_d * (1.0 / ell[:, None] - 2.0 * ell[:, None] / s) + 2.0 * d2 * ell[:, None] / s ** 2
            col = half_d * (1.0 / ell[None, :] - 2.0 * ell[None, :] / s) + 2.0 * d2 * ell[None, :] / s ** 2
            g_ell = np.sum(H * row, axis=1) + np.sum(H * col, axis=0)
            g_raw = (g_ell * (self.l_max - self.l_min) * sig * (1.0 - sig))[:, None]
            return np.concatenate([[H.sum()], back(g_raw).flatten()])

        return G, vjp


def gibbs_gram(kernel: GibbsKernel, X1, X2=None) -> np.ndarray:
    return kernel.gram(X1, X2)


# ---------------------------------------------------------------------------
# Deep kernel learning
# ---------------------------------------------------------------------------

class DKLKernel(Kernel):
    """RBF kernel on features produced by a two-hidden-layer network."""

    name = "dkl"

    def __init__(self, input_dim: int, net: MLPParams, amplitude: float = 1.0,
                 lengthscale: float = 1.0):
        if net.in_dim != input_dim:
            raise ShapeError("DKL network must accept input_dim columns")
        self.input_dim = input_dim
        self.net = net
        self.log_amplitude = float(np.log(amplitude))
        self.log_lengthscale = float(np.log(lengthscale))

    @property
    def lengthscale(self) -> float:
        return float(np.exp(self.log_lengthscale))

    def get_params(self):
        return np.concatenate([[self.log_amplitude, self.log_lengthscale], self.net.flatten()])

    def set_params(self, vector):
        vector = np.asarray(vector, dtype=float)
        self.log_amplitude = float(vector[0])
        self.log_lengthscale = float(vector[1])
        self.net = self.net.unflatten(vector[2:])

    def net_mask(self):
        mask = np.ones(2 + self.net.size, dtype=bool)
        mask[:2] = False
        return mask

    def features(self, X) -> np.ndarray:
        return mlp_forward(self.net, _as_matrix(X, self.input_dim))

    def gram(self, X1, X2=None):
        X1, X2 = self._pair(X1, X2)
        F1 = self.features(X1)
        F2 = F1 if X2 is X1 else self.features(X2)
        return self.amplitude * np.exp(sq_distances(F1, F2) * (-0.5 / self.lengthscale ** 2))

    def diag(self, X):
        return np.full(_as_matrix(X, self.input_dim).shape[0], self.amplitude)

    def _gram_vjp(self, X):
        F, back = mlp_forward_backward(self.net, X)
        inv_l2 = 1.0 / self.lengthscale ** 2
        d2 = sq_distances(F, F)
        G = self.amplitude * np.exp(-0.5 * d2 * inv_l2)

        def vjp(dG):
            H = dG * G
            B = H + H.T
            g_F = -inv_l2 * (B.sum(axis=1)[:, None] * F - B @ F)
            return np.concatenate([[H.sum(), np.sum(H * d2) * inv_l2], back(g_F).flatten()])

        return G, vjp


def dkl_gram(kernel: DKLKernel, X1, X2=None) -> np.ndarray:
    return kernel.gram(X1, X2)


def gram_with_grads(kernel: Kernel, X) -> tuple[np.ndarray, GradBundle]:
    return kernel.gram_with_grads(X)


# ---------------------------------------------------------------------------
# Factory
# ---------------------------------------------------------------------------

@dataclass
class KernelConfig:
    """Construction options shared by all kernels."""

    M: int = 10
    H: int = 10
    l_min: float = 0.01
    l_max: float = 0.5
    amplitude: float = 1.0
    rbf_lengthscale: float = 0.5
    dkl_lengthscale: float = 1.0
    dkl_feature_dim: int | None = None
    extra: dict = field(default_factory=dict)


def make_kernel(name: str, input_dim: int, config: KernelConfig | None = None,
                rng: np.random.Generator | None = None) -> Kernel:
    """Build a kernel by config name (``rbf``, ``ak``, ``ak-weight`` ...)."""
    config = config or KernelConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    if name == "rbf":
        return RBFKernel(input_dim, config.amplitude, config.rbf_lengthscale)
    if name == "ak" or name.startswith("ak-"):
        variant = "full" if name == "ak" else name[3:]
        if variant not in AK_VARIANTS[1:] and name != "ak":
            raise ValueError(f"unknown kernel {name!r}; choose from {KERNEL_NAMES}")
        grid = LengthscaleGrid(config.l_min, config.l_max, config.M)
        net = init_mlp(input_dim, config.H, config.M, rng)
        second = init_mlp(input_dim, config.H, config.M, rng) if variant == "nnx2" else None
        return AttentiveKernel(input_dim, grid, net, config.amplitude, variant, second)
    if name == "gibbs":
        net = init_mlp(input_dim, config.H, 1, rng)
        return GibbsKernel(input_dim, net, config.amplitude, config.l_min, config.l_max)
    if name == "dkl":
        feature_dim = config.dkl_feature_dim or input_dim
        net = init_mlp(input_dim, config.H, feature_dim, rng)
        return DKLKernel(input_dim, net, config.amplitude, config.dkl_lengthscale)
    raise ValueError(f"unknown kernel {name!r}; choose from {KERNEL_NAMES}")


__all__ = [
    "AttentiveKernel", "DKLKernel", "DegenerateInputError", "GibbsKernel", "GradBundle",
    "Kernel", "KernelConfig", "LengthscaleGrid", "RBFKernel", "ak_gram", "base_kernel_stack",
    "dkl_gram", "gibbs_gram", "gram_with_grads", "make_kernel", "rbf_gram", "sq_distances",
]
