"""Exact Gaussian-process regression.

Training inputs are expected normalized and targets standardized by the
caller; the model itself only knows about a kernel, a noise scale and data.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from akgp.kernels import (
    AttentiveKernel,
    DKLKernel,
    GibbsKernel,
    Kernel,
    LengthscaleGrid,
    RBFKernel,
)
from akgp.nn import MLPParams, ShapeError

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class IllConditionedError(np.linalg.LinAlgError):
    """Cholesky factorization failed even at the largest jitter."""


class OptimizationError(RuntimeError):
    """Optimization hit a non-finite objective; parameters were rolled back."""


@dataclass
class Prediction:
    mean: np.ndarray
    variance: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)


class Adam:
    """Adam ascent with a per-parameter learning-rate vector."""

    def __init__(self, lr: np.ndarray, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = np.asarray(lr, dtype=float)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros_like(self.lr)
        self.v = np.zeros_like(self.lr)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad ** 2
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params + self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class GPRModel:
    """GP regression with a zero mean function and Gaussian noise.

    Parameters are ``[log sigma, *kernel.get_params()]``.  A Cholesky factor of
    ``K + (sigma^2 + jitter) I`` is cached until data or parameters change.
    """

    def __init__(self, kernel: Kernel, noise: float = 0.1, X=None, y=None,
                 jitter_start: float = 1e-8, jitter_max: float = 1e-4):
        if noise <= 0:
            raise ValueError("noise scale must be positive")
        self.kernel = kernel
        self.log_noise = float(np.log(noise))
        self.jitter_start = jitter_start
        self.jitter_max = jitter_max
        self.X_train = np.zeros((0, kernel.input_dim))
        self.y_train = np.zeros(0)
        self.last_clamp = 0.0
        self._cache = None
        self._adam: Adam | None = None
        if X is not None:
            self.add_data(X, y)

    # -- state ------------------------------------------------------------
    @property
    def noise(self) -> float:
        return float(np.exp(self.log_noise))

    @property
    def noise_variance(self) -> float:
        return float(np.exp(2.0 * self.log_noise))

    @property
    def num_train(self) -> int:
        return self.X_train.shape[0]

    def get_params(self) -> np.ndarray:
        return np.concatenate([[self.log_noise], self.kernel.get_params()])

    def set_params(self, vector) -> None:
        vector = np.asarray(vector, dtype=float)
        self.log_noise = float(vector[0])
        self.kernel.set_params(vector[1:])
        self._cache = None

    def net_mask(self) -> np.ndarray:
        return np.concatenate([[False], self.kernel.net_mask()])

    def add_data(self, X_new, y_new) -> "GPRModel":
        X_new = np.asarray(X_new, dtype=float).reshape(-1, self.kernel.input_dim)
        y_new = np.asarray(y_new, dtype=float).ravel()
        if X_new.shape[0] != y_new.shape[0]:
            raise ShapeError(f"{X_new.shape[0]} inputs but {y_new.shape[0]} targets")
        if X_new.shape[0] == 0:
            return self
        self.X_train = np.vstack([self.X_train, X_new])
        self.y_train = np.concatenate([self.y_train, y_new])
        self._cache = None
        return self

    # -- factorization ----------------------------------------------------
    def _factorize(self, K: np.ndarray):
        """Cholesky of ``K + sigma^2 I`` with escalating relative jitter.

        Returns ``(L, rel)``; the absolute jitter is ``rel * mean(diag(K + sigma^2 I))``.
        The first attempt uses no jitter at all, so well-posed systems are solved exactly.
        """
        n = K.shape[0]
        A = K.copy()
        A[np.diag_indices(n)] += self.noise_variance
        scale = float(np.mean(np.diag(A)))
        jitter = 0.0
        while True:
            B = A.copy()
            B[np.diag_indices(n)] += jitter * scale
            try:
                return np.linalg.cholesky(B), jitter
            except np.linalg.LinAlgError:
                if jitter >= self.jitter_max:
                    raise IllConditionedError(
                        f"Cholesky failed for N={n} with jitter up to {jitter * scale:.3g}")
                jitter = self.jitter_start if jitter == 0.0 else jitter * 10.0
                log.debug("escalating jitter to %.1e", jitter)

    def _factor(self):
        if self.num_train == 0:
            raise ValueError("model has no training data")
        if self._cache is None:
            K = self.kernel.gram(self.X_train)
            L, jitter = self._factorize(K)
            weights = cho_solve((L, True), self.y_train)
            self._cache = (L, weights, jitter)
        return self._cache

    @property
    def chol(self) -> np.ndarray:
        return self._factor()[0]

    # -- inference --------------------------------------------------------
    def predict(self, X_query, include_noise: bool = False,
                chunk_size: int = 4096) -> Prediction:
        """Posterior mean and variance of the latent function (or of ``y``)."""
        X_query = np.asarray(X_query, dtype=float).reshape(-1, self.kernel.input_dim)
        L, weights, _ = self._factor()
        means, variances = [], []
        for start in range(0, X_query.shape[0], chunk_size):
            Xq = X_query[start:start + chunk_size]
            Ks = self.kernel.gram(self.X_train, Xq)
            means.append(Ks.T @ weights)
            V = solve_triangular(L, Ks, lower=True, check_finite=False)
            variances.append(self.kernel.diag(Xq) - np.einsum("ij,ij->j", V, V))
        mean = np.concatenate(means) if means else np.zeros(0)
        var = np.concatenate(variances) if variances else np.zeros(0)
        self.last_clamp = float(max(0.0, -var.min())) if var.size else 0.0
        if self.last_clamp > 0.0:
            log.debug("clamped negative predictive variance of magnitude %.3g", self.last_clamp)
            var = np.maximum(var, 0.0)
        if include_noise:
            var = var + self.noise_variance
        return Prediction(mean, var)

    def log_marginal_likelihood(self) -> float:
        L, weights, _ = self._factor()
        n = self.num_train
        return float(-0.5 * self.y_train @ weights - np.sum(np.log(np.diag(L)))
                     - 0.5 * n * np.log(2.0 * np.pi))

    def lml_and_grad(self) -> tuple[float, np.ndarray]:
        """Log marginal likelihood and its gradient w.r.t. ``get_params()``."""
        if self.num_train == 0:
            raise ValueError("model has no training data")
        G, bundle = self.kernel.gram_with_grads(self.X_train)
        L, jitter = self._factorize(G)
        weights = cho_solve((L, True), self.y_train)
        self._cache = (L, weights, jitter)
        n = self.num_train
        lml = float(-0.5 * self.y_train @ weights - np.sum(np.log(np.diag(L)))
                    - 0.5 * n * np.log(2.0 * np.pi))
        K_inv = cho_solve((L, True), np.eye(n))
        dK = 0.5 * (np.outer(weights, weights) - K_inv)
        tr = np.trace(dK)
        # jitter scales with mean(diag(G)) + sigma^2, so it carries gradient too
        g_noise = 2.0 * self.noise_variance * tr * (1.0 + jitter)
        dK[np.diag_indices(n)] += jitter * tr / n
        return lml, np.concatenate([[g_noise], bundle.vjp(dK)])

    # -- training ---------------------------------------------------------
    def reset_optimizer(self) -> None:
        self._adam = None

    def optimize(self, num_iters: int, lr_hyper: float = 1e-2, lr_net: float = 1e-3,
                 halve_on_decrease: bool = False, callback=None) -> list[float]:
        """Run ``num_iters`` Adam ascent steps on the log marginal likelihood.

        Returns the per-iteration LML trace (value before each step).  Adam
        moment estimates persist across calls so the epoch-by-epoch training
        rule behaves like one long optimization.  ``callback(model, it)`` runs
        after each step.
        """
        if num_iters < 0:
            raise ValueError("num_iters must be non-negative")
        trace: list[float] = []
        if num_iters == 0:
            return trace
        lr = np.where(self.net_mask(), lr_net, lr_hyper)
        if self._adam is None or self._adam.lr.shape != lr.shape:
            self._adam = Adam(lr)
        else:
            self._adam.lr = lr
        params = self.get_params()
        try:
            value, grad = self.lml_and_grad()
        except np.linalg.LinAlgError as err:
            raise OptimizationError(f"initial factorization failed: {err}") from err
        for it in range(num_iters):
            if not (np.isfinite(value) and np.all(np.isfinite(grad))):
                self.set_params(params)
                raise OptimizationError(
                    f"non-finite objective at iteration {it}: lml={value}, "
                    f"finite grads={np.isfinite(grad).sum()}/{grad.size}; rolled back")
            if not halve_on_decrease:
                trace.append(value)
                params = self.get_params()
                self.set_params(self._adam.step(params, grad))
                try:
                    value, grad = self.lml_and_grad()
                except np.linalg.LinAlgError:
                    value, grad = np.nan, np.full_like(grad, np.nan)
            else:
                trace.append(value)
                params = self.get_params()
                state = (self._adam.m.copy(), self._adam.v.copy(), self._adam.t)
                self.set_params(self._adam.step(params, grad))
                try:
                    new_value, new_grad = self.lml_and_grad()
                except np.linalg.LinAlgError:
                    new_value, new_grad = -np.inf, grad
                if np.isfinite(new_value) and new_value >= value:
                    value, grad = new_value, new_grad
                else:
                    self._adam.m, self._adam.v, self._adam.t = state
                    self._adam.lr = self._adam.lr * 0.5
                    self.set_params(params)
                    self._cache = None
            if callback is not None:
                callback(self, it)
        if not np.isfinite(value):
            self.set_params(params)
            raise OptimizationError("non-finite objective after final step; rolled back")
        return trace


# -- module-level API mirroring the operation names --------------------------

def add_data(model: GPRModel, X_new, y_new) -> GPRModel:
    return model.add_data(X_new, y_new)


def predict(model: GPRModel, X_query) -> Prediction:
    return model.predict(X_query)


def log_marginal_likelihood(model: GPRModel) -> float:
    return model.log_marginal_likelihood()


def lml_gradients(model: GPRModel) -> np.ndarray:
    return model.lml_and_grad()[1]


def optimize(model: GPRModel, num_iters: int, lr_hyper: float = 1e-2,
             lr_net: float = 1e-3) -> tuple[GPRModel, list[float]]:
    trace = model.optimize(num_iters, lr_hyper, lr_net)
    return model, trace


# -- checkpoints ---------------------------------------------------------------

def _mlp_layout(net: MLPParams | None):
    if net is None:
        return None
    return {"in_dim": net.in_dim, "hidden_dim": net.hidden_dim, "out_dim": net.out_dim}


def _empty_mlp(layout) -> MLPParams:
    dims = [layout["in_dim"], layout["hidden_dim"], layout["hidden_dim"], layout["out_dim"]]
    return MLPParams([np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])],
                     [np.zeros(b) for b in dims[1:]])


def describe_kernel(kernel: Kernel) -> dict:
    desc = {"name": kernel.name, "input_dim": kernel.input_dim}
    if isinstance(kernel, AttentiveKernel):
        desc.update(l_min=kernel.grid.l_min, l_max=kernel.grid.l_max, M=kernel.grid.M,
                    variant=kernel.variant, net=_mlp_layout(kernel.net),
                    second_net=_mlp_layout(kernel.second_net))
    elif isinstance(kernel, GibbsKernel):
        desc.update(l_min=kernel.l_min, l_max=kernel.l_max, net=_mlp_layout(kernel.net))
    elif isinstance(kernel, DKLKernel):
        desc.update(net=_mlp_layout(kernel.net))
    return desc


def kernel_from_description(desc: dict) -> Kernel:
    name, dim = desc["name"], desc["input_dim"]
    if name == "rbf":
        return RBFKernel(dim)
    if name.startswith("ak"):
        grid = LengthscaleGrid(desc["l_min"], desc["l_max"], desc["M"])
        second = desc.get("second_net")
        return AttentiveKernel(dim, grid, _empty_mlp(desc["net"]), variant=desc["variant"],
                               second_net=_empty_mlp(second) if second else None)
    if name == "gibbs":
        return GibbsKernel(dim, _empty_mlp(desc["net"]), l_min=desc["l_min"], l_max=desc["l_max"])
    if name == "dkl":
        return DKLKernel(dim, _empty_mlp(desc["net"]))
    raise ValueError(f"unknown kernel {name!r} in checkpoint")


def save_checkpoint(model: GPRModel, path, normalizer: dict | None = None) -> None:
    """Write a versioned JSON checkpoint; floats keep full precision via repr."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "kernel": describe_kernel(model.kernel),
        "params": model.get_params().tolist(),
        "normalizer": normalizer,
        "X_train": model.X_train.tolist(),
        "y_train": model.y_train.tolist(),
    }
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path) -> tuple[GPRModel, dict | None]:
    payload = json.loads(Path(path).read_text())
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    kernel = kernel_from_description(payload["kernel"])
    model = GPRModel(kernel)
    model.set_params(np.array(payload["params"]))
    X = np.array(payload["X_train"], dtype=float).reshape(-1, kernel.input_dim)
    model.add_data(X, np.array(payload["y_train"], dtype=float))
    return model, payload.get("normalizer")
