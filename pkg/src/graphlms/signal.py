"""Streaming graph-signal sources and observation synthesis.

Every stream owns a counter-based (Philox) generator, so a stream rebuilt
from the same seed replays bit-for-bit and runs seeded with distinct keys are
independent.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .adapt import FilterModel
from .errors import ConvergenceError, PreconditionError, UnstableError
from .graph import spectral_radius
from .regressor import centralized_regressor

LYAPUNOV_TOL = 1e-10
DIRECT_LYAPUNOV_MAX_N = 80


def make_rng(seed) -> np.random.Generator:
    """Philox generator from an int, a sequence of ints or a SeedSequence."""
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


@dataclass
class SignalStatistics:
    """Second-order description of a wide-sense stationary graph signal.

    ``autocorr(tau)`` returns ``R_x(tau) = E{x(i) x(i - tau)^T}`` for
    ``tau >= 0``.
    """

    rx0: np.ndarray
    autocorr: Callable[[int], np.ndarray]
    rxy: Callable[[int], np.ndarray] | None = None
    gft: np.ndarray | None = None


def white_statistics(rx0, gft=None) -> SignalStatistics:
    rx0 = np.asarray(rx0, dtype=float)
    zero = np.zeros_like(rx0)
    return SignalStatistics(rx0, lambda tau: rx0 if tau == 0 else zero, gft=gft)


def ar_statistics(s) -> SignalStatistics:
    s = np.asarray(s, dtype=float)
    rx0 = solve_lyapunov(s)
    return SignalStatistics(rx0, lambda tau: np.linalg.matrix_power(s, tau) @ rx0)


@dataclass
class NoiseModel:
    variances: np.ndarray

    def __post_init__(self):
        self.variances = np.asarray(self.variances, dtype=float)
        if np.any(self.variances < 0):
            raise PreconditionError("noise variances must be nonnegative")

    def draw(self, rng, steps: int | None = None) -> np.ndarray:
        shape = (len(self.variances),) if steps is None else (steps, len(self.variances))
        return np.sqrt(self.variances) * rng.standard_normal(shape)


class GraphSignalSource:
    """Base stream: ``next()`` yields ``x(i)``, ``take(T)`` a ``(T, N)`` block."""

    n_nodes: int

    def __init__(self, seed):
        self.rng = make_rng(seed)

    def take(self, steps: int) -> np.ndarray:
        raise NotImplementedError

    def next(self) -> np.ndarray:
        return self.take(1)[0]

    def __iter__(self):
        while True:
            yield self.next()

    def statistics(self) -> SignalStatistics:
        raise NotImplementedError


class WhiteGaussianSource(GraphSignalSource):
    """Temporally white Gaussian signal ``x(i) = V diag(sigma) n(i)``."""

    def __init__(self, sigma2, seed, v=None):
        super().__init__(seed)
        self.sigma = np.sqrt(np.asarray(sigma2, dtype=float))
        self.n_nodes = len(self.sigma)
        self.v = None if v is None else np.asarray(v, dtype=float)

    def take(self, steps: int) -> np.ndarray:
        x = self.sigma * self.rng.standard_normal((steps, self.n_nodes))
        return x if self.v is None else x @ self.v.T

    def statistics(self) -> SignalStatistics:
        if self.v is None:
            return white_statistics(np.diag(self.sigma**2))
        return white_statistics(self.v @ np.diag(self.sigma**2) @ self.v.T, gft=self.v)


def iid_gaussian_source(variances, seed) -> WhiteGaussianSource:
    variances = np.asarray(variances, dtype=float)
    if np.any(variances <= 0):
        raise PreconditionError("variances must be positive")
    return WhiteGaussianSource(variances, seed)


def vertex_correlated_source(sigma2, v, seed) -> WhiteGaussianSource:
    v = np.asarray(v, dtype=float)
    if v.shape[0] != v.shape[1] or not np.allclose(v.T @ v, np.eye(v.shape[0]), atol=1e-10):
        raise PreconditionError("V must be orthonormal")
    return WhiteGaussianSource(sigma2, seed, v=v)


class ARSource(GraphSignalSource):
    """``x(i) = S x(i-1) + w(i)`` started from its stationary law."""

    def __init__(self, s, seed):
        super().__init__(seed)
        self.s = np.asarray(s, dtype=float)
        if spectral_radius(self.s) >= 1:
            raise UnstableError("AR source needs rho(S) < 1")
        self.n_nodes = self.s.shape[0]
        self.rx0 = solve_lyapunov(self.s)
        self._chol = np.linalg.cholesky(self.rx0)
        self.x = None

    def take(self, steps: int) -> np.ndarray:
        w = self.rng.standard_normal((steps, self.n_nodes))
        out = np.empty((steps, self.n_nodes))
        start = 0
        if self.x is None:
            self.x = self._chol @ w[0]
            out[0] = self.x
            start = 1
        for t in range(start, steps):
            self.x = self.s @ self.x + w[t]
            out[t] = self.x
        return out

    def statistics(self) -> SignalStatistics:
        s, rx0 = self.s, self.rx0
        return SignalStatistics(rx0, lambda tau: np.linalg.matrix_power(s, tau) @ rx0)


def ar_time_vertex_source(s, seed) -> ARSource:
    return ARSource(s, seed)


def solve_lyapunov(s, method: str = "auto", max_iter: int = 1_000_000) -> np.ndarray:
    """Solve ``S R S^T - R + I = 0`` for a stable ``S``.

    ``direct`` solves ``(I - S kron S) vec(R) = vec(I)``; ``fixed-point``
    iterates ``R <- S R S^T + I`` from ``R = I``. ``auto`` picks direct for
    ``N <= 80``.
    """
    s = np.atleast_2d(np.asarray(s, dtype=float))
    n = s.shape[0]
    if spectral_radius(s) >= 1:
        raise UnstableError("Lyapunov equation needs rho(S) < 1")
    eye = np.eye(n)
    if method == "auto":
        method = "direct" if n <= DIRECT_LYAPUNOV_MAX_N else "fixed-point"
    if method == "direct":
        vec = np.linalg.solve(np.eye(n * n) - np.kron(s, s), eye.ravel(order="F"))
        r = vec.reshape((n, n), order="F")
        r = 0.5 * (r + r.T)
    elif method == "fixed-point":
        r = eye.copy()
        for _ in range(max_iter):
            nxt = s @ r @ s.T + eye
            done = np.linalg.norm(nxt - r) <= 1e-3 * LYAPUNOV_TOL * np.linalg.norm(nxt)
            r = nxt
            if done:
                break
    else:
        raise PreconditionError(f"unknown method {method!r}")
    residual = np.linalg.norm(s @ r @ s.T - r + eye) / np.linalg.norm(r)
    if residual >= LYAPUNOV_TOL:
        raise ConvergenceError(f"Lyapunov residual {residual:.3e} above {LYAPUNOV_TOL}")
    return r


class ObservationStream:
    """Synthesizes ``y(i) = sum_m diag(h^(m)) S^m x(i-m) + v(i)``.

    The input delay line is zero primed, so the first ``M - 1`` outputs see
    ``x(i) = 0`` for ``i < 0``. With ``sample_mask`` the filter input is
    ``diag(mask) x(i)``.
    """

    def __init__(self, filt: FilterModel, s, source: GraphSignalSource, noise: NoiseModel,
                 seed, sample_mask=None, x_history=None):
        self.filter = filt
        self.s = np.asarray(s, dtype=float)
        self.source = source
        self.noise = noise
        self.rng = make_rng(seed)
        self.mask = None if sample_mask is None else np.asarray(sample_mask, dtype=float)
        n = self.s.shape[0]
        self.bank = filt.bank(n)
        if x_history is None:
            x_history = np.zeros((filt.order - 1, n))
        x_history = np.asarray(x_history, dtype=float).reshape(-1, n)
        if x_history.shape[0] != filt.order - 1:
            raise PreconditionError(
                f"filter of order {filt.order} needs {filt.order - 1} past inputs, "
                f"got {x_history.shape[0]}"
            )
        # trailing slot is rolled to the front and overwritten by x(i)
        self.x_history = np.vstack([x_history, np.zeros((1, n))])
        self.y = None
        self.i = -1

    def step(self) -> np.ndarray:
        x = self.source.next()
        if self.mask is not None:
            x = self.mask * x
        self.x_history = np.roll(self.x_history, 1, axis=0)
        self.x_history[0] = x
        z = centralized_regressor(self.s, self.x_history)
        self.y = np.einsum("km,km->k", z, self.bank) + self.noise.draw(self.rng)
        self.i += 1
        return self.y

    def dump_csv(self, path, steps: int) -> None:
        """Write ``i, x_1..x_N, y_1..y_N`` rows for ``steps`` further steps."""
        n = self.s.shape[0]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["i"] + [f"x_{k + 1}" for k in range(n)] + [f"y_{k + 1}" for k in range(n)])
            for _ in range(steps):
                y = self.step()
                writer.writerow([self.i] + [repr(float(v)) for v in self.x_history[0]] + [repr(float(v)) for v in y])


def synthesize_observations(filt: FilterModel, s, x_stream: GraphSignalSource, noise: NoiseModel,
                            seed, sample_mask=None) -> ObservationStream:
    return ObservationStream(filt, s, x_stream, noise, seed, sample_mask=sample_mask)
