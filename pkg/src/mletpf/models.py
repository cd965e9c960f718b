"""Stochastic forward models and level-coupled Euler-Maruyama propagation."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from mletpf.ot_core import InvalidInputError

__all__ = [
    "NumericalBlowupError",
    "ModelSpec",
    "lorenz63",
    "lorenz96",
    "linear_test",
    "LevelSchedule",
    "NoisePath",
    "substream",
    "drift",
    "euler_maruyama",
    "propagate",
    "propagate_pair",
    "spin_up_state",
    "sample_initial_ensemble",
    "observe",
]


class NumericalBlowupError(FloatingPointError):
    """A trajectory left the finite floating point range."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class ModelSpec:
    """Drift family, dimension and noise configuration of a forward model.

    ``noise_mode`` is ``"shared"`` when one scalar Brownian motion drives all
    components and ``"per-component"`` for independent motions.
    ``flops_per_step`` is the analytic operation count of one Euler-Maruyama
    step for one particle.
    """

    name: str
    dimension: int
    params: dict = field(default_factory=dict)
    noise_mode: str = "per-component"
    noise_amplitude: float = 0.0
    h0: float = 2.0**-9
    flops_per_step: int = 1

    def __post_init__(self):
        if self.name not in ("lorenz63", "lorenz96", "linear-test"):
            raise InvalidInputError(f"unknown model {self.name!r}")
        if self.noise_mode not in ("shared", "per-component"):
            raise InvalidInputError(f"unknown noise mode {self.noise_mode!r}")
        if self.dimension < 1:
            raise InvalidInputError("model dimension must be at least 1")

    @property
    def noise_dim(self) -> int:
        return 1 if self.noise_mode == "shared" else self.dimension

    def __hash__(self):
        return hash((self.name, self.dimension, tuple(sorted(self.params.items())),
                     self.noise_mode, self.noise_amplitude, self.h0))


def lorenz63(rho=28.0, sigma=10.0, beta=8.0 / 3.0, phi=0.1) -> ModelSpec:
    # drift: 8 flops; update x + h f + phi dW: 4 per component
    return ModelSpec(
        "lorenz63", 3, dict(rho=rho, sigma=sigma, beta=beta),
        noise_mode="shared", noise_amplitude=phi, h0=2.0**-9, flops_per_step=8 + 4 * 3,
    )


def lorenz96(d=40, forcing=8.0, delta=0.5, sigma2=0.1) -> ModelSpec:
    # per component: 2 products, 1 difference, 1 scaling, 2 for damping and forcing,
    # plus 4 for the update
    return ModelSpec(
        "lorenz96", d, dict(forcing=forcing, delta=delta),
        noise_mode="per-component", noise_amplitude=sigma2, h0=2.0**-8,
        flops_per_step=10 * d,
    )


def linear_test(a=1.0, d=1, noise=0.0, h0=0.5) -> ModelSpec:
    """Linear SDE ``dX = a X dt + noise dW``, mostly for hand-checked tests."""
    return ModelSpec(
        "linear-test", d, dict(a=a), noise_mode="per-component",
        noise_amplitude=noise, h0=h0, flops_per_step=4 * d,
    )


@dataclass(frozen=True)
class LevelSchedule:
    """Hierarchy of time steps and sample sizes for a multilevel run.

    Level ``l`` uses step ``h0 * 2**-(l + level_offset)``; a single-level
    filter at resolution ``L`` is ``N=(n,)`` with ``level_offset=L``.
    """

    h0: float
    N: tuple
    dt: float
    gamma: float = 1.0
    level_offset: int = 0

    def __post_init__(self):
        n = tuple(int(v) for v in self.N)
        object.__setattr__(self, "N", n)
        if not n or min(n) < 1:
            raise InvalidInputError("every level needs at least one sample")
        if any(b > a for a, b in zip(n, n[1:])):
            raise InvalidInputError("samples per level must be nonincreasing")
        if self.h0 <= 0 or self.dt <= 0:
            raise InvalidInputError("time steps must be positive")
        for level in range(len(n)):
            steps = self.dt / self.h(level)
            if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
                raise InvalidInputError(f"dt is not a multiple of h at level {level}")

    @property
    def L(self) -> int:
        return len(self.N) - 1

    def h(self, level: int) -> float:
        return self.h0 * 2.0 ** -(level + self.level_offset)

    def steps(self, level: int) -> int:
        """Number of level-``level`` time steps per assimilation interval."""
        return int(round(self.dt / self.h(level)))


@dataclass(frozen=True)
class NoisePath:
    """Brownian increments over fine steps, shape (steps, particles, noise_dim)."""

    increments: np.ndarray
    h: float

    @classmethod
    def sample(cls, spec: ModelSpec, n_particles: int, n_steps: int, h: float,
               rng: np.random.Generator) -> "NoisePath":
        dw = rng.standard_normal((n_steps, n_particles, spec.noise_dim)) * np.sqrt(h)
        return cls(dw, h)

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    def coarse(self) -> "NoisePath":
        """Increments over doubled steps: sums of consecutive fine pairs."""
        if self.n_steps % 2:
            raise InvalidInputError("coarsening needs an even number of fine steps")
        dw = self.increments[0::2] + self.increments[1::2]
        return NoisePath(dw, 2.0 * self.h)


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, key...)``, e.g. (estimator, step)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


def drift(spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    """Deterministic drift; ``x`` is one state (d,) or a batch (N, d)."""
    x = np.asarray(x, dtype=float)
    p = spec.params
    if spec.name == "lorenz63":
        X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
        return np.stack(
            (p["sigma"] * (Y - X), X * (p["rho"] - Z) - Y, X * Y - p["beta"] * Z), axis=-1
        )
    if spec.name == "lorenz96":
        xm1 = np.roll(x, 1, axis=-1)
        xp1 = np.roll(x, -1, axis=-1)
        xm2 = np.roll(x, 2, axis=-1)
        return -(xm1 * xp1 - xm2 * xm1) / (3.0 * p["delta"]) - x + p["forcing"]
    return p["a"] * x


def euler_maruyama(spec: ModelSpec, x, h: float, noise_increment=None) -> np.ndarray:
    """One step ``x + h drift(x) + amplitude dW``; shared noise broadcasts."""
    if h <= 0:
        raise InvalidInputError("time step must be positive")
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        out = x + h * drift(spec, x)
        if noise_increment is not None and spec.noise_amplitude:
            out = out + spec.noise_amplitude * np.asarray(noise_increment, dtype=float)
    if not np.all(np.isfinite(out)):
        raise NumericalBlowupError("non-finite state after Euler-Maruyama step")
    return out


def propagate(spec: ModelSpec, x, path: NoisePath) -> np.ndarray:
    """Advance an (N, d) ensemble through every step of ``path``."""
    x = np.asarray(x, dtype=float)
    for dw in path.increments:
        x = euler_maruyama(spec, x, path.h, dw)
    return x


def propagate_pair(spec: ModelSpec, x_coarse, x_fine, h_fine: float, n_fine_steps: int,
                   path: NoisePath) -> tuple[np.ndarray, np.ndarray]:
    """Advance a coupled pair: fine with ``h_fine``, coarse with ``2 h_fine``.

    Both see the same Brownian path; coarse increments are sums of
    consecutive fine increments.
    """
    if n_fine_steps % 2:
        raise InvalidInputError("the fine step count must be even")
    if path.n_steps != n_fine_steps:
        raise InvalidInputError(f"path holds {path.n_steps} increments, need {n_fine_steps}")
    if not np.isclose(path.h, h_fine):
        raise InvalidInputError("path step size does not match h_fine")
    fine = propagate(spec, x_fine, path)
    coarse = propagate(spec, x_coarse, path.coarse())
    return coarse, fine


@lru_cache(maxsize=None)
def _spin_up(spec: ModelSpec, n_steps: int) -> tuple:
    if spec.name == "lorenz63":
        x = np.ones(3)
    elif spec.name == "lorenz96":
        x = np.full(spec.dimension, spec.params["forcing"])
        x[0] += 0.01
    else:
        return tuple(np.ones(spec.dimension))
    for _ in range(n_steps):
        x = euler_maruyama(spec, x, spec.h0)
    return tuple(x)


def spin_up_state(spec: ModelSpec, n_steps: int = 1000) -> np.ndarray:
    """Deterministic state reached after ``n_steps`` noise-free coarsest steps."""
    return np.array(_spin_up(spec, n_steps))


def sample_initial_ensemble(spec: ModelSpec, n: int, rng: np.random.Generator,
                            variance: float = 0.1) -> np.ndarray:
    """``n`` i.i.d. draws from N(spin-up state, variance * I)."""
    if n < 1:
        raise InvalidInputError("ensemble size must be at least 1")
    centre = spin_up_state(spec)
    return centre + np.sqrt(variance) * rng.standard_normal((n, spec.dimension))


def observe(x, R, rng: np.random.Generator) -> np.ndarray:
    """Identity observation of ``x`` with additive N(0, R) error."""
    x = np.asarray(x, dtype=float)
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if R.shape != (x.shape[-1], x.shape[-1]) or not np.allclose(R, R.T):
        raise InvalidInputError("R must be a symmetric m x m matrix")
    try:
        chol = np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        raise InvalidInputError("R must be positive definite") from None
    return x + rng.standard_normal(x.shape) @ chol.T
