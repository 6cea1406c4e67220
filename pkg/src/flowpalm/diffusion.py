"""Noise schedules, the reverse update, clean denoising / re-noising, a closed-form
Gaussian denoiser, and the three-stage deformation-driven sampler.

Stage layout for ``T`` steps, ``t* = round(t_star_fraction * T)`` and
``t_u = floor(tau_u * T) + 1``:

* stage I, conditioned on the warped crease, owns the steps ``t > t*``; once
  the state reaches ``t*`` it is clean-denoised (still conditioned) and
  re-noised with warped noise;
* stage II, still conditioned, owns ``t_u < t <= t*``;
* stage III, unconditioned, owns ``1 <= t <= t_u``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

import numpy as np
from scipy import ndimage

from .imaging import ShapeError, as_flow, warp_bilinear
from .noise import TransportConfig, warp_noise
from .seeding import derive_seed, rng


@dataclass(frozen=True)
class NoiseSchedule:
    """``beta[t]`` for ``t = 1..T``; index 0 holds the ``t = 0`` convention
    (``beta = 0``, ``alpha_bar = 1``)."""

    beta: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 2 or beta[0] != 0:
            raise ValueError("beta must be 1-D with beta[0] == 0 and at least one timestep")
        if np.any(beta[1:] <= 0) or np.any(beta[1:] >= 1):
            raise ValueError("every beta_t must lie in (0, 1)")
        object.__setattr__(self, "beta", beta)

    @classmethod
    def from_betas(cls, betas) -> "NoiseSchedule":
        return cls(np.concatenate([[0.0], np.asarray(betas, dtype=np.float64)]))

    @property
    def T(self) -> int:
        return self.beta.size - 1

    @property
    def alpha(self) -> np.ndarray:
        return 1.0 - self.beta

    @property
    def alpha_bar(self) -> np.ndarray:
        return np.cumprod(self.alpha)

    def check_t(self, t: int, lowest: int = 1) -> None:
        if not lowest <= t <= self.T:
            raise ValueError(f"timestep {t} outside [{lowest}, {self.T}]")


def make_linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if T < 2:
        raise ValueError("T must be >= 2")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    return NoiseSchedule.from_betas(np.linspace(beta_start, beta_end, T))


def sigma(schedule: NoiseSchedule, t: int, t_prev: int, eta: float) -> float:
    ab = schedule.alpha_bar
    return eta * math.sqrt((1 - ab[t_prev]) / (1 - ab[t]) * (1 - ab[t] / ab[t_prev]))


def ddim_update(x_t, eps, alpha_t: float, alpha_bar_t: float, sigma_t: float = 0.0, xi=None):
    """``(x_t - (1 - a_t) / sqrt(1 - abar_t) * eps) / sqrt(a_t) + sigma_t * xi``."""
    out = (x_t - (1.0 - alpha_t) / math.sqrt(1.0 - alpha_bar_t) * eps) / math.sqrt(alpha_t)
    if sigma_t != 0.0:
        if xi is None:
            raise ValueError("xi is required when sigma_t > 0")
        out = out + sigma_t * xi
    return out


def ddim_step(x_t, eps, t: int, t_prev: int, schedule: NoiseSchedule, eta: float = 0.0, xi=None,
              rule: str = "posterior"):
    """Reverse step ``t -> t_prev``.

    ``rule="posterior"`` (the posterior-mean step) is the default; for strided
    jumps the per-step ``alpha_t`` becomes ``alpha_bar_t / alpha_bar_prev``.
    ``rule="ddim"`` is the usual x0/eps re-projection
    ``sqrt(abar_prev) x0 + sqrt(1 - abar_prev - sigma^2) eps + sigma xi``.
    """
    schedule.check_t(t)
    if not 0 <= t_prev < t:
        raise ValueError(f"t_prev={t_prev} must lie in [0, t={t})")
    ab = schedule.alpha_bar
    s = sigma(schedule, t, t_prev, eta)
    if rule == "posterior":
        a_t = schedule.alpha[t] if t_prev == t - 1 else ab[t] / ab[t_prev]
        return ddim_update(x_t, eps, a_t, ab[t], s, xi)
    if rule == "ddim":
        x0 = clean_denoise(x_t, eps, t, schedule)
        out = math.sqrt(ab[t_prev]) * x0 + math.sqrt(max(1.0 - ab[t_prev] - s * s, 0.0)) * eps
        if s != 0.0:
            if xi is None:
                raise ValueError("xi is required when eta > 0")
            out = out + s * xi
        return out
    raise ValueError(f"unknown update rule {rule!r}")


def clean_denoise(x_t, eps, t: int, schedule: NoiseSchedule):
    schedule.check_t(t, lowest=0)
    ab = schedule.alpha_bar[t]
    return (x_t - math.sqrt(1.0 - ab) * eps) / math.sqrt(ab)


def renoise(x_clean, noise, t: int, schedule: NoiseSchedule):
    schedule.check_t(t, lowest=0)
    if np.shape(x_clean) != np.shape(noise):
        raise ShapeError(f"x_clean {np.shape(x_clean)} and noise {np.shape(noise)} differ in shape")
    ab = schedule.alpha_bar[t]
    return math.sqrt(ab) * x_clean + math.sqrt(1.0 - ab) * noise


class Denoiser(Protocol):
    def __call__(self, x: np.ndarray, condition: Optional[np.ndarray], t: int) -> np.ndarray: ...


def smoothed(sigma_px: float = 2.0) -> Callable[[np.ndarray], np.ndarray]:
    def mean_fn(condition):
        return ndimage.gaussian_filter(np.asarray(condition, dtype=np.float64), sigma_px, mode="nearest")
    return mean_fn


@dataclass
class GaussianDenoiser:
    """Exact noise predictor for data ``x0 ~ N(m(C), s^2 I)``.

    ``m(C) = mean_fn(C)``; without a condition the mean is ``uncond_mean``
    (an image or a scalar).
    """

    schedule: NoiseSchedule
    data_std: float
    mean_fn: Callable = field(default_factory=smoothed)
    uncond_mean: object = 0.0
    _cache: tuple = field(default=(None, None), init=False, repr=False)

    def __post_init__(self):
        if not self.data_std > 0:
            raise ValueError("data_std must be positive")

    def mean(self, condition):
        if condition is None:
            return self.uncond_mean
        key, value = self._cache
        if key is not condition:
            value = self.mean_fn(condition)
            self._cache = (condition, value)
        return value

    def posterior_mean(self, x, condition, t: int):
        ab = self.schedule.alpha_bar[t]
        s2 = self.data_std**2
        m = self.mean(condition)
        gain = s2 * math.sqrt(ab) / (ab * s2 + 1.0 - ab)
        return m + gain * (x - math.sqrt(ab) * m)

    def __call__(self, x, condition, t: int):
        self.schedule.check_t(t)
        ab = self.schedule.alpha_bar[t]
        x0 = self.posterior_mean(x, condition, t)
        return (x - math.sqrt(ab) * x0) / math.sqrt(1.0 - ab)


def gaussian_denoiser(schedule: NoiseSchedule, data_std: float, mean_fn: Callable | None = None,
                      uncond_mean=0.0) -> GaussianDenoiser:
    return GaussianDenoiser(schedule, data_std, mean_fn or smoothed(), uncond_mean)


@dataclass(frozen=True)
class SamplerConfig:
    T: int = 250
    t_star_fraction: float = 0.5
    tau_u: float = 0.25
    eta: float = 0.0
    step_stride: int = 1
    rule: str = "posterior"

    def __post_init__(self):
        if self.T < 2:
            raise ValueError("T must be >= 2")
        if not 0 < self.tau_u < self.t_star_fraction < 1:
            raise ValueError("need 0 < tau_u < t_star_fraction < 1")
        if not 0 <= self.eta <= 1:
            raise ValueError("eta must lie in [0, 1]")
        if self.step_stride < 1:
            raise ValueError("step_stride must be >= 1")
        if self.rule not in ("posterior", "ddim"):
            raise ValueError(f"unknown update rule {self.rule!r}")

    @property
    def t_star(self) -> int:
        return min(max(int(math.floor(self.t_star_fraction * self.T + 0.5)), 1), self.T - 1)

    @property
    def t_u(self) -> int:
        return min(int(math.floor(self.tau_u * self.T)) + 1, self.t_star)

    def timesteps(self) -> list[int]:
        """Descending visited timesteps ending in 0; always contains ``T``, ``t*`` and ``t_u``."""
        pts = set(range(self.T, 0, -self.step_stride)) | {self.t_star, self.t_u, 0}
        return sorted(pts, reverse=True)

    def steps(self) -> list[tuple[int, int, int]]:
        """``(stage, t, t_prev)`` for every reverse step."""
        ts = self.timesteps()
        out = []
        for t, t_prev in zip(ts[:-1], ts[1:]):
            stage = 1 if t > self.t_star else 2 if t > self.t_u else 3
            out.append((stage, t, t_prev))
        return out


class DenoiserError(RuntimeError):
    pass


@dataclass
class SampleResult:
    image: np.ndarray
    trace: dict = field(default_factory=dict)


def _predict(denoiser, x, condition, t):
    eps = np.asarray(denoiser(x, condition, t), dtype=np.float64)
    if eps.shape != x.shape:
        raise DenoiserError(f"denoiser returned shape {eps.shape} for input {x.shape}")
    if not np.all(np.isfinite(eps)):
        raise DenoiserError(f"denoiser returned non-finite values at t={t}")
    return eps


def sample_three_stage(denoiser: Denoiser, crease, record, config: SamplerConfig | None = None,
                       schedule: NoiseSchedule | None = None, master_seed: int = 0,
                       xi_seed: int | None = None, transport: TransportConfig | None = None,
                       trace: bool = False, noise_warp: bool = True, crease_warp: bool = True) -> SampleResult:
    """Generate one deformed sample.

    ``record`` is a :class:`flowpalm.prior.DeformationRecord` (or anything with
    a ``flow`` attribute). ``xi_seed`` fixes the pre-warp noise independently
    of ``master_seed`` so several samples of one identity can share it.
    ``noise_warp`` / ``crease_warp`` switch the two warps off for ablations.
    """
    config = config or SamplerConfig()
    schedule = schedule or make_linear_schedule(config.T)
    if schedule.T != config.T:
        raise ValueError(f"schedule has T={schedule.T}, config expects {config.T}")
    crease = np.asarray(crease, dtype=np.float64)
    if crease.ndim != 2 or np.ptp(crease) == 0:
        raise ValueError("crease must be a non-constant 2-D image")
    flow = getattr(record, "flow", None)
    if flow is None:
        raise ValueError("deformation record carries no flow field")
    flow = as_flow(flow)
    if flow.shape[:2] != crease.shape:
        raise ShapeError(f"flow {flow.shape[:2]} does not match crease {crease.shape}")

    cond = warp_bilinear(crease, flow) if crease_warp else crease
    xi_seed = derive_seed(master_seed, "xi") if xi_seed is None else xi_seed
    step_noise = rng(master_seed, "step-noise")
    x = rng(master_seed, "x_T").standard_normal(crease.shape)
    t_star, t_u = config.t_star, config.t_u
    states = {"cond_warped": cond, f"stage1_t{config.T}": x.copy()} if trace else {}

    for stage, t, t_prev in config.steps():
        if stage == 3 and trace and t == t_u:
            states[f"stage3_t{t_u}"] = x.copy()
        c = None if stage == 3 else cond
        eps = _predict(denoiser, x, c, t)
        s = sigma(schedule, t, t_prev, config.eta)
        xi = step_noise.standard_normal(x.shape) if s > 0 else None
        x = ddim_step(x, eps, t, t_prev, schedule, config.eta, xi, config.rule)
        if stage == 1 and t_prev == t_star:
            eps = _predict(denoiser, x, cond, t_star)
            x_clean = clean_denoise(x, eps, t_star, schedule)
            xi0 = rng(xi_seed, "xi").standard_normal(x.shape)
            n_warp = warp_noise(xi0, flow, transport, derive_seed(xi_seed, "transport")) if noise_warp else xi0
            if trace:
                states[f"stage1_t{t_star}"] = x.copy()
                states["x_clean"] = x_clean
                states["n_warp"] = n_warp
            x = renoise(x_clean, n_warp, t_star, schedule)
            if trace:
                states[f"stage2_t{t_star}"] = x.copy()
    if trace:
        states["stage3_t0"] = x.copy()
    return SampleResult(np.clip(x, -1.0, 1.0), states)
