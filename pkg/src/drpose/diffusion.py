"""Cosine noise schedule, forward diffusion, posterior sampling and the
reverse refinement loop.

Conventions: schedule arrays are indexed by timestep t in [1, T] with
sentinel values at index 0 (beta[0] = 0, alpha_bar[0] = 1).  Poses passed
through these functions are plain arrays in whatever units the caller uses;
the moments of the forward marginal are sqrt(alpha_bar_t) * y0 and
(1 - alpha_bar_t) per coordinate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .rng import RngStream
from .skeleton import re_root


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep beta / alpha / alpha_bar / posterior-variance arrays."""

    T: int
    s: float
    beta: np.ndarray  # (T+1,), beta[0] unused sentinel 0
    alpha: np.ndarray  # (T+1,), alpha[0] = 1
    alpha_bar: np.ndarray  # (T+1,), alpha_bar[0] = 1
    sigma2: np.ndarray  # (T+1,), sigma2[t] = (1-abar[t-1])/(1-abar[t]) * beta[t]

    def check_t(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.T:
            raise ConfigError(f"timestep {t} outside [1, {self.T}]")
        return t


def build_cosine_schedule(T: int, s: float = 0.008) -> NoiseSchedule:
    """Cosine alpha_bar profile with offset `s`, betas clipped to (0, 0.999].

    alpha_bar_t = f(t)/f(0) with f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2);
    after clipping, alpha_bar is rebuilt as the running product of the
    clipped alphas so the arrays stay mutually consistent.
    """
    if T < 1:
        raise ConfigError(f"schedule length T must be >= 1, got {T}")
    if s <= 0:
        raise ConfigError(f"cosine offset must be positive, got {s}")
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((t / T + s) / (1.0 + s)) * (np.pi / 2.0)) ** 2
    abar_raw = f / f[0]
    beta = 1.0 - abar_raw[1:] / abar_raw[:-1]
    beta = np.clip(beta, None, 0.999)
    if np.any(beta <= 0.0):
        raise ConfigError("cosine schedule produced a non-positive beta")
    alpha = 1.0 - beta
    alpha_bar = np.concatenate([[1.0], np.cumprod(alpha)])
    beta = np.concatenate([[0.0], beta])
    alpha = np.concatenate([[1.0], alpha])
    sigma2 = np.zeros(T + 1)
    sigma2[1:] = (1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta[1:]
    return NoiseSchedule(T, float(s), beta, alpha, alpha_bar, sigma2)


def schedule_table(sched: NoiseSchedule) -> str:
    """Plain-text dump: one `t, beta, alpha_bar, sigma2` row per timestep."""
    lines = ["t, beta, alpha_bar, sigma2"]
    for t in range(1, sched.T + 1):
        lines.append(
            f"{t}, {sched.beta[t]:.12e}, {sched.alpha_bar[t]:.12e}, {sched.sigma2[t]:.12e}"
        )
    return "\n".join(lines) + "\n"


def forward_diffuse(y0: np.ndarray, t, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Sample of the forward marginal: sqrt(abar_t) y0 + sqrt(1-abar_t) eps.

    `t` may be a scalar or an array of per-sample timesteps broadcast over
    the leading axis of `y0`.
    """
    y0 = np.asarray(y0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != y0.shape:
        raise ShapeError(f"noise shape {eps.shape} does not match pose shape {y0.shape}")
    t_arr = np.asarray(t, dtype=np.int64)
    if np.any(t_arr < 1) or np.any(t_arr > sched.T):
        raise ConfigError(f"timestep(s) outside [1, {sched.T}]")
    abar = sched.alpha_bar[t_arr]
    if t_arr.ndim:
        abar = abar.reshape(abar.shape + (1,) * (y0.ndim - abar.ndim))
    return np.sqrt(abar) * y0 + np.sqrt(1.0 - abar) * eps


def posterior_step(
    y_t: np.ndarray,
    y0_hat: np.ndarray,
    t: int,
    sched: NoiseSchedule,
    stream: RngStream | None = None,
    coef: str = "alpha",
) -> np.ndarray:
    """One reverse step: sample of q(y_{t-1} | y_t, y0_hat).

    The mean uses the sqrt(alpha_t) coefficient on y_t (`coef="alpha"`),
    which is the form that satisfies the noiseless fixed-point identity;
    `coef="alpha_bar"` keeps the sqrt(alpha_bar_t) variant for comparison
    (it measurably violates that identity).  At t = 1 the mean is exactly
    y0_hat and the variance is zero.
    """
    t = sched.check_t(t)
    y_t = np.asarray(y_t, dtype=np.float64)
    y0_hat = np.asarray(y0_hat, dtype=np.float64)
    if t == 1:
        return y0_hat.copy()
    if coef == "alpha":
        c_yt = np.sqrt(sched.alpha[t]) * (1.0 - sched.alpha_bar[t - 1])
    elif coef == "alpha_bar":
        c_yt = np.sqrt(sched.alpha_bar[t]) * (1.0 - sched.alpha_bar[t - 1])
    else:
        raise ConfigError(f"unknown posterior coefficient form {coef!r}")
    denom = 1.0 - sched.alpha_bar[t]
    c_y0 = np.sqrt(sched.alpha_bar[t - 1]) * sched.beta[t]
    mu = (c_yt / denom) * y_t + (c_y0 / denom) * y0_hat
    if stream is None:
        return mu
    return mu + np.sqrt(sched.sigma2[t]) * stream.gaussian(mu.shape)


def posterior_bridge(
    y_t: np.ndarray,
    y0_hat: np.ndarray,
    t: int,
    t_next: int,
    sched: NoiseSchedule,
    stream: RngStream | None = None,
) -> np.ndarray:
    """Posterior q(y_s | y_t, y0_hat) for an arbitrary gap s = t_next < t.

    Reduces to `posterior_step` when t_next == t - 1.
    """
    t = sched.check_t(t)
    t_next = sched.check_t(t_next)
    if t_next >= t:
        raise ConfigError(f"bridge target {t_next} must be below source {t}")
    abar_t, abar_s = sched.alpha_bar[t], sched.alpha_bar[t_next]
    beta_gap = 1.0 - abar_t / abar_s
    denom = 1.0 - abar_t
    c_yt = np.sqrt(abar_t / abar_s) * (1.0 - abar_s) / denom
    c_y0 = np.sqrt(abar_s) * beta_gap / denom
    mu = c_yt * np.asarray(y_t, dtype=np.float64) + c_y0 * np.asarray(y0_hat, dtype=np.float64)
    var = (1.0 - abar_s) / denom * beta_gap
    if stream is None:
        return mu
    return mu + np.sqrt(var) * stream.gaussian(mu.shape)


@dataclass(frozen=True)
class TimestepPlan:
    """Descending timesteps visited by one refinement pass."""

    t_start: int
    steps: tuple[int, ...]

    def __post_init__(self):
        if not self.steps or self.steps[0] != self.t_start:
            raise ConfigError("plan must start at t_start")
        if any(b >= a for a, b in zip(self.steps, self.steps[1:])):
            raise ConfigError("plan timesteps must be strictly decreasing")
        if self.steps[-1] < 1:
            raise ConfigError("plan timesteps must stay >= 1")


def make_timestep_plan(t_start: int, K: int, T: int) -> TimestepPlan:
    """K timesteps evenly spaced (rounded) from t_start down toward 1.

    K larger than t_start cannot produce distinct integer steps, so it is
    clamped with a warning rather than rejected.
    """
    if not 1 <= t_start <= T:
        raise ConfigError(f"t_start {t_start} outside [1, {T}]")
    if K < 1:
        raise ConfigError(f"iteration count K must be >= 1, got {K}")
    if K > t_start:
        warnings.warn(
            f"K={K} exceeds t_start={t_start}; clamping to {t_start} iterations",
            stacklevel=2,
        )
        K = t_start
    steps = tuple(max(1, round(t_start * (K - i) / K)) for i in range(K))
    return TimestepPlan(t_start, steps)


def reverse_refine(
    y_bar: np.ndarray,
    x: np.ndarray,
    model,
    plan: TimestepPlan,
    sched: NoiseSchedule,
    stream: RngStream,
    renoise: str = "marginal",
) -> np.ndarray:
    """Refine an initial pose (millimeters) by iterated denoising.

    Starts from pure Gaussian noise treated as y at plan.steps[0]; each
    iteration predicts a clean pose via `model.refine(y_bar, y_t, x, t)` and,
    between iterations, re-noises it to the next planned timestep (fresh
    marginal noise by default, posterior bridging when `renoise="posterior"`).
    The loop runs in the model's pose space (mm / model.pose_scale_mm, where
    the noise has unit variance); the returned pose is millimeters with the
    root forced back to the origin.
    """
    if renoise not in ("marginal", "posterior"):
        raise ConfigError(f"unknown renoise mode {renoise!r}")
    scale = float(getattr(model, "pose_scale_mm", 1.0))
    yb = np.asarray(y_bar, dtype=np.float64) / scale
    y_t = stream.gaussian(yb.shape)
    y0_hat = yb
    for i, t in enumerate(plan.steps):
        y0_hat = model.refine(yb, y_t, x, t)
        if i + 1 < len(plan.steps):
            t_next = plan.steps[i + 1]
            if renoise == "marginal":
                y_t = forward_diffuse(y0_hat, t_next, stream.gaussian(np.shape(y0_hat)), sched)
            else:
                y_t = posterior_bridge(y_t, y0_hat, t, t_next, sched, stream)
    return re_root(np.asarray(y0_hat)) * scale
