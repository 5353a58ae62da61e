"""Mean-reverting (OU) diffusion toward a text-conditioned mean.

Forward process, with the diagonal scaling fixed to the identity::

    dX_t = 1/2 (mu - X_t) beta_t dt + sqrt(beta_t) dW_t,    t in [0, 1]

Its transition kernel is Gaussian with mean ``(1 - e^{-B/2}) mu + e^{-B/2} X_0``
and variance ``lambda_t = 1 - e^{-B}``, where ``B(t)`` is the integrated noise
schedule. Sampling integrates the probability-flow ODE backwards from
``N(mu, I / tau)`` at t = 1.

All stochastic functions take an explicit ``torch.Generator``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import torch

T_FLOOR = 1e-5

ScoreFn = Callable[[torch.Tensor, torch.Tensor, float], torch.Tensor]


@dataclass(frozen=True)
class NoiseSchedule:
    beta0: float = 0.05
    beta1: float = 20.0
    horizon: float = 1.0

    def __post_init__(self):
        if self.beta0 <= 0 or self.beta1 <= 0:
            raise ValueError("beta0 and beta1 must be positive")
        if self.horizon != 1.0:
            raise ValueError("only the unit horizon is supported")

    def beta(self, t):
        _check_time(t)
        return self.beta0 + (self.beta1 - self.beta0) * t


def _check_time(t, low: float = 0.0) -> None:
    if isinstance(t, torch.Tensor):
        bad = bool(torch.any((t < low) | (t > 1)))
    else:
        bad = not (low <= t <= 1)
    if bad:
        raise ValueError(f"process step t must lie in [{low}, 1], got {t}")


def _exp(x):
    return torch.exp(x) if isinstance(x, torch.Tensor) else math.exp(x)


def _as_tensor(x, dtype=torch.float64) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(x, dtype=dtype)


def _broadcast_time(t, like: torch.Tensor):
    """Reshape a per-example time vector ``[B]`` so it broadcasts over ``like``."""
    if isinstance(t, torch.Tensor) and t.ndim == 1 and like.ndim > 1:
        return t.reshape(-1, *([1] * (like.ndim - 1))).to(like.dtype)
    return t


def beta_integral(sched: NoiseSchedule, t):
    """``B(t) = beta0 t + (beta1 - beta0) t^2 / 2``."""
    _check_time(t)
    return sched.beta0 * t + 0.5 * (sched.beta1 - sched.beta0) * t * t


def lambda_t(sched: NoiseSchedule, t):
    """Kernel variance ``1 - exp(-B(t))``; in ``[0, 1)`` and strictly increasing."""
    b = beta_integral(sched, t)
    if isinstance(b, torch.Tensor):
        return -torch.expm1(-b)
    return -math.expm1(-b)


def kernel_decay(sched: NoiseSchedule, t):
    """Weight ``exp(-B(t)/2)`` that the mean keeps on the starting point."""
    return _exp(-0.5 * beta_integral(sched, t))


def forward_mean(x0, mu, sched: NoiseSchedule, t):
    x0, mu = _as_tensor(x0), _as_tensor(mu)
    if x0.shape != mu.shape:
        raise ValueError(f"x0 shape {tuple(x0.shape)} != mu shape {tuple(mu.shape)}")
    w = _broadcast_time(kernel_decay(sched, t), x0)
    return (1.0 - w) * mu + w * x0


def sample_xt(x0, mu, sched: NoiseSchedule, t, rng: torch.Generator | None, xi: torch.Tensor | None = None):
    """Draw ``X_t = rho + sqrt(lambda_t) xi`` and return ``(x_t, xi)``.

    ``xi`` may be passed in explicitly (e.g. zeros) instead of being drawn.
    """
    if isinstance(t, torch.Tensor):
        if bool(torch.any(t <= 0)):
            raise ValueError("t = 0 makes the diffusion loss singular")
    elif t <= 0:
        raise ValueError("t = 0 makes the diffusion loss singular")
    mean = forward_mean(x0, mu, sched, t)
    if xi is None:
        xi = torch.randn(mean.shape, generator=rng, dtype=mean.dtype, device=mean.device)
    var = _broadcast_time(lambda_t(sched, t), mean)
    std = torch.sqrt(var) if isinstance(var, torch.Tensor) else math.sqrt(var)
    return mean + std * xi, xi


def marginal_moments(m0, v0, mu, sched: NoiseSchedule, t):
    """Mean and variance of ``X_t`` when ``X_0 ~ N(m0, v0 I)``."""
    mean = forward_mean(_as_tensor(m0) * torch.ones_like(_as_tensor(mu)), mu, sched, t)
    var = _exp(-beta_integral(sched, t)) * v0 + lambda_t(sched, t)
    return mean, var


def analytic_gaussian_score(x, t, m0, v0, mu, sched: NoiseSchedule):
    """Exact score of the forward marginal for Gaussian data ``N(m0, v0 I)``."""
    if v0 <= 0 and t <= 0:
        raise ValueError("marginal variance is zero")
    x, mu = _as_tensor(x), _as_tensor(mu)
    mean, var = marginal_moments(m0, v0, mu, sched, t)
    if var <= 0:
        raise ValueError("marginal variance is zero")
    return -(x - mean) / var


def reverse_ode_sample(
    score_fn: ScoreFn,
    mu: torch.Tensor,
    n_steps: int = 80,
    tau: float = 1.5,
    rng: torch.Generator | None = None,
    sched: NoiseSchedule = NoiseSchedule(),
    start_noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """Integrate the probability-flow ODE from t = 1 down to t = 0.

    The start point is drawn from ``N(mu, I / tau)``. Each explicit Euler step
    of size ``h = 1 / n_steps`` evaluated at ``t = 1, 1 - h, ..., h`` is::

        X <- X - h beta_t (mu - X - score(X, mu, t)) / 2

    Args:
        score_fn: ``(x, mu, t) -> score`` with the shape of ``x``.
        mu: terminal mean, any shape.
        n_steps: number of Euler steps.
        tau: temperature; ``math.inf`` starts exactly at ``mu``.
        rng: generator for the terminal draw.
        sched: noise schedule.
        start_noise: optional standard-normal draw replacing the generator.

    Returns:
        The sample at t = 0.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    mu = _as_tensor(mu)
    if start_noise is None:
        start_noise = torch.randn(mu.shape, generator=rng, dtype=mu.dtype, device=mu.device)
    x = mu + start_noise / math.sqrt(tau)
    h = 1.0 / n_steps
    with torch.no_grad():
        for i in range(n_steps):
            t = 1.0 - i * h
            score = score_fn(x, mu, t)
            if not bool(torch.isfinite(score).all()):
                raise FloatingPointError(f"non-finite score at reverse step {i} (t={t:.6f})")
            x = x - 0.5 * h * sched.beta(t) * (mu - x - score)
    return x


def euler_maruyama_forward(
    x0,
    mu,
    sched: NoiseSchedule,
    n_steps: int,
    rng: torch.Generator | None,
    noise: bool = True,
) -> torch.Tensor:
    """Simulate the forward SDE from t = 0 to t = 1 with ``n_steps`` steps.

    With ``noise=False`` (or no generator) the Brownian increments are zero.
    """
    if n_steps < 100:
        raise ValueError(f"n_steps must be >= 100 for a usable simulation, got {n_steps}")
    x = _as_tensor(x0).clone()
    mu = _as_tensor(mu)
    h = 1.0 / n_steps
    use_noise = noise and rng is not None
    for i in range(n_steps):
        beta = sched.beta(i * h)
        x = x + 0.5 * (mu - x) * beta * h
        if use_noise:
            x = x + math.sqrt(beta * h) * torch.randn(x.shape, generator=rng, dtype=x.dtype)
    return x
