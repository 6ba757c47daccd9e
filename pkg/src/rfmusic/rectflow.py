"""Rectified-flow training math and samplers.

Data x0 and noise eps are joined by straight paths z_t = (1-t) x0 + t eps,
so the regression target for the velocity network is the constant path
derivative eps - x0. Sampling integrates dz/dt = v(z, t) from t=1 (noise)
down to t=0 with an explicit Euler scheme and optional classifier-free
guidance. A DDIM/epsilon-prediction arm trains the identical network under
the discrete-time objective for controlled comparisons, and an analytic
Gaussian-data velocity field provides a closed-form oracle for validating
the integrator end to end.

Model callables used here follow one protocol:
    model(z: ndarray [B, ...], t: ndarray [B], cond) -> ndarray [B, ...]
with cond=None meaning the null condition.
"""

from dataclasses import dataclass, field

import numpy as np

from .engine import Tensor, mse
from .errors import ConfigError, NumericError, ShapeError

_OPEN_EPS = 1e-7


@dataclass(frozen=True)
class RFSchedule:
    """Descending integration grid from t=1 to t=0."""

    steps: int = 50
    t_grid: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"need at least one step, got {self.steps}")
        grid = self.t_grid
        if grid is None:
            grid = np.linspace(1.0, 0.0, self.steps + 1)
        grid = np.asarray(grid, np.float64)
        if grid[0] != 1.0 or grid[-1] != 0.0 or not (np.diff(grid) < 0).all():
            raise ConfigError("t_grid must decrease strictly from exactly 1.0 to 0.0")
        object.__setattr__(self, "t_grid", grid)


@dataclass(frozen=True)
class DDPMSchedule:
    """Linear-beta discrete diffusion schedule for the epsilon-prediction arm."""

    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError("T must be positive")
        betas = np.linspace(self.beta_start, self.beta_end, self.T)
        if not ((betas > 0) & (betas < 1)).all():
            raise ConfigError("betas must lie in (0, 1)")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", 1.0 - betas)
        object.__setattr__(self, "alpha_bars", np.cumprod(1.0 - betas))

    def substep_indices(self, substeps):
        """Uniform subset of step indices, descending, for DDIM sampling."""
        if substeps > self.T:
            raise ConfigError(f"substeps {substeps} > T {self.T}")
        idx = np.linspace(0, self.T - 1, substeps).round().astype(int)
        return idx[::-1]

    def t_continuous(self, i):
        """Map a discrete index to the (0, 1] network time input."""
        return (np.asarray(i, np.float64) + 1.0) / self.T


@dataclass(frozen=True)
class TrajectorySample:
    """One training point on a straight path."""

    x0: np.ndarray
    eps: np.ndarray
    t: float
    z_t: np.ndarray
    target_v: np.ndarray


def interpolate(x0, eps, t):
    """z_t = (1-t) x0 + t eps."""
    if np.shape(x0) != np.shape(eps):
        raise ShapeError(f"x0 {np.shape(x0)} and eps {np.shape(eps)} differ")
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ConfigError(f"t must be in [0,1], got {t}")
    if t == 0.0:
        return np.array(x0, copy=True)
    if t == 1.0:
        return np.array(eps, copy=True)
    return (1.0 - t) * x0 + t * eps


def velocity_target(x0, eps):
    """Path derivative d z_t / dt = eps - x0 (constant along the path)."""
    return eps - x0


def make_trajectory_sample(x0, eps, t):
    return TrajectorySample(x0, eps, float(t), interpolate(x0, eps, t), velocity_target(x0, eps))


def sample_t(rng, n=None, dist="uniform"):
    """Training-time draw of t on the open interval (0, 1)."""
    if dist == "uniform":
        u = rng.random() if n is None else rng.random(n)
        return _OPEN_EPS + u * (1.0 - 2.0 * _OPEN_EPS)
    if dist == "logit-normal":
        g = rng.standard_normal() if n is None else rng.standard_normal(n)
        return 1.0 / (1.0 + np.exp(-g))
    raise ConfigError(f"unknown t distribution {dist!r}")


def rf_loss(model, x0, cond, rng, t_dist="uniform"):
    """Velocity-matching loss: E || model(z_t, t, cond) - (eps - x0) ||^2.

    x0: clean latent batch [B, ...]; returns (loss Tensor, stats dict).
    """
    x0 = np.asarray(x0)
    B = x0.shape[0]
    ts = np.atleast_1d(sample_t(rng, B, t_dist))
    eps = rng.standard_normal(x0.shape).astype(x0.dtype)
    tb = ts.reshape((B,) + (1,) * (x0.ndim - 1)).astype(x0.dtype)
    z = (1.0 - tb) * x0 + tb * eps
    target = eps - x0
    v = model(z, ts, cond)
    if not isinstance(v, Tensor):
        v = Tensor(v, dtype="f32" if v.dtype == np.float32 else "f64")
    loss = mse(v, Tensor(target, dtype=v.dtype))
    if not np.isfinite(loss.item()):
        raise NumericError("rectified-flow loss is not finite")
    return loss, {"t_mean": float(ts.mean())}


def cfg_velocity(v_cond, v_uncond, s):
    """Classifier-free guidance: v_uncond + s (v_cond - v_uncond)."""
    s = float(s)
    if s == 1.0:
        return v_cond
    return v_uncond + s * (v_cond - v_uncond)


def euler_sample(model, z1, cond, sched, s=1.0):
    """Integrate dz/dt = v from t=1 to t=0 on the schedule's grid.

    With s == 1 only the conditional branch is evaluated (one forward per
    step); otherwise the null branch is evaluated too and combined with
    cfg_velocity.
    """
    grid = sched.t_grid
    if not (np.diff(grid) < 0).all():
        raise ConfigError("integration grid must be strictly decreasing")
    z = np.array(z1, copy=True)
    B = z.shape[0]
    for k in range(len(grid) - 1):
        t_k, t_next = grid[k], grid[k + 1]
        ts = np.full(B, t_k)
        v = model(z, ts, cond)
        if s != 1.0:
            v = cfg_velocity(v, model(z, ts, None), s)
        z = z - (t_k - t_next) * v
    return z


def gaussian_oracle_velocity(z, t, mu, sigma):
    """Marginal velocity E[eps - x0 | z_t = z] for scalar data x0 ~ N(mu, sigma^2).

    With V(t) = (1-t)^2 sigma^2 + t^2 (the variance of z_t around (1-t) mu),
    the posterior means are linear in z and combine to
        u(z, t) = [t - (1-t) sigma^2] (z - (1-t) mu) / V(t) - mu.
    Validated against a Monte-Carlo regression of (eps - x0) on z_t in tests.
    """
    t = np.asarray(t, np.float64)
    var = (1.0 - t) ** 2 * sigma**2 + t**2
    return (t - (1.0 - t) * sigma**2) * (z - (1.0 - t) * mu) / var - mu


def ddpm_eps_loss(model, x0, cond, rng, sched):
    """Epsilon-prediction MSE at a uniformly drawn discrete step.

    The network consumes the same continuous time input as the flow arm
    (t = (i+1)/T), so one architecture serves both objectives.
    """
    x0 = np.asarray(x0)
    B = x0.shape[0]
    idx = rng.integers(0, sched.T, size=B)
    abar = sched.alpha_bars[idx].reshape((B,) + (1,) * (x0.ndim - 1)).astype(x0.dtype)
    eps = rng.standard_normal(x0.shape).astype(x0.dtype)
    z = np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps
    ts = sched.t_continuous(idx)
    e_hat = model(z, ts, cond)
    if not isinstance(e_hat, Tensor):
        e_hat = Tensor(e_hat, dtype="f32" if e_hat.dtype == np.float32 else "f64")
    loss = mse(e_hat, Tensor(eps, dtype=e_hat.dtype))
    if not np.isfinite(loss.item()):
        raise NumericError("epsilon-prediction loss is not finite")
    return loss, {"i_mean": float(idx.mean())}


def ddim_sample(model, zT, cond, sched, substeps=50, s=1.0):
    """Deterministic DDIM (eta = 0) over a uniform substep subset."""
    taus = sched.substep_indices(substeps)
    z = np.array(zT, copy=True)
    B = z.shape[0]
    for j, i in enumerate(taus):
        ts = np.full(B, sched.t_continuous(i))
        e = model(z, ts, cond)
        if s != 1.0:
            e = cfg_velocity(e, model(z, ts, None), s)
        abar = sched.alpha_bars[i]
        x0_hat = (z - np.sqrt(1.0 - abar) * e) / np.sqrt(abar)
        if j + 1 < len(taus):
            abar_next = sched.alpha_bars[taus[j + 1]]
            z = np.sqrt(abar_next) * x0_hat + np.sqrt(1.0 - abar_next) * e
        else:
            z = x0_hat
    return z
