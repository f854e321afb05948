"""Denoising diffusion over flat trajectory states.

Linear beta schedule, clean-sample (x0) parameterization throughout:
the network predicts the clean state, the reverse step mixes that
prediction with the current noisy state through the closed-form
posterior.  An optional steering callable can edit the clean-state
prediction at every step, which is where mesh-aware guidance plugs in.

Timesteps are 1-based: t runs over 1..t_max, and alpha_bar(0) == 1 so
the final reverse step collapses onto the prediction with zero
variance.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidRange, OutOfRange, ShapeMismatch


class NoiseSchedule:
    """Linear beta schedule with cached cumulative products.

    Args:
        t_max: number of diffusion steps.
        beta_start, beta_end: endpoints of the linear beta ramp.
    """

    def __init__(self, t_max=1000, beta_start=1e-4, beta_end=0.02):
        if t_max < 1:
            raise InvalidRange("t_max must be >= 1")
        if not (0.0 < beta_start <= beta_end < 1.0):
            raise InvalidRange("need 0 < beta_start <= beta_end < 1")
        self.t_max = int(t_max)
        self.betas = np.linspace(beta_start, beta_end, self.t_max)
        self.alphas = 1.0 - self.betas
        self._alpha_bar = np.concatenate([[1.0], np.cumprod(self.alphas)])

    def _check_t(self, t, lo):
        t = np.asarray(t)
        if np.any(t < lo) or np.any(t > self.t_max):
            raise OutOfRange(f"t must lie in [{lo}, {self.t_max}]")
        return t

    def beta(self, t):
        return self.betas[self._check_t(t, 1) - 1]

    def alpha(self, t):
        return self.alphas[self._check_t(t, 1) - 1]

    def alpha_bar(self, t):
        """Cumulative product of alphas up to t; alpha_bar(0) == 1."""
        return self._alpha_bar[self._check_t(t, 0)]


def q_sample(schedule, x0, t, noise):
    """Corrupt clean states to timestep t.

    x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * noise

    Args:
        x0: (n, d) clean states.
        t: (n,) integer timesteps.
        noise: (n, d) standard normal draws.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != x0.shape:
        raise ShapeMismatch("noise shape must match x0")
    ab = schedule.alpha_bar(t)
    ab = np.asarray(ab)[..., None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


def posterior_mean_var(schedule, x0_hat, x_t, t):
    """Mean and variance of the reverse step q(x_{t-1} | x_t, x0_hat).

    At t == 1 the variance is exactly zero and the mean collapses onto
    x0_hat.

    Args:
        x0_hat: (n, d) clean-state predictions.
        x_t: (n, d) current noisy states.
        t: scalar or (n,) timestep in [1, t_max].

    Returns:
        (mean (n, d), var scalar-or-(n, 1)).
    """
    t = np.asarray(t)
    ab_t = schedule.alpha_bar(t)
    ab_prev = schedule.alpha_bar(t - 1)
    beta_t = schedule.beta(t)
    alpha_t = schedule.alpha(t)
    one_minus = 1.0 - ab_t
    coef_clean = np.sqrt(ab_prev) * beta_t / one_minus
    coef_noisy = np.sqrt(alpha_t) * (1.0 - ab_prev) / one_minus
    var = (1.0 - ab_prev) / one_minus * beta_t
    if t.ndim:
        coef_clean = coef_clean[:, None]
        coef_noisy = coef_noisy[:, None]
        var = var[:, None]
    mean = coef_clean * np.asarray(x0_hat) + coef_noisy * np.asarray(x_t)
    return mean, var


def training_loss(x0_hat, x0, frames, lambda_vel=1.0):
    """Reconstruction + velocity loss and its gradient.

    The reconstruction term is the elementwise mean squared error.  The
    velocity term takes frame-to-frame differences of the flat state
    and averages the squared norm of the difference error over frames
    and batch, weighted by lambda_vel.

    Args:
        x0_hat: (n, d) predictions.
        x0: (n, d) clean targets.
        frames: frame count F with d == F * per_frame.

    Returns:
        (total, grad (n, d), parts) where parts carries the two
        unweighted components for logging.
    """
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    if x0_hat.shape != x0.shape or x0_hat.ndim != 2:
        raise ShapeMismatch("x0_hat and x0 must be matching (n, d) arrays")
    n, d = x0_hat.shape
    if frames < 2 or d % frames != 0:
        raise ShapeMismatch(f"state length {d} does not split into {frames} frames")
    err = x0_hat - x0
    l_rec = float(np.mean(err * err))
    grad = 2.0 * err / err.size

    per = d // frames
    pred_f = x0_hat.reshape(n, frames, per)
    true_f = x0.reshape(n, frames, per)
    verr = np.diff(pred_f, axis=1) - np.diff(true_f, axis=1)
    l_vel = float(np.sum(verr * verr) / (n * (frames - 1)))
    gv = 2.0 * verr / (n * (frames - 1))
    gvel = np.zeros_like(pred_f)
    gvel[:, 1:] += gv
    gvel[:, :-1] -= gv
    grad = grad + lambda_vel * gvel.reshape(n, d)

    total = l_rec + lambda_vel * l_vel
    return total, grad, {"rec": l_rec, "vel": l_vel}


def make_rng_streams(seed, n):
    """Independent per-sample generators from one master seed.

    Arm-to-arm pairing relies on this: calling with the same (seed, n)
    yields generators that replay identical noise sequences.
    """
    root = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in root.spawn(n)]


def sample_batch(net, schedule, cond, rngs, steer=None):
    """Ancestral sampling from pure noise, optionally steered.

    Every noise draw comes from the per-sample generators in order
    (initial state first, then one draw per step above t=1), so two
    arms built on make_rng_streams with the same seed consume identical
    noise regardless of steering, which must not touch any rng.

    Args:
        net: object with forward(x, t, cond) -> x0_hat.
        cond: (n, cond_dim) condition features.
        rngs: list of n per-sample generators.
        steer: optional callable (x0_hat, t) -> x0_hat applied to the
            clean-state prediction at each step.

    Returns:
        (n, state_dim) final states.
    """
    cond = np.asarray(cond, dtype=np.float64)
    n = cond.shape[0]
    if len(rngs) != n:
        raise ShapeMismatch(f"{len(rngs)} rng streams for {n} samples")
    d = net.state_dim
    x = np.stack([r.standard_normal(d) for r in rngs])
    for t in range(schedule.t_max, 0, -1):
        tb = np.full(n, t)
        x0_hat = net.forward(x, tb, cond)
        if steer is not None:
            x0_hat = steer(x0_hat, t)
        mean, var = posterior_mean_var(schedule, x0_hat, x, t)
        if t > 1:
            z = np.stack([r.standard_normal(d) for r in rngs])
            x = mean + np.sqrt(var) * z
        else:
            x = mean
    return x
