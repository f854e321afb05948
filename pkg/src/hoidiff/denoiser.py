"""Clean-sample prediction network, optimizer, and checkpoints.

The denoiser maps (noisy flat state, timestep, condition features) to a
clean-state estimate.  Architecture: an input projection, three
residual tanh blocks, and a zero-initialized output projection added to
the noisy input, so a freshly initialized network is exactly the
identity on the state.  The timestep enters through an interleaved
sin/cos embedding; timestep embedding and condition vector are
concatenated onto the input of every block.

Forward and backward are written out by hand in numpy (a few matmuls
per block); the backward pass is validated against central differences
in the tests.  Training state (Adam moments) lives next to the
parameters so checkpoints can resume exactly.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ConfigHashMismatch, NoRecordedForward, OutOfRange, ShapeMismatch


def timestep_embedding(t, dim=64, t_max=1000):
    """Sinusoidal embedding of integer timesteps in [1, t_max].

    Channel 2i is sin(t * w_i), channel 2i+1 is cos(t * w_i), with
    frequencies geometrically spaced from 1 down to 1/10000.

    Args:
        t: scalar or (n,) integer timesteps.
        dim: embedding width (even).

    Returns:
        (dim,) or (n, dim) float array.
    """
    t_arr = np.atleast_1d(np.asarray(t))
    if np.any(t_arr < 1) or np.any(t_arr > t_max):
        raise OutOfRange(f"timesteps must lie in [1, {t_max}]")
    if dim % 2 != 0:
        raise ShapeMismatch("embedding dim must be even")
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = t_arr[:, None].astype(np.float64) * freqs[None, :]
    out = np.empty((len(t_arr), dim))
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang)
    return out if np.ndim(t) else out[0]


def _orthogonal(rng, rows, cols, gain=1.0):
    """Semi-orthogonal matrix (orthonormal rows or columns)."""
    big, small = max(rows, cols), min(rows, cols)
    q, r = np.linalg.qr(rng.standard_normal((big, small)))
    q = q * np.sign(np.diag(r))[None, :]
    if rows < cols:
        q = q.T
    return gain * q


class DenoiserNet:
    """Residual feed-forward clean-sample predictor.

    Args:
        state_dim: flat trajectory length F * J * 9.
        cond_dim: condition feature length (text + visual).
        width: hidden width of the trunk.
        blocks: residual block count.
        temb_dim: timestep embedding width.
        t_max: largest valid timestep.
    """

    def __init__(self, state_dim, cond_dim, width=512, blocks=3, temb_dim=64,
                 t_max=1000, seed=0):
        self.state_dim = int(state_dim)
        self.cond_dim = int(cond_dim)
        self.width = int(width)
        self.blocks = int(blocks)
        self.temb_dim = int(temb_dim)
        self.t_max = int(t_max)
        self.seed = int(seed)
        ctx = self.temb_dim + self.cond_dim
        rng = np.random.default_rng(seed)
        p = {}
        p["w_in"] = _orthogonal(rng, self.state_dim + ctx, self.width)
        p["b_in"] = np.zeros(self.width)
        for k in range(self.blocks):
            p[f"blk{k}_w1"] = _orthogonal(rng, self.width + ctx, self.width)
            p[f"blk{k}_b1"] = np.zeros(self.width)
            p[f"blk{k}_w2"] = _orthogonal(rng, self.width, self.width)
            p[f"blk{k}_b2"] = np.zeros(self.width)
        # zero output projection: initial network is the identity on x
        p["w_out"] = np.zeros((self.width, self.state_dim))
        p["b_out"] = np.zeros(self.state_dim)
        self.params = p
        self._cache = None

    def arch_dict(self):
        return {"state_dim": self.state_dim, "cond_dim": self.cond_dim,
                "width": self.width, "blocks": self.blocks,
                "temb_dim": self.temb_dim, "t_max": self.t_max}

    # ------------------------------------------------------------- forward

    def forward(self, x, t, c, record=False):
        """Predict the clean state.

        Args:
            x: (n, state_dim) noisy states.
            t: (n,) integer timesteps in [1, t_max].
            c: (n, cond_dim) condition features.
            record: keep activations for a following backward().

        Returns:
            (n, state_dim) clean-state estimates.
        """
        x = np.asarray(x, dtype=np.float64)
        c = np.asarray(c, dtype=np.float64)
        t = np.asarray(t)
        if x.ndim != 2 or x.shape[1] != self.state_dim:
            raise ShapeMismatch(f"x shape {x.shape} != (n, {self.state_dim})")
        if c.shape != (x.shape[0], self.cond_dim):
            raise ShapeMismatch(f"c shape {c.shape} != (n, {self.cond_dim})")
        if t.shape != (x.shape[0],):
            raise ShapeMismatch(f"t shape {t.shape} != (n,)")
        temb = timestep_embedding(t, self.temb_dim, self.t_max)
        ctx = np.concatenate([temb, c], axis=1)
        p = self.params
        inp = np.concatenate([x, ctx], axis=1)
        h = inp @ p["w_in"] + p["b_in"]
        cache = {"x": x, "ctx": ctx, "inp": inp, "h_pre": [], "u": [], "a": []}
        for k in range(self.blocks):
            u = np.concatenate([h, ctx], axis=1)
            a = np.tanh(u @ p[f"blk{k}_w1"] + p[f"blk{k}_b1"])
            if record:
                cache["h_pre"].append(h)
                cache["u"].append(u)
                cache["a"].append(a)
            h = h + a @ p[f"blk{k}_w2"] + p[f"blk{k}_b2"]
        out = x + h @ p["w_out"] + p["b_out"]
        if record:
            cache["h_final"] = h
            self._cache = cache
        return out

    # ------------------------------------------------------------ backward

    def backward(self, upstream):
        """Parameter gradients for the last recorded forward.

        Args:
            upstream: (n, state_dim) gradient of the loss w.r.t. the
                forward output.

        Returns:
            dict with the same keys/shapes as self.params.
        """
        if self._cache is None:
            raise NoRecordedForward("call forward(..., record=True) first")
        cache = self._cache
        up = np.asarray(upstream, dtype=np.float64)
        if up.shape != cache["x"].shape:
            raise ShapeMismatch(f"upstream shape {up.shape} != {cache['x'].shape}")
        p = self.params
        g = {}
        g["w_out"] = cache["h_final"].T @ up
        g["b_out"] = up.sum(axis=0)
        gh = up @ p["w_out"].T
        for k in reversed(range(self.blocks)):
            a = cache["a"][k]
            u = cache["u"][k]
            g[f"blk{k}_w2"] = a.T @ gh
            g[f"blk{k}_b2"] = gh.sum(axis=0)
            ga = gh @ p[f"blk{k}_w2"].T
            gz = ga * (1.0 - a * a)           # tanh'
            g[f"blk{k}_w1"] = u.T @ gz
            g[f"blk{k}_b1"] = gz.sum(axis=0)
            gh = gh + (gz @ p[f"blk{k}_w1"].T)[:, :self.width]
        g["w_in"] = cache["inp"].T @ gh
        g["b_in"] = gh.sum(axis=0)
        return g


class Adam:
    """Adam with bias correction, matching the original update rule."""

    def __init__(self, params, lr=2e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        """Update params in place from one gradient dict."""
        self.step_count += 1
        b1c = 1.0 - self.beta1 ** self.step_count
        b2c = 1.0 - self.beta2 ** self.step_count
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            mhat = self.m[k] / b1c
            vhat = self.v[k] / b2c
            params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------- weights

def save_checkpoint(path, net: DenoiserNet, opt: Adam = None, config_hash="",
                    extra=None):
    """Write parameters, optimizer moments, and metadata to one file."""
    arrays = {f"param/{k}": v for k, v in net.params.items()}
    meta = {"arch": net.arch_dict(), "config_hash": config_hash,
            "seed": net.seed, "extra": extra or {}}
    if opt is not None:
        arrays.update({f"adam_m/{k}": v for k, v in opt.m.items()})
        arrays.update({f"adam_v/{k}": v for k, v in opt.v.items()})
        meta["adam"] = {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2,
                        "eps": opt.eps, "step_count": opt.step_count}
    arrays["meta_json"] = np.frombuffer(
        json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path, expect_config_hash=None):
    """Rebuild (net, opt or None, meta) from a checkpoint file.

    Raises:
        ConfigHashMismatch: stored hash differs from expect_config_hash.
    """
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta_json"]).decode("utf-8"))
        if expect_config_hash is not None and meta["config_hash"] != expect_config_hash:
            raise ConfigHashMismatch(
                f"checkpoint built under config {meta['config_hash'][:12]}..., "
                f"current config is {expect_config_hash[:12]}...")
        net = DenoiserNet(**meta["arch"], seed=meta.get("seed", 0))
        for k in net.params:
            net.params[k] = z[f"param/{k}"].copy()
        opt = None
        if "adam" in meta:
            a = meta["adam"]
            opt = Adam(net.params, lr=a["lr"], beta1=a["beta1"],
                       beta2=a["beta2"], eps=a["eps"])
            opt.step_count = a["step_count"]
            for k in net.params:
                opt.m[k] = z[f"adam_m/{k}"].copy()
                opt.v[k] = z[f"adam_v/{k}"].copy()
    return net, opt, meta
