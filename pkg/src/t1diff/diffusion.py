"""Noise schedule, shared-noise forward process, DDPM reverse step and guidance."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear beta schedule. Arrays are indexed by t with index 0 meaning 'clean'."""

    beta: np.ndarray  # length T+1, beta[0] = 0
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def num_steps(self) -> int:
        return len(self.beta) - 1

    def check_t(self, t: int, lo: int = 1) -> None:
        if not lo <= int(t) <= self.num_steps:
            raise ValueError(f"timestep {t} outside [{lo}, {self.num_steps}]")


def make_schedule(num_steps: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    beta = np.concatenate([[0.0], np.linspace(beta_start, beta_end, num_steps)])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(beta, alpha, alpha_bar)


@dataclass
class DiffusionBatch:
    clean: np.ndarray  # n_views x Z x D
    noise: np.ndarray  # Z x D, shared by every view
    t: int
    noisy: np.ndarray

    def recovered_noise(self, sched: NoiseSchedule) -> np.ndarray:
        return recover_noise(self.noisy, self.clean, sched.alpha_bar[self.t])


def diffuse(y0: np.ndarray, eps: np.ndarray, alpha_bar: float) -> np.ndarray:
    """sqrt(ab) * y0 + sqrt(1 - ab) * eps, with eps broadcast over leading view axes."""
    return np.sqrt(alpha_bar) * y0 + np.sqrt(1.0 - alpha_bar) * eps


# Both terms of the exact forward process live on a 2^-40 grid, so their sum
# (|y| < 2^13) is error-free and subtracting the signal term returns the noise
# term bit for bit from every view.
_GRID = 2.0 ** -40


def _snap(x):
    return np.round(x / _GRID) * _GRID


def _signal_term(y0, alpha_bar):
    ab = np.asarray(alpha_bar, dtype=np.float64)
    return np.where(ab == 1.0, y0, _snap(np.sqrt(ab) * y0))


def diffuse_exact(y0: np.ndarray, eps: np.ndarray, alpha_bar) -> tuple[np.ndarray, np.ndarray]:
    """Forward process with an error-free noise term.

    Returns ``(noisy, noise)`` where ``noise`` is the effective draw (within
    ~1e-12 of ``eps``) that :func:`recover_noise` returns exactly from any view.
    """
    ab = np.asarray(alpha_bar, dtype=np.float64)
    sig = np.sqrt(1.0 - ab)
    r = _snap(sig * eps)
    noise = np.divide(r, sig, out=np.array(eps, dtype=np.float64, copy=True), where=sig > 0)
    return _signal_term(y0, ab) + r, noise


def recover_noise(noisy: np.ndarray, clean: np.ndarray, alpha_bar) -> np.ndarray:
    """(y_t - sqrt(ab) y_0) / sqrt(1 - ab), inverting :func:`diffuse_exact` bit-exactly."""
    ab = np.asarray(alpha_bar, dtype=np.float64)
    ab = ab.reshape(ab.shape + (1,) * (np.ndim(noisy) - ab.ndim))
    return (noisy - _signal_term(clean, ab)) / np.sqrt(1.0 - ab)


def forward_diffuse_views(y0: np.ndarray, t: int, sched: NoiseSchedule,
                          rng: np.random.Generator, noise: np.ndarray | None = None) -> DiffusionBatch:
    """Noise all views of one field at timestep ``t`` with ONE shared draw."""
    y0 = np.asarray(y0)
    if y0.ndim != 3 or y0.shape[0] < 1:
        raise ValueError(f"expected n_views x Z x D clean tokens, got {y0.shape}")
    sched.check_t(t, lo=0)
    if noise is None:
        noise = rng.standard_normal(y0.shape[1:])
    yt, noise = diffuse_exact(y0, noise[None], sched.alpha_bar[t])
    return DiffusionBatch(clean=y0, noise=noise[0], t=int(t), noisy=yt)


def training_loss(eps_pred: nx.Tensor, noise: np.ndarray) -> nx.Tensor:
    """Mean squared error against the shared noise, broadcast to every view.

    ``eps_pred`` has shape [..., n_views, Z, D]; ``noise`` has shape
    [..., Z, D] (one draw per field).
    """
    target = np.broadcast_to(np.expand_dims(noise, -3), eps_pred.shape)
    diff = nx.sub(eps_pred, nx.Tensor(np.ascontiguousarray(target, dtype=eps_pred.data.dtype)))
    return nx.mean(nx.mul(diff, diff))


def ddpm_step(yt: np.ndarray, eps_hat: np.ndarray, t: int, sched: NoiseSchedule,
              rng: np.random.Generator | None, z: np.ndarray | None = None) -> np.ndarray:
    """One ancestral DDPM step with sigma_t = sqrt(beta_t) and no noise at t = 1."""
    sched.check_t(t)
    a, b, ab = sched.alpha[t], sched.beta[t], sched.alpha_bar[t]
    mu = (yt - (b / np.sqrt(1.0 - ab)) * eps_hat) / np.sqrt(a)
    if t == 1:
        return mu
    if z is None:
        z = rng.standard_normal(yt.shape)
    return mu + np.sqrt(b) * z


def cfg_combine(eps_cond: np.ndarray, eps_uncond: np.ndarray, scale: float,
                channel_mask=None) -> np.ndarray:
    """Classifier-free guidance on masked channels; other channels keep eps_cond.

    ``channel_mask`` is a boolean vector over the last axis (or None for all).
    """
    eps_cond = np.asarray(eps_cond)
    eps_uncond = np.asarray(eps_uncond)
    if eps_cond.shape != eps_uncond.shape:
        raise ValueError(f"shape mismatch {eps_cond.shape} vs {eps_uncond.shape}")
    if scale < 0:
        raise ValueError("guidance scale must be >= 0")
    # eps_c + (s - 1)(eps_c - eps_u): same as eps_u + s(eps_c - eps_u), exact at s = 1
    guided = eps_cond + (scale - 1.0) * (eps_cond - eps_uncond)
    if channel_mask is None:
        return guided
    mask = np.asarray(channel_mask, dtype=bool)
    if mask.shape[0] > eps_cond.shape[-1]:
        raise ValueError(f"mask length {mask.shape[0]} exceeds channel dim {eps_cond.shape[-1]}")
    if mask.shape[0] < eps_cond.shape[-1]:
        mask = np.concatenate([mask, np.zeros(eps_cond.shape[-1] - mask.shape[0], bool)])
    return np.where(mask, guided, eps_cond)


def first_channels_mask(n: int, dim: int) -> np.ndarray:
    m = np.zeros(dim, bool)
    m[:n] = True
    return m


# ----------------------------------------------------------------------------
# sampling
# ----------------------------------------------------------------------------

def default_view_coords(spec, n_views: int) -> list[tuple]:
    """Evenly spread view coordinates for image/video fields."""
    from .field import frame_coordinate

    if spec.view_coord_dim == 0:
        return [()] * n_views
    if spec.view_coord_dim == 1:
        return [(frame_coordinate(i, n_views),) for i in range(n_views)]
    raise ValueError("camera fields need explicit view coordinates")


def guidance_mask(mode: str, codec, token_dim: int) -> tuple[np.ndarray, bool]:
    """Returns (mask, in_patch_space).

    ``pixel`` selects colour channels < 3 of the decoded patch layout,
    ``token3`` the literal first three token channels, ``all`` every channel.
    """
    if mode == "pixel":
        return codec.color_channel_mask(3), True
    if mode == "token3":
        return first_channels_mask(3, token_dim), False
    if mode == "all":
        return np.ones(token_dim, bool), False
    raise ValueError(f"unknown channel mask mode {mode!r}")


def _clip_eps(yt, eps_hat, ab, codec):
    x0 = codec.token_to_patch((yt - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab))
    x0 = codec.patch_to_token(np.clip(x0, -1.0, 1.0))
    return (yt - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)


def sample_field(net, cond, spec, n_views: int, sched: NoiseSchedule, scale: float,
                 rng: np.random.Generator, codec, view_coords=None, num_freqs: int = 10,
                 channel_mask: str = "pixel", shared_init_noise: bool = False,
                 clip_denoised: bool = True, return_tokens: bool = False):
    """Generate ``n_views`` views for each condition in ``cond``.

    ``cond`` is a Zc x cond_dim matrix or a B x Zc x cond_dim stack. Returns a
    list (one per condition) of lists of decoded :class:`View`.

    With ``clip_denoised`` the predicted clean signal is clamped to [-1, 1] in
    pixel space before each step (ε is re-derived from the clamped estimate).
    """
    from .field import embed_coordinates, grid_coordinates

    if n_views < 1:
        raise ValueError("n_views must be >= 1")
    cond = np.asarray(getattr(cond, "tokens", cond), dtype=np.float64)
    single = cond.ndim == 2
    if single:
        cond = cond[None]
    bsz = cond.shape[0]
    if view_coords is None:
        view_coords = default_view_coords(spec, n_views)
    if len(view_coords) != n_views:
        raise ValueError(f"{len(view_coords)} view coordinates for {n_views} views")
    rows, cols = codec.grid_shape(spec.height, spec.width)
    coords = np.stack([embed_coordinates(grid_coordinates(spec, rows, cols, vc), num_freqs)
                       for vc in view_coords])
    dt = net.params["in.w"].data.dtype
    coords2 = np.broadcast_to(coords, (2 * bsz,) + coords.shape).astype(dt)
    cond2 = np.concatenate([cond, np.zeros_like(cond)]).astype(dt)
    drop = np.array([False] * bsz + [True] * bsz)
    z, d = rows * cols, codec.token_dim
    if shared_init_noise:
        y = np.repeat(rng.standard_normal((bsz, 1, z, d)), n_views, axis=1)
    else:
        y = rng.standard_normal((bsz, n_views, z, d))
    mask, patch_space = guidance_mask(channel_mask, codec, d)
    with nx.no_grad():
        for t in range(sched.num_steps, 0, -1):
            yy = np.concatenate([y, y]).astype(dt)
            eps = net(yy, coords2, np.full(2 * bsz, t), cond2, drop).data.astype(np.float64)
            eps_c, eps_u = eps[:bsz], eps[bsz:]
            if patch_space:
                g = cfg_combine(codec.token_to_patch(eps_c), codec.token_to_patch(eps_u), scale, mask)
                eps_hat = codec.patch_to_token(g)
            else:
                eps_hat = cfg_combine(eps_c, eps_u, scale, mask)
            if clip_denoised:
                eps_hat = _clip_eps(y, eps_hat, sched.alpha_bar[t], codec)
            y = ddpm_step(y, eps_hat, t, sched, rng)
    if return_tokens:
        return y[0] if single else y
    out = [[codec.decode_view(y[b, v], spec.height, spec.width, view_coords[v]) for v in range(n_views)]
           for b in range(bsz)]
    return out[0] if single else out
