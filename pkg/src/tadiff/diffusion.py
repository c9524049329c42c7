"""Forward corruption, posterior math, composite loss and clamped sampling.

Everything runs per position: the schedule supplies one alpha-bar curve per
sequence slot, so a constant difficulty profile makes all of this collapse to
the ordinary single-schedule equations bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .errors import BadParams, ShapeMismatch, TimestepOutOfRange
from .schedule import TokenSchedule
from .tokenization import PAD_ID


@dataclass(frozen=True)
class DiffusionConfig:
    T: int = 2000
    embed_dim: int = 64
    n_positions: int = 64
    clamp_enabled: bool = True
    stride: int = 1
    sigma0: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.T < 2:
            raise BadParams(f"T must be at least 2, got {self.T}")
        if self.embed_dim < 2:
            raise BadParams(f"embed_dim must be at least 2, got {self.embed_dim}")
        if self.n_positions < 1:
            raise BadParams("n_positions must be positive")
        if self.stride < 1:
            raise BadParams("stride must be positive")
        if self.sigma0 < 0:
            raise BadParams("sigma0 must be nonnegative")


def alpha_bar_tensor(schedule, dtype=torch.float32, device=None) -> torch.Tensor:
    """Schedule as an (N, T) tensor; accepts TokenSchedule or a ready tensor."""
    if isinstance(schedule, TokenSchedule):
        return torch.as_tensor(schedule.alpha_bar, dtype=dtype, device=device)
    out = torch.as_tensor(schedule, dtype=dtype, device=device)
    if out.ndim != 2:
        raise ShapeMismatch(f"schedule must be 2-d, got shape {tuple(out.shape)}")
    return out


def _as_timesteps(t, batch: int, device) -> torch.Tensor:
    if isinstance(t, int):
        return torch.full((batch,), t, dtype=torch.long, device=device)
    t = torch.as_tensor(t, dtype=torch.long, device=device)
    if t.shape != (batch,):
        raise ShapeMismatch(f"timesteps must have shape ({batch},), got {tuple(t.shape)}")
    return t


def _gather(alpha_bar: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    """Per-position alpha-bar at per-example timesteps: (N,T),(B,) -> (B,N)."""
    return alpha_bar.index_select(1, t - 1).transpose(0, 1)


def q_sample(z0: torch.Tensor, t, alpha_bar: torch.Tensor,
             noise: torch.Tensor) -> torch.Tensor:
    """Corrupt clean latents to step t: sqrt(ab)*z0 + sqrt(1-ab)*noise."""
    if z0.ndim != 3:
        raise ShapeMismatch(f"z0 must be (B, N, d), got {tuple(z0.shape)}")
    B, N, _ = z0.shape
    if alpha_bar.shape[0] != N:
        raise ShapeMismatch(
            f"schedule covers {alpha_bar.shape[0]} positions, latents have {N}"
        )
    if noise.shape != z0.shape:
        raise ShapeMismatch("noise shape must match z0")
    t = _as_timesteps(t, B, z0.device)
    T = alpha_bar.shape[1]
    if ((t < 1) | (t > T)).any():
        raise TimestepOutOfRange(f"timesteps must lie in [1, {T}]")
    ab = _gather(alpha_bar, t).to(z0.dtype).unsqueeze(-1)
    return torch.sqrt(ab) * z0 + torch.sqrt(1.0 - ab) * noise


@dataclass(frozen=True)
class Posterior:
    mean: torch.Tensor
    beta_tilde: torch.Tensor


def posterior_mean(z_t: torch.Tensor, z0: torch.Tensor, t,
                   alpha_bar: torch.Tensor) -> Posterior:
    """Exact posterior mean U*z_t + E*z0 and its variance beta-tilde.

    U = sqrt(alpha_t)(1-ab_{t-1})/(1-ab_t), E = sqrt(ab_{t-1})beta_t/(1-ab_t).
    Defined for t >= 2; at lower t the previous-step quantities degenerate.
    """
    if z_t.shape != z0.shape or z_t.ndim != 3:
        raise ShapeMismatch("z_t and z0 must share shape (B, N, d)")
    B, N, _ = z_t.shape
    t = _as_timesteps(t, B, z_t.device)
    T = alpha_bar.shape[1]
    if ((t < 2) | (t > T)).any():
        raise TimestepOutOfRange(f"posterior needs timesteps in [2, {T}]")
    ab_t = _gather(alpha_bar, t).to(z_t.dtype)
    ab_prev = _gather(alpha_bar, t - 1).to(z_t.dtype)
    alpha_t = ab_t / ab_prev
    beta_t = 1.0 - alpha_t
    u = torch.sqrt(alpha_t) * (1.0 - ab_prev) / (1.0 - ab_t)
    e = torch.sqrt(ab_prev) * beta_t / (1.0 - ab_t)
    mean = u.unsqueeze(-1) * z_t + e.unsqueeze(-1) * z0
    beta_tilde = (1.0 - ab_prev) / (1.0 - ab_t) * beta_t
    return Posterior(mean, beta_tilde)


@dataclass
class LossParts:
    """Composite objective with its side channel for difficulty tracking."""

    total: torch.Tensor
    denoising: torch.Tensor
    consistency: torch.Tensor
    rounding: torch.Tensor
    t: torch.Tensor = field(repr=False)
    errors: torch.Tensor = field(repr=False)
    mask: torch.Tensor = field(repr=False)

    def profile_batches(self):
        """Yield (t, errors, mask) rows ready for estimate_difficulty."""
        t = self.t.tolist()
        errors = self.errors.cpu().numpy()
        mask = self.mask.cpu().numpy()
        for k in range(len(t)):
            yield t[k], errors[k], mask[k]


def training_loss(model, targets: torch.Tensor, condition: torch.Tensor,
                  alpha_bar: torch.Tensor, *, generator=None, t=None,
                  noise=None, noise1=None, sigma0: float = 0.0) -> LossParts:
    """Denoising + consistency + rounding, masked to non-pad target slots.

    t defaults to a uniform draw from {2..T} per example; pass t and both
    noises to pin every stochastic choice (gradient checks rely on that).
    """
    if targets.ndim != 2:
        raise ShapeMismatch(f"targets must be (B, N), got {tuple(targets.shape)}")
    B, N = targets.shape
    T = alpha_bar.shape[1]
    mask = targets != PAD_ID
    n_live = int(mask.sum())
    if n_live == 0:
        raise ShapeMismatch("batch has no non-pad target positions")

    z0 = model.embed_targets(targets)
    d = z0.shape[-1]
    if sigma0 > 0:
        z0 = z0 + sigma0 * torch.randn(
            z0.shape, generator=generator, dtype=z0.dtype, device=z0.device
        )
    if t is None:
        t = torch.randint(2, T + 1, (B,), generator=generator, device=targets.device)
    if noise is None:
        noise = torch.randn(z0.shape, generator=generator, dtype=z0.dtype,
                            device=z0.device)
    if noise1 is None:
        noise1 = torch.randn(z0.shape, generator=generator, dtype=z0.dtype,
                             device=z0.device)

    fmask = mask.to(z0.dtype)

    z_t = q_sample(z0, t, alpha_bar, noise)
    pred = model(z_t, t, condition)
    per_pos = ((pred - z0) ** 2).sum(-1)
    denoising = (per_pos * fmask).sum() / (n_live * d)

    z_1 = q_sample(z0, 1, alpha_bar, noise1)
    pred1 = model(z_1, 1, condition)
    consistency = (((pred1 - z0) ** 2).sum(-1) * fmask).sum() / (n_live * d)

    logits = model.rounding_logits(z0)
    nll = torch.nn.functional.cross_entropy(
        logits.reshape(B * N, -1), targets.reshape(B * N), reduction="none"
    ).reshape(B, N)
    rounding = (nll * fmask).sum() / n_live

    return LossParts(
        total=denoising + consistency + rounding,
        denoising=denoising,
        consistency=consistency,
        rounding=rounding,
        t=t.detach(),
        errors=per_pos.detach(),
        mask=mask,
    )


def clamp_to_embedding(z: torch.Tensor, table: torch.Tensor):
    """Snap each vector to its nearest embedding row (ties: lowest id).

    Returns (rows, ids); rows are gathered from the table, so they match it
    bit for bit.
    """
    if z.shape[-1] != table.shape[1]:
        raise ShapeMismatch("latent dim does not match embedding dim")
    dist = (
        (z * z).sum(-1, keepdim=True)
        - 2.0 * (z @ table.T)
        + (table * table).sum(-1)
    )
    low = dist.min(dim=-1, keepdim=True).values
    v = table.shape[0]
    candidates = torch.arange(v, device=z.device).expand(dist.shape)
    ids = torch.where(dist == low, candidates, v).min(dim=-1).values
    return table[ids], ids


@dataclass
class SampleResult:
    tokens: torch.Tensor
    z0_final: torch.Tensor
    trace: list = field(default_factory=list, repr=False)


@torch.no_grad()
def reverse_sample(model, condition: torch.Tensor, alpha_bar: torch.Tensor,
                   cfg: DiffusionConfig, *, generator=None,
                   keep_trace: bool = False) -> SampleResult:
    """Sample tokens from pure noise under the per-position schedule.

    Walks t = T, T-stride, ... down to 1. At each step the model's clean-latent
    prediction is (optionally) clamped onto the embedding table before being
    renoised to the next level; the final step rounds with the tied head.
    """
    N, T = alpha_bar.shape
    B = condition.shape[0]
    table = model.embedding_table()
    dtype = table.dtype
    device = condition.device

    z = torch.randn((B, N, table.shape[1]), generator=generator, dtype=dtype,
                    device=device)
    trace = []
    t = T
    while t >= 2:
        pred = model(z, _as_timesteps(t, B, device), condition)
        if cfg.clamp_enabled:
            pred, _ = clamp_to_embedding(pred, table)
        if keep_trace:
            trace.append((t, pred.detach().clone()))
        t_next = max(t - cfg.stride, 1)
        ab_next = alpha_bar[:, t_next - 1].to(dtype).unsqueeze(-1)
        eps = torch.randn(z.shape, generator=generator, dtype=dtype, device=device)
        z = torch.sqrt(ab_next) * pred + torch.sqrt(1.0 - ab_next) * eps
        t = t_next

    pred = model(z, _as_timesteps(1, B, device), condition)
    tokens = model.rounding_logits(pred).argmax(-1)
    return SampleResult(tokens=tokens, z0_final=pred, trace=trace)
