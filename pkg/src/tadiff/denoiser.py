"""Encoder-decoder denoising network, tied rounding head, checkpoints.

The target embedding doubles as the rounding head (logits are dot products
against the table) and as the clamp codebook at sampling time. Its PAD row is
not a parameter at all: the table is assembled with a constant zero row 0, so
no optimizer or gradient path can move it.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import (
    BadParams,
    FormatError,
    IdOutOfRange,
    IoError,
    NonFiniteGradient,
    ShapeMismatch,
    TimestepOutOfRange,
)
from .tokenization import PAD_ID

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class DenoiserConfig:
    target_vocab: int
    cond_vocab: int
    embed_dim: int = 64
    n_heads: int = 4
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    ffn_dim: int = 256
    n_positions: int = 64
    cond_positions: int = 64
    T: int = 2000
    dropout: float = 0.0

    def __post_init__(self):
        if self.target_vocab < 2 or self.cond_vocab < 2:
            raise BadParams("vocabularies must have at least two entries")
        if self.embed_dim < 2 or self.embed_dim % self.n_heads:
            raise BadParams("embed_dim must be >= 2 and divisible by n_heads")
        if self.T < 2:
            raise BadParams("T must be at least 2")
        if min(self.n_encoder_layers, self.n_decoder_layers,
               self.n_positions, self.cond_positions) < 1:
            raise BadParams("layer and position counts must be positive")


class ZeroPadEmbedding(nn.Module):
    """Token embedding whose row 0 is a structural zero, never trained."""

    def __init__(self, vocab: int, dim: int):
        super().__init__()
        self.vocab = vocab
        self.content = nn.Parameter(torch.empty(vocab - 1, dim))

    def table(self) -> torch.Tensor:
        zero = self.content.new_zeros(1, self.content.shape[1])
        return torch.cat([zero, self.content], dim=0)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.numel() and (int(tokens.min()) < 0 or int(tokens.max()) >= self.vocab):
            raise IdOutOfRange(
                f"token ids must lie in [0, {self.vocab}), got "
                f"[{int(tokens.min())}, {int(tokens.max())}]"
            )
        return nn.functional.embedding(tokens, self.table())


def _layer(cfg: DenoiserConfig, decoder: bool) -> nn.Module:
    cls = nn.TransformerDecoderLayer if decoder else nn.TransformerEncoderLayer
    return cls(
        d_model=cfg.embed_dim,
        nhead=cfg.n_heads,
        dim_feedforward=cfg.ffn_dim,
        dropout=cfg.dropout,
        activation="gelu",
        batch_first=True,
        norm_first=True,
    )


class Denoiser(nn.Module):
    """Predicts clean latents from noisy ones, conditioned on a token sequence."""

    def __init__(self, cfg: DenoiserConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        d = cfg.embed_dim
        self.target_embed = ZeroPadEmbedding(cfg.target_vocab, d)
        self.cond_embed = ZeroPadEmbedding(cfg.cond_vocab, d)
        self.target_pos = nn.Parameter(torch.empty(cfg.n_positions, d))
        self.cond_pos = nn.Parameter(torch.empty(cfg.cond_positions, d))
        self.time_embed = nn.Parameter(torch.empty(cfg.T, d))
        self.encoder = nn.ModuleList(
            _layer(cfg, decoder=False) for _ in range(cfg.n_encoder_layers)
        )
        self.decoder = nn.ModuleList(
            _layer(cfg, decoder=True) for _ in range(cfg.n_decoder_layers)
        )
        self.enc_norm = nn.LayerNorm(d)
        self.dec_norm = nn.LayerNorm(d)
        self.out_proj = nn.Linear(d, d)
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        """Normal(0, 0.02) matrices, unit norms, zero biases; seed-determined."""
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if p.ndim >= 2:
                    p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * 0.02)
                elif name.endswith("bias"):
                    p.zero_()
                else:
                    p.fill_(1.0)

    def embedding_table(self) -> torch.Tensor:
        return self.target_embed.table()

    def embed_targets(self, tokens: torch.Tensor) -> torch.Tensor:
        """Clean latents g(S): plain row lookup, PAD slots come out zero."""
        return self.target_embed(tokens)

    def rounding_logits(self, z: torch.Tensor) -> torch.Tensor:
        """Tied-head logits: dot products against the embedding table."""
        return z @ self.embedding_table().T

    def forward(self, z_t: torch.Tensor, t: torch.Tensor,
                condition: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        if z_t.ndim != 3 or z_t.shape[-1] != cfg.embed_dim:
            raise ShapeMismatch(f"z_t must be (B, N, {cfg.embed_dim})")
        B, N, _ = z_t.shape
        if N > cfg.n_positions:
            raise ShapeMismatch(f"{N} positions exceed the configured {cfg.n_positions}")
        if condition.ndim != 2 or condition.shape[0] != B:
            raise ShapeMismatch("condition must be (B, M)")
        if condition.shape[1] > cfg.cond_positions:
            raise ShapeMismatch("condition longer than configured cond_positions")
        t = torch.as_tensor(t, dtype=torch.long, device=z_t.device)
        if t.ndim == 0:
            t = t.expand(B)
        if ((t < 1) | (t > cfg.T)).any():
            raise TimestepOutOfRange(f"timesteps must lie in [1, {cfg.T}]")

        pad = condition == PAD_ID
        if pad.all(dim=1).any():
            raise ShapeMismatch("every condition needs at least one non-pad token")

        c = self.cond_embed(condition) + self.cond_pos[: condition.shape[1]]
        for layer in self.encoder:
            c = layer(c, src_key_padding_mask=pad)
        c = self.enc_norm(c)

        h = z_t + self.target_pos[:N] + self.time_embed[t - 1].unsqueeze(1)
        for layer in self.decoder:
            h = layer(h, c, memory_key_padding_mask=pad)
        return self.out_proj(self.dec_norm(h))


def make_optimizer(model: nn.Module, lr: float) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=lr)


def apply_gradients(loss: torch.Tensor, model: nn.Module,
                    optimizer: torch.optim.Optimizer) -> None:
    """Backward pass plus one optimizer step; refuses non-finite gradients."""
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    for name, p in model.named_parameters():
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise NonFiniteGradient(f"non-finite gradient in {name}")
    optimizer.step()


def save_checkpoint(model: Denoiser, path: str | Path, *, step: int = 0,
                    vocab_sha: dict | None = None) -> None:
    """Write a zip archive: manifest.json plus one little-endian f32 blob per param."""
    params = {}
    blobs = {}
    for name, p in model.named_parameters():
        entry = f"params/{name}.bin"
        params[name] = {"shape": list(p.shape), "file": entry}
        blobs[entry] = p.detach().cpu().numpy().astype("<f4").tobytes()
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(model.cfg),
        "step": step,
        "vocab_sha": vocab_sha or {},
        "params": params,
    }
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        # fixed timestamps so two identical saves are byte-identical
        def put(name: str, payload: bytes) -> None:
            info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, payload)

        put("manifest.json", json.dumps(manifest, indent=1).encode())
        for entry, blob in blobs.items():
            put(entry, blob)


def load_checkpoint(path: str | Path) -> tuple[Denoiser, dict]:
    """Rebuild a Denoiser from an archive; shapes are validated against config."""
    path = Path(path)
    if not path.exists():
        raise IoError(f"no checkpoint at {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            if manifest.get("format_version") != CHECKPOINT_VERSION:
                raise FormatError(
                    f"unsupported checkpoint version {manifest.get('format_version')}"
                )
            model = Denoiser(DenoiserConfig(**manifest["config"]))
            named = dict(model.named_parameters())
            if set(named) != set(manifest["params"]):
                raise FormatError("checkpoint parameter names do not match model")
            with torch.no_grad():
                for name, meta in manifest["params"].items():
                    raw = np.frombuffer(zf.read(meta["file"]), dtype="<f4")
                    if list(named[name].shape) != meta["shape"]:
                        raise FormatError(f"shape mismatch for {name}")
                    if raw.size != named[name].numel():
                        raise FormatError(f"size mismatch for {name}")
                    named[name].copy_(
                        torch.from_numpy(raw.reshape(meta["shape"]).copy())
                    )
    except zipfile.BadZipFile as exc:
        raise FormatError(f"{path} is not a checkpoint archive") from exc
    return model, manifest
