"""Tests for forward corruption, posterior identities, loss and sampling."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from tadiff.denoiser import Denoiser, DenoiserConfig
from tadiff.diffusion import (
    DiffusionConfig,
    LossParts,
    alpha_bar_tensor,
    clamp_to_embedding,
    posterior_mean,
    q_sample,
    reverse_sample,
    training_loss,
)
from tadiff.errors import BadParams, ShapeMismatch, TimestepOutOfRange
from tadiff.schedule import sqrt_schedule, uniform_schedule
from tadiff.tokenization import PAD_ID


def tiny_model(target_vocab=12, cond_vocab=10, d=16, N=6, M=5, T=40, seed=0):
    cfg = DenoiserConfig(
        target_vocab=target_vocab,
        cond_vocab=cond_vocab,
        embed_dim=d,
        n_heads=2,
        ffn_dim=32,
        n_positions=N,
        cond_positions=M,
        T=T,
    )
    return Denoiser(cfg, seed=seed)


def tiny_schedule(N=6, T=40, dtype=torch.float64):
    return alpha_bar_tensor(uniform_schedule(sqrt_schedule(T), N), dtype=dtype)


class TestConfig:
    def test_defaults_valid(self):
        cfg = DiffusionConfig()
        assert cfg.T == 2000 and cfg.clamp_enabled

    def test_rejects_degenerate(self):
        with pytest.raises(BadParams):
            DiffusionConfig(T=1)
        with pytest.raises(BadParams):
            DiffusionConfig(embed_dim=1)
        with pytest.raises(BadParams):
            DiffusionConfig(stride=0)


class TestQSample:
    def test_signal_only_limit(self):
        ab = torch.full((3, 5), 1.0 - 1e-12, dtype=torch.float64)
        z0 = torch.randn(2, 3, 4, dtype=torch.float64)
        zt = q_sample(z0, 5, ab, torch.zeros_like(z0))
        assert torch.allclose(zt, z0, atol=1e-6)

    def test_noise_only_limit(self):
        ab = torch.full((3, 5), 1e-12, dtype=torch.float64)
        noise = torch.randn(2, 3, 4, dtype=torch.float64)
        zt = q_sample(torch.zeros(2, 3, 4, dtype=torch.float64), 1, ab, noise)
        assert torch.allclose(zt, noise, atol=1e-6)

    def test_marginal_statistics(self):
        # Monte-Carlo check of mean sqrt(ab)z0 and per-coordinate var 1-ab
        ab_val = 0.62
        n = 100_000
        g = torch.Generator().manual_seed(7)
        z0 = torch.tensor([[[1.5, -0.5]]]).expand(n, 1, 2)
        ab = torch.full((1, 3), ab_val)
        noise = torch.randn(n, 1, 2, generator=g)
        zt = q_sample(z0, 2, ab, noise)
        want_mean = np.sqrt(ab_val) * np.array([1.5, -0.5])
        got_mean = zt.mean(0).squeeze(0).numpy()
        sigma = np.sqrt(1 - ab_val)
        assert np.abs(got_mean - want_mean).max() < 3 * sigma / np.sqrt(n)
        got_var = zt.var(0, unbiased=True).squeeze(0).numpy()
        assert np.abs(got_var - (1 - ab_val)).max() < 0.02 * (1 - ab_val)

    def test_per_position_schedules_differ(self):
        ab = torch.tensor([[0.9], [0.1]], dtype=torch.float64)
        z0 = torch.ones(1, 2, 1, dtype=torch.float64)
        zt = q_sample(z0, 1, ab, torch.zeros_like(z0))
        assert zt[0, 0, 0] == pytest.approx(np.sqrt(0.9))
        assert zt[0, 1, 0] == pytest.approx(np.sqrt(0.1))

    def test_timestep_validation(self):
        ab = tiny_schedule(T=10)
        z0 = torch.zeros(1, 6, 4, dtype=torch.float64)
        with pytest.raises(TimestepOutOfRange):
            q_sample(z0, 0, ab, torch.zeros_like(z0))
        with pytest.raises(TimestepOutOfRange):
            q_sample(z0, 11, ab, torch.zeros_like(z0))

    def test_shape_validation(self):
        ab = tiny_schedule()
        with pytest.raises(ShapeMismatch):
            q_sample(torch.zeros(2, 3), 1, ab, torch.zeros(2, 3))
        z0 = torch.zeros(1, 6, 4, dtype=torch.float64)
        with pytest.raises(ShapeMismatch):
            q_sample(z0, 1, ab, torch.zeros(1, 6, 5, dtype=torch.float64))


class TestPosterior:
    def test_noise_free_consistency(self):
        # z_t on the clean trajectory must step back to sqrt(ab_prev) z0
        g = torch.Generator().manual_seed(1)
        for _ in range(25):
            T = int(torch.randint(2, 60, (1,), generator=g))
            N = int(torch.randint(1, 5, (1,), generator=g))
            ab = tiny_schedule(N, T)
            z0 = torch.randn(2, N, 3, generator=g, dtype=torch.float64)
            t = int(torch.randint(2, T + 1, (1,), generator=g))
            ab_t = ab[:, t - 1].unsqueeze(-1)
            ab_prev = ab[:, t - 2].unsqueeze(-1)
            post = posterior_mean(torch.sqrt(ab_t) * z0, z0, t, ab)
            want = torch.sqrt(ab_prev) * z0
            rel = ((post.mean - want).abs() / want.abs().clamp_min(1e-12)).max()
            assert rel < 1e-12

    def test_collapse_when_prev_is_clean(self):
        ab = torch.tensor([[1.0 - 1e-15, 0.5]], dtype=torch.float64)
        z0 = torch.randn(1, 1, 4, dtype=torch.float64)
        z_t = torch.randn(1, 1, 4, dtype=torch.float64)
        post = posterior_mean(z_t, z0, 2, ab)
        assert torch.allclose(post.mean, z0, atol=1e-6)

    def test_beta_tilde_formula(self):
        ab = torch.tensor([[0.9, 0.6, 0.2]], dtype=torch.float64)
        post = posterior_mean(
            torch.zeros(1, 1, 2, dtype=torch.float64),
            torch.zeros(1, 1, 2, dtype=torch.float64),
            3,
            ab,
        )
        alpha3 = 0.2 / 0.6
        want = (1 - 0.6) / (1 - 0.2) * (1 - alpha3)
        assert post.beta_tilde[0, 0] == pytest.approx(want, rel=1e-12)

    def test_coefficient_identity(self):
        # U sqrt(ab_t) + E == sqrt(ab_prev) exercised via random latents
        g = torch.Generator().manual_seed(3)
        ab = tiny_schedule(4, 30)
        z0 = torch.randn(3, 4, 5, generator=g, dtype=torch.float64)
        for t in (2, 17, 30):
            post = posterior_mean(torch.sqrt(ab[:, t - 1]).unsqueeze(-1) * z0, z0, t, ab)
            want = torch.sqrt(ab[:, t - 2]).unsqueeze(-1) * z0
            assert torch.allclose(post.mean, want, rtol=1e-12, atol=1e-14)

    def test_guard(self):
        ab = tiny_schedule(T=10)
        z = torch.zeros(1, 6, 4, dtype=torch.float64)
        with pytest.raises(TimestepOutOfRange):
            posterior_mean(z, z, 1, ab)


class TestTrainingLoss:
    def setup_method(self):
        torch.manual_seed(0)
        self.model = tiny_model().double()
        self.ab = tiny_schedule()
        self.targets = torch.tensor([[2, 8, 9, 1, PAD_ID, PAD_ID],
                                     [3, 10, 1, PAD_ID, PAD_ID, PAD_ID]])
        self.cond = torch.tensor([[1, 4, 5, 2, PAD_ID],
                                  [1, 6, 2, PAD_ID, PAD_ID]])

    def test_parts_nonnegative_and_sum(self):
        g = torch.Generator().manual_seed(5)
        parts = training_loss(self.model, self.targets, self.cond, self.ab,
                              generator=g)
        assert isinstance(parts, LossParts)
        for term in (parts.denoising, parts.consistency, parts.rounding):
            assert term.item() >= 0
        assert parts.total.item() == pytest.approx(
            parts.denoising.item() + parts.consistency.item() + parts.rounding.item()
        )

    def test_perfect_model_gives_zero_denoising(self):
        class Perfect:
            def __init__(self, inner, z0):
                self.inner, self.z0 = inner, z0

            def embed_targets(self, tokens):
                return self.z0

            def rounding_logits(self, z):
                return self.inner.rounding_logits(z) * 1e6  # one-hot limit

            def __call__(self, z_t, t, cond):
                return self.z0

        z0 = self.model.embed_targets(self.targets)
        wrapped = Perfect(self.model, z0)
        g = torch.Generator().manual_seed(5)
        parts = training_loss(wrapped, self.targets, self.cond, self.ab,
                              generator=g)
        assert parts.denoising.item() == 0
        assert parts.consistency.item() == 0

    def test_offset_prediction_closed_form(self):
        # prediction z0 + delta everywhere -> denoising term exactly delta^2
        delta = 0.37

        class Offset:
            def __init__(self, inner):
                self.inner = inner

            def embed_targets(self, tokens):
                return self.inner.embed_targets(tokens)

            def rounding_logits(self, z):
                return self.inner.rounding_logits(z)

            def __call__(self, z_t, t, cond):
                return self._z0 + delta

        off = Offset(self.model)
        off._z0 = self.model.embed_targets(self.targets)
        g = torch.Generator().manual_seed(5)
        parts = training_loss(off, self.targets, self.cond, self.ab, generator=g)
        assert parts.denoising.item() == pytest.approx(delta**2, rel=1e-9)
        assert parts.consistency.item() == pytest.approx(delta**2, rel=1e-9)

    def test_uniform_logits_round_to_log_v(self):
        class Uniform:
            def __init__(self, inner):
                self.inner = inner

            def embed_targets(self, tokens):
                return self.inner.embed_targets(tokens)

            def rounding_logits(self, z):
                return torch.zeros(*z.shape[:-1], self.inner.cfg.target_vocab,
                                   dtype=z.dtype)

            def __call__(self, z_t, t, cond):
                return self.inner(z_t, t, cond)

        g = torch.Generator().manual_seed(5)
        parts = training_loss(Uniform(self.model), self.targets, self.cond,
                              self.ab, generator=g)
        assert parts.rounding.item() == pytest.approx(np.log(12), rel=1e-9)

    def test_draws_pinnable(self):
        t = torch.tensor([7, 19])
        noise = torch.randn(2, 6, 16, dtype=torch.float64)
        noise1 = torch.randn(2, 6, 16, dtype=torch.float64)
        a = training_loss(self.model, self.targets, self.cond, self.ab,
                          t=t, noise=noise, noise1=noise1)
        b = training_loss(self.model, self.targets, self.cond, self.ab,
                          t=t, noise=noise, noise1=noise1)
        assert a.total.item() == b.total.item()

    def test_side_channel_shapes(self):
        g = torch.Generator().manual_seed(5)
        parts = training_loss(self.model, self.targets, self.cond, self.ab,
                              generator=g)
        assert parts.errors.shape == (2, 6)
        assert parts.t.shape == (2,)
        assert (parts.t >= 2).all() and (parts.t <= 40).all()
        batches = list(parts.profile_batches())
        assert len(batches) == 2
        assert batches[0][2].dtype == bool

    def test_all_pad_rejected(self):
        targets = torch.full((1, 6), PAD_ID)
        with pytest.raises(ShapeMismatch):
            training_loss(self.model, targets, self.cond[:1], self.ab)


class TestClamp:
    def test_rows_returned_bit_equal(self):
        g = torch.Generator().manual_seed(2)
        table = torch.randn(9, 4, generator=g)
        z = torch.randn(3, 5, 4, generator=g)
        rows, ids = clamp_to_embedding(z, table)
        assert rows.shape == z.shape
        for b in range(3):
            for n in range(5):
                assert (rows[b, n] == table[ids[b, n]]).all()

    def test_nearest_by_distance(self):
        table = torch.tensor([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
        z = torch.tensor([[[0.9, 0.1], [0.1, 1.6], [0.05, 0.0]]])
        _, ids = clamp_to_embedding(z, table)
        assert ids[0].tolist() == [1, 2, 0]

    def test_tie_breaks_to_lowest_id(self):
        table = torch.tensor([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]])
        z = torch.zeros(1, 2, 2)
        _, ids = clamp_to_embedding(z, table)
        # all three rows are equidistant from the origin
        assert ids.tolist() == [[0, 0]]

    def test_lookup_is_fixpoint(self):
        g = torch.Generator().manual_seed(4)
        table = torch.randn(12, 6, generator=g)
        z = table[torch.tensor([[3, 7, 0, 11]])]
        rows, ids = clamp_to_embedding(z, table)
        assert ids.tolist() == [[3, 7, 0, 11]]
        assert (rows == z).all()


class TestReverseSample:
    def setup_method(self):
        self.model = tiny_model().eval()
        self.ab = tiny_schedule(dtype=torch.float32)
        self.cond = torch.tensor([[1, 4, 5, 2, PAD_ID]])

    def test_returns_tokens_and_determinism(self):
        cfg = DiffusionConfig(T=40, embed_dim=16, n_positions=6)
        a = reverse_sample(self.model, self.cond, self.ab, cfg,
                           generator=torch.Generator().manual_seed(9))
        b = reverse_sample(self.model, self.cond, self.ab, cfg,
                           generator=torch.Generator().manual_seed(9))
        assert a.tokens.shape == (1, 6)
        assert (a.tokens == b.tokens).all()
        c = reverse_sample(self.model, self.cond, self.ab, cfg,
                           generator=torch.Generator().manual_seed(10))
        assert a.tokens.shape == c.tokens.shape

    def test_trace_rows_live_in_table(self):
        cfg = DiffusionConfig(T=40, embed_dim=16, n_positions=6)
        out = reverse_sample(self.model, self.cond, self.ab, cfg,
                             generator=torch.Generator().manual_seed(9),
                             keep_trace=True)
        assert len(out.trace) == 39  # visits T..2
        table = self.model.embedding_table()
        for t, snap in out.trace:
            flat = snap.reshape(-1, snap.shape[-1])
            for row in flat:
                assert (row == table).all(dim=1).any()

    def test_stride_shortens_walk(self):
        cfg = DiffusionConfig(T=40, embed_dim=16, n_positions=6, stride=7)
        out = reverse_sample(self.model, self.cond, self.ab, cfg,
                             generator=torch.Generator().manual_seed(9),
                             keep_trace=True)
        visited = [t for t, _ in out.trace]
        assert visited == [40, 33, 26, 19, 12, 5]

    def test_unclamped_rows_leave_table(self):
        cfg = DiffusionConfig(T=40, embed_dim=16, n_positions=6,
                              clamp_enabled=False)
        out = reverse_sample(self.model, self.cond, self.ab, cfg,
                             generator=torch.Generator().manual_seed(9),
                             keep_trace=True)
        table = self.model.embedding_table()
        _, snap = out.trace[0]
        hits = sum(
            bool((row == table).all(dim=1).any())
            for row in snap.reshape(-1, snap.shape[-1])
        )
        assert hits < snap.shape[0] * snap.shape[1]
