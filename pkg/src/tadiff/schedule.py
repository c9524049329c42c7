"""Noise schedules: sqrt baseline, difficulty tracking, token-aware rebuild.

The baseline is the familiar sqrt cumulative schedule. The token-aware
construction replaces it per position: training records how hard each
position is to denoise at each timestep, a piecewise map from difficulty to
cumulative alpha is built on those knots, the difficulty axis is replaced
by a linear ramp, and the mapped values are clamped and projected onto the
non-increasing cone. Positions that were never observed keep the baseline.

Everything here is float64 numpy; tensors convert at the diffusion layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadParams,
    EmptyProfile,
    OutOfRange,
    ShapeMismatch,
    TimestepOutOfRange,
)

# Cumulative alphas live in [ALPHA_EPS, 1 - ALPHA_EPS]; the raw sqrt value
# goes negative at t = T, so the clamp is not optional.
ALPHA_EPS = 1e-5

# Additive jitter separating tied difficulty knots (keeps the map's interval
# denominators nonzero).
TIE_JITTER = 1e-8

# Difficulty statistics are bucketed over timesteps to keep the profile
# small; buckets are expanded back to T knots by linear interpolation.
N_BUCKETS = 50

MAPPINGS = ("linear", "cosine")
SCHEDULE_KINDS = ("uniform_sqrt", "token_aware")


@dataclass(frozen=True)
class BaselineSchedule:
    """Cumulative alphas for t = 1..T, shared by every position."""

    alpha_bar: np.ndarray
    T: int
    s: float

    def __post_init__(self):
        ab = self.alpha_bar
        if ab.shape != (self.T,):
            raise ShapeMismatch(f"alpha_bar shape {ab.shape} != ({self.T},)")
        if not ((ab > 0) & (ab < 1)).all():
            raise BadParams("baseline alpha_bar must lie strictly inside (0, 1)")
        if (np.diff(ab) > 0).any():
            raise BadParams("baseline alpha_bar must be non-increasing")


def sqrt_schedule(T: int, s: float = 1e-4) -> BaselineSchedule:
    """alpha_bar_t = 1 - sqrt(t/T + s), clamped into the open unit interval."""
    if T < 1:
        raise BadParams(f"T must be positive, got {T}")
    if s < 0:
        raise BadParams(f"offset s must be nonnegative, got {s}")
    t = np.arange(1, T + 1, dtype=np.float64)
    raw = 1.0 - np.sqrt(t / T + s)
    return BaselineSchedule(np.clip(raw, ALPHA_EPS, 1.0 - ALPHA_EPS), T, s)


class DifficultyProfile:
    """Running per-position, per-timestep-bucket denoising difficulty.

    ``update`` folds one example's per-position squared errors into the
    bucket for its timestep as a running mean. ``merge`` combines two
    profiles built on disjoint streams; it is commutative up to float
    addition, so shards can be merged in any order.
    """

    def __init__(self, n_positions: int, T: int, n_buckets: int = N_BUCKETS):
        if n_positions < 1 or T < 1:
            raise BadParams("profile needs at least one position and one timestep")
        self.n_positions = n_positions
        self.T = T
        self.n_buckets = min(n_buckets, T)
        self.mean = np.zeros((n_positions, self.n_buckets), dtype=np.float64)
        self.count = np.zeros((n_positions, self.n_buckets), dtype=np.int64)

    def bucket_of(self, t: int) -> int:
        if not 1 <= t <= self.T:
            raise TimestepOutOfRange(f"t={t} outside 1..{self.T}")
        return (t - 1) * self.n_buckets // self.T

    def update(self, t: int, errors: np.ndarray, mask: np.ndarray | None = None) -> None:
        errors = np.asarray(errors, dtype=np.float64)
        if errors.shape != (self.n_positions,):
            raise ShapeMismatch(
                f"errors shape {errors.shape} != ({self.n_positions},)"
            )
        b = self.bucket_of(t)
        active = np.ones(self.n_positions, bool) if mask is None else np.asarray(mask, bool)
        idx = np.flatnonzero(active)
        self.count[idx, b] += 1
        delta = errors[idx] - self.mean[idx, b]
        self.mean[idx, b] += delta / self.count[idx, b]

    def merge(self, other: "DifficultyProfile") -> "DifficultyProfile":
        if (self.n_positions, self.T, self.n_buckets) != (
            other.n_positions,
            other.T,
            other.n_buckets,
        ):
            raise ShapeMismatch("profiles have different geometry")
        out = DifficultyProfile(self.n_positions, self.T, self.n_buckets)
        out.count = self.count + other.count
        total = np.maximum(out.count, 1)
        out.mean = (self.mean * self.count + other.mean * other.count) / total
        return out

    def observed(self) -> np.ndarray:
        """Positions with at least one recorded observation."""
        return self.count.sum(axis=1) > 0

    def bucket_centers(self) -> np.ndarray:
        b = np.arange(self.n_buckets, dtype=np.float64)
        lo = np.floor(b * self.T / self.n_buckets) + 1.0
        hi = np.floor((b + 1.0) * self.T / self.n_buckets)
        return (lo + hi) / 2.0

    def expanded_losses(self) -> np.ndarray:
        """Per-position losses at every t, interpolated from observed buckets.

        Rows for unobserved positions are NaN.
        """
        grid = np.arange(1, self.T + 1, dtype=np.float64)
        centers = self.bucket_centers()
        out = np.full((self.n_positions, self.T), np.nan)
        for i in range(self.n_positions):
            seen = self.count[i] > 0
            if not seen.any():
                continue
            out[i] = np.interp(grid, centers[seen], self.mean[i, seen])
        return out

    @property
    def l_min(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            masked = np.where(self.count > 0, self.mean, np.nan)
            return np.nanmin(masked, axis=1)

    @property
    def l_max(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            masked = np.where(self.count > 0, self.mean, np.nan)
            return np.nanmax(masked, axis=1)


def estimate_difficulty(batches, profile: DifficultyProfile) -> DifficultyProfile:
    """Fold a stream of (t, errors, mask) observations into the profile."""
    for t, errors, mask in batches:
        profile.update(int(t), errors, mask)
    return profile


def difficulty_ramp(l_min: float, l_max: float, T: int) -> np.ndarray:
    """Linear difficulty ramp from easiest to hardest over T steps."""
    if T < 1:
        raise BadParams(f"T must be positive, got {T}")
    if not np.isfinite(l_min) or not np.isfinite(l_max):
        raise BadParams("ramp endpoints must be finite")
    if l_max < l_min:
        raise BadParams(f"l_max {l_max} < l_min {l_min}")
    if T == 1:
        return np.array([l_min], dtype=np.float64)
    t = np.arange(T, dtype=np.float64)
    out = l_min + t / (T - 1) * (l_max - l_min)
    # the closed-form last step can land one ulp past l_max, which would
    # fall outside the knot hull downstream; pin both ends
    out[0] = l_min
    out[-1] = l_max
    return out


def jitter_ties(losses: np.ndarray) -> np.ndarray:
    """Separate consecutive equal knots by cascading multiples of the jitter."""
    out = np.asarray(losses, dtype=np.float64).copy()
    bump = 0
    for k in range(1, out.shape[0]):
        if losses[k] == losses[k - 1]:
            bump += 1
        else:
            bump = 0
        out[k] += bump * TIE_JITTER
    return out


class PiecewiseMap:
    """The difficulty-to-alpha map over (loss knot, alpha_bar knot) pairs.

    Evaluation rules, in order: exact boundary knots map to their alphas;
    then the first (lowest-t) strictly increasing interval containing x
    half-open; then the first interval of either direction containing x
    closed, which covers decreasing stretches and the interior global
    maximum. Anything still unresolved is outside the knot hull.
    """

    def __init__(self, knots: np.ndarray, values: np.ndarray, mapping: str = "linear"):
        if mapping not in MAPPINGS:
            raise BadParams(f"unknown mapping {mapping!r}")
        knots = np.asarray(knots, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        if knots.ndim != 1 or knots.shape != values.shape:
            raise ShapeMismatch("knots and values must be equal-length vectors")
        if knots.shape[0] < 2:
            raise BadParams("need at least two knots")
        if not np.isfinite(knots).all():
            raise BadParams("knots must be finite")
        self.knots = knots
        self.values = values
        self.mapping = mapping

    def _interp(self, x, a, b, va, vb):
        u = (x - a) / (b - a)
        if self.mapping == "cosine":
            u = 0.5 * (1.0 - np.cos(np.pi * u))
        return va + (vb - va) * u

    def __call__(self, xs) -> np.ndarray:
        scalar = np.isscalar(xs) or np.ndim(xs) == 0
        xs = np.atleast_1d(np.asarray(xs, dtype=np.float64))
        k, v = self.knots, self.values
        a, b = k[:-1], k[1:]
        va, vb = v[:-1], v[1:]
        out = np.empty_like(xs)
        done = np.zeros(xs.shape, dtype=bool)

        out[xs == k[0]] = v[0]
        done |= xs == k[0]
        out[(xs == k[-1]) & ~done] = v[-1]
        done |= xs == k[-1]

        live = a != b  # jitter leaves no zero-length intervals, but be safe
        increasing = (a < b) & live
        inside = (a[None, :] <= xs[:, None]) & (xs[:, None] < b[None, :])
        hit = inside & increasing[None, :] & ~done[:, None]
        found = hit.any(axis=1)
        first = hit.argmax(axis=1)
        if found.any():
            q = np.flatnonzero(found)
            j = first[q]
            out[q] = self._interp(xs[q], a[j], b[j], va[j], vb[j])
            done[q] = True

        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        inside = (lo[None, :] <= xs[:, None]) & (xs[:, None] <= hi[None, :])
        hit = inside & live[None, :] & ~done[:, None]
        found = hit.any(axis=1)
        first = hit.argmax(axis=1)
        if found.any():
            q = np.flatnonzero(found)
            j = first[q]
            out[q] = self._interp(xs[q], a[j], b[j], va[j], vb[j])
            done[q] = True

        if not done.all():
            missing = xs[~done]
            raise OutOfRange(
                f"values {missing[:4]} outside knot hull "
                f"[{k.min()}, {k.max()}]"
            )
        return out[0] if scalar else out


def map_loss_to_alpha(
    x, profile_losses, baseline: BaselineSchedule, mapping: str = "linear"
):
    """Evaluate the difficulty-to-alpha map at x for one position's knots."""
    return PiecewiseMap(np.asarray(profile_losses), baseline.alpha_bar, mapping)(x)


def isotonic_project(values: np.ndarray) -> np.ndarray:
    """Least-squares projection onto the non-increasing cone (PAVA)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.shape[0] == 0:
        raise BadParams("need a nonempty vector")
    if not np.isfinite(values).all():
        raise BadParams("values must be finite")
    # blocks carry (mean, weight); comparing the means that get written out
    # keeps the non-increase property exact under float comparison
    means: list[float] = []
    weights: list[int] = []
    for v in values:
        means.append(float(v))
        weights.append(1)
        while len(means) > 1 and means[-2] < means[-1]:
            m, w = means.pop(), weights.pop()
            weights[-1] += w
            means[-1] += (m - means[-1]) * w / weights[-1]
    out = np.empty_like(values)
    pos = 0
    for m, w in zip(means, weights):
        out[pos : pos + w] = m
        pos += w
    return out


@dataclass(frozen=True)
class TokenSchedule:
    """Per-position cumulative alphas, shape (positions, T)."""

    alpha_bar: np.ndarray
    kind: str

    def __post_init__(self):
        ab = self.alpha_bar
        if ab.ndim != 2:
            raise ShapeMismatch(f"expected (positions, T), got {ab.shape}")
        if not ((ab > 0) & (ab < 1)).all():
            raise BadParams("token schedule must lie strictly inside (0, 1)")
        if (np.diff(ab, axis=1) > 0).any():
            raise BadParams("token schedule must be non-increasing in t")

    @property
    def n_positions(self) -> int:
        return self.alpha_bar.shape[0]

    @property
    def T(self) -> int:
        return self.alpha_bar.shape[1]


def uniform_schedule(baseline: BaselineSchedule, n_positions: int) -> TokenSchedule:
    """Every position runs the baseline; the standard single-schedule case."""
    if n_positions < 1:
        raise BadParams("need at least one position")
    return TokenSchedule(np.tile(baseline.alpha_bar, (n_positions, 1)), "uniform_sqrt")


def build_token_schedule(
    profile: DifficultyProfile,
    baseline: BaselineSchedule,
    mapping: str = "linear",
) -> TokenSchedule:
    """Rebuild per-position schedules from accumulated difficulty.

    Per observed position: jitter tied knots, ramp the difficulty axis from
    easiest to hardest, push the ramp through the piecewise map, clamp, and
    project onto the non-increasing cone. Constant-difficulty positions
    carry no ordering information and keep the baseline exactly, as do
    positions never observed.
    """
    if baseline.T != profile.T:
        raise ShapeMismatch(
            f"baseline T={baseline.T} does not match profile T={profile.T}"
        )
    observed = profile.observed()
    if not observed.any():
        raise EmptyProfile("no difficulty observations recorded")
    out = np.tile(baseline.alpha_bar, (profile.n_positions, 1))
    losses = profile.expanded_losses()
    for i in np.flatnonzero(observed):
        row = losses[i]
        l_min, l_max = row.min(), row.max()
        if l_min == l_max:
            continue
        knots = jitter_ties(row)
        ramp = difficulty_ramp(l_min, l_max, profile.T)
        mapped = PiecewiseMap(knots, baseline.alpha_bar, mapping)(ramp)
        clamped = np.clip(mapped, ALPHA_EPS, 1.0 - ALPHA_EPS)
        out[i] = isotonic_project(clamped)
    return TokenSchedule(out, "token_aware")


def write_schedule_csv(schedule: TokenSchedule, path: str | Path) -> None:
    """Dump a token schedule as position,t,alpha_bar rows."""
    lines = ["position,t,alpha_bar"]
    for i in range(schedule.n_positions):
        for t in range(1, schedule.T + 1):
            lines.append(f"{i},{t},{float(schedule.alpha_bar[i, t - 1])!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
