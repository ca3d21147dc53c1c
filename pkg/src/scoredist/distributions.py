"""Location-scale noise families and the score-distribution read-out.

A prediction is read out as ``y = mu + eps * sigma`` where ``eps`` follows
the standard member (location 0, scale 1) of one of six families. Sampling
is driven by a counter-based SplitMix64 generator so that a seed fully
determines the stream on every platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FAMILY_KINDS = ("gaussian", "laplace", "logistic", "student_t", "triangular",
                "logistic_normal")

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix(words: np.ndarray) -> np.ndarray:
    # SplitMix64 finalizer applied to an array of uint64 counter words.
    z = words.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= _MIX1
    z ^= z >> np.uint64(27)
    z *= _MIX2
    z ^= z >> np.uint64(31)
    return z


class Rng:
    """Deterministic counter-based generator: output i is SplitMix64 of
    ``seed + (counter + i + 1) * 0x9E3779B97F4A7C15`` (mod 2^64).

    The stream is a pure function of (seed, counter), so identical seeds
    give identical draws across runs, platforms, and processes.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = 0

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        words = (np.uint64(self.seed) + idx * np.uint64(_GOLDEN)) & _MASK
        return _splitmix(words)

    def uniform(self, n: int) -> np.ndarray:
        """n doubles strictly inside (0, 1): (word >> 11 + 0.5) * 2^-53."""
        bits = self._raw(n) >> np.uint64(11)
        return (bits.astype(np.float64) + 0.5) * 2.0 ** -53

    def normal(self, n: int) -> np.ndarray:
        """n standard normal draws via Box-Muller on uniform pairs."""
        pairs = (n + 1) // 2
        u1 = self.uniform(pairs)
        u2 = self.uniform(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        out = np.concatenate([r * np.cos(theta), r * np.sin(theta)])
        return out[:n]

    def shuffle_order(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n): stable argsort of n draws."""
        return np.argsort(self.uniform(n), kind="stable")

    def derive(self, *tags: int) -> "Rng":
        """Child generator whose seed mixes this seed with integer tags."""
        s = self.seed
        for t in tags:
            word = ((s + (int(t) & 0xFFFFFFFFFFFFFFFF) + 1) * _GOLDEN) & 0xFFFFFFFFFFFFFFFF
            s = int(_splitmix(np.array([word], dtype=np.uint64))[0])
        return Rng(s)


@dataclass(frozen=True)
class NoiseFamily:
    """Standard auxiliary-noise family (location 0, finite scale).

    ``df`` applies to student_t only and must be an integer >= 3 so the
    variance exists and the chi-square denominator is an exact sum of
    squared normals.
    """

    kind: str = "gaussian"
    df: int = 3

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise ValueError(f"unknown family {self.kind!r}; choose from {FAMILY_KINDS}")
        if self.kind == "student_t":
            if int(self.df) != self.df or self.df < 3:
                raise ValueError(f"student_t df must be an integer >= 3, got {self.df}")


def sample_standard(family: NoiseFamily, rng: Rng, n: int) -> np.ndarray:
    """n i.i.d. draws from the standard member of ``family``.

    gaussian: Box-Muller. laplace, logistic: inverse CDF on uniform(0,1).
    student_t: normal / sqrt(chi2_df / df) with chi2 a sum of df squared
    normals. triangular: difference of two uniforms (symmetric on [-1, 1]).
    logistic_normal: sigmoid(z) - 0.5 with z ~ N(0,1), support (-1/2, 1/2).
    """
    if n < 1:
        raise ValueError(f"need n >= 1 draws, got {n}")
    kind = family.kind
    if kind == "gaussian":
        return rng.normal(n)
    if kind == "laplace":
        u = rng.uniform(n)
        return np.where(u < 0.5, np.log(2.0 * u), -np.log(2.0 * (1.0 - u)))
    if kind == "logistic":
        u = rng.uniform(n)
        return np.log(u / (1.0 - u))
    if kind == "student_t":
        df = int(family.df)
        z = rng.normal(n)
        chi2 = np.sum(rng.normal(n * df).reshape(df, n) ** 2, axis=0)
        return z / np.sqrt(chi2 / df)
    if kind == "triangular":
        return rng.uniform(n) - rng.uniform(n)
    if kind == "logistic_normal":
        z = rng.normal(n)
        return 1.0 / (1.0 + np.exp(-z)) - 0.5
    raise ValueError(f"unknown family {kind!r}")


def reparameterize(mu: float, sigma: float, eps: float) -> float:
    """Location-scale read-out mu + eps * sigma; affine in eps with slope sigma."""
    if sigma < 0.0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    return mu + eps * sigma


def gaussian_log_pdf(y: float, mu: float, sigma2: float) -> float:
    """Log density of N(mu, sigma2): -ln(2*pi)/2 - ln(sigma2)/2 - (y-mu)^2/(2*sigma2)."""
    if sigma2 <= 0.0:
        raise ValueError(f"sigma2 must be > 0, got {sigma2}")
    return -0.5 * math.log(2.0 * math.pi) - 0.5 * math.log(sigma2) \
        - (y - mu) ** 2 / (2.0 * sigma2)


def standard_density(family: NoiseFamily, t: np.ndarray) -> np.ndarray | None:
    """Closed-form density of the standard member, or None (logistic_normal)."""
    t = np.asarray(t, dtype=np.float64)
    kind = family.kind
    if kind == "gaussian":
        return np.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)
    if kind == "laplace":
        return 0.5 * np.exp(-np.abs(t))
    if kind == "logistic":
        e = np.exp(-np.abs(t))
        return e / (1.0 + e) ** 2
    if kind == "student_t":
        df = int(family.df)
        c = math.gamma((df + 1) / 2) / (math.sqrt(df * math.pi) * math.gamma(df / 2))
        return c * (1.0 + t * t / df) ** (-(df + 1) / 2)
    if kind == "triangular":
        return np.maximum(1.0 - np.abs(t), 0.0)
    if kind == "logistic_normal":
        return None
    raise ValueError(f"unknown family {kind!r}")


def density_curve(mu: float, sigma: float, family: NoiseFamily,
                  grid: np.ndarray, rng: Rng | None = None,
                  kde_samples: int = 100_000) -> tuple[np.ndarray, bool]:
    """Density of the location-scale member at each grid point.

    Returns (values, used_kde). Families without a closed form here
    (logistic_normal) fall back to a Gaussian kernel density estimate from
    ``kde_samples`` draws with Silverman bandwidth; the flag marks that.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("grid must be nonempty")
    if sigma <= 0.0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    closed = standard_density(family, (grid - mu) / sigma)
    if closed is not None:
        return closed / sigma, False
    if rng is None:
        rng = Rng(0)
    draws = mu + sigma * sample_standard(family, rng, kde_samples)
    sd = float(np.std(draws))
    q75, q25 = np.percentile(draws, [75.0, 25.0])
    spread = min(sd, (q75 - q25) / 1.34)
    if spread <= 0.0:
        spread = sd
    bw = 0.9 * spread * kde_samples ** (-0.2)
    dens = np.empty_like(grid)
    for start in range(0, grid.size, 64):  # chunked: full outer product is large
        chunk = grid[start:start + 64]
        diffs = (chunk[:, None] - draws[None, :]) / bw
        dens[start:start + 64] = np.exp(-0.5 * diffs * diffs).sum(axis=1)
    dens /= kde_samples * bw * math.sqrt(2.0 * math.pi)
    return dens, True
