"""Seeded random sampling: named substreams, uniform and Beta(alpha, alpha) draws.

Every stochastic component owns a named substream derived from one master
seed, so toggling one component (e.g. augmentation) never perturbs the draw
sequence of another (e.g. data shuffling).
"""

from __future__ import annotations

import zlib

import numpy as np

from ..errors import ConfigError

# Substream names used by the training pipeline. Free-form names are allowed;
# these are the ones the trainer reserves.
STREAM_DATA_SHUFFLE = "data-shuffle"
STREAM_OPERATOR = "operator"
STREAM_MIXUP = "mixup"
STREAM_NEGATIVES = "negatives"
STREAM_INIT = "init"
STREAM_DROPOUT = "dropout"


def _name_key(name: str) -> int:
    # crc32 is stable across platforms and Python versions, unlike hash().
    return zlib.crc32(name.encode("utf-8"))


class Substream:
    """One named random stream. Counts how many values it has drawn."""

    def __init__(self, name: str, seed_entropy, counters: dict):
        self.name = name
        self._entropy = tuple(seed_entropy)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self._entropy)))
        self._counters = counters
        self._counters.setdefault(name, 0)

    def _count(self, n: int) -> None:
        self._counters[self.name] += int(n)

    def random(self, size=None) -> np.ndarray | float:
        out = self._gen.random(size)
        self._count(1 if size is None else np.prod(size))
        return out

    def integers(self, low, high, size=None):
        out = self._gen.integers(low, high, size=size)
        self._count(1 if size is None else np.prod(size))
        return out

    def normal(self, loc=0.0, scale=1.0, size=None):
        out = self._gen.normal(loc, scale, size=size)
        self._count(1 if size is None else np.prod(size))
        return out

    def permutation(self, n: int) -> np.ndarray:
        out = self._gen.permutation(n)
        self._count(n)
        return out

    def shuffle(self, arr) -> None:
        self._gen.shuffle(arr)
        self._count(len(arr))

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        out = self._gen.choice(n, size=size, replace=replace)
        self._count(size)
        return out

    def child(self, *keys: int) -> "Substream":
        """Derive an independent stream keyed by integers (e.g. step, row index).

        Children with the same keys reproduce the same draws regardless of how
        much the parent or its siblings have been consumed; draw counts roll up
        into the parent's counter.
        """
        return Substream(self.name, self._entropy + tuple(int(k) for k in keys), self._counters)


class RngStream:
    """Master seed plus named substreams with independent, reproducible draws."""

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed)
        self.draw_counts: dict[str, int] = {}
        self._streams: dict[str, Substream] = {}

    def stream(self, name: str) -> Substream:
        if name not in self._streams:
            self._streams[name] = Substream(name, (self.master_seed, _name_key(name)), self.draw_counts)
        return self._streams[name]

    def draws(self, name: str) -> int:
        return self.draw_counts.get(name, 0)


def sample_uniform(lo: float, hi: float, rng: Substream) -> float:
    """Draw a single value from [lo, hi)."""
    if lo >= hi:
        raise ConfigError(f"sample_uniform: need lo < hi, got lo={lo}, hi={hi}")
    return float(lo + (hi - lo) * rng.random())


def _gamma_array(shape: float, n: int, rng: Substream) -> np.ndarray:
    """n draws from Gamma(shape, 1) via Marsaglia-Tsang; shape < 1 is boosted
    through Gamma(shape+1) * U^(1/shape)."""
    if shape < 1.0:
        g = _gamma_array(shape + 1.0, n, rng)
        u = np.asarray(rng.random(n))
        zero = u == 0.0  # would underflow the boost factor; measure-zero, redraw
        while zero.any():
            u[zero] = rng.random(int(zero.sum()))
            zero = u == 0.0
        return g * u ** (1.0 / shape)
    d = shape - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty(n)
    pending = np.arange(n)
    while pending.size:
        x = np.asarray(rng.normal(size=pending.size))
        v = (1.0 + c * x) ** 3
        u = np.asarray(rng.random(pending.size))
        with np.errstate(divide="ignore", invalid="ignore"):
            accept = (v > 0.0) & (u > 0.0) & (np.log(u) < 0.5 * x**2 + d * (1.0 - v + np.log(v)))
        out[pending[accept]] = d * v[accept]
        pending = pending[~accept]
    return out


def sample_beta_array(alpha: float, n: int, rng: Substream) -> np.ndarray:
    """n draws from Beta(alpha, alpha) as X/(X+Y) with X, Y ~ Gamma(alpha)."""
    if alpha <= 0.0:
        raise ConfigError(f"sample_beta: need alpha > 0, got {alpha}")
    x = _gamma_array(float(alpha), n, rng)
    y = _gamma_array(float(alpha), n, rng)
    total = x + y
    degenerate = total == 0.0
    if degenerate.any():
        # Both gammas underflowed (tiny alpha); the symmetric limit law is
        # Bernoulli(0.5) on {0, 1}.
        x[degenerate] = (np.asarray(rng.random(int(degenerate.sum()))) < 0.5).astype(float)
        total[degenerate] = 1.0
    return x / total


def sample_beta(alpha: float, rng: Substream) -> float:
    """Single draw from Beta(alpha, alpha)."""
    return float(sample_beta_array(alpha, 1, rng)[0])
