"""Encoder architectures that map feature vectors to score distributions.

Three variants share the same fully-connected ReLU trunk:

* ``MlpModel``   - one (mean, log-variance) head pair; the score distribution
  is read out directly via ``mu + eps * sigma``.
* ``MtModel``    - seven head pairs, one per judge; the final score is the
  trimmed sum of the middle three judge read-outs times a difficulty degree.
* ``CoreModel``  - an interval classifier over a partition of the score range
  plus an in-interval (mean, log-variance) pair; the read-out rescales a
  squashed offset into the selected interval.

Log-variance outputs are clamped to [-10, 10] before use so sigma^2 is
always positive and the 1/sigma^2 loss term stays bounded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .distributions import NoiseFamily, Rng, sample_standard

LOGVAR_CLAMP = 10.0
NUM_JUDGES = 7
DEFAULT_HIDDEN = (512, 256, 128)


class Linear:
    """One fully-connected layer with Kaiming-uniform weights, zero bias."""

    def __init__(self, fan_in: int, fan_out: int, name: str, rng: Rng):
        bound = math.sqrt(6.0 / fan_in)
        w = (rng.uniform(fan_in * fan_out) * 2.0 - 1.0) * bound
        self.weight = Parameter(w.reshape(fan_in, fan_out), f"{name}.weight")
        self.bias = Parameter(np.zeros(fan_out), f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add_bias(ad.matmul(x, self.weight), self.bias)

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


class _EncoderBase:
    kind = "base"

    def __init__(self, feature_dim: int, hidden: tuple[int, ...], seed: int):
        if feature_dim < 1:
            raise ValueError(f"feature_dim must be >= 1, got {feature_dim}")
        if len(hidden) != 3 or any(h < 1 for h in hidden):
            raise ValueError(f"hidden must be three positive layer sizes, got {hidden}")
        self.feature_dim = int(feature_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.seed = int(seed)
        rng = Rng(seed)
        dims = (self.feature_dim,) + self.hidden
        self.trunk = [Linear(dims[i], dims[i + 1], f"trunk{i}", rng) for i in range(3)]
        self._init_rng = rng  # heads continue the same draw stream

    def trunk_forward(self, x: Tensor) -> Tensor:
        h = x
        for layer in self.trunk:
            h = ad.relu(layer(h))
        return h

    def parameters(self) -> list[Parameter]:
        params: list[Parameter] = []
        for layer in self._layers():
            params.extend(layer.parameters())
        return params

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def _layers(self) -> list[Linear]:
        raise NotImplementedError

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.feature_dim:
            raise ad.ShapeError(
                f"expected input [batch, {self.feature_dim}], got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("input features must be finite")
        return x


class MlpModel(_EncoderBase):
    """Trunk plus a single (mean, log-variance) head pair."""

    kind = "mlp"

    def __init__(self, feature_dim: int = 1024, hidden: tuple[int, ...] = DEFAULT_HIDDEN,
                 seed: int = 0):
        super().__init__(feature_dim, hidden, seed)
        self.mean_head = Linear(self.hidden[-1], 1, "mean_head", self._init_rng)
        self.logvar_head = Linear(self.hidden[-1], 1, "logvar_head", self._init_rng)

    def _layers(self) -> list[Linear]:
        return self.trunk + [self.mean_head, self.logvar_head]

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Returns (mu, logvar) columns [batch, 1]; logvar clamped to +-10."""
        h = self.trunk_forward(x)
        mu = self.mean_head(h)
        logvar = ad.clamp(self.logvar_head(h), -LOGVAR_CLAMP, LOGVAR_CLAMP)
        return mu, logvar

    def encode(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Numpy convenience: (mu, logvar) as flat arrays for a [batch, F] input."""
        mu, logvar = self.forward(Tensor(self._check_input(x)))
        return mu.data[:, 0].copy(), logvar.data[:, 0].copy()


class MtModel(_EncoderBase):
    """Trunk shared by seven per-judge (mean, log-variance) head pairs."""

    kind = "mt"

    def __init__(self, feature_dim: int = 1024, hidden: tuple[int, ...] = DEFAULT_HIDDEN,
                 seed: int = 0):
        super().__init__(feature_dim, hidden, seed)
        self.mean_heads = [Linear(self.hidden[-1], 1, f"judge{j}.mean_head", self._init_rng)
                           for j in range(NUM_JUDGES)]
        self.logvar_heads = [Linear(self.hidden[-1], 1, f"judge{j}.logvar_head", self._init_rng)
                             for j in range(NUM_JUDGES)]

    def _layers(self) -> list[Linear]:
        return self.trunk + self.mean_heads + self.logvar_heads

    def forward_mt(self, x: Tensor) -> list[tuple[Tensor, Tensor]]:
        """Per-judge (mu, logvar) pairs; head j always serves judge j."""
        h = self.trunk_forward(x)
        out = []
        for j in range(NUM_JUDGES):
            mu = self.mean_heads[j](h)
            logvar = ad.clamp(self.logvar_heads[j](h), -LOGVAR_CLAMP, LOGVAR_CLAMP)
            out.append((mu, logvar))
        return out

    def encode(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Numpy (mu, logvar) matrices [batch, 7]."""
        pairs = self.forward_mt(Tensor(self._check_input(x)))
        mu = np.column_stack([m.data[:, 0] for m, _ in pairs])
        logvar = np.column_stack([lv.data[:, 0] for _, lv in pairs])
        return mu, logvar


@dataclass(frozen=True)
class IntervalSpec:
    """Strictly ascending boundaries cutting the score range into K intervals."""

    boundaries: tuple[float, ...]

    def __post_init__(self):
        b = tuple(float(v) for v in self.boundaries)
        if len(b) < 2:
            raise ValueError("need at least two boundaries (K >= 1)")
        if any(b[i] >= b[i + 1] for i in range(len(b) - 1)):
            raise ValueError(f"boundaries must be strictly ascending, got {b}")
        object.__setattr__(self, "boundaries", b)

    @property
    def num_intervals(self) -> int:
        return len(self.boundaries) - 1

    @property
    def score_min(self) -> float:
        return self.boundaries[0]

    @property
    def score_max(self) -> float:
        return self.boundaries[-1]

    @classmethod
    def uniform(cls, lo: float, hi: float, k: int) -> "IntervalSpec":
        if k < 1:
            raise ValueError(f"need k >= 1 intervals, got {k}")
        return cls(tuple(np.linspace(lo, hi, k + 1)))

    def locate(self, y: np.ndarray) -> np.ndarray:
        """Index of the interval containing each y, clipped to the range."""
        idx = np.searchsorted(self.boundaries, y, side="right") - 1
        return np.clip(idx, 0, self.num_intervals - 1)


class CoreModel(_EncoderBase):
    """Interval classifier plus an in-interval (mean, log-variance) pair."""

    kind = "core"

    def __init__(self, spec: IntervalSpec, feature_dim: int = 1024,
                 hidden: tuple[int, ...] = DEFAULT_HIDDEN, seed: int = 0):
        super().__init__(feature_dim, hidden, seed)
        self.spec = spec
        self.interval_head = Linear(self.hidden[-1], spec.num_intervals,
                                    "interval_head", self._init_rng)
        self.within_mean_head = Linear(self.hidden[-1], 1, "within_mean_head", self._init_rng)
        self.within_logvar_head = Linear(self.hidden[-1], 1, "within_logvar_head",
                                         self._init_rng)

    def _layers(self) -> list[Linear]:
        return self.trunk + [self.interval_head, self.within_mean_head,
                             self.within_logvar_head]

    def forward_core(self, x: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """(interval logits [batch, K], within mu [batch, 1], within logvar)."""
        h = self.trunk_forward(x)
        logits = self.interval_head(h)
        wmu = self.within_mean_head(h)
        wlogvar = ad.clamp(self.within_logvar_head(h), -LOGVAR_CLAMP, LOGVAR_CLAMP)
        return logits, wmu, wlogvar

    def encode(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        logits, wmu, wlogvar = self.forward_core(Tensor(self._check_input(x)))
        return logits.data.copy(), wmu.data[:, 0].copy(), wlogvar.data[:, 0].copy()


def build_model(kind: str, feature_dim: int, hidden: tuple[int, ...] = DEFAULT_HIDDEN,
                seed: int = 0, interval_spec: IntervalSpec | None = None):
    if kind == "mlp":
        return MlpModel(feature_dim, hidden, seed)
    if kind == "mt":
        return MtModel(feature_dim, hidden, seed)
    if kind == "core":
        if interval_spec is None:
            raise ValueError("core model needs an IntervalSpec")
        return CoreModel(interval_spec, feature_dim, hidden, seed)
    raise ValueError(f"unknown model kind {kind!r}; choose mlp, mt, or core")


# ---------------------------------------------------------------------------
# prediction read-outs
# ---------------------------------------------------------------------------

def _check_mode(mode: str) -> None:
    if mode not in ("mean", "sample"):
        raise ValueError(f"mode must be 'mean' or 'sample', got {mode!r}")


def predict(model: MlpModel, x: np.ndarray, family: NoiseFamily | None = None,
            rng: Rng | None = None, mode: str = "mean") -> np.ndarray:
    """Score per input row: mu in mean mode, mu + eps * sigma in sample mode."""
    _check_mode(mode)
    mu, logvar = model.encode(x)
    if mode == "mean":
        return mu
    eps = sample_standard(family or NoiseFamily(), rng or Rng(0), mu.shape[0])
    return mu + eps * np.exp(0.5 * logvar)


def aggregate_judges(scores, dd: float) -> float:
    """Trimmed judge sum: drop the two lowest and two highest of seven scores,
    sum the middle three, multiply by the difficulty degree."""
    arr = np.asarray(scores, dtype=np.float64)
    if arr.shape != (NUM_JUDGES,):
        raise ValueError(f"expected exactly {NUM_JUDGES} judge scores, got shape {arr.shape}")
    if dd <= 0.0:
        raise ValueError(f"difficulty degree must be > 0, got {dd}")
    return float(np.sort(arr)[2:5].sum() * dd)


def aggregate_judges_rows(scores: np.ndarray, dd: np.ndarray) -> np.ndarray:
    """Row-wise trimmed judge sum for a [batch, 7] matrix."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] != NUM_JUDGES:
        raise ValueError(f"expected [batch, {NUM_JUDGES}] scores, got {scores.shape}")
    return np.sort(scores, axis=1)[:, 2:5].sum(axis=1) * np.asarray(dd, dtype=np.float64)


def predict_mt_final(model: MtModel, x: np.ndarray, dd, family: NoiseFamily | None = None,
                     rng: Rng | None = None, mode: str = "mean") -> np.ndarray:
    """Per-judge read-out followed by the trimmed sum times difficulty degree."""
    _check_mode(mode)
    mu, logvar = model.encode(x)
    judges = mu
    if mode == "sample":
        fam = family or NoiseFamily()
        r = rng or Rng(0)
        eps = sample_standard(fam, r, mu.size).reshape(mu.shape)
        judges = mu + eps * np.exp(0.5 * logvar)
    dd_vec = np.broadcast_to(np.asarray(dd, dtype=np.float64), (mu.shape[0],))
    if np.any(dd_vec <= 0.0):
        raise ValueError("difficulty degrees must be > 0")
    return aggregate_judges_rows(judges, dd_vec)


def interval_readout(w, eps, sigma, left: float, right: float):
    """Rescale an in-interval offset into [left, right]:
    w * (right-left) + sigma * eps * (right-left) + left."""
    width = right - left
    return w * width + np.asarray(sigma) * np.asarray(eps) * width + left


def interval_predict(model: CoreModel, x: np.ndarray, family: NoiseFamily | None = None,
                     rng: Rng | None = None, mode: str = "mean") -> np.ndarray:
    """Pick the argmax interval, then read out the squashed in-interval offset."""
    _check_mode(mode)
    logits, wmu, wlogvar = model.encode(x)
    k = np.argmax(logits, axis=1)
    bounds = np.asarray(model.spec.boundaries)
    left, right = bounds[k], bounds[k + 1]
    w = 1.0 / (1.0 + np.exp(-wmu))
    if mode == "mean":
        eps = np.zeros_like(w)
    else:
        eps = sample_standard(family or NoiseFamily(), rng or Rng(0), w.shape[0])
    return interval_readout(w, eps, np.exp(0.5 * wlogvar), left, right)
