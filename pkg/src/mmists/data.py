"""ISTS data model: per-variable observation sequences, padded canonical form,
dataset splitting, per-variable normalization, and a synthetic generator.

Timestamps live in [0, 1] over the observation window. The canonical form
pads each variable's observations left-aligned into fixed (T, X, M) matrices;
merged-timeline alignment across variables is deliberately not used.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class SequenceTooLong(Exception):
    pass


class TooFewSamples(Exception):
    pass


class InvalidConfig(Exception):
    pass


@dataclass(frozen=True)
class Observation:
    t: float
    x: float


@dataclass(frozen=True)
class VariableSeries:
    var_index: int
    observations: tuple

    def __post_init__(self):
        ts = [o.t for o in self.observations]
        if any(not np.isfinite(o.t) or not np.isfinite(o.x) for o in self.observations):
            raise ValueError(f"variable {self.var_index}: non-finite observation")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError(f"variable {self.var_index}: timestamps not strictly increasing")


@dataclass(frozen=True)
class ForecastQuery:
    var_index: int
    q: float
    target: float | None = None


@dataclass(frozen=True)
class Sample:
    id: str
    series: tuple
    queries: tuple

    def __post_init__(self):
        seen = [s.var_index for s in self.series]
        if sorted(seen) != list(range(len(seen))):
            raise ValueError(f"sample {self.id}: need exactly one series per variable index")
        for fq in self.queries:
            obs = self.series[fq.var_index].observations
            if obs and fq.q <= obs[-1].t:
                raise ValueError(f"sample {self.id}: query at {fq.q} not after last observation")

    @property
    def n_vars(self):
        return len(self.series)


@dataclass(frozen=True)
class CanonicalSample:
    """Padded (T, X, M) matrices, one row per variable, observations in a prefix."""

    T: np.ndarray
    X: np.ndarray
    M: np.ndarray

    @property
    def n_vars(self):
        return self.T.shape[0]

    @property
    def length(self):
        return self.T.shape[1]


def canonicalize(sample: Sample, length: int) -> CanonicalSample:
    n = sample.n_vars
    T = np.zeros((n, length))
    X = np.zeros((n, length))
    M = np.zeros((n, length))
    for s in sample.series:
        ln = len(s.observations)
        if ln > length:
            raise SequenceTooLong(
                f"variable {s.var_index} has {ln} observations > padded length {length}")
        for l, obs in enumerate(s.observations):
            T[s.var_index, l] = obs.t
            X[s.var_index, l] = obs.x
            M[s.var_index, l] = 1.0
    return CanonicalSample(T=T, X=X, M=M)


def truncate_to_cap(sample: Sample, cap: int) -> Sample:
    """Keep each variable's most recent `cap` observations."""
    series = tuple(
        VariableSeries(s.var_index, s.observations[-cap:]) if len(s.observations) > cap else s
        for s in sample.series)
    return Sample(sample.id, series, sample.queries)


def max_length(samples) -> int:
    return max((len(s.observations) for smp in samples for s in smp.series), default=0)


def split_dataset(samples, seed: int):
    """Deterministic 6:2:2 split: floor(0.6k) / floor(0.2k) / remainder."""
    k = len(samples)
    if k < 5:
        raise TooFewSamples(f"need at least 5 samples to split, got {k}")
    order = np.random.default_rng(seed).permutation(k)
    n_train = int(np.floor(0.6 * k))
    n_val = int(np.floor(0.2 * k))
    train = [samples[i] for i in order[:n_train]]
    val = [samples[i] for i in order[n_train:n_train + n_val]]
    test = [samples[i] for i in order[n_train + n_val:]]
    return train, val, test


STD_FLOOR = 1e-8


@dataclass
class Normalizer:
    """Per-variable z-score statistics fitted on training observations only."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, value, var_index):
        return (value - self.mean[var_index]) / self.std[var_index]

    def invert(self, value, var_index):
        return value * self.std[var_index] + self.mean[var_index]

    def apply_canonical(self, canon: CanonicalSample) -> CanonicalSample:
        mu = self.mean[:, None]
        sd = self.std[:, None]
        return CanonicalSample(T=canon.T, X=canon.M * (canon.X - mu) / sd, M=canon.M)

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(mean=np.asarray(d["mean"], dtype=np.float64),
                   std=np.asarray(d["std"], dtype=np.float64))


def fit_normalizer(train) -> Normalizer:
    n = max(s.n_vars for s in train)
    mean = np.zeros(n)
    std = np.ones(n)
    for v in range(n):
        values = np.array([o.x for smp in train for s in smp.series
                           if s.var_index == v for o in s.observations])
        if values.size:
            mean[v] = values.mean()
            std[v] = max(values.std(), STD_FLOOR)
    return Normalizer(mean=mean, std=std)


# ---------------------------------------------------------------------------
# synthetic generator


@dataclass
class SyntheticConfig:
    n_vars: int = 4
    l_max: int = 16
    samples: int = 200
    obs_rate: float = 0.7
    noise: float = 0.1
    horizon: int = 3

    def validate(self):
        if not (0.0 < self.obs_rate <= 1.0):
            raise InvalidConfig(f"obs_rate must lie in (0, 1], got {self.obs_rate}")
        if self.n_vars < 1 or self.l_max < 1 or self.samples < 1 or self.horizon < 1:
            raise InvalidConfig("n_vars, l_max, samples, horizon must be >= 1")
        if self.noise < 0:
            raise InvalidConfig(f"noise must be >= 0, got {self.noise}")


OBS_WINDOW_END = 0.8  # observations on [0, 0.8], queries on (0.8, 1.0]
_SIGNAL_COMPONENTS = 2


def generate_synthetic(config: SyntheticConfig, seed: int):
    """Variable-specific sinusoid mixtures + a per-sample shared linear trend
    + Gaussian noise; observation times from a homogeneous point process."""
    config.validate()
    rng = np.random.default_rng(seed)
    n, k = config.n_vars, _SIGNAL_COMPONENTS
    freqs = rng.uniform(0.3, 1.2, size=(n, k))       # cycles per unit window
    amps = rng.uniform(0.4, 1.0, size=(n, k))

    samples = []
    for s_idx in range(config.samples):
        trend_slope = rng.normal(0.0, 0.6)
        trend_level = rng.normal(0.0, 0.4)
        offsets = rng.normal(0.0, 0.8, size=n)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=(n, k))

        def signal(v, t):
            periodic = np.sum(
                amps[v] * np.sin(2.0 * np.pi * freqs[v] * np.asarray(t)[..., None]
                                 + phases[v]), axis=-1)
            return offsets[v] + trend_level + trend_slope * np.asarray(t) + periodic

        series = []
        queries = []
        for v in range(n):
            count = rng.binomial(config.l_max, config.obs_rate)
            ts = np.unique(rng.uniform(0.0, OBS_WINDOW_END, size=count))
            xs = signal(v, ts) + rng.normal(0.0, config.noise, size=ts.size)
            series.append(VariableSeries(
                v, tuple(Observation(float(t), float(x)) for t, x in zip(ts, xs))))
            qs = np.sort(rng.uniform(OBS_WINDOW_END, 1.0, size=config.horizon))
            qs = np.nextafter(qs, np.inf)  # keep the open interval (0.8, 1.0]
            targets = signal(v, qs) + rng.normal(0.0, config.noise, size=qs.size)
            queries.extend(ForecastQuery(v, float(q), float(x)) for q, x in zip(qs, targets))
        samples.append(Sample(f"s{s_idx:05d}", tuple(series), tuple(queries)))
    return samples


# ---------------------------------------------------------------------------
# dataset file: one JSON record per line, reals at 9 significant digits


def _sig9(x):
    return float(f"{float(x):.9g}")


def sample_to_record(sample: Sample) -> dict:
    return {
        "id": sample.id,
        "series": [{"var": s.var_index,
                    "t": [_sig9(o.t) for o in s.observations],
                    "x": [_sig9(o.x) for o in s.observations]}
                   for s in sample.series],
        "queries": [{"var": q.var_index, "q": _sig9(q.q),
                     "target": None if q.target is None else _sig9(q.target)}
                    for q in sample.queries],
    }


def record_to_sample(rec: dict) -> Sample:
    series = tuple(
        VariableSeries(int(s["var"]),
                       tuple(Observation(float(t), float(x))
                             for t, x in zip(s["t"], s["x"])))
        for s in rec["series"])
    queries = tuple(
        ForecastQuery(int(q["var"]), float(q["q"]),
                      None if q.get("target") is None else float(q["target"]))
        for q in rec["queries"])
    return Sample(str(rec["id"]), series, queries)


def save_dataset(path, samples):
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(json.dumps(sample_to_record(sample), separators=(",", ":")))
            fh.write("\n")


def load_dataset(path):
    samples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                samples.append(record_to_sample(json.loads(line)))
    return samples
