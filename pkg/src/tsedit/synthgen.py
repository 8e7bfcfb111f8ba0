"""Synthetic benchmark generator and instruction templates.

Each series is the sum of four components (trend + seasonality + shift +
noise), one per attribute family. Every (sample, family) pair gets its own
RNG stream derived from (dataset seed, sample index, family index), so a
single component can be regenerated bit-exactly without re-running the
whole dataset — that is what makes ground-truth edits and the additivity
checks possible.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SchemaError

FAMILIES = ("trend", "seasonality", "shift", "noise")

TREND_LEVELS = ("flat", "upward-linear", "downward-linear", "upward-quadratic", "downward-quadratic")
SEASONALITY_LEVELS = ("no", "yes")
SHIFT_LEVELS = ("none", "upward", "downward")
NOISE_LEVELS = ("low", "high")

_FAMILY_LEVELS = {
    "trend": TREND_LEVELS,
    "seasonality": SEASONALITY_LEVELS,
    "shift": SHIFT_LEVELS,
    "noise": NOISE_LEVELS,
}

CANONICAL_TEMPLATES = {
    ("trend", "flat"): "No trend.",
    ("trend", "upward-linear"): "The time series shows upward linear trend.",
    ("trend", "downward-linear"): "The time series shows downward linear trend.",
    ("trend", "upward-quadratic"): "The time series shows upward quadratic trend.",
    ("trend", "downward-quadratic"): "The time series shows downward quadratic trend.",
    ("seasonality", "no"): "No seasonal pattern.",
    ("seasonality", "yes"): "The time series exhibits a seasonal pattern.",
    ("shift", "none"): "No sharp shifts.",
    ("shift", "upward"): "The mean of the time series shifts upwards.",
    ("shift", "downward"): "The mean of the time series shifts downwards.",
    ("noise", "low"): "The time series exhibits low variability.",
    ("noise", "high"): "The time series exhibits high variability.",
}

# Seasonal parameter ranges. Amplitudes sit between the noise ceiling (2.0)
# and the shift magnitudes (15-20) so the attribute stays separable; the
# "no" level is a sub-0.3 amplitude drift slower than half the window.
SEASON_AMP = (2.0, 5.0)
SEASON_PERIOD = (20.0, 50.0)
SEASON_NOISE_STD = 0.05
NO_SEASON_AMP = (0.05, 0.25)

_SPLIT_STREAM_TAG = 0xA11CE


class AttributeSchema:
    """Ordered categorical attributes, each with >= 2 uniquely named levels."""

    def __init__(self, attributes):
        attrs = [(str(name), tuple(levels)) for name, levels in attributes]
        names = [name for name, _ in attrs]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate attribute names in {names}")
        for name, levels in attrs:
            if len(levels) < 2:
                raise SchemaError(f"attribute {name!r} needs >= 2 levels, got {levels}")
            if len(set(levels)) != len(levels):
                raise SchemaError(f"attribute {name!r} has duplicate levels {levels}")
        self.attributes = attrs

    @property
    def names(self):
        return [name for name, _ in self.attributes]

    def levels_of(self, name):
        for attr, levels in self.attributes:
            if attr == name:
                return levels
        raise SchemaError(f"unknown attribute {name!r}")

    def check_level(self, name, level):
        if level not in self.levels_of(name):
            raise SchemaError(f"unknown level {level!r} for attribute {name!r}")

    def combinations(self):
        """All full level assignments, rightmost attribute fastest."""
        names = self.names
        level_lists = [levels for _, levels in self.attributes]
        return [dict(zip(names, combo)) for combo in itertools.product(*level_lists)]

    def to_dict(self):
        return {"attributes": [[name, list(levels)] for name, levels in self.attributes]}

    @classmethod
    def from_dict(cls, d):
        return cls([(name, tuple(levels)) for name, levels in d["attributes"]])

    def __eq__(self, other):
        return isinstance(other, AttributeSchema) and self.attributes == other.attributes


def default_schema(families=FAMILIES):
    for fam in families:
        if fam not in FAMILIES:
            raise SchemaError(f"unknown attribute family {fam!r}")
    return AttributeSchema([(fam, _FAMILY_LEVELS[fam]) for fam in FAMILIES if fam in families])


@dataclass(frozen=True)
class SynthConfig:
    T: int = 200
    samples_per_combination: int = 300
    seed: int = 0
    families: tuple = FAMILIES

    def __post_init__(self):
        if self.T < 20:
            raise ConfigError(f"series length must be >= 20, got {self.T}")
        if self.samples_per_combination < 1:
            raise ConfigError("samples_per_combination must be >= 1")
        for fam in self.families:
            if fam not in FAMILIES:
                raise ConfigError(f"unknown attribute family {fam!r}")

    def to_dict(self):
        return {
            "T": self.T,
            "samples_per_combination": self.samples_per_combination,
            "seed": self.seed,
            "families": list(self.families),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            T=d["T"],
            samples_per_combination=d["samples_per_combination"],
            seed=d["seed"],
            families=tuple(d["families"]),
        )


@dataclass
class TimeSeries:
    id: str
    values: np.ndarray
    attributes: dict
    description: str = None
    split: str = None
    gen: dict = None  # {"seed": int, "index": int} for synthetic samples

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)


@dataclass
class Dataset:
    series: list
    schema: AttributeSchema
    config: SynthConfig = None

    def split(self, name):
        return [s for s in self.series if s.split == name]

    def by_id(self, sid):
        for s in self.series:
            if s.id == sid:
                return s
        raise KeyError(sid)


def _component_rng(seed, index, family):
    return np.random.default_rng([int(seed), int(index), FAMILIES.index(family)])


def gen_trend(level, rng, T):
    t = np.arange(T, dtype=np.float64)
    if level == "flat":
        return np.full(T, rng.uniform(-5.0, 5.0))
    if level in ("upward-linear", "downward-linear"):
        a = rng.uniform(0.05, 0.20)
        if level.startswith("downward"):
            a = -a
        x = a * t
        m = rng.uniform(-5.0, 5.0)
        return x - x.mean() + m
    if level in ("upward-quadratic", "downward-quadratic"):
        a = rng.uniform(1e-4, 5e-4)
        b = rng.uniform(0.0, 50.0)
        x = a * (t + b) ** 2
        if level.startswith("downward"):
            x = -x
        if x.min() < 0.0:
            x = x - x.min()
        m = rng.uniform(-5.0, 5.0)
        return x - x.mean() + m
    raise SchemaError(f"unknown trend level {level!r}")


def gen_season_info(level, rng, T):
    t = np.arange(T, dtype=np.float64)
    if level == "no":
        amp = rng.uniform(*NO_SEASON_AMP)
        period = rng.uniform(2.0 * T, 4.0 * T)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        x = amp * np.sin(2.0 * math.pi * t / period + phase)
        return x, {"components": [(amp, period, phase)]}
    if level == "yes":
        n_components = 1 if rng.random() < 0.5 else int(rng.integers(2, 4))
        comps = []
        x = np.zeros(T)
        for _ in range(n_components):
            amp = rng.uniform(*SEASON_AMP)
            period = rng.uniform(*SEASON_PERIOD)
            phase = rng.uniform(0.0, 2.0 * math.pi)
            comps.append((amp, period, phase))
            x = x + amp * np.sin(2.0 * math.pi * t / period + phase)
        x = x + rng.normal(0.0, SEASON_NOISE_STD, T)
        return x, {"components": comps}
    raise SchemaError(f"unknown seasonality level {level!r}")


def gen_season(level, rng, T):
    return gen_season_info(level, rng, T)[0]


def gen_shift(level, rng, T):
    base = rng.normal(0.0, 0.05, T)
    if level == "none":
        return base
    if level in ("upward", "downward"):
        delta = rng.uniform(15.0, 20.0)
        lo = math.ceil(0.1 * T)
        hi = math.floor(0.9 * T)
        t_s = int(rng.integers(lo, hi + 1))
        step = np.zeros(T)
        step[t_s:] = delta if level == "upward" else -delta
        return base + step
    raise SchemaError(f"unknown shift level {level!r}")


def gen_noise(level, rng, T):
    if level == "low":
        sigma = rng.uniform(0.01, 0.1)
    elif level == "high":
        sigma = rng.uniform(1.5, 2.0)
    else:
        raise SchemaError(f"unknown noise level {level!r}")
    return rng.normal(0.0, sigma, T)


_GENERATORS = {
    "trend": gen_trend,
    "seasonality": gen_season,
    "shift": gen_shift,
    "noise": gen_noise,
}


def component_series(seed, index, family, level, T):
    """Regenerate one component of one sample, bit-exact with generation time."""
    if family not in FAMILIES:
        raise SchemaError(f"unknown attribute family {family!r}")
    rng = _component_rng(seed, index, family)
    return _GENERATORS[family](level, rng, T)


def compose_series(seed, index, attributes, T):
    """Sum the enabled components of one sample, bit-exact under the seed."""
    total = np.zeros(T)
    for family in FAMILIES:
        if family in attributes:
            total = total + component_series(seed, index, family, attributes[family], T)
    return total


def generate_dataset(config, schema=None, templates=None):
    """Full benchmark: every attribute combination x samples_per_combination.

    Returns a Dataset whose series carry canonical descriptions, a 70/20/10
    train/validation/test split, and generation metadata for component-level
    regeneration.
    """
    if schema is None:
        schema = default_schema(config.families)
    if set(schema.names) != set(config.families):
        raise ConfigError(
            f"schema attributes {schema.names} do not match enabled families {config.families}"
        )
    if templates is None:
        templates = TemplateSet.canonical(schema)
    combos = schema.combinations()
    series = []
    index = 0
    for combo in combos:
        for _ in range(config.samples_per_combination):
            values = compose_series(config.seed, index, combo, config.T)
            series.append(
                TimeSeries(
                    id=f"syn-{config.seed}-{index:06d}",
                    values=values,
                    attributes=dict(combo),
                    description=render_instruction(combo, templates, "canonical"),
                    gen={"seed": config.seed, "index": index},
                )
            )
            index += 1
    _assign_splits(series, config.seed)
    return Dataset(series=series, schema=schema, config=config)


def _assign_splits(series, seed):
    n = len(series)
    order = np.random.default_rng([int(seed), _SPLIT_STREAM_TAG]).permutation(n)
    n_train = int(n * 0.7)
    n_val = int(n * 0.2)
    for rank, idx in enumerate(order):
        if rank < n_train:
            series[idx].split = "train"
        elif rank < n_train + n_val:
            series[idx].split = "val"
        else:
            series[idx].split = "test"


@dataclass
class TemplateSet:
    """Sentences per (attribute, level): one canonical + optional paraphrases.

    Paraphrases are split 70/30 per level, in file order, into a train pool
    (canonical sentence included) and a held-out pool used only to probe
    generalization to unseen expressions.
    """

    schema: AttributeSchema
    canonical_sentences: dict
    paraphrase_train: dict = field(default_factory=dict)
    paraphrase_heldout: dict = field(default_factory=dict)

    @classmethod
    def canonical(cls, schema, sentences=None):
        table = dict(CANONICAL_TEMPLATES) if sentences is None else dict(sentences)
        chosen = {}
        for name in schema.names:
            for level in schema.levels_of(name):
                if (name, level) not in table:
                    raise SchemaError(f"no template sentence for ({name!r}, {level!r})")
                chosen[(name, level)] = table[(name, level)]
        return cls(schema=schema, canonical_sentences=chosen)

    def load_paraphrases(self, records):
        """records: iterable of dicts {attribute, level, sentence} (JSONL rows)."""
        per_level = {}
        for rec in records:
            key = (rec["attribute"], rec["level"])
            if key not in self.canonical_sentences:
                raise SchemaError(f"paraphrase for unknown attribute/level {key}")
            sentence = rec["sentence"]
            if sentence == self.canonical_sentences[key]:
                continue
            per_level.setdefault(key, [])
            if sentence not in per_level[key]:
                per_level[key].append(sentence)
        for key, sentences in per_level.items():
            n_train = max(1, int(len(sentences) * 0.7))
            self.paraphrase_train[key] = sentences[:n_train]
            self.paraphrase_heldout[key] = sentences[n_train:]

    def has_paraphrases(self):
        return bool(self.paraphrase_train)

    def sentences_for(self, name, level, mode):
        key = (name, level)
        if key not in self.canonical_sentences:
            raise SchemaError(f"no template sentence for ({name!r}, {level!r})")
        if mode == "canonical":
            return [self.canonical_sentences[key]]
        if mode == "paraphrase-train":
            if not self.has_paraphrases():
                raise ConfigError("paraphrase mode requires a loaded paraphrase file")
            return [self.canonical_sentences[key]] + self.paraphrase_train.get(key, [])
        if mode == "paraphrase-heldout":
            if not self.has_paraphrases():
                raise ConfigError("paraphrase mode requires a loaded paraphrase file")
            pool = self.paraphrase_heldout.get(key, [])
            return pool if pool else [self.canonical_sentences[key]]
        raise ConfigError(f"unknown rendering mode {mode!r}")


def render_instruction(attributes, templates, mode="canonical", rng=None):
    """One sentence per attribute, joined by single spaces, in schema order."""
    if mode != "canonical" and rng is None:
        rng = np.random.default_rng()
    parts = []
    for name in templates.schema.names:
        if name not in attributes:
            raise SchemaError(f"attribute {name!r} missing from {sorted(attributes)}")
        templates.schema.check_level(name, attributes[name])
        pool = templates.sentences_for(name, attributes[name], mode)
        if mode == "canonical":
            parts.append(pool[0])
        else:
            parts.append(pool[int(rng.integers(len(pool)))])
    return " ".join(parts)
