"""Persistence: datasets, normalization stats, checkpoints, CSV ingestion.

Checkpoints are self-describing containers: a JSON header (config,
fingerprints, named-tensor index) followed by a raw little-endian float64
payload. Writes go through a temp file + atomic rename so an interrupted
run never leaves a partial file at the target path.
"""

import csv
import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    IngestError,
    InputError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from .synthgen import AttributeSchema, Dataset, SynthConfig, TimeSeries

CHECKPOINT_FORMAT_VERSION = 1
_MAGIC = b"TSEC"


# -- normalization ------------------------------------------------------------


@dataclass(frozen=True)
class NormalizationStats:
    mean: float
    std: float
    source_fingerprint: str = ""

    def __post_init__(self):
        if not self.std > 0:
            raise InputError(f"normalization std must be > 0, got {self.std}")

    def standardize(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def destandardize(self, x):
        return np.asarray(x, dtype=np.float64) * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean, "std": self.std, "source_fingerprint": self.source_fingerprint}

    @classmethod
    def from_dict(cls, d):
        return cls(mean=d["mean"], std=d["std"], source_fingerprint=d.get("source_fingerprint", ""))


def dataset_fingerprint(dataset):
    h = hashlib.sha256()
    for s in dataset.series:
        h.update(s.id.encode("utf-8"))
        h.update(s.values.tobytes())
    return h.hexdigest()[:16]


def compute_normalization(dataset):
    """Global mean/std over all values of the TRAIN split only.

    Restricting to train keeps validation/test values out of the statistics;
    they are applied uniformly to every split afterwards.
    """
    train = dataset.split("train")
    if not train:
        raise InputError("dataset has no train split to compute normalization from")
    flat = np.concatenate([s.values for s in train])
    std = float(flat.std())
    if std == 0.0:
        raise InputError("degenerate dataset: zero variance across all train values")
    return NormalizationStats(mean=float(flat.mean()), std=std,
                              source_fingerprint=dataset_fingerprint(dataset))


# -- dataset JSONL ------------------------------------------------------------


def _series_record(s):
    rec = {
        "id": s.id,
        "values": [float(v) for v in s.values],
        "attributes": s.attributes,
        "description": s.description,
        "split": s.split,
    }
    if s.gen is not None:
        rec["gen"] = s.gen
    return rec


def write_dataset(dataset, jsonl_path, manifest_path=None):
    """One TimeSeries per JSONL line; manifest carries schema/config/counts."""
    tmp_fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(jsonl_path)) or ".")
    with os.fdopen(tmp_fd, "w", encoding="utf-8") as f:
        for s in dataset.series:
            f.write(json.dumps(_series_record(s)) + "\n")
    os.replace(tmp, jsonl_path)
    if manifest_path is None:
        manifest_path = os.path.splitext(jsonl_path)[0] + ".manifest.json"
    manifest = {
        "schema": dataset.schema.to_dict(),
        "config": dataset.config.to_dict() if dataset.config else None,
        "counts": {
            "total": len(dataset.series),
            "train": len(dataset.split("train")),
            "val": len(dataset.split("val")),
            "test": len(dataset.split("test")),
        },
    }
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    return manifest_path


def read_dataset(jsonl_path, manifest_path=None):
    if manifest_path is None:
        candidate = os.path.splitext(jsonl_path)[0] + ".manifest.json"
        manifest_path = candidate if os.path.exists(candidate) else None
    series = []
    with open(jsonl_path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            series.append(TimeSeries(
                id=rec["id"],
                values=np.asarray(rec["values"], dtype=np.float64),
                attributes=rec["attributes"],
                description=rec.get("description"),
                split=rec.get("split"),
                gen=rec.get("gen"),
            ))
    schema = None
    config = None
    if manifest_path:
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
        schema = AttributeSchema.from_dict(manifest["schema"])
        if manifest.get("config"):
            config = SynthConfig.from_dict(manifest["config"])
    if schema is None:
        schema = _infer_schema(series)
    return Dataset(series=series, schema=schema, config=config)


def _infer_schema(series):
    seen = {}
    for s in series:
        for name, level in s.attributes.items():
            seen.setdefault(name, [])
            if level not in seen[name]:
                seen[name].append(level)
    return AttributeSchema([(name, tuple(levels)) for name, levels in seen.items()])


def read_paraphrases(path):
    """JSONL of {attribute, level, sentence} records for TemplateSet.load_paraphrases."""
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                records.append(json.loads(line))
    return records


# -- checkpoints --------------------------------------------------------------


@dataclass
class Checkpoint:
    format_version: int
    config: object  # ModelConfig (or any object with to_dict) / plain dict
    params: dict  # name -> float64 ndarray
    norm_stats: NormalizationStats = None
    provider_fingerprint: str = ""
    log_digest: str = ""
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def fingerprint(self):
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode("utf-8"))
            h.update(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes())
        return h.hexdigest()[:16]


def save_checkpoint(ckpt, path):
    header = {
        "format_version": ckpt.format_version,
        "config": ckpt.config.to_dict() if hasattr(ckpt.config, "to_dict") else dict(ckpt.config),
        "norm_stats": ckpt.norm_stats.to_dict() if ckpt.norm_stats else None,
        "provider_fingerprint": ckpt.provider_fingerprint,
        "log_digest": ckpt.log_digest,
        "seed": ckpt.seed,
        "extra": ckpt.extra,
        "tensors": [],
    }
    offset = 0
    names = sorted(ckpt.params)
    for name in names:
        arr = np.ascontiguousarray(ckpt.params[name], dtype="<f8")
        header["tensors"].append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    header_bytes = json.dumps(header).encode("utf-8")
    dirpath = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=dirpath, suffix=".ckpt.tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(_MAGIC)
            f.write(struct.pack("<I", len(header_bytes)))
            f.write(header_bytes)
            for name in names:
                f.write(np.ascontiguousarray(ckpt.params[name], dtype="<f8").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_checkpoint_header(path):
    """Config and fingerprints without touching the tensor payload."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise VersionMismatchError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        (header_len,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(header_len).decode("utf-8"))
    if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise VersionMismatchError(
            f"{path}: format version {header.get('format_version')} != {CHECKPOINT_FORMAT_VERSION}"
        )
    return header


def load_checkpoint(path, expected_provider_fingerprint=None):
    from .errors import FingerprintMismatchError

    header = read_checkpoint_header(path)
    if expected_provider_fingerprint is not None and \
            header["provider_fingerprint"] != expected_provider_fingerprint:
        raise FingerprintMismatchError(
            f"{path}: checkpoint provider {header['provider_fingerprint']!r} "
            f"!= expected {expected_provider_fingerprint!r}"
        )
    with open(path, "rb") as f:
        f.seek(4)
        (header_len,) = struct.unpack("<I", f.read(4))
        f.seek(8 + header_len)
        payload = f.read()
    total = sum(int(np.prod(t["shape"])) for t in header["tensors"])
    if len(payload) != total * 8:
        raise TruncatedPayloadError(
            f"{path}: payload has {len(payload)} bytes, header promises {total * 8}"
        )
    flat = np.frombuffer(payload, dtype="<f8")
    params = {}
    for t in header["tensors"]:
        size = int(np.prod(t["shape"]))
        params[t["name"]] = flat[t["offset"] : t["offset"] + size].reshape(t["shape"]).astype(np.float64)
    from .model import ModelConfig

    config = header["config"]
    try:
        config = ModelConfig.from_dict(config)
    except (TypeError, KeyError, ConfigError):
        pass  # classifier checkpoints carry their own config shape
    return Checkpoint(
        format_version=header["format_version"],
        config=config,
        params=params,
        norm_stats=NormalizationStats.from_dict(header["norm_stats"]) if header["norm_stats"] else None,
        provider_fingerprint=header["provider_fingerprint"],
        log_digest=header["log_digest"],
        seed=header["seed"],
        extra=header.get("extra", {}),
    )


# -- CSV ingestion -------------------------------------------------------------


@dataclass
class IngestOptions:
    layout: str = "wide"  # "wide" (one row per series) or "long" (id,t,value rows)
    id_column: str = "id"
    time_column: str = "t"
    value_column: str = "value"
    length: int = None  # inferred from the first valid series when None


@dataclass
class IngestReport:
    accepted: int = 0
    rejected: list = field(default_factory=list)  # (row_number, reason)

    def add_reject(self, row, reason):
        self.rejected.append((row, reason))


def ingest_csv(path, schema, options=None):
    """Returns (list of TimeSeries, IngestReport); bad rows are itemized."""
    options = options or IngestOptions()
    if options.layout == "wide":
        return _ingest_wide(path, schema, options)
    if options.layout == "long":
        return _ingest_long(path, schema, options)
    raise IngestError(f"unknown CSV layout {options.layout!r}")


def _parse_attrs(schema, row, rownum, report):
    attrs = {}
    for name in schema.names:
        level = row.get(name)
        if level not in schema.levels_of(name):
            report.add_reject(rownum, f"unknown level {level!r} for attribute {name!r}")
            return None
        attrs[name] = level
    return attrs


def _ingest_wide(path, schema, options):
    report = IngestReport()
    series = []
    expected = options.length
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            raise IngestError(f"{path}: empty CSV")
        value_cols = [c for c in reader.fieldnames
                      if c != options.id_column and c not in schema.names]
        for rownum, row in enumerate(reader, start=2):  # header is row 1
            attrs = _parse_attrs(schema, row, rownum, report)
            if attrs is None:
                continue
            raw = [row[c] for c in value_cols if row.get(c) not in (None, "")]
            try:
                values = np.asarray([float(v) for v in raw], dtype=np.float64)
            except ValueError as exc:
                report.add_reject(rownum, f"non-numeric value: {exc}")
                continue
            if expected is None:
                expected = len(values)
            if len(values) != expected:
                report.add_reject(rownum, f"length {len(values)} != expected {expected}")
                continue
            series.append(TimeSeries(id=row[options.id_column], values=values, attributes=attrs))
            report.accepted += 1
    return series, report


def _ingest_long(path, schema, options):
    report = IngestReport()
    rows_by_id = {}
    attrs_by_id = {}
    bad_ids = set()
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            raise IngestError(f"{path}: empty CSV")
        for rownum, row in enumerate(reader, start=2):
            sid = row.get(options.id_column)
            if sid in bad_ids:
                continue
            attrs = _parse_attrs(schema, row, rownum, report)
            if attrs is None:
                bad_ids.add(sid)
                rows_by_id.pop(sid, None)
                continue
            try:
                t = int(row[options.time_column])
                v = float(row[options.value_column])
            except (TypeError, ValueError) as exc:
                report.add_reject(rownum, f"bad time/value: {exc}")
                bad_ids.add(sid)
                rows_by_id.pop(sid, None)
                continue
            rows_by_id.setdefault(sid, {})[t] = v
            attrs_by_id[sid] = attrs
    series = []
    expected = options.length
    for sid, points in rows_by_id.items():
        ts = sorted(points)
        if ts != list(range(len(ts))):
            report.add_reject(0, f"series {sid!r}: non-contiguous time indices")
            continue
        values = np.asarray([points[t] for t in ts], dtype=np.float64)
        if expected is None:
            expected = len(values)
        if len(values) != expected:
            report.add_reject(0, f"series {sid!r}: length {len(values)} != expected {expected}")
            continue
        series.append(TimeSeries(id=sid, values=values, attributes=attrs_by_id[sid]))
        report.accepted += 1
    return series, report
