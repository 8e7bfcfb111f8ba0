"""Evaluation machinery: DTW distances, classifier-based RaTS, MSE/MAE.

DTW uses the squared pointwise cost and the classic (1,0)/(0,1)/(1,1) step
set; the implementation sweeps antidiagonals so one series can be scored
against a whole population of targets in a single vectorized pass.

Sign convention for the population distance: delta_dtw is the median of
DTW(edit, target) - DTW(input, target), so NEGATIVE values mean the edit
moved toward the target population (matching the "lower is better" reading
of the reported tables).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .editing import EditRequest, edit
from .errors import InputError, ModelError, SchemaError
from .model import SeriesEncoder, unit_rows, unit_rows_backward
from .synthgen import compose_series

PROB_FLOOR = 1e-7


# -- DTW ------------------------------------------------------------------------


def dtw(x, y):
    """Minimum cumulative squared-difference over monotone warping paths."""
    return float(dtw_batch(x, np.asarray(y, dtype=np.float64)[None, :])[0])


def dtw_batch(x, Y):
    """DTW of one series against a batch of equally long targets (M, Ty)."""
    x = np.asarray(x, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise InputError(f"dtw expects a non-empty 1-D series, got shape {x.shape}")
    if Y.ndim != 2 or Y.shape[1] == 0 or Y.shape[0] == 0:
        raise InputError(f"dtw target batch must be non-empty (M, T), got shape {Y.shape}")
    n, (m_count, m) = x.size, Y.shape
    cost = (x[None, :, None] - Y[:, None, :]) ** 2  # (M, n, m)
    inf = np.inf
    # prev/prev2 hold antidiagonals k-1 and k-2 of the padded DP matrix,
    # indexed by i in [0, n]; D[0,0] = 0 lives on diagonal k = 0.
    prev2 = np.full((m_count, n + 1), inf)
    prev = np.full((m_count, n + 1), inf)
    prev2[:, 0] = 0.0
    for k in range(2, n + m + 1):
        cur = np.full((m_count, n + 1), inf)
        i_lo = max(1, k - m)
        i_hi = min(n, k - 1)
        if i_lo > i_hi:
            prev2, prev = prev, cur
            continue
        sl = slice(i_lo, i_hi + 1)
        sl_up = slice(i_lo - 1, i_hi)
        best = np.minimum(prev[:, sl_up], prev[:, sl])
        best = np.minimum(best, prev2[:, sl_up])
        idx_i = np.arange(i_lo, i_hi + 1)
        cur[:, sl] = cost[:, idx_i - 1, k - idx_i - 1] + best
        prev2, prev = prev, cur
    return prev[:, n]


def dtw_path(x, y):
    """(cost, warping path) via the full DP table; used to audit constraints."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size == 0 or y.size == 0:
        raise InputError("dtw expects non-empty series")
    n, m = x.size, y.size
    cost = (x[:, None] - y[None, :]) ** 2
    D = np.full((n + 1, m + 1), np.inf)
    D[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            D[i, j] = cost[i - 1, j - 1] + min(D[i - 1, j], D[i, j - 1], D[i - 1, j - 1])
    path = []
    i, j = n, m
    while (i, j) != (0, 0):
        path.append((i, j))
        steps = [(i - 1, j - 1), (i - 1, j), (i, j - 1)]
        i, j = min((s for s in steps if s[0] >= 0 and s[1] >= 0), key=lambda s: D[s])
    path.reverse()
    return float(D[n, m]), path[0 if path and path[0] != (0, 0) else 1:]


def delta_dtw(x_hat, x, targets):
    """Median over targets of DTW(edit, target) - DTW(input, target)."""
    targets = [np.asarray(t, dtype=np.float64) for t in targets]
    if not targets:
        raise InputError("delta_dtw needs a non-empty target set")
    Y = np.stack(targets)
    return float(np.median(dtw_batch(x_hat, Y) - dtw_batch(x, Y)))


# -- MSE / MAE -------------------------------------------------------------------


def mse_mae(X_hat, X_gt):
    """Norm-based forms: mean ||x - x_hat||^2 and mean ||x - x_hat|| over samples."""
    X_hat = np.atleast_2d(np.asarray(X_hat, dtype=np.float64))
    X_gt = np.atleast_2d(np.asarray(X_gt, dtype=np.float64))
    if X_hat.shape != X_gt.shape:
        raise InputError(f"shape mismatch: {X_hat.shape} vs {X_gt.shape}")
    norms = np.linalg.norm(X_gt - X_hat, axis=1)
    return float((norms ** 2).mean()), float(norms.mean())


# -- attribute classifiers ---------------------------------------------------------


@dataclass
class ClassifierConfig:
    epochs: int = 60
    lr: float = 3e-3  # unit-norm embeddings keep logits small; 1e-3 is too timid
    batch_size: int = 64
    seed: int = 0
    patience: int = 15
    # encoder shape (mirrors the series encoder of the editing model)
    k: int = 4
    d: int = 32
    kernel_fractions: tuple = (1.0, 1.0 / 2.0, 1.0 / 4.0, 1.0 / 8.0)
    conv_channels: tuple = (16, 32)


class AttributeClassifier:
    """Series-encoder backbone plus a softmax head over one attribute's levels."""

    def __init__(self, attribute, levels, T, config, training_fingerprint=""):
        from .model import ModelConfig

        self.attribute = attribute
        self.levels = list(levels)
        self.config = config
        self.training_fingerprint = training_fingerprint
        self.encoder_config = ModelConfig(
            T=T, k=config.k, d=config.d, kernel_fractions=tuple(config.kernel_fractions),
            conv_channels=tuple(config.conv_channels), decoder_blocks=1, attention_heads=1,
            seed=config.seed,
        )
        rng = np.random.default_rng(config.seed)
        self.encoder = SeriesEncoder(self.encoder_config, rng, f"clf_{attribute}.encoder")
        self.head = nn.Dense(self.encoder_config.D, len(self.levels), rng, f"clf_{attribute}.head")

    def params(self):
        return self.encoder.params() + self.head.params()

    def logits(self, X, ctx=None):
        sub = {"enc": {}, "norm": {}, "head": {}} if ctx is not None else None
        v = self.encoder.forward(X, sub and sub["enc"])
        z = unit_rows(v, sub and sub["norm"])
        out = self.head.forward(z, sub and sub["head"])
        if ctx is not None:
            ctx["sub"] = sub
        return out

    def backward(self, glogits, ctx):
        sub = ctx["sub"]
        gz = self.head.backward(glogits, sub["head"])
        return self.encoder.backward(unit_rows_backward(gz, sub["norm"]), sub["enc"])

    def predict_proba_batch(self, X):
        return nn.softmax_last(self.logits(np.asarray(X, dtype=np.float64)))

    def predict_proba(self, x):
        return self.predict_proba_batch(np.asarray(x, dtype=np.float64)[None, :])[0]

    def level_probability(self, x, level):
        if level not in self.levels:
            raise SchemaError(f"unknown level {level!r} for attribute {self.attribute!r}")
        return float(self.predict_proba(x)[self.levels.index(level)])

    def accuracy(self, X, y_idx):
        pred = self.predict_proba_batch(X).argmax(axis=1)
        return float((pred == np.asarray(y_idx)).mean())

    def export_params(self):
        return {p.name: p.values.copy() for p in self.params()}

    def load_params(self, values_by_name):
        named = {p.name: p for p in self.params()}
        if set(values_by_name) != set(named):
            raise ModelError("classifier parameter set mismatch")
        for name, values in values_by_name.items():
            named[name].values[...] = np.asarray(values, dtype=np.float64)


def rats(classifier, x_hat, x, target_level):
    """log p(level | edit) / p(level | input), probabilities clamped away from 0/1."""
    p_hat = min(max(classifier.level_probability(x_hat, target_level), PROB_FLOOR), 1.0 - PROB_FLOOR)
    p_src = min(max(classifier.level_probability(x, target_level), PROB_FLOOR), 1.0 - PROB_FLOOR)
    return math.log(p_hat / p_src)


def train_attribute_classifiers(items, schema, config=None, attributes=None):
    """One multi-class classifier per attribute, trained on held-out items.

    Uses an internal 80/20 split of the provided items for early stopping;
    returns {attribute: (AttributeClassifier, validation_accuracy)}.
    """
    from .training import Adam

    config = config or ClassifierConfig()
    attributes = list(attributes) if attributes is not None else schema.names
    if not items:
        raise InputError("no items to train classifiers on")
    X = np.stack([s.values for s in items])
    T = X.shape[1]
    out = {}
    for attribute in attributes:
        levels = schema.levels_of(attribute)
        observed = {s.attributes[attribute] for s in items}
        if len(observed) < 2:
            raise SchemaError(
                f"attribute {attribute!r} has {len(observed)} observed level(s); need >= 2"
            )
        y = np.asarray([levels.index(s.attributes[attribute]) for s in items])
        rng = np.random.default_rng(config.seed)
        order = rng.permutation(len(items))
        n_train = max(1, int(len(items) * 0.8))
        tri, vai = order[:n_train], order[n_train:]
        clf = AttributeClassifier(attribute, levels, T, config,
                                  training_fingerprint=f"n={len(items)}")
        optimizer = Adam(clf.params(), config.lr)
        best_acc, best, stale = -1.0, None, 0
        for _ in range(config.epochs):
            perm = rng.permutation(len(tri))
            for start in range(0, len(tri), config.batch_size):
                idx = tri[perm[start : start + config.batch_size]]
                optimizer.zero_grad()
                ctx = {}
                logits = clf.logits(X[idx], ctx)
                probs = nn.softmax_last(logits)
                g = probs.copy()
                g[np.arange(len(idx)), y[idx]] -= 1.0
                clf.backward(g / len(idx), ctx)
                optimizer.step()
            acc = clf.accuracy(X[vai], y[vai]) if len(vai) else clf.accuracy(X[tri], y[tri])
            if acc > best_acc:
                best_acc, best, stale = acc, clf.export_params(), 0
            else:
                stale += 1
                if config.patience and stale >= config.patience:
                    break
        if best is not None:
            clf.load_params(best)
        out[attribute] = (clf, best_acc)
    return out


# -- full evaluation ----------------------------------------------------------------


@dataclass
class EditPlanItem:
    series: object  # TimeSeries
    target: dict  # full target attribute combination
    edit_attrs: list
    preserve_attrs: list
    instruction: str


@dataclass
class EvalReport:
    w: float
    per_attribute: dict  # attr -> {"rats": ..., "abs_rats": ..., "delta_dtw": ...}
    mse: float = None
    mae: float = None
    n_items: int = 0
    missing_populations: list = field(default_factory=list)

    def to_dict(self):
        return {
            "w": self.w,
            "per_attribute": self.per_attribute,
            "mse": self.mse,
            "mae": self.mae,
            "n_items": self.n_items,
            "missing_populations": self.missing_populations,
        }

    def to_csv_rows(self):
        """Rows shaped like the comparison tables: one line per attribute."""
        rows = [("attribute", "delta_dtw", "rats", "abs_rats", "mse", "mae")]
        for attr, cells in sorted(self.per_attribute.items()):
            rows.append((
                attr,
                _fmt(cells["delta_dtw"]),
                _fmt(cells["rats"]),
                _fmt(cells["abs_rats"]),
                _fmt({"mean": self.mse, "se": None} if self.mse is not None else None),
                _fmt({"mean": self.mae, "se": None} if self.mae is not None else None),
            ))
        return rows


def _fmt(cell):
    if cell is None or cell.get("mean") is None:
        return ""
    if cell.get("se") is None:
        return f"{cell['mean']:.4f}"
    return f"{cell['mean']:.4f}±{cell['se']:.4f}"


def _mean_se(values):
    if not values:
        return {"mean": None, "se": None, "n": 0}
    arr = np.asarray(values, dtype=np.float64)
    se = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
    return {"mean": float(arr.mean()), "se": se, "n": int(len(arr))}


def make_single_flip_plan(items, schema, templates, rng, attribute=None):
    """Flip one attribute per item (to a random other level), keep the rest."""
    from .synthgen import render_instruction

    plan = []
    names = schema.names
    for s in items:
        attr = attribute if attribute is not None else names[int(rng.integers(len(names)))]
        levels = [l for l in schema.levels_of(attr) if l != s.attributes[attr]]
        target_level = levels[int(rng.integers(len(levels)))]
        target = dict(s.attributes)
        target[attr] = target_level
        plan.append(EditPlanItem(
            series=s,
            target=target,
            edit_attrs=[attr],
            preserve_attrs=[n for n in names if n != attr],
            instruction=render_instruction(target, templates, "canonical"),
        ))
    return plan


def ground_truth_edit(item, target, T):
    """Recompose the sample with edited components swapped in (synthetic only)."""
    if not item.gen:
        return None
    return compose_series(item.gen["seed"], item.gen["index"], target, T)


def evaluate(model, plan, w, classifiers, population, stats=None, with_ground_truth=True,
             max_population=64):
    """Edit every plan item at strength w and score the results.

    population: series pool (normally the test split) searched for members
    carrying each item's full target combination (the DTW reference set).
    """
    if not plan:
        raise InputError("empty edit plan")
    by_combo = {}
    for s in population:
        by_combo.setdefault(tuple(sorted(s.attributes.items())), []).append(s)

    rats_by_attr = {}
    abs_rats_by_attr = {}
    ddtw_by_attr = {}
    gt_pairs = []
    missing = []
    normalization = "dataset-stats" if stats is not None else "none"
    for item in plan:
        result = edit(model, EditRequest(
            series=item.series.values, instruction=item.instruction, weights=[w],
            normalization=normalization), stats=stats)
        x_hat = result.series[0]
        x = item.series.values
        for attr in item.edit_attrs:
            value = rats(classifiers[attr], x_hat, x, item.target[attr])
            rats_by_attr.setdefault(attr, []).append(value)
        for attr in item.preserve_attrs:
            if attr in classifiers:
                value = rats(classifiers[attr], x_hat, x, item.target[attr])
                abs_rats_by_attr.setdefault(attr, []).append(abs(value))
        key = tuple(sorted(item.target.items()))
        members = [m for m in by_combo.get(key, []) if m.id != item.series.id]
        if members:
            Y = np.stack([m.values for m in members[:max_population]])
            value = float(np.median(dtw_batch(x_hat, Y) - dtw_batch(x, Y)))
            for attr in item.edit_attrs:
                ddtw_by_attr.setdefault(attr, []).append(value)
        else:
            missing.append(dict(item.target))
        if with_ground_truth:
            gt = ground_truth_edit(item.series, item.target, model.config.T)
            if gt is not None:
                gt_pairs.append((x_hat, gt))

    per_attr = {}
    for attr in set(rats_by_attr) | set(abs_rats_by_attr) | set(ddtw_by_attr):
        per_attr[attr] = {
            "rats": _mean_se(rats_by_attr.get(attr, [])),
            "abs_rats": _mean_se(abs_rats_by_attr.get(attr, [])),
            "delta_dtw": _mean_se(ddtw_by_attr.get(attr, [])),
        }
    mse = mae = None
    if gt_pairs:
        mse, mae = mse_mae(np.stack([p[0] for p in gt_pairs]), np.stack([p[1] for p in gt_pairs]))
    return EvalReport(w=w, per_attribute=per_attr, mse=mse, mae=mae,
                      n_items=len(plan), missing_populations=missing)
