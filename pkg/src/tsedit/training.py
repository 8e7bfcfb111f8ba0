"""Losses, optimizer, two-phase training, and few-shot adaptation.

Phase 1 minimizes the symmetric InfoNCE loss over in-batch pairs, updating
the two encoders only. Phase 2 continues from those weights and jointly
minimizes contrast + alpha * reconstruction, updating everything. In the
default ratio-tracking mode alpha is rescaled every step so the
reconstruction term contributes 10^-gamma of the contrastive value; alpha
is a constant w.r.t. the gradient.
"""

import copy
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .datastore import CHECKPOINT_FORMAT_VERSION, Checkpoint
from .editing import EditRequest, edit
from .errors import ConfigError, InputError, TrainingDivergedError
from .model import model_from_checkpoint

RATIO_EPS = 1e-8


# -- losses -------------------------------------------------------------------


def _check_pairs(Zx, Zc):
    Zx = np.asarray(Zx, dtype=np.float64)
    Zc = np.asarray(Zc, dtype=np.float64)
    if Zx.ndim != 2 or Zx.shape != Zc.shape:
        raise InputError(f"paired embedding batches must share (N, D), got {Zx.shape} and {Zc.shape}")
    return Zx, Zc


def contrastive_loss_grads(Zx, Zc, temperature=1.0):
    """Symmetric InfoNCE over in-batch pairs; returns (loss, dZx, dZc)."""
    Zx, Zc = _check_pairs(Zx, Zc)
    n = Zx.shape[0]
    logits = (Zx @ Zc.T) / temperature
    row_max = logits.max(axis=1, keepdims=True)
    col_max = logits.max(axis=0, keepdims=True)
    lse_row = np.log(np.exp(logits - row_max).sum(axis=1)) + row_max[:, 0]
    lse_col = np.log(np.exp(logits - col_max).sum(axis=0)) + col_max[0, :]
    diag = np.diag(logits)
    loss = float(((lse_row - diag) + (lse_col - diag)).sum() / (2.0 * n))
    p_row = np.exp(logits - lse_row[:, None])
    p_col = np.exp(logits - lse_col[None, :])
    eye = np.eye(n)
    dlogits = ((p_row - eye) + (p_col - eye)) / (2.0 * n)
    return loss, dlogits @ Zc / temperature, dlogits.T @ Zx / temperature


def contrastive_loss(Zx, Zc, temperature=1.0):
    return contrastive_loss_grads(Zx, Zc, temperature)[0]


def recon_loss_grads(X, Xhat):
    """Squared L2 per sample, averaged over samples; returns (loss, dXhat)."""
    X = np.asarray(X, dtype=np.float64)
    Xhat = np.asarray(Xhat, dtype=np.float64)
    if X.shape != Xhat.shape:
        raise InputError(f"reconstruction shape {Xhat.shape} != target shape {X.shape}")
    n = X.shape[0]
    diff = Xhat - X
    return float((diff * diff).sum() / n), 2.0 * diff / n


def recon_loss(X, Xhat):
    return recon_loss_grads(X, Xhat)[0]


def compute_alpha(contrast, recon, gamma, alpha_mode="ratio-tracking", fixed_alpha=None):
    if alpha_mode == "fixed":
        if fixed_alpha is None:
            raise ConfigError("fixed alpha mode requires fixed_alpha")
        return float(fixed_alpha)
    if alpha_mode != "ratio-tracking":
        raise ConfigError(f"unknown alpha mode {alpha_mode!r}")
    return 10.0 ** (-gamma) * max(contrast, RATIO_EPS) / max(recon, RATIO_EPS)


@dataclass
class TotalLoss:
    total: float
    alpha: float
    contrast: float
    recon: float


def total_loss(Zx, Zc, X, Xhat, gamma, alpha_mode="ratio-tracking", fixed_alpha=None,
               temperature=1.0):
    contrast = contrastive_loss(Zx, Zc, temperature)
    recon = recon_loss(X, Xhat)
    alpha = compute_alpha(contrast, recon, gamma, alpha_mode, fixed_alpha)
    return TotalLoss(total=contrast + alpha * recon, alpha=alpha, contrast=contrast, recon=recon)


# -- optimizer ----------------------------------------------------------------


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.values -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# -- configuration ------------------------------------------------------------


@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs_phase1: int = 40
    epochs_phase2: int = 80
    lr_phase1: float = 1e-3
    lr_phase2: float = 3e-4
    gamma: float = None  # falls back to the model config
    alpha_mode: str = "ratio-tracking"
    fixed_alpha: float = None
    seed: int = 0
    patience: int = 0  # 0 disables early stopping
    paraphrase_mix: bool = False

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("contrastive training needs batch_size >= 2 for in-batch negatives")
        if self.alpha_mode not in ("ratio-tracking", "fixed"):
            raise ConfigError(f"unknown alpha mode {self.alpha_mode!r}")
        if self.alpha_mode == "fixed" and self.fixed_alpha is None:
            raise ConfigError("fixed alpha mode requires fixed_alpha")

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class FewShotConfig:
    examples: list  # (values, instruction) pairs from the unseen condition
    seen_instructions: list
    weights: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    epochs: int = 40
    lr: float = 3e-4
    batch_size: int = 32
    gamma: float = None
    alpha_mode: str = "ratio-tracking"
    fixed_alpha: float = None
    seed: int = 0

    def __post_init__(self):
        if not self.examples:
            raise ConfigError("few-shot tuning needs at least one example pair")
        if not self.seen_instructions:
            raise ConfigError("few-shot tuning needs a non-empty seen-instruction pool")
        for w in self.weights:
            if not 0.0 < w < 1.0:
                raise ConfigError(f"few-shot weight {w} outside (0, 1)")


# -- helpers ------------------------------------------------------------------


def provider_matrix(provider, texts):
    """Embed texts (with dedup) into an (N, E) float64 matrix."""
    distinct = sorted(set(texts))
    vectors = provider.embed_batch(distinct)
    by_text = {t: v.values for t, v in zip(distinct, vectors)}
    return np.stack([by_text[t] for t in texts])


def encode_series_chunked(model, X, chunk=256):
    out = [model.encode_series_batch(X[i : i + chunk]) for i in range(0, len(X), chunk)]
    return np.concatenate(out, axis=0)


def encode_text_chunked(model, V, chunk=1024):
    out = [model.encode_text_batch(V[i : i + chunk]) for i in range(0, len(V), chunk)]
    return np.concatenate(out, axis=0)


def retrieval_top1(model, X, true_texts, class_texts):
    """Fraction of series whose nearest class instruction is their own."""
    Zx = encode_series_chunked(model, X)
    Vc = provider_matrix(model.provider, class_texts)
    Zc = encode_text_chunked(model, Vc)
    pred = (Zx @ Zc.T).argmax(axis=1)
    hits = sum(1 for i, p in enumerate(pred) if class_texts[p] == true_texts[i])
    return hits / len(true_texts)


def log_digest(records):
    payload = "\n".join(json.dumps(r, sort_keys=True) for r in records)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _snapshot(params):
    return [p.values.copy() for p in params]


def _restore(params, snapshot):
    for p, values in zip(params, snapshot):
        p.values[...] = values


def _check_finite(value, *, phase, epoch, batch, contrast, recon):
    if not np.isfinite(value):
        raise TrainingDivergedError(
            f"non-finite loss at phase {phase}, epoch {epoch}, batch {batch}: "
            f"contrast={contrast}, recon={recon}",
            phase=phase, epoch=epoch, batch=batch, contrast=contrast, recon=recon,
        )


def _dedupe_rows(V):
    """(unique rows, inverse) so repeated instructions are encoded once."""
    _, first, inverse = np.unique(V, axis=0, return_index=True, return_inverse=True)
    return V[first], inverse  # V[first] keeps the exact original rows


def _contrastive_step(model, optimizer, Xb, Vb, temperature):
    optimizer.zero_grad()
    ctx_x, ctx_c = {}, {}
    Vu, inv = _dedupe_rows(Vb)
    Zx = model.encode_series_batch(Xb, ctx_x)
    Zc = model.encode_text_batch(Vu, ctx_c)[inv]
    loss, gZx, gZc = contrastive_loss_grads(Zx, Zc, temperature)
    gZu = np.zeros((len(Vu), Zc.shape[1]))
    np.add.at(gZu, inv, gZc)
    model.encode_series_backward(gZx, ctx_x)
    model.encode_text_backward(gZu, ctx_c)
    optimizer.step()
    return loss


def _joint_step(model, optimizer, Xb, Vb, gamma, alpha_mode, fixed_alpha, temperature):
    optimizer.zero_grad()
    ctx_x, ctx_c, ctx_d = {}, {}, {}
    Vu, inv = _dedupe_rows(Vb)
    Zx = model.encode_series_batch(Xb, ctx_x)
    Zc = model.encode_text_batch(Vu, ctx_c)[inv]
    Xhat = model.decode_batch(Zx, Zc, ctx_d)
    contrast, gZx, gZc = contrastive_loss_grads(Zx, Zc, temperature)
    recon, gXhat = recon_loss_grads(Xb, Xhat)
    alpha = compute_alpha(contrast, recon, gamma, alpha_mode, fixed_alpha)
    gZa, gZb = model.decode_backward(alpha * gXhat, ctx_d)
    gZu = np.zeros((len(Vu), Zc.shape[1]))
    np.add.at(gZu, inv, gZc + gZb)
    model.encode_series_backward(gZx + gZa, ctx_x)
    model.encode_text_backward(gZu, ctx_c)
    optimizer.step()
    return contrast, recon, alpha


def _val_losses(model, Zx, Zc, Xv, temperature, with_decoder):
    contrast = contrastive_loss(Zx, Zc, temperature)
    if not with_decoder:
        return contrast, None
    recon = 0.0
    n = len(Xv)
    for i in range(0, n, 256):
        Xhat = model.decode_batch(Zx[i : i + 256], Zc[i : i + 256])
        recon += recon_loss(Xv[i : i + 256], Xhat) * len(Xv[i : i + 256])
    recon /= n
    return contrast, recon


# -- training -----------------------------------------------------------------


def train(model, dataset, config, templates=None, stats=None):
    """Two-phase training; returns (best-validation Checkpoint, epoch log)."""
    train_items = dataset.split("train")
    val_items = dataset.split("val")
    if not train_items or not val_items:
        raise ConfigError("dataset needs non-empty train and validation splits")
    for item in train_items + val_items:
        if not item.description:
            raise ConfigError(f"series {item.id} has no instruction text")
    if config.paraphrase_mix and (templates is None or not templates.has_paraphrases()):
        raise ConfigError("paraphrase_mix requires templates with loaded paraphrases")

    gamma = model.config.gamma if config.gamma is None else config.gamma
    temperature = model.config.temperature

    Xtr = np.stack([s.values for s in train_items])
    Xv = np.stack([s.values for s in val_items])
    if stats is not None:
        Xtr = stats.standardize(Xtr)
        Xv = stats.standardize(Xv)
    texts_tr = [s.description for s in train_items]
    texts_val = [s.description for s in val_items]
    class_texts = sorted(set(texts_tr) | set(texts_val))
    tid = {t: i for i, t in enumerate(class_texts)}
    Vclass = provider_matrix(model.provider, class_texts)
    tid_tr = np.asarray([tid[t] for t in texts_tr])
    tid_val = np.asarray([tid[t] for t in texts_val])

    rng = np.random.default_rng(config.seed)
    n = len(Xtr)
    log = []

    def render_epoch_vectors(epoch_rng):
        # optional per-epoch paraphrase mixing for the training instructions
        from .synthgen import render_instruction

        texts = [
            render_instruction(s.attributes, templates, "paraphrase-train", epoch_rng)
            for s in train_items
        ]
        return provider_matrix(model.provider, texts)

    def run_phase(phase, epochs, optimizer, with_decoder):
        best_val = np.inf
        best = None
        stale = 0
        for epoch in range(epochs):
            order = rng.permutation(n)
            Vep = render_epoch_vectors(rng) if config.paraphrase_mix else Vclass[tid_tr]
            sums = {"contrast": 0.0, "recon": 0.0}
            batches = 0
            for start in range(0, n, config.batch_size):
                idx = order[start : start + config.batch_size]
                Xb, Vb = Xtr[idx], Vep[idx]
                if with_decoder:
                    contrast, recon, _ = _joint_step(
                        model, optimizer, Xb, Vb, gamma, config.alpha_mode,
                        config.fixed_alpha, temperature)
                    sums["recon"] += recon
                else:
                    contrast = _contrastive_step(model, optimizer, Xb, Vb, temperature)
                    recon = None
                sums["contrast"] += contrast
                batches += 1
                _check_finite(contrast + (recon or 0.0), phase=phase, epoch=epoch,
                              batch=batches - 1, contrast=contrast, recon=recon)
            mean_contrast = sums["contrast"] / batches
            mean_recon = sums["recon"] / batches if with_decoder else None
            alpha = (compute_alpha(mean_contrast, mean_recon, gamma, config.alpha_mode,
                                   config.fixed_alpha) if with_decoder else None)
            total = mean_contrast + alpha * mean_recon if with_decoder else mean_contrast
            Zx_val = encode_series_chunked(model, Xv)
            Zc_class = encode_text_chunked(model, Vclass)
            val_contrast, val_recon = _val_losses(model, Zx_val, Zc_class[tid_val], Xv,
                                                  temperature, with_decoder)
            # validation total uses the epoch's (constant) alpha: under ratio
            # tracking a val-side alpha would cancel the recon term entirely
            val_total = val_contrast + alpha * val_recon if with_decoder else val_contrast
            val_top1 = float(((Zx_val @ Zc_class.T).argmax(axis=1) == tid_val).mean())
            log.append({
                "phase": phase,
                "epoch": epoch,
                "contrast": mean_contrast,
                "recon": mean_recon,
                "alpha": alpha,
                "total": total,
                "val_contrast": val_contrast,
                "val_recon": val_recon,
                "val_total": val_total,
                "val_retrieval_top1": val_top1,
            })
            if val_total < best_val:
                best_val = val_total
                best = _snapshot(optimizer.params)
                stale = 0
            else:
                stale += 1
                if config.patience and stale >= config.patience:
                    break
        if best is not None:
            _restore(optimizer.params, best)

    if config.epochs_phase1 > 0:
        run_phase(1, config.epochs_phase1, Adam(model.encoder_parameters(), config.lr_phase1),
                  with_decoder=False)
    if config.epochs_phase2 > 0:
        run_phase(2, config.epochs_phase2, Adam(model.parameters(), config.lr_phase2),
                  with_decoder=True)

    ckpt = Checkpoint(
        format_version=CHECKPOINT_FORMAT_VERSION,
        config=model.config,
        params=model.export_params(),
        norm_stats=stats,
        provider_fingerprint=model.provider.fingerprint,
        log_digest=log_digest(log),
        seed=config.seed,
        extra={"schema": dataset.schema.to_dict()},
    )
    return ckpt, log


def build_fewshot_pairs(model, fs_config, stats=None):
    """Synthetic pairs (edit each example toward each seen instruction at each
    grid weight, labelled with that seen instruction) plus the example pairs."""
    pairs = []
    for values, instruction in fs_config.examples:
        for seen in fs_config.seen_instructions:
            for w in fs_config.weights:
                result = edit(model, EditRequest(
                    series=values, instruction=seen, weights=[w],
                    normalization="dataset-stats" if stats else "none"), stats=stats)
                pairs.append((result.series[0], seen))
    pairs.extend((np.asarray(v, dtype=np.float64), instr) for v, instr in fs_config.examples)
    return pairs


def few_shot_tune(checkpoint, fs_config, provider):
    """Adapt a trained checkpoint to an unseen condition from a few pairs.

    Step 1 edits each example toward every seen instruction at every grid
    weight, labelling the result with the seen instruction it was pushed
    toward. Step 2 minimizes the joint loss on synthetic + example pairs,
    updating all parameters.
    """
    model = model_from_checkpoint(checkpoint, provider)
    if fs_config.epochs == 0:
        return copy.deepcopy(checkpoint)
    stats = checkpoint.norm_stats

    pairs = build_fewshot_pairs(model, fs_config, stats)
    X = np.stack([p[0] for p in pairs])
    if stats is not None:
        X = stats.standardize(X)
    V = provider_matrix(provider, [p[1] for p in pairs])

    gamma = model.config.gamma if fs_config.gamma is None else fs_config.gamma
    rng = np.random.default_rng(fs_config.seed)
    optimizer = Adam(model.parameters(), fs_config.lr)
    n = len(X)
    for epoch in range(fs_config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, fs_config.batch_size):
            idx = order[start : start + fs_config.batch_size]
            contrast, recon, _ = _joint_step(
                model, optimizer, X[idx], V[idx], gamma, fs_config.alpha_mode,
                fs_config.fixed_alpha, model.config.temperature)
            _check_finite(contrast + recon, phase="few-shot", epoch=epoch, batch=start,
                          contrast=contrast, recon=recon)

    return Checkpoint(
        format_version=CHECKPOINT_FORMAT_VERSION,
        config=model.config,
        params=model.export_params(),
        norm_stats=stats,
        provider_fingerprint=provider.fingerprint,
        log_digest=checkpoint.log_digest,
        seed=fs_config.seed,
        extra=dict(checkpoint.extra),
    )
