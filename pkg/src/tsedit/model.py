"""The three networks: series encoder, instruction encoder, decoder.

The series encoder runs k parallel conv branches whose kernel widths are
fixed fractions of the series length; each branch pools to a d-dim vector
and the concatenation (D = k*d) is projected onto the unit sphere. The
instruction encoder maps a frozen provider vector through k parallel MLPs
to the same sphere, chunk j sharing indices with series branch j. The
decoder attends over the 2-token sequence [series-role, instruction-role]
and reads the series-role hidden state through a linear head.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigError, FingerprintMismatchError, InputError, ModelError
from .textembed import DEFAULT_WIDTH

DEFAULT_KERNEL_FRACTIONS = (1.0, 2.0 / 3.0, 1.0 / 2.0, 1.0 / 3.0, 1.0 / 4.0, 1.0 / 6.0, 1.0 / 8.0, 1.0 / 10.0)


@dataclass(frozen=True)
class ModelConfig:
    T: int = 200
    k: int = 8
    d: int = 96
    kernel_fractions: tuple = DEFAULT_KERNEL_FRACTIONS
    decoder_blocks: int = 8
    attention_heads: int = 8
    conv_channels: tuple = (16, 32)
    mlp_hidden: int = 512
    text_width: int = DEFAULT_WIDTH
    gamma: float = 1.0
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if len(self.kernel_fractions) != self.k:
            raise ConfigError(
                f"need {self.k} kernel fractions, got {len(self.kernel_fractions)}"
            )
        for f in self.kernel_fractions:
            if not 0.0 < f <= 1.0:
                raise ConfigError(f"kernel fraction {f} outside (0, 1]")
        if self.D % self.attention_heads != 0:
            raise ConfigError(
                f"attention heads {self.attention_heads} must divide D={self.D}"
            )
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")

    @property
    def D(self):
        return self.k * self.d

    def kernel_width(self, j):
        # round-half-up keeps widths deterministic across platforms
        return max(1, int(math.floor(self.kernel_fractions[j] * self.T + 0.5)))

    def to_dict(self):
        return {
            "T": self.T,
            "k": self.k,
            "d": self.d,
            "kernel_fractions": list(self.kernel_fractions),
            "decoder_blocks": self.decoder_blocks,
            "attention_heads": self.attention_heads,
            "conv_channels": list(self.conv_channels),
            "mlp_hidden": self.mlp_hidden,
            "text_width": self.text_width,
            "gamma": self.gamma,
            "temperature": self.temperature,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["kernel_fractions"] = tuple(d["kernel_fractions"])
        d["conv_channels"] = tuple(d["conv_channels"])
        return cls(**d)


@dataclass
class Embedding:
    values: np.ndarray
    modality: str  # "series" | "instruction" | "interpolated"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)


def unit_rows(v, ctx=None):
    """Project each row onto the unit sphere; ctx enables backward."""
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    z = v / norms
    if ctx is not None:
        ctx["z"] = z
        ctx["norms"] = norms
    return z


def unit_rows_backward(gz, ctx):
    z, norms = ctx["z"], ctx["norms"]
    return (gz - z * (gz * z).sum(axis=-1, keepdims=True)) / norms


class SeriesEncoder:
    """k parallel two-layer conv branches -> global average pool -> d dims each."""

    def __init__(self, cfg, rng, name="enc_series"):
        self.cfg = cfg
        self.name = name
        c1, c2 = cfg.conv_channels
        self.branches = []
        for j in range(cfg.k):
            w = cfg.kernel_width(j)
            self.branches.append(
                {
                    "conv1": nn.Conv1d(1, c1, w, rng, f"{name}.branch{j}.conv1"),
                    "conv2": nn.Conv1d(c1, c2, w, rng, f"{name}.branch{j}.conv2"),
                    "proj": nn.Dense(c2, cfg.d, rng, f"{name}.branch{j}.proj"),
                }
            )

    def params(self):
        out = []
        for br in self.branches:
            for key in ("conv1", "conv2", "proj"):
                out.extend(br[key].params())
        return out

    def forward(self, X, ctx=None):
        """X: (B, T) -> unnormalized concat features (B, D)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.cfg.T:
            raise InputError(f"{self.name}: expected (B, {self.cfg.T}) series batch, got {X.shape}")
        xb = X[:, None, :]
        parts = []
        subs = [] if ctx is not None else None
        for br in self.branches:
            sub = {"c1": {}, "c2": {}, "proj": {}} if ctx is not None else None
            h1 = br["conv1"].forward(xb, sub and sub["c1"])
            r1 = nn.relu(h1)
            h2 = br["conv2"].forward(r1, sub and sub["c2"])
            r2 = nn.relu(h2)
            pooled = r2.mean(axis=2)
            parts.append(br["proj"].forward(pooled, sub and sub["proj"]))
            if ctx is not None:
                sub["h1"] = h1
                sub["h2"] = h2
                subs.append(sub)
        if ctx is not None:
            ctx["subs"] = subs
        return np.concatenate(parts, axis=1)

    def backward(self, gV, ctx):
        subs = ctx["subs"]
        d = self.cfg.d
        T = self.cfg.T
        gX = None
        for j, (br, sub) in enumerate(zip(self.branches, subs)):
            gpooled = br["proj"].backward(gV[:, j * d : (j + 1) * d], sub["proj"])
            gr2 = np.repeat(gpooled[:, :, None] / T, T, axis=2)
            gh2 = gr2 * (sub["h2"] > 0)
            gr1 = br["conv2"].backward(gh2, sub["c2"])
            gh1 = gr1 * (sub["h1"] > 0)
            gxb = br["conv1"].backward(gh1, sub["c1"])
            gX = gxb[:, 0, :] if gX is None else gX + gxb[:, 0, :]
        return gX


class InstructionEncoder:
    """k parallel MLPs over the frozen provider vector, one d-dim chunk each."""

    def __init__(self, cfg, rng, name="enc_text"):
        self.cfg = cfg
        self.name = name
        h = cfg.mlp_hidden
        self.mlps = []
        for j in range(cfg.k):
            self.mlps.append(
                {
                    "fc1": nn.Dense(cfg.text_width, h, rng, f"{name}.mlp{j}.fc1"),
                    "fc2": nn.Dense(h, h, rng, f"{name}.mlp{j}.fc2"),
                    "fc3": nn.Dense(h, cfg.d, rng, f"{name}.mlp{j}.fc3"),
                }
            )

    def params(self):
        out = []
        for mlp in self.mlps:
            for key in ("fc1", "fc2", "fc3"):
                out.extend(mlp[key].params())
        return out

    def forward(self, V, ctx=None):
        V = np.asarray(V, dtype=np.float64)
        if V.ndim != 2 or V.shape[1] != self.cfg.text_width:
            raise InputError(
                f"{self.name}: expected (B, {self.cfg.text_width}) provider vectors, got {V.shape}"
            )
        parts = []
        subs = [] if ctx is not None else None
        for mlp in self.mlps:
            sub = {"fc1": {}, "fc2": {}, "fc3": {}} if ctx is not None else None
            a1 = mlp["fc1"].forward(V, sub and sub["fc1"])
            h1 = nn.gelu(a1)
            a2 = mlp["fc2"].forward(h1, sub and sub["fc2"])
            h2 = nn.gelu(a2)
            parts.append(mlp["fc3"].forward(h2, sub and sub["fc3"]))
            if ctx is not None:
                sub["a1"] = a1
                sub["a2"] = a2
                subs.append(sub)
        if ctx is not None:
            ctx["subs"] = subs
        return np.concatenate(parts, axis=1)

    def backward(self, gV, ctx):
        subs = ctx["subs"]
        d = self.cfg.d
        gIn = None
        for j, (mlp, sub) in enumerate(zip(self.mlps, subs)):
            gh2 = mlp["fc3"].backward(gV[:, j * d : (j + 1) * d], sub["fc3"])
            ga2 = gh2 * nn.gelu_grad(sub["a2"])
            gh1 = mlp["fc2"].backward(ga2, sub["fc2"])
            ga1 = gh1 * nn.gelu_grad(sub["a1"])
            g = mlp["fc1"].backward(ga1, sub["fc1"])
            gIn = g if gIn is None else gIn + g
        return gIn


class Decoder:
    """Attention stack over the 2-token [series-role, instruction-role] sequence."""

    def __init__(self, cfg, rng, name="decoder"):
        self.cfg = cfg
        self.name = name
        D = cfg.D
        self.pos = nn.PositionalEncoding(2, D, f"{name}.pos")
        self.blocks = [
            nn.AttentionBlock(D, cfg.attention_heads, 4 * D, rng, f"{name}.block{i}")
            for i in range(cfg.decoder_blocks)
        ]
        self.final_ln = nn.LayerNorm(D, f"{name}.final_ln")
        self.head = nn.Dense(D, cfg.T, rng, f"{name}.head")

    def params(self):
        out = []
        for block in self.blocks:
            out.extend(block.params())
        out.extend(self.final_ln.params())
        out.extend(self.head.params())
        return out

    def forward(self, Za, Zb, ctx=None):
        Za = np.asarray(Za, dtype=np.float64)
        Zb = np.asarray(Zb, dtype=np.float64)
        D = self.cfg.D
        if Za.shape != Zb.shape or Za.ndim != 2 or Za.shape[1] != D:
            raise InputError(
                f"{self.name}: expected two (B, {D}) embeddings, got {Za.shape} and {Zb.shape}"
            )
        tokens = np.stack([Za, Zb], axis=1)
        sub = {"pos": {}, "blocks": [{} for _ in self.blocks], "ln": {}, "head": {}} \
            if ctx is not None else None
        h = self.pos.forward(tokens, sub and sub["pos"])
        for i, block in enumerate(self.blocks):
            h = block.forward(h, sub and sub["blocks"][i])
        hn = self.final_ln.forward(h, sub and sub["ln"])
        y = self.head.forward(hn[:, 0, :], sub and sub["head"])
        if ctx is not None:
            ctx["sub"] = sub
        return y

    def backward(self, gY, ctx):
        sub = ctx["sub"]
        gh0 = self.head.backward(gY, sub["head"])
        ghn = np.zeros((gh0.shape[0], 2, self.cfg.D))
        ghn[:, 0, :] = gh0
        gh = self.final_ln.backward(ghn, sub["ln"])
        for i in range(len(self.blocks) - 1, -1, -1):
            gh = self.blocks[i].backward(gh, sub["blocks"][i])
        gtokens = self.pos.backward(gh, sub["pos"])
        return gtokens[:, 0, :], gtokens[:, 1, :]


class Model:
    """Bundles the three networks, their config, and a text provider."""

    def __init__(self, config, provider):
        if provider is not None and provider.width != config.text_width:
            raise ConfigError(
                f"provider width {provider.width} != config text_width {config.text_width}"
            )
        self.config = config
        self.provider = provider
        rng = np.random.default_rng(config.seed)
        self.enc_series = SeriesEncoder(config, rng)
        self.enc_text = InstructionEncoder(config, rng)
        self.decoder = Decoder(config, rng)

    # -- parameters ---------------------------------------------------------

    def parameters(self):
        return self.enc_series.params() + self.enc_text.params() + self.decoder.params()

    def encoder_parameters(self):
        return self.enc_series.params() + self.enc_text.params()

    def named_parameters(self):
        out = {}
        for p in self.parameters():
            if p.name in out:
                raise ModelError(f"duplicate parameter name {p.name}")
            out[p.name] = p
        return out

    def load_params(self, values_by_name):
        """All-or-nothing: validates every tensor before mutating anything."""
        named = self.named_parameters()
        if set(values_by_name) != set(named):
            missing = set(named) - set(values_by_name)
            extra = set(values_by_name) - set(named)
            raise ModelError(f"parameter set mismatch: missing={sorted(missing)}, extra={sorted(extra)}")
        for name, values in values_by_name.items():
            if np.asarray(values).shape != named[name].values.shape:
                raise ModelError(
                    f"shape mismatch for {name}: checkpoint {np.asarray(values).shape}, "
                    f"model {named[name].values.shape}"
                )
        for name, values in values_by_name.items():
            named[name].values[...] = np.asarray(values, dtype=np.float64)

    def export_params(self):
        return {p.name: p.values.copy() for p in self.parameters()}

    # -- batched paths (training) -------------------------------------------

    def encode_series_batch(self, X, ctx=None):
        sub = {"enc": {}, "norm": {}} if ctx is not None else None
        v = self.enc_series.forward(X, sub and sub["enc"])
        z = unit_rows(v, sub and sub["norm"])
        if ctx is not None:
            ctx["sub"] = sub
        return z

    def encode_series_backward(self, gZ, ctx):
        sub = ctx["sub"]
        return self.enc_series.backward(unit_rows_backward(gZ, sub["norm"]), sub["enc"])

    def encode_text_batch(self, V, ctx=None):
        sub = {"enc": {}, "norm": {}} if ctx is not None else None
        v = self.enc_text.forward(V, sub and sub["enc"])
        z = unit_rows(v, sub and sub["norm"])
        if ctx is not None:
            ctx["sub"] = sub
        return z

    def encode_text_backward(self, gZ, ctx):
        sub = ctx["sub"]
        return self.enc_text.backward(unit_rows_backward(gZ, sub["norm"]), sub["enc"])

    def decode_batch(self, Za, Zb, ctx=None):
        return self.decoder.forward(Za, Zb, ctx)

    def decode_backward(self, gX, ctx):
        return self.decoder.backward(gX, ctx)

    # -- single-item public API ---------------------------------------------

    def encode_series(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 1 or values.shape[0] != self.config.T:
            raise InputError(f"expected a length-{self.config.T} series, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InputError("series contains non-finite values")
        z = self.encode_series_batch(values[None, :])[0]
        return Embedding(values=z, modality="series")

    def embed_instruction_text(self, text):
        if not isinstance(text, str) or not text:
            raise InputError("instruction must be a non-empty string")
        if self.provider is None:
            raise ModelError("model has no text provider attached")
        return self.provider.embed_text(text).values

    def encode_instruction(self, text):
        vec = self.embed_instruction_text(text)
        z = self.encode_text_batch(vec[None, :])[0]
        return Embedding(values=z, modality="instruction")

    def decode(self, za, zb):
        za = za.values if isinstance(za, Embedding) else np.asarray(za, dtype=np.float64)
        zb = zb.values if isinstance(zb, Embedding) else np.asarray(zb, dtype=np.float64)
        if za.shape != (self.config.D,) or zb.shape != (self.config.D,):
            raise InputError(
                f"decode expects two length-{self.config.D} embeddings, got {za.shape}, {zb.shape}"
            )
        return self.decode_batch(za[None, :], zb[None, :])[0]


def model_from_checkpoint(ckpt, provider):
    """Build a fresh model from a checkpoint; rejects provider mismatches."""
    if provider is not None and ckpt.provider_fingerprint and \
            provider.fingerprint != ckpt.provider_fingerprint:
        raise FingerprintMismatchError(
            f"checkpoint was trained under provider {ckpt.provider_fingerprint!r}, "
            f"got {provider.fingerprint!r}"
        )
    config = ckpt.config if isinstance(ckpt.config, ModelConfig) else ModelConfig.from_dict(ckpt.config)
    model = Model(config, provider)
    model.load_params(ckpt.params)
    return model
