"""Mini BERT-style encoder with three external-embedding injection modes.

The encoder is the standard post-norm stack: an embedding block (word +
position + segment lookups, layer-normed), L transformer blocks (masked
multi-head self-attention and a GELU feed-forward, each with a residual and
a layer norm), and a softmax classifier over the first ([CLS]) position.

External information enters as an injection matrix aligned row-for-row with
the piece sequence. Three fusion mechanisms are supported at a configurable
block boundary (0 = right after the embedding block):

* ``gated``    - project the injection to the hidden width with a tanh
                 layer, scale it by a learned per-dimension gate vector that
                 starts at zero, and add it residually,
* ``ungated``  - the same projection added without the gate,
* ``attention``- multi-head attention with queries from the hidden state and
                 keys/values from the raw injection rows, added residually.

The zero-initialized gate makes a fresh ``gated`` model exactly equivalent
to one with no injection at all, which is the property the whole mechanism
leans on: training can open individual gate dimensions only as far as the
external signal earns it.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CheckpointError, ConfigError, DataError
from .tokenization import WordPieceSequence

INJECTION_MODES = ("none", "gated", "ungated", "attention")

INIT_STD = 0.02
MASK_BIAS = -1e9
# largest double strictly below 1; keeps the projection inside the open
# interval (-1, 1) even when IEEE tanh saturates to exactly +-1
TANH_BOUND = float(np.nextafter(1.0, 0.0))

CHECKPOINT_VERSION = 1
MANIFEST_NAME = "manifest.txt"
BLOB_NAME = "tensors.bin"


@dataclass
class ModelConfig:
    """Model hyperparameters; defaults are the desk-scale configuration."""

    vocab_size: int
    n_layers: int = 4
    hidden_size: int = 64
    n_heads: int = 4
    ff_size: int = 256
    ext_dim: int = 16
    max_seq_len: int = 64
    num_classes: int = 2
    injection_mode: str = "none"
    injection_layer: int = 0
    layer_norm_eps: float = 1e-12
    dropout: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.vocab_size < 1:
            raise ConfigError(f"vocab_size must be positive, got {self.vocab_size}")
        if self.n_layers < 1:
            raise ConfigError(f"n_layers must be positive, got {self.n_layers}")
        if self.hidden_size % self.n_heads != 0:
            raise ConfigError(
                f"hidden_size {self.hidden_size} is not divisible by n_heads {self.n_heads}"
            )
        if self.injection_mode not in INJECTION_MODES:
            raise ConfigError(
                f"unknown injection_mode {self.injection_mode!r}; expected one of {INJECTION_MODES}"
            )
        if not 0 <= self.injection_layer < self.n_layers:
            raise ConfigError(
                f"injection_layer {self.injection_layer} outside [0, {self.n_layers})"
            )
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be at least 2, got {self.num_classes}")
        if self.max_seq_len < 3:
            raise ConfigError(f"max_seq_len must be at least 3, got {self.max_seq_len}")
        if self.layer_norm_eps <= 0:
            raise ConfigError(f"layer_norm_eps must be positive, got {self.layer_norm_eps}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every tensor the configuration implies, in order.

    Exactly the parameter set for the configured injection mode exists; a
    mode with no gate allocates no gate.
    """
    d, f, e = config.hidden_size, config.ff_size, config.ext_dim
    shapes: dict[str, tuple[int, ...]] = {
        "embeddings.word": (config.vocab_size, d),
        "embeddings.position": (config.max_seq_len, d),
        "embeddings.segment": (2, d),
        "embeddings.norm.gamma": (d,),
        "embeddings.norm.beta": (d,),
    }
    for k in range(1, config.n_layers + 1):
        p = f"block{k}."
        shapes.update(
            {
                p + "attention.wq": (d, d),
                p + "attention.bq": (d,),
                p + "attention.wk": (d, d),
                p + "attention.bk": (d,),
                p + "attention.wv": (d, d),
                p + "attention.bv": (d,),
                p + "attention.wo": (d, d),
                p + "attention.bo": (d,),
                p + "attention_norm.gamma": (d,),
                p + "attention_norm.beta": (d,),
                p + "ffn.w1": (d, f),
                p + "ffn.b1": (f,),
                p + "ffn.w2": (f, d),
                p + "ffn.b2": (d,),
                p + "ffn_norm.gamma": (d,),
                p + "ffn_norm.beta": (d,),
            }
        )
    shapes.update(injection_parameter_shapes(config.injection_mode, d, e))
    shapes.update(
        {
            "classifier.weight": (config.num_classes, d),
            "classifier.bias": (config.num_classes,),
        }
    )
    return shapes


def injection_parameter_shapes(mode: str, hidden: int, ext: int) -> dict[str, tuple[int, ...]]:
    if mode == "none":
        return {}
    if mode in ("gated", "ungated"):
        shapes = {
            "injection.projection.weight": (hidden, ext),
            "injection.projection.bias": (hidden,),
        }
        if mode == "gated":
            shapes["injection.gate"] = (hidden,)
        return shapes
    if mode == "attention":
        return {
            "injection.attention.wq": (hidden, hidden),
            "injection.attention.bq": (hidden,),
            "injection.attention.wk": (ext, hidden),
            "injection.attention.bk": (hidden,),
            "injection.attention.wv": (ext, hidden),
            "injection.attention.bv": (hidden,),
            "injection.attention.wo": (hidden, hidden),
            "injection.attention.bo": (hidden,),
        }
    raise ConfigError(f"unknown injection mode {mode!r}")


def count_injection_params(mode: str, hidden: int, ext: int) -> int:
    """Number of parameters each injection mechanism adds.

    gated:     hidden * (ext + 2)          (projection matrix, bias, gate)
    ungated:   hidden * (ext + 1)          (projection matrix, bias)
    attention: 2*hidden^2 + 2*ext*hidden + 4*hidden
    """
    if hidden < 1 or ext < 0:
        raise ConfigError(f"invalid dimensions hidden={hidden}, ext={ext}")
    if mode == "none":
        return 0
    if mode == "gated":
        return hidden * (ext + 2)
    if mode == "ungated":
        return hidden * (ext + 1)
    if mode == "attention":
        return 2 * hidden * hidden + 2 * ext * hidden + 4 * hidden
    raise ConfigError(f"unknown injection mode {mode!r}")


def _tensor_rng(seed: int, name: str) -> np.random.Generator:
    # independent stream per tensor name: shared tensors get identical values
    # across injection modes, so a zero-pinned gate reproduces mode "none"
    entropy = [seed & 0xFFFFFFFF] + list(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy))


def init_params(config: ModelConfig, seed: int) -> dict[str, Tensor]:
    """Truncated-normal matrices (std 0.02), zero biases and gate, unit norms."""
    params: dict[str, Tensor] = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(("gamma",)):
            data = np.ones(shape, dtype=np.float64)
        elif name.endswith(("beta", "bias", ".bq", ".bk", ".bv", ".bo", ".b1", ".b2")):
            data = np.zeros(shape, dtype=np.float64)
        elif name == "injection.gate":
            data = np.zeros(shape, dtype=np.float64)
        else:
            data = ad.truncated_normal(_tensor_rng(seed, name), shape, INIT_STD)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def validate_params(config: ModelConfig, params: dict[str, Tensor]) -> None:
    """Raise unless params hold exactly the tensors the config implies."""
    expected = parameter_shapes(config)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ConfigError(f"parameter set mismatch: missing={missing}, extra={extra}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ConfigError(
                f"parameter {name} has shape {params[name].shape}, expected {shape}"
            )


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------


def attention_mask_bias(attention_mask: np.ndarray) -> Tensor:
    """Additive key-side bias: 0 where real, a large negative where [PAD]."""
    return Tensor(np.where(attention_mask > 0, 0.0, MASK_BIAS))


def embed_inputs(
    config: ModelConfig,
    params: dict[str, Tensor],
    seq: WordPieceSequence,
    train_rng: np.random.Generator | None = None,
) -> Tensor:
    """Sum of word, position and segment embeddings, layer-normed per position."""
    ids = seq.piece_ids
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        raise DataError(
            f"piece id out of vocab range [0, {config.vocab_size}): {int(ids.max())}"
        )
    n = len(seq)
    if n > config.max_seq_len:
        raise ConfigError(f"sequence length {n} exceeds max_seq_len {config.max_seq_len}")
    words = ad.embedding_lookup(params["embeddings.word"], ids)
    positions = ad.embedding_lookup(params["embeddings.position"], np.arange(n))
    segments = ad.embedding_lookup(params["embeddings.segment"], seq.segment_ids)
    summed = ad.add(ad.add(words, positions), segments)
    h = ad.layer_norm(
        summed,
        params["embeddings.norm.gamma"],
        params["embeddings.norm.beta"],
        config.layer_norm_eps,
    )
    if train_rng is not None and config.dropout > 0.0:
        h = ad.dropout(h, config.dropout, train_rng)
    return h


@dataclass(frozen=True)
class AttentionWeights:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor

    @classmethod
    def from_params(cls, params: dict[str, Tensor], prefix: str) -> "AttentionWeights":
        return cls(*(params[prefix + n] for n in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")))


def multihead_attention(
    queries: Tensor,
    keys: Tensor,
    values: Tensor,
    weights: AttentionWeights,
    n_heads: int,
    key_bias: Tensor | None = None,
) -> Tensor:
    """Per-head scaled dot-product attention, heads concatenated through wo.

    ``key_bias`` is an additive per-key vector (0 or a large negative) that
    removes [PAD] keys from every softmax row.
    """
    hidden = weights.wq.shape[1]
    if hidden % n_heads != 0:
        raise ConfigError(f"hidden size {hidden} not divisible by {n_heads} heads")
    head_dim = hidden // n_heads
    q = ad.add(ad.matmul(queries, weights.wq), weights.bq)
    k = ad.add(ad.matmul(keys, weights.wk), weights.bk)
    v = ad.add(ad.matmul(values, weights.wv), weights.bv)
    scaling = 1.0 / np.sqrt(head_dim)
    heads = []
    for h in range(n_heads):
        j0, j1 = h * head_dim, (h + 1) * head_dim
        qh = ad.slice_cols(q, j0, j1)
        kh = ad.slice_cols(k, j0, j1)
        vh = ad.slice_cols(v, j0, j1)
        logits = ad.scale(ad.matmul(qh, ad.transpose(kh)), scaling)
        if key_bias is not None:
            logits = ad.add(logits, key_bias)
        attn = ad.softmax(logits, axis=-1)
        heads.append(ad.matmul(attn, vh))
    return ad.add(ad.matmul(ad.concat_cols(heads), weights.wo), weights.bo)


def feed_forward(params: dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    inner = ad.gelu(ad.add(ad.matmul(x, params[prefix + "ffn.w1"]), params[prefix + "ffn.b1"]))
    return ad.add(ad.matmul(inner, params[prefix + "ffn.w2"]), params[prefix + "ffn.b2"])


def transformer_block(
    config: ModelConfig,
    params: dict[str, Tensor],
    block_index: int,
    hidden: Tensor,
    key_bias: Tensor,
    train_rng: np.random.Generator | None = None,
) -> Tensor:
    """Post-norm block: self-attention then feed-forward, each with residual + norm."""
    prefix = f"block{block_index}."
    attn = multihead_attention(
        hidden,
        hidden,
        hidden,
        AttentionWeights.from_params(params, prefix + "attention."),
        config.n_heads,
        key_bias,
    )
    if train_rng is not None and config.dropout > 0.0:
        attn = ad.dropout(attn, config.dropout, train_rng)
    m = ad.layer_norm(
        ad.add(hidden, attn),
        params[prefix + "attention_norm.gamma"],
        params[prefix + "attention_norm.beta"],
        config.layer_norm_eps,
    )
    ff = feed_forward(params, prefix, m)
    if train_rng is not None and config.dropout > 0.0:
        ff = ad.dropout(ff, config.dropout, train_rng)
    return ad.layer_norm(
        ad.add(m, ff),
        params[prefix + "ffn_norm.gamma"],
        params[prefix + "ffn_norm.beta"],
        config.layer_norm_eps,
    )


def project_injection(injection: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """tanh(injection @ weight^T + bias), kept strictly inside (-1, 1).

    IEEE tanh saturates to exactly +-1 for large inputs, so the output is
    clamped to the nearest representable interior values.
    """
    if injection.shape[1] != weight.shape[1]:
        raise ConfigError(
            f"injection width {injection.shape[1]} does not match projection input {weight.shape[1]}"
        )
    pre = ad.add(ad.matmul(injection, ad.transpose(weight)), bias)
    return ad.clip(ad.tanh(pre), -TANH_BOUND, TANH_BOUND)


def inject_gated(hidden: Tensor, projected: Tensor, gate: Tensor) -> Tensor:
    """hidden + gate (*) projected, the gate broadcast across rows."""
    return ad.add(hidden, ad.mul(projected, gate))


def inject_ungated(hidden: Tensor, projected: Tensor) -> Tensor:
    return ad.add(hidden, projected)


def inject_attention(
    config: ModelConfig,
    params: dict[str, Tensor],
    hidden: Tensor,
    injection: Tensor,
    key_bias: Tensor,
) -> Tensor:
    """hidden + MultiHeadAtt(queries=hidden, keys=values=injection)."""
    attn = multihead_attention(
        hidden,
        injection,
        injection,
        AttentionWeights.from_params(params, "injection.attention."),
        config.n_heads,
        key_bias,
    )
    return ad.add(hidden, attn)


def apply_injection(
    config: ModelConfig,
    params: dict[str, Tensor],
    hidden: Tensor,
    injection: Tensor,
    key_bias: Tensor,
) -> Tensor:
    mode = config.injection_mode
    if mode == "none":
        return hidden
    if mode in ("gated", "ungated"):
        projected = project_injection(
            injection,
            params["injection.projection.weight"],
            params["injection.projection.bias"],
        )
        if mode == "gated":
            return inject_gated(hidden, projected, params["injection.gate"])
        return inject_ungated(hidden, projected)
    return inject_attention(config, params, hidden, injection, key_bias)


def classify(hidden: Tensor, weight: Tensor, bias: Tensor) -> tuple[Tensor, Tensor]:
    """Logits and softmax probabilities from the [CLS] row (position 0)."""
    cls_vec = ad.slice_rows(hidden, 0, 1)
    logits = ad.add(ad.matmul(cls_vec, ad.transpose(weight)), bias)
    return logits, ad.softmax(logits, axis=-1)


def forward(
    config: ModelConfig,
    params: dict[str, Tensor],
    seq: WordPieceSequence,
    injection: np.ndarray | Tensor | None = None,
    train_rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor]:
    """Full encoder pass for one packed pair; returns (logits, probabilities).

    Injection is applied after block ``injection_layer`` (0 means right
    after the embedding block) and skipped entirely in mode "none".
    """
    if config.injection_mode != "none":
        if injection is None:
            raise ConfigError(f"mode {config.injection_mode!r} requires an injection matrix")
        inj = injection if isinstance(injection, Tensor) else Tensor(injection)
        if inj.shape != (len(seq), config.ext_dim):
            raise ConfigError(
                f"injection shape {inj.shape} != ({len(seq)}, {config.ext_dim})"
            )
    else:
        inj = None
    key_bias = attention_mask_bias(seq.attention_mask)
    h = embed_inputs(config, params, seq, train_rng)
    if config.injection_mode != "none" and config.injection_layer == 0:
        h = apply_injection(config, params, h, inj, key_bias)
    for k in range(1, config.n_layers + 1):
        h = transformer_block(config, params, k, h, key_bias, train_rng)
        if config.injection_mode != "none" and config.injection_layer == k:
            h = apply_injection(config, params, h, inj, key_bias)
    return classify(h, params["classifier.weight"], params["classifier.bias"])


def forward_packed(
    config: ModelConfig,
    params: dict[str, Tensor],
    piece_ids: np.ndarray,
    segment_ids: np.ndarray,
    position_ids: np.ndarray,
    key_bias: Tensor,
    cls_rows: np.ndarray,
    injection: Tensor | None = None,
    train_rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor]:
    """Encoder pass over several pairs packed into one row-concatenated graph.

    ``key_bias`` is a full (rows x rows) additive attention bias whose
    block-diagonal zeros keep each pair attending only to its own real
    positions; everything else matches the per-pair ``forward`` exactly,
    position-wise ops being oblivious to the packing. ``cls_rows`` indexes
    the [CLS] row of each packed pair.
    """
    ids = np.asarray(piece_ids)
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        raise DataError(f"piece id out of vocab range [0, {config.vocab_size})")
    if config.injection_mode != "none" and injection is None:
        raise ConfigError(f"mode {config.injection_mode!r} requires an injection matrix")
    words = ad.embedding_lookup(params["embeddings.word"], ids)
    positions = ad.embedding_lookup(params["embeddings.position"], np.asarray(position_ids))
    segments = ad.embedding_lookup(params["embeddings.segment"], np.asarray(segment_ids))
    h = ad.layer_norm(
        ad.add(ad.add(words, positions), segments),
        params["embeddings.norm.gamma"],
        params["embeddings.norm.beta"],
        config.layer_norm_eps,
    )
    if train_rng is not None and config.dropout > 0.0:
        h = ad.dropout(h, config.dropout, train_rng)
    if config.injection_mode != "none" and config.injection_layer == 0:
        h = apply_injection(config, params, h, injection, key_bias)
    for k in range(1, config.n_layers + 1):
        h = transformer_block(config, params, k, h, key_bias, train_rng)
        if config.injection_mode != "none" and config.injection_layer == k:
            h = apply_injection(config, params, h, injection, key_bias)
    cls_vecs = ad.embedding_lookup(h, np.asarray(cls_rows))
    logits = ad.add(ad.matmul(cls_vecs, ad.transpose(params["classifier.weight"])), params["classifier.bias"])
    return logits, ad.softmax(logits, axis=-1)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_CONFIG_FIELDS = {f.name: f.type for f in dataclasses.fields(ModelConfig)}


def save_checkpoint(
    directory: str | Path,
    config: ModelConfig,
    params: dict[str, Tensor],
    created: str = "",
) -> Path:
    """Write a manifest plus a little-endian float64 blob in manifest order."""
    validate_params(config, params)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    chunks: list[bytes] = []
    lines = [f"format=injectbert-checkpoint", f"version={CHECKPOINT_VERSION}"]
    if created:
        lines.append(f"created={created}")
    for f in dataclasses.fields(ModelConfig):
        lines.append(f"config.{f.name}={getattr(config, f.name)}")
    offset = 0
    for i, (name, tensor) in enumerate(params.items()):
        raw = np.ascontiguousarray(tensor.data, dtype="<f8").tobytes()
        lines.append(f"tensor.{i}.name={name}")
        lines.append(f"tensor.{i}.shape={','.join(str(s) for s in tensor.shape)}")
        lines.append(f"tensor.{i}.offset={offset}")
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    lines.append(f"blob.bytes={len(blob)}")
    lines.append(f"blob.sha256={hashlib.sha256(blob).hexdigest()}")
    (directory / BLOB_NAME).write_bytes(blob)
    (directory / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return directory


def load_checkpoint(directory: str | Path) -> tuple[ModelConfig, dict[str, Tensor]]:
    """Read and verify a checkpoint; raises CheckpointError on any mismatch."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    blob_path = directory / BLOB_NAME
    if not manifest_path.exists() or not blob_path.exists():
        raise CheckpointError(f"checkpoint incomplete under {directory}")
    entries: dict[str, str] = {}
    for line in manifest_path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        entries[key] = value
    if entries.get("version") != str(CHECKPOINT_VERSION):
        raise CheckpointError(f"unsupported checkpoint version {entries.get('version')!r}")
    blob = blob_path.read_bytes()
    if entries.get("blob.bytes") != str(len(blob)):
        raise CheckpointError(
            f"blob is {len(blob)} bytes, manifest says {entries.get('blob.bytes')}"
        )
    digest = hashlib.sha256(blob).hexdigest()
    if entries.get("blob.sha256") != digest:
        raise CheckpointError("blob checksum does not match manifest")

    kwargs = {}
    for name in _CONFIG_FIELDS:
        raw = entries.get(f"config.{name}")
        if raw is None:
            raise CheckpointError(f"manifest missing config.{name}")
        kwargs[name] = _parse_config_value(name, raw)
    try:
        config = ModelConfig(**kwargs)
    except ConfigError as exc:
        raise CheckpointError(f"invalid config in manifest: {exc}") from exc

    params: dict[str, Tensor] = {}
    i = 0
    while f"tensor.{i}.name" in entries:
        name = entries[f"tensor.{i}.name"]
        shape = tuple(int(s) for s in entries[f"tensor.{i}.shape"].split(",") if s)
        offset = int(entries[f"tensor.{i}.offset"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        end = offset + 8 * count
        if end > len(blob):
            raise CheckpointError(f"tensor {name} extends past the blob")
        data = np.frombuffer(blob[offset:end], dtype="<f8").reshape(shape).copy()
        params[name] = Tensor(data, requires_grad=True, name=name)
        i += 1
    try:
        validate_params(config, params)
    except ConfigError as exc:
        raise CheckpointError(str(exc)) from exc
    return config, params


def _parse_config_value(name: str, raw: str):
    defaults = ModelConfig(vocab_size=1, max_seq_len=3)
    current = getattr(defaults, name)
    if isinstance(current, bool):
        return raw == "True"
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw
