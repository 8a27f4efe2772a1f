"""Deep LSTM encoder-decoder mapping sandhied piece sequences to segmented ones.

The encoder reads the source pieces in reverse order. The decoder starts from
the final encoder state of each layer and, when attention is enabled, combines
its top hidden state with a dot-product context over the top encoder states:

    attended = tanh(W_att [context; h_top] + b_att)
    logits   = W_out attended + b_out

Without attention the output layer reads ``h_top`` directly.

Parameter names (the checkpoint schema)::

    encoder.embedding              [V_enc, embed]
    encoder.layer{k}.W/.U/.b       LSTM layer k (gate order i, f, g, o)
    decoder.embedding              [V_dec, embed]
    decoder.layer{k}.W/.U/.b
    attention.W, attention.b       [hidden, 2*hidden], [hidden]   (attention only)
    output.W, output.b             [V_dec, hidden], [V_dec]

Token ids inside the model are side-local: ``encoder_ids[k]`` / ``decoder_ids[k]``
give the global vocabulary id of local id ``k``. Specials keep ids 0..3.
"""
from __future__ import annotations

import dataclasses
import io
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import nn
from .corpus import ParallelCorpus
from .subword import BOS, EOS, PAD, SPECIALS, UNK, SubwordVocab, decode_pieces, encode_pieces, realized_ids

log = logging.getLogger(__name__)

MAGIC = b"SSEQ2"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    num_layers: int = 3
    embed_dim: int = 128
    hidden_dim: int = 128
    attention: bool = True
    dropout_rate: float = 0.2
    max_seq_len: int = 35
    batch_size: int = 128
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 80
    clip_norm: float = 0.0
    encoder_vocab_size: int = 0
    decoder_vocab_size: int = 0
    seed: int = 0

    def validate(self) -> "ModelConfig":
        for name in ("num_layers", "embed_dim", "hidden_dim", "batch_size", "epochs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.max_seq_len < 2:
            raise ValueError(f"max_seq_len must be at least 2, got {self.max_seq_len}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.clip_norm < 0:
            raise ValueError("clip_norm must be >= 0 (0 disables clipping)")
        # Adam constructor checks lr, betas and eps
        nn.Adam(self.lr, self.beta1, self.beta2, self.eps)
        return self

    def to_text(self) -> str:
        """Canonical ``key=value`` lines in field order."""
        rows = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            rows.append(f"{f.name}={render_setting(v)}\n")
        return "".join(rows)

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "ModelConfig":
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name in values:
                kwargs[f.name] = parse_setting(values[f.name], f.type)
        return cls(**kwargs)


def render_setting(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_setting(raw: str, typ):
    typ = typ if isinstance(typ, str) else typ.__name__
    if typ == "bool":
        low = raw.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if typ == "int":
        return int(raw)
    if typ == "float":
        return float(raw)
    return raw


# -- parameters --------------------------------------------------------------

def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    E, H = config.embed_dim, config.hidden_dim
    shapes: dict[str, tuple[int, ...]] = {}
    for side, V in (("encoder", config.encoder_vocab_size), ("decoder", config.decoder_vocab_size)):
        shapes[f"{side}.embedding"] = (V, E)
        for k in range(config.num_layers):
            d = E if k == 0 else H
            shapes[f"{side}.layer{k}.W"] = (4 * H, d)
            shapes[f"{side}.layer{k}.U"] = (4 * H, H)
            shapes[f"{side}.layer{k}.b"] = (4 * H,)
    if config.attention:
        shapes["attention.W"] = (H, 2 * H)
        shapes["attention.b"] = (H,)
    shapes["output.W"] = (config.decoder_vocab_size, H)
    shapes["output.b"] = (config.decoder_vocab_size,)
    return shapes


def init_params(config: ModelConfig, rng: np.random.Generator, scale: float = nn.INIT_SCALE) -> dict[str, np.ndarray]:
    """Uniform(-scale, scale) for every tensor, drawn in schema order."""
    if min(config.encoder_vocab_size, config.decoder_vocab_size) < len(SPECIALS):
        raise ValueError("vocabulary sizes must include the four specials")
    return {name: nn.init_uniform(rng, shape, scale) for name, shape in parameter_shapes(config).items()}


# -- examples and batches ------------------------------------------------------

@dataclass
class TrainingExample:
    """Source ids (reversed) and target ids (bos ... eos), both padded to max_seq_len."""

    src_ids: np.ndarray
    tgt_ids: np.ndarray

    @property
    def src_len(self) -> int:
        return int(np.count_nonzero(self.src_ids != PAD))

    @property
    def tgt_len(self) -> int:
        return int(np.count_nonzero(self.tgt_ids != PAD))


def source_pieces(text: str, vocab: SubwordVocab, max_seq_len: int) -> list[int]:
    """Encode, keep the first ``max_seq_len`` pieces, then reverse."""
    ids = encode_pieces(text, vocab)[:max_seq_len]
    return ids[::-1]


def target_pieces(text: str, vocab: SubwordVocab, max_seq_len: int) -> list[int]:
    """bos + pieces + eos, truncated to ``max_seq_len`` with eos kept last."""
    body = encode_pieces(text, vocab)[: max_seq_len - 2]
    return [BOS] + body + [EOS]


def _pad(ids: Sequence[int], length: int) -> np.ndarray:
    out = np.full(length, PAD, dtype=np.int64)
    out[: len(ids)] = ids
    return out


def prepare_example(src_text: str, tgt_text: str, vocab: SubwordVocab, max_seq_len: int = 35) -> TrainingExample:
    return TrainingExample(
        _pad(source_pieces(src_text, vocab, max_seq_len), max_seq_len),
        _pad(target_pieces(tgt_text, vocab, max_seq_len), max_seq_len),
    )


def _localize(global_ids: np.ndarray, table: np.ndarray) -> np.ndarray:
    """Map global piece ids into a side-local id space; absent pieces become unk."""
    lookup = np.full(int(max(table.max(), global_ids.max(initial=0))) + 1, UNK, dtype=np.int64)
    lookup[table] = np.arange(len(table))
    return lookup[global_ids]


@dataclass
class Batch:
    src: np.ndarray  # [B, Ts] local encoder ids, reversed, pad-right
    tgt: np.ndarray  # [B, Tt] local decoder ids, bos ... eos, pad-right

    @property
    def src_mask(self) -> np.ndarray:
        return self.src != PAD

    @property
    def n_tokens(self) -> int:
        return int(np.count_nonzero(self.tgt[:, 1:] != PAD))


def make_batch(examples: Sequence[TrainingExample], encoder_ids: np.ndarray, decoder_ids: np.ndarray) -> Batch:
    """Stack examples, trimming trailing all-pad columns (masked anyway)."""
    src = np.stack([e.src_ids for e in examples])
    tgt = np.stack([e.tgt_ids for e in examples])
    ts = max(1, int((src != PAD).sum(axis=1).max()))
    tt = max(2, int((tgt != PAD).sum(axis=1).max()))
    return Batch(_localize(src[:, :ts], encoder_ids), _localize(tgt[:, :tt], decoder_ids))


# -- model -------------------------------------------------------------------

class Seq2SeqModel:
    """Parameters plus the forward computations of the encoder-decoder."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray]):
        self.config = config
        expected = parameter_shapes(config)
        if set(params) != set(expected):
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            raise CheckpointError(f"parameter schema mismatch: missing {missing}, unexpected {extra}")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise CheckpointError(f"{name}: shape {params[name].shape}, expected {shape}")
        self.params = params
        self.vars = {name: nn.Var(arr, requires_grad=True, name=name) for name, arr in params.items()}

    def _layers(self, side: str) -> list[nn.LstmLayerParams]:
        v = self.vars
        return [
            nn.LstmLayerParams(v[f"{side}.layer{k}.W"], v[f"{side}.layer{k}.U"], v[f"{side}.layer{k}.b"])
            for k in range(self.config.num_layers)
        ]

    def encode(self, src: np.ndarray, training: bool = False, rng=None):
        """Run the encoder; returns top-layer states per step and final (h, c) per layer."""
        cfg = self.config
        B, T = src.shape
        mask = src != PAD
        layers = self._layers("encoder")
        zeros = nn.Var(np.zeros((B, cfg.hidden_dim)))
        hs = [zeros] * cfg.num_layers
        cs = [zeros] * cfg.num_layers
        top = []
        emb = nn.embedding(self.vars["encoder.embedding"], src)
        for t in range(T):
            x = _time_slice(emb, t)
            step_mask = mask[:, t]
            for k, layer in enumerate(layers):
                h, c = nn.lstm_cell(x, hs[k], cs[k], layer)
                if not step_mask.all():
                    h = nn.blend(h, hs[k], step_mask)
                    c = nn.blend(c, cs[k], step_mask)
                hs[k], cs[k] = h, c
                # dropout sits on the layer-to-layer path only, never on the recurrence
                x = nn.dropout(h, cfg.dropout_rate, training, rng)
            top.append(x)
        return top, mask, hs, cs

    def decoder_step(self, token_ids: np.ndarray, hs, cs, memory, mem_mask, training=False, rng=None):
        """One decoder step from local ids [B]; returns logits Var and new states."""
        cfg = self.config
        x = nn.embedding(self.vars["decoder.embedding"], token_ids)
        new_h, new_c = [], []
        for k, layer in enumerate(self._layers("decoder")):
            h, c = nn.lstm_cell(x, hs[k], cs[k], layer)
            new_h.append(h)
            new_c.append(c)
            x = nn.dropout(h, cfg.dropout_rate, training, rng)
        if cfg.attention:
            ctx, _ = nn.attention(x, memory, mem_mask)
            x = nn.tanh(nn.affine(nn.concat([ctx, x]), self.vars["attention.W"], self.vars["attention.b"]))
            x = nn.dropout(x, cfg.dropout_rate, training, rng)
        logits = nn.affine(x, self.vars["output.W"], self.vars["output.b"])
        return logits, new_h, new_c

    def loss(self, batch: Batch, training: bool = False, rng=None, reduction: str = "mean") -> nn.Var:
        """Teacher-forced negative log-likelihood over non-pad target tokens."""
        top, mask, hs, cs = self.encode(batch.src, training, rng)
        memory = nn.stack(top, axis=1) if self.config.attention else None
        terms = []
        for t in range(batch.tgt.shape[1] - 1):
            logits, hs, cs = self.decoder_step(batch.tgt[:, t], hs, cs, memory, mask, training, rng)
            gold = batch.tgt[:, t + 1]
            nll, _ = nn.softmax_xent(logits, gold, gold != PAD)
            terms.append(nll)
        total = nn.add_n(terms)
        if reduction == "sum":
            return total
        return nn.scale(total, 1.0 / max(batch.n_tokens, 1))

    def greedy(self, src: np.ndarray, max_steps: int) -> list[list[int]]:
        """Greedy decoding for a batch of local source ids; returns local target ids."""
        B = src.shape[0]
        with nn.no_grad():
            top, mask, hs, cs = self.encode(src)
            memory = nn.stack(top, axis=1) if self.config.attention else None
            tokens = np.full(B, BOS, dtype=np.int64)
            out: list[list[int]] = [[] for _ in range(B)]
            done = np.zeros(B, dtype=bool)
            for _ in range(max_steps):
                logits, hs, cs = self.decoder_step(tokens, hs, cs, memory, mask)
                tokens = np.argmax(logits.data, axis=1)
                for b in np.flatnonzero(~done):
                    if tokens[b] == EOS:
                        done[b] = True
                    else:
                        out[b].append(int(tokens[b]))
                if done.all():
                    break
        return out


def _time_slice(x: nn.Var, t: int) -> nn.Var:
    shape = x.data.shape

    def bw(g):
        full = np.zeros(shape)
        full[:, t] = g
        return (full,)

    return nn._node(x.data[:, t], (x,), bw)


# -- checkpoint ---------------------------------------------------------------

@dataclass
class ModelCheckpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    encoder_ids: np.ndarray
    decoder_ids: np.ndarray
    vocab_size: int
    epoch: int = 0
    adam: nn.Adam | None = None
    format_version: int = FORMAT_VERSION

    def model(self) -> Seq2SeqModel:
        return Seq2SeqModel(self.config, self.params)

    def check_vocab(self, vocab: SubwordVocab) -> None:
        if self.vocab_size != len(vocab):
            raise CheckpointError(
                f"checkpoint was trained with a vocabulary of {self.vocab_size} pieces, got {len(vocab)}"
            )
        if len(self.encoder_ids) != self.config.encoder_vocab_size or len(self.decoder_ids) != self.config.decoder_vocab_size:
            raise CheckpointError("side id tables disagree with configured vocabulary sizes")


def new_checkpoint(vocab: SubwordVocab, corpus: ParallelCorpus, config: ModelConfig) -> ModelCheckpoint:
    """Freshly initialised model whose side vocabularies come from ``corpus``."""
    enc = np.asarray(realized_ids(corpus.sources, vocab), dtype=np.int64)
    dec = np.asarray(realized_ids(corpus.targets, vocab), dtype=np.int64)
    config = dataclasses.replace(config, encoder_vocab_size=len(enc), decoder_vocab_size=len(dec)).validate()
    params = init_params(config, np.random.default_rng(config.seed))
    return ModelCheckpoint(config, params, enc, dec, len(vocab))


def _write_tensor(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    code = b"i" if arr.dtype.kind in "iu" else b"f"
    data = np.ascontiguousarray(arr, dtype="<i8" if code == b"i" else "<f8")
    raw = name.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)
    buf.write(code)
    buf.write(struct.pack("<B", data.ndim))
    buf.write(struct.pack(f"<{data.ndim}I", *data.shape))
    buf.write(data.tobytes())


def checkpoint_bytes(ckpt: ModelCheckpoint) -> bytes:
    tensors: list[tuple[str, np.ndarray]] = [(k, ckpt.params[k]) for k in parameter_shapes(ckpt.config)]
    tensors.append(("vocab.encoder_ids", ckpt.encoder_ids))
    tensors.append(("vocab.decoder_ids", ckpt.decoder_ids))
    meta = {"epoch": str(ckpt.epoch), "vocab_size": str(ckpt.vocab_size)}
    if ckpt.adam is not None:
        for k in parameter_shapes(ckpt.config):
            if k in ckpt.adam.m:
                tensors.append((f"adam.m.{k}", ckpt.adam.m[k]))
                tensors.append((f"adam.v.{k}", ckpt.adam.v[k]))
        meta["adam_t"] = str(ckpt.adam.t)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", ckpt.format_version))
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        _write_tensor(buf, name, arr)
    text = ckpt.config.to_text() + "".join(f"{k}={v}\n" for k, v in meta.items())
    raw = text.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    return buf.getvalue()


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(ckpt))


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data, self.pos, self.source = data, 0, source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.source}: truncated checkpoint at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def checkpoint_from_bytes(data: bytes, source: str = "<bytes>") -> ModelCheckpoint:
    r = _Reader(data, source)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{source}: format version {version}, this build reads {FORMAT_VERSION}")
    (count,) = r.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        code = r.take(1)
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        n = int(np.prod(shape, dtype=np.int64))
        if code == b"f":
            arr = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
        elif code == b"i":
            arr = np.frombuffer(r.take(8 * n), dtype="<i8").astype(np.int64).reshape(shape)
        else:
            raise CheckpointError(f"{source}: unknown dtype code {code!r} for {name}")
        tensors[name] = arr
    (tlen,) = r.unpack("<I")
    text = r.take(tlen).decode("utf-8")
    if r.pos != len(data):
        raise CheckpointError(f"{source}: {len(data) - r.pos} trailing bytes")
    values = dict(line.split("=", 1) for line in text.splitlines() if line)
    config = ModelConfig.from_mapping(values)
    params = {k: tensors.pop(k) for k in list(tensors) if not k.startswith(("vocab.", "adam."))}
    for k, arr in params.items():
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"{source}: non-finite values in {k}")
    try:
        enc, dec = tensors.pop("vocab.encoder_ids"), tensors.pop("vocab.decoder_ids")
    except KeyError:
        raise CheckpointError(f"{source}: missing vocabulary id tables") from None
    adam = None
    if "adam_t" in values:
        adam = nn.Adam(config.lr, config.beta1, config.beta2, config.eps)
        adam.t = int(values["adam_t"])
        for k in params:
            if f"adam.m.{k}" in tensors:
                adam.m[k] = tensors[f"adam.m.{k}"].copy()
                adam.v[k] = tensors[f"adam.v.{k}"].copy()
    ckpt = ModelCheckpoint(
        config, params, enc, dec, int(values.get("vocab_size", -1)), int(values.get("epoch", 0)), adam, version
    )
    Seq2SeqModel(config, params)  # schema check
    return ckpt


def load_checkpoint(path, vocab: SubwordVocab | None = None) -> ModelCheckpoint:
    ckpt = checkpoint_from_bytes(Path(path).read_bytes(), str(path))
    if vocab is not None:
        ckpt.check_vocab(vocab)
    return ckpt


# -- training and inference ---------------------------------------------------

@dataclass
class TrainResult:
    checkpoint: ModelCheckpoint
    loss_curve: list[float] = field(default_factory=list)


def examples_for(corpus: ParallelCorpus, vocab: SubwordVocab, max_seq_len: int) -> list[TrainingExample]:
    return [prepare_example(s, t, vocab, max_seq_len) for s, t in corpus]


def train(
    corpus: ParallelCorpus,
    vocab: SubwordVocab,
    config: ModelConfig,
    *,
    checkpoint: ModelCheckpoint | None = None,
    on_epoch: Callable[[int, float, ModelCheckpoint], None] | None = None,
) -> TrainResult:
    """Teacher-forced training with Adam; one mean loss per epoch.

    Each epoch shuffles the examples with an rng seeded from ``config.seed``
    and the epoch number, so a resumed run follows the same schedule.
    """
    if len(corpus) == 0:
        raise ValueError("cannot train on an empty corpus")
    config.validate()
    if checkpoint is None:
        checkpoint = new_checkpoint(vocab, corpus, config)
    else:
        checkpoint.check_vocab(vocab)
    cfg = checkpoint.config
    model = checkpoint.model()
    adam = checkpoint.adam or nn.Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    checkpoint.adam = adam
    examples = examples_for(corpus, vocab, cfg.max_seq_len)
    curve = []
    for epoch in range(checkpoint.epoch + 1, checkpoint.epoch + cfg.epochs + 1):
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(len(examples))
        total_nll, total_tokens = 0.0, 0
        for bi, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = make_batch([examples[i] for i in order[start:start + cfg.batch_size]],
                               checkpoint.encoder_ids, checkpoint.decoder_ids)
            loss = model.loss(batch, training=True, rng=rng)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            grads = nn.gradients(loss, model.vars)
            if cfg.clip_norm > 0:
                nn.clip_grad_norm(grads, cfg.clip_norm)
            try:
                adam.step(model.params, grads)
            except nn.NonFiniteGradientError as exc:
                raise TrainingError(f"epoch {epoch}, batch {bi}: {exc}") from None
            total_nll += value * batch.n_tokens
            total_tokens += batch.n_tokens
        mean = total_nll / max(total_tokens, 1)
        curve.append(mean)
        checkpoint.epoch = epoch
        log.info("epoch %d mean loss %.6f", epoch, mean)
        if on_epoch is not None:
            on_epoch(epoch, mean, checkpoint)
    return TrainResult(checkpoint, curve)


def greedy_decode_batch(
    texts: Sequence[str], checkpoint: ModelCheckpoint, vocab: SubwordVocab, batch_size: int = 256
) -> list[list[int]]:
    """Greedy decoding for many sources; returns global piece ids (no bos/eos)."""
    cfg = checkpoint.config
    model = checkpoint.model()
    out: list[list[int]] = []
    for start in range(0, len(texts), batch_size):
        chunk = texts[start:start + batch_size]
        src = np.stack([_pad(source_pieces(t, vocab, cfg.max_seq_len), cfg.max_seq_len) for t in chunk])
        width = max(1, int((src != PAD).sum(axis=1).max()))
        local = _localize(src[:, :width], checkpoint.encoder_ids)
        for row in model.greedy(local, 2 * cfg.max_seq_len):
            out.append([int(checkpoint.decoder_ids[i]) for i in row])
    return out


def greedy_decode(src_text: str, checkpoint: ModelCheckpoint, vocab: SubwordVocab) -> list[int]:
    return greedy_decode_batch([src_text], checkpoint, vocab)[0]


def segment_batch(texts: Sequence[str], checkpoint: ModelCheckpoint, vocab: SubwordVocab) -> list[list[str]]:
    return [decode_pieces(ids, vocab).split() for ids in greedy_decode_batch(texts, checkpoint, vocab)]


def segment(raw_text: str, checkpoint: ModelCheckpoint, vocab: SubwordVocab) -> list[str]:
    """Predicted unsandhied word sequence for one sandhied string."""
    return segment_batch([raw_text], checkpoint, vocab)[0]
