"""Sequence-to-sequence model: bidirectional GRU encoder, two-layer GRU
decoder with additive attention, and a fixed binary checkpoint format.

Gate equations, in matrix form over a batch of row vectors:

    z = sigmoid(x W_z + h_prev U_z + b_z)
    r = sigmoid(x W_r + h_prev U_r + b_r)
    hcand = tanh(x W_h + (r * h_prev) U_h + b_h)
    h = z * h_prev + (1 - z) * hcand

With all parameters zero this reduces to h = 0.5 * h_prev.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor

CHECKPOINT_MAGIC = b"D2S1"
CHECKPOINT_VERSION = 1

GATES = ("z", "r", "h")


class CheckpointError(ValueError):
    """Base class for unreadable checkpoint files."""


class CheckpointMagicError(CheckpointError):
    """File does not start with the checkpoint magic bytes."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an unsupported format version."""


class CheckpointTruncatedError(CheckpointError):
    """File ends before the declared payload does."""


@dataclass
class Hyperparams:
    """Architecture knobs stored alongside the weights.

    The layer counts are part of the written record but fixed by the
    architecture: one bidirectional encoder layer, two decoder layers.
    """

    vocab_size: int
    embed_dim: int = 256
    hidden_dim: int = 256
    dropout: float = 0.2
    beam_width: int = 5
    max_decode_len: int = 100
    encoder_layers: int = 1
    decoder_layers: int = 2

    def validate(self):
        if self.vocab_size < 7:
            raise ValueError("vocab_size must cover the six reserved ids plus content")
        if self.embed_dim < 1 or self.hidden_dim < 1:
            raise ValueError("embed_dim and hidden_dim must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.max_decode_len < 1:
            raise ValueError("max_decode_len must be >= 1")
        if self.encoder_layers != 1 or self.decoder_layers != 2:
            raise ValueError("this architecture is fixed at 1 encoder layer and 2 decoder layers")
        return self

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown hyperparameter fields: {sorted(unknown)}")
        return cls(**obj).validate()


class GRUCell:
    """One gated recurrent unit layer; owns its nine parameters."""

    def __init__(self, prefix, input_dim, hidden_dim, rng, dtype):
        self.hidden_dim = hidden_dim
        self.W = {}
        self.U = {}
        self.b = {}
        for g in GATES:
            self.W[g] = Parameter(ad.glorot_uniform((input_dim, hidden_dim), rng, dtype), f"{prefix}.W_{g}")
            self.U[g] = Parameter(ad.glorot_uniform((hidden_dim, hidden_dim), rng, dtype), f"{prefix}.U_{g}")
            self.b[g] = Parameter(np.zeros(hidden_dim, dtype=dtype), f"{prefix}.b_{g}")

    def params(self):
        out = []
        for g in GATES:
            out += [self.W[g], self.U[g], self.b[g]]
        return out

    def step(self, x, h_prev, mask=None):
        """Advance one timestep. `mask` (B x 1, 0/1) freezes the state where 0:
        h = mask * h_new + (1 - mask) * h_prev."""
        z = ad.sigmoid(ad.add(ad.add(ad.matmul(x, self.W["z"]), ad.matmul(h_prev, self.U["z"])), self.b["z"]))
        r = ad.sigmoid(ad.add(ad.add(ad.matmul(x, self.W["r"]), ad.matmul(h_prev, self.U["r"])), self.b["r"]))
        hcand = ad.tanh(
            ad.add(ad.add(ad.matmul(x, self.W["h"]), ad.matmul(ad.mul(r, h_prev), self.U["h"])), self.b["h"])
        )
        h = ad.add(ad.mul(z, h_prev), ad.mul(ad.add(ad.scale(z, -1.0), 1.0), hcand))
        if mask is not None:
            h = ad.add(ad.mul(h, mask), ad.mul(h_prev, 1.0 - mask))
        return h


@dataclass
class Encoded:
    """Encoder output for one batch."""

    annotations: list  # per source position, Tensor (B x 2H)
    ann_proj: list  # per source position, Tensor (B x H): annotation @ U_a
    init_state: Tensor  # (B x H), shared initial state for both decoder layers
    source_mask: np.ndarray  # (B x S) 0/1


class Seq2SeqModel:
    """Encoder-decoder with attention over numpy autodiff tensors.

    The encoder reads the source both ways; each position's annotation is the
    concatenation of the two directional states. The decoder attends over
    annotations with an additive score, queried by its previous top-layer
    state, and both of its layers start from a learned projection of the
    backward encoder state at the first source position.
    """

    def __init__(self, hp, seed=0, dtype=np.float32):
        hp.validate()
        self.hp = hp
        self.dtype = np.dtype(dtype)
        V, E, H = hp.vocab_size, hp.embed_dim, hp.hidden_dim
        rng = ad.rng_stream(seed, "init")
        self.src_embed = Parameter(ad.glorot_uniform((V, E), rng, dtype), "src_embed")
        self.tgt_embed = Parameter(ad.glorot_uniform((V, E), rng, dtype), "tgt_embed")
        self.enc_fwd = GRUCell("enc_fwd", E, H, rng, dtype)
        self.enc_bwd = GRUCell("enc_bwd", E, H, rng, dtype)
        self.init_W = Parameter(ad.glorot_uniform((H, H), rng, dtype), "dec_init.W")
        self.init_b = Parameter(np.zeros(H, dtype=dtype), "dec_init.b")
        self.attn_W = Parameter(ad.glorot_uniform((H, H), rng, dtype), "attn.W_a")
        self.attn_U = Parameter(ad.glorot_uniform((2 * H, H), rng, dtype), "attn.U_a")
        self.attn_v = Parameter(ad.glorot_uniform((H, 1), rng, dtype), "attn.v_a")
        self.dec1 = GRUCell("dec1", E + 2 * H, H, rng, dtype)
        self.dec2 = GRUCell("dec2", H, H, rng, dtype)
        self.out_W = Parameter(ad.glorot_uniform((3 * H, V), rng, dtype), "out.W")
        self.out_b = Parameter(np.zeros(V, dtype=dtype), "out.b")

    def params(self):
        ps = [self.src_embed, self.tgt_embed]
        ps += self.enc_fwd.params() + self.enc_bwd.params()
        ps += [self.init_W, self.init_b, self.attn_W, self.attn_U, self.attn_v]
        ps += self.dec1.params() + self.dec2.params()
        ps += [self.out_W, self.out_b]
        return ps

    def param(self, name):
        for p in self.params():
            if p.name == name:
                return p
        raise KeyError(name)

    @property
    def keep_prob(self):
        return 1.0 - self.hp.dropout

    def _drop(self, x, train, rng):
        return ad.dropout(x, self.keep_prob, rng, train)

    def encode(self, source, source_mask, train=False, drop_rng=None):
        """Run both encoder directions over a padded id batch.

        source: (B x S) int ids; source_mask: (B x S) 0/1. Padded positions
        never update either direction's state, so the backward pass carries a
        zero state across any padded tail before it reaches real tokens.
        """
        source = np.asarray(source)
        source_mask = np.asarray(source_mask, dtype=self.dtype)
        B, S = source.shape
        if S == 0:
            raise ValueError("cannot encode an empty source")
        H = self.hp.hidden_dim
        zero = Tensor(np.zeros((B, H), dtype=self.dtype))
        embeds = []
        for t in range(S):
            e = ad.embed_lookup(self.src_embed, source[:, t])
            embeds.append(self._drop(e, train, drop_rng))
        fwd = []
        h = zero
        for t in range(S):
            h = self.enc_fwd.step(embeds[t], h, source_mask[:, t : t + 1])
            fwd.append(h)
        bwd = [None] * S
        h = zero
        for t in range(S - 1, -1, -1):
            h = self.enc_bwd.step(embeds[t], h, source_mask[:, t : t + 1])
            bwd[t] = h
        annotations = [ad.concat([fwd[t], bwd[t]], axis=1) for t in range(S)]
        ann_proj = [ad.matmul(a, self.attn_U) for a in annotations]
        init = ad.tanh(ad.add(ad.matmul(bwd[0], self.init_W), self.init_b))
        return Encoded(annotations, ann_proj, init, source_mask)

    def attend(self, query, enc):
        """Additive attention: weights over source positions for one query
        batch, then the weighted annotation sum. Padded positions get exactly
        zero weight. Returns (context (B x 2H), weights (B x S))."""
        q = ad.matmul(query, self.attn_W)
        cols = [ad.matmul(ad.tanh(ad.add(q, proj)), self.attn_v) for proj in enc.ann_proj]
        scores = ad.concat(cols, axis=1)
        alpha = ad.softmax_rows(scores, mask=enc.source_mask)
        weight_cols = ad.split(alpha, [1] * len(enc.annotations), axis=1)
        context = None
        for w, ann in zip(weight_cols, enc.annotations):
            term = ad.mul(ann, w)
            context = term if context is None else ad.add(context, term)
        return context, alpha

    def decode_step(self, y_prev, state1, state2, enc, train=False, drop_rng=None):
        """One decoder step given the previous output ids (B,).

        Attention is queried with the incoming top-layer state; the context
        both feeds the first layer (alongside the embedded previous token) and
        joins the top-layer state in the readout. Returns
        (logits (B x V), new state1, new state2, attention weights)."""
        context, alpha = self.attend(state2, enc)
        e = self._drop(ad.embed_lookup(self.tgt_embed, np.asarray(y_prev)), train, drop_rng)
        s1 = self.dec1.step(ad.concat([e, context], axis=1), state1)
        s2 = self.dec2.step(self._drop(s1, train, drop_rng), state2)
        logits = ad.add(ad.matmul(ad.concat([s2, context], axis=1), self.out_W), self.out_b)
        return logits, s1, s2, alpha

    def forward_loss(self, batch, train=False, drop_rng=None):
        """Teacher-forced mean cross-entropy over a padded batch.

        Every non-pad target token after the start sentinel is one prediction
        event; the summed token losses are divided by the event count, so a
        model emitting uniform logits scores exactly ln(vocab_size).
        Returns (loss tensor, event count).
        """
        enc = self.encode(batch.source, batch.source_mask, train, drop_rng)
        target = np.asarray(batch.target)
        tmask = np.asarray(batch.target_mask, dtype=self.dtype)
        B, T = target.shape
        if T < 2:
            raise ValueError("targets must contain at least start and one token")
        s1 = s2 = enc.init_state
        step_logits = []
        for t in range(T - 1):
            logits, s1, s2, _ = self.decode_step(target[:, t], s1, s2, enc, train, drop_rng)
            step_logits.append(logits)
        all_logits = ad.concat(step_logits, axis=0) if len(step_logits) > 1 else step_logits[0]
        golds = target[:, 1:].T.reshape(-1)
        weights = tmask[:, 1:].T.reshape(-1)
        count = float(weights.sum())
        if count <= 0:
            raise ValueError("batch contains no prediction targets")
        loss = ad.cross_entropy_rows(all_logits, golds, weights, denom=count)
        return loss, int(count)


def _checkpoint_tensors(model, optimizer=None):
    tensors = [(p.name, p.data) for p in model.params()]
    if optimizer is not None:
        for p in model.params():
            tensors.append((f"adam.m.{p.name}", optimizer.m[p.name]))
        for p in model.params():
            tensors.append((f"adam.v.{p.name}", optimizer.v[p.name]))
        tensors.append(("adam.t", np.asarray(float(optimizer.t))))
    return tensors


def save_checkpoint(path, model, optimizer=None):
    """Serialize model (and optionally optimizer moments) to `path`.

    Layout: magic, u32 version, u32-length hyperparameter JSON, u32 tensor
    count, a directory of (name, rank, dims, byte offset) entries, then all
    tensor data as little-endian float32 in directory order.
    """
    tensors = _checkpoint_tensors(model, optimizer)
    directory = bytearray()
    payload = bytearray()
    for name, data in tensors:
        raw = np.ascontiguousarray(data, dtype="<f4").tobytes()
        nb = name.encode("utf-8")
        directory += struct.pack("<H", len(nb)) + nb
        directory += struct.pack("<B", data.ndim)
        for dim in data.shape:
            directory += struct.pack("<I", dim)
        directory += struct.pack("<Q", len(payload))
        payload += raw
    hp_json = model.hp.to_json().encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(hp_json)))
        f.write(hp_json)
        f.write(struct.pack("<I", len(tensors)))
        f.write(directory)
        f.write(payload)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointTruncatedError(
                f"expected {n} more bytes at offset {self.pos}, file has {len(self.buf)}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return struct.unpack("<B", self.take(1))[0]

    def u16(self):
        return struct.unpack("<H", self.take(2))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]


def read_checkpoint(path):
    """Parse a checkpoint into (hyperparams, {name: float32 array})."""
    with open(path, "rb") as f:
        buf = f.read()
    r = _Reader(buf)
    magic = r.take(4)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointMagicError(f"{path}: not a checkpoint (bad magic {magic!r})")
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"unsupported version {version}, expected {CHECKPOINT_VERSION}")
    hp = Hyperparams.from_json(r.take(r.u32()).decode("utf-8"))
    count = r.u32()
    entries = []
    for _ in range(count):
        name = r.take(r.u16()).decode("utf-8")
        rank = r.u8()
        shape = tuple(r.u32() for _ in range(rank))
        offset = r.u64()
        entries.append((name, shape, offset))
    payload_start = r.pos
    tensors = {}
    for name, shape, offset in entries:
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = payload_start + offset
        end = start + 4 * n
        if end > len(buf):
            raise CheckpointTruncatedError(f"tensor {name!r} extends past end of file")
        arr = np.frombuffer(buf[start:end], dtype="<f4").reshape(shape)
        tensors[name] = arr.copy()
    return hp, tensors


def load_checkpoint(path, dtype=np.float32, with_optimizer=False):
    """Rebuild a model (and optionally its optimizer state) from `path`."""
    hp, tensors = read_checkpoint(path)
    model = Seq2SeqModel(hp, seed=0, dtype=dtype)
    for p in model.params():
        if p.name not in tensors:
            raise CheckpointError(f"checkpoint missing tensor {p.name!r}")
        arr = tensors[p.name]
        if arr.shape != p.data.shape:
            raise CheckpointError(f"tensor {p.name!r} has shape {arr.shape}, expected {p.data.shape}")
        p.data = arr.astype(dtype)
    if not with_optimizer:
        return model
    optimizer = ad.Adam(model.params())
    if "adam.t" in tensors:
        optimizer.t = int(tensors["adam.t"])
        for p in model.params():
            for store, key in ((optimizer.m, f"adam.m.{p.name}"), (optimizer.v, f"adam.v.{p.name}")):
                if key not in tensors:
                    raise CheckpointError(f"checkpoint missing tensor {key!r}")
                if tensors[key].shape != p.data.shape:
                    raise CheckpointError(f"tensor {key!r} has shape {tensors[key].shape}, expected {p.data.shape}")
                store[p.name] = tensors[key].astype(dtype)
    return model, optimizer
