"""Per-subword representations: embedding source plus the feed-forward projector.

Parameters live in float64 arrays restricted to float32-representable values
(see :func:`as_f32`), so checkpoints in float32 reload exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HIDDEN = 512
DROPOUT = {"finetune": 0.8, "frozen": 0.2}


class EncodingError(ValueError):
    pass


class DataError(ValueError):
    pass


def as_f32(a) -> np.ndarray:
    """Round to float32 precision, keep float64 storage."""
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return as_f32(rng.uniform(-limit, limit, size=(fan_in, fan_out)))


def accumulate(grads: dict, name: str, value: np.ndarray) -> None:
    if name in grads:
        grads[name] += value
    else:
        grads[name] = np.array(value, dtype=np.float64)


def relu(x):
    return np.maximum(x, 0.0)


def dropout_mask(rng: np.random.Generator, shape, p: float) -> np.ndarray:
    """Inverted dropout: kept units scaled by 1/(1-p)."""
    if p <= 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


@dataclass
class EncoderConfig:
    vocab_size: int = 0
    d_emb: int = 256
    d_out: int = 128
    hidden: int = HIDDEN
    hidden_layers: int = 1
    dropout: float = DROPOUT["finetune"]
    source: str = "internal"  # or "external"
    train_embeddings: bool = True
    init_scale: float = 0.05


class Encoder:
    """Embedding lookup (or external vectors) followed by ``d_emb -> 512 [-> 512] -> d_out``.

    For the internal table, position 0 holds the sequence-start embedding plus
    the mean of the other subword embeddings, so the pooled row sees the
    sentence.  External vectors are used as given.
    """

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        self.config = config
        c = config
        self.params: dict[str, np.ndarray] = {}
        if c.source == "internal":
            if c.vocab_size <= 0:
                raise ValueError("internal embeddings need a vocabulary size")
            self.params["emb"] = as_f32(rng.uniform(-c.init_scale, c.init_scale, size=(c.vocab_size, c.d_emb)))
        elif c.source != "external":
            raise ValueError(f"unknown embedding source {c.source!r}")
        widths = [c.d_emb] + [c.hidden] * c.hidden_layers + [c.d_out]
        for k, (a, b) in enumerate(zip(widths, widths[1:]), start=1):
            self.params[f"proj.W{k}"] = glorot(rng, a, b)
            self.params[f"proj.b{k}"] = np.zeros(b)
        self.n_layers = len(widths) - 1

    def trainable(self) -> list[str]:
        names = list(self.params)
        if not self.config.train_embeddings and "emb" in names:
            names.remove("emb")
        return names

    def embed(self, inputs):
        """Rows of the embedding matrix for ``inputs`` (ids, or an external block)."""
        if self.config.source == "external":
            block = np.asarray(inputs, dtype=np.float64)
            if block.ndim != 2 or block.shape[1] != self.config.d_emb:
                raise DataError(f"external block has shape {block.shape}, expected (n, {self.config.d_emb})")
            return block
        ids = np.asarray(inputs, dtype=np.int64)
        table = self.params["emb"]
        if ids.size == 0:
            raise EncodingError("empty id sequence")
        if ids.min() < 0 or ids.max() >= table.shape[0]:
            raise EncodingError(f"subword id out of range [0, {table.shape[0]})")
        e = table[ids]
        if len(ids) > 1:
            e[0] = e[0] + e[1:].mean(axis=0)
        return e

    def forward(self, inputs, training: bool = False, rng: np.random.Generator | None = None):
        """Return the ``n x d_out`` encoding and a cache for :meth:`backward`."""
        p = self.config.dropout if training else 0.0
        if p > 0.0 and rng is None:
            raise ValueError("training with dropout needs a random generator")
        h = self.embed(inputs)
        acts = [h]
        masks = []
        for k in range(1, self.n_layers + 1):
            z = h @ self.params[f"proj.W{k}"] + self.params[f"proj.b{k}"]
            if k < self.n_layers:
                m = dropout_mask(rng, z.shape, p) if p > 0.0 else None
                h = relu(z)
                if m is not None:
                    h = h * m
                masks.append((z, m))
            else:
                h = z
            acts.append(h)
        return h, (inputs, acts, masks)

    def backward(self, cache, d_out: np.ndarray, grads: dict[str, np.ndarray] | None = None):
        """Accumulate parameter gradients into ``grads`` (float64 buffers) and return it."""
        grads = {} if grads is None else grads
        inputs, acts, masks = cache
        g = d_out
        for k in range(self.n_layers, 0, -1):
            accumulate(grads, f"proj.W{k}", acts[k - 1].T @ g)
            accumulate(grads, f"proj.b{k}", g.sum(axis=0))
            g = g @ self.params[f"proj.W{k}"].T
            if k > 1:
                z, m = masks[k - 2]
                if m is not None:
                    g = g * m
                g = g * (z > 0)
        if self.config.source == "internal" and self.config.train_embeddings:
            ids = np.asarray(inputs, dtype=np.int64)
            rows = g.copy()
            if len(ids) > 1:
                rows[1:] += g[0] / (len(ids) - 1)
            if "emb" not in grads:
                grads["emb"] = np.zeros(self.params["emb"].shape)
            np.add.at(grads["emb"], ids, rows)
        return grads

    def encode(self, inputs, training: bool = False, rng=None) -> np.ndarray:
        return self.forward(inputs, training, rng)[0]


def encode_sequence(inputs, encoder: Encoder, training: bool = False, rng=None) -> np.ndarray:
    return encoder.encode(inputs, training, rng)


def pooled_representation(encoded: np.ndarray) -> np.ndarray:
    """Sentence vector: the row at the sequence-start position."""
    return encoded[0]


def read_embedding_file(path):
    """Parse an external embedding file into ``[(pieces, matrix), ...]``.

    Layout: a ``<num_sentences> <d_emb>`` header, then one line per subword
    (``piece v1 ... v_d``), sentences separated by a blank line.
    """
    with open(path, encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 2:
            raise DataError(f"{path}: header must be '<num_sentences> <d_emb>'")
        n_sent, d = int(header[0]), int(header[1])
        blocks: list[tuple[list[str], np.ndarray]] = []
        pieces: list[str] = []
        rows: list[list[float]] = []
        for line_no, line in enumerate(f, start=2):
            line = line.rstrip("\n")
            if not line.strip():
                if pieces:
                    blocks.append((pieces, np.array(rows, dtype=np.float64)))
                    pieces, rows = [], []
                continue
            cols = line.split(" ")
            if len(cols) != d + 1:
                raise DataError(f"{path}:{line_no}: expected a piece and {d} values, got {len(cols) - 1} values")
            pieces.append(cols[0])
            rows.append([float(v) for v in cols[1:]])
        if pieces:
            blocks.append((pieces, np.array(rows, dtype=np.float64)))
    if len(blocks) != n_sent:
        raise DataError(f"{path}: header announces {n_sent} sentences, found {len(blocks)}")
    return d, blocks


def write_embedding_file(path, blocks) -> None:
    blocks = list(blocks)
    d = blocks[0][1].shape[1] if blocks else 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"{len(blocks)} {d}\n")
        for i, (pieces, mat) in enumerate(blocks):
            if i:
                f.write("\n")
            for piece, row in zip(pieces, mat, strict=True):
                f.write(piece + " " + " ".join(repr(float(v)) for v in row) + "\n")
