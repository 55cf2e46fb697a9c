"""Per-class semantic embeddings: random near-orthogonal tables and GILE files.

Every stored vector is unit-norm. Vectors are first rounded to float32 (the
on-disk precision) and then normalised in float64, so a loaded table and a
generated one go through the same canonicalisation.
"""

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .binio import Reader, Writer
from .errors import FormatError, GenerationError, InputError

MAGIC = "GILE"


def _unit(vector):
    v = np.asarray(vector, dtype=np.float32).astype(np.float64)
    n = np.linalg.norm(v)
    if n == 0:
        raise InputError("cannot normalise a zero embedding")
    return v / n


@dataclass
class EmbeddingTable:
    dim: int
    vectors: dict = field(default_factory=dict)
    source: str = "random"

    @classmethod
    def from_rows(cls, class_ids, rows, source="loaded"):
        rows = [np.asarray(r, dtype=np.float64) for r in rows]
        if not rows:
            raise InputError("empty embedding table")
        dim = rows[0].shape[0]
        table = cls(dim, {}, source)
        for cid, row in zip(class_ids, rows):
            cid = int(cid)
            if row.shape != (dim,):
                raise FormatError(f"class {cid}: dimension {row.shape[0]} differs from {dim}")
            if cid in table.vectors:
                raise FormatError(f"duplicate class id {cid}")
            table.vectors[cid] = _unit(row)
        return table

    @property
    def class_ids(self):
        return sorted(self.vectors)

    def __len__(self):
        return len(self.vectors)

    def __contains__(self, cid):
        return int(cid) in self.vectors

    def __getitem__(self, cid):
        try:
            return self.vectors[int(cid)]
        except KeyError:
            raise InputError(f"no embedding for class {cid}") from None

    def matrix(self, class_ids=None):
        ids = self.class_ids if class_ids is None else class_ids
        return np.stack([self[c] for c in ids]) if len(ids) else np.zeros((0, self.dim))

    def subset(self, class_ids):
        return EmbeddingTable(self.dim, {int(c): self[c] for c in class_ids}, self.source)

    def equals(self, other, atol=0.0):
        return (self.dim == other.dim and self.class_ids == other.class_ids
                and all(np.allclose(self[c], other[c], rtol=0, atol=atol) if atol else np.array_equal(self[c], other[c])
                        for c in self.class_ids))


def random_embeddings(class_ids, dim, seed, max_cosine=0.3, max_tries=10_000):
    """Unit vectors drawn from the sphere.

    When ``dim >= 4 * len(class_ids)`` every pair is additionally kept below
    ``max_cosine`` in absolute cosine by redrawing offending vectors.
    """
    class_ids = [int(c) for c in class_ids]
    if len(set(class_ids)) != len(class_ids):
        raise InputError("duplicate class ids")
    n = len(class_ids)
    if dim < n:
        warnings.warn(f"semantic dim {dim} is smaller than the class count {n}; embeddings cannot be orthogonal",
                      stacklevel=2)
    rng = np.random.default_rng([seed, 0x5E])
    enforce = dim >= 4 * n
    accepted = []
    tries = 0
    while len(accepted) < n:
        v = _unit(rng.standard_normal(dim))
        if enforce and accepted and np.max(np.abs(np.stack(accepted) @ v)) >= max_cosine:
            tries += 1
            if tries > max_tries:
                raise GenerationError(
                    f"could not place {n} embeddings below |cos| {max_cosine} in dim {dim}; try a larger dim")
            continue
        accepted.append(v)
    return EmbeddingTable(dim, dict(zip(class_ids, accepted)), "random")


def encode_embeddings(table):
    w = Writer(MAGIC)
    w.u32(len(table), table.dim)
    for cid in table.class_ids:
        w.u32(cid)
        w.f32(table[cid])
    return w.bytes()


def decode_embeddings(data):
    r = Reader(data, MAGIC)
    count, dim = r.u32(2)
    ids, rows = [], []
    for _ in range(count):
        offset = r.pos
        (cid,) = r.u32()
        if cid in ids:
            raise FormatError(f"duplicate class id {cid}", offset)
        ids.append(cid)
        rows.append(r.f32(dim))
    r.finish()
    if count == 0:
        return EmbeddingTable(dim, {}, "loaded")
    return EmbeddingTable.from_rows(ids, rows, "loaded")


def save_embeddings(table, path):
    Path(path).write_bytes(encode_embeddings(table))


def load_embeddings(path):
    return decode_embeddings(Path(path).read_bytes())


def load_embeddings_csv(path):
    """CSV rows ``class_id, v0, ..., v{s-1}``; a non-numeric first row is treated as a header."""
    ids, rows = [], []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            try:
                values = [float(v) for v in row]
            except ValueError:
                if i == 0:
                    continue
                raise FormatError(f"{path}: non-numeric row {i}") from None
            ids.append(int(values[0]))
            rows.append(values[1:])
    if len(set(ids)) != len(ids):
        raise FormatError(f"{path}: duplicate class id")
    return EmbeddingTable.from_rows(ids, rows, "loaded")


def degrade(table, noise, seed):
    """Blend each embedding with isotropic noise of relative size ``noise`` (weaker semantic sources)."""
    rng = np.random.default_rng([seed, 0xD6])
    out = {}
    for cid in table.class_ids:
        v = table[cid]
        out[cid] = _unit(v + noise * rng.standard_normal(table.dim) / np.sqrt(table.dim))
    return EmbeddingTable(table.dim, out, f"degraded-{noise:g}")
