"""Textual descriptions of scenes, their embeddings, and the two
evaluation-time corruptions (mismatched labels/positions, per-class removal).

A description is one block per control carrying label, size, 9-cell grid
position, shape and color phrases. Blocks serialize to a fixed plain-text
layout that round-trips exactly. The surrogate embedder feature-hashes the
block's tokens into a unit vector; real-model embeddings can be substituted
through the "MMTE" binary file format.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, DataError

_GRID_ROWS = ("top", "middle", "bottom")
_GRID_COLS = ("left", "center", "right")
POSITION_PHRASES = tuple(f"{r}-{c}" for r in _GRID_ROWS for c in _GRID_COLS)

_SHAPE_BASE = {
    "button": "rounded rectangle", "checkbox": "small square", "icon": "pictogram tile",
    "input": "rectangle", "text": "text block", "image": "framed rectangle",
    "list": "rectangle", "table": "grid rectangle", "haxis": "thin line",
    "vaxis": "thin line", "dropdown": "rectangle", "menu": "horizontal bar",
    "tabbar": "horizontal bar", "radio": "circle", "tree": "rectangle",
    "chart": "rectangle", "graph": "rectangle", "legend": "rectangle",
    "date": "rectangle",
}


@dataclass(frozen=True)
class ControlDescription:
    label: str      # class name
    size: str       # "~WxH px"
    position: str   # one of POSITION_PHRASES
    shape: str
    color: str


@dataclass
class DescriptionDoc:
    blocks: list


def grid_phrase(cx: float, cy: float, canvas: float) -> str:
    col = min(2, int(3 * cx / canvas))
    row = min(2, int(3 * cy / canvas))
    return f"{_GRID_ROWS[row]}-{_GRID_COLS[col]}"


def _shape_phrase(glyph: str, w: int, h: int) -> str:
    base = _SHAPE_BASE[glyph]
    if w > 2.5 * h:
        return f"wide {base}"
    if h > 2.5 * w:
        return f"tall {base}"
    return base


def generate_description(scene, catalog) -> DescriptionDoc:
    """One block per ground-truth control, in scene order; deterministic."""
    if not scene.controls:
        raise ContractViolation("scene has no controls to describe")
    blocks = []
    for c in scene.controls:
        name = catalog.classes[c.class_id]
        glyph = catalog.glyphs[name]
        x, y, w, h = c.box
        blocks.append(ControlDescription(
            label=name,
            size=f"~{w}x{h} px",
            position=grid_phrase(x + w / 2, y + h / 2, scene.canvas),
            shape=_shape_phrase(glyph, w, h),
            color=c.style.color_name,
        ))
    return DescriptionDoc(blocks)


# ---------------------------------------------------------------------------
# serialization


def serialize_block(block: ControlDescription) -> str:
    return (
        f"{block.label}\n"
        f'Label: "{block.label}"\n'
        f"Size: {block.size}\n"
        f"Position: {block.position}\n"
        f"Shape: {block.shape}\n"
        f"Color: {block.color}\n"
    )


def serialize_doc(doc: DescriptionDoc) -> str:
    return "\n".join(serialize_block(b) for b in doc.blocks)


def parse_doc(text: str, catalog, source: str = "<text>") -> DescriptionDoc:
    """Inverse of serialize_doc; validates labels and position phrases."""
    text = text.strip("\n")
    if not text:
        return DescriptionDoc([])
    blocks = []
    for bi, chunk in enumerate(text.split("\n\n")):
        lines = chunk.split("\n")
        if len(lines) != 6:
            raise DataError(f"{source}: block {bi}: expected 6 lines, got {len(lines)}")
        label = lines[0]
        if label not in catalog.classes:
            raise DataError(f"{source}: block {bi}: unknown class {label!r}")
        fields = {}
        for key, line in zip(("Label", "Size", "Position", "Shape", "Color"), lines[1:]):
            prefix = f"{key}: "
            if not line.startswith(prefix):
                raise DataError(f"{source}: block {bi}: expected '{key}: ...', got {line!r}")
            fields[key] = line[len(prefix):]
        if fields["Label"] != f'"{label}"':
            raise DataError(f"{source}: block {bi}: label line {fields['Label']!r} != heading {label!r}")
        if fields["Position"] not in POSITION_PHRASES:
            raise DataError(f"{source}: block {bi}: unknown position {fields['Position']!r}")
        blocks.append(ControlDescription(label, fields["Size"], fields["Position"],
                                         fields["Shape"], fields["Color"]))
    return DescriptionDoc(blocks)


# ---------------------------------------------------------------------------
# tokenization and embedding


def tokenize(text: str) -> list:
    """Lowercase, split on non-alphanumerics, keep digit runs as tokens."""
    out = []
    cur = []
    mode = None  # "a" letters, "d" digits
    for ch in text.lower():
        kind = "a" if ch.isascii() and ch.isalpha() else ("d" if ch.isdigit() else None)
        if kind is None or kind != mode:
            if cur:
                out.append("".join(cur))
                cur = []
            mode = kind
        if kind is not None:
            cur.append(ch)
    if cur:
        out.append("".join(cur))
    return out


def _hash_token(token: str, dim: int):
    b = token.encode("utf-8")
    idx = int.from_bytes(hashlib.blake2b(b, digest_size=8, person=b"mmui-idx").digest(), "little") % dim
    sign_bit = hashlib.blake2b(b, digest_size=1, person=b"mmui-sign").digest()[0] & 1
    return idx, (1.0 if sign_bit else -1.0)


def basis_vector(dim: int) -> np.ndarray:
    e0 = np.zeros(dim, dtype=np.float32)
    e0[0] = 1.0
    return e0


@dataclass
class TextEmbeddingSeq:
    """T unit-norm vectors of dimension D, one per description block."""

    vectors: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1:
            raise ContractViolation(f"embedding sequence must be [T>=1, D], got {self.vectors.shape}")
        norms = np.linalg.norm(self.vectors, axis=1)
        if (norms <= 0).any() or (norms > 1 + 1e-6).any():
            raise ContractViolation("embedding norms must lie in (0, 1+1e-6]")

    @property
    def shape(self):
        return self.vectors.shape


def embed_block(block: ControlDescription, dim: int) -> np.ndarray:
    """Feature-hash the block's serialized tokens into an L2-normalized vector.

    Order-insensitive by construction (a signed sum over the token multiset);
    an all-zero accumulation falls back to the fixed basis vector e0.
    """
    vec = np.zeros(dim, dtype=np.float64)
    for token in tokenize(serialize_block(block)):
        idx, sign = _hash_token(token, dim)
        vec[idx] += sign
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        return basis_vector(dim)
    return (vec / norm).astype(np.float32)


def embed_doc(doc: DescriptionDoc, dim: int) -> TextEmbeddingSeq:
    if not doc.blocks:
        return TextEmbeddingSeq(basis_vector(dim)[None])
    return TextEmbeddingSeq(np.stack([embed_block(b, dim) for b in doc.blocks]))


# ---------------------------------------------------------------------------
# corruptions


def corrupt_mismatch(doc: DescriptionDoc, catalog, seed: int) -> DescriptionDoc:
    """Replace every label with a different class and every position with a
    different grid phrase; uniform choices, deterministic per seed."""
    if not doc.blocks:
        raise ContractViolation("corrupt_mismatch: document has no blocks")
    if len(catalog.classes) < 2:
        raise ContractViolation("corrupt_mismatch: catalog has no alternative labels")
    rng = np.random.default_rng(seed)
    blocks = []
    for b in doc.blocks:
        labels = [c for c in catalog.classes if c != b.label]
        positions = [p for p in POSITION_PHRASES if p != b.position]
        blocks.append(ControlDescription(
            label=labels[int(rng.integers(len(labels)))],
            size=b.size,
            position=positions[int(rng.integers(len(positions)))],
            shape=b.shape,
            color=b.color,
        ))
    return DescriptionDoc(blocks)


def corrupt_partial(doc: DescriptionDoc, target_class: str) -> DescriptionDoc:
    """Drop every block describing `target_class`; the rest stay untouched."""
    return DescriptionDoc([b for b in doc.blocks if b.label != target_class])


# ---------------------------------------------------------------------------
# external embedding files (magic "MMTE")


def write_embeddings(path: str, mapping: dict, dim: int):
    """Write {image-id: [T,D] array} in the MMTE v1 binary layout."""
    with open(path, "wb") as f:
        f.write(b"MMTE")
        f.write(struct.pack("<II", 1, dim))
        for sid, arr in mapping.items():
            arr = np.asarray(arr.vectors if hasattr(arr, "vectors") else arr, dtype="<f4")
            if arr.ndim != 2 or arr.shape[1] != dim:
                raise ContractViolation(f"embeddings for {sid!r}: shape {arr.shape} vs D={dim}")
            sid_b = sid.encode("utf-8")
            f.write(struct.pack("<I", len(sid_b)))
            f.write(sid_b)
            f.write(struct.pack("<I", arr.shape[0]))
            f.write(arr.tobytes())


def load_external_embeddings(path: str, expected_dim: int = None) -> dict:
    """Read an MMTE file into {image-id: TextEmbeddingSeq}.

    Malformed input raises DataError naming the byte offset; a dimension
    mismatch against `expected_dim` is rejected before any record is read.
    """
    with open(path, "rb") as f:
        blob = f.read()

    def fail(offset, why):
        raise DataError(f"{path}: offset {offset}: {why}")

    if blob[:4] != b"MMTE":
        fail(0, "missing MMTE magic")
    if len(blob) < 12:
        fail(len(blob), "truncated header")
    version, dim = struct.unpack_from("<II", blob, 4)
    if version != 1:
        fail(4, f"unsupported version {version}")
    if expected_dim is not None and dim != expected_dim:
        fail(8, f"dimension {dim} does not match configured {expected_dim}")
    out = {}
    pos = 12
    while pos < len(blob):
        if pos + 4 > len(blob):
            fail(pos, "truncated id length")
        (id_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        if pos + id_len + 4 > len(blob):
            fail(pos, "truncated record")
        sid = blob[pos:pos + id_len].decode("utf-8")
        pos += id_len
        (t,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        nbytes = t * dim * 4
        if t < 1:
            fail(pos - 4, f"record {sid!r}: T must be >= 1")
        if pos + nbytes > len(blob):
            fail(pos, f"record {sid!r}: truncated payload")
        arr = np.frombuffer(blob, dtype="<f4", count=t * dim, offset=pos).reshape(t, dim)
        pos += nbytes
        out[sid] = TextEmbeddingSeq(arr.copy())
    return out
