"""Activation dumps on disk, concept token matching and extraction windows.

A dump is a manifest (``manifest.json``) plus one matrix file per stored
layer, bundled either as a directory or as an uncompressed zip archive.
Each matrix file is::

    b"FRD1" | uint32 rows | uint32 cols | rows*cols float32, little-endian, row-major

See ``docs/dump_format.md`` for the manifest schema.
"""

from __future__ import annotations

import json
import struct
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

MAGIC = b"FRD1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sII")
_F32 = np.dtype("<f4")
MANIFEST = "manifest.json"

# Leading-space markers used by common subword vocabularies.
_SPACE_MARKERS = "Ġ▁Ċ"


class DumpError(ValueError):
    pass


class FormatVersionMismatch(DumpError):
    pass


class ShapeMismatch(DumpError):
    pass


class TruncatedFile(DumpError):
    pass


class OutOfRange(ValueError):
    pass


@dataclass
class ActivationDump:
    model_name: str
    num_layers: int
    hidden_dim: int
    tokens: list[str]
    token_ids: list[int]
    layers: dict[int, np.ndarray]
    capture_point: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tokens = list(self.tokens)
        self.token_ids = [int(t) for t in self.token_ids]
        if len(self.tokens) != len(self.token_ids):
            raise ShapeMismatch(f"{len(self.tokens)} tokens but {len(self.token_ids)} token ids")
        layers = {}
        for L, mat in self.layers.items():
            L = int(L)
            if not 0 <= L <= self.num_layers:
                raise ShapeMismatch(f"layer {L} outside 0..{self.num_layers}")
            mat = np.asarray(mat)
            if mat.shape != (len(self.tokens), self.hidden_dim):
                raise ShapeMismatch(
                    f"layer {L} matrix has shape {mat.shape}, expected {(len(self.tokens), self.hidden_dim)}"
                )
            layers[L] = np.ascontiguousarray(mat, dtype=_F32)
        self.layers = dict(sorted(layers.items()))

    @property
    def num_tokens(self) -> int:
        return len(self.tokens)

    def hidden(self, layer: int) -> np.ndarray:
        try:
            return self.layers[layer]
        except KeyError:
            raise KeyError(f"layer {layer} not stored in dump (have {list(self.layers)})") from None

    def manifest(self) -> dict:
        return {
            "magic": MAGIC.decode(),
            "format_version": FORMAT_VERSION,
            "model_name": self.model_name,
            "num_layers": self.num_layers,
            "hidden_dim": self.hidden_dim,
            "num_tokens": self.num_tokens,
            "capture_point": self.capture_point,
            "dtype": "float32-le",
            "tokens": self.tokens,
            "token_ids": self.token_ids,
            "layers": {str(L): _layer_file(L) for L in self.layers},
            "extra": self.extra,
        }

    def bit_equal(self, other: ActivationDump) -> bool:
        if self.manifest() != other.manifest():
            return False
        return all(self.layers[L].tobytes() == other.layers[L].tobytes() for L in self.layers)


def _layer_file(layer: int) -> str:
    return f"layer_{layer:03d}.f32"


def encode_matrix(mat: np.ndarray) -> bytes:
    mat = np.ascontiguousarray(mat, dtype=_F32)
    rows, cols = mat.shape
    return _HEADER.pack(MAGIC, rows, cols) + mat.tobytes(order="C")


def decode_matrix(buf: bytes, rows: int, cols: int, name: str = "matrix") -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise TruncatedFile(f"{name}: {len(buf)} bytes is shorter than the header")
    magic, r, c = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatVersionMismatch(f"{name}: bad magic {magic!r}")
    if (r, c) != (rows, cols):
        raise ShapeMismatch(f"{name}: stored shape {(r, c)}, manifest says {(rows, cols)}")
    body = len(buf) - _HEADER.size
    need = rows * cols * _F32.itemsize
    if body < need:
        raise TruncatedFile(f"{name}: {body} data bytes, expected {need}")
    if body > need:
        raise ShapeMismatch(f"{name}: {body - need} trailing bytes after matrix data")
    return np.frombuffer(buf, dtype=_F32, offset=_HEADER.size).reshape(rows, cols).copy()


def write_dump(dump: ActivationDump, path: str | Path) -> Path:
    """Write ``dump`` to a directory, or to a zip archive if ``path`` ends in ``.zip``."""
    path = Path(path)
    files = {MANIFEST: json.dumps(dump.manifest(), ensure_ascii=False, indent=1).encode("utf-8")}
    for L, mat in dump.layers.items():
        files[_layer_file(L)] = encode_matrix(mat)
    if path.suffix == ".zip":
        path.parent.mkdir(parents=True, exist_ok=True)
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
            for name, data in files.items():
                # fixed timestamp so identical dumps give identical archives
                info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
                zf.writestr(info, data)
    else:
        path.mkdir(parents=True, exist_ok=True)
        for name, data in files.items():
            (path / name).write_bytes(data)
    return path


def _reader(path: Path):
    if path.is_dir():
        return lambda name: (path / name).read_bytes()
    if zipfile.is_zipfile(path):
        zf = zipfile.ZipFile(path)
        return zf.read
    raise FormatVersionMismatch(f"{path} is neither a dump directory nor a zip bundle")


def read_dump(path: str | Path) -> ActivationDump:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    read = _reader(path)
    try:
        man = json.loads(read(MANIFEST).decode("utf-8"))
    except (KeyError, FileNotFoundError):
        raise FormatVersionMismatch(f"{path}: no {MANIFEST}") from None
    if man.get("magic") != MAGIC.decode() or man.get("format_version") != FORMAT_VERSION:
        raise FormatVersionMismatch(
            f"{path}: magic/version {man.get('magic')!r}/{man.get('format_version')!r} not supported"
        )
    n_tok, d = int(man["num_tokens"]), int(man["hidden_dim"])
    if len(man["tokens"]) != n_tok or len(man["token_ids"]) != n_tok:
        raise ShapeMismatch(f"{path}: num_tokens={n_tok} disagrees with token lists")
    layers = {}
    for key, fname in man["layers"].items():
        try:
            buf = read(fname)
        except (KeyError, FileNotFoundError):
            raise TruncatedFile(f"{path}: missing layer file {fname}") from None
        layers[int(key)] = decode_matrix(buf, n_tok, d, name=fname)
    return ActivationDump(
        model_name=man["model_name"],
        num_layers=int(man["num_layers"]),
        hidden_dim=d,
        tokens=man["tokens"],
        token_ids=man["token_ids"],
        layers=layers,
        capture_point=man.get("capture_point", ""),
        extra=man.get("extra", {}),
    )


# ---- concept matching --------------------------------------------------------

@dataclass(frozen=True)
class TokenMatch:
    concept: str
    positions: tuple[int, ...]
    start: int  # first token of the word itself
    end: int  # one past the last token of the word


def _seam(tok: str) -> str:
    if tok and tok[0] in _SPACE_MARKERS:
        return " " + tok[1:]
    return tok


def match_concept(
    tokens: ActivationDump | Sequence[str],
    surface_word: str,
    window: tuple[int, int] | None = None,
    concept: str | None = None,
    whole_word: bool = True,
) -> list[TokenMatch]:
    """Find token runs spelling ``surface_word`` inside ``window``.

    Matching is case-insensitive, leftmost-first and non-overlapping.
    A run matches when the concatenated token text, with leading
    whitespace and space markers removed from its first token, equals the
    word. The word's span must lie fully inside ``[lo, hi)``; the reported
    positions add the preceding token when there is one (it may sit just
    left of ``lo``). With ``whole_word`` the run must not be glued to
    letters or digits on either side, so ``stack`` is not found inside
    ``unstack``.
    """
    toks = tokens.tokens if isinstance(tokens, ActivationDump) else list(tokens)
    lo, hi = (0, len(toks)) if window is None else window
    if not 0 <= lo <= hi <= len(toks):
        raise OutOfRange(f"window {(lo, hi)} outside 0..{len(toks)}")
    word = " ".join(surface_word.lower().split())
    if not word:
        return []
    norm = [_seam(t).lower() for t in toks]
    out: list[TokenMatch] = []
    i = lo
    while i < hi:
        first = norm[i].lstrip()
        if not first or not word.startswith(first[: len(word)]):
            i += 1
            continue
        led_by_space = first != norm[i]
        text, j = first, i
        while len(text) < len(word) and j + 1 < hi:
            j += 1
            text += norm[j]
            if not word.startswith(text[: len(word)]):
                break
        if text == word and _boundaries_ok(norm, i, j, led_by_space, whole_word):
            positions = tuple(range(i - 1 if i > 0 else i, j + 1))
            out.append(TokenMatch(concept or surface_word, positions, i, j + 1))
            i = j + 1
        else:
            i += 1
    return out


def _boundaries_ok(norm: list[str], i: int, j: int, led_by_space: bool, whole_word: bool) -> bool:
    if not whole_word:
        return True
    if not led_by_space and i > 0 and norm[i - 1][-1:].isalnum():
        return False
    if j + 1 < len(norm) and norm[j + 1][:1].isalnum():
        return False
    return True


def window_of(T: int, w: int) -> tuple[int, int]:
    if w < 1 or T < w:
        raise OutOfRange(f"need T >= w >= 1, got T={T}, w={w}")
    return (T - w, T)
