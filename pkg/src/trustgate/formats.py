"""On-disk formats: CSV tables, binary tensors, taxonomy and class maps.

Text formats are ordinary CSV with fixed headers. Binary tensor files share
one layout: a 4-byte magic, a 1-byte format version, little-endian uint64
shape fields, then row-major float64 payloads. Readers never guess: a wrong
magic, a truncated payload or trailing junk is a :class:`ParseError` that
names the path and, when known, the line or byte offset.

Formats
-------
- logits CSV      header ``item_id,label,z_0..z_{K-1}``; empty label column
                  means unlabeled.
- logits binary   magic ``TGLT``; N x K float64 plus an optional label block.
- head binary     magic ``TGHD``; K x d float64 weights then K float64 biases.
- features binary magic ``TGFT``; N x d float64 features then N int64 labels.
- taxonomy CSV    header ``taxon_id,scientific_name,common_name,rank,ancestry``
                  with ``ancestry`` a ``/``-joined root-first id chain.
- class map CSV   header ``class_index,taxon_id``.
- scores file     one float per line (used for conformal calibration dumps).
"""

from __future__ import annotations

import csv
import io
import struct
from typing import Sequence

import numpy as np

from .core import ClassIndexMap, LogitTable, Rank, TaxonRecord, Taxonomy
from .errors import InvalidInputError, ParseError
from .longtail import ClassifierHead, FeatureTable

MAGIC_LOGITS = b"TGLT"
MAGIC_HEAD = b"TGHD"
MAGIC_FEATURES = b"TGFT"
FORMAT_VERSION = 1

_U64 = struct.Struct("<Q")


# ---------------------------------------------------------------------------
# logits CSV

def write_logits_csv(table: LogitTable, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["item_id", "label"] + [f"z_{j}" for j in range(table.class_count)])
        for i in range(len(table)):
            label = "" if table.labels is None else str(int(table.labels[i]))
            writer.writerow([table.item_ids[i], label]
                            + [repr(float(v)) for v in table.logits[i]])


def read_logits_csv(path: str) -> LogitTable:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file, expected a header row", path=path, line=1) from None
        if len(header) < 3 or header[:2] != ["item_id", "label"]:
            raise ParseError(f"bad header {header!r}, expected item_id,label,z_0,...",
                             path=path, line=1)
        k = len(header) - 2
        if header[2:] != [f"z_{j}" for j in range(k)]:
            raise ParseError(f"logit columns must be named z_0..z_{k - 1}", path=path, line=1)

        ids: list[str] = []
        labels: list[int | None] = []
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != k + 2:
                raise ParseError(f"expected {k + 2} columns, got {len(row)}",
                                 path=path, line=lineno)
            ids.append(row[0])
            raw_label = row[1].strip()
            if raw_label == "":
                labels.append(None)
            else:
                try:
                    labels.append(int(raw_label))
                except ValueError:
                    raise ParseError(f"label {row[1]!r} is not an integer",
                                     path=path, line=lineno) from None
            try:
                values = [float(v) for v in row[2:]]
            except ValueError:
                raise ParseError("logit value is not a number", path=path, line=lineno) from None
            if not all(np.isfinite(values)):
                raise ParseError("logit value is not finite", path=path, line=lineno)
            rows.append(values)

    present = [l is not None for l in labels]
    if any(present) and not all(present):
        first_missing = present.index(False) + 2
        raise ParseError("labels must be present for every row or for none",
                         path=path, line=first_missing)
    label_arr = np.array([int(l) for l in labels], dtype=np.int64) if all(present) and labels \
        else None
    logits = np.array(rows, dtype=np.float64).reshape(len(rows), k)
    try:
        return LogitTable(item_ids=tuple(ids), logits=logits, labels=label_arr)
    except InvalidInputError as exc:
        raise ParseError(str(exc), path=path) from exc


# ---------------------------------------------------------------------------
# binary helpers

class _Cursor:
    """Sequential reader that reports byte offsets in parse errors."""

    def __init__(self, data: bytes, path: str) -> None:
        self.data = data
        self.path = path
        self.pos = 0

    def read(self, count: int, what: str) -> bytes:
        if self.pos + count > len(self.data):
            raise ParseError(f"truncated file while reading {what} "
                             f"({count} bytes needed, {len(self.data) - self.pos} left)",
                             path=self.path, offset=self.pos)
        out = self.data[self.pos:self.pos + count]
        self.pos += count
        return out

    def read_u64(self, what: str) -> int:
        return _U64.unpack(self.read(8, what))[0]

    def read_array(self, dtype: str, count: int, what: str) -> np.ndarray:
        nbytes = np.dtype(dtype).itemsize * count
        return np.frombuffer(self.read(nbytes, what), dtype=dtype).copy()

    def expect_eof(self) -> None:
        if self.pos != len(self.data):
            raise ParseError(f"{len(self.data) - self.pos} trailing bytes after payload",
                             path=self.path, offset=self.pos)


def _check_header(cur: _Cursor, magic: bytes) -> None:
    got = cur.read(4, "magic")
    if got != magic:
        raise ParseError(f"bad magic {got!r}, expected {magic!r}", path=cur.path, offset=0)
    version = cur.read(1, "format version")[0]
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported format version {version}", path=cur.path, offset=4)


# ---------------------------------------------------------------------------
# logits binary (TGLT)

def write_logits_binary(table: LogitTable, path: str) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC_LOGITS)
    buf.write(bytes([FORMAT_VERSION]))
    buf.write(_U64.pack(len(table)))
    buf.write(_U64.pack(table.class_count))
    buf.write(np.ascontiguousarray(table.logits, dtype="<f8").tobytes())
    if table.labels is None:
        buf.write(bytes([0]))
    else:
        buf.write(bytes([1]))
        buf.write(np.ascontiguousarray(table.labels, dtype="<i8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_logits_binary(path: str) -> LogitTable:
    with open(path, "rb") as fh:
        cur = _Cursor(fh.read(), path)
    _check_header(cur, MAGIC_LOGITS)
    n = cur.read_u64("row count")
    k = cur.read_u64("class count")
    if k < 1:
        raise ParseError("class count must be >= 1", path=path, offset=13)
    logits = cur.read_array("<f8", n * k, "logit payload").reshape(n, k)
    flag = cur.read(1, "label flag")[0]
    if flag not in (0, 1):
        raise ParseError(f"label flag must be 0 or 1, got {flag}",
                         path=path, offset=cur.pos - 1)
    labels = cur.read_array("<i8", n, "label payload") if flag == 1 else None
    cur.expect_eof()
    # The binary layout carries no item ids; synthesize stable row names.
    try:
        return LogitTable(item_ids=tuple(str(i) for i in range(n)),
                          logits=logits, labels=labels)
    except InvalidInputError as exc:
        raise ParseError(str(exc), path=path) from exc


def read_logits(path: str) -> LogitTable:
    """Read a logit table, sniffing CSV vs binary from the leading bytes."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC_LOGITS:
        return read_logits_binary(path)
    return read_logits_csv(path)


def write_logits(table: LogitTable, path: str) -> None:
    """Write a logit table; ``.csv`` paths get CSV, everything else binary."""
    if str(path).lower().endswith(".csv"):
        write_logits_csv(table, path)
    else:
        write_logits_binary(table, path)


# ---------------------------------------------------------------------------
# head binary (TGHD)

def write_head(head: ClassifierHead, path: str) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC_HEAD)
    buf.write(bytes([FORMAT_VERSION]))
    buf.write(_U64.pack(head.class_count))
    buf.write(_U64.pack(head.feature_dim))
    buf.write(np.ascontiguousarray(head.weights, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(head.bias, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_head(path: str) -> ClassifierHead:
    with open(path, "rb") as fh:
        cur = _Cursor(fh.read(), path)
    _check_header(cur, MAGIC_HEAD)
    k = cur.read_u64("class count")
    d = cur.read_u64("feature dim")
    if k < 1 or d < 1:
        raise ParseError("class count and feature dim must be >= 1", path=path, offset=5)
    weights = cur.read_array("<f8", k * d, "weight payload").reshape(k, d)
    bias = cur.read_array("<f8", k, "bias payload")
    cur.expect_eof()
    try:
        return ClassifierHead(weights=weights, bias=bias)
    except InvalidInputError as exc:
        raise ParseError(str(exc), path=path) from exc


# ---------------------------------------------------------------------------
# features binary (TGFT)

def write_features(table: FeatureTable, path: str) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC_FEATURES)
    buf.write(bytes([FORMAT_VERSION]))
    buf.write(_U64.pack(len(table)))
    buf.write(_U64.pack(table.feature_dim))
    buf.write(np.ascontiguousarray(table.features, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(table.labels, dtype="<i8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_features(path: str) -> FeatureTable:
    with open(path, "rb") as fh:
        cur = _Cursor(fh.read(), path)
    _check_header(cur, MAGIC_FEATURES)
    n = cur.read_u64("row count")
    d = cur.read_u64("feature dim")
    if d < 1:
        raise ParseError("feature dim must be >= 1", path=path, offset=13)
    features = cur.read_array("<f8", n * d, "feature payload").reshape(n, d)
    labels = cur.read_array("<i8", n, "label payload")
    cur.expect_eof()
    try:
        return FeatureTable(item_ids=tuple(str(i) for i in range(n)),
                            features=features, labels=labels)
    except InvalidInputError as exc:
        raise ParseError(str(exc), path=path) from exc


# ---------------------------------------------------------------------------
# taxonomy CSV

_TAXONOMY_HEADER = ["taxon_id", "scientific_name", "common_name", "rank", "ancestry"]


def write_taxonomy_csv(taxonomy: Taxonomy, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_TAXONOMY_HEADER)
        for rec in taxonomy:
            writer.writerow([rec.taxon_id, rec.scientific_name, rec.common_name,
                             rec.rank.value, "/".join(str(a) for a in rec.ancestor_ids)])


def read_taxonomy_csv(path: str) -> Taxonomy:
    records: list[TaxonRecord] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file, expected a header row", path=path, line=1) from None
        if header != _TAXONOMY_HEADER:
            raise ParseError(f"bad header {header!r}, expected {_TAXONOMY_HEADER}",
                             path=path, line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ParseError(f"expected 5 columns, got {len(row)}", path=path, line=lineno)
            try:
                taxon_id = int(row[0])
                ancestry = tuple(int(a) for a in row[4].split("/")) if row[4].strip() else ()
            except ValueError:
                raise ParseError("taxon ids must be integers", path=path, line=lineno) from None
            try:
                records.append(TaxonRecord(
                    taxon_id=taxon_id, scientific_name=row[1],
                    common_name=row[2] or None,
                    rank=Rank.parse(row[3]), ancestor_ids=ancestry))
            except InvalidInputError as exc:
                raise ParseError(str(exc), path=path, line=lineno) from exc
    try:
        return Taxonomy(records)
    except InvalidInputError as exc:
        raise ParseError(str(exc), path=path) from exc


# ---------------------------------------------------------------------------
# class map CSV

_CLASS_MAP_HEADER = ["class_index", "taxon_id"]


def write_class_map_csv(class_map: ClassIndexMap, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CLASS_MAP_HEADER)
        for i, taxon_id in enumerate(class_map.taxon_ids):
            writer.writerow([i, taxon_id])


def read_class_map_csv(path: str) -> ClassIndexMap:
    pairs: dict[int, int] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file, expected a header row", path=path, line=1) from None
        if header != _CLASS_MAP_HEADER:
            raise ParseError(f"bad header {header!r}, expected {_CLASS_MAP_HEADER}",
                             path=path, line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 columns, got {len(row)}", path=path, line=lineno)
            try:
                index, taxon_id = int(row[0]), int(row[1])
            except ValueError:
                raise ParseError("class_index and taxon_id must be integers",
                                 path=path, line=lineno) from None
            if index in pairs:
                raise ParseError(f"duplicate class index {index}", path=path, line=lineno)
            pairs[index] = taxon_id
    if not pairs:
        raise ParseError("class map has no rows", path=path)
    expected = set(range(len(pairs)))
    if set(pairs) != expected:
        missing = sorted(expected - set(pairs))
        raise ParseError(f"class indices must cover 0..{len(pairs) - 1} exactly; "
                         f"missing {missing[:5]}", path=path)
    try:
        return ClassIndexMap(taxon_ids=tuple(pairs[i] for i in range(len(pairs))))
    except InvalidInputError as exc:
        raise ParseError(str(exc), path=path) from exc


# ---------------------------------------------------------------------------
# plain score files

def write_scores(scores: Sequence[float] | np.ndarray, path: str) -> None:
    arr = np.asarray(scores, dtype=np.float64)
    with open(path, "w") as fh:
        for v in arr:
            fh.write(f"{float(v)!r}\n")


def read_scores(path: str) -> np.ndarray:
    values: list[float] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                v = float(text)
            except ValueError:
                raise ParseError(f"score {text!r} is not a number",
                                 path=path, line=lineno) from None
            if not np.isfinite(v):
                raise ParseError("scores must be finite", path=path, line=lineno)
            values.append(v)
    return np.array(values, dtype=np.float64)
