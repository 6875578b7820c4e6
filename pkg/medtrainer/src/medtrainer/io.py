"""Readers for the dataset toolkit's on-disk interfaces.

This package deliberately re-implements the consumer side of the published
formats (vocab JSON, dataset directory with config.yaml / pairs.csv / FIMG
shards, candidates CSV) instead of importing the producer library.
"""

from __future__ import annotations

import csv
import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import SchemaMismatch

_FIMG_HEADER = struct.Struct("<4sHHIII")


@dataclass(frozen=True)
class VocabInfo:
    n_operators: int
    end_id: int
    names: dict[int, str]
    arities: dict[int, int]
    n_constants: dict[int, int]
    special: dict[str, int]

    @property
    def extended_size(self) -> int:
        # ids 0..N plus the special tokens
        return self.n_operators + 1 + len(self.special)

    def special_id(self, name: str) -> int:
        return self.special[name]


def load_vocab(path) -> VocabInfo:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("version") != 1:
        raise SchemaMismatch(f"unsupported vocab version {doc.get('version')!r}")
    names = {op["id"]: op["name"] for op in doc["operators"]}
    arities = {op["id"]: op["arity"] for op in doc["operators"]}
    n_constants = {op["id"]: op["n_constants"] for op in doc["operators"]}
    special = {tok["name"]: tok["id"] for tok in doc["special_tokens"]}
    return VocabInfo(
        n_operators=doc["n_operators"],
        end_id=doc["end_id"],
        names=names,
        arities=arities,
        n_constants=n_constants,
        special=special,
    )


def parse_fimg(blob: bytes) -> tuple[np.ndarray, np.ndarray]:
    """FIMG block -> (float32 data, bool mask), each (n_scales, res, res)."""
    magic, version, _flags, n_scales, res, _n_vars = _FIMG_HEADER.unpack_from(blob, 0)
    if magic != b"FIMG" or version != 1:
        raise SchemaMismatch("not a version-1 FIMG block")
    cells = n_scales * res * res
    offset = _FIMG_HEADER.size
    data = np.frombuffer(blob, dtype="<f4", count=cells, offset=offset)
    data = data.reshape(n_scales, res, res).copy()
    offset += cells * 4
    packed = np.frombuffer(blob, dtype=np.uint8, count=(cells + 7) // 8, offset=offset)
    mask = np.unpackbits(packed, count=cells).astype(bool).reshape(n_scales, res, res)
    return data, mask


def fimg_block_size(n_scales: int, resolution: int) -> int:
    cells = n_scales * resolution * resolution
    return _FIMG_HEADER.size + cells * 4 + (cells + 7) // 8


@dataclass(frozen=True)
class PairRow:
    pair_id: int
    skeleton_id: int
    ots: tuple[int, ...]
    constants: tuple[float, ...]
    shard_file: str
    shard_offset: int
    checksum: int


class PairDataset:
    """In-memory view of a pair dataset directory."""

    def __init__(self, path):
        self.path = Path(path)
        config = yaml.safe_load((self.path / "config.yaml").read_text(encoding="utf-8"))
        if config.get("version") != 1:
            raise SchemaMismatch(f"unsupported dataset version {config.get('version')!r}")
        self.config = config
        render = config["render"]
        self.n_scales = len(render["scales"])
        self.resolution = render["resolution"]
        self._block = fimg_block_size(self.n_scales, self.resolution)
        self.vocab = load_vocab(self.path / "vocab.json")
        self.rows: list[PairRow] = []
        with open(self.path / "pairs.csv", newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                self.rows.append(PairRow(
                    pair_id=int(row["pair_id"]),
                    skeleton_id=int(row["skeleton_id"]),
                    ots=tuple(int(t) for t in row["ots"].split(",")) if row["ots"] else (),
                    constants=tuple(float(v) for v in row["constants"].split(","))
                    if row["constants"] else (),
                    shard_file=row["shard_file"],
                    shard_offset=int(row["shard_offset"]),
                    checksum=int(row["checksum"]),
                ))
        self._by_id = {r.pair_id: r for r in self.rows}

    def __len__(self) -> int:
        return len(self.rows)

    def row(self, pair_id: int) -> PairRow:
        return self._by_id[pair_id]

    def image(self, pair_id: int) -> tuple[np.ndarray, np.ndarray]:
        row = self._by_id[pair_id]
        with open(self.path / row.shard_file, "rb") as fh:
            fh.seek(row.shard_offset)
            blob = fh.read(self._block)
        if zlib.crc32(blob) != row.checksum:
            raise SchemaMismatch(f"pair {row.pair_id}: shard CRC mismatch")
        return parse_fimg(blob)

    def max_ots_length(self) -> int:
        return max((len(r.ots) for r in self.rows), default=0)

    def max_constants(self) -> int:
        return max((len(r.constants) for r in self.rows), default=0)

    def split_pair_ids(self, which: str) -> list[int]:
        ids = set(self.config.get("split", {}).get(f"{which}_skeleton_ids", ()))
        return [r.pair_id for r in self.rows if r.skeleton_id in ids]


def write_candidates_csv(path, rows) -> None:
    """rows: iterable of (pair_id, rank, ots tokens)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, quoting=csv.QUOTE_ALL, lineterminator="\n")
        writer.writerow(["pair_id", "rank", "ots"])
        for pair_id, rank, ots in rows:
            writer.writerow([pair_id, rank, ",".join(str(int(t)) for t in ots)])
