"""Materialized OTS-Funcimg pair datasets.

A dataset directory holds four artifacts: config.yaml (the resolved build
configuration), skeletons.csv (one row per symbol assignment: the OTS
template with constants still free), pairs.csv (one row per constant draw,
pointing into the image shards), and shard-*.fimg files of concatenated FIMG
blocks. Builds are deterministic: one Philox stream per shape index, split
membership decided by a dedicated stream, constants quantized to float32 so
the CSV decimal form is lossless.
"""

from __future__ import annotations

import csv
import io
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import CorruptShard, RationalityError, SchemaMismatch
from .funcimg import FuncImg, RenderConfig, fimg_block_size, fimg_from_bytes, fimg_to_bytes, render
from .render import render_skeleton
from .tree import decode_structure, encode_bfs, is_reconstructable
from .treegen import GenConfig, assign_symbols, rng_stream, sample_constants, sample_skeleton
from .vocab import Vocab, build_vocab, vocab_to_json

DATASET_VERSION = 1

_SKELETON_COLUMNS = ["skeleton_id", "node_count", "ots_template", "formula_skeleton"]
_PAIR_COLUMNS = ["pair_id", "skeleton_id", "ots", "constants", "shard_file", "shard_offset", "checksum"]


@dataclass(frozen=True)
class DatasetConfig:
    gen: GenConfig = GenConfig()
    render: RenderConfig = RenderConfig()
    n_skeletons: int = 8
    assignments_per_skeleton: int = 4
    const_samples_per_ots: int = 5
    train_fraction: float = 0.8
    val_fraction: float = 0.2
    shard_size: int = 1024
    seed: int = 0

    def __post_init__(self):
        if min(self.n_skeletons, self.assignments_per_skeleton, self.const_samples_per_ots) < 1:
            raise ValueError("all counts must be at least 1")
        if abs(self.train_fraction + self.val_fraction - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        if self.shard_size < 1:
            raise ValueError("shard_size must be positive")

    @property
    def pairs_target(self) -> int:
        return self.n_skeletons * self.assignments_per_skeleton * self.const_samples_per_ots


@dataclass
class DatasetManifest:
    path: Path
    n_skeleton_records: int
    pairs_target: int
    pairs_written: int
    rejections: dict[str, int] = field(default_factory=dict)
    train_ids: tuple[int, ...] = ()
    val_ids: tuple[int, ...] = ()


def serialize_constant(value: float) -> str:
    # 9 significant digits round-trip a float32 exactly
    return f"{np.float32(value):.9g}"


def parse_constant(text: str) -> float:
    return float(np.float32(float(text)))


def quantize_constants(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float32).astype(np.float64)


def serialize_ots(ots) -> str:
    return ",".join(str(int(t)) for t in ots)


def parse_ots(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(t) for t in text.split(","))


def serialize_constants(values) -> str:
    return ",".join(serialize_constant(v) for v in np.asarray(values).ravel())


def parse_constants(text: str) -> tuple[float, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(parse_constant(t) for t in text.split(","))


def build_dataset(cfg: DatasetConfig, output_dir, vocab: Vocab | None = None) -> DatasetManifest:
    """Generate and write a complete dataset; deterministic given cfg.seed."""
    vocab = vocab or build_vocab(cfg.gen.vocab_overrides)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)

    skeleton_rows: list[dict] = []
    pair_rows: list[dict] = []
    rejections: dict[str, int] = {}
    shard_blobs: list[bytes] = []

    for shape_index in range(cfg.n_skeletons):
        rng = rng_stream(cfg.seed, shape_index)
        skeleton = sample_skeleton(cfg.gen, rng)
        for assign_index in range(cfg.assignments_per_skeleton):
            template = assign_symbols(skeleton, cfg.gen, rng, vocab)
            skeleton_id = shape_index * cfg.assignments_per_skeleton + assign_index
            ots, _ = encode_bfs(template, vocab)
            skeleton_rows.append({
                "skeleton_id": skeleton_id,
                "node_count": skeleton.node_count,
                "ots_template": serialize_ots(ots),
                "formula_skeleton": render_skeleton(template, vocab),
            })
            for _draw in range(cfg.const_samples_per_ots):
                consts = quantize_constants(sample_constants(template, cfg.gen, rng, vocab))
                tree = template.with_constants(consts)
                noise_rng = rng if cfg.render.noise_sigma > 0 else None
                try:
                    img = render(tree, cfg.render, rng=noise_rng, vocab=vocab)
                except RationalityError as exc:
                    rejections[exc.reason] = rejections.get(exc.reason, 0) + 1
                    continue
                pair_rows.append({
                    "pair_id": len(pair_rows),
                    "skeleton_id": skeleton_id,
                    "ots": serialize_ots(ots),
                    "constants": serialize_constants(consts),
                })
                shard_blobs.append(fimg_to_bytes(img))

    # assign shard placement now that the surviving pair set is known
    block = fimg_block_size(len(cfg.render.scales), cfg.render.resolution)
    for row in pair_rows:
        pair_id = row["pair_id"]
        shard_index = pair_id // cfg.shard_size
        row["shard_file"] = f"shard-{shard_index:05d}.fimg"
        row["shard_offset"] = (pair_id % cfg.shard_size) * block
        row["checksum"] = zlib.crc32(shard_blobs[pair_id])

    n_records = len(skeleton_rows)
    split_rng = rng_stream(cfg.seed, 2**31)
    order = split_rng.permutation(n_records)
    n_train = int(round(cfg.train_fraction * n_records))
    train_ids = tuple(sorted(int(i) for i in order[:n_train]))
    val_ids = tuple(sorted(int(i) for i in order[n_train:]))

    _write_csv(out / "skeletons.csv", _SKELETON_COLUMNS, skeleton_rows)
    _write_csv(out / "pairs.csv", _PAIR_COLUMNS, pair_rows)
    for shard_index in range(0, max(1, -(-len(shard_blobs) // cfg.shard_size))):
        chunk = shard_blobs[shard_index * cfg.shard_size:(shard_index + 1) * cfg.shard_size]
        if not chunk and shard_index > 0:
            break
        with open(out / f"shard-{shard_index:05d}.fimg", "wb") as fh:
            fh.write(b"".join(chunk))
    (out / "vocab.json").write_text(vocab_to_json(vocab), encoding="utf-8")

    manifest = DatasetManifest(
        path=out,
        n_skeleton_records=n_records,
        pairs_target=cfg.pairs_target,
        pairs_written=len(pair_rows),
        rejections=rejections,
        train_ids=train_ids,
        val_ids=val_ids,
    )
    (out / "config.yaml").write_text(_config_yaml(cfg, manifest), encoding="utf-8")
    return manifest


def _write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=columns, quoting=csv.QUOTE_ALL, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    path.write_text(buffer.getvalue(), encoding="utf-8")


def _config_yaml(cfg: DatasetConfig, manifest: DatasetManifest) -> str:
    doc = {
        "version": DATASET_VERSION,
        "seed": cfg.seed,
        "vocab": {"overrides": cfg.gen.vocab_overrides or {}},
        "gen": {
            "node_range": list(cfg.gen.node_range),
            "n_vars": cfg.gen.n_vars,
            "const_range": list(cfg.gen.const_range),
            "max_rejections": cfg.gen.max_rejections,
            "max_consecutive_unary": cfg.gen.max_consecutive_unary,
            "arity_weights": list(cfg.gen.arity_weights),
        },
        "render": {
            "scales": [list(s) for s in cfg.render.scales],
            "resolution": cfg.render.resolution,
            "n_vars": cfg.render.n_vars,
            "noise_sigma": cfg.render.noise_sigma,
            "min_finite_fraction": cfg.render.min_finite_fraction,
            "min_variance": cfg.render.min_variance,
        },
        "counts": {
            "n_skeletons": cfg.n_skeletons,
            "assignments_per_skeleton": cfg.assignments_per_skeleton,
            "const_samples_per_ots": cfg.const_samples_per_ots,
            "pairs_target": manifest.pairs_target,
            "pairs_written": manifest.pairs_written,
            "rejections": dict(sorted(manifest.rejections.items())),
        },
        "split": {
            "train_fraction": cfg.train_fraction,
            "val_fraction": cfg.val_fraction,
            "train_skeleton_ids": list(manifest.train_ids),
            "val_skeleton_ids": list(manifest.val_ids),
        },
        "shard_size": cfg.shard_size,
    }
    return yaml.safe_dump(doc, sort_keys=True, default_flow_style=None)


def load_config(path) -> tuple[DatasetConfig, dict]:
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if doc.get("version") != DATASET_VERSION:
        raise SchemaMismatch(f"unsupported dataset version {doc.get('version')!r}")
    return dataset_config_from_dict(doc), doc


def dataset_config_from_dict(doc: dict) -> DatasetConfig:
    """Build a DatasetConfig from a config.yaml-shaped mapping."""
    gen_doc = doc.get("gen", {})
    render_doc = doc.get("render", {})
    counts = doc.get("counts", {})
    split = doc.get("split", {})
    overrides = (doc.get("vocab") or {}).get("overrides") or None
    gen = GenConfig(
        node_range=tuple(gen_doc.get("node_range", (5, 15))),
        n_vars=gen_doc.get("n_vars", 1),
        const_range=tuple(gen_doc.get("const_range", (-2.0, 2.0))),
        seed=doc.get("seed", 0),
        max_rejections=gen_doc.get("max_rejections", 100),
        max_consecutive_unary=gen_doc.get("max_consecutive_unary", 3),
        arity_weights=tuple(gen_doc.get("arity_weights", (0.4, 0.4, 0.2))),
        vocab_overrides=overrides,
    )
    render_cfg = RenderConfig(
        scales=tuple(tuple(s) for s in render_doc.get("scales", [[-0.1, 0.1], [-1, 1], [-10, 10]])),
        resolution=render_doc.get("resolution", 64),
        n_vars=render_doc.get("n_vars", gen.n_vars),
        noise_sigma=render_doc.get("noise_sigma", 0.0),
        min_finite_fraction=render_doc.get("min_finite_fraction", 0.5),
        min_variance=render_doc.get("min_variance", 1e-9),
    )
    return DatasetConfig(
        gen=gen,
        render=render_cfg,
        n_skeletons=counts.get("n_skeletons", 8),
        assignments_per_skeleton=counts.get("assignments_per_skeleton", 4),
        const_samples_per_ots=counts.get("const_samples_per_ots", 5),
        train_fraction=split.get("train_fraction", 0.8),
        val_fraction=split.get("val_fraction", 0.2),
        shard_size=doc.get("shard_size", 1024),
        seed=doc.get("seed", 0),
    )


@dataclass(frozen=True)
class PairRecord:
    pair_id: int
    skeleton_id: int
    ots: tuple[int, ...]
    constants: tuple[float, ...]
    shard_file: str
    shard_offset: int
    checksum: int


class DatasetReader:
    """Random-access pair reader over a dataset directory."""

    def __init__(self, path):
        self.path = Path(path)
        self.config, self.config_doc = load_config(self.path / "config.yaml")
        self.pairs = _read_pairs(self.path / "pairs.csv")
        self._by_id = {p.pair_id: p for p in self.pairs}
        self.scales = tuple(tuple(s) for s in self.config.render.scales)
        self._block = fimg_block_size(len(self.scales), self.config.render.resolution)

    def __len__(self) -> int:
        return len(self.pairs)

    def record(self, pair_id: int) -> PairRecord:
        return self._by_id[pair_id]

    def image(self, pair_id: int) -> FuncImg:
        rec = self._by_id[pair_id]
        with open(self.path / rec.shard_file, "rb") as fh:
            fh.seek(rec.shard_offset)
            blob = fh.read(self._block)
        if zlib.crc32(blob) != rec.checksum:
            raise CorruptShard(f"pair {pair_id}: CRC mismatch in {rec.shard_file}")
        return fimg_from_bytes(blob, self.scales)

    def get(self, pair_id: int):
        rec = self._by_id[pair_id]
        return self.image(pair_id), rec.ots, rec.constants, rec.skeleton_id

    def __iter__(self):
        for rec in self.pairs:
            yield self.get(rec.pair_id)

    def skeleton_rows(self) -> list[dict]:
        with open(self.path / "skeletons.csv", newline="", encoding="utf-8") as fh:
            return list(csv.DictReader(fh))

    def split_ids(self) -> tuple[set[int], set[int]]:
        split = self.config_doc.get("split", {})
        return (
            set(split.get("train_skeleton_ids", ())),
            set(split.get("val_skeleton_ids", ())),
        )


def load_dataset(path) -> DatasetReader:
    return DatasetReader(path)


def _read_pairs(path: Path) -> list[PairRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            records.append(PairRecord(
                pair_id=int(row["pair_id"]),
                skeleton_id=int(row["skeleton_id"]),
                ots=parse_ots(row["ots"]),
                constants=parse_constants(row["constants"]),
                shard_file=row["shard_file"],
                shard_offset=int(row["shard_offset"]),
                checksum=int(row["checksum"]),
            ))
    return records


@dataclass
class VerifyReport:
    violations: list[str] = field(default_factory=list)
    pairs_checked: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_dataset(path, vocab: Vocab | None = None) -> VerifyReport:
    """Integrity scan: CRCs, OTS decodability, counts, split disjointness."""
    report = VerifyReport()
    root = Path(path)
    try:
        reader = DatasetReader(root)
    except Exception as exc:
        report.violations.append(f"unreadable dataset: {exc}")
        return report
    vocab = vocab or build_vocab(reader.config.gen.vocab_overrides)

    for rec in reader.pairs:
        report.pairs_checked += 1
        try:
            reader.image(rec.pair_id)
        except CorruptShard as exc:
            report.violations.append(str(exc))
        if not is_reconstructable(rec.ots, vocab):
            report.violations.append(f"pair {rec.pair_id}: OTS does not decode")
        else:
            tree = decode_structure(rec.ots, vocab)
            n_slots = len(tree.constants_array())
            if n_slots != len(rec.constants):
                report.violations.append(
                    f"pair {rec.pair_id}: {len(rec.constants)} constants for {n_slots} slots"
                )

    counts = reader.config_doc.get("counts", {})
    recorded = counts.get("pairs_written")
    if recorded is not None and recorded != len(reader.pairs):
        report.violations.append(
            f"pair count mismatch: config records {recorded}, pairs.csv has {len(reader.pairs)}"
        )
    skeleton_rows = reader.skeleton_rows()
    expected_records = counts.get("n_skeletons", 0) * counts.get("assignments_per_skeleton", 0)
    if expected_records and len(skeleton_rows) != expected_records:
        report.violations.append(
            f"skeleton count mismatch: expected {expected_records}, found {len(skeleton_rows)}"
        )
    for row in skeleton_rows:
        if not is_reconstructable(parse_ots(row["ots_template"]), vocab):
            report.violations.append(f"skeleton {row['skeleton_id']}: template does not decode")

    train_ids, val_ids = reader.split_ids()
    leak = train_ids & val_ids
    if leak:
        report.violations.append(f"split leak: skeleton ids in both train and val: {sorted(leak)[:10]}")
    known = {int(r["skeleton_id"]) for r in skeleton_rows}
    missing = (train_ids | val_ids) - known
    if missing:
        report.violations.append(f"split references unknown skeleton ids: {sorted(missing)[:10]}")
    return report
