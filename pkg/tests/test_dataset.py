import csv
from pathlib import Path

import numpy as np
import pytest

from otsforge.dataset import (
    DatasetConfig,
    build_dataset,
    dataset_config_from_dict,
    load_config,
    load_dataset,
    parse_constants,
    serialize_constants,
    verify_dataset,
)
from otsforge.errors import CorruptShard
from otsforge.funcimg import RenderConfig, fimg_to_bytes, render
from otsforge.metrics import EvalPair, EvalSet, acc_r
from otsforge.tree import decode_bfs
from otsforge.treegen import GenConfig


def small_config(seed=21):
    return DatasetConfig(
        gen=GenConfig(node_range=(3, 6), n_vars=1, seed=seed),
        render=RenderConfig(n_vars=1, resolution=24),
        n_skeletons=3,
        assignments_per_skeleton=4,
        const_samples_per_ots=5,
        seed=seed,
    )


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    path = tmp_path_factory.mktemp("ds")
    manifest = build_dataset(small_config(), path)
    return path, manifest


def test_pair_count_is_target_minus_rejections(built):
    path, manifest = built
    assert manifest.pairs_target == 60
    total_rejections = sum(manifest.rejections.values())
    assert manifest.pairs_written == 60 - total_rejections
    with open(path / "pairs.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == manifest.pairs_written


def test_rebuild_is_byte_identical(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    build_dataset(small_config(), a)
    build_dataset(small_config(), b)
    files_a = sorted(p.name for p in a.iterdir())
    files_b = sorted(p.name for p in b.iterdir())
    assert files_a == files_b
    for name in files_a:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_verify_fresh_dataset_clean(built):
    path, _ = built
    report = verify_dataset(path)
    assert report.ok, report.violations


def test_reader_roundtrip_bit_exact(built, vocab):
    path, _ = built
    reader = load_dataset(path)
    cfg = reader.config
    for pair_id in (0, len(reader) // 2, len(reader) - 1):
        img, ots, consts, skeleton_id = reader.get(pair_id)
        tree = decode_bfs(ots, consts, vocab)
        fresh = render(tree, cfg.render, vocab=vocab)
        assert fimg_to_bytes(fresh) == fimg_to_bytes(img)


def test_reader_iteration_count(built):
    path, manifest = built
    reader = load_dataset(path)
    assert sum(1 for _ in reader) == manifest.pairs_written == len(reader)


def test_stored_ots_all_decode(built, vocab):
    path, _ = built
    reader = load_dataset(path)
    pairs = tuple(
        EvalPair(prediction=rec.ots, target=rec.ots, target_constants=rec.constants)
        for rec in reader.pairs
    )
    assert acc_r(EvalSet(pairs), vocab) == 1.0


def test_split_by_skeleton_disjoint_and_complete(built):
    path, manifest = built
    reader = load_dataset(path)
    train, val = reader.split_ids()
    assert not train & val
    assert train | val == {int(r["skeleton_id"]) for r in reader.skeleton_rows()}
    assert manifest.n_skeleton_records == 12


def test_tampered_shard_detected(tmp_path):
    build_dataset(small_config(), tmp_path)
    shard = next(tmp_path.glob("shard-*.fimg"))
    blob = bytearray(shard.read_bytes())
    blob[60] ^= 0xFF
    shard.write_bytes(bytes(blob))
    reader = load_dataset(tmp_path)
    with pytest.raises(CorruptShard):
        reader.image(0)
    report = verify_dataset(tmp_path)
    assert any("CRC" in v for v in report.violations)


def test_deleted_pair_row_detected(tmp_path):
    build_dataset(small_config(), tmp_path)
    pairs = tmp_path / "pairs.csv"
    lines = pairs.read_text().splitlines(keepends=True)
    pairs.write_text("".join(lines[:-1]))
    report = verify_dataset(tmp_path)
    assert any("count mismatch" in v for v in report.violations)


def test_split_leak_detected(tmp_path):
    build_dataset(small_config(), tmp_path)
    config_path = tmp_path / "config.yaml"
    text = config_path.read_text()
    import yaml

    doc = yaml.safe_load(text)
    doc["split"]["val_skeleton_ids"].append(doc["split"]["train_skeleton_ids"][0])
    config_path.write_text(yaml.safe_dump(doc))
    report = verify_dataset(tmp_path)
    assert any("split leak" in v for v in report.violations)


def test_constant_serialization_is_float32_lossless():
    values = np.array([0.1, -1.9999999, 2.0, 1e-7, -0.333333343])
    text = serialize_constants(values)
    back = np.array(parse_constants(text))
    np.testing.assert_array_equal(
        back, np.asarray(values, dtype=np.float32).astype(np.float64)
    )


def test_config_yaml_roundtrip(built):
    path, _ = built
    cfg, doc = load_config(path / "config.yaml")
    assert cfg == small_config()
    rebuilt = dataset_config_from_dict(doc)
    assert rebuilt == cfg
