import dataclasses
import json

import numpy as np
import pytest

from scribble_pfa import synthetic
from scribble_pfa.cli import main
from scribble_pfa.core import ProbabilityMap
from scribble_pfa.errors import ConfigError, MissingGroundTruth, MissingPrediction
from scribble_pfa.pipeline import (
    cmd_curate, cmd_evaluate, cmd_features, cmd_promote, load_config, load_manifest,
)

FAST = {"forest.n_trees": 5, "forest.n_selected_features": 6, "potts.max_iters": 150}


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    scenes = synthetic.make_corpus(5, 4, size=24)
    return synthetic.write_corpus(root, scenes), scenes


def _cfg(manifest, out, **extra):
    return load_config(None, {"manifest": str(manifest), "num_classes": 5, "output_dir": str(out), **FAST, **extra})


# ---------------------------------------------------------------- manifest

def test_manifest_roundtrip(corpus):
    manifest, _ = corpus
    m = load_manifest(manifest)
    assert [r.id for r in m] == ["img0000", "img0001", "img0002", "img0003"]
    assert all(r.image.is_file() and r.globalprob.is_file() for r in m)


def test_manifest_optional_columns_and_comments(tmp_path):
    (tmp_path / "m.tsv").write_text("# header\n\na\ti.png\ts.png\t-\n", encoding="utf-8")
    (r,) = load_manifest(tmp_path / "m.tsv").records
    assert r.gt is None and r.globalprob is None and r.image == tmp_path / "i.png"


@pytest.mark.parametrize("text", ["a\ti.png\n", "a\ti.png\ts.png\n" * 2, "\ti.png\ts.png\n"])
def test_manifest_errors(tmp_path, text):
    (tmp_path / "m.tsv").write_text(text, encoding="utf-8")
    with pytest.raises(ConfigError):
        load_manifest(tmp_path / "m.tsv")


def test_manifest_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_manifest(tmp_path / "nope.tsv")


# ------------------------------------------------------------------ config

def test_config_file_and_overrides(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text(
        "[corpus]\nmanifest = data/manifest.tsv\nnum_classes = 3\nclass_names = bg, cat, dog\n"
        "[fusion]\nvariant = local  ; inline comment\nregularizer = potts\n[potts]\nlam = 2.5\n[run]\nseed = 4\n",
        encoding="utf-8",
    )
    cfg = load_config(ini, {"potts.lam": 7.0, "w_local": None})
    assert cfg.manifest == str(tmp_path / "data" / "manifest.tsv")
    assert cfg.classes.names == ("bg", "cat", "dog")
    assert cfg.potts.lam == 7.0 and cfg.forest_config.seed == 4
    assert cfg.variant_label == "local+potts"


def test_config_hash_ignores_run_only_fields(tmp_path):
    a = _cfg("m.tsv", tmp_path / "a")
    b = _cfg("m.tsv", tmp_path / "b", workers=3)
    assert a.hash() == b.hash()
    assert a.hash() != _cfg("m.tsv", tmp_path / "a", **{"potts.lam": 3.0}).hash()


@pytest.mark.parametrize("text", [
    "[corpus]\nmanifest = m\nnum_classes = 2\n[bogus]\nx = 1\n",
    "[corpus]\nmanifest = m\nnum_classes = 2\ncolour = red\n",
    "[corpus]\nmanifest = m\nnum_classes = 2\n[potts]\nlambda = 1\n",
    "[corpus]\nmanifest = m\nnum_classes = 2\n[potts]\nlam = abc\n",
    "[corpus]\nmanifest = m\nnum_classes = 2\n[fusion]\nvariant = both\n",
    "[corpus]\nmanifest = m\nnum_classes = 2\n[fusion]\nw_local = 1.5\n",
    "[corpus]\nmanifest = m\nnum_classes = 2\n[forest]\nseed = 3\n",
    "[corpus]\nnum_classes = 2\n",
])
def test_config_errors(tmp_path, text):
    ini = tmp_path / "bad.ini"
    ini.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(ini)


# ------------------------------------------------------------------ curate

def test_curate_clean_corpus_keeps_everything(corpus, tmp_path):
    manifest, _ = corpus
    s = cmd_curate(manifest, tmp_path, 5)
    assert (s.total, s.kept, s.dropped, s.relabeled_pixels) == (4, 4, 0, 0)
    assert json.loads((tmp_path / "curation_summary.json").read_text())["kept"] == 4


def test_curate_drops_deficient_and_relabels(tmp_path):
    rng = np.random.default_rng(1)
    scenes = synthetic.make_corpus(11, 6, size=24)
    bad = []
    for i, sc in enumerate(scenes):
        wa = synthetic.swap_labels(sc.scribbles, rng, 0.3)
        if i in (1, 4):
            present = sorted(sc.scribbles.annotated_classes)
            wa = synthetic.drop_class(sc.scribbles, present[-1])
            bad.append(f"img{i:04d}")
        scenes[i] = dataclasses.replace(sc, scribbles=wa)
    manifest = synthetic.write_corpus(tmp_path / "in", scenes)
    s = cmd_curate(manifest, tmp_path / "c1", 5)
    assert s.kept == 4 and sorted(s.dropped_images) == bad and s.relabeled_pixels > 0
    # curating the curated corpus changes nothing
    s2 = cmd_curate(tmp_path / "c1" / "manifest.tsv", tmp_path / "c2", 5)
    assert (s2.kept, s2.dropped, s2.relabeled_pixels) == (4, 0, 0)
    for f in (tmp_path / "c1" / "scribbles").iterdir():
        assert f.read_bytes() == (tmp_path / "c2" / "scribbles" / f.name).read_bytes()


def test_curate_requires_ground_truth(tmp_path, corpus):
    manifest, _ = corpus
    lines = manifest.read_text().splitlines()
    cols = lines[0].split("\t")
    cols[3] = "-"
    m = manifest.parent / "nogt.tsv"
    m.write_text("\t".join(cols) + "\n")
    with pytest.raises(MissingGroundTruth):
        cmd_curate(m, tmp_path, 5)


# ---------------------------------------------------------------- features

def test_features_written(corpus, tmp_path):
    manifest, _ = corpus
    res = cmd_features(manifest, tmp_path, export_bank=str(tmp_path / "bank.fbk"))
    arr = np.load(tmp_path / "features" / "img0000.npy")
    assert arr.shape == (24, 24, res["depth"]) and arr.dtype == np.float32
    assert (tmp_path / "bank.fbk").is_file() and not res["failed"]
    again = cmd_features(manifest, tmp_path / "b", bank=str(tmp_path / "bank.fbk"))
    assert np.array_equal(np.load(tmp_path / "b" / "features" / "img0000.npy"), arr)


# ----------------------------------------------------------------- promote

def test_promote_global_onehot_is_perfect(tmp_path):
    scenes = synthetic.make_corpus(21, 3, size=20)
    for i, sc in enumerate(scenes):
        probs = np.full((20, 20, 5), 0.01)
        probs[np.arange(20)[:, None], np.arange(20)[None, :], sc.ground_truth.labels] = 0.96
        scenes[i] = dataclasses.replace(sc, global_probs=ProbabilityMap(probs, sc.global_probs.classes, source="global"))
    manifest = synthetic.write_corpus(tmp_path / "in", scenes)
    res = cmd_promote(_cfg(manifest, tmp_path / "out", variant="global", regularizer="none"))
    assert res.exit_code == 0 and res.report["evaluation"]["miou"] == 100.0


def test_promote_cache_and_invalidation(corpus, tmp_path):
    manifest, _ = corpus
    cfg = _cfg(manifest, tmp_path)
    first = cmd_promote(cfg)
    assert first.n_ok == 4 and first.exit_code == 0
    report = tmp_path / "reports" / "img0000.json"
    stamp = report.stat().st_mtime_ns
    cmd_promote(cfg)
    assert report.stat().st_mtime_ns == stamp
    changed = cmd_promote(_cfg(manifest, tmp_path, **{"potts.lam": 3.0}))
    assert report.stat().st_mtime_ns != stamp
    assert json.loads(report.read_text())["config_hash"] == changed.report["config_hash"]
    run = json.loads((tmp_path / "run_report.json").read_text())
    assert run["config"]["potts"]["lam"] == 3.0 and run["n_images"] == 4


def test_promote_partial_failure(corpus, tmp_path):
    manifest, _ = corpus
    d = tmp_path / "in"
    d.mkdir()
    (d / "broken.pam").write_bytes(b"not a pam file")
    lines = manifest.read_text().splitlines()
    cols = lines[1].split("\t")
    cols = [str(manifest.parent / c) for c in cols[1:]]
    cols[3] = str(d / "broken.pam")
    (d / "m.tsv").write_text(lines[0].split("\t")[0] + "\t" + "\t".join(
        str(manifest.parent / c) for c in lines[0].split("\t")[1:]) + "\nbad\t" + "\t".join(cols) + "\n")
    res = cmd_promote(_cfg(d / "m.tsv", tmp_path / "out", variant="global"))
    assert (res.n_ok, res.n_failed, res.exit_code) == (1, 1, 1)
    failed = [e for e in res.report["images"] if e["status"] == "failed"]
    assert failed[0]["id"] == "bad" and failed[0]["error"]


# ---------------------------------------------------------------- evaluate

def test_evaluate_directories(corpus, tmp_path):
    manifest, scenes = corpus
    gt_dir = manifest.parent / "gt"
    assert cmd_evaluate(gt_dir, gt_dir, 5).miou == 100.0
    with pytest.raises(MissingPrediction):
        cmd_evaluate(tmp_path, gt_dir, 5)


# --------------------------------------------------------------------- cli

def test_cli_gap(capsys):
    assert main(["gap", "71.5", "64.3", "69.1"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["reduction_pct"] == pytest.approx(66.67, abs=0.01)


def test_cli_evaluate_exit_codes(corpus, tmp_path, capsys):
    manifest, _ = corpus
    gt_dir = manifest.parent / "gt"
    assert main(["evaluate", str(gt_dir), str(gt_dir), "--num-classes", "5", "--csv", str(tmp_path / "x.csv")]) == 0
    assert (tmp_path / "x.csv").is_file()
    assert main(["evaluate", str(tmp_path), str(gt_dir), "--num-classes", "5"]) == 1
    capsys.readouterr()


def test_cli_config_errors_exit_2(tmp_path, corpus, capsys):
    assert main(["promote", "--num-classes", "5"]) == 2
    manifest, _ = corpus
    m = tmp_path / "m.tsv"
    m.write_text(manifest.read_text().splitlines()[0].replace("images/", "nowhere/") + "\n")
    assert main(["promote", "--manifest", str(m), "--num-classes", "5", "--out", str(tmp_path / "o")]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_cli_promote(corpus, tmp_path, capsys):
    manifest, _ = corpus
    code = main(["promote", "--manifest", str(manifest), "--num-classes", "5", "--out", str(tmp_path),
                 "--n-trees", "5", "--n-selected-features", "6", "--regularizer", "none"])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["n_ok"] == 4 and 0 <= out["evaluation"]["miou"] <= 100


def test_synthetic_main(tmp_path, capsys):
    synthetic.main([str(tmp_path), "--images", "2", "--size", "16"])
    assert len(load_manifest(tmp_path / "manifest.tsv")) == 2
