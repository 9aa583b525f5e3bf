import json

import numpy as np
import pytest

from mohe import cli
from mohe.checkpoint import load_checkpoint, save_checkpoint
from mohe.model import MetaThreadSpec, ModelConfig, ThreadSpec
from mohe.records import ItemRecord, RecordError, SessionEvent, ingest_items, ingest_sessions, write_jsonl
from mohe.synthetic import eup_fixture, keyword_catalog, split
from mohe.trainer import TrainConfig, train

THREE_ITEMS = [
    '{"id": "a1", "title": "Red running shoe", "genre_path": ["Shoes", "Sneakers"], "shop_id": "s9",'
    ' "tag_ids": ["t1", "t2"], "purchased": true}',
    '{"id": "a2", "title": "Leather tote", "genre_path": "Bags>Totes",'
    ' "description_tokens": [["soft", "ADJ"], ["the", "DET"]]}',
    '{"id": "a3", "title": "ＣＡＰ", "genre_path": ["Hats"], "added_to_cart": true}',
]


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_three_item_fixture(tmp_path):
    items = ingest_items(write_lines(tmp_path / "i.jsonl", THREE_ITEMS))
    assert items == [
        ItemRecord("a1", "Red running shoe", ("Shoes", "Sneakers"), "s9", ["t1", "t2"], [], True, False),
        ItemRecord("a2", "Leather tote", ("Bags", "Totes"), None, [], [("soft", "ADJ"), ("the", "DET")]),
        ItemRecord("a3", "ＣＡＰ", ("Hats",), added_to_cart=True),
    ]


def test_empty_file(tmp_path):
    (tmp_path / "e.jsonl").write_text("")
    assert ingest_items(tmp_path / "e.jsonl") == []
    assert ingest_sessions(tmp_path / "e.jsonl") == []


def test_missing_title_reports_line(tmp_path):
    path = write_lines(tmp_path / "i.jsonl", [THREE_ITEMS[0], '{"id": "x", "genre_path": ["A"]}'])
    with pytest.raises(RecordError) as err:
        ingest_items(path)
    assert err.value.errors[0][0] == 2 and "title" in err.value.errors[0][1]


def test_error_budget(tmp_path):
    path = write_lines(tmp_path / "i.jsonl", [THREE_ITEMS[0], "not json", '{"id": "y", "title": "t", "genre_path": []}',
                                              THREE_ITEMS[2]])
    with pytest.raises(RecordError):
        ingest_items(path, error_budget=1)
    assert [it.id for it in ingest_items(path, error_budget=2)] == ["a1", "a3"]


def test_duplicate_ids_rejected(tmp_path):
    with pytest.raises(RecordError):
        ingest_items(write_lines(tmp_path / "i.jsonl", [THREE_ITEMS[0], THREE_ITEMS[0]]))


def test_session_round_trip_and_validation(tmp_path):
    sessions, _, _ = eup_fixture()
    write_jsonl(tmp_path / "s.jsonl", sessions)
    assert ingest_sessions(tmp_path / "s.jsonl") == sessions
    bad = '{"session_id": "s", "user": "u", "events": [{"timestamp": 2, "type": "search", "query": "q"},' \
          ' {"timestamp": 1, "type": "click", "item_id": "i"}]}'
    with pytest.raises(RecordError):
        ingest_sessions(write_lines(tmp_path / "b.jsonl", [bad]))


def test_item_write_read_round_trip(tmp_path):
    items = ingest_items(write_lines(tmp_path / "i.jsonl", THREE_ITEMS))
    write_jsonl(tmp_path / "o.jsonl", items)
    assert ingest_items(tmp_path / "o.jsonl") == items


# ---- checkpoint ----------------------------------------------------------

@pytest.fixture(scope="module")
def trained():
    items = keyword_catalog(n_items=300, n_classes=4, seed=2, with_shop=True)
    cfg = ModelConfig("mohe2", 4, [ThreadSpec("word", 3, 8, 12), ThreadSpec("char", 4, 8, 40)],
                      [MetaThreadSpec("shop_tag", 6, 4)], meta_method=2)
    model, feat, _ = train(cfg, items, TrainConfig(epochs=1, batch_size=32))
    return model, feat, items


def test_checkpoint_round_trip_bit_identical(tmp_path, trained):
    model, feat, items = trained
    save_checkpoint(tmp_path / "ck", model, feat)
    loaded, lfeat = load_checkpoint(tmp_path / "ck")
    assert lfeat.labels == feat.labels and lfeat.vocab_sizes == feat.vocab_sizes
    specs = model.input_specs()
    np.testing.assert_array_equal(loaded.predict_proba(lfeat.encode_items(items, loaded.input_specs())),
                                  model.predict_proba(feat.encode_items(items, specs)))
    for name, arr in model.param_arrays().items():
        assert loaded.param_arrays()[name].tobytes() == arr.tobytes()


def test_checkpoint_files_are_little_endian_f64(tmp_path, trained):
    model, feat, _ = trained
    save_checkpoint(tmp_path / "ck", model, feat)
    manifest = json.loads((tmp_path / "ck" / "manifest.json").read_text())
    assert set(manifest["arrays"]) == set(model.shapes)
    entry = manifest["arrays"]["thread0.conv.kernel"]
    raw = np.fromfile(tmp_path / "ck" / entry["file"], dtype="<f8").reshape(entry["shape"])
    np.testing.assert_array_equal(raw, model.params["thread0.conv.kernel"].data)


def test_checkpoint_rejects_incomplete_or_misshaped(tmp_path, trained):
    model, feat, _ = trained
    root = tmp_path / "ck"
    save_checkpoint(root, model, feat)
    manifest = json.loads((root / "manifest.json").read_text())
    dropped = dict(manifest, arrays={k: v for k, v in manifest["arrays"].items() if k != "agg.clf.bias"})
    (root / "manifest.json").write_text(json.dumps(dropped))
    with pytest.raises(ValueError):
        load_checkpoint(root)
    wrong = json.loads(json.dumps(manifest))
    wrong["arrays"]["agg.clf.bias"]["shape"] = [2, 2]
    (root / "manifest.json").write_text(json.dumps(wrong))
    with pytest.raises(ValueError):
        load_checkpoint(root)


# ---- CLI -----------------------------------------------------------------

@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    items = keyword_catalog(n_items=200, n_classes=3, seed=5)
    tr, te = split(items, 0.25, seed=5)
    write_jsonl(root / "train.jsonl", tr)
    write_jsonl(root / "test.jsonl", te)
    (root / "cfg.json").write_text(json.dumps({
        "model": {"threads": [{"mode": "word", "kernel_size": 3, "filters": 8, "input_length": 12}]},
        "train": {"epochs": 2, "batch_size": 16}}))
    return root


def test_cli_train_predict_eval(workdir):
    assert cli.main(["train", "--config", str(workdir / "cfg.json"), "--items", str(workdir / "train.jsonl"),
                     "--framework", "mohe1", "--out", str(workdir / "ck")]) == 0
    assert (workdir / "ck" / "manifest.json").exists() and (workdir / "ck" / "history.jsonl").exists()
    assert cli.main(["predict", "--model", str(workdir / "ck"), "--items", str(workdir / "test.jsonl"),
                     "--out", str(workdir / "pred.jsonl")]) == 0
    rows = [json.loads(line) for line in (workdir / "pred.jsonl").read_text().splitlines()]
    assert set(rows[0]) == {"id", "class", "probability"}
    assert cli.main(["eval", "--items", str(workdir / "test.jsonl"), "--predictions", str(workdir / "pred.jsonl"),
                     "--baseline", str(workdir / "pred.jsonl"), "--resamples", "1000",
                     "--out", str(workdir / "report.json")]) == 0
    report = json.loads((workdir / "report.json").read_text())
    assert {"micro_f1", "macro_f1", "per_class", "segments", "bootstrap"} <= set(report)
    assert report["bootstrap"]["significant"] is False


def test_cli_eval_gold_predictions(workdir):
    gold = [json.loads(line) for line in (workdir / "test.jsonl").read_text().splitlines()]
    write_jsonl(workdir / "gold_pred.jsonl", [{"id": g["id"], "class": ">".join(g["genre_path"]), "probability": 1.0}
                                              for g in gold])
    assert cli.main(["eval", "--items", str(workdir / "test.jsonl"), "--predictions",
                     str(workdir / "gold_pred.jsonl"), "--out", str(workdir / "r.json")]) == 0
    assert json.loads((workdir / "r.json").read_text())["macro_f1"] == 1.0


def test_cli_predict_is_deterministic(workdir):
    for name in ("p1.jsonl", "p2.jsonl"):
        cli.main(["predict", "--model", str(workdir / "ck"), "--items", str(workdir / "test.jsonl"),
                  "--out", str(workdir / name)])
    assert (workdir / "p1.jsonl").read_bytes() == (workdir / "p2.jsonl").read_bytes()


def test_cli_unknown_framework_is_usage_error(workdir, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--items", str(workdir / "train.jsonl"), "--framework", "bagging", "--out", "x"])
    assert exc.value.code == 2
    assert "mohe2" in capsys.readouterr().err
    (workdir / "bad.json").write_text(json.dumps({"model": {"framework": "bagging"}}))
    with pytest.raises(SystemExit):
        cli.main(["train", "--config", str(workdir / "bad.json"), "--items", str(workdir / "train.jsonl"),
                  "--out", "x"])


def test_cli_malformed_items(workdir, capsys):
    write_lines(workdir / "broken.jsonl", ['{"id": "x", "genre_path": ["A"]}'])
    assert cli.main(["predict", "--model", str(workdir / "ck"), "--items", str(workdir / "broken.jsonl"),
                     "--out", str(workdir / "never.jsonl")]) == 1
    assert "line 1" in capsys.readouterr().err


def test_cli_eup_and_reach(tmp_path):
    assert cli.main(["synth", "--kind", "eup", "--out", str(tmp_path / "e")]) == 0
    e = tmp_path / "e"
    catalog = [json.loads(line) for line in (e / "catalog.jsonl").read_text().splitlines()]
    write_jsonl(e / "pred.jsonl", [{"id": c["id"], "class": ">".join(c["genre_path"])} for c in catalog])
    assert cli.main(["eup", "--sessions", str(e / "sessions.jsonl"), "--items", str(e / "catalog.jsonl"),
                     "--provided", str(e / "provided.jsonl"), "--predictions", str(e / "pred.jsonl"),
                     "--level", "1", "--out", str(e / "out")]) == 0
    assert (e / "out" / "eup.tsv").read_text().splitlines() == ["genre_path\tscore\tpair_count", "Bags\t1\t1",
                                                                "Shoes\t0.666667\t3"]
    summary = json.loads((e / "out" / "summary.json").read_text())
    assert summary["weighted_f1"] == pytest.approx((1 + 2 / 3) / 2, rel=1e-5)

    assert cli.main(["synth", "--kind", "taxonomy", "--out", str(tmp_path / "t")]) == 0
    t = tmp_path / "t"
    held = [json.loads(line) for line in (t / "heldout.jsonl").read_text().splitlines()]
    write_jsonl(t / "pred.jsonl", [{"id": h["id"], "class": ">".join(h["genre_path"])} for h in held])
    paths = sorted({tuple(json.loads(line)["genre_path"][:3]) for f in ("train.jsonl", "heldout.jsonl")
                    for line in (t / f).read_text().splitlines()})
    (t / "eup.tsv").write_text("genre_path\tscore\tpair_count\n" + "".join(">".join(p) + "\t0.5\t2\n" for p in paths))
    assert cli.main(["reach", "--items", str(t / "train.jsonl"), "--heldout", str(t / "heldout.jsonl"),
                     "--predictions", str(t / "pred.jsonl"), "--eup", str(t / "eup.tsv"), "--level", "3",
                     "--out", str(t / "r")]) == 0
    lines = (t / "r" / "reachability.tsv").read_text().splitlines()
    assert lines[0] == "child_path\tmean_score\tcount" and len(lines) > 1
    props = json.loads((t / "r" / "proportions.json").read_text())
    assert all(abs(sum(p["theta"]) - 1) < 1e-5 for p in props)


def test_cli_gradcheck_passes(capsys):
    assert cli.main(["gradcheck"]) == 0
    assert "PASS" in capsys.readouterr().out
