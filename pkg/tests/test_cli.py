import json

import pytest

from nmtcal.cli import load_config, main
from nmtcal.corpus import PREDICTION_HEADER


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def preds_file(tmp_path, rows, name="p.tsv"):
    lines = [PREDICTION_HEADER]
    for sent in rows:
        lines += [f"{t}\t{c}\t{k}\t{lab}" for t, c, k, lab in sent]
        lines.append("")
    return write(tmp_path / name, "\n".join(lines) + "\n")


def test_ter_identical_files_all_correct(tmp_path):
    h = write(tmp_path / "h.txt", "a b c\nx y\n")
    out = tmp_path / "labels.txt"
    assert main(["ter", h, h, "--out", str(out)]) == 0
    assert out.read_text() == "C C C\nC C\n"
    manifest = json.loads((tmp_path / "labels.txt.manifest.json").read_text())
    assert manifest["subcommand"] == "ter"
    assert str(out) in manifest["outputs"]


def test_ter_max_shift_zero(tmp_path, capsys):
    h = write(tmp_path / "h.txt", "b a\n")
    r = write(tmp_path / "r.txt", "a b\n")
    assert main(["ter", h, r]) == 0
    assert capsys.readouterr().out == "C C\n"
    assert main(["ter", h, r, "--max-shift", "0"]) == 0
    assert capsys.readouterr().out.split() != ["C", "C"]


def test_missing_file_exit_2(tmp_path, capsys):
    missing = str(tmp_path / "nope.txt")
    assert main(["ter", missing, missing]) == 2
    assert missing in capsys.readouterr().err


def test_line_count_mismatch_exit_2(tmp_path):
    h = write(tmp_path / "h.txt", "a\nb\n")
    r = write(tmp_path / "r.txt", "a\n")
    assert main(["ter", h, r]) == 2


def test_bad_usage_exit_2():
    with pytest.raises(SystemExit) as err:
        main(["ter"])
    assert err.value.code == 2


def test_ece_two_predictions(tmp_path, capsys):
    p = preds_file(tmp_path, [[("a", 0.8, 1, "C"), ("b", 0.6, 1, "C")]])
    assert main(["ece", p]) == 0
    assert json.loads(capsys.readouterr().out)["ece"] == pytest.approx(0.3, abs=1e-12)


def test_ece_one_bin_and_outputs(tmp_path):
    p = preds_file(tmp_path, [[("a", 0.9, 1, "C"), ("b", 0.3, 0, "S")], [("c", 0.5, 1, "C")]])
    out = tmp_path / "rep.json"
    assert main(["ece", p, "--bins", "1", "--mode", "training", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["mode"] == "training"
    assert rep["ece"] == pytest.approx(abs(2 / 3 - (0.9 + 0.3 + 0.5) / 3))
    diagram = (tmp_path / "rep.json.diagram.tsv").read_text().splitlines()
    assert diagram[0] == "bin_center\tavg_conf\tavg_acc\tgap\tcount"


def test_ece_calibrated_is_near_zero(tmp_path, capsys):
    rows = [[("a", 0.75, int(i % 4 != 0), "C" if i % 4 else "S")] for i in range(400)]
    assert main(["ece", preds_file(tmp_path, rows)]) == 0
    assert json.loads(capsys.readouterr().out)["ece"] == pytest.approx(0.0, abs=1e-12)


def test_malformed_predictions_exit_2(tmp_path, capsys):
    p = write(tmp_path / "p.tsv", PREDICTION_HEADER + "\na\t1.5\t1\tC\n")
    assert main(["ece", p]) == 2
    assert "p.tsv:2" in capsys.readouterr().err


def test_correlate_outputs_tables(tmp_path, capsys):
    p = preds_file(tmp_path, [[("a", 0.95, 0, "S"), ("b", 0.95, 1, "C"), ("c", 0.15, 1, "C+D"), ("d", 0.55, 1, "C")]])
    assert main(["correlate", p, "--threshold", "10"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "table\trow\tcolumn\tcosine"
    assert any(line.startswith("error_types\tUnderTrans\tUnder") for line in lines)


def test_correlate_labels_override_and_error_set(tmp_path, capsys):
    p = preds_file(tmp_path, [[("a", 0.9, 1, "C"), ("b", 0.2, 1, "C")]])
    labels = write(tmp_path / "l.txt", "S C\n")
    assert main(["correlate", p, "--labels", labels, "--error-set", "S"]) == 0
    assert main(["correlate", p, "--error-set", "X"]) == 2
    bad = write(tmp_path / "bad.txt", "S\n")
    assert main(["correlate", p, "--labels", bad]) == 2


def test_buckets_position_and_frequency(tmp_path, capsys):
    rows = [[("a", 0.95, 0, "S"), ("b", 0.5, 1, "C"), ("c", 0.1, 1, "C")] for _ in range(5)]
    p = preds_file(tmp_path, rows)
    ref = write(tmp_path / "ref.txt", "a a a b b c\n")
    assert main(["buckets", p, "--attributes", "position,frequency", "--train-ref", ref, "--threshold", "5"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "attribute\tbucket\toverall\tsubset\trelative_change"
    assert any(line.startswith("position\tLeft") for line in out)


def test_buckets_needs_inputs(tmp_path):
    p = preds_file(tmp_path, [[("a", 0.9, 0, "S")]])
    assert main(["buckets", p, "--attributes", "frequency"]) == 2
    assert main(["buckets", p, "--attributes", "fertility"]) == 2
    assert main(["buckets", p, "--attributes", "colour"]) == 2


def test_buckets_fertility_and_pos(tmp_path, capsys):
    rows = [[("a", 0.95, 0, "S"), ("b@@", 0.5, 1, "C"), ("c", 0.05, 1, "C")] for _ in range(4)]
    p = preds_file(tmp_path, rows)
    align = write(tmp_path / "a.txt", "0-0 1-0 2-1\n" * 4)
    pos = write(tmp_path / "pos.txt", "NN VB\n" * 4)
    assert main(["buckets", p, "--attributes", "fertility,pos,granularity", "--alignment", align, "--pos", pos,
                 "--threshold", "5"]) == 0
    out = capsys.readouterr().out
    assert "fertility\tTwoPlus" in out and "pos\tNoun" in out and "granularity\tSubWord" in out


def test_load_config_formats(tmp_path):
    j = write(tmp_path / "c.json", '{"train": {"max_steps": 5}}')
    kv = write(tmp_path / "c.cfg", "# comment\ntrain.max_steps = 5\ntask.noise_rate=0.2\npolicies = [\"none\"]\n")
    assert load_config(j) == {"train": {"max_steps": 5}}
    assert load_config(kv) == {"train": {"max_steps": 5}, "task": {"noise_rate": 0.2}, "policies": ["none"]}
    bad = write(tmp_path / "bad.cfg", "just words\n")
    with pytest.raises(ValueError, match="bad.cfg:1"):
        load_config(bad)


SMALL = {"n_train": 200, "n_dev": 10, "n_test": 10, "policies": ["none"],
         "train": {"max_steps": 150, "warmup_steps": 10, "batch_size": 16},
         "model": {"embed_dim": 16, "hidden_dim": 32, "encoder_layers": 1, "decoder_layers": 1}}


def test_train_decode_and_ece_roundtrip(tmp_path):
    cfg = write(tmp_path / "cfg.json", json.dumps({"task": {"n_source_words": 10, "n_ambiguous": 2}, **SMALL}))
    src = write(tmp_path / "src.txt", "s1 s2 s3\ns4 s5\n")
    ref = write(tmp_path / "ref.txt", "t1 t2 t3\nt4 t5\n")
    ckpt = tmp_path / "m.npz"
    assert main(["--seed", "1", "train", "--config", cfg, "--src", src, "--ref", ref, "--steps", "40",
                 "--out", str(ckpt)]) == 0
    assert ckpt.exists() and (tmp_path / "m.npz.manifest.json").exists()
    hyp = tmp_path / "hyp.txt"
    assert main(["decode", "--model", str(ckpt), "--src", src, "--ref", ref, "--beam", "2", "--out", str(hyp)]) == 0
    assert len(hyp.read_text().splitlines()) == 2
    tf = tmp_path / "tf.tsv"
    assert main(["decode", "--model", str(ckpt), "--src", src, "--ref", ref, "--mode", "training",
                 "--out", str(tf)]) == 0
    assert main(["ece", str(tf), "--mode", "training"]) == 0


def test_graduated_train_needs_first_pass(tmp_path):
    src = write(tmp_path / "src.txt", "s1 s2\n")
    ref = write(tmp_path / "ref.txt", "t1 t2\n")
    assert main(["train", "--src", src, "--ref", ref, "--smoothing", "graduated", "--steps", "2",
                 "--out", str(tmp_path / "m.npz")]) == 2
    first = tmp_path / "first.npz"
    assert main(["train", "--src", src, "--ref", ref, "--smoothing", "uniform:0.1", "--steps", "2",
                 "--out", str(first)]) == 0
    assert main(["train", "--src", src, "--ref", ref, "--smoothing", "graduated", "--steps", "2",
                 "--first-pass", str(first), "--out", str(tmp_path / "g.npz")]) == 0


def test_decode_vocab_mismatch_exit_2(tmp_path, capsys):
    src = write(tmp_path / "src.txt", "s1 s2\n")
    ref = write(tmp_path / "ref.txt", "t1 t2\n")
    ckpt = tmp_path / "m.npz"
    assert main(["train", "--src", src, "--ref", ref, "--steps", "2", "--out", str(ckpt)]) == 0
    other = write(tmp_path / "other.txt", "zz\n")
    assert main(["decode", "--model", str(ckpt), "--src", other, "--ref", ref, "--out", str(tmp_path / "h")]) == 2
    assert "zz" in capsys.readouterr().err


def test_divergence_exit_1(tmp_path, capsys):
    src = write(tmp_path / "src.txt", "s1 s2\n")
    ref = write(tmp_path / "ref.txt", "t1 t2\n")
    cfg = write(tmp_path / "cfg.json", '{"train": {"peak_lr": 1e308, "warmup_steps": 0}}')
    assert main(["train", "--config", cfg, "--src", src, "--ref", ref, "--steps", "3",
                 "--out", str(tmp_path / "m.npz")]) == 1
    assert "non-finite" in capsys.readouterr().err


def test_eval_e2e_policies_and_checkpoint_mismatch(tmp_path, capsys):
    cfg = dict(SMALL, policies=["none", "uniform:0.1"], task={"n_source_words": 10, "n_ambiguous": 2})
    path = write(tmp_path / "cfg.json", json.dumps(cfg))
    assert main(["eval-e2e", "--config", path, "--out", str(tmp_path / "b")]) == 0
    summary = (tmp_path / "b" / "summary.tsv").read_text().splitlines()
    assert [line.split("\t")[0] for line in summary[1:]] == ["none", "uniform:0.1"]
    # Both policies are classified against the first policy's dev ECE.
    col = summary[0].split("\t").index("threshold")
    assert len({line.split("\t")[col] for line in summary[1:]}) == 1
    # A checkpoint trained on another vocabulary must be rejected before evaluation.
    src = write(tmp_path / "src.txt", "q1 q2\n")
    ckpt = tmp_path / "foreign.npz"
    assert main(["train", "--src", src, "--ref", src, "--steps", "1", "--out", str(ckpt)]) == 0
    cfg["checkpoints"] = {"none": str(ckpt)}
    path = write(tmp_path / "cfg2.json", json.dumps(cfg))
    capsys.readouterr()
    assert main(["eval-e2e", "--config", path, "--out", str(tmp_path / "c")]) == 2
    assert "vocabular" in capsys.readouterr().err


def test_eval_e2e_unknown_key_exit_2(tmp_path):
    path = write(tmp_path / "cfg.json", '{"bogus": 1}')
    assert main(["eval-e2e", "--config", path, "--out", str(tmp_path / "b")]) == 2
