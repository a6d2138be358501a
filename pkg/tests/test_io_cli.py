import json

import numpy as np
import pytest

from smile import cli, io
from smile.metrics import evaluate


def run(argv, capsys=None):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr().out if capsys is not None else None
    return code, out


def files(path):
    return sorted(p.name for p in path.iterdir())


def test_cube_round_trip_is_lossless_for_f32(tmp_path, rng):
    cube = rng.random((3, 4, 5)).astype(np.float32).astype(np.float64)
    io.write_cube(tmp_path / "c", cube)
    back = io.read_cube(tmp_path / "c.json")
    assert np.array_equal(back, cube)
    header = json.loads((tmp_path / "c.json").read_text())
    assert header == {"height": 3, "width": 4, "channels": 5, "dtype": "f32",
                      "layout": "bip", "endianness": "little"}
    raw = np.frombuffer((tmp_path / "c.bin").read_bytes(), dtype="<f4")
    np.testing.assert_array_equal(raw[:5], cube[0, 0])  # bands of pixel (0, 0) first


def test_cube_rewrite_is_byte_identical(tmp_path, rng):
    cube = rng.random((2, 2, 3))
    io.write_cube(tmp_path / "a", cube)
    io.write_cube(tmp_path / "b", io.read_cube(tmp_path / "a"))
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_cube_size_mismatch(tmp_path, rng):
    io.write_cube(tmp_path / "c", rng.random((2, 2, 3)))
    (tmp_path / "c.bin").write_bytes(b"\0" * 8)
    with pytest.raises(ValueError):
        io.read_cube(tmp_path / "c")


def test_matrix_csv_exact(tmp_path, rng):
    m = rng.normal(size=(3, 7))
    io.write_matrix_csv(tmp_path / "m.csv", m, header="rows are spectra")
    assert np.array_equal(io.read_matrix_csv(tmp_path / "m.csv"), m)


def test_pgm(tmp_path):
    img = np.array([[0.0, 0.5], [0.25, 1.0]])
    io.write_pgm(tmp_path / "x.pgm", img)
    assert (tmp_path / "x.pgm").read_bytes().startswith(b"P5\n2 2\n255\n")
    np.testing.assert_array_equal(io.read_pgm(tmp_path / "x.pgm"), [[0, 128], [64, 255]])
    io.write_pgm(tmp_path / "z.pgm", np.zeros((2, 3)))
    assert not io.read_pgm(tmp_path / "z.pgm").any()


def test_json_non_finite(tmp_path):
    io.write_json(tmp_path / "j.json", {"a": float("inf"), "b": float("nan"), "c": np.float64(2)})
    assert io.read_json(tmp_path / "j.json") == {"a": "inf", "b": "nan", "c": 2.0}


@pytest.fixture
def gen_dir(tmp_path):
    out = tmp_path / "d"
    assert run(["gen", "--height", 8, "--width", 8, "--channels", 12, "--endmembers", 3,
                "--snr-db", 30, "--seed", 7, "--out", out])[0] == 0
    return out


def test_gen_outputs_and_manifest(gen_dir):
    assert files(gen_dir) == ["cube.bin", "cube.json", "manifest.json", "truth_abundance.bin",
                              "truth_abundance.json", "truth_endmembers.csv"]
    man = io.read_json(gen_dir / "manifest.json")
    assert man["seed"] == 7 and man["spec"]["p"] == 3


def test_gen_preset_and_dataset2_dims(tmp_path):
    assert run(["gen", "--preset", "dataset1", "--endmembers", 5, "--snr-db", 30, "--seed", 7,
                "--out", tmp_path / "a"])[0] == 0
    assert io.read_cube(tmp_path / "a" / "cube").shape == (64, 64, 224)
    assert io.read_json(tmp_path / "a" / "manifest.json")["seed"] == 7
    assert run(["gen", "--height", 100, "--width", 100, "--endmembers", 4, "--snr-db", 30,
                "--channels", 20, "--out", tmp_path / "b"])[0] == 0
    assert io.read_cube(tmp_path / "b" / "truth_abundance").shape == (100, 100, 4)


def test_gen_is_byte_reproducible(tmp_path, gen_dir):
    again = tmp_path / "again"
    run(["gen", "--height", 8, "--width", 8, "--channels", 12, "--endmembers", 3,
         "--snr-db", 30, "--seed", 7, "--out", again])
    for name in files(gen_dir):
        assert (gen_dir / name).read_bytes() == (again / name).read_bytes()


def test_seed_env_fallback_and_config(tmp_path, monkeypatch):
    monkeypatch.setenv("SMILE_SEED", "42")
    run(["gen", "--height", 4, "--width", 4, "--channels", 6, "--endmembers", 2,
         "--out", tmp_path / "env"])
    assert io.read_json(tmp_path / "env" / "manifest.json")["seed"] == 42
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"height": 4, "width": 4, "channels": 6, "endmembers": 2,
                               "seed": 3, "snr-db": 25}))
    run(["gen", "--config", cfg, "--seed", 5, "--out", tmp_path / "c"])
    man = io.read_json(tmp_path / "c" / "manifest.json")
    assert man["seed"] == 5 and man["spec"]["snr_db"] == 25


def test_bad_config_and_env(tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"no_such_flag": 1}))
    assert run(["gen", "--config", cfg, "--out", tmp_path / "x"])[0] == 2
    monkeypatch.setenv("SMILE_SEED", "abc")
    assert run(["gen", "--out", tmp_path / "y"])[0] == 2


def test_usage_errors_exit_2(tmp_path):
    assert run(["train", "--out", tmp_path])[0] == 2
    assert run(["nosuch"])[0] == 2
    assert run(["gen", "--endmembers", 0, "--out", tmp_path / "z"])[0] == 2


def test_train_smile_outputs_and_eval_round_trip(tmp_path, gen_dir, capsys):
    out = tmp_path / "t"
    assert run(["train", "--data", gen_dir, "--iters", 3, "--out", out, "--seed", 1])[0] == 0
    names = files(out)
    for n in ["abundance.bin", "abundance.json", "endmembers.csv", "history.csv",
              "metrics.json", "manifest.json", "hr_abundance.json", "hr_cube.json",
              "kernel.csv", "abundance_0.pgm", "abundance_2.pgm"]:
        assert n in names
    hist = io.read_rows_csv(out / "history.csv")
    assert len(hist) == 3 and set(hist[0]) == {"iteration", "L1", "L2", "L3", "L4", "total"}
    capsys.readouterr()
    code, text = run(["eval", "--pred", out, "--truth", gen_dir], capsys)
    assert code == 0
    assert json.loads(text)["rmse"] == io.read_json(out / "metrics.json")["rmse"]


def test_train_single_task(tmp_path, gen_dir):
    out = tmp_path / "s"
    assert run(["train", "--data", gen_dir, "--iters", 2, "--mode", "single_task",
                "--out", out])[0] == 0
    assert not any(n.startswith(("hr_", "kernel")) for n in files(out))
    assert io.read_json(out / "manifest.json")["ablation"] is True


def test_train_is_reproducible(tmp_path, gen_dir):
    for name in ("r1", "r2"):
        run(["train", "--data", gen_dir, "--iters", 2, "--seed", 9, "--out", tmp_path / name])
    for n in ["abundance.bin", "endmembers.csv", "history.csv", "metrics.json"]:
        assert (tmp_path / "r1" / n).read_bytes() == (tmp_path / "r2" / n).read_bytes()


def test_train_divergence_exit_3(tmp_path, gen_dir, monkeypatch):
    from smile.errors import DivergenceError

    def blow_up(cube, p, cfg, **kw):
        raise DivergenceError(4, "L1", [{"iteration": i, "L1": 1.0} for i in range(4)])

    monkeypatch.setattr(cli, "train", blow_up)
    out = tmp_path / "div"
    assert run(["train", "--data", gen_dir, "--out", out])[0] == 3
    assert len(io.read_rows_csv(out / "history.csv")) == 4
    assert io.read_json(out / "manifest.json")["diverged"] == {"iteration": 4, "term": "L1"}


def test_train_collapsed_estimate_still_writes(tmp_path, gen_dir):
    out = tmp_path / "collapse"
    code, _ = run(["train", "--data", gen_dir, "--iters", 20, "--optimizer", "sgd", "--lr", 1e6,
                   "--raw-losses", "--no-projection", "--out", out])
    assert code in (0, 3)
    assert (out / "history.csv").exists()


def test_eval_examples(tmp_path, gen_dir, capsys):
    capsys.readouterr()
    code, text = run(["eval", "--pred-abundance", gen_dir / "truth_abundance",
                      "--pred-endmembers", gen_dir / "truth_endmembers.csv",
                      "--truth", gen_dir], capsys)
    rep = json.loads(text)
    assert code == 0 and rep["rmse"] == 0 and rep["aad"] == pytest.approx(0, abs=1e-5)
    assert rep["sad_mean"] == pytest.approx(0, abs=1e-5)
    e = io.read_matrix_csv(gen_dir / "truth_endmembers.csv")
    io.write_matrix_csv(tmp_path / "shuf.csv", e[[2, 0, 1]])
    code, text = run(["eval", "--pred-abundance", gen_dir / "truth_abundance",
                      "--pred-endmembers", tmp_path / "shuf.csv", "--truth", gen_dir], capsys)
    assert json.loads(text)["sad_mean"] == pytest.approx(0, abs=1e-5)


def test_eval_matches_library(tmp_path, capsys, rng):
    ea, ta = rng.random((5, 4, 3)), rng.random((5, 4, 3))
    ee, te = rng.random((3, 9)), rng.random((3, 9))
    io.write_cube(tmp_path / "ea", ea)
    io.write_cube(tmp_path / "ta", ta)
    io.write_matrix_csv(tmp_path / "ee.csv", ee)
    io.write_matrix_csv(tmp_path / "te.csv", te)
    capsys.readouterr()
    _, text = run(["eval", "--pred-abundance", tmp_path / "ea", "--pred-endmembers", tmp_path / "ee.csv",
                   "--truth-abundance", tmp_path / "ta", "--truth-endmembers", tmp_path / "te.csv"],
                  capsys)
    got = json.loads(text)
    ref = evaluate(io.quantize(ea), ee, io.quantize(ta), te)
    for k in ("rmse", "aad", "sad_mean"):
        assert abs(got[k] - getattr(ref, k)) <= 1e-12


def test_eval_shape_mismatch(tmp_path, rng):
    io.write_cube(tmp_path / "ea", rng.random((5, 4, 3)))
    io.write_cube(tmp_path / "ta", rng.random((5, 4, 2)))
    io.write_matrix_csv(tmp_path / "e.csv", rng.random((3, 9)))
    code, _ = run(["eval", "--pred-abundance", tmp_path / "ea", "--pred-endmembers", tmp_path / "e.csv",
                   "--truth-abundance", tmp_path / "ta", "--truth-endmembers", tmp_path / "e.csv"])
    assert code == 2


def test_affinity_command(tmp_path, gen_dir, capsys):
    out = tmp_path / "a"
    code, text = run(["affinity", "--data", gen_dir, "--iters", 3, "--lr", 0, "--optimizer", "adam",
                      "--out", out], capsys)
    assert code == 0
    summary = io.read_json(out / "summary.json")
    assert 0.0 <= summary["conflict_free_fraction"] <= 1.0
    assert summary["config"]["optimizer"] == "sgd"
    rows = io.read_rows_csv(out / "affinity_trace.csv")
    assert len(rows) == 3 and all(float(r["affinity"]) == 0.0 for r in rows)
    assert "lemma1" in json.loads(text)


def test_simplex_grid():
    grid = cli.simplex_grid(0.25)
    assert len(grid) == 35
    assert all(abs(sum(w) - 1) < 1e-12 and min(w) >= 0 for w in grid)
    assert len(cli.simplex_grid(0.1)) == 286
    with pytest.raises(cli.UsageError):
        cli.simplex_grid(0.3)


def test_sweep_command(tmp_path, gen_dir):
    out = tmp_path / "sw"
    assert run(["sweep", "--data", gen_dir, "--iters", 1, "--step", 0.5, "--out", out])[0] == 0
    rows = io.read_rows_csv(out / "sweep.csv")
    assert len(rows) == 10
    assert all(r["status"] == "ok" and r["rmse"] for r in rows)
