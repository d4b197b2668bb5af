import json

import numpy as np

from megloc import NumericError, read_dataset, read_lead_field, read_model
from megloc.cli import main


def run_cli(*args):
    return main(list(args))


def base_args(tmp_path, *extra):
    return [
        "--out", str(tmp_path),
        "--set", "geometry.sensors=16",
        "--set", "geometry.sources=30",
        *extra,
    ]


def test_gen_geometry_is_byte_deterministic(tmp_path, capsys):
    a_dir = tmp_path / "a"
    b_dir = tmp_path / "b"
    assert run_cli("gen-geometry", "--out", str(a_dir), "--set", "geometry.sources=25") == 0
    assert run_cli("gen-geometry", "--out", str(b_dir), "--set", "geometry.sources=25") == 0
    assert (a_dir / "lead_field.megl").read_bytes() == (b_dir / "lead_field.megl").read_bytes()
    out = capsys.readouterr().out
    assert "M=306" in out and "P=25" in out


def test_malformed_config_exits_2_without_partial_file(tmp_path, capsys):
    config = tmp_path / "broken.yaml"
    config.write_text("geometry: [not, a, mapping\n")
    rc = run_cli("gen-geometry", "--config", str(config), "--out", str(tmp_path / "out"))
    assert rc == 2
    assert not (tmp_path / "out" / "lead_field.megl").exists()


def test_unknown_key_exits_2_and_names_it(tmp_path, capsys):
    config = tmp_path / "bad.yaml"
    config.write_text("geometry:\n  sensor_count: 10\n")
    rc = run_cli("gen-geometry", "--config", str(config), "--out", str(tmp_path))
    assert rc == 2
    assert "geometry.sensor_count" in capsys.readouterr().err


def test_unknown_set_key_exits_2(tmp_path, capsys):
    rc = run_cli("gen-geometry", "--out", str(tmp_path), "--set", "geometry.bogus=3")
    assert rc == 2
    assert "geometry.bogus" in capsys.readouterr().err


def test_localize_noiseless_prints_true_grid_point(tmp_path, capsys):
    assert run_cli("gen-geometry", *base_args(tmp_path)) == 0
    assert (
        run_cli(
            "gen-data", *base_args(tmp_path),
            "--set", "data.count=2",
            "--set", "data.snr_db=noiseless",
            "--set", "data.n_samples=1",
        )
        == 0
    )
    capsys.readouterr()
    assert run_cli("localize", *base_args(tmp_path)) == 0
    record = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    dataset = read_dataset(tmp_path / "data.megd")
    true_position = dataset.targets[0][0]
    np.testing.assert_allclose(record["positions"][0], true_position, atol=1e-7)
    assert record["localizer"] == "rap_music"


def test_train_zero_steps_writes_initialization(tmp_path):
    assert run_cli("gen-geometry", *base_args(tmp_path)) == 0
    assert (
        run_cli(
            "train", *base_args(tmp_path),
            "--set", "train.steps=0",
            "--set", "data.q=1",
            "--set", "data.n_samples=1",
        )
        == 0
    )
    from megloc import build_mlp, lead_field_fingerprint
    from megloc.rng import derive_seed

    lead_field = read_lead_field(tmp_path / "lead_field.megl")
    model, fingerprint = read_model(tmp_path / "model.megm")
    assert fingerprint == lead_field_fingerprint(lead_field)
    expected = build_mlp(16, 1, seed=derive_seed(3, "init"), normalize_input=True)
    for got, want in zip(model.layers, expected.layers):
        assert np.array_equal(got.weights, want.weights)
        assert np.array_equal(got.biases, want.biases)
    history = (tmp_path / "history.csv").read_text().splitlines()
    assert history == ["step,loss,reg_term"]


def test_sweep_rerun_is_byte_identical(tmp_path):
    assert run_cli("gen-geometry", *base_args(tmp_path)) == 0
    sweep_args = base_args(
        tmp_path,
        "--set", "sweep.trials=4",
        "--set", "sweep.snr_values=[0.0, 10.0]",
        "--set", "sweep.correlation_values=[0.0]",
        "--set", "sweep.q=2",
        "--set", "sweep.n_samples=8",
    )
    assert run_cli("sweep", *sweep_args) == 0
    first = (tmp_path / "sweep.csv").read_bytes()
    assert run_cli("sweep", *sweep_args) == 0
    assert (tmp_path / "sweep.csv").read_bytes() == first


def test_perturb_sweep_has_rho_rows(tmp_path):
    assert run_cli("gen-geometry", *base_args(tmp_path)) == 0
    assert (
        run_cli(
            "perturb-sweep", *base_args(tmp_path),
            "--set", "sweep.trials=3",
            "--set", "sweep.snr_values=[10.0]",
            "--set", "sweep.correlation_values=[0.0]",
            "--set", "sweep.n_samples=8",
            "--set", "sweep.rhos=[0.05]",
        )
        == 0
    )
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("condition_rho,")
    assert len(lines) == 3  # header + rho 0 baseline + rho 0.05


def test_fingerprint_mismatch_exits_3_with_both_hashes(tmp_path, capsys):
    assert run_cli("gen-geometry", *base_args(tmp_path)) == 0
    assert (
        run_cli(
            "gen-data", *base_args(tmp_path),
            "--set", "data.count=1", "--set", "data.n_samples=1",
        )
        == 0
    )
    # regenerate geometry with another seed: dataset now stale
    assert run_cli("gen-geometry", *base_args(tmp_path), "--set", "geometry.seed=9") == 0
    capsys.readouterr()
    rc = run_cli("localize", *base_args(tmp_path))
    assert rc == 3
    err = capsys.readouterr().err
    assert "fingerprint" in err
    assert len([w for w in err.split() if len(w) == 16 and all(c in "0123456789abcdef" for c in w)]) >= 2


def test_numeric_failures_exit_4(tmp_path, monkeypatch):
    import megloc.cli as cli

    def boom(args, config):
        raise NumericError("synthetic failure")

    monkeypatch.setitem(cli._DISPATCH, "gen-geometry", boom)
    assert run_cli("gen-geometry", "--out", str(tmp_path)) == 4


def test_bench_time_writes_timing_csv(tmp_path):
    assert run_cli("gen-geometry", *base_args(tmp_path)) == 0
    assert (
        run_cli(
            "bench-time", *base_args(tmp_path),
            "--set", "bench.q_values=[1]",
            "--set", "bench.n_samples_values=[1]",
            "--set", "bench.repeats=10",
            "--set", "bench.algorithms=[rap_music]",
        )
        == 0
    )
    lines = (tmp_path / "timing.csv").read_text().splitlines()
    assert lines[0] == "algorithm,q,n_samples,median_ms,repeats"
    assert lines[1].startswith("rap_music,1,1,")


def test_config_echo_is_printed(tmp_path, capsys):
    run_cli("gen-geometry", *base_args(tmp_path))
    out = capsys.readouterr().out
    assert "resolved configuration" in out
    assert "sensors: 16" in out
