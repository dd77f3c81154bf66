import copy
import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aapb.harness.config import ConfigError, RunConfig, load_config, parse_config
from aapb.harness.experiment import _cells, cell_key, run_toy_experiment, summarize, train_or_load
from aapb.harness.oracle import golden_section, run_oracle_suite
from aapb.harness.plots import emit_plots, panel_limits, render_panels
from aapb.harness.records import (
    METRIC_COLUMNS,
    TRACE_COLUMNS,
    RunRecord,
    atomic_write,
    csv_text,
    read_csv,
    read_samples,
    write_csv,
    write_samples,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def small_config_dict(**overrides):
    d = {
        "seeds": [0, 1],
        "schedule": {"num_steps": 100, "sample_steps": 10},
        "train": {"steps": 40, "batch_size": 64, "val_size": 128},
        "net": {"hidden_width": 16, "depth": 2, "time_embed_dim": 8, "cond_embed_dim": 4},
        "guidance": {"w": [3.0], "gammas": [0.0, 0.5, 1.0]},
        "evaluation": {"n_samples": 48, "n_target": 48},
        "run": {"plots": True},
    }
    for k, v in overrides.items():
        d.setdefault(k, {}).update(v) if isinstance(v, dict) else d.__setitem__(k, v)
    return d


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    cfg = parse_config(small_config_dict())
    out = tmp_path_factory.mktemp("small")
    return cfg, run_toy_experiment(cfg, out)


def test_shipped_configs_parse():
    default = load_config(CONFIGS / "toy.toml")
    assert default.hash() == RunConfig().hash()
    sweep = load_config(CONFIGS / "toy_wsweep.toml")
    assert sweep.sweep.w_values == (1.5, 2.0, 3.0, 5.0, 7.0)


@pytest.mark.parametrize(
    "bad",
    [
        {"guidance": {"w": [3.0], "gamma": [0.1]}},
        {"bogus": 1},
        {"guidance": {"gammas": [0.0, 0.5, 0.5]}},
        {"guidance": {"gammas": [0.5, 0.1]}},
        {"guidance": {"w": [0.0]}},
        {"seeds": []},
        {"seeds": [1, 1]},
        {"train": {"enabled": False}},
        {"train": {"p_drop": 1.5}},
        {"schedule": {"kind": "quadratic"}},
        {"dataset": {"components": [{"weight": 1.0, "mean": [0, 0], "sigma": 1}]}},
        {"schedule": "linear"},
    ],
)
def test_bad_configs_rejected(bad):
    with pytest.raises(ConfigError):
        parse_config(bad)


def test_negative_gamma_grid_allowed():
    cfg = parse_config({"guidance": {"gammas": [-1.0, -0.5, 0.0, 0.5]}})
    assert cfg.sweep.gammas[0] == -1.0


def test_bad_toml_is_config_error(tmp_path):
    p = tmp_path / "x.toml"
    p.write_text("seeds = [0,\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_missing_checkpoint_is_file_error(tmp_path):
    cfg = parse_config({"train": {"enabled": False, "checkpoint": str(tmp_path / "none.ckpt")}})
    with pytest.raises(FileNotFoundError):
        train_or_load(cfg)


def test_hash_ignores_paths_and_threads():
    a = RunConfig()
    b = a.with_overrides(output_dir="/elsewhere", threads=4)
    assert a.hash() == b.hash()
    assert a.hash() != a.with_overrides(seed=7).hash()


def test_deterministic_mode_forces_single_thread(monkeypatch):
    monkeypatch.setenv("AAPB_DETERMINISTIC", "1")
    cfg = RunConfig().with_overrides(threads=8)
    assert cfg.threads == 1 and cfg.train.grad_workers == 1


cells = st.one_of(
    st.integers(-(2**62), 2**62),
    st.floats(allow_nan=False),
    st.text(alphabet=st.characters(min_codepoint=32, blacklist_categories=("Cs", "Cc")), min_size=1).filter(
        lambda s: _not_numeric(s)
    ),
    st.none(),
)


def _not_numeric(s):
    try:
        float(s)
    except ValueError:
        return True
    return False


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(cells, cells, cells), max_size=10))
def test_csv_round_trip(rows):
    import tempfile

    with tempfile.TemporaryDirectory() as d:
        path = write_csv(Path(d) / "t.csv", ("a", "b", "c"), rows)
        back = read_csv(path)
    assert len(back) == len(rows)
    for got, want in zip(back, rows):
        for key, value in zip("abc", want):
            if isinstance(value, float):
                assert got[key] == value or (math.isinf(value) and got[key] == value)
            else:
                assert got[key] == value


def test_samples_round_trip_bitwise(tmp_path):
    pts = np.random.default_rng(0).standard_normal((50, 2)) * 1e3
    write_samples(tmp_path / "s.csv", pts)
    assert read_samples(tmp_path / "s.csv").tobytes() == pts.tobytes()


def test_atomic_write_leaves_no_temp_files(tmp_path):
    atomic_write(tmp_path / "a" / "f.txt", "hello")
    assert [p.name for p in (tmp_path / "a").iterdir()] == ["f.txt"]


def test_golden_section_vectorised():
    centres = np.array([-3.0, 0.2, 5.5])
    got = golden_section(lambda x: (x - centres) ** 2 + 1.0, np.full(3, -1.0), np.full(3, 1.0))
    np.testing.assert_allclose(got, centres, atol=1e-9)


def test_sweep_is_complete(small_run):
    cfg, rec = small_run
    assert len(rec.metrics) == len(_cells(cfg)) == 2 * (3 + 1)
    combos = {(r["w"], r["seed"], r["gamma_mode"], None if r["gamma_mode"] == "adaptive" else r["gamma"]) for r in rec.metrics}
    assert len(combos) == len(rec.metrics)
    assert set(read_csv(Path(rec.out_dir) / "metrics.csv")[0]) == set(METRIC_COLUMNS)


def test_every_written_csv_reparses(small_run):
    _, rec = small_run
    out = Path(rec.out_dir)
    for path in out.rglob("*.csv"):
        rows = read_csv(path)
        assert rows, path
    trace = read_csv(next((out / "traces").glob("*.csv")))
    assert tuple(trace[0]) == TRACE_COLUMNS
    assert metrics_equal(read_csv(out / "metrics.csv"), rec.metrics)


def metrics_equal(a, b):
    def norm(v):
        return "nan" if isinstance(v, float) and math.isnan(v) else v

    return [{k: norm(v) for k, v in r.items()} for r in a] == [
        {k: norm(r[k]) for k in METRIC_COLUMNS} for r in b
    ]


def test_record_hashes_verify(small_run, tmp_path):
    _, rec = small_run
    loaded = RunRecord.load(rec.out_dir)
    assert loaded.content_hash() == rec.content_hash()
    assert loaded.recomputed_config_hash() == rec.config_hash
    doc = json.loads((Path(rec.out_dir) / "record.json").read_text())
    doc["metrics"][0]["w2"] = 123.0
    (tmp_path / "record.json").write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="content hash"):
        RunRecord.load(tmp_path)


def test_end_to_end_determinism(small_run, tmp_path):
    cfg, rec = small_run
    again = run_toy_experiment(cfg.with_overrides(threads=2), tmp_path)
    assert again.content_hash() == rec.content_hash()


def test_summary_has_one_row_per_setting(small_run):
    _, rec = small_run
    summary = summarize(rec.metrics)
    assert len(summary) == 4 and all(s["n_seeds"] == 2 for s in summary)


def test_plots_written_and_reproducible(small_run, tmp_path):
    _, rec = small_run
    first = {p.name: p.read_bytes() for p in emit_plots(rec, tmp_path / "one")}
    second = {p.name: p.read_bytes() for p in emit_plots(rec, tmp_path / "two")}
    assert first == second
    assert {"panel_a_training.svg", "panel_b_fixed_w3.svg", "panel_c_adaptive_w3.svg", "panel_d_w2_w3.svg"} <= set(first)
    assert all(blob.lstrip().startswith(b"<?xml") for blob in first.values())


def test_scatter_panels_cover_both_means(small_run):
    _, rec = small_run
    figs = render_panels(rec)
    for name, fig in figs.items():
        if name.startswith("panel_d"):
            continue
        ax = fig.axes[0]
        for mean in ((0.0, -6.0), (0.0, 3.0)):
            assert ax.get_xlim()[0] < mean[0] < ax.get_xlim()[1]
            assert ax.get_ylim()[0] < mean[1] < ax.get_ylim()[1]
    (xlo, xhi), (ylo, yhi) = panel_limits([(0, -6), (0, 3)])
    assert ylo < -6 and yhi > 3


def test_empty_metrics_write_nothing(small_run, tmp_path):
    _, rec = small_run
    empty = copy.copy(rec)
    empty.metrics = []
    with pytest.raises(ValueError):
        emit_plots(empty, tmp_path)
    assert not (tmp_path / "plots").exists()


def test_unwritable_output_dir(small_run, tmp_path):
    _, rec = small_run
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit_plots(rec, blocker)


def test_oracle_report_formats():
    rep = run_oracle_suite(quick=True)
    assert rep.passed
    rows = csv_text(("x",), [])  # header only
    assert rows == "x\n"
    lines = rep.to_csv().splitlines()
    assert lines[0].startswith("name,passed,measured") and len(lines) == len(rep.checks) + 1
    assert rep.summary().splitlines()[-1] == f"{len(rep.checks)}/{len(rep.checks)} checks passed"


def test_oracle_negative_control_fails_gamma_checks():
    rep = run_oracle_suite(negative_control="flip_gamma_sign", quick=True)
    failed = {c.name for c in rep.checks if not c.passed}
    assert "gamma_star_vs_golden_section" in failed
    assert not rep.passed
    with pytest.raises(ValueError):
        run_oracle_suite(negative_control="nope")


@pytest.mark.slow
def test_full_oracle_suite_passes():
    rep = run_oracle_suite()
    assert rep.passed, rep.summary()
