import dataclasses
import json
import math

import numpy as np
import pytest

from mrsav.experiments import (
    CheckpointError,
    ConfigError,
    ExperimentConfig,
    MissingReferenceError,
    TailSpillError,
    bins_table,
    check_invariants,
    compare_orders,
    dt_table,
    initial_data_table,
    load_checkpoint,
    load_reference,
    make_reference,
    run_experiment,
    terminal_time_table,
    write_table_csv,
    write_table_json,
)


def small_config(**overrides):
    base = {
        "run": {"horizon": 25.0, "seed": 7},
        "histogram": {"bins": 2000},
    }
    base.update(overrides)
    return ExperimentConfig.from_dict(base)


@pytest.fixture(scope="module")
def medium_ref(tmp_path_factory):
    """A T=2000 reference shared by the table tests."""
    outdir = tmp_path_factory.mktemp("ref")
    cfg = ExperimentConfig.from_dict({
        "run": {"horizon": 2000.0, "seed": 3},
        "histogram": {"bins": 16000},
    })
    path = make_reference(cfg, outdir)
    return cfg, outdir, path


# -- configuration ------------------------------------------------------------

def test_config_roundtrip_identity(tmp_path):
    cfg = ExperimentConfig.from_dict({
        "model": {"j": 8, "forcing": -10.0},
        "scheme": {"order": "be", "dt": 0.001, "gamma": 500.0, "init_mode": "crude"},
        "run": {"horizon": 10.0, "seed": 123, "init_range": 12.0, "perturbation_pct": 2.0},
        "histogram": {"bins": 100, "lo": -20.0, "hi": 20.0, "coordinate_index": 3,
                      "include_tails": True},
        "reference": {"path": "somewhere.npz"},
        "output": {"directory": "out", "formats": ["json"]},
    })
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert again.hash() == cfg.hash()
    path = tmp_path / "cfg.json"
    cfg.dump(path)
    assert ExperimentConfig.from_file(path) == cfg


def test_config_unknown_keys():
    with pytest.raises(ConfigError, match="unknown config section 'modle'"):
        ExperimentConfig.from_dict({"modle": {}})
    with pytest.raises(ConfigError, match="unknown key 'dtt' in section 'scheme'"):
        ExperimentConfig.from_dict({"scheme": {"dtt": 0.1}})


def test_config_field_validation_messages():
    with pytest.raises(ConfigError, match="scheme.dt"):
        ExperimentConfig.from_dict({"scheme": {"dt": -1.0}})
    with pytest.raises(ConfigError, match="coordinate_index"):
        ExperimentConfig.from_dict({"histogram": {"coordinate_index": 9}})
    with pytest.raises(ConfigError, match="model.j"):
        ExperimentConfig.from_dict({"model": {"j": 2}})
    with pytest.raises(ConfigError, match="not valid JSON"):
        ExperimentConfig.from_file(__file__)


def test_draw_initial_deterministic():
    cfg = small_config()
    a, b = cfg.draw_initial(), cfg.draw_initial()
    np.testing.assert_array_equal(a, b)
    assert np.all(np.abs(a) <= cfg.run.init_range)
    pert = cfg.draw_initial(perturbed=True)
    assert not np.array_equal(a, pert)
    zero = cfg.replace(run=dataclasses.replace(cfg.run, perturbation_pct=0.0))
    np.testing.assert_array_equal(zero.draw_initial(perturbed=True), zero.draw_initial())


# -- runner -------------------------------------------------------------------

def test_run_step_count_and_determinism():
    cfg = small_config()
    a = run_experiment(cfg)
    assert a.n_steps == 25 * 1024  # floor(T / dt) with dt = 2^-10
    assert a.histogram.total == a.n_steps
    b = run_experiment(cfg)
    assert np.array_equal(a.histogram.counts, b.histogram.counts)
    assert a.moments == b.moments
    assert np.array_equal(a.final_state.u_curr, b.final_state.u_curr)


def test_run_snapshots_are_prefix_statistics():
    cfg = small_config()
    full = run_experiment(cfg, snapshot_times=[12.5, 25.0])
    assert [t for t, _ in full.snapshots] == [12.5, 25.0]
    half = run_experiment(cfg.replace(run=dataclasses.replace(cfg.run, horizon=12.5)))
    np.testing.assert_array_equal(full.snapshots[0][1].counts, half.histogram.counts)
    np.testing.assert_array_equal(full.snapshots[1][1].counts, full.histogram.counts)


def test_interrupted_resume_bitwise_identical(tmp_path):
    cfg = small_config()
    ckpt = tmp_path / "ckpt.npz"
    uninterrupted = run_experiment(cfg)
    partial = run_experiment(cfg, checkpoint_path=ckpt, stop_after=12.0)
    assert partial.n_steps < uninterrupted.n_steps
    resumed = run_experiment(cfg, resume=ckpt)
    assert np.array_equal(resumed.histogram.counts, uninterrupted.histogram.counts)
    assert resumed.moments == uninterrupted.moments
    assert np.array_equal(resumed.final_state.u_curr, uninterrupted.final_state.u_curr)
    assert resumed.final_state.q_curr == uninterrupted.final_state.q_curr


def test_resume_rejects_other_config(tmp_path):
    cfg = small_config()
    ckpt = tmp_path / "ckpt.npz"
    run_experiment(cfg, checkpoint_path=ckpt, stop_after=5.0)
    other = small_config(run={"horizon": 25.0, "seed": 8})
    with pytest.raises(CheckpointError, match="different config"):
        run_experiment(other, resume=ckpt)


def test_checkpoint_version_rejected(tmp_path):
    cfg = small_config()
    ckpt = tmp_path / "ckpt.npz"
    run_experiment(cfg, checkpoint_path=ckpt)
    payload = dict(np.load(ckpt, allow_pickle=False))
    payload["version"] = np.int64(99)
    np.savez(tmp_path / "bad.npz", **payload)
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "bad.npz")


def test_early_stop_requires_checkpoint_path():
    with pytest.raises(ConfigError):
        run_experiment(small_config(), stop_after=5.0)


def test_tail_spill_fails_loudly():
    cfg = small_config(histogram={"bins": 100, "lo": -2.0, "hi": 2.0})
    with pytest.raises(TailSpillError):
        run_experiment(cfg)


def test_non_l96_config_is_impossible():
    # the runner is explicit about requiring the compiled fast path
    cfg = small_config()
    model = cfg.build_model()
    from mrsav.kernels import fast_path_ok
    assert fast_path_ok(model)


# -- reference store ----------------------------------------------------------

def test_reference_roundtrip(medium_ref):
    cfg, outdir, path = medium_ref
    ref = load_reference(path)
    assert ref.config_hash == cfg.hash()  # metadata round-trip
    assert ref.histogram.bins == 16000
    rerun = run_experiment(cfg)
    assert ref.mean == rerun.moments.mean
    assert ref.variance == rerun.moments.variance
    np.testing.assert_array_equal(ref.histogram.counts, rerun.histogram.counts)


def test_reference_missing_error(tmp_path):
    with pytest.raises(MissingReferenceError, match="make-reference"):
        load_reference(tmp_path / "nope.npz")
    with pytest.raises(MissingReferenceError):
        terminal_time_table(small_config(), [10.0, 20.0], tmp_path)


# -- tables -------------------------------------------------------------------

def test_terminal_time_table(medium_ref):
    cfg, outdir, _ = medium_ref
    rows = terminal_time_table(cfg, [250.0, 500.0, 1000.0, 2000.0], outdir)
    assert [r.parameter for r in rows] == [250.0, 500.0, 1000.0, 2000.0]
    js = [r.js for r in rows]
    tv = [r.tv for r in rows]
    assert all(a > b for a, b in zip(js, js[1:]))  # distances shrink with T
    assert all(a > b for a, b in zip(tv, tv[1:]))
    # the max-T snapshot is the reference itself (shared seed and dt)
    assert js[-1] == 0.0 and tv[-1] == 0.0
    # order columns reproduce exactly from the distance columns
    for prev, row in zip(rows, rows[1:]):
        if row.js > 0 and prev.js > 0:
            assert row.order_js == math.log2(prev.js / row.js)
            assert row.order_tv == math.log2(prev.tv / row.tv)


def test_bins_table_monotone(medium_ref):
    cfg, outdir, _ = medium_ref
    rows = bins_table(cfg, [125, 250, 500, 1000, 2000], outdir, window=5)
    js = [r.js for r in rows]
    tv = [r.tv for r in rows]
    assert all(a > b for a, b in zip(js, js[1:]))  # finer bins, smaller distance
    assert all(a > b for a, b in zip(tv, tv[1:]))


def test_bins_table_self_zero_with_window_one(medium_ref):
    cfg, outdir, _ = medium_ref
    (row,) = bins_table(cfg, [16000], outdir, window=1)
    assert row.js == 0.0 and row.tv == 0.0


def test_bins_table_divisibility(medium_ref):
    cfg, outdir, _ = medium_ref
    with pytest.raises(ConfigError):
        bins_table(cfg, [7000], outdir)


def test_dt_table_orders_and_saturation():
    cfg = ExperimentConfig.from_dict({
        "run": {"horizon": 2000.0, "seed": 3},
        "histogram": {"bins": 8000},
    })
    ladder = [2.0**-5, 2.0**-6, 2.0**-7, 2.0**-8]
    rows = dt_table(cfg, ladder, reference_dt=2.0**-11)
    assert [r.parameter for r in rows] == sorted(ladder, reverse=True)
    # coarsest transitions show the half-order TV decay; orders then fall off
    assert 0.3 <= rows[1].order_tv <= 0.7
    assert rows[-1].order_tv < rows[1].order_tv
    for row in rows:
        assert row.js > 0 and row.tv > 0


def test_dt_table_reference_in_ladder_gives_zero():
    cfg = ExperimentConfig.from_dict({
        "run": {"horizon": 100.0, "seed": 5},
        "histogram": {"bins": 500},
    })
    rows = dt_table(cfg, [2.0**-6, 2.0**-7], reference_dt=2.0**-7)
    assert rows[-1].parameter == 2.0**-7
    assert rows[-1].js == 0.0 and rows[-1].tv == 0.0
    with pytest.raises(ValueError):
        dt_table(cfg, [0.01, 0.03])  # not a factor-2 ladder


def test_dt_table_parallel_matches_serial():
    cfg = ExperimentConfig.from_dict({
        "run": {"horizon": 50.0, "seed": 5},
        "histogram": {"bins": 500},
    })
    ladder = [2.0**-6, 2.0**-7, 2.0**-8]
    serial = dt_table(cfg, ladder)
    parallel = dt_table(cfg, ladder, jobs=2)
    assert serial == parallel


def test_initial_data_table_properties():
    cfg = ExperimentConfig.from_dict({
        "run": {"horizon": 400.0, "seed": 3},
        "histogram": {"bins": 4000},
    })
    rows = initial_data_table(cfg, [100.0, 200.0, 400.0])
    assert all(r.js > 0 and r.tv > 0 for r in rows)
    assert rows[-1].js < rows[0].js and rows[-1].tv < rows[0].tv
    # zero perturbation -> identical trajectories -> exactly zero distances
    zero = cfg.replace(run=dataclasses.replace(cfg.run, perturbation_pct=0.0))
    zrows = initial_data_table(zero, [100.0])
    assert zrows[0].js == 0.0 and zrows[0].tv == 0.0


def test_initial_data_symmetry():
    # swapping the two runs leaves JS and TV unchanged: both are symmetric
    from mrsav import js_divergence, tv_distance
    cfg = ExperimentConfig.from_dict({
        "run": {"horizon": 100.0, "seed": 3},
        "histogram": {"bins": 1000},
    })
    base = run_experiment(cfg)
    pert = run_experiment(cfg, perturbed=True)
    p, q = base.histogram.normalize().p, pert.histogram.normalize().p
    assert js_divergence(p, q) == pytest.approx(js_divergence(q, p), abs=1e-16)
    assert tv_distance(p, q) == tv_distance(q, p)


# -- scheme comparison --------------------------------------------------------

def test_compare_orders_threshold_one():
    cfg = ExperimentConfig.from_dict({
        "run": {"horizon": 200.0, "seed": 5},
        "histogram": {"bins": 500},
    })
    report = compare_orders(cfg, threshold=1.0, reference_moments=(-2.3079, 22.354))
    for entry in report.entries:
        # essentially immediate: a few correlation times for the running
        # mean to forget the initial data, vanishing relative to the run
        assert entry.mean_entry_time <= 0.1 * cfg.run.horizon
        assert entry.variance_entry_time <= 0.1 * cfg.run.horizon


def test_compare_orders_requires_reference(tmp_path):
    cfg = small_config()
    with pytest.raises(MissingReferenceError):
        compare_orders(cfg, outdir=tmp_path)


# -- invariant battery --------------------------------------------------------

def test_check_invariants_default_config_passes():
    report = check_invariants(small_config())
    assert report.passed, report.to_json()
    names = {c.name for c in report.checks}
    assert "nonlinearity_skew_symmetry" in names
    assert "energy_envelope_dt_4" in names
    assert "q_mean_reversion" in names
    parsed = json.loads(report.to_json())
    assert all(isinstance(c["passed"], bool) for c in parsed)


# -- table output -------------------------------------------------------------

def test_table_writers(tmp_path, medium_ref):
    cfg, outdir, _ = medium_ref
    rows = bins_table(cfg, [1000, 2000], outdir, window=5)
    csv_path = write_table_csv(rows, tmp_path / "t.csv")
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "parameter,js,tv,order_js,order_tv"
    assert len(lines) == 3
    json_path = write_table_json(rows, tmp_path / "t.json", cfg, "table_bins", {"window": 5})
    payload = json.loads(json_path.read_text())
    assert payload["config_hash"] == cfg.hash()
    assert payload["window"] == 5
    assert len(payload["rows"]) == 2
