import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphlms.errors import ConfigError, DatasetError, DivergenceError
from graphlms.harness.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK, main
from graphlms.harness.config import ExperimentConfig, Variant, dumps_config, load_config, loads_config
from graphlms.harness.montecarlo import (
    build_scenario,
    run_monte_carlo,
    simulate_variant,
    theory_model,
    write_outputs,
)
from graphlms.harness.presets import FIG5_COEFFICIENTS, get_preset, preset_names, scenario_library
from graphlms.harness.reconstruct import (
    TemperatureDataset,
    UndefinedNMSEError,
    ingest_temperature_csv,
    nmse,
    reconstruct_experiment,
    sampling_mask,
    synthetic_temperature,
    write_dataset,
)
from graphlms.signal import make_rng
from graphlms.theory import steady_state_msd

TINY = """
[graph]
generator = knn
nodes = 8
k = 3

[filter]
order = 2

[algorithm:plms]
name = plms
mu = 0.05

[run]
runs = 4
iters = 150
seed = 2
"""


def tiny(**kw) -> ExperimentConfig:
    return loads_config(TINY).with_overrides(**kw)


# -- config ----------------------------------------------------------------------


@pytest.mark.parametrize("name", preset_names())
def test_preset_round_trips_through_text(name):
    cfg = get_preset(name)
    back = loads_config(dumps_config(cfg))
    assert dumps_config(back) == dumps_config(cfg)
    for a, b in zip(cfg.stages, back.stages):
        np.testing.assert_array_equal(a.coefficients, b.coefficients)
        assert a.clusters == b.clusters


def test_stage_rows_with_spaced_separator():
    text = TINY.replace("order = 2", "order = 2\n\n[stage:0]\nclusters = 1-4, 5-8\n"
                        "coefficients = 0.5 0.4 ; 0.3 0.1  # trailing comment")
    cfg = loads_config(text)
    np.testing.assert_array_equal(cfg.stages[0].coefficients, [[0.5, 0.4], [0.3, 0.1]])
    np.testing.assert_array_equal(cfg.stages[0].labels(8), [0] * 4 + [1] * 4)


@pytest.mark.parametrize("edit, match", [
    (("generator = knn", "generator = lattice"), "generator"),
    (("name = plms", "name = rls"), "rls"),
    (("runs = 4", "runs = 0"), "runs"),
    (("iters = 150", "iters = 0"), "iters"),
    (("order = 2", "order = 2\ncoefficients = 1 2 3"), "2 entries"),
    (("[algorithm:plms]", "[algo]"), "algorithm"),
    (("mu = 0.05", "mu = fast"), "fast"),
    (("generator = knn", "generator = file\nfile = /nonexistent/g.txt"), "does not exist"),
])
def test_config_errors(edit, match):
    with pytest.raises(ConfigError, match=match):
        loads_config(TINY.replace(*edit))


def test_config_stage_must_cover_all_nodes():
    text = TINY.replace("order = 2", "order = 2\n[stage:0]\nclusters = 1-3, 5-8\ncoefficients = 1 0; 0 1")
    with pytest.raises(ConfigError, match=r"\[3\]"):
        loads_config(text)


def test_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")


def test_config_clustering_params_validated():
    with pytest.raises(ConfigError, match="clustering"):
        loads_config(TINY + "\n[clustering]\nnu = 1.5\n")


# -- presets ---------------------------------------------------------------------


def test_preset_fig5():
    cfg = get_preset("fig5")
    np.testing.assert_array_equal(cfg.stages[0].coefficients,
                                  [[0.5, 0.4, 0.9], [0.3, 0.1, 0.4], [0.9, 0.3, 0.7]])
    assert all(v.mu == 0.01 for v in cfg.variants)
    c = cfg.clustering
    assert (c.tau, c.beta, c.theta, c.nu) == (0.9, 0.01, 0.5, 0.98)


def test_preset_fig4():
    cfg = get_preset("fig4")
    mu = {v.algorithm: v.mu for v in cfg.variants}
    assert mu == {"lms": 0.1, "lmsn": 0.038, "plms": 0.03}
    assert all(v.epsilon == 0.1 for v in cfg.variants if v.algorithm != "lms")
    assert cfg.order == 3 and cfg.signal == "ar"


def test_preset_fig1():
    cfg = get_preset("fig1")
    assert (cfg.n_nodes, cfg.order, cfg.runs) == (60, 5, 500)
    assert {v.algorithm: v.mu for v in cfg.variants} == {"lms": 0.08, "plms": 0.008, "lmsn": 0.01, "nlms": 0.05}


def test_preset_tracking_stage_times():
    assert [s.start for s in get_preset("fig8").stages] == [0, 1000, 2000]
    np.testing.assert_array_equal(get_preset("fig8").stages[1].coefficients, FIG5_COEFFICIENTS)


def test_scenario_library_complete():
    lib = scenario_library()
    assert set(lib) == {"fig1", "fig2a", "fig2b", "fig2c", "fig3", "fig4", "fig5", "fig7", "fig8", "table1"}
    assert all(isinstance(c, ExperimentConfig) for c in lib.values())


def test_unknown_preset():
    with pytest.raises(ConfigError, match="fig99"):
        get_preset("fig99")


def test_preset_override():
    assert get_preset("fig5", runs=3, seed=9).runs == 3


# -- Monte-Carlo -----------------------------------------------------------------


def test_zero_noise_at_truth_has_zero_msd():
    cfg = tiny(noise_variance=(0.0, 0.0))
    sc = build_scenario(cfg)
    for alg in ("lms", "plms", "lmsn", "nlms"):
        res = simulate_variant(sc, Variant(alg, alg, 0.05), 3, 100, 0, h0=sc.bank_at(0))
        assert not res.msd.any()


def test_scalar_config_theory_and_gaussian_oracle():
    cfg = ExperimentConfig(generator="path", n_nodes=1, shift_kind="adjacency", order=1,
                           coefficients="1.0", signal_variance=(1.0, 1.0), noise_variance=(0.1, 0.1),
                           variants=[Variant("lms", "lms", 0.1)], runs=1000, iters=300, seed=5).validate()
    sc = build_scenario(cfg)
    want = 1e-3 / 0.19
    np.testing.assert_allclose(steady_state_msd(theory_model(sc, cfg.variants[0])), want, rtol=1e-12)
    # Gaussian input adds the fourth moment E[x^4] = 3 the theory drops: 1 - 2mu + 3mu^2
    exact = 0.1**2 * 0.1 / (1 - (1 - 0.2 + 0.03))
    res = simulate_variant(sc, cfg.variants[0], cfg.runs, cfg.iters, cfg.seed)
    assert abs(res.msd[-150:].mean() / exact - 1) < 0.05


def test_batch_size_does_not_change_results():
    cfg = tiny()
    sc = build_scenario(cfg)
    v = cfg.variants[0]
    a = simulate_variant(sc, v, 6, 80, 1, batch=6)
    b = simulate_variant(sc, v, 6, 80, 1, batch=4)
    np.testing.assert_allclose(a.msd_runs, b.msd_runs, rtol=1e-13)


def test_reproducible_csv_bytes(tmp_path):
    cfg = tiny()
    cfg.variants.append(Variant("clu", "plms", 0.05, combination="clustered"))
    cfg.snapshots = (149,)
    outs = []
    for name in ("a", "b"):
        write_outputs(run_monte_carlo(cfg), tmp_path / name)
        outs.append(sorted(p.relative_to(tmp_path / name) for p in (tmp_path / name).rglob("*") if p.is_file()))
    assert outs[0] == outs[1] and len(outs[0]) >= 4
    for rel in outs[0]:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    header = (tmp_path / "a" / "plms" / "msd.csv").read_text().splitlines()[0]
    assert header == "i,msd,msd_db,theory,theory_db"


def test_seed_changes_output():
    a = run_monte_carlo(tiny(seed=1)).variants["plms"].msd
    b = run_monte_carlo(tiny(seed=2)).variants["plms"].msd
    assert not np.array_equal(a, b)


def test_divergent_runs_excluded():
    cfg = tiny(noise_variance=(0.1, 0.1))
    sc = build_scenario(cfg)
    res = simulate_variant(sc, Variant("lms", "lms", 3.0), 3, 200, 0)
    assert res.diverged.all()
    with pytest.raises(DivergenceError, match="diverged"):
        res.msd


def test_doubling_runs_consistency():
    cfg = tiny()
    sc = build_scenario(cfg)
    v = cfg.variants[0]
    r = 100
    one = simulate_variant(sc, v, r, 400, 7, h0=sc.bank_at(0)).msd[200:].mean()
    two = simulate_variant(sc, v, 2 * r, 400, 7, h0=sc.bank_at(0)).msd[200:].mean()
    assert abs(two - one) / one < 2 / np.sqrt(r)


# -- NMSE and datasets -----------------------------------------------------------


def test_nmse_examples():
    rng = make_rng(0)
    y = rng.uniform(40, 80, (50, 4))
    mask = np.array([False, True, True, False])
    assert nmse(y, y, mask) == 0.0
    assert nmse(y, np.zeros_like(y), mask) == 1.0


@settings(max_examples=30, deadline=None)
@given(c=st.floats(-10, 10), node=st.integers(0, 3), seed=st.integers(0, 1000))
def test_nmse_constant_offset_single_node(c, node, seed):
    y = make_rng(seed).uniform(1, 5, (30, 4))
    est = y.copy()
    est[:, node] += c
    mask = np.zeros(4, dtype=bool)
    mask[node] = True
    np.testing.assert_allclose(nmse(y, est, mask, (5, 25)), c**2 * 20 / np.sum(y[5:25, node] ** 2),
                               rtol=1e-9, atol=1e-15)


def test_nmse_errors():
    y = np.ones((5, 3))
    with pytest.raises(UndefinedNMSEError):
        nmse(y, y, np.zeros(3, dtype=bool))
    with pytest.raises(UndefinedNMSEError):
        nmse(np.zeros((5, 3)), y, np.ones(3, dtype=bool))
    with pytest.raises(UndefinedNMSEError):
        nmse(y, y, np.ones(3, dtype=bool), (5, 5))
    with pytest.raises(DatasetError):
        nmse(y, np.ones((4, 3)), np.ones(3, dtype=bool))


def test_ingest_round_trip(tmp_path):
    rng = make_rng(1)
    readings = rng.uniform(30, 90, (5, 3))
    coords = rng.uniform(0, 10, (3, 2))
    (tmp_path / "r.csv").write_text("a,b,c\n" + "\n".join(",".join(repr(float(v)) for v in row) for row in readings))
    np.savetxt(tmp_path / "c.csv", coords, delimiter=",")
    ds = ingest_temperature_csv(tmp_path / "r.csv", tmp_path / "c.csv")
    assert ds.readings.shape == (5, 3) and ds.coordinates.shape == (3, 2)
    np.testing.assert_array_equal(ds.readings, readings)
    assert not ds.is_canonical


def test_ingest_missing_value_reports_position(tmp_path):
    (tmp_path / "r.csv").write_text("1,2,3\n4,,6\n7,8,nan\n")
    np.savetxt(tmp_path / "c.csv", np.zeros((3, 2)), delimiter=",")
    with pytest.raises(DatasetError, match=r"row 2, col 2.*row 3, col 3"):
        ingest_temperature_csv(tmp_path / "r.csv", tmp_path / "c.csv")


def test_ingest_coordinate_count_mismatch(tmp_path):
    np.savetxt(tmp_path / "r.csv", np.ones((5, 3)), delimiter=",")
    np.savetxt(tmp_path / "c.csv", np.zeros((4, 2)), delimiter=",")
    with pytest.raises(DatasetError, match=r"4 rows.*3 stations"):
        ingest_temperature_csv(tmp_path / "r.csv", tmp_path / "c.csv")


def _small_dataset(seed=0, n=12, hours=400):
    rng = make_rng(seed)
    coords = rng.uniform(0, 10, (n, 2))
    t = np.arange(hours)[:, None]
    readings = 60 + coords[:, 0] + 5 * np.sin(2 * np.pi * t / 24 + coords[:, 1] / 5)
    return TemperatureDataset(readings, coords)


def test_reconstruct_all_observed_is_undefined():
    ds = _small_dataset()
    cfg = ExperimentConfig(order=1, variants=[Variant("lms", "lms", 1e-4)], train=200,
                           sampled=ds.n_nodes).validate()
    with pytest.raises(UndefinedNMSEError):
        reconstruct_experiment(ds, cfg)


def test_reconstruct_identity_filter_exact_on_observed_nodes():
    # M=1, h=1 reproduces observed readings exactly; unobserved nodes are estimated as 0
    ds = _small_dataset()
    cfg = ExperimentConfig(order=1, variants=[Variant("lms", "lms", 0.0)], train=200,
                           sampled=5).validate()
    from graphlms.harness.reconstruct import run_filter
    from graphlms.graph import build_shift

    mask = sampling_mask(ds.n_nodes, 5, 0, 1)
    s = build_shift(ds.graph, "normalized-adjacency").s
    est, _, _ = run_filter(ds, s, cfg.variants[0], 1, lambda i: mask, 0, cfg.clustering)
    assert not est.any()  # h(0) = 0 and no adaptation
    assert nmse(ds.readings, est, ~mask) == 1.0


def test_reconstruct_divergence_is_reported():
    ds = _small_dataset()
    cfg = ExperimentConfig(order=2, variants=[Variant("lms", "lms", 1.0)], train=200, sampled=4).validate()
    with pytest.raises(DivergenceError, match="lms"):
        reconstruct_experiment(ds, cfg)


def test_sampling_mask_count_and_determinism():
    m = sampling_mask(109, 37, 3, 1)
    assert m.sum() == 37
    np.testing.assert_array_equal(m, sampling_mask(109, 37, 3, 1))
    assert not np.array_equal(m, sampling_mask(109, 37, 3, 2))


def test_reconstruct_switch_reports_both_windows():
    ds = _small_dataset(hours=600)
    cfg = ExperimentConfig(order=2, variants=[Variant("plms", "plms", 1e-5, 0.01)], sampled=4,
                           switch_time=300, switch_sampled=6, window=100).validate()
    res = reconstruct_experiment(ds, cfg)
    sw = res.switch["plms"]
    assert set(sw) == {"frozen", "adapted"} and sw["adapted"] == res.nmse["plms"]
    assert res.masks["switched"].sum() == 6


@pytest.mark.slow
def test_mask_switch_degrades_frozen_filters():
    ds = synthetic_temperature(seed=0)
    assert (ds.n_nodes, ds.n_hours) == (109, 8759)
    cfg = get_preset("table1", switch_time=4201,
                     variants=[Variant("multitask-plms", "plms", 1e-5, 0.01, combination="clustered")])
    sw = reconstruct_experiment(ds, cfg).switch["multitask-plms"]
    assert sw["frozen"] >= 5 * sw["adapted"]


# -- CLI -------------------------------------------------------------------------


def _write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_cli_simulate(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["simulate", _write(tmp_path, TINY), "--out", str(out), "--runs", "2"]) == EXIT_OK
    assert (out / "plms" / "msd.csv").exists() and (out / "plms" / "theory.csv").exists()
    assert "plms: steady" in capsys.readouterr().out
    rows = (out / "plms" / "msd.csv").read_text().splitlines()
    assert len(rows) == 152


def test_cli_theory_and_cluster(tmp_path):
    out = tmp_path / "out"
    assert main(["theory", _write(tmp_path, TINY), "--out", str(out)]) == EXIT_OK
    assert (out / "plms" / "theory.csv").exists()
    text = TINY + "\n[algorithm:clu]\nname = plms\nmu = 0.05\ncombination = clustered\n" \
                  "\n[clustering]\nsnapshots = 10, 149\n"
    assert main(["cluster", _write(tmp_path, text), "--out", str(out / "c")]) == EXIT_OK
    assert (out / "c" / "clu" / "clusters_149.csv").exists()
    assert not (out / "c" / "plms").exists()


def test_cli_config_error(tmp_path, capsys):
    assert main(["simulate", str(tmp_path / "none.ini")]) == EXIT_CONFIG
    assert main(["simulate", _write(tmp_path, TINY.replace("name = plms", "name = rls"))]) == EXIT_CONFIG
    assert main(["cluster", _write(tmp_path, TINY)]) == EXIT_CONFIG
    assert "error:" in capsys.readouterr().err


def test_cli_divergence(tmp_path, capsys):
    text = TINY.replace("mu = 0.05", "mu = 4.0")
    assert main(["simulate", _write(tmp_path, text), "--out", str(tmp_path / "o")]) == EXIT_DIVERGED
    assert "DIVERGED" in capsys.readouterr().err


def test_cli_preset_emit_config(capsys):
    assert main(["preset", "fig5", "--emit-config", "--runs", "7"]) == EXIT_OK
    cfg = loads_config(capsys.readouterr().out)
    assert cfg.runs == 7 and cfg.clustering.nu == 0.98


def test_cli_reconstruct_missing_dataset(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    text = TINY + f"\n[reconstruct]\ndataset = {empty}\n"
    assert main(["reconstruct", _write(tmp_path, text)]) == EXIT_CONFIG


def test_cli_reconstruct_dataset_dir(tmp_path, capsys):
    ds = _small_dataset(hours=300)
    write_dataset(ds, tmp_path / "data")
    text = TINY.replace("nodes = 8", f"nodes = {ds.n_nodes}").replace("mu = 0.05", "mu = 1e-5") + \
        f"\n[reconstruct]\ndataset = {tmp_path / 'data'}\ntrain = 200\nsampled = 4\n"
    out = tmp_path / "out"
    assert main(["reconstruct", _write(tmp_path, text), "--out", str(out)]) == EXIT_OK
    assert (out / "nmse.txt").read_text().startswith("plms ")
    assert list(out.glob("trace_node*.csv"))
    assert "NMSE" in capsys.readouterr().out
