import json

import numpy as np
import pytest

from fracback.bench import (
    ExperimentSpec,
    NoiseSpec,
    get_initial_data,
    make_observation,
    run_iteration_history,
    run_reconstruction,
    run_table,
    _derived_seed,
)
from fracback.fem import assemble, l2_norm, l2_project, GridFunction
from fracback.grid import build_interval_mesh, build_square_mesh, restrict_nodal


def small_spec(**overrides):
    base = dict(
        alpha=0.5, T=1.0, nonlinearity="sqrt1pu2", initial_data="smooth_sine",
        noise=NoiseSpec(delta=1e-3, mode="paper_pointwise", seed=42),
        dim=1, n=16, N=20, n_ref=64, N_ref=50,
        backward={"gamma": 1e-3},
        output_dir="out", repetitions=1)
    base.update(overrides)
    return ExperimentSpec(**base)


def test_initial_data_registry():
    d1 = get_initial_data("smooth_sine", 1)
    assert d1.func(np.array([0.25]))[0] == pytest.approx(1.0)
    d2 = get_initial_data("smooth_sine", 2)
    assert d2.func(np.array([0.25]), np.array([0.25]))[0] == pytest.approx(1.0)
    cb = get_initial_data("checkerboard", 2)
    assert cb.subdivide
    assert cb.func(np.array([0.2]), np.array([0.2]))[0] == 1.0
    assert cb.func(np.array([0.2]), np.array([0.8]))[0] == 0.0
    em = get_initial_data("eigenmode:2", 1)
    assert em.func(np.array([0.25]))[0] == pytest.approx(1.0)
    em2 = get_initial_data("eigenmode:1,2", 2)
    assert em2.func(np.array([0.5]), np.array([0.25]))[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        get_initial_data("nope", 2)


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(delta=-0.1)
    with pytest.raises(ValueError):
        NoiseSpec(delta=0.1, mode="weird")


def test_spec_rejects_unknown_fields():
    data = small_spec().to_dict()
    data["bogus"] = 1
    with pytest.raises(ValueError):
        ExperimentSpec.from_dict(data)
    data = small_spec().to_dict()
    data["noise"]["extra"] = 2
    with pytest.raises(ValueError):
        ExperimentSpec.from_dict(data)
    data = small_spec().to_dict()
    data["backward"]["hmm"] = 3
    with pytest.raises(ValueError):
        ExperimentSpec.from_dict(data)


def test_spec_json_roundtrip(tmp_path):
    spec = small_spec()
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec.to_dict()))
    loaded = ExperimentSpec.from_json(path)
    assert loaded == spec


def test_resolve_requires_nesting():
    spec = small_spec(n=10, n_ref=64)
    with pytest.raises(ValueError):
        spec.resolved()


def test_resolve_preset_derives_parameters():
    spec = small_spec(dim=2, n=None, N=None, n_ref=None, N_ref=None,
                      preset="paper-ex1", backward={},
                      noise=NoiseSpec(delta=1 / 80, seed=1))
    res = spec.resolved()
    assert res.n == 14
    assert res.N == 45
    assert res.gamma == pytest.approx(np.sqrt(1 / 80) / 75)
    assert res.n_ref % res.n == 0
    assert abs(res.n_ref - 128) <= res.n // 2


def test_observation_zero_noise():
    spec = small_spec(noise=NoiseSpec(delta=0.0, seed=3))
    g_clean, g_noisy, achieved = make_observation(spec)
    assert achieved == 0.0
    assert np.array_equal(g_clean.values, g_noisy.values)


def test_observation_exact_l2():
    spec = small_spec(noise=NoiseSpec(delta=1e-3, mode="exact_l2", seed=3))
    _, g_noisy, achieved = make_observation(spec)
    assert achieved == pytest.approx(1e-3, rel=1e-12)


def test_observation_deterministic():
    spec = small_spec()
    _, g1, a1 = make_observation(spec)
    _, g2, a2 = make_observation(spec)
    assert np.array_equal(g1.values, g2.values)
    assert a1 == a2


def test_observation_scalar_mode():
    spec = small_spec(noise=NoiseSpec(delta=1e-3, mode="paper_scalar", seed=9))
    g_clean, g_noisy, _ = make_observation(spec)
    pert = g_noisy.values - g_clean.values
    assert np.allclose(pert, pert[0])   # constant field


def test_noise_statistics_pointwise():
    # over many seeds the achieved L2 noise has mean delta*sup_g*sqrt(tr M):
    # nodal white noise carries the P1 quadratic form, not unit variance
    spec = small_spec(n=8, n_ref=16, N=10, N_ref=20)
    res = spec.resolved()
    from fracback.bench import _clean_observation
    coarse, g_clean = _clean_observation(res)
    sup_g = g_clean.full_values().max()
    tr = coarse.M.diagonal().sum()
    ratios = []
    for seed in range(1000):
        _, _, achieved = make_observation(spec, seed=seed)
        ratios.append(achieved / (1e-3 * sup_g))
    mean_ratio = np.mean(ratios)
    assert mean_ratio == pytest.approx(np.sqrt(tr), rel=0.1)


def test_restriction_consistency():
    # a P1 coarse function prolongated by sampling restricts back exactly
    fine = build_interval_mesh(64)
    coarse = build_interval_mesh(16)
    sys_c = assemble(coarse)
    vals_c = np.sin(2 * np.pi * coarse.nodes[:, 0])
    back = restrict_nodal(fine, coarse, np.interp(fine.nodes[:, 0],
                                                  coarse.nodes[:, 0], vals_c))
    assert np.allclose(back, vals_c, atol=1e-15)


def test_run_reconstruction_near_exact_inversion():
    # delta=0, tiny gamma, linear problem, well-resolved smooth mode
    spec = small_spec(
        dim=1, n=64, N=200, n_ref=128, N_ref=400,
        nonlinearity="zero",
        noise=NoiseSpec(delta=0.0, seed=1),
        backward={"gamma": 1e-8, "cg_max": 2000})
    row = run_reconstruction(spec)
    assert row["e_u"] < 0.05
    assert row["converged"]


def test_run_reconstruction_deterministic_row():
    spec = small_spec()
    r1 = run_reconstruction(spec)
    r2 = run_reconstruction(spec)
    r1.pop("runtime"), r2.pop("runtime")
    assert r1 == r2


def test_run_table_shapes_and_orders(tmp_path):
    spec = small_spec(output_dir=str(tmp_path), repetitions=2)
    out = run_table(spec, deltas=[2e-3, 1e-3], alphas=[0.4, 0.6])
    assert out["errors"].shape == (2, 2)
    assert len(out["orders"]) == 2 and len(out["orders"][0]) == 1
    assert len(out["rows"]) == 2 * 2 * 2
    assert (tmp_path / "table.csv").exists()
    assert (tmp_path / "manifest.json").exists()
    assert len(list(tmp_path.glob("field_u0hat_*.csv"))) == 4
    assert len(list(tmp_path.glob("history_*.csv"))) == 4


def test_run_table_validation(tmp_path):
    spec = small_spec(output_dir=str(tmp_path))
    with pytest.raises(ValueError):
        run_table(spec, deltas=[])
    with pytest.raises(ValueError):
        run_table(spec, deltas=[1e-3])
    with pytest.raises(ValueError):
        run_table(spec, deltas=[1e-3, 2e-3])


def test_run_table_deterministic_bytes(tmp_path):
    spec1 = small_spec(output_dir=str(tmp_path / "a"), repetitions=2)
    run_table(spec1, deltas=[2e-3, 1e-3])
    spec2 = small_spec(output_dir=str(tmp_path / "b"), repetitions=2)
    run_table(spec2, deltas=[2e-3, 1e-3])
    for name in ("table.csv",):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    for f in sorted((tmp_path / "a").glob("*.csv")):
        g = tmp_path / "b" / f.name
        assert f.read_bytes() == g.read_bytes()


def test_derived_seed_determinism():
    assert _derived_seed(42, 0, 1) == _derived_seed(42, 0, 1)
    assert _derived_seed(42, 0, 1) != _derived_seed(42, 1, 1)


def test_run_table_parallel_matches_serial(tmp_path, monkeypatch):
    spec1 = small_spec(output_dir=str(tmp_path / "serial"), repetitions=2)
    run_table(spec1, deltas=[2e-3, 1e-3])
    monkeypatch.setenv("FRACBACK_THREADS", "2")
    spec2 = small_spec(output_dir=str(tmp_path / "par"), repetitions=2)
    run_table(spec2, deltas=[2e-3, 1e-3])
    for f in sorted((tmp_path / "serial").glob("*.csv")):
        assert f.read_bytes() == (tmp_path / "par" / f.name).read_bytes()


def test_paper_scale_warns():
    spec = small_spec(n_ref=None, N_ref=None)
    with pytest.warns(RuntimeWarning):
        spec.resolved(paper_scale=True)


def test_spec_validates_fields():
    with pytest.raises(ValueError):
        small_spec(dim=3)
    with pytest.raises(ValueError):
        small_spec(repetitions=0)


def test_two_dimensional_pipeline():
    # small end-to-end 2D run: observation, reconstruction, error metric
    spec = small_spec(dim=2, n=8, N=15, n_ref=24, N_ref=30,
                      noise=NoiseSpec(delta=1e-3, seed=11),
                      backward={"gamma": 1e-3})
    g_clean, g_noisy, achieved = make_observation(spec)
    assert g_clean.system.mesh.dim == 2
    assert achieved > 0.0
    row = run_reconstruction(spec)
    assert row["converged"] and not row["diverged"]
    assert 0.0 < row["e_u"] < 1.0


def test_iteration_history_zero_source(tmp_path):
    spec = small_spec(nonlinearity="zero", output_dir=str(tmp_path))
    row, history, path = run_iteration_history(spec)
    assert len(history) <= 2
    text = (tmp_path / "history_a0p5_d0p001.csv").read_text()
    assert text.startswith("iter,update_norm,error_vs_truth,cg_iters,")


def test_iteration_history_contracting(tmp_path):
    spec = small_spec(nonlinearity="L_sqrt1pu2:0.5", output_dir=str(tmp_path),
                      backward={"gamma": 1e-4, "cg_tol": 1e-12})
    row, history, _ = run_iteration_history(spec)
    errs = [h["error_vs_truth"] for h in history]
    assert all(e is not None for e in errs)
    assert not row["diverged"]
