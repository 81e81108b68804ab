import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdtomo.dsp import ChainSpec, window_set
from hdtomo.pipeline import chain_for, estimate_phases
from hdtomo.quadrature import (PhaseScan, QuadratureSample, TomoSet, collect_tomo_set,
                               empirical_shot_noise_variance, estimate_phase, fit_phases, project_quadrature,
                               project_set, read_tomo_csv, shot_noise_variance, write_tomo_csv)
from hdtomo.signal_model import TemporalMode, ideal_mode
from hdtomo.states import HeraldedStateModel
from hdtomo.synth import AcquisitionConfig, ideal_mode_on_trace_grid, synth_dataset, synth_trace
from hdtomo.tomography import run_maxlik, wigner_origin
from hdtomo.traces import HomodyneTrace, TraceSet


def phase_error(est, true):
    # squeezed variance fixes the phase modulo pi
    return np.abs(np.angle(np.exp(2j * (np.asarray(est) - np.asarray(true))))) / 2


@pytest.fixture(scope="module")
def u_mode():
    return ideal_mode(9.3e6, 0.0, 0.5e-9, 300e-9)


def test_projection_of_mode_is_one(u_mode):
    tr = HomodyneTrace(u_mode.samples, u_mode.dt, u_mode.t_start)
    assert project_quadrature(tr, u_mode) == pytest.approx(1.0, abs=1e-9)


def test_projection_grid_mismatch(u_mode):
    tr = HomodyneTrace(u_mode.samples[:-1], u_mode.dt, u_mode.t_start)
    with pytest.raises(ValueError, match="grid"):
        project_quadrature(tr, u_mode)


@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_projection_linear(a, b, seed):
    u = ideal_mode(9.3e6, 0.0, 2e-9, 200e-9)
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, len(u)))
    p = lambda v: project_quadrature(HomodyneTrace(v, u.dt, u.t_start), u)  # noqa: E731
    assert p(a * x + b * y) == pytest.approx(a * p(x) + b * p(y), abs=1e-9 * (1 + abs(a) + abs(b)) * 100)


def test_noise_free_trace_returns_injected_quadrature():
    cfg = AcquisitionConfig(n_traces=1, f_c=None, snr_db=None, background=False)
    u = ideal_mode_on_trace_grid(cfg)
    tr, x = synth_trace(cfg, u, 1.0, np.random.default_rng(2))
    assert project_quadrature(tr, u) == pytest.approx(x, abs=1e-9)


def test_shot_noise_variance_flat_chain(u_mode):
    chain = ChainSpec(u_mode.dt, 4 * len(u_mode), None, None, 1)
    assert shot_noise_variance(u_mode, chain) == pytest.approx(0.5, rel=1e-9)
    assert shot_noise_variance(u_mode, chain, electronic=0.1) == pytest.approx(0.6, rel=1e-9)


def test_empirical_shot_noise_matches_analytic():
    cfg = AcquisitionConfig(n_traces=4000, seed=3, snr_db=None, eta_hd=1.0,
                            state=HeraldedStateModel(r=0.0, xi=0.0, eta_prep=1.0))
    ds = synth_dataset(cfg)
    win = window_set(ds.traces, cfg.window)
    u = ideal_mode_on_trace_grid(cfg).on_grid(win.t_start[0], win.dt, win.samples.shape[1])
    analytic = shot_noise_variance(u, chain_for(cfg, None, 1))
    # normalizing by the injected quadratures removes most of the sampling scatter
    ratio = empirical_shot_noise_variance(win, u) / np.var(ds.x_true)
    assert ratio == pytest.approx(analytic / 0.5, rel=0.02)


def test_phase_estimation_accuracy(squeezed_cfg, squeezed_dataset):
    est = estimate_phases(squeezed_dataset.traces, squeezed_cfg, chain_for(squeezed_cfg, None, 1))
    assert np.median(phase_error(est, squeezed_dataset.theta)) < 0.1
    assert np.all((est >= 0) & (est < np.pi))


def test_phase_estimation_at_max_squeezing(squeezed_cfg):
    cfg = squeezed_cfg
    u = ideal_mode_on_trace_grid(cfg)
    chain = chain_for(cfg, None, 1)
    rng = np.random.default_rng(8)
    errs = []
    for i in range(40):
        tr, _ = synth_trace(cfg, u, 0.0, rng, trace_id=i)
        pre = HomodyneTrace(tr.samples[:2500], tr.dt, tr.t_start)
        post = HomodyneTrace(tr.samples[-2500:], tr.dt, tr.t_start + (len(tr) - 2500) * tr.dt)
        est = estimate_phase(pre, post, PhaseScan(cfg.scan_rate, cfg.t0), cfg.state.r, 1 / (np.pi * cfg.gamma),
                             chain.noise_gain, cfg.dt)
        errs.append(min(est, np.pi - est))
    assert np.median(errs) < 0.15


def test_phase_estimation_errors():
    scan = PhaseScan(4e5, 0.0)
    v = np.full((1, 10), 0.5)
    t = np.arange(10.0)[None, :] * 1e-8
    with pytest.raises(ValueError, match="unidentifiable"):
        fit_phases(v, t, scan, 0.0)
    with pytest.raises(ValueError, match="outside"):
        fit_phases(v * 100, t, scan, 0.5)
    tr = HomodyneTrace(np.zeros(50), 1e-9, 0.0)
    with pytest.raises(ValueError, match="200"):
        estimate_phase(tr, tr, scan, 0.5, 3e-8, 1.0, 1e-9)


def test_collect_tomo_set_sizes_and_metadata(small_cfg, small_dataset):
    win = window_set(small_dataset.traces, small_cfg.window)
    u = ideal_mode_on_trace_grid(small_cfg).on_grid(win.t_start[0], win.dt, win.samples.shape[1])
    tomo = collect_tomo_set(win, u, 0.72, vacuum_variance=0.5)
    assert len(tomo) == len(small_dataset.traces)
    assert tomo.eta == 0.72 and tomo.meta["efficiency_mode"] == "povm"
    assert np.array_equal(tomo.trace_id, small_dataset.traces.trace_id)
    resc = collect_tomo_set(win, u, 0.72, vacuum_variance=0.5, efficiency_mode="rescale")
    assert resc.eta == 1.0 and "caveat" in resc.meta
    assert np.allclose(resc.x, tomo.x / np.sqrt(0.72))
    samples = tomo.samples()
    assert isinstance(samples[0], QuadratureSample) and len(samples) == len(tomo)


def test_collect_tomo_set_errors(small_cfg, small_dataset):
    win = window_set(small_dataset.traces, small_cfg.window)
    zero = TemporalMode(np.zeros(win.samples.shape[1]), win.dt, win.t_start[0])
    with pytest.raises(ValueError, match="zero"):
        collect_tomo_set(win, zero, 0.72)
    u = ideal_mode_on_trace_grid(small_cfg).on_grid(win.t_start[0], win.dt, win.samples.shape[1])
    with pytest.raises(ValueError):
        collect_tomo_set(win, u, 0.72, efficiency_mode="other")
    unknown = win.replace(true_phase=np.full(len(win), np.nan))
    with pytest.raises(ValueError, match="phases"):
        collect_tomo_set(unknown, u, 0.72)


def test_quadrature_sample_invariants():
    with pytest.raises(ValueError):
        QuadratureSample(np.nan, 0.0, 1)
    with pytest.raises(ValueError):
        QuadratureSample(0.0, 7.0, 1)


def test_tomo_csv_roundtrip(tmp_path):
    tomo = TomoSet([0.1, -2.0], [0.5, 6.1], [3, 4], 0.72, {"f_c": 301e6})
    path = tmp_path / "tomo.csv"
    write_tomo_csv(path, tomo)
    back = read_tomo_csv(path)
    assert np.allclose(back.x, tomo.x) and np.allclose(back.theta, tomo.theta)
    assert back.eta == 0.72 and back.meta["f_c"] == 301e6
    assert json.loads((tmp_path / "tomo.csv.meta.json").read_text())["eta"] == 0.72


def test_estimated_phases_reproduce_truth_reconstruction():
    # clean data: no electronic noise, strong squeezing for a sharp phase signature
    cfg = AcquisitionConfig(n_traces=3000, seed=17, snr_db=None,
                            state=HeraldedStateModel(r=0.5, xi=0.8, eta_prep=0.9))
    ds = synth_dataset(cfg)
    chain = chain_for(cfg, None, 1)
    win = window_set(ds.traces, cfg.window)
    u = ideal_mode_on_trace_grid(cfg).on_grid(win.t_start[0], win.dt, win.samples.shape[1])
    vac = shot_noise_variance(u, chain)
    est = estimate_phases(ds.traces, cfg, chain)
    w = []
    for phases in (None, est):
        tomo = collect_tomo_set(win, u, cfg.eta_hd, phases, vac)
        w.append(wigner_origin(run_maxlik(tomo.x, tomo.theta, 12, 300, tomo.eta).rho))
    assert abs(w[0] - w[1]) < 0.01


def test_project_set_rejects_other_grid(small_dataset):
    ts = TraceSet(np.zeros((2, 10)), 1.0, np.zeros(2), np.zeros(2), np.arange(2))
    with pytest.raises(ValueError):
        project_set(ts, TemporalMode(np.ones(10), 2.0))
