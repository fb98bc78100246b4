import math

import numpy as np
import pytest

import gexpect as gx
from gexpect import montecarlo as mc
from gexpect import representation as rep


@pytest.fixture(scope="module")
def sq_setup(band12, grid401):
    payoff = gx.PayoffSpec.parse("sq(x1)")
    field = gx.conditional_expectation(payoff, band12, grid401)
    return payoff, field


def _extract(payoff, band, field, alpha, n_paths=400, n_steps=1024, seed=21):
    bundle = gx.simulate(mc.ControlProcess.constant(alpha), n_paths, n_steps,
                         seed)
    return gx.extract(payoff, band, field, bundle), bundle


def test_monitor_vanishes_under_maximizing_control(band12, sq_setup):
    payoff, field = sq_setup
    dec, _ = _extract(payoff, band12, field, 2.0)
    # g(2) = a_up * 1 = alpha * 1 exactly: the integrand cancels
    assert np.abs(dec.k).max() == 0.0


def test_monitor_accumulates_under_low_control(band12, sq_setup):
    payoff, field = sq_setup
    dec, _ = _extract(payoff, band12, field, 1.0)
    k1 = dec.k[dec.included, -1]
    assert np.abs(k1 - 1.0).max() <= 5e-3  # integrand g(2) - 1 = 1, времени 1


def test_linear_payoff_trivial_triple(band12, grid201):
    payoff = gx.PayoffSpec.parse("x1")
    field = gx.conditional_expectation(payoff, band12, grid201)
    dec, bundle = _extract(payoff, band12, field, 1.5, n_paths=200)
    assert np.abs(dec.h - 1.0).max() <= 1e-9
    assert np.abs(dec.k).max() <= 1e-9
    assert rep.residual(dec)[dec.included].max() <= 1e-9
    assert rep.monotonicity(dec) >= -1e-12


def test_residual_scale_and_refinement(band12, sq_setup):
    payoff, field = sq_setup
    dec, _ = _extract(payoff, band12, field, 1.0, n_paths=400, n_steps=1024)
    rms = rep.residual_rms(dec)
    # the defect is the compensated realized quadratic variation; its scale
    # is alpha*sqrt(2 dt) plus sup inflation
    theory = 1.0 * math.sqrt(2.0 / 1024)
    assert 0.8 * theory <= rms <= 2.5 * theory
    dec_f, _ = _extract(payoff, band12, field, 1.0, n_paths=400, n_steps=4096)
    assert rep.residual_rms(dec_f) <= 0.75 * rms


def test_monotonicity_for_mixed_convexity(band12, field_cache):
    payoff = gx.PayoffSpec.parse("min(abs(x1), 1)")
    field = field_cache("min(abs(x1), 1)")
    for alpha in (1.0, 1.5, 2.0):
        dec, _ = _extract(payoff, band12, field, alpha, n_paths=300,
                          n_steps=512)
        assert rep.monotonicity(dec) >= -1e-6


def test_terminal_consistency(band12, sq_setup):
    payoff, field = sq_setup
    dec, bundle = _extract(payoff, band12, field, 1.5, n_paths=300)
    assert rep.terminal_defect(dec, bundle) <= 5e-3
    assert dec.exclusion_rate < 0.01


def test_paths_escaping_truncation_are_excluded(band12):
    grid = gx.SpaceTimeGrid(n_x=101, x_max=2.0)
    payoff = gx.PayoffSpec.parse("sq(x1)")
    field = gx.conditional_expectation(payoff, band12, grid)
    bundle = gx.simulate(mc.ControlProcess.constant(2.0), 500, 256, seed=23)
    dec = gx.extract(payoff, band12, field, bundle)
    # variance-2 paths leave |x|<2 often; they must be flagged, not used
    assert dec.excluded.any()
    assert dec.excluded.sum() == (np.abs(bundle.paths).max(axis=1)
                                  > 2.0 - 2 * grid.dx).sum()


def test_gap_examples(band12, grid401, sq_setup, field_cache):
    payoff, field = sq_setup
    fam = gx.ControlFamily.constants(band12, 5)
    res = rep.gmartingale_gap(payoff, band12, field, fam, 1500, 512, seed=29)
    assert res.argmax_label == "const-2"
    assert abs(res.sup) <= 2e-3
    others = [r.mean_neg_k1 for r in res.rows if r.label != "const-2"]
    assert max(others) < -0.2

    neg = gx.PayoffSpec.parse("neg(sq(x1))")
    neg_field = gx.conditional_expectation(neg, band12, grid401)
    res_neg = rep.gmartingale_gap(neg, band12, neg_field, fam, 1500, 512,
                                  seed=29)
    assert res_neg.argmax_label == "const-1"
    assert abs(res_neg.sup) <= 2e-3

    lin = gx.PayoffSpec.parse("x1")
    lin_field = field_cache("x1")
    res_lin = rep.gmartingale_gap(lin, band12, lin_field, fam, 500, 256,
                                  seed=29)
    assert all(abs(r.mean_neg_k1) <= 1e-9 for r in res_lin.rows)


def test_symmetry_classification(band12, grid201, field_cache):
    fam = gx.ControlFamily.constants(band12, 5)
    lin = gx.PayoffSpec.parse("x1")
    ev = rep.is_symmetric(lin, band12, field_cache("x1"), fam, tol=1e-8,
                          n_paths=400, n_steps=256, seed=31)
    assert ev.symmetric
    assert abs(ev.asymmetry) <= 1e-10

    sq = gx.PayoffSpec.parse("sq(x1)")
    ev_sq = rep.is_symmetric(sq, band12, field_cache("sq(x1)"), fam, tol=1e-8,
                             n_paths=400, n_steps=256, seed=31)
    assert not ev_sq.symmetric
    assert ev_sq.asymmetry == pytest.approx(1.0, abs=2e-2)


def test_classical_band_is_always_symmetric(grid201):
    # collapsed band: the form is linear, the monitor vanishes identically
    band = gx.VolBand.scalar(1.5, 1.5)
    payoff = gx.PayoffSpec.parse("sq(x1)")
    field = gx.conditional_expectation(payoff, band, grid201)
    fam = gx.ControlFamily.constants(band, 1)
    ev = rep.is_symmetric(payoff, band, field, fam, tol=1e-6,
                          n_paths=300, n_steps=256, seed=33)
    assert ev.symmetric
    assert abs(ev.asymmetry) <= 1e-2


def test_supermartingale_means(band12, sq_setup):
    # E^P[Y_t] is non-increasing in t for every control; at the maximizing
    # control it is flat (martingale property)
    payoff, field = sq_setup
    for alpha in (1.0, 1.5, 2.0):
        dec, bundle = _extract(payoff, band12, field, alpha, n_paths=2000,
                               n_steps=256, seed=37)
        inc = dec.included
        idx = np.round(np.linspace(0, 256, 9)).astype(int)
        means = dec.y[inc][:, idx].mean(axis=0)
        ses = dec.y[inc][:, idx].std(axis=0, ddof=1) / math.sqrt(inc.sum())
        drops = np.diff(means)
        assert (drops <= 2.0 * (ses[1:] + ses[:-1])).all()
        if alpha == 2.0:
            # flat in expectation; 3 SE covers the max over the time grid
            assert np.abs(means - means[0]).max() <= 3.0 * ses.max() + 1e-9


def test_nested_payoff_extraction(band12, grid401):
    # xi = (B_1 - B_1/2)^2: flat value 1 on [0, 1/2], then curvature 2, so
    # K_1 = (a_up - alpha)/2 and H_t = 2(X_t - X_1/2) after the date
    payoff = gx.PayoffSpec.parse("sq(x2 - x1)", times=(0.5, 1.0))
    field = gx.conditional_expectation(payoff, band12, grid401)
    bundle = gx.simulate(mc.ControlProcess.constant(1.0), 300, 1024, seed=43)
    dec = gx.extract(payoff, band12, field, bundle)
    inc = dec.included
    assert np.abs(dec.k[inc, -1] - 0.5).max() <= 1e-2
    assert np.abs(dec.k[inc, 512]).max() <= 1e-9      # flat before the date
    x_mid = bundle.paths[:, 512]
    h_expect = 2.0 * (bundle.paths[:, 768] - x_mid)
    assert np.abs(dec.h[:, 768] - h_expect)[inc].max() <= 2e-2
    assert rep.residual_rms(dec) <= 0.1
    assert rep.monotonicity(dec) >= -1e-12
    assert rep.terminal_defect(dec, bundle) <= 1e-2


def test_decomposition_csv(tmp_path, band12, sq_setup):
    payoff, field = sq_setup
    dec, _ = _extract(payoff, band12, field, 1.5, n_paths=3, n_steps=16)
    out = tmp_path / "dec.csv"
    dec.to_csv(out)
    lines = out.read_text().splitlines()
    assert lines[0] == "path_id,t,Y,H,K,int_HdX,residual"
    assert len(lines) == 1 + 3 * 17
