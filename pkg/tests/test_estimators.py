import math

import numpy as np
import pytest

from mibench.errors import ConfigError, DomainError, NumericError, ShapeError
from mibench.estimators import EstimatorSpec, MineEmaState, clipped_partition_mean, \
    critic_for, estimate, estimate_with_gradient, fit_critic, golden_section_a, \
    grad_to_flat, logmeanexp, mine_estimate, mine_gradient, nce_estimate, \
    nce_gradient, nwj_estimate, nwj_gradient, rerun_statistics, rje_estimate, \
    rje_gradient, rje_inner_bound, rje_moment_ratio, rje_select_ab, \
    rje_value_given_ab, smile_estimate, smile_gradient
from mibench.nn import params_to_vector, vector_to_params
from mibench.rng import STREAM_DATA, STREAM_INIT, make_rng
from mibench.sampling import SampleBatch, ScoreMatrix, ScorePairs

LN2 = math.log(2.0)


def random_scores(K=6, scale=1.5, seed=0):
    return ScoreMatrix(make_rng(seed).normal(0.0, scale, size=(K, K)))


# --- logmeanexp ---------------------------------------------------------------


def test_logmeanexp_matches_naive_and_survives_large_inputs():
    v = make_rng(1).normal(size=200)
    naive = math.log(np.mean(np.exp(v)))
    assert abs(logmeanexp(v) - naive) < 1e-12
    big = v + 1000.0
    assert abs(logmeanexp(big) - (naive + 1000.0)) < 1e-9
    with pytest.raises(ShapeError):
        logmeanexp(np.array([]))


# --- mine ----------------------------------------------------------------------


def test_mine_constant_critic_is_zero():
    for c in (-3.0, 0.0, 1.7):
        scores = ScoreMatrix(np.full((5, 5), c))
        assert mine_estimate(scores).value_nats == pytest.approx(0.0, abs=1e-12)


def test_mine_two_sample_example():
    pairs = ScorePairs(joint=np.array([1.0, 1.0]), marginal=np.array([0.0, 0.0]))
    assert mine_estimate(pairs).value_nats == pytest.approx(1.0, abs=1e-12)


def test_mine_optimal_critic_recovers_gaussian_mi():
    """Density-ratio critic on correlated Gaussians, Monte-Carlo oracle."""
    rho = 0.5
    true_mi = -0.5 * math.log(1 - rho ** 2)
    n = 1_000_000
    rng = make_rng(2)

    def f_star(x, y):
        quad = (x ** 2 - 2 * rho * x * y + y ** 2) / (2 * (1 - rho ** 2))
        return -0.5 * math.log(1 - rho ** 2) - quad + (x ** 2 + y ** 2) / 2

    x = rng.standard_normal(n)
    y = rho * x + math.sqrt(1 - rho ** 2) * rng.standard_normal(n)
    xm = rng.standard_normal(n)
    ym = rng.standard_normal(n)
    pairs = ScorePairs(joint=f_star(x, y), marginal=f_star(xm, ym))
    got = mine_estimate(pairs).value_nats
    assert abs(got - true_mi) < 0.01


def test_mine_gradient_structure():
    scores = random_scores(K=5, seed=3)
    grad = mine_gradient(scores)
    K = 5
    diag = grad[np.eye(K, dtype=bool)]
    assert np.allclose(diag, 1.0 / K, atol=1e-15)
    off = grad[~np.eye(K, dtype=bool)]
    # with ema equal to the batch mean the marginal gradients sum to -1
    assert abs(np.sum(off) + 1.0) < 1e-12
    marg = scores.marginal
    want = -np.exp(marg) / np.sum(np.exp(marg))
    assert np.allclose(off, want, rtol=1e-12)


def test_mine_ema_update_rule():
    state = MineEmaState()
    d = 0.9
    # bias-corrected read: first update returns the batch mean itself
    assert state.update(4.0, d) == pytest.approx(4.0, rel=1e-14)
    assert state.raw == pytest.approx(0.1 * 4.0, rel=1e-14)
    # second update: ema/(1 - d^2) weights the two batches almost evenly
    want = (d * 0.1 * 4.0 + 0.1 * 6.0) / (1 - d ** 2)
    assert state.update(6.0, d) == pytest.approx(want, rel=1e-14)
    with pytest.raises(NumericError):
        MineEmaState().update(-1.0, d)


def test_mine_ema_first_batch_matches_plain_gradient():
    scores = random_scores(seed=4)
    with_state = mine_gradient(scores, MineEmaState(), ema_decay=0.99)
    plain = mine_gradient(scores)
    assert np.allclose(with_state, plain, atol=0, rtol=1e-12)


def test_mine_ema_decay_zero_is_plain_batch_gradient():
    scores = random_scores(seed=6)
    state = MineEmaState()
    state.update(123.0, 0.0)  # pre-existing history must be ignored at decay 0
    with_state = mine_gradient(scores, state, ema_decay=0.0)
    plain = mine_gradient(scores)
    assert np.allclose(with_state, plain, atol=0, rtol=1e-12)


# --- nwj -----------------------------------------------------------------------


def test_nwj_closed_forms():
    ones = ScoreMatrix(np.ones((4, 4)))
    assert nwj_estimate(ones).value_nats == 0.0
    zeros = ScoreMatrix(np.zeros((4, 4)))
    assert nwj_estimate(zeros).value_nats == pytest.approx(-math.exp(-1), abs=1e-12)


def test_nwj_optimal_critic_plus_one_recovers_gaussian_mi():
    rho = 0.5
    true_mi = -0.5 * math.log(1 - rho ** 2)
    n = 1_000_000
    rng = make_rng(7)

    def f_star_plus_1(x, y):
        quad = (x ** 2 - 2 * rho * x * y + y ** 2) / (2 * (1 - rho ** 2))
        return 1.0 - 0.5 * math.log(1 - rho ** 2) - quad + (x ** 2 + y ** 2) / 2

    x = rng.standard_normal(n)
    y = rho * x + math.sqrt(1 - rho ** 2) * rng.standard_normal(n)
    xm = rng.standard_normal(n)
    ym = rng.standard_normal(n)
    pairs = ScorePairs(joint=f_star_plus_1(x, y), marginal=f_star_plus_1(xm, ym))
    assert abs(nwj_estimate(pairs).value_nats - true_mi) < 0.01


# --- nce -----------------------------------------------------------------------


def test_nce_constant_critic_and_upper_bound():
    assert nce_estimate(ScoreMatrix(np.full((8, 8), 2.3))).value_nats == \
        pytest.approx(0.0, abs=1e-12)
    for seed in range(20):
        K = int(make_rng(seed).integers(2, 40))
        scores = ScoreMatrix(make_rng(seed + 100).normal(0, 3, size=(K, K)))
        assert nce_estimate(scores).value_nats <= math.log(K) + 1e-12


def test_nce_saturated_diagonal_approaches_log_k():
    K = 16
    values = np.full((K, K), -40.0)
    np.fill_diagonal(values, 40.0)
    got = nce_estimate(ScoreMatrix(values)).value_nats
    assert abs(got - math.log(K)) < 1e-9


def test_nce_requires_matrix():
    pairs = ScorePairs(joint=np.zeros(3), marginal=np.zeros(3))
    with pytest.raises(ConfigError):
        nce_estimate(pairs)
    with pytest.raises(ConfigError):
        nce_gradient(pairs)


# --- smile ---------------------------------------------------------------------


def test_smile_equals_mine_when_clip_inactive():
    for seed in range(10):
        scores = random_scores(seed=seed)
        tau = float(np.max(np.abs(scores.values))) + 0.5
        gap = abs(smile_estimate(scores, tau).value_nats
                  - mine_estimate(scores).value_nats)
        assert gap <= 1e-12
        g_smile = smile_gradient(scores, tau)
        g_mine = mine_gradient(scores)
        assert np.allclose(g_smile, g_mine, atol=0, rtol=1e-12)


def test_smile_clip_zeroes_gradient_outside_band():
    values = np.array([[0.0, 9.0, -9.0],
                       [0.5, 0.0, 1.2],
                       [-0.3, 0.4, 0.0]])
    scores = ScoreMatrix(values)
    grad = smile_gradient(scores, tau=2.0)
    assert grad[0, 1] == 0.0      # score 9 clipped high
    assert grad[0, 2] == 0.0      # score -9 clipped low
    assert grad[1, 0] != 0.0      # inside the band
    # clipped partition still reflects the saturated values
    part = clipped_partition_mean(scores.marginal, 2.0)
    hand = np.mean(np.clip(np.exp(scores.marginal), math.exp(-2), math.exp(2)))
    assert part == pytest.approx(hand, rel=1e-12)


def test_smile_constant_critic_inside_band_is_zero():
    scores = ScoreMatrix(np.full((5, 5), -1.2))
    assert smile_estimate(scores, 5.0).value_nats == pytest.approx(0.0, abs=1e-12)


# --- reverse Jensen ------------------------------------------------------------


def test_inner_bound_worked_example():
    # X = 1, a = 4, b = 1: 4 ln 5 / (1 - 1/2) - ln 4
    want = 4 * math.log(5.0) / 0.5 - math.log(4.0)
    got = rje_inner_bound(np.ones(10), 4.0, 1.0)
    assert got == pytest.approx(want, rel=1e-12)
    assert abs(got - 11.49) < 0.01
    assert got >= 0.0  # log E[X] = 0


def test_inner_bound_dominates_log_mean_on_grids():
    rng = make_rng(8)
    for _ in range(25):
        x = rng.lognormal(0.0, 1.0, size=2000)
        m1 = float(np.mean(x))
        b = max(1.0, float(np.mean(x ** 2)) / m1 ** 2)
        for mult in (1.01, 1.5, 2.0, 10.0, 100.0):
            assert rje_inner_bound(x, mult * b, b) >= math.log(m1)


def test_inner_bound_blows_up_as_a_approaches_b():
    x = np.ones(5)
    near = rje_inner_bound(x, 1.0 + 1e-9, 1.0)
    far = rje_inner_bound(x, 2.0, 1.0)
    assert near > far
    assert near > 1e4


def test_inner_bound_domain_errors():
    x = np.ones(4)
    with pytest.raises(DomainError):
        rje_inner_bound(x, 1.0, 1.0)       # a == b
    with pytest.raises(DomainError):
        rje_inner_bound(x, 0.5, 1.0)       # a < b
    with pytest.raises(DomainError):
        rje_inner_bound(x, 2.0, 0.5)       # b < 1
    with pytest.raises(DomainError):
        rje_inner_bound(np.array([-1.0, 2.0]), 2.0, 1.0)


def test_golden_section_properties():
    rng = make_rng(9)
    for seed in range(5):
        x = rng.lognormal(0.0, 0.8, size=500)
        m1 = float(np.mean(x))
        b = max(1.0, float(np.mean(x ** 2)) / m1 ** 2)
        a = golden_section_a(x, b, 1e4)
        g_a = rje_inner_bound(x, a, b)
        assert g_a <= rje_inner_bound(x, 2 * b, b) + 1e-9
        assert g_a <= rje_inner_bound(x, 1e4, b) + 1e-9
        assert g_a >= math.log(m1)


def test_golden_section_matches_dense_grid():
    x = np.ones(50)
    a = golden_section_a(x, 1.0, 1e4)
    grid = np.linspace(1.0 + 1e-6, 11.0, 10_000)
    vals = [g * np.mean(np.log1p(g * x)) / (1 - math.sqrt(1.0 / g)) - math.log(g)
            for g in grid]
    assert abs(a - grid[int(np.argmin(vals))]) < 1e-3


def test_golden_section_rejects_collapsed_bracket():
    with pytest.raises(DomainError):
        golden_section_a(np.ones(5), 2.0, 2.0)


def test_rje_constant_critic_worked_example():
    want = -(2 * math.log(3.0) / (1 - math.sqrt(0.5)) - math.log(2.0))
    scores = ScoreMatrix(np.zeros((6, 6)))
    got = rje_estimate(scores, EstimatorSpec(kind="rje")).value_nats
    assert got == pytest.approx(want, rel=1e-12)
    assert abs(got + 6.809) < 1e-3


def test_rje_never_exceeds_mine():
    for seed in range(15):
        scores = random_scores(K=8, scale=2.0, seed=seed)
        mine = mine_estimate(scores).value_nats
        for spec in (EstimatorSpec(kind="rje"),
                     EstimatorSpec(kind="rje", a_strategy="golden_section"),
                     EstimatorSpec(kind="rje", a_multiple=30.0)):
            assert rje_estimate(scores, spec).value_nats <= mine + 1e-12


def test_rje_b_selection():
    scores = random_scores(seed=10)
    ratio = rje_moment_ratio(scores.marginal)
    hand = np.mean(np.exp(2 * scores.marginal)) / np.mean(np.exp(scores.marginal)) ** 2
    assert ratio == pytest.approx(float(hand), rel=1e-10)
    a, b = rje_select_ab(scores.marginal, EstimatorSpec(kind="rje"))
    assert b == pytest.approx(max(1.0, ratio))
    assert a == pytest.approx(2 * b)
    # a floor of b keeps tiny-ratio batches valid
    a2, b2 = rje_select_ab(np.zeros(10), EstimatorSpec(kind="rje"))
    assert (a2, b2) == (2.0, 1.0)
    spec_fixed = EstimatorSpec(kind="rje", fixed_b=3.0)
    _, b3 = rje_select_ab(scores.marginal, spec_fixed)
    assert b3 == 3.0
    report = rje_estimate(scores, EstimatorSpec(kind="rje"))
    assert report.rje_a == pytest.approx(a)
    assert report.rje_b == pytest.approx(b)


def test_rje_report_carries_a_and_b_while_others_do_not():
    scores = random_scores(seed=11)
    assert math.isnan(mine_estimate(scores).rje_a)
    rep = rje_estimate(scores, EstimatorSpec(kind="rje"))
    assert rep.rje_a > rep.rje_b >= 1.0


# --- score-space gradients vs finite differences -------------------------------


def _fd_score_gradient(value_fn, scores, h=1e-6):
    values = scores.values
    num = np.zeros_like(values)
    for i in range(values.shape[0]):
        for j in range(values.shape[1]):
            vp, vm = values.copy(), values.copy()
            vp[i, j] += h
            vm[i, j] -= h
            num[i, j] = (value_fn(ScoreMatrix(vp)) - value_fn(ScoreMatrix(vm))) / (2 * h)
    return num


def test_all_score_gradients_match_finite_differences():
    scores = random_scores(K=5, scale=1.0, seed=12)
    spec_rje = EstimatorSpec(kind="rje")
    a, b = rje_select_ab(scores.marginal, spec_rje)
    cases = [
        (lambda s: mine_estimate(s).value_nats, lambda s: mine_gradient(s)),
        (lambda s: nwj_estimate(s).value_nats, lambda s: nwj_gradient(s)),
        (lambda s: nce_estimate(s).value_nats, lambda s: nce_gradient(s)),
        (lambda s: smile_estimate(s, 5.0).value_nats,
         lambda s: smile_gradient(s, 5.0)),
        (lambda s: rje_value_given_ab(s, a, b).value_nats,
         lambda s: rje_gradient(s, spec_rje, a, b)),
    ]
    for value_fn, grad_fn in cases:
        analytic = grad_fn(scores)
        numeric = _fd_score_gradient(value_fn, scores)
        denom = np.maximum(np.abs(numeric), 1e-3)
        assert np.max(np.abs(analytic - numeric) / denom) < 1e-4


# --- dispatch and reports -------------------------------------------------------


def test_dispatch_and_bits_conversion():
    scores = random_scores(seed=13)
    for kind in ("mine", "nwj", "nce", "smile", "rje"):
        rep = estimate(scores, EstimatorSpec(kind=kind))
        assert rep.value_bits == pytest.approx(rep.value_nats / LN2, rel=1e-15)
        rep2, grad = estimate_with_gradient(scores, EstimatorSpec(kind=kind))
        assert rep2.value_nats == pytest.approx(rep.value_nats)
        assert grad_to_flat(grad).shape == (scores.K ** 2, 1)


def test_smile_wide_tau_dispatch_equals_mine():
    scores = random_scores(seed=14)
    smile = estimate(scores, EstimatorSpec(kind="smile", tau=20.0))
    mine = estimate(scores, EstimatorSpec(kind="mine"))
    assert abs(smile.value_nats - mine.value_nats) <= 1e-12


def test_spec_validation():
    with pytest.raises(ConfigError):
        EstimatorSpec(kind="dv")
    with pytest.raises(ConfigError):
        EstimatorSpec(kind="smile", tau=-1.0)
    with pytest.raises(ConfigError):
        EstimatorSpec(kind="mine", ema_decay=1.0)
    with pytest.raises(ConfigError):
        EstimatorSpec(kind="rje", a_multiple=1.0)
    with pytest.raises(ConfigError):
        EstimatorSpec(kind="rje", b_floor=0.5)
    with pytest.raises(ConfigError):
        EstimatorSpec(kind="rje", a_strategy="newton")


# --- training loop ---------------------------------------------------------------


def gaussian_source(K=16, d=2):
    def source(rng):
        x = rng.normal(size=(K, d))
        return SampleBatch(x=x, y=x + 0.5 * rng.normal(size=(K, d)))
    return source


def test_fit_critic_trace_length_and_lr0_freeze():
    spec = EstimatorSpec(kind="mine")
    critic = critic_for(spec, 2, 2, make_rng(20, STREAM_INIT), hidden=(16, 16))
    before = params_to_vector(critic)
    res = fit_critic(critic, gaussian_source(), spec, iters=7, lr=0.0,
                     rng=make_rng(20, STREAM_DATA))
    assert res.trace_bits.shape == (7,)
    assert np.array_equal(params_to_vector(critic), before)
    assert np.all(np.isfinite(res.trace_bits))


def test_fit_critic_learns_on_easy_problem():
    spec = EstimatorSpec(kind="nce")
    critic = critic_for(spec, 2, 2, make_rng(21, STREAM_INIT), hidden=(32, 32))
    res = fit_critic(critic, gaussian_source(), spec, iters=150, lr=0.005,
                     rng=make_rng(21, STREAM_DATA))
    assert np.mean(res.trace_bits[-20:]) > np.mean(res.trace_bits[:20])


def test_fit_critic_shifted_mode():
    spec = EstimatorSpec(kind="mine")
    critic = critic_for(spec, 2, 2, make_rng(22, STREAM_INIT), hidden=(16, 16))
    res = fit_critic(critic, gaussian_source(), spec, iters=5, lr=0.005,
                     rng=make_rng(22, STREAM_DATA), marginal_mode="shifted")
    assert res.trace_bits.shape == (5,)
    with pytest.raises(ConfigError):
        fit_critic(critic, gaussian_source(), EstimatorSpec(kind="nce"),
                   iters=2, lr=0.005, rng=make_rng(23, STREAM_DATA),
                   marginal_mode="shifted")
    with pytest.raises(ConfigError):
        fit_critic(critic, gaussian_source(), spec, iters=2, lr=0.005,
                   rng=make_rng(23, STREAM_DATA), marginal_mode="antithetic")


def test_rerun_statistics_constant_critic_has_zero_variance():
    spec = EstimatorSpec(kind="mine")

    def make_critic(seed):
        critic = critic_for(spec, 2, 2, make_rng(seed, STREAM_INIT), hidden=(8, 8))
        vector_to_params(critic, np.zeros(critic.n_params))
        return critic

    stats = rerun_statistics(spec, make_critic, lambda seed: gaussian_source(),
                             seeds=range(5), iters=4, lr=0.0)
    assert stats.traces.shape == (5, 4)
    # constant critic scores 0 everywhere -> estimate exactly 0, no spread
    assert np.all(stats.var_bits == 0.0)
    assert np.all(stats.mean_bits == 0.0)


def test_rerun_statistics_needs_five_seeds():
    spec = EstimatorSpec(kind="mine")
    with pytest.raises(ConfigError):
        rerun_statistics(spec, lambda s: None, lambda s: None,
                         seeds=[0, 1, 2, 3], iters=1, lr=0.0)
