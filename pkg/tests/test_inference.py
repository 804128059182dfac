import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bayes_conformal.data import make_blobs
from bayes_conformal.inference import (
    Ensemble,
    LaplaceLastLayer,
    MeanField,
    Point,
    SampleChain,
    SghmcConfig,
    TrainConfig,
    TrainingError,
    dumps_posterior,
    fit_laplace_last_layer,
    kl_gaussian_diag,
    load_posterior,
    loads_posterior,
    posterior_predictive,
    run_sghmc,
    save_posterior,
    train_ensemble,
    train_map,
    train_mfvi,
)
from bayes_conformal.inference.checkpoint import _arrays
from bayes_conformal.inference.config import step_size_at
from bayes_conformal.inference.laplace import last_layer_ggn
from bayes_conformal.inference.posteriors import laplace_logit_moments
from bayes_conformal.inference.sgd import CheckpointSelector
from bayes_conformal.nn_core import LabeledBatch, NetworkSpec, PriorSpec, forward, init_weights, softmax
from oracles import (
    SOFTMAX_TO_LOGISTIC,
    kl_monte_carlo,
    logistic_data,
    logistic_quadrature_moments,
    rel_frobenius,
)


@pytest.fixture(scope="module")
def separable():
    ds = make_blobs(2, 2, 200, class_sep=4.0, within_std=0.5, seed=3)
    return NetworkSpec((2, 16, 2)), ds.batch


@pytest.fixture(scope="module")
def small_problem():
    ds = make_blobs(3, 3, 120, class_sep=2.0, seed=4)
    return NetworkSpec((3, 8, 3), "tanh"), ds.batch


def entropy(P):
    return -(P * np.log(np.clip(P, 1e-300, None))).sum(axis=-1)


# --- schedules and configs ---

def test_schedules():
    cfg = TrainConfig(epochs=10, step_size=0.1, schedule="cosine")
    assert step_size_at(cfg, 0, 5) == pytest.approx(0.1)
    assert step_size_at(cfg, 25, 5) == pytest.approx(0.05)
    cyc = TrainConfig(epochs=10, step_size=0.1, schedule="cyclical", cycle_epochs=2)
    assert step_size_at(cyc, 10, 5) == pytest.approx(0.1)
    assert step_size_at(cyc, 5, 5) == pytest.approx(0.05)
    assert step_size_at(TrainConfig(schedule="constant", step_size=0.3), 999, 5) == 0.3


@pytest.mark.parametrize("kw", [dict(epochs=0), dict(momentum_decay=1.0), dict(step_size=-1.0), dict(schedule="step")])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_sghmc_config_defaults_and_validation():
    assert SghmcConfig(momentum_decay=0.9).friction == pytest.approx(0.1)
    for kw in (dict(thin_epochs=0), dict(burnin_epochs=-1), dict(friction=0.0), dict(preconditioner="adam")):
        with pytest.raises(ValueError):
            SghmcConfig(**kw)


def test_checkpoint_selector_earliest_tie():
    scores = {2: 0.5, 4: 0.9, 6: 0.9, 8: 0.7}
    sel = CheckpointSelector(2, lambda s: scores[s])
    for epoch in range(1, 9):
        sel.update(epoch, epoch)
    assert sel.result(None) == 4 and sel.best_epoch == 4


# --- MAP and ensembles ---

def test_map_separable_training_accuracy(separable):
    spec, data = separable
    post = train_map(spec, data, TrainConfig(epochs=50, batch_size=20, step_size=1e-3))
    acc = np.mean(np.argmax(forward(spec, post.weights, data.inputs), 1) == data.labels)
    assert acc >= 0.99


def test_map_zero_step_keeps_init(separable):
    spec, data = separable
    post = train_map(spec, data, TrainConfig(epochs=3, step_size=0.0, seed=5))
    assert np.array_equal(post.weights, init_weights(spec, 5))


def test_map_deterministic(small_problem):
    spec, data = small_problem
    cfg = TrainConfig(epochs=5, batch_size=16, step_size=1e-3)
    assert np.array_equal(train_map(spec, data, cfg).weights, train_map(spec, data, cfg).weights)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_map_divergence_aborts(small_problem):
    spec, data = small_problem
    with pytest.raises(TrainingError):
        train_map(spec, data, TrainConfig(epochs=400, batch_size=120, step_size=1e3, schedule="constant"))


def test_map_reaches_stationary_point(small_problem):
    spec, data = small_problem
    from bayes_conformal.nn_core import grad_neg_log_joint

    cfg = TrainConfig(epochs=3000, batch_size=len(data), step_size=2e-3, schedule="constant", checkpoint_every=0)
    w = train_map(spec, data, cfg).weights
    assert np.linalg.norm(grad_neg_log_joint(spec, w, data, cfg.prior)) < 1e-3


def test_map_uses_best_validation_checkpoint(small_problem):
    spec, data = small_problem
    val = data.subset(np.arange(0, 120, 3))
    cfg = TrainConfig(epochs=20, batch_size=16, step_size=3e-4, schedule="constant", checkpoint_every=5)
    chosen = train_map(spec, data, cfg, val=val).weights
    # with a constant schedule a shorter run reproduces each checkpoint exactly
    ckpts = [train_map(spec, data, dataclasses.replace(cfg, epochs=e)).weights for e in (5, 10, 15, 20)]
    accs = [np.mean(np.argmax(forward(spec, w, val.inputs), 1) == val.labels) for w in ckpts]
    np.testing.assert_array_equal(chosen, ckpts[int(np.argmax(accs))])


def test_ensemble_members_and_single_member(small_problem):
    spec, data = small_problem
    cfg = TrainConfig(epochs=3, batch_size=16, step_size=1e-3, seed=2)
    ens = train_ensemble(spec, data, cfg, n_members=5)
    assert len(ens.members) == 5
    assert len({m.tobytes() for m in ens.members}) == 5
    single = train_ensemble(spec, data, cfg, n_members=1)
    x = data.inputs[:10]
    np.testing.assert_array_equal(
        posterior_predictive(single, spec, x), posterior_predictive(train_map(spec, data, cfg), spec, x)
    )
    for j, member in enumerate(ens.members):
        np.testing.assert_array_equal(member, train_map(spec, data, dataclasses.replace(cfg, seed=2 + j)).weights)


def test_ensemble_predictive_permutation_invariant(rng):
    spec = NetworkSpec((3, 4, 3))
    members = [rng.normal(size=spec.n_params) for _ in range(4)]
    x = rng.normal(size=(7, 3))
    a = posterior_predictive(Ensemble(members), spec, x)
    for perm in ([3, 2, 1, 0], [1, 3, 0, 2]):
        # exact: averaging in a fixed reduction order over a sorted stack
        b = posterior_predictive(Ensemble([members[i] for i in perm]), spec, x)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)


def test_ensemble_of_identical_members(rng):
    spec = NetworkSpec((3, 4, 3))
    w = rng.normal(size=spec.n_params)
    x = rng.normal(size=(5, 3))
    np.testing.assert_allclose(posterior_predictive(Ensemble([w, w, w]), spec, x), softmax(forward(spec, w, x)), atol=1e-15)


# --- KL and MFVI ---

def test_kl_closed_form_by_hand():
    assert kl_gaussian_diag(np.zeros(3), np.zeros(3), PriorSpec(1.0)) == pytest.approx(0.0, abs=1e-15)
    assert kl_gaussian_diag(np.array([1.0]), np.zeros(1), PriorSpec(1.0)) == pytest.approx(0.5)
    lam = 4.0
    assert kl_gaussian_diag(np.zeros(2), np.full(2, -0.5 * np.log(lam)), PriorSpec(lam)) == pytest.approx(0.0, abs=1e-14)


def test_kl_rejects_improper_prior():
    with pytest.raises(ValueError):
        kl_gaussian_diag(np.zeros(2), np.zeros(2), PriorSpec(0.0))


@pytest.mark.parametrize("seed", range(3))
def test_kl_against_monte_carlo(seed):
    r = np.random.default_rng(seed)
    m, ls, lam = r.normal(size=3), r.uniform(-1, 0.5, 3), float(r.uniform(0.5, 3))
    est, se = kl_monte_carlo(m, ls, lam, 200_000, seed)
    assert abs(kl_gaussian_diag(m, ls, PriorSpec(lam)) - est) < 3 * se


def test_mfvi_prior_limit_on_empty_data():
    spec = NetworkSpec((2, 3, 2))
    lam = 25.0
    cfg = TrainConfig(epochs=3000, step_size=0.01, schedule="constant", prior=PriorSpec(lam), checkpoint_every=0)
    post = train_mfvi(spec, LabeledBatch.empty(2), cfg, init_sigma=0.01)
    np.testing.assert_allclose(post.means, 0.0, atol=1e-3)
    np.testing.assert_allclose(post.sigmas, 1 / np.sqrt(lam), rtol=1e-3)


def test_mfvi_separable_accuracy(separable):
    spec, data = separable
    post = train_mfvi(spec, data, TrainConfig(epochs=50, batch_size=20, step_size=3e-3))
    P = posterior_predictive(post, spec, data.inputs, n_samples=30, seed=0)
    assert np.mean(P.argmax(1) == data.labels) >= 0.95
    assert np.allclose(post.log_sigmas, post.log_sigmas) and post.means.shape == (spec.n_params,)


def test_mfvi_elbo_moving_average_rises(small_problem):
    spec, data = small_problem
    hist = []
    cfg = TrainConfig(epochs=300, batch_size=len(data), step_size=3e-3, schedule="constant", checkpoint_every=0)
    train_mfvi(spec, data, cfg, history=hist)
    h = np.asarray(hist)
    ma = np.convolve(h, np.ones(100) / 100, mode="valid")[::100]
    assert np.all(np.diff(ma) > 0)


def test_mfvi_deterministic_and_validates(small_problem):
    spec, data = small_problem
    cfg = TrainConfig(epochs=2, batch_size=32, step_size=1e-3)
    a, b = train_mfvi(spec, data, cfg), train_mfvi(spec, data, cfg)
    assert np.array_equal(a.means, b.means) and np.array_equal(a.log_sigmas, b.log_sigmas)
    with pytest.raises(ValueError):
        train_mfvi(spec, data, cfg, init_sigma=0.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_mfvi_nonfinite_elbo_aborts(small_problem):
    spec, data = small_problem
    with pytest.raises(TrainingError):
        train_mfvi(spec, data, TrainConfig(epochs=50, step_size=1e6, schedule="constant"))


def test_mean_field_zero_sigma_equals_point(rng):
    spec = NetworkSpec((3, 5, 4))
    mu = rng.normal(size=spec.n_params)
    x = rng.normal(size=(6, 3))
    mf = MeanField(mu, np.full_like(mu, -np.inf))
    np.testing.assert_allclose(posterior_predictive(mf, spec, x, n_samples=4), posterior_predictive(Point(mu), spec, x), atol=1e-15)


@given(st.integers(0, 1000))
def test_mean_field_predictive_entropy_exceeds_mean_network(seed):
    r = np.random.default_rng(seed)
    spec = NetworkSpec((3, 6, 4), "tanh")
    mu = r.normal(size=spec.n_params)
    mf = MeanField(mu, np.full_like(mu, np.log(r.uniform(0.2, 1.0))))
    x = r.normal(size=(64, 3))
    h_mf = entropy(posterior_predictive(mf, spec, x, n_samples=200, seed=seed)).mean()
    h_pt = entropy(posterior_predictive(Point(mu), spec, x)).mean()
    assert h_mf >= h_pt - 1e-9


# --- SGHMC ---

def gaussian_target_chain(seed, lam=1.0):
    spec = NetworkSpec((4, 2))  # 10 parameters, empty data: the target is the prior
    cfg = SghmcConfig(
        epochs=1000 + 20 * 5000, burnin_epochs=1000, thin_epochs=20, step_size=0.02, friction=0.2,
        schedule="constant", prior=PriorSpec(lam), seed=seed,
    )
    chain = run_sghmc(spec, LabeledBatch.empty(4), cfg)
    return np.asarray(chain.samples), lam


def test_sghmc_no_injection_limit_stays_put():
    spec = NetworkSpec((4, 2))
    init = np.linspace(-1, 1, spec.n_params)
    cfg = SghmcConfig(epochs=20, burnin_epochs=0, thin_epochs=1, step_size=1e-12, friction=1.0, schedule="constant")
    chain = run_sghmc(spec, LabeledBatch.empty(4), cfg, init=init)
    assert np.abs(np.asarray(chain.samples) - init).max() < 1e-4


def test_sghmc_deterministic(small_problem):
    spec, data = small_problem
    cfg = SghmcConfig(epochs=6, burnin_epochs=2, thin_epochs=2, batch_size=32, step_size=1e-4)
    a, b = run_sghmc(spec, data, cfg), run_sghmc(spec, data, cfg)
    assert len(a.samples) == 2
    assert all(np.array_equal(x, y) for x, y in zip(a.samples, b.samples))


def test_sghmc_divergence_aborts(small_problem):
    spec, data = small_problem
    cfg = SghmcConfig(epochs=200, burnin_epochs=1, step_size=10.0, friction=0.01, schedule="constant")
    with pytest.raises(TrainingError):
        run_sghmc(spec, data, cfg)


def test_sghmc_needs_epochs_after_burnin():
    with pytest.raises(ValueError):
        run_sghmc(NetworkSpec((2, 2)), LabeledBatch.empty(2), SghmcConfig(epochs=5, burnin_epochs=5))


def test_sghmc_rmsprop_runs_and_stays_finite(small_problem):
    spec, data = small_problem
    cfg = SghmcConfig(epochs=8, burnin_epochs=4, thin_epochs=1, batch_size=32, step_size=1e-3, preconditioner="rmsprop")
    chain = run_sghmc(spec, data, cfg)
    assert len(chain.samples) == 4 and np.all(np.isfinite(chain.samples))


def test_sghmc_gaussian_moments_one_seed():
    s, lam = gaussian_target_chain(seed=11)
    assert np.abs(s.mean(0)).max() < 0.05
    assert np.abs(s.var(0) * lam - 1).max() < 0.10


# --- Laplace ---

def test_ggn_matches_kron_form(rng):
    n, h1, K = 7, 3, 4
    phi = rng.normal(size=(n, h1))
    P = rng.dirichlet(np.ones(K), n)
    H = last_layer_ggn(phi, P, 0.5)
    expected = 0.5 * np.eye(h1 * K)
    for i in range(n):
        expected += np.kron(np.outer(phi[i], phi[i]), np.diag(P[i]) - np.outer(P[i], P[i]))
    np.testing.assert_allclose(H, expected, atol=1e-12)


def test_ggn_equals_finite_difference_hessian_for_linear_softmax(rng):
    # with no hidden layer the GGN is the exact Hessian of the log joint
    from bayes_conformal.nn_core import grad_neg_log_joint

    spec = NetworkSpec((3, 3))
    w = rng.normal(size=spec.n_params)
    data = LabeledBatch(rng.normal(size=(10, 3)), rng.integers(0, 3, 10))
    prior = PriorSpec(0.7)
    post = fit_laplace_last_layer(spec, w, data, prior)
    h = 1e-5
    fd = np.column_stack([
        (grad_neg_log_joint(spec, w + h * e, data, prior) - grad_neg_log_joint(spec, w - h * e, data, prior)) / (2 * h)
        for e in np.eye(spec.n_params)
    ])
    # parameters are ordered (W row-major, b), the same as the flat weight vector
    np.testing.assert_allclose(np.linalg.inv(post.last_layer_cov), fd, atol=1e-6)


def test_laplace_strong_prior_limit(small_problem):
    spec, data = small_problem
    w = init_weights(spec, 0)
    post = fit_laplace_last_layer(spec, w, data, PriorSpec(1e8))
    np.testing.assert_allclose(post.last_layer_cov * 1e8, np.eye(post.last_layer_cov.shape[0]), atol=1e-3)


def test_laplace_cov_symmetric_psd(small_problem):
    spec, data = small_problem
    post = fit_laplace_last_layer(spec, init_weights(spec, 1), data, PriorSpec(1.0))
    c = post.last_layer_cov
    assert np.array_equal(c, c.T) and np.linalg.eigvalsh(c).min() > 0
    assert c.shape == (9 * 3, 9 * 3)


def test_laplace_container_rejects_bad_cov():
    with pytest.raises(ValueError):
        LaplaceLastLayer(np.zeros(6), np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        LaplaceLastLayer(np.zeros(6), np.zeros(2), np.array([[1.0, 0.0], [0.0, -1.0]]))


def test_laplace_zero_cov_reproduces_map(rng):
    spec = NetworkSpec((3, 5, 3))
    w = rng.normal(size=spec.n_params)
    m = spec.last_layer_slice().stop - spec.last_layer_slice().start
    post = LaplaceLastLayer(w, w[spec.last_layer_slice()], np.zeros((m, m)))
    x = rng.normal(size=(8, 3))
    np.testing.assert_array_equal(posterior_predictive(post, spec, x), posterior_predictive(Point(w), spec, x))


def test_laplace_logit_variance_by_sampling(rng):
    spec = NetworkSpec((2, 4, 3))
    w = rng.normal(size=spec.n_params)
    m = 5 * 3
    A = rng.normal(size=(m, m)) * 0.3
    post = LaplaceLastLayer(w, w[spec.last_layer_slice()], A @ A.T)
    x = rng.normal(size=(4, 2))
    mean, var = laplace_logit_moments(spec, post, x)
    draws = rng.multivariate_normal(post.last_layer_mean, post.last_layer_cov, size=200_000)
    logits = []
    for d in draws[:: 50]:
        ww = w.copy()
        ww[spec.last_layer_slice()] = d
        logits.append(forward(spec, ww, x))
    logits = np.asarray(logits)
    np.testing.assert_allclose(mean, forward(spec, w, x), atol=1e-12)
    np.testing.assert_allclose(var, logits.var(0), rtol=0.1)


def fit_logistic_laplace(seed, lam=4.0):
    x, y = logistic_data(seed)
    spec = NetworkSpec((1, 2))
    data = LabeledBatch(x[:, None], y)
    cfg = TrainConfig(epochs=3000, batch_size=len(y), step_size=0.01, schedule="constant",
                      prior=PriorSpec(lam), checkpoint_every=0)
    w = train_map(spec, data, cfg).weights
    post = fit_laplace_last_layer(spec, w, data, PriorSpec(lam))
    A = SOFTMAX_TO_LOGISTIC
    la_mean, la_cov = A @ post.last_layer_mean, A @ post.last_layer_cov @ A.T
    q_mean, q_cov = logistic_quadrature_moments(x, y, lam / 2)
    return rel_frobenius(la_mean, q_mean), rel_frobenius(la_cov, q_cov)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_laplace_against_quadrature(seed):
    e_mean, e_cov = fit_logistic_laplace(seed)
    assert e_mean < 0.15 and e_cov < 0.15


# --- predictive outputs and checkpoints ---

def all_posteriors(spec, rng):
    w = rng.normal(size=spec.n_params)
    sl = spec.last_layer_slice()
    m = sl.stop - sl.start
    A = rng.normal(size=(m, m)) * 0.2
    return [
        Point(w),
        Ensemble([w, rng.normal(size=spec.n_params)]),
        MeanField(w, np.full_like(w, -1.0)),
        SampleChain([w, w * 0.5, w * 2]),
        LaplaceLastLayer(w, w[sl].copy(), A @ A.T),
    ]


def test_predictive_outputs_are_distributions(rng):
    spec = NetworkSpec((3, 6, 4))
    x = rng.normal(size=(20, 3)) * 5
    for post in all_posteriors(spec, rng):
        for T in (0.25, 1.0, 3.0):
            P = posterior_predictive(post, spec, x, n_samples=10, seed=1, temperature=T)
            assert np.all(P > 0) and np.allclose(P.sum(1), 1, atol=1e-9)
        p1 = posterior_predictive(post, spec, x[0], n_samples=10, seed=1)
        np.testing.assert_allclose(p1, posterior_predictive(post, spec, x[:1], n_samples=10, seed=1)[0], atol=1e-15)


def test_point_predictive_and_temperature(rng):
    spec = NetworkSpec((3, 6, 4))
    w = rng.normal(size=spec.n_params)
    x = rng.normal(size=(5, 3))
    np.testing.assert_array_equal(posterior_predictive(Point(w), spec, x), softmax(forward(spec, w, x)))
    np.testing.assert_allclose(posterior_predictive(Point(w), spec, x, temperature=0.5), softmax(2 * forward(spec, w, x)), atol=1e-15)
    with pytest.raises(ValueError):
        posterior_predictive(Point(w), spec, x, temperature=0.0)


def test_empty_containers_rejected():
    with pytest.raises(ValueError):
        Ensemble([])
    with pytest.raises(ValueError):
        SampleChain([])
    with pytest.raises(ValueError):
        MeanField(np.zeros(3), np.zeros(2))


def test_checkpoint_round_trip_bit_exact(tmp_path, rng):
    spec = NetworkSpec((3, 6, 4), "tanh")
    for i, post in enumerate(all_posteriors(spec, rng)):
        path = tmp_path / f"p{i}.ckpt"
        save_posterior(path, post, spec, seed=42)
        back, spec_back, header = load_posterior(path)
        assert type(back) is type(post) and spec_back == spec and header["seed"] == 42
        assert header["kind"] == post.kind
        for a, b in zip(_arrays(post), _arrays(back)):
            assert a[0] == b[0] and a[1].tobytes() == b[1].tobytes() and a[1].shape == b[1].shape
        assert dumps_posterior(back, spec_back, 42) == path.read_bytes()


def test_checkpoint_layout(rng):
    import json
    import struct

    spec = NetworkSpec((2, 2))
    w = np.arange(6, dtype=np.float64)
    blob = dumps_posterior(Point(w), spec, seed=3)
    assert blob[:4] == b"BCPT"
    (hlen,) = struct.unpack("<I", blob[4:8])
    header = json.loads(blob[8 : 8 + hlen])
    assert header["arrays"] == [{"name": "weights", "shape": [6]}]
    np.testing.assert_array_equal(np.frombuffer(blob[8 + hlen :], dtype="<f8"), w)


def test_checkpoint_rejects_garbage():
    with pytest.raises(ValueError):
        loads_posterior(b"NOPE1234")
