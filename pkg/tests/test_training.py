import json

import numpy as np
import pytest

from neurframe.features import detect_features
from neurframe.mesh import generate_primitive, normalize_to_unit_box, subdivide_multi_boundary_tets
from neurframe.selfcheck import gradient_error
from neurframe.sh_frame import SQRT_7_12, align_residual
from neurframe.siren import evaluate, init_params
from neurframe.training import (DivergenceError, TrainConfig, alignment_term, loss_boundary, loss_feature,
                                loss_smoothness, prepare_training_data, read_loss_csv, smoothness_term, total_loss,
                                train, write_loss_csv)

SMALL = (3, 16, 16, 9)


@pytest.fixture(scope="module")
def data():
    mesh, _ = normalize_to_unit_box(generate_primitive("cube", 2))
    mesh = subdivide_multi_boundary_tets(mesh)
    return prepare_training_data(mesh, detect_features(mesh))


def test_smoothness_term_brute_force(rng):
    q = rng.normal(size=(6, 9))
    edges = np.array([[0, 1], [1, 2], [3, 5], [0, 4]])
    w = rng.uniform(0.5, 2, 4)
    value, dq = smoothness_term(q, edges, w)
    ref = sum(wi * np.sum((q[a] - q[b]) ** 2) for (a, b), wi in zip(edges, w)) / 4
    assert value == pytest.approx(ref, rel=1e-14)
    h = 1e-6
    for i, j in [(0, 0), (1, 4), (5, 8), (2, 2)]:
        e = np.zeros_like(q)
        e[i, j] = h
        fd = (smoothness_term(q + e, edges, w)[0] - smoothness_term(q - e, edges, w)[0]) / (2 * h)
        assert dq[i, j] == pytest.approx(fd, rel=1e-6, abs=1e-10)


def test_alignment_term_brute_force(rng, data):
    q = rng.normal(size=(len(data.boundary.tets), 9))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    value, dq = alignment_term(q, data.boundary_rows)
    ref = np.mean([align_residual(qi, n) ** 2 for qi, n in zip(q, data.boundary.normals)])
    assert value == pytest.approx(ref, rel=1e-12)
    h = 1e-6
    e = np.zeros_like(q)
    e[3, 4] = h
    fd = (alignment_term(q + e, data.boundary_rows)[0] - alignment_term(q - e, data.boundary_rows)[0]) / (2 * h)
    assert dq[3, 4] == pytest.approx(fd, rel=1e-6)


def test_empty_terms_are_errors():
    with pytest.raises(ValueError):
        smoothness_term(np.zeros((2, 9)), np.zeros((0, 2), dtype=int), np.zeros(0))
    with pytest.raises(ValueError):
        alignment_term(np.zeros((0, 9)), np.zeros((0, 9)))


def test_boundary_loss_is_zero_for_aligned_constant_field(data):
    q = np.tile([np.sqrt(5 / 12), 0, 0, 0, SQRT_7_12, 0, 0, 0, 0], (len(data.boundary.tets), 1))
    assert alignment_term(q, data.boundary_rows)[0] == pytest.approx(0.0, abs=1e-28)


def test_feature_distances(data):
    # cube edges sit on |x| = |y| = 1 etc.; distance to the nearest edge by hand
    c = data.centroids
    a = np.sort(1 - np.abs(c), axis=1)
    ref = np.hypot(a[:, 0], a[:, 1])
    assert np.allclose(data.feature_distance, ref, atol=1e-12)
    assert np.allclose(data.feature_weights(10.0), np.exp(-10 * ref))


@pytest.mark.parametrize("term", ["smoothness", "boundary", "feature"])
def test_loss_gradients_match_finite_differences(data, term):
    params = init_params(4, SMALL)
    fn = {
        "smoothness": lambda p: loss_smoothness(p, data.dual),
        "boundary": lambda p: loss_boundary(p, data),
        "feature": lambda p: loss_feature(p, data, sigma=10.0),
    }[term]
    assert gradient_error(fn, params, n_entries=12) < 1e-4


def test_total_loss_gradient_full_network(data):
    params = init_params(0)
    cfg = TrainConfig()
    fn = lambda p: (lambda r: (r[0].total, r[1]))(total_loss(p, data, cfg))
    assert gradient_error(fn, params, n_entries=3, h=1e-5) < 1e-3


def test_total_loss_is_weighted_sum(data):
    params = init_params(1, SMALL)
    cfg = TrainConfig(lambda_s=0.7, lambda_b=3.0, lambda_f=2.0, sigma=5.0)
    report, grads = total_loss(params, data, cfg)
    ls, gs = loss_smoothness(params, data.dual)
    lb, gb = loss_boundary(params, data)
    lf, gf = loss_feature(params, data, sigma=5.0)
    assert (report.smoothness, report.boundary, report.feature) == pytest.approx((ls, lb, lf), rel=1e-12)
    assert report.total == pytest.approx(0.7 * ls + 3.0 * lb + 2.0 * lf, rel=1e-12)
    for g, a, b, c in zip(grads.arrays(), gs.arrays(), gb.arrays(), gf.arrays()):
        assert np.allclose(g, 0.7 * a + 3.0 * b + 2.0 * c, rtol=1e-10, atol=1e-14)


def test_minibatch_loss_needs_rng(data):
    cfg = TrainConfig(batch_edges=10, batch_boundary=5, batch_points=7)
    with pytest.raises(ValueError):
        total_loss(init_params(0, SMALL), data, cfg)
    report, _ = total_loss(init_params(0, SMALL), data, cfg, rng=np.random.default_rng(0))
    assert np.isfinite(report.total)


def test_no_features_means_zero_feature_term():
    mesh, _ = normalize_to_unit_box(generate_primitive("cube", 1))
    d = prepare_training_data(subdivide_multi_boundary_tets(mesh))
    value, g = loss_feature(init_params(0, SMALL), d)
    assert value == 0.0 and all(not a.any() for a in g.arrays())


def test_config_handling(tmp_path):
    cfg = TrainConfig()
    assert (cfg.lambda_s, cfg.lambda_b, cfg.lambda_f, cfg.sigma, cfg.lr, cfg.iterations) == (1, 20, 1, 10, 5e-5, 10_000)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"lamda_b": 3})
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    (tmp_path / "c.json").write_text(json.dumps({"iterations": 5, "seed": 9}))
    assert TrainConfig.from_json(tmp_path / "c.json") == TrainConfig(iterations=5, seed=9)


def test_training_decreases_loss_and_is_deterministic(data):
    cfg = TrainConfig(iterations=60, lr=1e-3)
    params = init_params(0, SMALL)
    a = train(data, cfg, params=params)
    b = train(data, cfg, params=params)
    assert a.params.equals(b.params)
    assert [r.total for r in a.history] == [r.total for r in b.history]
    assert len(a.history) == 60
    assert a.history[-1].total < 0.5 * a.history[0].total
    # the starting params are not modified
    assert params.equals(init_params(0, SMALL))


def test_divergence_guard_on_nan(data):
    def poison(it, p, r):
        if it == 2:
            p.weights[0][:] = np.nan

    with pytest.raises(DivergenceError, match="not finite"):
        train(data, TrainConfig(iterations=10), params=init_params(0, SMALL), callback=poison)


def test_divergence_guard_on_growth(data):
    # a perfectly aligned constant output has loss ~0, so knocking it off afterwards trips the 10x rule
    p = init_params(0, SMALL)
    p.weights[-1][:] = 0.0
    p.biases[-1][:] = [np.sqrt(5 / 12), 0, 0, 0, SQRT_7_12, 0, 0, 0, 0]

    def kick(it, params, r):
        if it == 3:
            params.biases[-1][:] = [0, 0, 0, 0, 0, 0, 0, 0, 1.0]

    with pytest.raises(DivergenceError, match="10x"):
        train(data, TrainConfig(iterations=10), params=p, callback=kick, grace=2)


def test_callback_and_loss_csv(data, tmp_path):
    seen = []
    res = train(data, TrainConfig(iterations=5), params=init_params(0, SMALL),
                callback=lambda it, p, r: seen.append(it))
    assert seen == list(range(5))
    write_loss_csv(tmp_path / "loss.csv", res.history)
    assert read_loss_csv(tmp_path / "loss.csv") == res.history
    assert (tmp_path / "loss.csv").read_text().splitlines()[0] == "iter,L_S,L_B,L_F,total"


def test_trained_field_is_unit_norm(data):
    res = train(data, TrainConfig(iterations=3), params=init_params(0, SMALL))
    assert np.allclose(np.linalg.norm(evaluate(res.params, data.centroids), axis=1), 1.0)
