import numpy as np
import pytest

from horouf.errors import DimensionTooLarge, MeanPlacementFailure
from horouf.neural import per_example_cross_entropy
from horouf.oracle import (
    LinearSurrogate,
    SyntheticSpec,
    finite_diff_grad,
    generate,
    vertex_attack,
)
from horouf.util import stable_rng


class TestGenerate:
    def test_zero_sigma_samples_equal_means(self):
        ds, means = generate(SyntheticSpec(n_classes=3, dim=8, n_per_class=5, sigma=0.0, seed=1))
        for i in range(len(ds)):
            assert np.array_equal(ds.X[i], means[ds.y[i]])

    def test_seed_determinism(self):
        spec = SyntheticSpec(n_classes=4, dim=16, n_per_class=10, seed=77)
        a, means_a = generate(spec)
        b, means_b = generate(spec)
        assert a.X.tobytes() == b.X.tobytes()
        assert np.array_equal(means_a, means_b)
        c, _ = generate(SyntheticSpec(n_classes=4, dim=16, n_per_class=10, seed=78))
        assert c.X.tobytes() != a.X.tobytes()

    def test_margin_respected(self):
        for seed in range(5):
            _, means = generate(SyntheticSpec(n_classes=8, dim=32, n_per_class=1,
                                              margin=5.0, seed=seed))
            m = means.astype(np.float64)
            dists = np.linalg.norm(m[:, None, :] - m[None, :, :], axis=2)
            off = dists[~np.eye(len(m), dtype=bool)]
            assert off.min() >= 5.0

    def test_nearest_mean_separability(self):
        # well-separated low-noise clusters classify perfectly by nearest mean
        ds, means = generate(SyntheticSpec(n_classes=2, dim=64, n_per_class=500,
                                           sigma=0.1, margin=10.0, seed=3))
        m = means.astype(np.float64)
        dists = np.linalg.norm(ds.X[:, None, :].astype(np.float64) - m[None, :, :], axis=2)
        preds = np.argmin(dists, axis=1)
        assert np.mean(preds == ds.y) == 1.0

    def test_placement_failure(self):
        # 40 points pairwise >= 10 apart cannot fit on a short line segment
        with pytest.raises(MeanPlacementFailure):
            generate(SyntheticSpec(n_classes=40, dim=1, n_per_class=1, margin=10.0, seed=0))


def test_full_scale_smoke():
    # reference-geometry run: 112 classes at width 1024 stays fast
    import time

    from horouf.adversarial import AttackConfig
    from horouf.evaluation import evaluate, evaluate_robust
    from horouf.neural import init_mlp, train

    started = time.monotonic()
    ds, _ = generate(SyntheticSpec(n_classes=112, dim=1024, n_per_class=6,
                                   sigma=0.3, margin=8.0, seed=12))
    model = init_mlp(1024, 112, seed=12)
    train(model, ds, epochs=2, batch_size=32, seed=12)
    report = evaluate(model, ds)
    assert report.confusion.shape == (112, 112)
    robust = evaluate_robust(model, ds, AttackConfig(epsilon=0.05, steps=5))
    assert robust <= report.clean_accuracy
    assert time.monotonic() - started < 300


class TestFiniteDiff:
    def test_square_at_three(self):
        grad = finite_diff_grad(lambda x: float(x[0] ** 2), np.array([3.0]), h=1e-5)
        assert abs(grad[0] - 6.0) < 1e-8

    def test_linear_exact_any_step(self):
        c = np.array([2.0, -3.0, 0.5])
        for h in (1e-2, 1e-5, 1e-8):
            grad = finite_diff_grad(lambda x: float(c @ x), np.zeros(3), h=h)
            assert np.allclose(grad, c, atol=1e-6)

    def test_matches_analytic_on_quadratic_form(self):
        rng = stable_rng(9, "fd")
        q = rng.normal(0, 1, (5, 5))
        q = q @ q.T
        x0 = rng.normal(0, 1, 5)
        grad = finite_diff_grad(lambda x: float(0.5 * x @ q @ x), x0)
        assert np.max(np.abs(grad - q @ x0)) < 1e-6


class TestVertexAttack:
    def test_zero_budget_is_clean_loss(self):
        sur = LinearSurrogate.random(4, 3, seed=0)
        x = stable_rng(0, "vx").normal(0, 1, 4)
        clean = float(per_example_cross_entropy(sur.logits(x[None, :]), np.array([1]))[0])
        assert vertex_attack(sur, x, 1, 0.0) == clean

    def test_one_dimensional_endpoints(self):
        sur = LinearSurrogate.random(1, 2, seed=5)
        x = np.array([0.3])
        eps = 0.2
        losses = [
            float(per_example_cross_entropy(sur.logits(np.array([[0.3 + s * eps]])),
                                            np.array([0]))[0])
            for s in (-1.0, 1.0)
        ]
        assert vertex_attack(sur, x, 0, eps) == max(losses)

    def test_dimension_cap(self):
        sur = LinearSurrogate.random(21, 2, seed=1)
        with pytest.raises(DimensionTooLarge):
            vertex_attack(sur, np.zeros(21), 0, 0.1)

    def test_dominates_interior_points(self):
        # the vertex max bounds the loss anywhere inside the box
        rng = stable_rng(2, "vx")
        sur = LinearSurrogate.random(6, 3, seed=2)
        x = rng.normal(0, 1, 6)
        y = 2
        eps = 0.3
        vmax = vertex_attack(sur, x, y, eps)
        for _ in range(200):
            delta = rng.uniform(-eps, eps, 6)
            loss = float(per_example_cross_entropy(sur.logits((x + delta)[None, :]),
                                                   np.array([y]))[0])
            assert loss <= vmax + 1e-12
