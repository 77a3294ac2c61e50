import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rdattack.attacks import (
    AttackConfig,
    bim,
    fgsm,
    is_success,
    llclass,
    mifgsm,
    perturb_one_step,
    rda,
    sign_vec,
)
from rdattack.netcore import DenseLayer, Network, ShapeError, forward, init_network, input_gradient
from rdattack.rotation import apply_rotation, cos_sin_deg, generate_rotation_set, included_angle_deg, shuffle_set

from conftest import linear_net


def small_net(seed, sizes=(6, 8, 3)):
    rng = np.random.default_rng(seed)
    layers = []
    for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = rng.standard_normal((b, a)) * 1.5
        layers.append(DenseLayer(w, rng.standard_normal(b) * 0.3, "identity" if k == len(sizes) - 2 else "relu"))
    return Network(layers)


def reference_rda(gnet, qnet, x, y, cfg, rng):
    """Plain one-candidate-at-a-time hill climber built from the public pieces."""
    x = np.asarray(x, dtype=np.float32)
    v = input_gradient(gnet, x, y)
    v0 = v.copy()
    current = perturb_one_step(x, v, cfg.epsilon, cfg.clip_box)
    p = forward(qnet, current)
    queries, best, steps = 1, p[y], 0
    if np.argmax(p) != y:
        return current, True, 0, queries
    while steps < cfg.max_search_iters:
        rset = shuffle_set(generate_rotation_set(x.size, cfg.l, cfg.theta, rng), rng)
        moved = False
        for plan in rset:
            w = apply_rotation(plan, v)
            cand = perturb_one_step(x, w, cfg.epsilon, cfg.clip_box)
            if np.array_equal(cand, current):
                continue  # same sample, same confidence: never accepted
            queries += 1
            p = forward(qnet, cand)
            if np.argmax(p) != y or p[y] < best:
                v, current, best, steps, moved = w, cand, p[y], steps + 1, True
                break
        if not moved or np.argmax(forward(qnet, current)) != y:
            break
    assert included_angle_deg(v0, v) >= 0
    return current, bool(np.argmax(forward(qnet, current)) != y), steps, queries


# -- elementary pieces --------------------------------------------------------


def test_sign_vec():
    assert sign_vec([2.5, -0.1, 0.0]).tolist() == [1.0, -1.0, 0.0]
    assert not sign_vec(np.zeros(4)).any()
    v = np.random.default_rng(0).standard_normal(10)
    assert np.array_equal(sign_vec(sign_vec(v)), sign_vec(v))


def test_perturb_one_step_examples():
    assert perturb_one_step([0.9], [2.0], 0.2).tolist() == [1.0]
    x = np.array([0.3, 0.7], dtype=np.float32)
    assert np.array_equal(perturb_one_step(x, np.zeros(2), 0.5), x)
    np.testing.assert_array_equal(perturb_one_step([0.5, 0.5], [1, -1], 0.1), np.float32([0.6, 0.4]))
    assert perturb_one_step([0.9], [2.0], 0.2, clip_box=False)[0] == pytest.approx(1.1)
    with pytest.raises(ShapeError):
        perturb_one_step([0.1, 0.2], [1.0], 0.1)


def test_config_validation():
    for bad in [dict(epsilon=0), dict(epsilon=1.5), dict(epsilon=0.1, alpha=0.2), dict(l=3), dict(theta=0),
                dict(theta=181), dict(iterations=0), dict(momentum_decay=-1), dict(max_search_iters=0)]:
        with pytest.raises(ValueError):
            AttackConfig(**bad)
    assert AttackConfig(epsilon=0.2).step == pytest.approx(0.02)


def test_is_success():
    net = linear_net([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])
    x = np.array([0.8, 0.2], dtype=np.float32)
    assert not is_success(net, x, 0)
    assert is_success(net, x, 1)
    two = linear_net([[0.0], [0.0]], [math.log(0.49), math.log(0.51)])
    assert is_success(two, np.zeros(1), 0)
    X = np.random.default_rng(1).random((20, 2), dtype=np.float32)
    for row in X:
        assert is_success(net, row, 0) == (np.argmax(forward(net, row)) != 0)


# -- baselines ------------------------------------------------------------------


def boundary_classifier():
    """Class 1 iff x0 > 0.55; at x = (0.5, 0.5) the true class 0 gradient points along +x0."""
    return linear_net([[0.0, 0.0], [10.0, 0.0]], [0.0, -5.5])


def test_fgsm_on_constructed_boundary():
    net = boundary_classifier()
    x = np.array([0.5, 0.5], dtype=np.float32)
    g = input_gradient(net, x, 0)
    assert g[0] > 0 and g[1] == 0
    for eps, expected in [(0.1, True), (0.01, False)]:
        out = fgsm(net, x, 0, AttackConfig(epsilon=eps))
        assert out.success == expected
        assert (out.x_adv[0] > 0.55) == expected  # the linear rule itself
        assert out.search_iterations == 0


def test_fgsm_zero_weight_net_leaves_input():
    net = Network([DenseLayer(np.zeros((3, 4)), np.zeros(3), "identity")])
    x = np.full(4, 0.5, dtype=np.float32)
    out = fgsm(net, x, 0, AttackConfig())
    assert np.array_equal(out.x_adv, x) and not out.success


def test_bim_single_step_equals_fgsm():
    net = small_net(0)
    rng = np.random.default_rng(1)
    for _ in range(10):
        x = rng.random(6, dtype=np.float32)
        y = int(np.argmax(forward(net, x)))
        cfg = AttackConfig(epsilon=0.2, alpha=0.2, iterations=1)
        assert np.array_equal(bim(net, x, y, cfg).x_adv, fgsm(net, x, y, cfg).x_adv)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), eps=st.floats(0.01, 1.0), clip=st.booleans(), gamma=st.floats(0, 2))
def test_every_attack_respects_the_budget(seed, eps, clip, gamma):
    net = small_net(seed % 7)
    rng = np.random.default_rng(seed)
    x = rng.random(6, dtype=np.float32)
    y = int(np.argmax(forward(net, x)))
    cfg = AttackConfig(epsilon=eps, iterations=5, momentum_decay=gamma, clip_box=clip, theta=30, l=2,
                       max_search_iters=20)
    outs = [fgsm(net, x, y, cfg), bim(net, x, y, cfg), llclass(net, x, cfg), mifgsm(net, x, y, cfg),
            rda(net, net, x, y, cfg, rng)]
    for out in outs:
        assert np.abs(out.x_adv.astype(np.float64) - x).max() <= eps + 1e-6
        if clip:
            assert out.x_adv.min() >= 0 and out.x_adv.max() <= 1
        assert out.success == is_success(net, out.x_adv, y)


def test_llclass_two_classes_is_targeted_descent():
    net = small_net(3, (4, 6, 2))
    rng = np.random.default_rng(2)
    cfg = AttackConfig(epsilon=0.3, alpha=0.05, iterations=8)
    for _ in range(5):
        x = rng.random(4, dtype=np.float32)
        pred = int(np.argmax(forward(net, x)))
        other = 1 - pred
        x_t = x.copy()
        for _ in range(cfg.iterations):
            x_t = x_t - np.float32(0.05) * np.sign(input_gradient(net, x_t, other))
            x_t = np.clip(np.clip(x_t, x - np.float32(0.3), x + np.float32(0.3)), 0, 1)
        out = llclass(net, x, cfg)
        assert np.array_equal(out.x_adv, x_t)
        assert out.success == (np.argmax(forward(net, x_t)) != pred)


def test_mifgsm_without_momentum_is_bim_bitwise():
    net = small_net(4)
    rng = np.random.default_rng(3)
    for _ in range(10):
        x = rng.random(6, dtype=np.float32)
        y = int(np.argmax(forward(net, x)))
        cfg = AttackConfig(epsilon=0.3, iterations=10, momentum_decay=0.0)
        a = mifgsm(net, x, y, cfg)
        b = bim(net, x, y, AttackConfig(epsilon=0.3, alpha=0.3 / 10, iterations=10))
        assert np.array_equal(a.x_adv, b.x_adv)


def test_mifgsm_zero_gradient_and_literal_step():
    zero = Network([DenseLayer(np.zeros((3, 4)), np.zeros(3), "identity")])
    x = np.full(4, 0.5, dtype=np.float32)
    assert np.array_equal(mifgsm(zero, x, 0, AttackConfig()).x_adv, x)
    net = small_net(5, (4, 5, 3))
    y = int(np.argmax(forward(net, x)))
    # the literal rule jumps straight to the edge of the box on every moved coordinate
    lit = mifgsm(net, x, y, AttackConfig(epsilon=0.1, iterations=5, mi_literal=True))
    moved = lit.x_adv != x
    np.testing.assert_allclose(np.abs(lit.x_adv[moved] - x[moved]), 0.1, atol=1e-7)


# -- RDA ----------------------------------------------------------------------------


def test_rda_returns_fgsm_sample_when_gradient_succeeds():
    net = boundary_classifier()
    x = np.array([0.5, 0.5], dtype=np.float32)
    cfg = AttackConfig(epsilon=0.1, l=2)
    out = rda(net, net, x, 0, cfg, np.random.default_rng(0))
    assert out.success and out.initial_success and out.search_iterations == 0
    assert out.queries == 1 and out.angle_to_gradient_deg == 0.0
    assert np.array_equal(out.x_adv, fgsm(net, x, 0, cfg).x_adv)


def test_rda_rejects_mismatched_networks():
    with pytest.raises(ShapeError):
        rda(init_network([4, 3]), init_network([5, 3]), np.zeros(5), 0, AttackConfig(), np.random.default_rng(0))
    with pytest.raises(ShapeError):
        rda(init_network([4, 3]), init_network([4, 2]), np.zeros(4), 0, AttackConfig(), np.random.default_rng(0))
    with pytest.raises(ValueError, match="exceeds"):
        rda(init_network([4, 3]), init_network([4, 3]), np.zeros(4), 0, AttackConfig(l=6), np.random.default_rng(0))


@pytest.mark.parametrize("seed", range(6))
def test_rda_matches_sequential_reference(seed):
    net = small_net(seed, (12, 10, 4))
    rng = np.random.default_rng(100 + seed)
    x = rng.random(12, dtype=np.float32)
    y = int(np.argmax(forward(net, x)))
    cfg = AttackConfig(epsilon=0.05, l=4, theta=60, max_search_iters=200, seed=seed)
    out = rda(net, net, x, y, cfg, np.random.default_rng(seed))
    ref_x, ref_ok, ref_steps, ref_q = reference_rda(net, net, x, y, cfg, np.random.default_rng(seed))
    assert np.array_equal(out.x_adv, ref_x)
    assert (out.success, out.search_iterations, out.queries) == (ref_ok, ref_steps, ref_q)


def test_rda_on_desk_model_matches_reference_and_invariants(desk_model, desk_filtered):
    cfg = AttackConfig(epsilon=0.1)
    checked = 0
    for i in range(12):
        x, y = desk_filtered.samples[i], int(desk_filtered.labels[i])
        out = rda(desk_model, desk_model, x, y, cfg, np.random.default_rng(i))
        ref_x, ref_ok, ref_steps, ref_q = reference_rda(desk_model, desk_model, x, y, cfg, np.random.default_rng(i))
        assert np.array_equal(out.x_adv, ref_x)
        assert (out.success, out.search_iterations, out.queries) == (ref_ok, ref_steps, ref_q)
        # one-step character and reported angle
        assert np.array_equal(out.x_adv, perturb_one_step(x, out.direction, cfg.epsilon))
        g = input_gradient(desk_model, x, y)
        assert out.angle_to_gradient_deg == pytest.approx(included_angle_deg(g, out.direction), abs=1e-9)
        # the recorded confidence is that of the returned sample
        assert out.final_true_confidence == float(forward(desk_model, out.x_adv)[y])
        assert len(out.trace) == out.search_iterations + 1
        checked += not out.initial_success
    assert checked > 0


def test_rda_is_deterministic(desk_model, desk_filtered):
    cfg = AttackConfig(epsilon=0.05)
    x, y = desk_filtered.samples[3], int(desk_filtered.labels[3])
    a = rda(desk_model, desk_model, x, y, cfg, np.random.default_rng(11))
    b = rda(desk_model, desk_model, x, y, cfg, np.random.default_rng(11))
    assert np.array_equal(a.x_adv, b.x_adv)
    assert (a.queries, a.search_iterations, a.angle_to_gradient_deg, a.trace) == (
        b.queries, b.search_iterations, b.angle_to_gradient_deg, b.trace)


def test_rda_trace_strictly_decreases(desk_model, desk_filtered):
    cfg = AttackConfig(epsilon=0.05)
    seen = 0
    for i in range(20):
        x, y = desk_filtered.samples[i], int(desk_filtered.labels[i])
        out = rda(desk_model, desk_model, x, y, cfg, np.random.default_rng(i))
        t = out.trace
        limit = len(t) - 1 if out.success else len(t)
        assert all(b < a for a, b in zip(t[:limit - 1], t[1:limit]))
        seen += len(t) > 2
    assert seen > 0


def test_rda_iteration_cap_is_reported(desk_model, desk_filtered):
    cfg = AttackConfig(epsilon=0.03, max_search_iters=2)
    for i in range(20):
        x, y = desk_filtered.samples[i], int(desk_filtered.labels[i])
        out = rda(desk_model, desk_model, x, y, cfg, np.random.default_rng(i))
        if out.stop_reason == "iteration_cap":
            assert out.search_iterations == 2 and not out.success
            return
    pytest.fail("no sample hit the cap")


def test_rda_black_box_uses_query_network(desk_model, substitute_model, desk_filtered):
    cfg = AttackConfig(epsilon=0.1)
    x, y = desk_filtered.samples[0], int(desk_filtered.labels[0])
    out = rda(substitute_model, desk_model, x, y, cfg, np.random.default_rng(0))
    assert out.success == is_success(desk_model, out.x_adv, y)
    start = perturb_one_step(x, input_gradient(substitute_model, x, y), cfg.epsilon)
    assert out.trace[0] == float(forward(desk_model, start)[y])


# -- 2-D geometry: exhaustive sweep oracle ---------------------------------------


def sweep_directions(net, x, y, eps):
    """Integer-degree directions whose one-step perturbation misclassifies."""
    ok = {}
    for deg in range(360):
        c, s = cos_sin_deg(deg)
        ok[deg] = is_success(net, perturb_one_step(x, np.array([c, s]), eps), y)
    return ok


def off_gradient_classifier():
    """Two classes; the gradient points along (1, -1) but only upward moves cross the boundary.

    z1 - z0 = (x0 - x1) + 20 relu(x1 - 0.55) - 0.5 around x = (0.5, 0.5).
    """
    hidden = DenseLayer([[0.0, 1.0], [1.0, -1.0]], [-0.55, 1.0], "relu")
    out = DenseLayer([[0.0, 0.0], [20.0, 1.0]], [0.0, -1.5], "identity")
    return Network([hidden, out]), np.array([0.5, 0.5], dtype=np.float32)


def test_rda_finds_off_gradient_direction():
    net, x = off_gradient_classifier()
    eps = 0.1
    assert np.argmax(forward(net, x)) == 0
    g = input_gradient(net, x, 0)
    assert np.array_equal(np.sign(g), [1.0, -1.0])
    assert not fgsm(net, x, 0, AttackConfig(epsilon=eps)).success
    sweep = sweep_directions(net, x, 0, eps)
    # by construction exactly the directions with a positive second component succeed
    assert all(hit == (0 < d < 180) for d, hit in sweep.items())
    out = rda(net, net, x, 0, AttackConfig(epsilon=eps, l=2, theta=180), np.random.default_rng(0))
    assert out.success and not out.initial_success
    found = math.degrees(math.atan2(out.direction[1], out.direction[0])) % 360
    same_sign = [d % 360 for d in (math.floor(found), math.ceil(found))
                 if np.array_equal(np.sign(cos_sin_deg(d % 360)), np.sign(out.direction.astype(np.float64)))]
    assert same_sign and all(sweep[d] for d in same_sign)
    # the gradient sits at 315 degrees, so a successful direction is at least 45 degrees away from it
    assert 45 <= out.angle_to_gradient_deg <= 180


# -- baseline trends on the desk model -----------------------------------------------


def success_rate(attack, net, ds, cfg):
    return np.mean([attack(net, x, int(y), cfg).success for x, y in zip(ds.samples, ds.labels)])


@pytest.fixture(scope="module")
def trend_samples(desk_filtered):
    return desk_filtered.head(200)


def test_bim_beats_fgsm_on_desk_model(desk_model, trend_samples):
    f = success_rate(fgsm, desk_model, trend_samples, AttackConfig(epsilon=0.1))
    b = success_rate(bim, desk_model, trend_samples, AttackConfig(epsilon=0.1, alpha=0.01, iterations=20))
    assert b >= f


def test_llclass_beats_fgsm_on_desk_model(desk_model, trend_samples):
    f = success_rate(fgsm, desk_model, trend_samples, AttackConfig(epsilon=0.2))
    ll = success_rate(lambda n, x, y, c: llclass(n, x, c, y=y), desk_model, trend_samples,
                      AttackConfig(epsilon=0.2, alpha=0.02, iterations=20))
    assert ll > f, f"llclass {ll:.3f} vs fgsm {f:.3f} at eps=0.2"


def test_mifgsm_matches_bim_on_desk_model(desk_model, trend_samples):
    b = success_rate(bim, desk_model, trend_samples, AttackConfig(epsilon=0.1, iterations=10))
    mi = success_rate(mifgsm, desk_model, trend_samples, AttackConfig(epsilon=0.1, iterations=10, momentum_decay=1.0))
    assert mi >= b
