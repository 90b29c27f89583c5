"""Decay net tests: closed forms, FD gradients, structure equivalence."""

import numpy as np
import pytest

import splatsim.neuralsort as ns


def _hand_net():
    return ns.DecayNet(w1=[1.0, -1.0, 2.0], b1=[0.0, 0.5, -1.0],
                       w2=[0.5, 0.5, 0.5], b2=-0.2)


def test_forward_closed_form():
    net = _hand_net()
    d = np.array([0.6])
    pre = np.array([0.6, -0.1, 0.2])
    h = np.where(pre > 0, pre, pre / 8.0)
    want = np.exp(0.5 * h.sum() - 0.2)
    f = net.forward(d)
    assert f[0] == pytest.approx(want, rel=1e-15)


def test_param_and_mac_counts():
    net = ns.DecayNet.init(seed=0)
    assert net.n_params == 10
    assert net.n_macs == 6
    want_macs = {"2l-2n": 4, "2l-3n": 6, "3l-2n": 8, "3l-3n": 15}
    want_params = {"2l-2n": 7, "2l-3n": 10, "3l-2n": 13, "3l-3n": 22}
    for s, m in want_macs.items():
        g = ns.GeneralNet.init(structure=s, seed=1)
        assert g.n_macs == m
        assert g.n_params == want_params[s]


def test_init_statistics():
    # He normal on the fan-in-1 hidden layer, Xavier uniform on the output
    w1s, w2s = [], []
    for seed in range(3000):
        net = ns.DecayNet.init(seed=seed)
        w1s.append(net.w1)
        w2s.append(net.w2)
        assert np.all(net.b1 == 0.0) and net.b2 == 0.0
    w1s = np.concatenate(w1s)
    w2s = np.concatenate(w2s)
    assert abs(w1s.std() - np.sqrt(2.0)) < 0.05 * np.sqrt(2.0)
    assert abs(w1s.mean()) < 0.05
    limit = np.sqrt(6.0 / 4.0)
    assert np.all(np.abs(w2s) <= limit)
    assert w2s.max() > 0.9 * limit and w2s.min() < -0.9 * limit
    # uniform variance is limit^2 / 3
    assert abs(w2s.var() - limit ** 2 / 3) < 0.05 * limit ** 2 / 3


def _loss(net, d, df):
    return float(np.sum(df * net.forward(d)))


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(10)
    for seed in range(5):
        net = ns.DecayNet.init(seed=seed)
        d = rng.uniform(0.05, 1.0, 40)
        df = rng.normal(size=40)
        f, cache = net.forward_cached(d)
        g = net.backward(cache, df)
        eps = 1e-6
        flat = []
        for name in ("w1", "b1", "w2"):
            for j in range(3):
                up = ns.DecayNet(**_clone_args(net, name, j, eps))
                dn = ns.DecayNet(**_clone_args(net, name, j, -eps))
                fd = (_loss(up, d, df) - _loss(dn, d, df)) / (2 * eps)
                flat.append((fd, g[name][j]))
        up = ns.DecayNet(w1=net.w1, b1=net.b1, w2=net.w2, b2=net.b2 + eps)
        dn = ns.DecayNet(w1=net.w1, b1=net.b1, w2=net.w2, b2=net.b2 - eps)
        fd = (_loss(up, d, df) - _loss(dn, d, df)) / (2 * eps)
        flat.append((fd, g["b2"]))
        for fd, an in flat:
            assert abs(fd - an) <= 1e-7 + 1e-5 * max(abs(fd), abs(an))


def _clone_args(net, name, j, eps):
    args = {"w1": net.w1.copy(), "b1": net.b1.copy(), "w2": net.w2.copy(),
            "b2": net.b2}
    args[name][j] += eps
    return args


def test_decay_equals_general_2l3n():
    rng = np.random.default_rng(3)
    net = ns.DecayNet.init(seed=7)
    gen = ns.decay_as_general(net)
    d = rng.uniform(0, 1, 64)
    for mode in ("exact", "fp16"):
        fd_ = net.forward(d, mode=mode)
        fg = gen.forward(d, mode=mode)
        np.testing.assert_array_equal(fd_, fg)
    df = rng.normal(size=64)
    _, c1 = net.forward_cached(d)
    _, c2 = gen.forward_cached(d)
    g1 = net.backward(c1, df)
    g2 = gen.backward(c2, df)
    np.testing.assert_allclose(g2["weights"][0].ravel(), g1["w1"], rtol=1e-13)
    np.testing.assert_allclose(g2["biases"][0], g1["b1"], rtol=1e-13)
    np.testing.assert_allclose(g2["weights"][1].ravel(), g1["w2"], rtol=1e-13)
    np.testing.assert_allclose(g2["biases"][1][0], g1["b2"], rtol=1e-13)


def test_fp16_forward_rounds_but_tracks_exact():
    net = ns.DecayNet.init(seed=4)
    d = np.linspace(0, 1, 33)
    f = net.forward(d)
    f16 = net.forward(d, mode="fp16")
    assert np.all(np.isfinite(f16))
    rel = np.abs(f16 - f) / np.maximum(np.abs(f), 1e-6)
    assert rel.max() < 0.02
    np.testing.assert_array_equal(f16, net.forward(d, mode="fp16"))
    with pytest.raises(ValueError):
        net.forward(d, mode="fp8")


def test_general_structures_and_activations():
    d = np.linspace(0, 1, 17)
    for s in ns.GENERAL_STRUCTURES:
        for ha in ns.HIDDEN_ACTS:
            for oa in ns.OUTPUT_ACTS:
                g = ns.GeneralNet.init(structure=s, hidden_act=ha, output_act=oa,
                                       seed=2)
                f = g.forward(d)
                assert f.shape == d.shape
                assert np.all(f > 0)
                if oa == "sigmoid":
                    assert np.all(f < 1)
                f16 = g.forward(d, mode="fp16")
                assert np.all(np.isfinite(f16))
    with pytest.raises(ValueError):
        ns.GeneralNet.init(structure="4l-1n")
    with pytest.raises(ValueError):
        ns.GeneralNet.init(hidden_act="tanh")


def test_general_backward_fd():
    rng = np.random.default_rng(9)
    net = ns.GeneralNet.init(structure="3l-3n", hidden_act="leaky",
                             output_act="sigmoid", seed=5)
    d = rng.uniform(0.05, 1.0, 30)
    df = rng.normal(size=30)
    _, cache = net.forward_cached(d)
    g = net.backward(cache, df)
    eps = 1e-6

    def gloss(n):
        return float(np.sum(df * n.forward(d)))

    for li in range(len(net.weights)):
        w = net.weights[li]
        for idx in np.ndindex(*w.shape):
            net.weights[li][idx] += eps
            lu = gloss(net)
            net.weights[li][idx] -= 2 * eps
            ld = gloss(net)
            net.weights[li][idx] += eps
            fd = (lu - ld) / (2 * eps)
            an = g["weights"][li][idx]
            assert abs(fd - an) <= 1e-7 + 1e-5 * max(abs(fd), abs(an))
        for j in range(len(net.biases[li])):
            net.biases[li][j] += eps
            lu = gloss(net)
            net.biases[li][j] -= 2 * eps
            ld = gloss(net)
            net.biases[li][j] += eps
            fd = (lu - ld) / (2 * eps)
            an = g["biases"][li][j]
            assert abs(fd - an) <= 1e-7 + 1e-5 * max(abs(fd), abs(an))


def test_dead_relu_has_zero_hidden_gradient():
    # all-negative preactivations kill the relu gradient; leaky keeps it alive
    dead = ns.GeneralNet(weights=[np.array([[-1.0], [-2.0]]),
                                  np.array([[0.5, 0.5]])],
                         biases=[np.array([-0.1, -0.1]), np.array([0.0])],
                         hidden_act="relu", output_act="exp", structure="2l-2n")
    d = np.linspace(0.1, 1.0, 20)
    df = np.ones(20)
    _, cache = dead.forward_cached(d)
    g = dead.backward(cache, df)
    assert np.all(g["weights"][0] == 0.0)
    assert np.all(g["biases"][0] == 0.0)
    assert np.any(g["biases"][1] != 0.0)  # output layer still learns
    alive = ns.GeneralNet(weights=dead.weights, biases=dead.biases,
                          hidden_act="leaky", output_act="exp", structure="2l-2n")
    _, cache = alive.forward_cached(d)
    g2 = alive.backward(cache, df)
    assert np.all(g2["weights"][0] != 0.0)


def test_json_roundtrip(tmp_path):
    net = ns.DecayNet.init(seed=11, depth_norm="frame_max")
    p = tmp_path / "net.json"
    net.save_json(p)
    back = ns.DecayNet.load_json(p)
    np.testing.assert_array_equal(back.w1, net.w1)
    np.testing.assert_array_equal(back.w2, net.w2)
    assert back.b2 == net.b2 and back.depth_norm == "frame_max"
    gen = ns.GeneralNet.init(structure="3l-2n", seed=3)
    import json
    q = tmp_path / "gen.json"
    with open(q, "w") as fh:
        json.dump(gen.to_dict(), fh)
    back2 = ns.load_net_json(q)
    assert isinstance(back2, ns.GeneralNet)
    np.testing.assert_array_equal(back2.weights[0], gen.weights[0])
    with pytest.raises(ValueError):
        ns.DecayNet.from_dict({"kind": "general"})


def test_fixed_decay_and_depth_norm():
    d = np.array([0.0, 0.5, 1.0])
    np.testing.assert_array_equal(ns.fixed_decay(d, 0.0), np.ones(3))
    f = ns.fixed_decay(d, 2.0)
    assert np.all(np.diff(f) < 0)
    assert f[0] == 1.0 and f[2] == pytest.approx(np.exp(-2.0), rel=1e-15)
    depths = np.array([2.0, 8.0, 4.0])
    n = ns.normalize_depths(depths)
    assert n.max() == 1.0 and n[0] == 0.25
    np.testing.assert_array_equal(ns.normalize_depths(depths, "none"), depths)
    with pytest.raises(ValueError):
        ns.normalize_depths(depths, "minmax")
    # apply_update shifts parameters in place
    net = ns.DecayNet.init(seed=0)
    w1 = net.w1.copy()
    net.apply_update({"w1": np.ones(3), "b1": np.zeros(3), "w2": np.zeros(3),
                      "b2": 0.5})
    np.testing.assert_array_equal(net.w1, w1 + 1.0)
    assert net.b2 == 0.5
