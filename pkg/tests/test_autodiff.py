import numpy as np
import pytest

from pushlab import autodiff as ad
from pushlab.autodiff import MLP, Tensor


def numeric_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        hi = f()
        x[i] = old - eps
        lo = f()
        x[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def check(build, *arrays, tol=1e-6):
    ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build(*ts)
    ad.backward(loss)
    for t in ts:
        num = numeric_grad(lambda: float(build(*[Tensor(u.data) for u in ts]).data), t.data)
        assert np.allclose(t.grad, num, atol=tol, rtol=tol), (t.grad, num)


rng = np.random.default_rng(0)


def test_linear_relu_grad():
    w = rng.normal(size=(4, 3))
    b = rng.normal(size=4)
    x = rng.normal(size=(5, 3))
    check(lambda x, w, b: ad.total(ad.relu(ad.linear(x, w, b))), x, w, b)


def test_matmul_add_scale_grad():
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    c = rng.normal(size=2)
    check(lambda a, b, c: ad.total(ad.scale(ad.add(ad.matmul(a, b), c), 1.7)), a, b, c)


def test_sigmoid_concat_gather_grad():
    a = rng.normal(size=(3, 2))
    b = rng.normal(size=(3, 3))
    idx = [0, 2, 2, 1]
    check(lambda a, b: ad.total(ad.sigmoid(ad.gather(ad.concat([a, b]), idx))), a, b)


def test_sum_over_set_grad_and_order():
    a = rng.normal(size=(5, 3))
    members = np.array([[0, 1, -1], [2, 3, 4], [-1, -1, -1]])
    out = ad.sum_over_set(Tensor(a), members).data
    assert np.allclose(out[0], a[0] + a[1])
    assert np.allclose(out[1], a[2] + a[3] + a[4])
    assert np.all(out[2] == 0)
    check(lambda a: ad.total(ad.sigmoid(ad.sum_over_set(a, members))), a)


def test_losses():
    p = rng.normal(size=(6, 3)) * 2
    t = rng.normal(size=(6, 3))
    check(lambda p: ad.smooth_l1(p, t), p)
    d = np.array([0.5, 2.0])
    assert float(ad.smooth_l1(Tensor(d), np.zeros(2)).data) == pytest.approx(0.125 + 1.5)
    z = rng.normal(size=(7, 1))
    y = (rng.random(7) > 0.5).astype(float)
    check(lambda z: ad.bce_with_logits(z, y), z)
    ref = np.mean(-y * np.log(1 / (1 + np.exp(-z[:, 0]))) - (1 - y) * np.log(1 - 1 / (1 + np.exp(-z[:, 0]))))
    assert float(ad.bce_with_logits(Tensor(z), y).data) == pytest.approx(ref)


def test_shape_errors():
    with pytest.raises(ValueError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ValueError):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
    with pytest.raises(ValueError):
        ad.smooth_l1(Tensor(np.ones(3)), np.ones(4))
    with pytest.raises(ValueError):
        ad.backward(ad.relu(Tensor(np.ones(3), requires_grad=True)))


def test_no_grad_records_nothing():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with ad.no_grad():
        y = ad.relu(x)
    assert not y.requires_grad


def test_mlp_fits_xor_with_adam():
    x = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], float)
    y = np.array([0, 1, 1, 0], float)
    net = MLP(2, [16, 1], np.random.default_rng(0), final_relu=False)
    opt = ad.Adam(net.parameters(), lr=0.05)
    for _ in range(300):
        loss = ad.bce_with_logits(net(Tensor(x)), y)
        ad.backward(loss)
        opt.step()
    pred = net(Tensor(x)).data[:, 0] > 0
    assert np.array_equal(pred, y > 0)


def test_sgd_matches_functional_step():
    a = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    b = Tensor(a.data.copy(), requires_grad=True)
    opt = ad.SGD([a], lr=0.1, momentum=0.9)
    state = None
    for _ in range(3):
        a.grad = a.data * 2
        b.grad = b.data * 2
        opt.step()
        state = ad.sgd_step([b], 0.1, 0.9, state)
    assert np.allclose(a.data, b.data)
    with pytest.raises(ValueError):
        ad.make_optimizer("rmsprop", [a], 0.1)


def test_checkpoint_roundtrip(tmp_path):
    net = MLP(3, [4, 2], np.random.default_rng(1))
    params = {f"l{k}": p for k, p in enumerate(net.parameters())}
    ad.save_checkpoint(tmp_path / "c.bin", params, {"arch": "x"})
    head, arrays = ad.load_checkpoint(tmp_path / "c.bin")
    assert head["arch"] == "x"
    for k, p in params.items():
        assert np.array_equal(arrays[k], p.data)
    raw = (tmp_path / "c.bin").read_bytes()
    (tmp_path / "d.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        ad.load_checkpoint(tmp_path / "d.bin")
