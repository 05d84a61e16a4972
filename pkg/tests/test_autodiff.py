import numpy as np
import pytest

from memaudit import autodiff as ad
from memaudit.autodiff import AdamW, Tape, Tensor
from memaudit.errors import ShapeError, StateError, ValidationError
from memaudit.gradcheck import check_gradients, numeric_gradient, relative_error


def t64(arr, requires_grad=True):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=requires_grad)


def t32(arr, requires_grad=True):
    return Tensor(np.asarray(arr, dtype=np.float32), requires_grad=requires_grad)


# ---------------------------------------------------------------- tensors


def test_tensor_copies_input_buffer():
    src = np.ones((2, 2), dtype=np.float32)
    t = Tensor(src)
    src[0, 0] = 5.0
    assert t.data[0, 0] == 1.0


def test_tensor_int_input_becomes_float32():
    t = Tensor([[1, 2], [3, 4]])
    assert t.dtype == np.float32


def test_tensor_rejects_integer_dtype_request():
    with pytest.raises(ValidationError):
        Tensor([1.0], dtype=np.int32)


# ---------------------------------------------------------------- forward values


def test_add_mul_values(rng):
    a, b = rng.random((3, 4)), rng.random((3, 4))
    assert np.allclose(ad.add(Tensor(a), Tensor(b)).data, a + b)
    assert np.allclose(ad.mul(Tensor(a), Tensor(b)).data, a * b)


def test_elementwise_shape_mismatch():
    with pytest.raises(ShapeError):
        ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))
    with pytest.raises(ShapeError):
        ad.mul(Tensor(np.zeros(2)), Tensor(np.zeros(3)))


def test_matmul_requires_2d():
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.zeros((2, 3, 4))), Tensor(np.zeros((4, 2))))
    with pytest.raises(ShapeError):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_mixed_dtype_rejected():
    with pytest.raises(ValidationError):
        ad.add(t32(np.zeros(3)), t64(np.zeros(3)))


def test_relu_value():
    out = ad.relu(Tensor(np.array([-1.0, 0.0, 2.5], dtype=np.float32)))
    assert np.array_equal(out.data, np.array([0.0, 0.0, 2.5], dtype=np.float32))


def test_dense_value(rng):
    x, w, b = rng.random((5, 3)), rng.random((3, 2)), rng.random(2)
    out = ad.dense(Tensor(x), Tensor(w), Tensor(b))
    assert np.allclose(out.data, x @ w + b, atol=1e-6)


def test_global_avg_pool_value(rng):
    x = rng.random((2, 3, 4, 4)).astype(np.float32)
    out = ad.global_avg_pool(Tensor(x))
    assert out.shape == (2, 3)
    assert np.allclose(out.data, x.mean(axis=(2, 3)), atol=1e-6)


def test_region_avg_pool_value(rng):
    x = rng.random((2, 3, 4, 4)).astype(np.float32)
    out = ad.region_avg_pool(Tensor(x), 2)
    assert out.shape == (2, 3 * 4)
    # cell (0,0) of channel 0 is the mean of the top-left 2x2 block
    assert out.data[0, 0] == pytest.approx(x[0, 0, :2, :2].mean(), abs=1e-6)
    ref = ad.global_avg_pool(Tensor(x)).data
    one = ad.region_avg_pool(Tensor(x), 1).data
    assert np.allclose(one, ref, atol=1e-7)


def test_region_avg_pool_rejects_bad_grid():
    with pytest.raises(ShapeError):
        ad.region_avg_pool(Tensor(np.zeros((1, 1, 4, 4))), 3)
    with pytest.raises(ShapeError):
        ad.region_avg_pool(Tensor(np.zeros((4, 4))), 2)


def test_fd_region_avg_pool():
    x = t64(seeded(91, 2, 2, 4, 4))

    def f(ts):
        p = ad.region_avg_pool(ts[0], 2)
        return ad.mse_scalar(p, Tensor(np.zeros(p.shape, dtype=np.float64)))

    assert check_gradients(f, [x]) < 1e-6


def test_l2_normalize_unit_rows(rng):
    x = rng.random((4, 8)).astype(np.float32) + 0.1
    out = ad.l2_normalize(Tensor(x))
    assert np.allclose(np.linalg.norm(out.data, axis=1), 1.0, atol=1e-5)


def test_cosine_similarity_hand_values():
    a = Tensor(np.array([[1.0, 0.0], [1.0, 1.0]], dtype=np.float64))
    b = Tensor(np.array([[0.0, 1.0], [1.0, 1.0]], dtype=np.float64))
    cos = ad.cosine_similarity(a, b)
    assert np.allclose(cos.data, [0.0, 1.0], atol=1e-12)


def test_mse_scalar_hand_value():
    pred = Tensor(np.array([1.0, 2.0], dtype=np.float64))
    tgt = Tensor(np.array([0.0, 4.0], dtype=np.float64))
    out = ad.mse_scalar(pred, tgt)
    assert out.shape == ()
    assert out.data == pytest.approx((1.0 + 4.0) / 2.0)


def test_conv2d_matches_naive_loops(rng):
    n, cin, cout, h, w, kh, kw = 2, 3, 4, 7, 6, 3, 3
    for stride, pad in ((1, 0), (1, 1), (2, 1)):
        x = rng.random((n, cin, h, w))
        wt = rng.random((cout, cin, kh, kw))
        b = rng.random(cout)
        out = ad.conv2d(Tensor(x), Tensor(wt), Tensor(b), stride=stride, padding=pad).data
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        ho = (h + 2 * pad - kh) // stride + 1
        wo = (w + 2 * pad - kw) // stride + 1
        ref = np.zeros((n, cout, ho, wo))
        for ni in range(n):
            for co in range(cout):
                for i in range(ho):
                    for j in range(wo):
                        patch = xp[ni, :, i * stride : i * stride + kh,
                                   j * stride : j * stride + kw]
                        ref[ni, co, i, j] = np.sum(patch * wt[co]) + b[co]
        assert np.allclose(out, ref, atol=1e-10), (stride, pad)


def test_max_pool_value():
    x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
    out = ad.max_pool2d(Tensor(x))
    assert np.array_equal(out.data[0, 0], np.array([[5.0, 7.0], [13.0, 15.0]]))


def test_max_pool_rejects_odd_sides():
    with pytest.raises(ShapeError):
        ad.max_pool2d(Tensor(np.zeros((1, 1, 5, 4))))


# ---------------------------------------------------------------- tape machinery


def test_no_tape_means_no_recording(rng):
    a = t32(rng.random(4))
    out = ad.relu(a)  # outside any tape: pure function
    assert out.grad is None
    with Tape() as tape:
        ad.relu(a)
    assert len(tape) == 1


def test_ops_without_grad_inputs_not_recorded(rng):
    x = Tensor(rng.random(4))  # requires_grad False
    with Tape() as tape:
        ad.relu(x)
    assert len(tape) == 0


def test_backward_on_empty_tape():
    with Tape() as tape:
        pass
    with pytest.raises(StateError):
        tape.backward(Tensor(np.float64(0.0)))


def test_tape_reuse_rejected(rng):
    x = t64(rng.random(3))
    with Tape() as tape:
        loss = ad.mse_scalar(x, Tensor(np.zeros(3, dtype=np.float64)))
    tape.backward(loss)
    with pytest.raises(StateError):
        tape.backward(loss)


def test_backward_needs_scalar(rng):
    x = t64(rng.random(3))
    with Tape() as tape:
        y = ad.relu(x)
    with pytest.raises(ValidationError):
        tape.backward(y)


def test_mul_self_gradient_doubles(rng):
    vals = rng.random(5)
    x = t64(vals)
    with Tape() as tape:
        y = ad.mul(x, x)
        loss = ad.mse_scalar(y, Tensor(np.zeros(5, dtype=np.float64)))
    tape.backward(loss)
    # d/dx mean(x^4)/... : loss = mean((x^2)^2); dloss/dx = 4 x^3 / n
    assert np.allclose(x.grad, 4 * vals**3 / 5, atol=1e-12)


def test_gradient_accumulates_across_uses(rng):
    x = t64(rng.random(4))
    with Tape() as tape:
        y = ad.add(x, x)
        loss = ad.mse_scalar(y, Tensor(np.zeros(4, dtype=np.float64)))
    tape.backward(loss)
    expect = 2 * 2 * 2 * x.data / 4  # chain: mean(4 x^2) -> 2x per branch
    assert np.allclose(x.grad, expect, atol=1e-12)


# -------------------------------------------------------- finite differences

# Per-op checks run the strict float64 regime; smooth heads keep central
# differences clean (no kink crossing).


def seeded(seed, *shape):
    return np.random.default_rng(seed).random(shape)


def test_fd_add_mul_matmul():
    for seed in range(3):
        a = t64(seeded(seed, 3, 4))
        b = t64(seeded(seed + 50, 3, 4))
        m = t64(seeded(seed + 100, 4, 2))
        tgt = Tensor(np.zeros((3, 2), dtype=np.float64))

        def f(ts):
            s = ad.add(ts[0], ts[1])
            p = ad.mul(s, ts[1])
            return ad.mse_scalar(ad.matmul(p, ts[2]), tgt)

        worst = check_gradients(f, [a, b, m])
        assert worst < 1e-6


def test_fd_dense_chain():
    for seed in range(3):
        x = t64(seeded(seed, 4, 5))
        w = t64(seeded(seed + 1, 5, 3))
        b = t64(seeded(seed + 2, 3))
        tgt = Tensor(np.zeros((4, 3), dtype=np.float64))
        f = lambda ts: ad.mse_scalar(ad.dense(ts[0], ts[1], ts[2]), tgt)
        assert check_gradients(f, [x, w, b]) < 1e-6


def test_fd_relu_away_from_kinks():
    rng = np.random.default_rng(7)
    vals = (rng.random((3, 4)) + 0.2) * rng.choice([-1.0, 1.0], size=(3, 4))
    x = t64(vals)  # |x| >= 0.2 so h=1e-5 cannot cross zero
    tgt = Tensor(np.zeros((3, 4), dtype=np.float64))
    f = lambda ts: ad.mse_scalar(ad.relu(ts[0]), tgt)
    assert check_gradients(f, [x]) < 1e-6


def test_fd_conv2d_all_pads_strides():
    for stride, pad in ((1, 0), (1, 1), (2, 1)):
        x = t64(seeded(11, 2, 2, 6, 6))
        w = t64(seeded(12, 3, 2, 3, 3))
        b = t64(seeded(13, 3))

        def f(ts):
            y = ad.conv2d(ts[0], ts[1], ts[2], stride=stride, padding=pad)
            p = ad.global_avg_pool(y)
            return ad.mse_scalar(p, Tensor(np.zeros(p.shape, dtype=np.float64)))

        assert check_gradients(f, [x, w, b]) < 1e-6, (stride, pad)


def test_fd_max_pool():
    # margins between window corners far exceed h, so no tie ambiguity
    x = t64(seeded(21, 1, 2, 4, 4) * 10.0)

    def f(ts):
        p = ad.global_avg_pool(ad.max_pool2d(ts[0]))
        return ad.mse_scalar(p, Tensor(np.zeros(p.shape, dtype=np.float64)))

    assert check_gradients(f, [x]) < 1e-6


def test_max_pool_tie_routes_to_first_corner():
    x = np.zeros((1, 1, 2, 2), dtype=np.float64)
    x[0, 0] = [[3.0, 3.0], [3.0, 1.0]]  # three-way tie
    xt = t64(x)
    with Tape() as tape:
        out = ad.max_pool2d(xt)
        loss = ad.mse_scalar(out, Tensor(np.zeros((1, 1, 1, 1), dtype=np.float64)))
    tape.backward(loss)
    g = xt.grad[0, 0]
    assert g[0, 0] != 0.0
    assert g[0, 1] == 0.0 and g[1, 0] == 0.0 and g[1, 1] == 0.0


def test_fd_l2_normalize_cosine():
    for seed in range(3):
        a = t64(seeded(seed + 30, 2, 6) + 0.1)
        b = t64(seeded(seed + 60, 2, 6) + 0.1)
        tgt = Tensor(np.full(2, 0.5, dtype=np.float64))

        def f(ts):
            na = ad.l2_normalize(ts[0])
            nb = ad.l2_normalize(ts[1])
            return ad.mse_scalar(ad.cosine_similarity(na, nb), tgt)

        assert check_gradients(f, [a, b]) < 1e-6


def test_fd_float32_regime():
    x = t32(seeded(41, 2, 2, 6, 6))
    w = t32(seeded(42, 3, 2, 3, 3))
    b = t32(seeded(43, 3))
    # keep |loss| small: float32 central differences lose eps*|f|/(2h) to
    # rounding, so the target sits near the actual outputs
    base = ad.global_avg_pool(ad.conv2d(x, w, b, stride=1, padding=1))
    tgt = Tensor(base.data + 0.1)

    def f(ts):
        y = ad.conv2d(ts[0], ts[1], ts[2], stride=1, padding=1)
        return ad.mse_scalar(ad.global_avg_pool(y), tgt)

    assert check_gradients(f, [x, w, b]) < 1e-3


def test_numeric_gradient_entries_subset():
    x = t64(np.array([1.0, 2.0, 3.0]))
    tgt = Tensor(np.zeros(3, dtype=np.float64))
    f = lambda ts: ad.mse_scalar(ts[0], tgt)
    g = numeric_gradient(f, [x], 0, h=1e-5, entries=[1])
    assert g[0] == 0.0 and g[2] == 0.0
    assert g[1] == pytest.approx(2 * 2.0 / 3, rel=1e-8)


def test_relative_error_floor():
    assert relative_error(np.array([1e-9]), np.array([2e-9]), floor=1.0) < 1e-8
    assert relative_error(np.array([1.0]), np.array([2.0]), floor=1e-6) == pytest.approx(0.5)


# ---------------------------------------------------------------- optimizer


def test_adamw_first_step_plain_adam():
    p = Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)
    p.grad = np.array([1.0], dtype=np.float32)
    opt = AdamW({"p": p}, lr=0.1, weight_decay=0.0)
    opt.step()
    # bias-corrected first step moves by ~lr regardless of gradient scale
    assert p.data[0] == pytest.approx(1.0 - 0.1, abs=1e-5)


def test_adamw_decoupled_decay_applies_before_update():
    p = Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)
    p.grad = np.array([1.0], dtype=np.float32)
    opt = AdamW({"p": p}, lr=0.1, weight_decay=0.1)
    opt.step()
    # decay shrinks by lr*wd*p first (1 -> 0.99), then the Adam step
    assert p.data[0] == pytest.approx(0.99 - 0.1, abs=1e-4)


def test_adamw_zero_grad_zero_decay_is_noop():
    p = Tensor(np.array([2.0], dtype=np.float32), requires_grad=True)
    opt = AdamW({"p": p}, lr=0.1, weight_decay=0.0)
    opt.step()
    assert p.data[0] == 2.0


def test_adamw_nan_gradient_aborts_naming_parameter():
    p = Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)
    p.grad = np.array([np.nan], dtype=np.float32)
    opt = AdamW({"p": p}, lr=0.1)
    with pytest.raises(ValidationError, match="'p'"):
        opt.step()
    assert p.data[0] == 1.0  # untouched


def test_adamw_rejects_bad_hyperparams():
    p = Tensor(np.array([1.0]), requires_grad=True)
    with pytest.raises(ValidationError):
        AdamW({"p": p}, lr=-1.0)
    with pytest.raises(ValidationError):
        AdamW({"p": p}, beta1=1.0)


def test_adamw_state_round_trip():
    p = Tensor(np.array([1.0, 2.0], dtype=np.float32), requires_grad=True)
    opt = AdamW({"p": p}, lr=0.05)
    for _ in range(3):
        p.grad = np.array([0.3, -0.2], dtype=np.float32)
        opt.step()
    state = opt.state_arrays()

    q = Tensor(p.data.copy(), requires_grad=True)
    opt2 = AdamW({"p": q}, lr=0.05)
    opt2.load_state(state)
    p.grad = np.array([0.1, 0.1], dtype=np.float32)
    q.grad = np.array([0.1, 0.1], dtype=np.float32)
    opt.step()
    opt2.step()
    assert np.array_equal(p.data, q.data)
