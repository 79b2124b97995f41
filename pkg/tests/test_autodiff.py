import gc
import weakref

import numpy as np
import pytest

from imexnet import autodiff as ad
from imexnet import spectral as S
from imexnet.layers import NetworkSpec, StageSpec, forward, init_params
from imexnet.tensor import NumericFailure

FD_STEP = 1e-6


def numeric_grad(fn, args, i, step=FD_STEP):
    """Central differences of scalar ``fn(*args)`` w.r.t. ``args[i]``, entry by entry."""
    x = args[i]
    g = np.zeros_like(x)
    for j in range(x.size):
        old = x.flat[j]
        x.flat[j] = old + step
        up = float(fn(*args))
        x.flat[j] = old - step
        down = float(fn(*args))
        x.flat[j] = old
        g.flat[j] = (up - down) / (2 * step)
    return g


def taped_grads(fn, args):
    tape = ad.Tape()
    leaves = [tape.leaf(a) for a in args]
    out = fn(*leaves)
    grads = tape.backward(out)
    return [grads.get(v, np.zeros_like(v.value)) for v in leaves]


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def check_all(fn, args, tol=1e-4):
    analytic = taped_grads(fn, args)
    for i, g in enumerate(analytic):
        assert rel(g, numeric_grad(fn, args, i)) <= tol, f"argument {i}"


@pytest.fixture
def r():
    return np.random.default_rng(42)


def probe(r, shape):
    """Fixed random weighting that turns a tensor output into a scalar."""
    return r.standard_normal(shape)


def test_sum_gradient_is_ones(r):
    X = r.standard_normal((1, 2, 8, 8))
    (g,) = taped_grads(lambda x: ad.total(x), [X])
    np.testing.assert_array_equal(g, np.ones_like(X))


def test_identity_solve_gradient_is_ones(r):
    X = r.standard_normal((1, 2, 8, 8))
    (g,) = taped_grads(lambda x: ad.total(ad.solve_implicit(x, np.zeros((2, 3, 3)), 3.0)), [X])
    np.testing.assert_allclose(g, 1.0, atol=1e-12)


def test_conv_gradcheck(r):
    X, K = r.standard_normal((1, 2, 8, 8)), r.standard_normal((3, 2, 3, 3))
    C = probe(r, (1, 3, 8, 8))
    check_all(lambda x, k: ad.inner_const(ad.conv2d(x, k), C), [X, K])


def test_add_bias_gradcheck(r):
    X, b = r.standard_normal((1, 2, 8, 8)), r.standard_normal(2)
    C = probe(r, X.shape)
    check_all(lambda x, b: ad.inner_const(ad.add_bias(x, b), C), [X, b])


def test_instance_norm_gradcheck(r):
    X, g, b = r.standard_normal((2, 2, 8, 8)), r.standard_normal(2), r.standard_normal(2)
    C = probe(r, X.shape)
    check_all(lambda x, g, b: ad.inner_const(ad.instance_norm(x, g, b, 1e-5), C), [X, g, b])


def test_relu_gradcheck(r):
    X = r.standard_normal((1, 2, 8, 8))
    X[np.abs(X) < 1e-3] = 0.5  # keep away from the kink
    C = probe(r, X.shape)
    check_all(lambda x: ad.inner_const(ad.relu(x), C), [X])


def test_add_and_scale_gradcheck(r):
    X, Y = r.standard_normal((1, 2, 8, 8)), r.standard_normal((1, 2, 8, 8))
    C = probe(r, X.shape)
    check_all(lambda x, y: ad.inner_const(ad.add(ad.scale(x, 1.7), y), C), [X, Y])


def test_group_conv_gradcheck(r):
    X, B = r.standard_normal((1, 2, 8, 8)), r.standard_normal((2, 3, 3))
    C = probe(r, X.shape)
    check_all(lambda x, b: ad.inner_const(ad.group_conv(x, b), C), [X, B])
    check_all(lambda x, b: ad.inner_const(ad.group_conv_adjoint(x, b), C), [X, B])


@pytest.mark.parametrize("h", [0.1, 1.0, 10.0])
def test_solve_gradcheck_input_and_kernel(r, h):
    X, B = r.standard_normal((1, 2, 8, 8)), r.standard_normal((2, 3, 3))
    C = probe(r, X.shape)
    check_all(lambda x, b: ad.inner_const(ad.solve_implicit(x, b, h), C), [X, B])


def test_solve_gradcheck_batch(r):
    X, B = r.standard_normal((3, 2, 8, 4)), r.standard_normal((2, 3, 3))
    C = probe(r, X.shape)
    check_all(lambda x, b: ad.inner_const(ad.solve_implicit(x, b, 2.0), C), [X, B])


def test_weighted_cross_entropy_gradcheck(r):
    logits = r.standard_normal((2, 4, 8, 8))
    labels = r.integers(0, 4, size=(2, 8, 8))
    w = np.array([0.2, 1.0, 1.5, 1.3])
    check_all(lambda z: ad.weighted_cross_entropy(z, labels, w), [logits])


def test_sum_and_inner_gradcheck(r):
    X = r.standard_normal((1, 2, 8, 8))
    check_all(lambda x: ad.total(ad.scale(x, 2.0)), [X])
    check_all(lambda x: ad.inner_const(x, X), [X.copy()])


def richardson_solve(x, B, h, omega, iters):
    """``(I + h B^T B)^{-1} x`` by unrolled Richardson iteration, built from taped primitives."""
    y = x
    for _ in range(iters):
        Ay = ad.add(y, ad.scale(ad.group_conv_adjoint(ad.group_conv(y, B), B), h))
        y = ad.add(y, ad.scale(ad.add(x, ad.scale(Ay, -1.0)), omega))
    return y


def test_solve_kernel_gradient_matches_unrolled_richardson(r):
    X, B = r.standard_normal((1, 2, 8, 8)), 0.3 * r.standard_normal((2, 3, 3))
    h = 0.5
    C = probe(r, X.shape)
    smax = max(np.abs(S.symbol(S.embed_kernel(B, 8, 8))).max() ** 2, 1e-12)
    omega = 1.0 / (1.0 + h * smax)
    spectral_g = taped_grads(lambda x, b: ad.inner_const(ad.solve_implicit(x, b, h), C), [X, B])[1]
    unrolled_g = taped_grads(lambda x, b: ad.inner_const(richardson_solve(x, b, h, omega, 200), C),
                             [X, B])[1]
    fd_g = numeric_grad(lambda x, b: ad.inner_const(ad.solve_implicit(x, b, h), C), [X, B], 1)
    assert rel(spectral_g, unrolled_g) <= 1e-3
    assert rel(fd_g, unrolled_g) <= 1e-3


def test_end_to_end_network_gradcheck():
    net = NetworkSpec([StageSpec(8, 2, "imex", 1.0), StageSpec(16, 2, "imex", 1.0)], seed=3, size=16)
    params = init_params(net, np.float64)
    r = np.random.default_rng(0)
    for k in params:  # move biases/norm params off their trivial init
        params[k] = params[k] + 0.1 * r.standard_normal(params[k].shape)
    X = r.random((1, 1, 16, 16))
    labels = r.integers(0, 4, size=(1, 16, 16))
    w = np.array([0.3, 1.2, 1.3, 1.2])
    names = list(params)

    def loss(*vals):
        return ad.weighted_cross_entropy(forward(net, dict(zip(names, vals)), X), labels, w)

    analytic = taped_grads(loss, [params[k] for k in names])
    rr = np.random.default_rng(1)
    for i, name in enumerate(names):
        # directional derivative along a random direction per parameter tensor
        d = rr.standard_normal(params[name].shape)
        vals = [params[k].copy() for k in names]
        eps = 1e-6
        vals[i] = params[name] + eps * d
        up = float(loss(*vals))
        vals[i] = params[name] - eps * d
        down = float(loss(*vals))
        fd = (up - down) / (2 * eps)
        an = float(np.sum(analytic[i] * d))
        assert abs(fd - an) <= 1e-3 * max(abs(an), abs(fd), 1e-8), name


def test_backward_requires_scalar_root(r):
    tape = ad.Tape()
    x = tape.leaf(r.standard_normal((1, 1, 4, 4)))
    with pytest.raises(ValueError):
        tape.backward(ad.relu(x))


def test_non_finite_gradient_is_numeric_failure():
    tape = ad.Tape()
    x = tape.leaf(np.ones((1, 1, 4, 4)))
    y = ad.total(ad.scale(x, 2.0))
    with pytest.raises(NumericFailure):
        tape.backward(y, cotangent=np.inf)


def test_replay_reproduces_outputs_bitwise(r):
    net = NetworkSpec([StageSpec(4, 2, "imex")], size=8)
    params = init_params(net)
    tape = ad.Tape()
    leaves = {k: tape.leaf(v) for k, v in params.items()}
    X = r.random((2, 1, 8, 8)).astype(np.float32)
    forward(net, leaves, X)
    for node, out in zip(tape.nodes, tape.replay()):
        assert np.asarray(out).tobytes() == np.asarray(node.output.value).tobytes()


def test_plain_arrays_are_not_recorded(r):
    X = r.standard_normal((1, 1, 4, 4))
    out = ad.relu(X)
    assert isinstance(out, np.ndarray)


def test_clear_frees_intermediates_without_cycle_collection(r):
    gc.disable()
    try:
        tape = ad.Tape()
        x = tape.leaf(r.standard_normal((1, 2, 8, 8)))
        y = ad.relu(ad.scale(x, 2.0))
        tape.backward(ad.total(y))
        ref = weakref.ref(tape.nodes[0].output.value)
        tape.clear()
        del x, y
        assert ref() is None
    finally:
        gc.enable()
