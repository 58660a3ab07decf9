import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradfield.activations import Activation, register_activation
from gradfield.autodiff import (
    GraphBuilder,
    GraphError,
    ParamVector,
    evaluate,
    grad_input,
    grad_params,
    input_gradient_graph,
)
from gradfield.diagnostics import fd_gradient
from gradfield.networks import init_mlp, phi_forward
from gradfield.objectives import neb_loss
from gradfield.toy_data import GmmSpec, gmm_logpdf_graph, make_batch, benchmark_gmm, smoothed_logpdf


def linear_form_graph(d):
    b = GraphBuilder()
    x = b.input("x", d)
    w = b.param("w", (1, d))
    return b.build(b.linear(x, w))


def test_eval_linear_form():
    g = linear_form_graph(2)
    pv = ParamVector.from_arrays({"w": [[1.0, 2.0]]})
    assert evaluate(g, np.array([3.0, 4.0]), pv) == 11.0


def test_eval_constant_zero():
    b = GraphBuilder()
    x = b.input("x", 3)
    g = b.build(b.scale(b.rowsum(x), 0.0))
    for x in np.random.default_rng(0).standard_normal((5, 3)):
        assert evaluate(g, x) == 0.0


def test_eval_gmm_graph_matches_closed_form(rng):
    spec = GmmSpec([0.2, 0.5, 0.3], rng.standard_normal((3, 3)), rng.uniform(0.5, 2.0, (3, 3)))
    g = gmm_logpdf_graph(spec, 0.4)
    ys = rng.standard_normal((50, 3))
    got = evaluate(g, ys)[:, 0]
    want = smoothed_logpdf(spec, 0.4, ys)
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_eval_dimension_mismatch_names_node():
    g = linear_form_graph(2)
    pv = ParamVector.from_arrays({"w": [[1.0, 2.0]]})
    with pytest.raises(GraphError, match=r"node 0 \(input\)"):
        evaluate(g, np.ones(3), pv)
    with pytest.raises(GraphError, match="missing parameter"):
        evaluate(g, np.ones(2), ParamVector.from_arrays({"v": [[1.0]]}))


def test_grad_input_quadratic():
    b = GraphBuilder()
    x = b.input("x", 2)
    g = b.build(b.scale(b.rowsum(b.mul(x, x)), 0.5))
    grad, _ = grad_input(g, np.array([1.0, -2.0]))
    np.testing.assert_array_equal(grad, [1.0, -2.0])


def test_grad_input_linear_is_weight(rng):
    g = linear_form_graph(4)
    w = rng.standard_normal((1, 4))
    pv = ParamVector.from_arrays({"w": w})
    for x in rng.standard_normal((5, 4)):
        grad, _ = grad_input(g, x, pv)
        np.testing.assert_array_equal(grad, w[0])


def test_grad_input_matches_finite_differences():
    phi = init_mlp((6, 10, 10, 1), seed=3)
    pv = phi.param_vector()
    pts = np.random.default_rng(5).standard_normal((100, 6))
    grads, _ = grad_input(phi.graph(), pts, pv)
    for x, g in zip(pts, grads):
        fd = fd_gradient(lambda z: phi_forward(phi, z), x, 1e-5)
        assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) < 1e-4


def test_gradient_graph_reevaluation_is_identical(rng):
    phi = init_mlp((3, 5, 5, 5, 1), seed=0)
    pv = phi.param_vector()
    x = rng.standard_normal((7, 3))
    grad, gg = grad_input(phi.graph(), x, pv)
    np.testing.assert_array_equal(evaluate(gg, x, pv), grad)
    # purity
    np.testing.assert_array_equal(grad_input(phi.graph(), x, pv)[0], grad)
    np.testing.assert_array_equal(evaluate(phi.graph(), x, pv), evaluate(phi.graph(), x, pv))


def test_grad_input_of_gmm_graph_is_smoothed_score(rng):
    from gradfield.toy_data import smoothed_score

    spec = benchmark_gmm()
    ys = 2 * rng.standard_normal((30, 2))
    grad, _ = grad_input(gmm_logpdf_graph(spec, 0.5), ys)
    np.testing.assert_allclose(grad, smoothed_score(spec, 0.5, ys), rtol=1e-9, atol=1e-12)


def test_grad_input_rejects_nonscalar_output():
    b = GraphBuilder()
    x = b.input("x", 3)
    with pytest.raises(GraphError, match="per-sample scalar"):
        input_gradient_graph(b.build(x))


def test_missing_second_derivative_fails_at_build_time():
    register_activation("only_first", np.sin, np.cos)
    act = Activation("only_first")
    b = GraphBuilder()
    x = b.input("x", 2)
    w = b.param("w", (3, 2))
    v = b.param("v", (1, 3))
    phi = b.build(b.linear(b.act(b.linear(x, w), act), v))
    with pytest.raises(GraphError, match="order 2"):
        input_gradient_graph(phi)


def test_activation_without_first_derivative_rejected():
    register_activation("value_only", np.sin)
    b = GraphBuilder()
    x = b.input("x", 2)
    with pytest.raises(GraphError, match="order 1"):
        b.act(x, Activation("value_only"))


def test_grad_params_scalar_quadratic():
    b = GraphBuilder()
    t = b.param("theta", (1, 3))
    mask = b.const([[1.0, 0.0, 0.0]])
    g = b.build(b.sumsq(b.mul(t, mask)))
    pv = ParamVector.from_arrays({"theta": [[3.0, 5.0, -1.0]]})
    np.testing.assert_array_equal(grad_params(g, {}, pv), [6.0, 0.0, 0.0])


def test_grad_params_zero_loss():
    b = GraphBuilder()
    t = b.param("theta", (2, 2))
    g = b.build(b.sumsq(b.scale(t, 0.0)))
    pv = ParamVector.from_arrays({"theta": np.ones((2, 2))})
    np.testing.assert_array_equal(grad_params(g, {}, pv), np.zeros(4))


def test_double_backprop_matches_parameter_fd():
    phi = init_mlp((2, 4, 4, 1), seed=11)
    pv = phi.param_vector()
    loss = neb_loss(input_gradient_graph(phi.graph()), 0.5)
    batch = make_batch(benchmark_gmm(), 16, 0.5, 2)
    g = grad_params(loss, batch.as_inputs(), pv)

    def f(theta):
        return evaluate(loss, batch.as_inputs(), pv.with_values(theta))[0, 0]

    fd = fd_gradient(f, pv.values, 1e-5)
    assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) < 1e-3
    # deterministic
    np.testing.assert_array_equal(grad_params(loss, batch.as_inputs(), pv), g)


def test_grad_params_requires_scalar():
    g = linear_form_graph(2)
    with pytest.raises(GraphError, match="scalar output"):
        grad_params(g, np.ones((3, 2)), ParamVector.from_arrays({"w": [[1.0, 1.0]]}))


def test_graph_rejects_forward_references():
    from gradfield.autodiff import Graph, Node

    with pytest.raises(GraphError, match="precede"):
        Graph([Node("exp", (1,), (None, 1)), Node("input", (), (None, 1), "x")], [0])


@settings(max_examples=30, deadline=None)
@given(
    shapes=st.lists(st.tuples(st.integers(1, 4), st.integers(1, 4)), min_size=1, max_size=4),
    seed=st.integers(0, 2**31 - 1),
)
def test_param_vector_round_trip(shapes, seed):
    r = np.random.default_rng(seed)
    arrays = {f"p{k}": r.standard_normal(s) for k, s in enumerate(shapes)}
    pv = ParamVector.from_arrays(arrays)
    back = pv.to_arrays()
    for k, a in arrays.items():
        np.testing.assert_array_equal(back[k], a)
    np.testing.assert_array_equal(pv.flatten(back), pv.values)
    seen = sorted(pv.flat_index(k, i, j) for k, s in zip(arrays, shapes) for i in range(s[0]) for j in range(s[1]))
    assert seen == list(range(pv.size))
