import numpy as np
import pytest

from pinet import autodiff as AD
from pinet import blocks as B
from pinet import tensor as T
from pinet.autodiff import Graph, GraphError, grad_check, graph_loss_fn
from pinet.tensor import ShapeError, Tensor
from pinet.train import training_graph


def test_forward_examples():
    g = Graph()
    x = g.input("x")
    g.output = g.hadamard(x, x)
    assert AD.forward(g, {"x": Tensor([2.0, 3.0])}).tolist() == [4.0, 9.0]
    c = Graph()
    c.output = c.constant([1.5, -2.0])
    assert AD.forward(c, {}).tolist() == [1.5, -2.0]


def test_backward_examples():
    g = Graph()
    x = g.param("x")
    g.output = g.total(g.hadamard(x, x))
    g.forward({"x": Tensor([2.0, 3.0])})
    assert AD.backward(g)["x"].tolist() == [4.0, 6.0]

    h = Graph()
    x = h.param("x")
    c = h.constant([0.5, -7.0, 2.0])
    h.output = h.total(h.hadamard(c, x))
    h.forward({"x": Tensor([1.0, 1.0, 1.0])})
    assert h.backward()["x"].tolist() == [0.5, -7.0, 2.0]


def test_graph_errors():
    g = Graph()
    x = g.param("x")
    g.output = g.total(x)
    with pytest.raises(GraphError):
        g.backward()
    with pytest.raises(GraphError, match="unbound leaf 'x'"):
        g.forward({})
    v = Graph()
    y = v.param("y")
    v.output = v.hadamard(y, y)
    v.forward({"y": Tensor([1.0, 2.0])})
    with pytest.raises(GraphError, match="seed"):
        v.backward()
    assert v.backward(seed=Tensor([1.0, 1.0]))["y"].tolist() == [2.0, 4.0]
    v.output = v.add(y, v.constant([1.0, 2.0, 3.0]))
    with pytest.raises(ShapeError):
        v.forward({"y": Tensor([1.0, 2.0])})


def test_foreign_nodes_are_rejected():
    a, b = Graph(), Graph()
    with pytest.raises(GraphError):
        a.add(a.param("x"), b.param("y"))


def _weighted_total(g, node, shape, rng):
    """Scalar loss sum(w * node) with fixed random weights, so every output element matters."""
    return g.total(g.hadamard(node, g.constant(rng.uniform(0.5, 1.5, size=shape))))


def _case(op, rng):
    """(graph, param values) exercising one registered op."""
    g = Graph()
    u = lambda *s: rng.uniform(-1.0, 1.0, size=s)  # noqa: E731
    if op == "matmul":
        a, b = g.param("a"), g.param("b")
        g.output = _weighted_total(g, g.matmul(a, b), (3, 2), rng)
        return g, {"a": u(3, 4), "b": u(4, 2)}
    if op == "matmul_vec":
        a, b = g.param("a"), g.param("b")
        g.output = _weighted_total(g, g.matmul(a, b), (3,), rng)
        return g, {"a": u(3, 4), "b": u(4)}
    if op in ("add", "sub", "hadamard"):
        a, b = g.param("a"), g.param("b")
        g.output = _weighted_total(g, getattr(g, op)(a, b), (2, 3), rng)
        return g, {"a": u(2, 3), "b": u(2, 3)}
    if op == "scale":
        a = g.param("a")
        g.output = _weighted_total(g, g.scale(a, -2.5), (4,), rng)
        return g, {"a": u(4)}
    if op in ("add_bias", "mul_bias"):
        x, v = g.param("x"), g.param("v")
        g.output = _weighted_total(g, getattr(g, op)(x, v), (3, 2), rng)
        return g, {"x": u(3, 2), "v": u(2)}
    if op == "transpose":
        a = g.param("a")
        g.output = _weighted_total(g, g.transpose(a), (3, 2), rng)
        return g, {"a": u(2, 3)}
    if op == "reshape":
        a = g.param("a")
        g.output = _weighted_total(g, g.reshape(a, (3, 2)), (3, 2), rng)
        return g, {"a": u(2, 3)}
    if op == "concat":
        a, b = g.param("a"), g.param("b")
        g.output = _weighted_total(g, g.concat([a, b], axis=1), (2, 5), rng)
        return g, {"a": u(2, 3), "b": u(2, 2)}
    if op in ("tanh", "instance_norm"):
        a = g.param("a")
        g.output = _weighted_total(g, getattr(g, op)(a), (2, 4), rng)
        return g, {"a": u(2, 4)}
    if op == "relu":
        a = g.param("a")
        g.output = _weighted_total(g, g.relu(a), (6,), rng)
        vals = u(6)
        return g, {"a": np.where(np.abs(vals) < 0.1, 0.5, vals)}  # keep clear of the kink
    if op == "total":
        a = g.param("a")
        g.output = g.total(g.hadamard(a, a))
        return g, {"a": u(3, 2)}
    if op == "mse":
        p, t = g.param("p"), g.param("t")
        g.output = g.mse(p, t)
        return g, {"p": u(4, 3), "t": u(4, 3)}
    if op == "softmax_cross_entropy":
        p = g.param("p")
        y = np.eye(3)[rng.integers(0, 3, size=4)]
        g.output = g.softmax_cross_entropy(p, g.constant(y))
        return g, {"p": u(4, 3)}
    raise AssertionError(op)


OP_CASES = sorted(set(AD.OPS) | {"matmul_vec"})


def test_every_registered_op_has_a_case():
    for op in AD.OPS:
        assert op in OP_CASES


@pytest.mark.parametrize("op", OP_CASES)
@pytest.mark.parametrize("seed", range(5))
def test_registered_op_gradients_match_central_differences(op, seed):
    g, values = _case(op, np.random.default_rng([seed, len(op)]))
    report = grad_check(graph_loss_fn(g, {}), {k: Tensor(v) for k, v in values.items()})
    assert report.passed, report.failures()
    assert report.max_rel_error < 1e-5


def test_adjoints_are_linear(rng):
    spec = B.PolyBlockSpec(B.CCP, 3, input_dim=3, output_dim=2, rank=2)
    net = B.make_net([spec], seed=4)
    z, y1, y2 = rng.uniform(-1, 1, (5, 3)), rng.uniform(-1, 1, (5, 2)), rng.uniform(-1, 1, (5, 2))

    def grads(targets):
        g, _, out = net.build_graph()
        losses = [g.mse(out, g.input(f"y{i}")) for i in range(len(targets))]
        total = losses[0]
        for extra in losses[1:]:
            total = g.add(total, extra)
        g.output = total
        g.forward({"z": Tensor(z), **{f"y{i}": Tensor(t) for i, t in enumerate(targets)}, **net.params()})
        return g.backward()

    both, first, second = grads([y1, y2]), grads([y1]), grads([y2])
    for name in both:
        np.testing.assert_allclose(both[name].data, first[name].data + second[name].data, rtol=1e-12, atol=1e-14)


def test_repeated_passes_are_bit_identical(rng):
    net = B.make_net([B.PolyBlockSpec(B.NCP_SKIP, 3, input_dim=4, output_dim=2, rank=3)], seed=1, scheme="ones")
    g = training_graph(net, "mse")
    feed = {"z": Tensor(rng.normal(size=(6, 4))), "y": Tensor(rng.normal(size=(6, 2))), **net.params()}
    first = (g.forward(feed), g.backward())
    second = (g.forward(feed), g.backward())
    assert first[0] == second[0]
    for name in first[1]:
        assert first[1][name] == second[1][name]


@pytest.mark.parametrize("variant", B.VARIANTS)
def test_graph_forward_matches_direct_evaluation_bit_exactly(variant, rng):
    spec = B.PolyBlockSpec(variant, 2, input_dim=3, output_dim=3, rank=2)
    net = B.make_net([spec], seed=7, scheme="ones")
    z = Tensor(rng.normal(size=(4, 3)))
    g, _, _ = net.build_graph()
    assert g.forward({"z": z, **net.params()}) == net(z)


def test_grad_check_linear_mse_is_near_exact(rng):
    g = Graph()
    w, x, y = g.param("w"), g.input("x"), g.input("y")
    g.output = g.mse(g.matmul(x, w), y)
    fixed = {"x": Tensor(rng.normal(size=(8, 3))), "y": Tensor(rng.normal(size=(8, 2)))}
    report = grad_check(graph_loss_fn(g, fixed), {"w": Tensor(rng.normal(size=(3, 2)))})
    assert report.max_rel_error < 1e-8


@pytest.mark.parametrize("stabilizer", ["none", "tanh", "instance-norm"])
def test_grad_check_on_blocks(stabilizer, rng):
    spec = B.PolyBlockSpec(B.NCP_SKIP, 3, input_dim=4, output_dim=2, rank=3, stabilizer=stabilizer)
    net = B.make_net([spec], seed=11, scheme="ones")
    g = training_graph(net, "mse")
    fixed = {"z": Tensor(rng.uniform(-1, 1, (5, 4))), "y": Tensor(rng.uniform(-1, 1, (5, 2)))}
    report = grad_check(graph_loss_fn(g, fixed), net.params())
    assert report.passed and report.max_rel_error < 1e-5


def test_grad_check_reports_a_wrong_gradient():
    def loss_fn(params):
        x = params["x"].data
        return float((x ** 2).sum()), {"x": Tensor(3.0 * x)}  # true gradient is 2x

    report = grad_check(loss_fn, {"x": Tensor([1.0, -2.0])})
    assert not report.passed
    assert report.failures()[0].name == "x"


def test_gradients_norm():
    grads = AD.Gradients({"a": Tensor([3.0]), "b": Tensor([[4.0]])})
    assert grads.norm() == 5.0
    assert T.as_tensor(grads["b"]).shape == (1, 1)
