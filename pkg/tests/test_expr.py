import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lmiobs import expr

CUBIC = ["x1^3"]
POLY2 = ["x1^3", "-6*x1^5 - 6*x1^2*x2 - 2*x1^4 - 2*x1^3"]


def fd_jacobian(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    n = x.size
    m = len(f.components)
    J = np.empty((m, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h
        J[:, j] = (expr.evaluate(f, x + e) - expr.evaluate(f, x - e)) / (2 * h)
    return J


def test_parse_cubic_monomial():
    f = expr.parse(CUBIC, 2, 0)
    assert len(f) == 1
    assert expr.evaluate(f, [2.0, 0.0])[0] == 8.0
    assert expr.evaluate(f, [-1.5, 3.0])[0] == -3.375


def test_parse_four_term_polynomial():
    f = expr.parse(POLY2, 2, 0)
    v = expr.evaluate(f, [0.1, 0.2])
    assert math.isclose(v[0], 0.001, rel_tol=1e-12)
    assert math.isclose(v[1], -0.01426, rel_tol=1e-12)


def test_parse_out_of_range_symbol():
    with pytest.raises(expr.UnknownSymbolError) as err:
        expr.parse(["x3"], 2, 0)
    assert "x3" in str(err.value)


def test_parse_unknown_function():
    with pytest.raises(expr.UnknownSymbolError) as err:
        expr.parse(["foo(x1)"], 2, 0)
    assert "foo" in str(err.value)


def test_parse_u_symbols():
    f = expr.parse(["x1 + 2*u1"], 1, 1)
    assert expr.evaluate(f, [1.0], [3.0])[0] == 7.0
    with pytest.raises(expr.UnknownSymbolError):
        expr.parse(["u1"], 2, 0)


@pytest.mark.parametrize(
    "text",
    ["2x1", "x1 +", "(x1", "x1^2.5", "x1^x2", "", "x1 $ 2", "sin x1", "x1**2"],
)
def test_syntax_errors_carry_position(text):
    with pytest.raises(expr.ExprError) as err:
        expr.parse([text], 2, 0)
    assert "position" in str(err.value)


def test_no_implicit_multiplication():
    with pytest.raises(expr.ExprSyntaxError):
        expr.parse(["2x1"], 2, 0)


def test_homogeneous_polynomial_zero_at_origin():
    f = expr.parse(POLY2, 2, 0)
    assert np.all(expr.evaluate(f, [0.0, 0.0]) == 0.0)


def test_sin_at_zero():
    f = expr.parse(["sin(x1)"], 1, 0)
    assert expr.evaluate(f, [0.0])[0] == 0.0


def test_division_by_zero_names_component():
    f = expr.parse(["x1", "1/x1"], 1, 0)
    with pytest.raises(expr.EvalDomainError) as err:
        expr.evaluate(f, [0.0])
    assert err.value.component == 1
    assert "division by zero" in str(err.value)


def test_negative_power_of_zero_rejected():
    f = expr.parse(["x1^-2"], 1, 0)
    with pytest.raises(expr.EvalDomainError):
        expr.evaluate(f, [0.0])
    assert expr.evaluate(f, [2.0])[0] == 0.25


def test_overflow_reported_not_silent():
    f = expr.parse(["exp(x1)"], 1, 0)
    with pytest.raises(expr.EvalDomainError):
        expr.evaluate(f, [1e4])


def test_dimension_checks():
    f = expr.parse(["x1 + x2"], 2, 0)
    with pytest.raises(expr.ExprError):
        expr.evaluate(f, [1.0])
    with pytest.raises(expr.ExprError):
        expr.evaluate(f, [1.0, 2.0], [0.5])


def test_jacobian_power_rule():
    f = expr.parse(CUBIC, 2, 0)
    J = expr.jacobian(f, [0.3, 0.0])
    assert math.isclose(J[0, 0], 0.27, rel_tol=1e-12)
    assert J[0, 1] == 0.0


def test_jacobian_zero_at_origin():
    f = expr.parse(POLY2, 2, 0)
    assert np.all(expr.jacobian(f, [0.0, 0.0]) == 0.0)


def test_jacobian_matches_finite_differences():
    f = expr.parse(POLY2, 2, 0)
    J = expr.jacobian(f, [0.3, 0.3])
    J_fd = fd_jacobian(f, [0.3, 0.3])
    assert np.allclose(J, J_fd, rtol=1e-6, atol=1e-9)


def test_jacobian_fd_all_node_kinds():
    texts = [
        "sin(x1)*cos(x2) + exp(x1 - x2^2)",
        "tanh(x1*x2) - x1^3 + (x1 - 0.5*x2)/(x2^2 + 1.5)",
        "(x1^2 + x2^2 + 2.0)^-1 + -x1",
    ]
    f = expr.parse(texts, 2, 0)
    rng = np.random.default_rng(42)
    for _ in range(50):
        x = rng.uniform(-1.0, 1.0, 2)
        J = expr.jacobian(f, x)
        J_fd = fd_jacobian(f, x)
        denom = np.maximum(np.abs(J), 1.0)
        assert np.max(np.abs(J - J_fd) / denom) <= 1e-6


def test_evaluate_deterministic_and_pure():
    f = expr.parse(POLY2, 2, 0)
    x = [0.11, -0.07]
    a = expr.evaluate(f, x)
    b = expr.evaluate(f, x)
    assert np.array_equal(a, b)
    with pytest.raises(Exception):
        f.components = ()  # frozen


def test_batch_matches_single():
    f = expr.parse(POLY2 + ["sin(x1) + exp(x2)"], 2, 0)
    rng = np.random.default_rng(3)
    X = rng.uniform(-1, 1, (40, 2))
    V = expr.evaluate_batch(f, X)
    J = expr.jacobian_batch(f, X)
    for i in range(X.shape[0]):
        assert np.array_equal(V[i], expr.evaluate(f, X[i]))
        assert np.array_equal(J[i], expr.jacobian(f, X[i]))


def test_batch_domain_error_reports_point():
    f = expr.parse(["1/x1"], 1, 0)
    X = np.array([[1.0], [2.0], [0.0], [3.0]])
    with pytest.raises(expr.EvalDomainError) as err:
        expr.evaluate_batch(f, X)
    assert err.value.point_index == 2


# round-trip printing ---------------------------------------------------

_leaves = st.one_of(
    st.integers(-30, 30).map(lambda k: ("const", k / 10.0)),
    st.sampled_from([("x", 0), ("x", 1), ("u", 0)]),
)


def _extend(children):
    return st.one_of(
        children.map(lambda a: ("neg", a)),
        st.tuples(children, children).map(lambda ab: ("add", *ab)),
        st.tuples(children, children).map(lambda ab: ("sub", *ab)),
        st.tuples(children, children).map(lambda ab: ("mul", *ab)),
        st.tuples(children, st.integers(0, 4)).map(lambda ak: ("pow", *ak)),
        st.tuples(st.sampled_from(["sin", "cos", "exp", "tanh"]), children).map(
            lambda fa: ("call", *fa)
        ),
    )


_trees = st.recursive(_leaves, _extend, max_leaves=12)


@settings(max_examples=100, deadline=None)
@given(_trees)
def test_render_parse_round_trip(tree):
    f = expr.ExprVector(components=(tree,), state_dim=2, input_dim=1)
    text = expr.render(f)[0]
    g = expr.parse([text], 2, 1)
    rng = np.random.default_rng(12345)
    for _ in range(10):
        x = rng.uniform(-1, 1, 2)
        u = rng.uniform(-1, 1, 1)
        try:
            a = expr.evaluate(f, x, u)
            failed_a = None
        except expr.EvalDomainError as e:
            failed_a = e.reason
        try:
            b = expr.evaluate(g, x, u)
            failed_b = None
        except expr.EvalDomainError as e:
            failed_b = e.reason
        assert failed_a == failed_b
        if failed_a is None:
            assert math.isclose(a[0], b[0], rel_tol=1e-12, abs_tol=1e-300)


def test_round_trip_division_and_negative_powers():
    texts = ["x1/(x2^2 + 1.5)", "x1^-3 + 2.0/(1.0 + exp(-x1))", "-(x1 - x2)^2"]
    f = expr.parse(texts, 2, 0)
    g = expr.parse(expr.render(f), 2, 0)
    rng = np.random.default_rng(9)
    for _ in range(100):
        x = rng.uniform(0.1, 1, 2)
        assert np.allclose(expr.evaluate(f, x), expr.evaluate(g, x), rtol=1e-12)
