import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nonholo.expr import ExpressionError, compile_scalar, compile_vector, evaluate, parse
from nonholo.kernel import Differentiator


def test_polynomial_example():
    assert evaluate("q[0]^2*v[0]", q=[3.0], v=[2.0]) == 18.0
    assert evaluate("q[0]**2*v[0]", q=[3.0], v=[2.0]) == 18.0


def test_functions_constants_params():
    val = evaluate("k*sin(pi/2) + exp(0) + sqrt(4) + log(e) - t", {"k": 3.0}, q=[0.0], t=0.5)
    assert val == pytest.approx(3 + 1 + 2 + 1 - 0.5)
    assert evaluate("-a[1] + 2", q=[0.0, 0.0], a=[0.0, 5.0]) == -3.0


@pytest.mark.parametrize(
    "src, fragment",
    [
        ("q[0] +", "syntax"),
        ("", "empty"),
        ("foo(q[0])", "unknown function"),
        ("q[2]", "out of range"),
        ("q[0.5]", "integer literal"),
        ("q", "must be indexed"),
        ("x + 1", "unknown name"),
        ("q[0].real", "unsupported"),
        ("__import__('os')", "unknown function"),
        ("q[0] if t else 1", "unsupported"),
        ("sin", "must be called"),
        ("sin(q[0], q[1])", "exactly one"),
        ("q[0] % 2", "not allowed"),
        ("'a'", "not a number"),
    ],
)
def test_rejected(src, fragment):
    with pytest.raises(ExpressionError) as exc:
        compile_scalar(src, "constraints.F", 2)
    assert exc.value.field == "constraints.F"
    assert fragment in str(exc.value)


def test_velocity_free_variables():
    with pytest.raises(ExpressionError):
        compile_scalar("q[0] + v[0]", "F", 2, velocity=False)
    with pytest.raises(ExpressionError):
        compile_scalar("a[0]", "F", 2)
    compile_scalar("q[0]^2 + t", "F", 2, velocity=False)


def test_param_shadowing_rejected():
    with pytest.raises(ExpressionError):
        parse("q[0]", "F", 1, {"sin": 1.0})


def test_compiled_function_is_differentiable():
    f = compile_scalar("0.5*v[0]^2 - cos(q[0])", "L", 1)
    d = Differentiator(f, 1)(np.array([0.3]), np.array([2.0]), 0.0)
    assert d.grad_q[0] == pytest.approx(math.sin(0.3))
    assert d.hess_vv[0, 0] == pytest.approx(1.0)
    assert d.grad_v[0] == pytest.approx(2.0)


def test_vector():
    F = compile_vector(["v[0] - q[1]", "v[1]"], "F", 2)
    assert F(np.array([0.0, 1.0]), np.array([3.0, 4.0]), 0.0) == [2.0, 4.0]
    with pytest.raises(ExpressionError) as exc:
        compile_vector(["v[0]", "v[9]"], "constraints.F", 2)
    assert exc.value.field == "constraints.F[1]"


leaf = st.one_of(
    st.integers(1, 9).map(str),
    st.sampled_from(["q[0]", "q[1]", "v[0]", "t", "k"]),
)
expr_tree = st.recursive(
    leaf,
    lambda sub: st.one_of(
        st.tuples(sub, st.sampled_from(["+", "-", "*"]), sub).map(lambda x: f"({x[0]} {x[1]} {x[2]})"),
        sub.map(lambda s: f"-{s}"),
        sub.map(lambda s: f"sin({s})"),
        sub.map(lambda s: f"({s})^2"),
    ),
    max_leaves=8,
)


@given(expr_tree, st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(0, 1))
def test_matches_python_semantics(src, q0, q1, v0, t):
    ref = eval(src.replace("^", "**"), {"sin": math.sin, "q": [q0, q1], "v": [v0, 0.0], "t": t, "k": 1.5})
    got = evaluate(src, {"k": 1.5}, q=[q0, q1], v=[v0, 0.0], t=t)
    assert got == pytest.approx(ref, rel=1e-12, abs=1e-12)
