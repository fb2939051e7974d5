"""Smoke test for the pysormq extension module.

Build and install first:  maturin develop --release (inside a virtualenv), or
                          maturin build --release -o dist && pip install dist/*.whl
Then run:                 python python/smoke_test.py   (or pytest python/)
"""

import math

import pysormq


def test_matching_pennies():
    sol = pysormq.solve_matrix([[1.0, -1.0], [-1.0, 1.0]])
    assert abs(sol.value) < 1e-9
    assert all(abs(p - 0.5) < 1e-9 for p in sol.strategy)
    assert all(abs(p - 0.5) < 1e-9 for p in sol.column_strategy)


def test_fixed_point_does_not_depend_on_w():
    model = pysormq.MarkovGameModel.random(3, 4, 2, 2, gamma=0.9, floor=0.3)
    w = min(1.3, model.w_star())
    assert w > 1.0
    base = pysormq.value_iteration(model, w=1.0, tol=1e-12)
    relaxed = pysormq.value_iteration(model, w=w, tol=1e-12, strict=True)
    assert max(abs(a - b) for a, b in zip(base.values, relaxed.values)) < 1e-7
    assert relaxed.iterations < base.iterations
    assert len(base.q) == 4 * 2 * 2


def test_q_learning_error_shrinks():
    model = pysormq.MarkovGameModel.random(0, 3, 2, 2)
    errors = pysormq.q_learning(model, w=1.0, steps=20_000, record_every=5_000)
    assert errors[-1][0] == 20_000
    assert errors[-1][1] < errors[0][1]


def test_sequence_slacks_nonnegative():
    assert all(s >= 0.0 for s in pysormq.sequence_slacks(40.0, 160.0, horizon=300))


def test_deep_trace():
    out = pysormq.train_deep("soccer", grid=4, w=1.2, steps=200, hidden=[16], batch=8, target_period=20)
    assert len(out.steps) == 200 - 8 + 1
    assert math.isfinite(out.converged_loss)
    try:
        pysormq.train_deep("chess", steps=10)
    except ValueError as e:
        assert "chess" in str(e)
    else:
        raise AssertionError("unknown environment accepted")


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"{name}: ok")
