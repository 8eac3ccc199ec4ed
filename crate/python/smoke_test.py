"""Smoke test for the diffprog extension module.

Build and install first:
    pip install --no-build-isolation -e crates/python
"""
import math

import diffprog


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol


e = diffprog.Engine("fn f(x) { return x^3.0 - 2.0 * x; }")
assert close(e.run("f", 2.0), 4.0)
assert close(e.gradient("f", 2.0)[0], 10.0)
assert close(e.forward_gradient("f", 2.0)[0], 10.0)
assert close(e.second_derivative("f", 2.0), 12.0)

g = e.gradient("f", diffprog.Uncertain(2.0, 0.1))[0]
assert close(g.mean, 10.0) and close(g.sigma, 1.2), g

taylor = diffprog.Engine.from_corpus("taylor_sine", prints="capture")
d = taylor.gradient("s", 1.0)[0]
assert close(d, 0.5403023037918872)
assert abs(d - math.cos(1.0)) < 1e-8
assert taylor.printed() == ["i=%d" % i for i in (1, 3, 5, 7, 9, 11)]
for x in (0.2, 0.4, 0.9):
    taylor.gradient("s", x)
assert taylor.transform_count() == 1

ir = taylor.emit_ir(adjoint=True)
assert ir.startswith("; dpir v1") and "s.pullback" in ir

report = taylor.check("s", [0.7])
assert report["pass"], report

sde = diffprog.Engine.from_corpus("sde_gbm")
noise = [0.1 * math.sin(i) for i in range(16)]
mixed = sde.mixed_gradient("loss", [0.1, 0.2], noise)
assert len(mixed) == 2 and all(math.isfinite(v) for v in mixed)

assert "newton_bond" in diffprog.corpus_names()
summary = diffprog.check_corpus()
assert summary["failed"] == 0, summary["failures"]

try:
    diffprog.Engine("fn f(x) { return x +; }")
except ValueError as err:
    assert "1:" in str(err)
else:
    raise AssertionError("parse error not raised")

print("smoke test passed: %d gradient checks" % summary["checks"])
