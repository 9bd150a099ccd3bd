import math

from histoport.invariants import CHECKS, Check, run_checks


def test_bounds_and_kinds():
    assert Check("m", "x", lambda: 0.5, 1.0).run() == (0.5, True)
    assert Check("m", "x", lambda: 2.0, 1.0).run() == (2.0, False)
    assert Check("m", "rate", lambda: 99.4, 99.0, kind="min").run() == (99.4, True)
    assert Check("m", "nan", lambda: math.nan, 1.0).run()[1] is False


def test_table_lines_and_verdict():
    lines = []
    checks = [Check("a", "small", lambda: 1e-12, 1e-10), Check("b", "large", lambda: 3.0, 1.0)]
    assert run_checks(checks, out=lines.append) is False
    assert lines[0].startswith("PASS") and "a: small" in lines[0]
    assert lines[1].startswith("FAIL") and "3.000e+00" in lines[1]
    assert lines[-1] == "1/2 invariants hold"


def test_crashing_check_fails():
    def boom():
        raise RuntimeError("broken")

    lines = []
    assert run_checks([Check("c", "crash", boom, 1.0)], out=lines.append) is False
    assert "error: RuntimeError: broken" in lines[0]


def test_every_module_is_covered():
    mods = {c.module for c in CHECKS}
    assert mods == {"group_algebra", "tensor_engine", "fields", "steerable", "eoh", "policy",
                    "kitting_env", "training", "cli"}
