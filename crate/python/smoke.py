"""Smoke test for the Python bindings.

Build the extension first, for example:

    cargo build --release -p anonsim-py --features extension-module
    cp target/release/libanonsim_py.so python/anonsim.so

or `maturin develop -m crates/py/Cargo.toml`.
"""

import json
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import anonsim  # noqa: E402


def main() -> int:
    s = anonsim.Scenario("es", 2, 12, seed=0)
    s.env = "ms"
    s.values = [3, 7]
    trace = s.run()
    report = trace.check()
    assert report.passed, report.checks
    assert report.decisions == {0: (6, 7), 1: (6, 7)}, report.decisions

    again = anonsim.Trace.from_jsonl(trace.to_jsonl())
    assert len(again) == len(trace)
    assert again.environment_violation() is None

    ess = anonsim.Scenario.from_toml(
        'version = 1\nalgorithm = "ess"\nn = 1\nvalues = [9]\nenv = "ms"\nhorizon = 12\n'
    )
    assert ess.run().check().decisions == {0: (4, 9)}

    bad = anonsim.Scenario("es", 4, 30, seed=1)
    bad.env = "ms"
    bad.mutant = True
    results = anonsim.fuzz(bad, 40, seed=3)
    assert any(not ok for _, ok, _ in results)
    assert [r[0] for r in results] == sorted(r[0] for r in results)

    sched = anonsim.Schedule.generate("ess", 4, 30, 5, crashes=1, stabilization=10)
    sched.validate()
    assert sched.stabilization == 10

    assert anonsim.leader_predicate([([1], 5), ([2], 5)], [1])
    assert not anonsim.leader_predicate([([1], 5), ([2], 6)], [1])

    try:
        anonsim.Scenario.from_toml("version = 9")
    except ValueError:
        pass
    else:
        raise AssertionError("bad scenario accepted")

    print(json.dumps({"decisions": report.decisions, "fuzz_failures": sum(not ok for _, ok, _ in results)}))
    print("smoke OK")
    return 0


if __name__ == "__main__":
    sys.exit(main())
