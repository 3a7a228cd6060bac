"""Finite-difference suite: coverage, determinism, self-test."""

import pytest

from vcl.gradcheck import run_suite, suite_report


def test_suite_passes():
    results = run_suite(instances=2, seed=1)
    assert len(results) > 20
    for res in results:
        assert res.passed, f"{res.name}: max_rel_err={res.max_rel_err}"
        assert 0.0 <= res.max_rel_err <= res.tol


def test_suite_names_are_unique():
    results = run_suite(instances=1, seed=0)
    names = [r.name for r in results]
    assert len(names) == len(set(names))


def test_suite_deterministic_by_seed():
    a = run_suite(instances=1, seed=4)
    b = run_suite(instances=1, seed=4)
    assert [(r.name, r.max_rel_err) for r in a] == \
        [(r.name, r.max_rel_err) for r in b]


def test_broken_op_is_caught():
    results = run_suite(instances=1, seed=0, include_broken=True)
    broken = [r for r in results if r.name == "selftest_broken_op"]
    assert len(broken) == 1
    assert not broken[0].passed
    assert broken[0].max_rel_err > broken[0].tol


def test_suite_report_shape():
    results = run_suite(instances=1, seed=0, include_broken=True)
    report = suite_report(results)
    assert set(report) == {"checks", "total", "failures", "passed"}
    assert report["total"] == len(results)
    assert report["failures"] >= 1
    assert report["passed"] is False
    entry = report["checks"][0]
    assert set(entry) == {"name", "max_rel_err", "tol", "passed"}


def test_instances_must_be_positive():
    with pytest.raises(ValueError):
        run_suite(instances=0)
