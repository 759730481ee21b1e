"""Self-check suites: every registered suite passes at reduced scale."""

import pytest

from minsummax.verify import SUITES, SuiteResult, run_suites

# scaled-down kwargs so the whole module stays fast; the acceptance module
# runs the expensive ones at full strength
SMALL = {
    "sandwich": {"cases": 60},
    "mu_monotone": {"cases": 40},
    "grad_fd": {"cases": 30},
    "mu_gap": {"cases": 40},
    "grad_norm": {"cases": 40},
    "estimator_variance": {"replicas": 400, "sample_counts": (8, 32)},
    "prox": {"cases": 30, "probes": 8},
    "box_expectation": {"cases": 20, "mc_cases": 3, "mc_draws": 200_000},
    "inner_argmax": {"configs": 400},
    "descent": {"iters": 60},
    "parser_fuzz": {"count": 2_000},
}


def test_registry_is_complete():
    assert set(SMALL) == set(SUITES)


@pytest.mark.parametrize("name", sorted(SUITES))
def test_suite_passes(name):
    (res,) = run_suites([name], seed=0, **{name: SMALL[name]})
    assert isinstance(res, SuiteResult)
    assert res.name == name
    assert res.passed, res.detail
    assert res.margin >= -1e-9
    assert res.detail


def test_run_all_preserves_order():
    kwargs = {k: dict(v) for k, v in SMALL.items()}
    results = run_suites(None, seed=0, **kwargs)
    assert [r.name for r in results] == list(SUITES)
    assert all(r.passed for r in results)


def test_unknown_suite_rejected():
    with pytest.raises(KeyError, match="unknown suite"):
        run_suites(["sandwich", "nosuchsuite"], seed=0)


def test_seed_changes_measurements():
    (a,) = run_suites(["grad_fd"], seed=0, grad_fd=SMALL["grad_fd"])
    (b,) = run_suites(["grad_fd"], seed=1, grad_fd=SMALL["grad_fd"])
    assert a.margin != b.margin
    (a2,) = run_suites(["grad_fd"], seed=0, grad_fd=SMALL["grad_fd"])
    assert a.margin == a2.margin


def test_parser_fuzz_counts_inputs():
    (res,) = run_suites(["parser_fuzz"], seed=3, parser_fuzz={"count": 500})
    assert "500 mutated inputs" in res.detail
    assert "0 unstructured failures" in res.detail
