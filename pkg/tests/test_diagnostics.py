import numpy as np
import pytest

from almost_finsler import diagnostics as D
from almost_finsler.errors import FinslerError
from almost_finsler.geometry import NormSpec, off_slit_directions


def _blocks(rep):
    return {b.name: b for b in rep.blocks}


def test_randers_suite_uses_randers_limit_branch():
    rep = D.run_invariant_suite(NormSpec.randers(np.eye(2), [0.0, 0.5]), samples=500)
    blocks = _blocks(rep)
    assert blocks["tensors.matsumoto"].status == D.PASS
    assert blocks["tensors.bipartite_S"].status == D.PASS
    assert "randers-limit" in blocks["tensors.bipartite_S"].note
    assert rep.exit_status == 0


def test_bspace_suite_passes_both_tensor_blocks():
    rep = D.run_invariant_suite(NormSpec.bspace(np.eye(3), [0.0, 0.0, 0.5]), samples=500)
    blocks = _blocks(rep)
    for name in ("tensors.bipartite_S", "tensors.b_tensor", "tensors.b_minus_s",
                 "closedforms.kappa_b", "closedforms.kr_metric", "diagnostics.positive_definiteness"):
        assert blocks[name].status == D.PASS, name
    assert rep.exit_status == 0 and not rep.failed


def test_corrupted_form_reports_construction_error():
    rep = D.run_invariant_suite(NormSpec.bipartite(np.eye(2), np.diag([1.2, 0.0])), samples=10)
    assert rep.exit_status == 2
    assert "eigenvalue 1.2" in rep.error
    assert rep.blocks[0].name == "construction"


def test_suite_is_deterministic_across_jobs():
    spec = NormSpec.bipartite(np.eye(3), np.diag([0.7, 0.3, 0.0]), sign=-1)
    a = D.run_invariant_suite(spec, samples=600, seed=3, jobs=1).to_dict()
    b = D.run_invariant_suite(spec, samples=600, seed=3, jobs=3).to_dict()
    c = D.run_invariant_suite(spec, samples=600, seed=3, jobs=1).to_dict()
    assert a == b == c
    d = D.run_invariant_suite(spec, samples=600, seed=4).to_dict()
    assert d != a


def test_scan_report_structure():
    spec = NormSpec.bipartite(np.eye(3), np.diag([0.5, 0.5, 0.0]), sign=-1)
    rep = D.scan_positive_definiteness(spec, samples=2000)
    assert rep.verdict == D.NEGATIVE and rep.expected == D.NEGATIVE
    assert rep.witness is not None and rep.witness["eig_min_g"] < 0
    assert rep.witness["eig_min_g"] == pytest.approx(float(np.min(rep.eig_min)))
    assert len(rep.ys) == len(rep.eig_min) == len(rep.slit)
    # the witness sits close to the slit, as the asymptotics predict
    assert rep.witness["slit_distance"] < 0.2
    rep2 = D.scan_positive_definiteness(spec, samples=2000)
    np.testing.assert_array_equal(rep.eig_min, rep2.eig_min)


@pytest.mark.parametrize("spec", [
    NormSpec.aspace(np.eye(3), [0.0, 0.0, 0.5], sign=-1),
    NormSpec.bspace(np.eye(3), [0.0, 0.0, 0.5], sign=1),
    NormSpec.bspace(np.eye(2), [0.0, 0.5], sign=-1),
], ids=["aspace-", "bspace+", "bspace-n2"])
def test_scan_positive_definite_cases(spec):
    rep = D.scan_positive_definiteness(spec, samples=10_000)
    assert rep.verdict == D.ALL_PD and rep.witness is None
    assert rep.expected == D.ALL_PD


def test_scan_rejects_non_bipartite():
    with pytest.raises(FinslerError):
        D.scan_positive_definiteness(NormSpec.randers(np.eye(2), [0.0, 0.5]), samples=10)


def test_expected_verdicts():
    assert D.expected_pd_verdict(D.dichotomy_spec(4, 2).at()) == D.NEGATIVE
    assert D.expected_pd_verdict(D.dichotomy_spec(4, 3).at()) == D.ALL_PD
    assert D.expected_pd_verdict(D.dichotomy_spec(4, 4).at()) == D.ALL_PD
    assert D.expected_pd_verdict(D.dichotomy_spec(4, 0).at()) is None
    # F+ is settled only when s has one distinct positive eigenvalue
    assert D.expected_pd_verdict(D.dichotomy_spec(4, 0, sign=1).at()) is None
    assert D.expected_pd_verdict(NormSpec.bspace(np.eye(4), [0, 0, 0, 0.5]).at()) == D.ALL_PD
    assert D.expected_pd_verdict(NormSpec.bipartite(np.eye(3), 0.4 * np.eye(3)).at()) == D.ALL_PD


def test_dichotomy_spec_kernel():
    for n in (2, 3, 5):
        for k in range(n + 1):
            fiber = D.dichotomy_spec(n, k).at()
            assert fiber.kernel_dim == k
    with pytest.raises(ValueError):
        D.dichotomy_spec(3, 4)


def test_fminus_bspace_small_dims():
    assert D.corollary_fminus_check(2, samples=2000)["verdict"] == D.ALL_PD
    res = D.corollary_fminus_check(3, samples=2000)
    assert res["verdict"] == D.NEGATIVE == res["expected"]
    assert res["witness"] is not None


def test_witness_asymptotics():
    near = D.bipminus_witness(0.01)
    assert near["g22"] < 0
    assert near["g22"] == pytest.approx(near["g22_closed_form"], rel=1e-10)
    assert near["F"] == pytest.approx(1.0, abs=1e-12)
    lead = [D.bipminus_witness(e) for e in (1e-2, 1e-3, 1e-4)]
    # the leading term dominates: eps * g22 -> -lam_2 / sqrt(lam_1)
    ratios = [w["eps"] * w["g22"] for w in lead]
    target = -0.5 / np.sqrt(0.5)
    errs = [abs(r - target) for r in ratios]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-3
    # and the remainder g22 - leading_term stays bounded as eps shrinks
    rem = [w["g22"] - w["leading_term"] for w in lead]
    assert max(abs(r) for r in rem) < 2.0


def test_fd_errors_below_tolerance():
    fiber = NormSpec.bipartite(np.eye(3), np.diag([0.8, 0.4, 0.1]), sign=-1).at()
    Y = off_slit_directions(fiber, 20, np.random.default_rng(0), min_distance=D.FD_BAND)
    assert np.max(D.fd_errors(fiber, Y)) < 1e-5
