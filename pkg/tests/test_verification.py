# test_verification.py
import pytest

from fsdlab.services.verification import SUITES, all_passed, run_suite


def _summary(reports):
    return reports[-1]


class TestSuites:
    def test_sd_identity(self):
        reports = run_suite("sd-identity", seed=1, pairs=200)
        assert all_passed(reports)
        assert reports[0].details["max_abs_error"] <= 1e-12

    def test_sd_equivalence(self):
        reports = run_suite("sd-equivalence", seed=1, instances=8)
        assert all_passed(reports)
        assert len(reports) == 9

    def test_fsd_bound(self):
        reports = run_suite("fsd-bound", seed=2, instances=10)
        assert all_passed(reports)
        checks = {r.check for r in reports if r.instance is None}
        assert checks == {"kl bound summary", "tv bound summary", "js bound summary"}

    def test_rfsd_reduction(self):
        assert all_passed(run_suite("rfsd-reduction", seed=3, instances=15))

    def test_random_baseline(self):
        reports = run_suite("random-baseline", seed=4, instances=10)
        assert all_passed(reports)
        assert _summary(reports).details["fsd_better"] == 10

    def test_endpoints(self):
        assert all_passed(run_suite("endpoints", seed=5, instances=8))

    def test_decode_vs_oracle(self):
        reports = run_suite("decode-vs-oracle", seed=6, instances=1, samples=20_000, tolerance=0.03)
        assert all_passed(reports)

    def test_monotonicity(self):
        reports = run_suite("monotonicity", seed=7, instances=4, trajectory_length=16)
        assert all_passed(reports)
        alignment = [r for r in reports if r.check == "mean JS divergence non-increasing in alignment"]
        assert len(alignment) == 4
        assert all(r.details["mean_js"][-1] == 0.0 for r in alignment)

    def test_protocol(self):
        reports = run_suite("protocol", seed=8, requests=100)
        assert all_passed(reports)
        assert {r.check for r in reports} == {
            "echo round-trips", "batched/unbatched consistency", "malformed row sum rejected",
        }
        consistency = next(r for r in reports if r.check == "batched/unbatched consistency")
        assert consistency.details["table_consistent"] is True

    def test_unknown_suite(self):
        with pytest.raises(ValueError):
            run_suite("nope")


@pytest.mark.slow
class TestFullSizeSuites:
    @pytest.mark.parametrize("name", sorted(SUITES))
    def test_suite_passes(self, name):
        assert all_passed(run_suite(name, seed=0))
