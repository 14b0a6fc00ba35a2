import numpy as np
import pytest

from promptsan.mechanisms import ClipBounds, PrivacyLedger, Stage, schedule_total
from promptsan.rewriting import (
    ConstantStepOracle,
    DegenerateBoundsError,
    GroupRewriteError,
    ParaphraseGroup,
    Rewrite,
    RewriteError,
    RewriteParams,
    RewriteSchedule,
    calibrate_bounds,
    calibration_stats,
    paraphrase_blackbox,
    paraphrase_whitebox,
    rewrite_group,
)

from conftest import EchoClient, FailingClient, FixedClient


def whitebox_params(bounds: ClipBounds, temperature: float = 1.0, max_tokens: int = 15):
    return RewriteParams(
        mode="whitebox", temperature=temperature, max_tokens=max_tokens, bounds=bounds
    )


class TestParams:
    def test_whitebox_requires_bounds(self):
        with pytest.raises(ValueError):
            RewriteParams(mode="whitebox", temperature=1.0, max_tokens=10)

    def test_epsilon_temperature_consistency(self, bounds):
        RewriteParams(
            mode="whitebox", temperature=1.0, max_tokens=10, bounds=bounds,
            epsilon_per_token=16.0,
        )
        with pytest.raises(ValueError):
            RewriteParams(
                mode="whitebox", temperature=1.0, max_tokens=10, bounds=bounds,
                epsilon_per_token=5.0,
            )

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            RewriteParams(mode="graybox", temperature=1.0, max_tokens=10)


class TestParaphraseWhitebox:
    def test_suppressed_eos_runs_to_max_tokens(self, rng):
        oracle = ConstantStepOracle(vocab=("A", "B", "</s>"), logits=(0.0, 0.0, -1e6), eos_index=2)
        bounds = ClipBounds(-2e6, 1.0)
        ledger = PrivacyLedger()
        rewrite = paraphrase_whitebox("seed prompt", whitebox_params(bounds), oracle, rng, ledger)
        tokens = rewrite.text.split()
        assert len(tokens) == 15
        assert set(tokens) <= {"A", "B"}
        assert ledger.entries[-1].units == 15

    def test_sharp_distribution_forces_first_token(self, rng):
        # Clipped to [0, 1] the logits become (1, 0, 0); at T=0.01 the first
        # token wins with probability ~1 - 2e-44 per step.
        oracle = ConstantStepOracle(vocab=("A", "B", "C"), logits=(10.0, -10.0, -10.0))
        params = whitebox_params(ClipBounds(0.0, 1.0), temperature=0.01, max_tokens=50)
        rewrite = paraphrase_whitebox("p", params, oracle, rng, PrivacyLedger())
        assert rewrite.text.split() == ["A"] * 50

    def test_ledger_charge_for_twenty_tokens(self, rng):
        oracle = ConstantStepOracle(vocab=("A", "B"), logits=(0.0, 0.0))
        bounds = ClipBounds.from_unit_epsilon(19.4)
        params = whitebox_params(bounds, temperature=1.0, max_tokens=20)
        ledger = PrivacyLedger()
        paraphrase_whitebox("p", params, oracle, rng, ledger)
        assert ledger.total() == pytest.approx(20 * 19.4, rel=1e-12)

    def test_eos_stops_generation_and_counts_one_draw(self, rng):
        oracle = ConstantStepOracle(vocab=("A", "</s>"), logits=(-1e6, 1e6), eos_index=1)
        bounds = ClipBounds(-1e7, 1e7)
        ledger = PrivacyLedger()
        rewrite = paraphrase_whitebox("p", whitebox_params(bounds), oracle, rng, ledger)
        assert rewrite.text == ""
        assert rewrite.tokens_generated == 1
        assert ledger.entries[-1].units == 1

    def test_provider_failure_keeps_partial_charge(self, rng, bounds):
        class FlakyOracle:
            vocab = ("A", "B")
            eos_index = None
            steps = 0

            def step_logits(self, context):
                if self.steps >= 3:
                    raise RuntimeError("oracle exploded")
                self.steps += 1
                from promptsan.mechanisms import LogitVector

                return LogitVector([0.0, 0.0])

        ledger = PrivacyLedger()
        with pytest.raises(RewriteError) as exc_info:
            paraphrase_whitebox("p", whitebox_params(bounds), FlakyOracle(), rng, ledger)
        assert exc_info.value.tokens_generated == 3
        assert ledger.entries[-1].units == 3

    def test_seeded_determinism(self, bounds):
        oracle = ConstantStepOracle(vocab=("A", "B"), logits=(0.3, 0.7))
        params = whitebox_params(bounds, max_tokens=25)
        first = paraphrase_whitebox("p", params, oracle, np.random.default_rng(3), PrivacyLedger())
        second = paraphrase_whitebox("p", params, oracle, np.random.default_rng(3), PrivacyLedger())
        assert first.text == second.text


class TestParaphraseBlackbox:
    def params(self, temperature=1.0, max_tokens=64):
        return RewriteParams(
            mode="blackbox", temperature=temperature, max_tokens=max_tokens,
            bounds=ClipBounds.from_unit_epsilon(19.4),
        )

    def test_upper_echo_mock_contract(self):
        ledger = PrivacyLedger()
        rewrite = paraphrase_blackbox("visit the harbor", self.params(), EchoClient("upper"), ledger)
        assert rewrite.text == "VISIT THE HARBOR"
        assert len(ledger.entries) == 1
        assert "nominal" in ledger.entries[0].note

    def test_nominal_epsilon_charge_at_low_temperature(self):
        ledger = PrivacyLedger()
        client = FixedClient(text=" ".join(["tok"] * 15))
        paraphrase_blackbox("prompt", self.params(temperature=0.1), client, ledger)
        assert ledger.total() == pytest.approx(15 * 194.0, rel=1e-12)

    def test_retry_metadata_recorded(self):
        rewrite = paraphrase_blackbox(
            "p", self.params(), FixedClient(text="ok", attempts=3), PrivacyLedger()
        )
        assert rewrite.retries == 2

    def test_missing_bounds_rejected(self):
        params = RewriteParams(mode="blackbox", temperature=1.0, max_tokens=8)
        with pytest.raises(ValueError):
            paraphrase_blackbox("p", params, EchoClient(), PrivacyLedger())

    def test_client_failure_becomes_rewrite_error(self):
        with pytest.raises(RewriteError):
            paraphrase_blackbox("p", self.params(), FailingClient(failures=99), PrivacyLedger())


class TestRewriteGroup:
    def params(self):
        return RewriteParams(
            mode="blackbox", temperature=1.0, max_tokens=64,
            bounds=ClipBounds.from_unit_epsilon(19.4),
        )

    def test_uniform_echo_group(self, rng):
        ledger = PrivacyLedger()
        group = rewrite_group(
            "sail the quiet canal", 10, 1.0, self.params(), rng, ledger, client=EchoClient()
        )
        assert group.size == 10
        assert set(group.texts()) == {"sail the quiet canal"}
        assert sum(1 for e in ledger.entries if e.stage is Stage.REWRITE) == 10

    def test_schedule_total_cross_check(self, rng):
        schedule = RewriteSchedule.from_range(0.5, 1.5, 0.1)
        assert schedule.total == 11
        ledger = PrivacyLedger()
        group = rewrite_group(
            "prompt words here", 11, schedule, self.params(), rng, ledger, client=EchoClient()
        )
        assert group.size == 11
        counts = [r.tokens_generated for r in group.rewrites]
        temps = [r.params.temperature for r in group.rewrites]
        expected = schedule_total(counts, temps, ClipBounds.from_unit_epsilon(19.4))
        assert ledger.total() == pytest.approx(expected, rel=1e-12)

    def test_single_rewrite_degenerates(self, rng):
        group = rewrite_group("p q r", 1, 1.0, self.params(), rng, PrivacyLedger(), client=EchoClient())
        assert group.size == 1

    def test_partial_failure_keeps_successes(self, rng):
        client = FailingClient(failures=2)
        group = rewrite_group("p q", 5, 1.0, self.params(), rng, PrivacyLedger(), client=client)
        assert group.size == 3
        assert len(group.warnings) == 2

    def test_all_failed_raises(self, rng):
        with pytest.raises(GroupRewriteError):
            rewrite_group(
                "p", 3, 1.0, self.params(), rng, PrivacyLedger(), client=FailingClient(failures=99)
            )

    def test_never_substitutes_original_on_failure(self, rng):
        client = FailingClient(failures=1, inner=EchoClient("upper"))
        group = rewrite_group("secret prompt", 3, 1.0, self.params(), rng, PrivacyLedger(), client=client)
        assert all(t == "SECRET PROMPT" for t in group.texts())

    def test_schedule_permutation_preserves_total(self, mock_client):
        fwd = RewriteSchedule(entries=((0.5, 2), (1.5, 2)))
        bwd = RewriteSchedule(entries=((1.5, 2), (0.5, 2)))
        ledger_fwd, ledger_bwd = PrivacyLedger(), PrivacyLedger()
        group_fwd = rewrite_group(
            "quiet harbor lantern", 4, fwd, self.params(),
            np.random.default_rng(0), ledger_fwd, client=mock_client,
        )
        group_bwd = rewrite_group(
            "quiet harbor lantern", 4, bwd, self.params(),
            np.random.default_rng(0), ledger_bwd, client=mock_client,
        )
        assert [r.params.temperature for r in group_fwd.rewrites] == [0.5, 0.5, 1.5, 1.5]
        assert [r.params.temperature for r in group_bwd.rewrites] == [1.5, 1.5, 0.5, 0.5]
        assert ledger_fwd.total() == pytest.approx(ledger_bwd.total(), rel=1e-12)

    def test_schedule_must_cover_m(self, rng):
        with pytest.raises(ValueError):
            rewrite_group(
                "p", 5, RewriteSchedule.uniform(1.0, 4), self.params(), rng,
                PrivacyLedger(), client=EchoClient(),
            )

    def test_group_invariants(self):
        params = RewriteParams(mode="blackbox", temperature=1.0, max_tokens=2)
        with pytest.raises(ValueError):
            ParaphraseGroup(source="s", rewrites=())
        with pytest.raises(ValueError):
            ParaphraseGroup(
                source="s",
                rewrites=(Rewrite(text="a b c", params=params, tokens_generated=3),),
            )


class TestCalibration:
    def test_degenerate_samples_rejected(self):
        with pytest.raises(DegenerateBoundsError):
            calibrate_bounds([5.0, 5.0, 5.0])

    def test_two_point_sample(self):
        bounds = calibrate_bounds([0.0, 2.0])
        assert bounds.b_min == pytest.approx(1.0, abs=1e-12)
        assert bounds.b_max == pytest.approx(5.0, abs=1e-12)

    def test_standard_normal_recovers_zero_four(self):
        draws = np.random.default_rng(123).standard_normal(100_000)
        bounds = calibrate_bounds(draws)
        assert bounds.b_min == pytest.approx(0.0, abs=0.05)
        assert bounds.b_max == pytest.approx(4.0, abs=0.05)

    def test_minimum_sample_count(self):
        with pytest.raises(ValueError):
            calibrate_bounds([1.0])

    def test_population_standard_deviation(self):
        stats = calibration_stats([0.0, 2.0])
        assert stats.std == pytest.approx(1.0, abs=1e-12)
        assert stats.sample_count == 2
