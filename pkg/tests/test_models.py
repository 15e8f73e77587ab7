import pytest
from pydantic import ValidationError

from relaynet.models import IntermeetingEstimate, MomentSummary, RunConfig, SchemeParams


def test_run_config_accepts_hyphenated_keys():
    config = RunConfig(**{"p-delta": 0.2, "band-high": 3.0, "log-events": True})
    assert config.p_delta == 0.2
    assert config.band_high == 3.0
    assert config.log_events


def test_run_config_parses_n_list_strings():
    assert RunConfig(n_list="64, 16,144,16").n_list == [16, 64, 144]
    with pytest.raises(ValidationError):
        RunConfig(n_list="16,18")


@pytest.mark.parametrize("n", [4, 16, 36, 1024])
def test_run_config_valid_n(n):
    assert RunConfig(n=n).n == n


def test_run_config_scheme_params():
    params = RunConfig(p_delta=0.25, alpha=0.4, delta=0.7).scheme_params()
    assert params == SchemeParams(p_delta=0.25, alpha=0.4, delta=0.7)
    assert params.W == 1.0


@pytest.mark.parametrize(
    "fields",
    [{"p_delta": 0.0}, {"p_delta": 1.0}, {"alpha": 1.0}, {"delta": 0.0}, {"W": -1.0}, {"beta": 0.1}],
)
def test_scheme_params_validation(fields):
    with pytest.raises(ValidationError):
        SchemeParams(**fields)


def test_scheme_params_frozen():
    params = SchemeParams()
    with pytest.raises(ValidationError):
        params.alpha = 0.9


def test_moment_summary_variance():
    assert MomentSummary(mean=4.0, second_moment=24.0).variance == 8.0
    assert MomentSummary(mean=3.0, second_moment=9.0).variance == 0.0


def test_intermeeting_estimate_summary():
    estimate = IntermeetingEstimate(
        m=2, kind="simple-2d", samples=100, mean=4.1, second_moment=25.0, mean_se=0.2, second_moment_se=1.5
    )
    summary = estimate.summary()
    assert summary.source == "monte-carlo"
    assert (summary.mean, summary.second_moment) == (4.1, 25.0)
