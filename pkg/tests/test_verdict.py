import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lma.verdict import (
    InsufficientData,
    OutOfOrder,
    VerdictAggregator,
    VerdictConfig,
)


def brute_force_verdict(flags, window, threshold):
    """Independent oracle: rescan the whole history for every prefix.

    Returns (malicious, trigger_seq).  Mirrors the contract: full-threshold
    window scan during the stream, proportional threshold at the end of a
    stream shorter than the window; malicious latches at the first trigger.
    """
    n = len(flags)
    for end in range(1, n + 1):
        lo = max(0, end - window)
        if sum(flags[lo:end]) >= threshold:
            return True, end - 1
    if 0 < n < window:
        effective = -(-threshold * n // window)
        if sum(flags) >= effective:
            return True, n - 1
    return False, None


def run_aggregator(flags, window=8, threshold=5, min_snapshots=1):
    agg = VerdictAggregator(VerdictConfig(window, threshold, min_snapshots))
    for seq, corrupted in enumerate(flags):
        agg.feed(seq, corrupted)
    return agg.finalize()


def test_all_benign_stays_pending_then_benign():
    agg = VerdictAggregator(VerdictConfig(8, 5))
    for seq in range(8):
        assert agg.feed(seq, False) is None
    verdict = agg.finalize()
    assert not verdict.malicious
    assert verdict.trigger_seq is None
    assert verdict.snapshots == 8


def test_short_stream_triggers_at_seq5():
    # B,C,C,C,C,C: full threshold reached right at the sixth snapshot
    agg = VerdictAggregator(VerdictConfig(8, 5))
    flags = [False, True, True, True, True, True]
    statuses = [agg.feed(seq, f) for seq, f in enumerate(flags)]
    assert statuses[:5] == [None] * 5
    assert statuses[5] == 5
    verdict = agg.finalize()
    assert verdict.malicious and verdict.trigger_seq == 5


def test_short_stream_proportional_rule_at_finalize():
    # 4 corrupted in 6 snapshots never hits T=5 during the stream, but the
    # proportional threshold ceil(5*6/8)=4 fires at finalize.
    verdict = run_aggregator([False, True, True, True, False, True])
    assert verdict.malicious
    assert verdict.trigger_seq == 5


def test_alternating_stream_is_benign():
    verdict = run_aggregator([False, True] * 20)
    assert not verdict.malicious


def test_zero_snapshots_insufficient():
    agg = VerdictAggregator(VerdictConfig(8, 5, min_snapshots=1))
    with pytest.raises(InsufficientData):
        agg.finalize()


def test_single_corrupted_snapshot_is_malicious():
    verdict = run_aggregator([True])
    assert verdict.malicious
    assert verdict.trigger_seq == 0


def test_single_benign_snapshot_is_benign():
    assert not run_aggregator([False]).malicious


def test_latching_survives_benign_tail():
    flags = [True] * 5 + [False] * 100
    verdict = run_aggregator(flags)
    assert verdict.malicious
    assert verdict.trigger_seq == 4


def test_out_of_order_rejected():
    agg = VerdictAggregator(VerdictConfig())
    agg.feed(3, False)
    with pytest.raises(OutOfOrder):
        agg.feed(3, True)
    with pytest.raises(OutOfOrder):
        agg.feed(1, True)


def test_config_validation():
    with pytest.raises(ValueError):
        VerdictConfig(window=8, threshold=9)
    with pytest.raises(ValueError):
        VerdictConfig(window=8, threshold=0)
    with pytest.raises(ValueError):
        VerdictConfig(min_snapshots=0)


def test_noise_absorption():
    # every length-8 window holds at most 4 corrupted => benign
    pattern = [True, True, False, True, False, False, True, False]
    flags = pattern * 6
    for lo in range(len(flags) - 7):
        assert sum(flags[lo : lo + 8]) <= 4
    assert not run_aggregator(flags).malicious


@settings(max_examples=400, deadline=None)
@given(
    st.lists(st.booleans(), min_size=1, max_size=60),
    st.integers(1, 12),
    st.data(),
)
def test_equivalence_with_brute_force(flags, window, data):
    threshold = data.draw(st.integers(1, window))
    expected_mal, expected_seq = brute_force_verdict(flags, window, threshold)
    verdict = run_aggregator(flags, window, threshold)
    assert verdict.malicious == expected_mal
    assert verdict.trigger_seq == expected_seq


@settings(max_examples=200, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=40), st.data())
def test_monotonicity_under_added_corruption(flags, data):
    """Inserting extra corrupted snapshots never flips Malicious to Benign."""
    verdict = run_aggregator(flags)
    if not verdict.malicious:
        return
    pos = data.draw(st.integers(0, len(flags)))
    widened = flags[:pos] + [True] + flags[pos:]
    assert run_aggregator(widened).malicious


def test_windows_evaluated_counts_feeds():
    verdict = run_aggregator([False] * 10)
    assert verdict.windows_evaluated == 10
    verdict = run_aggregator([False] * 3)  # short stream adds the finalize scan
    assert verdict.windows_evaluated == 4
