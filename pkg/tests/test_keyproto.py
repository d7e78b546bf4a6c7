"""Tests for the device-independent key-distillation protocol."""

import math

import numpy as np
import pytest

from diqkd_lab.architectures import Scenario, devetak_winter_rate
from diqkd_lab.keyproto import (
    EstimationSample,
    MessageKind,
    ProtocolAbort,
    ProtocolMessage,
    RoundRecord,
    estimate,
    parse_transcript,
    privacy_amplify,
    reconcile,
    run_session,
    serialize_transcript,
    sift,
    simulate_rounds,
)


def make_records(cells, heralded=True):
    """Build round records from ``(x, y, a, b)`` tuples."""
    return [
        RoundRecord(index=i, x=x, y=y, a=a, b=b, heralded=heralded)
        for i, (x, y, a, b) in enumerate(cells)
    ]


# ----------------------------------------------------------------------
# Transcript serialization
# ----------------------------------------------------------------------


def test_transcript_roundtrip():
    messages = [
        ProtocolMessage(seq=0, kind=MessageKind.BASIS_ANNOUNCE, payload=b"\x01\x00\x00\x00", sender="alice"),
        ProtocolMessage(seq=1, kind=MessageKind.HASH_SEED, payload=bytes(range(32)), sender="alice"),
        ProtocolMessage(seq=2, kind=MessageKind.DONE, payload=b"", sender="bob"),
    ]
    blob = serialize_transcript(messages)
    parsed = parse_transcript(blob)
    assert [(s, k, p) for s, k, p in parsed] == [
        (m.seq, m.kind, m.payload) for m in messages
    ]


def test_parse_transcript_rejects_truncation():
    blob = serialize_transcript(
        [ProtocolMessage(seq=0, kind=MessageKind.DONE, payload=b"xy", sender="alice")]
    )
    with pytest.raises(ValueError):
        parse_transcript(blob[:-1])


# ----------------------------------------------------------------------
# Round simulation
# ----------------------------------------------------------------------


def test_simulate_rounds_is_deterministic():
    scenario = Scenario()
    first = simulate_rounds(scenario, 500, 7)
    second = simulate_rounds(scenario, 500, 7)
    assert first == second
    third = simulate_rounds(scenario, 500, 8)
    assert third != first


def test_simulate_rounds_marks_non_heralded_as_no_click():
    scenario = Scenario(architecture="third_party", pair_prob=0.05)
    records = simulate_rounds(scenario, 2000, 3)
    assert len(records) == 2000
    for r in records:
        assert r.x in (0, 1) and r.y in (0, 1, 2)
        if not r.heralded:
            assert r.a == 2 and r.b == 2


def test_simulate_rounds_ideal_statistics():
    records = simulate_rounds(Scenario(), 4000, 11)
    assert all(r.heralded for r in records)
    # Key basis is perfectly correlated for the ideal link.
    key = [(r.a, r.b) for r in records if (r.x, r.y) == (0, 0)]
    assert key, "expected key-basis rounds"
    assert all(a == b for a, b in key)


# ----------------------------------------------------------------------
# Sifting and estimation
# ----------------------------------------------------------------------


def test_sift_splits_sample_and_raw():
    records = make_records([(0, 0, 1, 1)] * 100)
    alice_raw, bob_raw, sample = sift(records, sample_fraction=0.2, rng=np.random.default_rng(0))
    assert sample.indices.size == 20
    assert alice_raw.size == bob_raw.size == 80
    assert set(np.concatenate([sample.indices, np.setdiff1d(np.arange(100), sample.indices)])) == set(range(100))


def test_sift_keeps_only_key_basis_in_raw():
    records = make_records([(0, 0, 1, 1)] * 50 + [(1, 2, 0, 1)] * 50)
    alice_raw, _, sample = sift(records, sample_fraction=0.0, rng=np.random.default_rng(0))
    assert alice_raw.size == 50
    assert sample.indices.size == 0


def test_sift_aborts_when_raw_key_too_short():
    records = make_records([(1, 1, 0, 0)] * 40)  # no key-basis rounds at all
    with pytest.raises(ProtocolAbort, match="sifting:too-few-raw-rounds"):
        sift(records, sample_fraction=0.1, rng=np.random.default_rng(0))


def perfect_sample(n_per_cell: int = 50) -> EstimationSample:
    """A sample saturating the algebraic CHSH bound of 4."""
    cells = []
    for (x, y), sign in (((0, 1), 1), ((0, 2), 1), ((1, 1), 1), ((1, 2), -1)):
        for _ in range(n_per_cell):
            cells.append((x, y, 0, 0 if sign > 0 else 1))
    cells += [(0, 0, 1, 1)] * n_per_cell
    x = np.array([c[0] for c in cells])
    y = np.array([c[1] for c in cells])
    a = np.array([c[2] for c in cells], dtype=np.uint8)
    b = np.array([c[3] for c in cells], dtype=np.uint8)
    return EstimationSample(indices=np.arange(len(cells)), x=x, y=y, alice_bits=a, bob_bits=b)


def test_estimate_perfect_correlations():
    confidence = 1.0 - 1e-6
    est = estimate(perfect_sample(), confidence=confidence)
    assert est.s_hat == pytest.approx(4.0, abs=1e-12)
    assert est.q_hat == 0.0
    log_term = math.log(2.0 / ((1.0 - confidence) / 5.0))
    assert est.s_radius == pytest.approx(sum(math.sqrt(2.0 * log_term / 50.0) for _ in range(4)), abs=1e-12)
    assert est.q_radius == pytest.approx(math.sqrt(log_term / (2.0 * 50.0)), abs=1e-12)
    assert est.s_worst == pytest.approx(est.s_hat - est.s_radius, abs=1e-12)
    assert est.q_worst == pytest.approx(min(1.0, est.q_hat + est.q_radius), abs=1e-12)


def test_estimate_radii_shrink_with_sample_size():
    small = estimate(perfect_sample(30))
    large = estimate(perfect_sample(300))
    assert large.s_radius < small.s_radius
    assert large.q_radius < small.q_radius


def test_estimate_requires_every_setting_pair():
    sample = perfect_sample()
    mask = ~((sample.x == 1) & (sample.y == 2))
    pruned = EstimationSample(
        indices=sample.indices[mask],
        x=sample.x[mask],
        y=sample.y[mask],
        alice_bits=sample.alice_bits[mask],
        bob_bits=sample.bob_bits[mask],
    )
    with pytest.raises(ProtocolAbort, match="estimation:missing-setting-pair"):
        estimate(pruned)


# ----------------------------------------------------------------------
# Reconciliation
# ----------------------------------------------------------------------


def test_reconcile_identical_strings():
    rng = np.random.default_rng(5)
    bits = rng.integers(0, 2, size=300, dtype=np.uint8)
    res = reconcile(bits, bits.copy(), q_hat=0.02, permutation_seed=1)
    assert res.verified
    assert res.corrections == 0
    np.testing.assert_array_equal(res.bits, bits)
    # Exact disclosure: one parity per block per pass, plus the 64-bit hash.
    block = math.ceil(0.73 / 0.02)
    expected = math.ceil(300 / block) + math.ceil(300 / min(300, 2 * block)) + 64
    assert res.leakage_bits == expected


def test_reconcile_corrects_sparse_errors():
    rng = np.random.default_rng(6)
    alice = rng.integers(0, 2, size=600, dtype=np.uint8)
    bob = alice.copy()
    for pos in (17, 301, 550):
        bob[pos] ^= 1
    res = reconcile(alice, bob, q_hat=3 / 600, permutation_seed=2)
    assert res.verified
    np.testing.assert_array_equal(res.bits, alice)
    assert res.corrections >= 3
    assert res.leakage_bits > 64


def test_reconcile_flags_residual_errors():
    """Dense errors overwhelm two passes; the verification hash catches it."""
    rng = np.random.default_rng(7)
    alice = rng.integers(0, 2, size=400, dtype=np.uint8)
    bob = alice ^ (rng.random(400) < 0.25)
    res = reconcile(alice, bob.astype(np.uint8), q_hat=0.25, permutation_seed=3)
    assert not res.verified


def test_reconcile_messages_alternate_parity_queries():
    rng = np.random.default_rng(8)
    alice = rng.integers(0, 2, size=200, dtype=np.uint8)
    bob = alice.copy()
    bob[40] ^= 1
    res = reconcile(alice, bob, q_hat=1 / 200, permutation_seed=4, start_seq=10)
    kinds = {m.kind for m in res.messages}
    assert MessageKind.PARITY_QUERY in kinds
    assert MessageKind.PARITY_REPLY in kinds
    assert [m.seq for m in res.messages] == list(range(10, 10 + len(res.messages)))


# ----------------------------------------------------------------------
# Privacy amplification
# ----------------------------------------------------------------------


def test_privacy_amplify_matches_explicit_toeplitz():
    n, seed = 8, 1234
    bits = np.array([1, 0, 1, 1, 0, 0, 1, 0], dtype=np.uint8)
    out = privacy_amplify(bits, 0, 1.0, seed, security_margin=0)
    m = out.size
    assert m == n
    t = np.random.default_rng(np.random.SeedSequence(seed)).integers(0, 2, size=n + m - 1, dtype=np.uint8)
    toeplitz = np.array([[t[i - j + n - 1] for j in range(n)] for i in range(m)])
    np.testing.assert_array_equal(out, (toeplitz @ bits) % 2)


def test_privacy_amplify_output_length():
    bits = np.ones(1000, dtype=np.uint8)
    out = privacy_amplify(bits, leakage_bits=100, rate=0.5, seed=0, security_margin=64)
    assert out.size == math.floor(1000 * 0.5) - 100 - 64
    empty = privacy_amplify(bits, leakage_bits=500, rate=0.5, seed=0)
    assert empty.size == 0


def test_privacy_amplify_seed_sensitivity():
    bits = np.random.default_rng(9).integers(0, 2, size=256, dtype=np.uint8)
    a = privacy_amplify(bits, 0, 0.5, seed=b"\x00" * 32)
    b = privacy_amplify(bits, 0, 0.5, seed=b"\x01" + b"\x00" * 31)
    assert a.size == b.size > 0
    assert not np.array_equal(a, b)
    with pytest.raises(ValueError):
        privacy_amplify(bits, 0, 0.5, seed=b"short")


# ----------------------------------------------------------------------
# End-to-end sessions
# ----------------------------------------------------------------------


def test_run_session_ideal_link_produces_matching_keys():
    outcome = run_session(Scenario(), 60_000, seed=42, sample_fraction=0.5)
    assert outcome.status == "key"
    assert outcome.abort_reason is None
    np.testing.assert_array_equal(outcome.alice_key_bits, outcome.bob_key_bits)
    assert outcome.alice_key_bits.size > 0
    assert outcome.n_rounds == 60_000
    assert outcome.n_heralded == 60_000
    assert outcome.estimated_q == pytest.approx(0.0, abs=1e-12)
    assert outcome.worst_case_rate == pytest.approx(
        devetak_winter_rate(
            min(1.0, outcome.estimated_q + outcome.q_radius),
            outcome.estimated_s - outcome.s_radius,
        ),
        abs=1e-12,
    )


def test_run_session_transcript_is_reproducible():
    kwargs = dict(n_rounds=60_000, seed=42, sample_fraction=0.5)
    first = run_session(Scenario(), **kwargs)
    second = run_session(Scenario(), **kwargs)
    assert serialize_transcript(first.transcript) == serialize_transcript(second.transcript)
    third = run_session(Scenario(), n_rounds=60_000, seed=43, sample_fraction=0.5)
    assert serialize_transcript(third.transcript) != serialize_transcript(first.transcript)


def test_run_session_aborts_without_violation():
    outcome = run_session(Scenario(detector_efficiency=0.5), 4_000, seed=1, sample_fraction=0.5)
    assert outcome.status == "abort"
    assert outcome.abort_reason == "estimation:insufficient-violation"
    assert outcome.alice_key_bits.size == 0
    kinds = [m.kind for m in outcome.transcript]
    assert kinds[-1] == MessageKind.ABORT
    assert outcome.transcript[-1].payload.decode("ascii") == outcome.abort_reason


def test_run_session_aborts_on_short_raw_key():
    outcome = run_session(Scenario(), 30, seed=1, sample_fraction=0.9)
    assert outcome.status == "abort"
    assert outcome.abort_reason == "sifting:too-few-raw-rounds"


def test_run_session_leakage_for_error_free_key():
    """With zero observed errors, the disclosure is block parities plus hash."""
    outcome = run_session(Scenario(), 60_000, seed=42, sample_fraction=0.5)
    n = outcome.n_raw
    block = min(n, math.ceil(0.73 * n))  # q_hat = 0 floors at one error in n
    expected = math.ceil(n / block) + math.ceil(n / min(n, 2 * block)) + 64
    assert outcome.leakage_bits == expected
