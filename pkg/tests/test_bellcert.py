"""Tests for Bell-inequality evaluation, thresholds and attacks."""

import numpy as np
import pytest

from diqkd_lab.bellcert import (
    FAMILY_ALICE_ANGLES,
    FAMILY_BOB_ANGLES,
    SINGLET_ALICE_ANGLES,
    SINGLET_BOB_ANGLES,
    BellFunctional,
    bell_value,
    bin_no_click,
    binned_chsh,
    chsh_functional,
    critical_efficiency,
    local_bound,
    loophole_attack,
    loophole_attack_curve,
    nosignalling_residual,
    partially_entangled_state,
)
from diqkd_lab.qstate import (
    CorrelationTable,
    born_table,
    inefficient_qubit_povm,
    projective_qubit_povm,
    singlet,
)

TSIRELSON = 2.0 * np.sqrt(2.0)


def singlet_table(eta: float = 1.0) -> CorrelationTable:
    if eta == 1.0:
        alice = [projective_qubit_povm(t) for t in SINGLET_ALICE_ANGLES]
        bob = [projective_qubit_povm(t) for t in SINGLET_BOB_ANGLES]
    else:
        alice = [inefficient_qubit_povm(t, eta) for t in SINGLET_ALICE_ANGLES]
        bob = [inefficient_qubit_povm(t, eta) for t in SINGLET_BOB_ANGLES]
    return born_table(singlet(), alice, bob)


def test_chsh_functional_shape():
    f = chsh_functional()
    assert f.n_alice_settings == 2
    assert f.n_bob_settings == 2
    np.testing.assert_allclose(np.abs(f.correlator_weights), 1.0)


def test_bell_functional_rejects_bad_marginal_shapes():
    from diqkd_lab.qstate import DimensionMismatchError

    with pytest.raises(DimensionMismatchError):
        BellFunctional(correlator_weights=np.ones((2, 2)), alice_weights=np.ones(3))


def test_singlet_reaches_tsirelson():
    value = bell_value(singlet_table(), chsh_functional())
    assert value == pytest.approx(TSIRELSON, abs=1e-12)


def test_local_bound_of_chsh_is_two():
    assert local_bound(chsh_functional()) == 2.0


def test_local_bound_with_marginal_terms():
    # |<A_0>| alone is maximized by a deterministic assignment.
    f = BellFunctional(
        correlator_weights=np.zeros((1, 1)), alice_weights=np.array([1.0]), constant=0.5
    )
    assert local_bound(f) == pytest.approx(1.5, abs=1e-12)


def test_bin_no_click_preserves_binary_tables():
    table = singlet_table()
    binned = bin_no_click(table)
    np.testing.assert_allclose(binned.probabilities, table.probabilities, atol=1e-15)


def test_bin_no_click_folds_third_outcome():
    table = singlet_table(eta=0.8)
    binned = bin_no_click(table)
    assert binned.probabilities.shape == (2, 2, 2, 2)
    np.testing.assert_allclose(binned.probabilities.sum(axis=(2, 3)), 1.0, atol=1e-12)
    # Folding everything to outcome 0 keeps outcome-1 mass untouched.
    np.testing.assert_allclose(
        binned.probabilities[:, :, 1, 1], table.probabilities[:, :, 1, 1], atol=1e-15
    )


def test_binned_chsh_matches_closed_form():
    """Binned CHSH of the singlet is eta^2 * 2 sqrt(2) + 2 (1 - eta)^2."""
    for eta in (1.0, 0.9, 0.8284271247461903, 0.7):
        expected = eta**2 * TSIRELSON + 2.0 * (1.0 - eta) ** 2
        got = binned_chsh(singlet(), SINGLET_ALICE_ANGLES, SINGLET_BOB_ANGLES, eta, eta)
        assert got == pytest.approx(expected, abs=1e-12)


def test_partially_entangled_family_endpoints():
    assert partially_entangled_state(0.0).purity() == pytest.approx(1.0, abs=1e-12)
    table = born_table(
        partially_entangled_state(np.pi / 4),
        [projective_qubit_povm(t) for t in FAMILY_ALICE_ANGLES],
        [projective_qubit_povm(t) for t in FAMILY_BOB_ANGLES],
    )
    assert bell_value(table, chsh_functional()) == pytest.approx(TSIRELSON, abs=1e-9)


def test_critical_efficiency_fixed_singlet():
    res = critical_efficiency(
        singlet(), SINGLET_ALICE_ANGLES, SINGLET_BOB_ANGLES, eta_tol=1e-6
    )
    assert res.violation_at_unit_efficiency
    assert res.chsh_at_unit_efficiency == pytest.approx(TSIRELSON, abs=1e-9)
    assert res.eta_critical == pytest.approx(2.0 * (np.sqrt(2.0) - 1.0), abs=1e-5)


def test_critical_efficiency_one_sided_singlet():
    res = critical_efficiency(
        singlet(), SINGLET_ALICE_ANGLES, SINGLET_BOB_ANGLES, side="alice", eta_tol=1e-6
    )
    assert res.eta_critical == pytest.approx(1.0 / np.sqrt(2.0), abs=1e-4)


def test_critical_efficiency_reports_no_violation():
    res = critical_efficiency(singlet(), (0.0, 0.0), (0.0, 0.0))
    assert not res.violation_at_unit_efficiency
    assert res.eta_critical == 1.0


def test_attack_at_full_efficiency_is_classical():
    res = loophole_attack(1.0)
    assert res.chsh == pytest.approx(2.0, abs=1e-9)
    assert min(res.alice_click_rates) >= 1.0 - 1e-9


def test_attack_click_rates_meet_required_efficiency():
    res = loophole_attack(0.75)
    for rate in (*res.alice_click_rates, *res.bob_click_rates):
        assert rate >= 0.75 - 1e-7


def test_attack_known_values():
    """Post-selected CHSH from no-click strategies reaches 2/(2 eta - 1)."""
    for eta, expected in ((0.9, 2.5), (0.75, 4.0)):
        res = loophole_attack(eta)
        assert res.chsh == pytest.approx(expected, rel=2e-3)


def test_attack_curve_is_monotone_and_saturates():
    etas = np.linspace(1.0, 0.5, 11)
    curve = loophole_attack_curve(etas)
    values = [r.chsh for r in curve]
    assert values[0] == pytest.approx(2.0, abs=1e-9)
    assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))
    assert values[-1] == pytest.approx(4.0, rel=1e-6)


def test_nosignalling_residual_of_quantum_table():
    assert nosignalling_residual(singlet_table(eta=0.9)) < 1e-12
