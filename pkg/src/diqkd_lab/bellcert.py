"""Bell-inequality certification with finite detection efficiency.

Tools to score correlation tables against linear Bell functionals, compute
local-hidden-variable bounds by strategy enumeration, fold no-click events
into regular outcomes (the fair-binning rule that closes the detection
loophole), locate critical detection efficiencies, and quantify how hard a
classical adversary can fake a violation when no-click rounds are
post-selected away instead of binned.

Angle conventions follow :mod:`diqkd_lab.qstate`: a qubit setting ``theta``
measures ``cos(theta) Z + sin(theta) X`` and outcome 0 carries value +1.

The partially entangled pure-state family used throughout is
``cos(theta) |00> + sin(theta) |11>`` with ``theta`` in ``(0, pi/4]``;
``theta = pi/4`` is the maximally entangled state.  For this family the
correlators have the closed form::

    <A(a) B(b)>  = cos(a) cos(b) + sin(2 theta) sin(a) sin(b)
    <A(a)>       = cos(a) cos(2 theta)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from diqkd_lab.qstate import (
    CorrelationTable,
    DensityOperator,
    DimensionMismatchError,
    Povm,
    StateValidationError,
    born_table,
    inefficient_qubit_povm,
    projective_qubit_povm,
)

__all__ = [
    "BellFunctional",
    "chsh_functional",
    "bell_value",
    "local_bound",
    "bin_no_click",
    "binned_chsh",
    "partially_entangled_state",
    "EfficiencyThresholdResult",
    "critical_efficiency",
    "AttackResult",
    "loophole_attack",
    "loophole_attack_curve",
    "nosignalling_residual",
]

# Optimal qubit settings for a CHSH test on the family state (theta = pi/4
# gives the maximally entangled optimum, reaching 2*sqrt(2)).
FAMILY_ALICE_ANGLES = (0.0, np.pi / 2)
FAMILY_BOB_ANGLES = (np.pi / 4, -np.pi / 4)

# Optimal settings for the singlet under the same observable convention.
SINGLET_ALICE_ANGLES = (0.0, np.pi / 2)
SINGLET_BOB_ANGLES = (5 * np.pi / 4, 3 * np.pi / 4)


@dataclass(frozen=True)
class BellFunctional:
    """A linear functional on correlators and marginals.

    The value on a behaviour is::

        sum_xy w[x,y] <A_x B_y> + sum_x u[x] <A_x> + sum_y v[y] <B_y> + c

    Attributes:
        correlator_weights: ``w``, shape ``(n_x, n_y)``.
        alice_weights: ``u``, shape ``(n_x,)``; defaults to zeros.
        bob_weights: ``v``, shape ``(n_y,)``; defaults to zeros.
        constant: ``c``.
    """

    correlator_weights: np.ndarray
    alice_weights: np.ndarray | None = None
    bob_weights: np.ndarray | None = None
    constant: float = 0.0

    def __post_init__(self) -> None:
        w = np.array(self.correlator_weights, dtype=float, copy=True)
        if w.ndim != 2:
            raise DimensionMismatchError(
                f"correlator weights must be 2-D (n_x, n_y), got shape {w.shape}"
            )
        n_x, n_y = w.shape
        u = (
            np.zeros(n_x)
            if self.alice_weights is None
            else np.array(self.alice_weights, dtype=float, copy=True)
        )
        v = (
            np.zeros(n_y)
            if self.bob_weights is None
            else np.array(self.bob_weights, dtype=float, copy=True)
        )
        if u.shape != (n_x,) or v.shape != (n_y,):
            raise DimensionMismatchError(
                f"marginal weights must have shapes ({n_x},) and ({n_y},), "
                f"got {u.shape} and {v.shape}"
            )
        for arr in (w, u, v):
            arr.setflags(write=False)
        object.__setattr__(self, "correlator_weights", w)
        object.__setattr__(self, "alice_weights", u)
        object.__setattr__(self, "bob_weights", v)
        object.__setattr__(self, "constant", float(self.constant))

    @property
    def n_alice_settings(self) -> int:
        return self.correlator_weights.shape[0]

    @property
    def n_bob_settings(self) -> int:
        return self.correlator_weights.shape[1]


def chsh_functional() -> BellFunctional:
    """The CHSH functional ``<A0B0> + <A0B1> + <A1B0> - <A1B1>``."""
    return BellFunctional(correlator_weights=np.array([[1.0, 1.0], [1.0, -1.0]]))


def _correlators_and_marginals(
    table: CorrelationTable,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    p = table.probabilities
    if p.shape[2] != 2 or p.shape[3] != 2:
        raise DimensionMismatchError(
            "Bell functionals act on binary-outcome tables; call bin_no_click first"
        )
    corr = p[:, :, 0, 0] + p[:, :, 1, 1] - p[:, :, 0, 1] - p[:, :, 1, 0]
    # Marginals of a non-signalling table do not depend on the other party's
    # setting; averaging makes the evaluation robust to round-off.
    marg_a = (p.sum(axis=3)[:, :, 0] - p.sum(axis=3)[:, :, 1]).mean(axis=1)
    marg_b = (p.sum(axis=2)[:, :, 0] - p.sum(axis=2)[:, :, 1]).mean(axis=0)
    return corr, marg_a, marg_b


def bell_value(table: CorrelationTable, functional: BellFunctional) -> float:
    """Evaluate a Bell functional on a binary-outcome correlation table."""
    corr, marg_a, marg_b = _correlators_and_marginals(table)
    w = functional.correlator_weights
    if corr.shape != w.shape:
        raise DimensionMismatchError(
            f"table has {corr.shape} settings, functional expects {w.shape}"
        )
    return float(
        np.sum(w * corr)
        + functional.alice_weights @ marg_a
        + functional.bob_weights @ marg_b
        + functional.constant
    )


def _sign_patterns(n: int) -> np.ndarray:
    """All 2^n vectors in {-1, +1}^n, one per row."""
    grid = ((np.arange(2**n)[:, None] >> np.arange(n)[None, :]) & 1).astype(float)
    return 1.0 - 2.0 * grid


def local_bound(functional: BellFunctional) -> float:
    """Maximum of the functional over deterministic local strategies.

    Enumerates all ``2^(n_x + n_y)`` deterministic +-1 assignments; for CHSH
    that is 16 strategies and the bound is 2.
    """
    a_signs = _sign_patterns(functional.n_alice_settings)
    b_signs = _sign_patterns(functional.n_bob_settings)
    values = (
        a_signs @ functional.correlator_weights @ b_signs.T
        + (a_signs @ functional.alice_weights)[:, None]
        + (b_signs @ functional.bob_weights)[None, :]
        + functional.constant
    )
    return float(values.max())


def bin_no_click(
    table: CorrelationTable, alice_to: int = 0, bob_to: int = 0
) -> CorrelationTable:
    """Deterministically fold extra outcomes into a binary outcome.

    Every outcome with index >= 2 (no-click, double-click, and similar
    flags) is merged into the designated binary outcome for that party.
    Binary parties pass through unchanged.

    Args:
        table: Table with at least two outcomes per party.
        alice_to: Binary outcome (0 or 1) that absorbs Alice's extra outcomes.
        bob_to: Same for Bob.

    Returns:
        A table of shape ``(n_x, n_y, 2, 2)``.
    """
    for name, target in (("alice_to", alice_to), ("bob_to", bob_to)):
        if target not in (0, 1):
            raise ValueError(f"{name} must be 0 or 1, got {target}")
    p = table.probabilities
    n_a, n_b = p.shape[2], p.shape[3]
    if n_a < 2 or n_b < 2:
        raise DimensionMismatchError("binning needs at least two outcomes per party")
    folded = p[:, :, :2, :2].copy()
    if n_a > 2:
        folded[:, :, alice_to, :] += p[:, :, 2:, :2].sum(axis=2)
    if n_b > 2:
        folded[:, :, :, bob_to] += p[:, :, :2, 2:].sum(axis=3)
    if n_a > 2 and n_b > 2:
        folded[:, :, alice_to, bob_to] += p[:, :, 2:, 2:].sum(axis=(2, 3))
    return CorrelationTable(probabilities=folded)


def binned_chsh(
    state: DensityOperator,
    alice_angles: Sequence[float],
    bob_angles: Sequence[float],
    eta_alice: float = 1.0,
    eta_bob: float = 1.0,
) -> float:
    """CHSH value of a two-qubit state with lossy detectors and fair binning.

    Runs the full Born-rule pipeline: three-outcome inefficient measurements,
    no-click outcomes folded to outcome 0, CHSH evaluated on the binary table.

    Args:
        state: Two-qubit state.
        alice_angles: Two measurement angles for Alice.
        bob_angles: Two measurement angles for Bob.
        eta_alice: Alice's detection efficiency.
        eta_bob: Bob's detection efficiency.
    """
    alice = [inefficient_qubit_povm(t, eta_alice) for t in alice_angles]
    bob = [inefficient_qubit_povm(t, eta_bob) for t in bob_angles]
    table = born_table(state, alice, bob)
    return bell_value(bin_no_click(table), chsh_functional())


def partially_entangled_state(theta: float) -> DensityOperator:
    """The pure state ``cos(theta)|00> + sin(theta)|11>`` as a density operator."""
    vec = np.zeros(4, dtype=complex)
    vec[0] = np.cos(theta)
    vec[3] = np.sin(theta)
    return DensityOperator.from_pure(vec, dims=(2, 2))


@dataclass(frozen=True)
class EfficiencyThresholdResult:
    """Outcome of a critical-efficiency search.

    Attributes:
        eta_critical: Smallest symmetric (or one-sided) detection efficiency
            at which the binned CHSH value still exceeds the local bound.
            1.0 when no violation exists even with perfect detectors.
        theta: Entanglement parameter of the optimal family state, or None
            when the search ran on a fixed state.
        alice_angles: Optimal (or supplied) measurement angles.
        bob_angles: Optimal (or supplied) measurement angles.
        chsh_at_unit_efficiency: CHSH value of the optimal configuration with
            perfect detectors.
        violation_at_unit_efficiency: Whether that value exceeds 2.
    """

    eta_critical: float
    theta: float | None
    alice_angles: tuple[float, float]
    bob_angles: tuple[float, float]
    chsh_at_unit_efficiency: float
    violation_at_unit_efficiency: bool


_CHSH_SIGNS = np.array([[1.0, 1.0], [1.0, -1.0]])


def _family_correlations(
    theta: float, alice_angles: np.ndarray, bob_angles: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closed-form correlators of ``cos(theta)|00> + sin(theta)|11>``."""
    c2t, s2t = np.cos(2 * theta), np.sin(2 * theta)
    corr = np.cos(alice_angles)[:, None] * np.cos(bob_angles)[None, :] + s2t * np.sin(
        alice_angles
    )[:, None] * np.sin(bob_angles)[None, :]
    return corr, np.cos(alice_angles) * c2t, np.cos(bob_angles) * c2t


def _state_correlations(
    state: DensityOperator, alice_angles: np.ndarray, bob_angles: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Correlators of an arbitrary two-qubit state via the Born pipeline."""
    alice = [projective_qubit_povm(t) for t in alice_angles]
    bob = [projective_qubit_povm(t) for t in bob_angles]
    return _correlators_and_marginals(born_table(state, alice, bob))


def _eta_threshold(
    corr: np.ndarray, marg_a: np.ndarray, marg_b: np.ndarray, side: str
) -> tuple[float, float]:
    """Critical efficiency for fair-binned CHSH given exact correlations.

    Binning no-click to outcome 0 replaces each observable ``A`` by
    ``eta A + (1 - eta)``.  For symmetric losses the CHSH value is then a
    quadratic in ``eta`` with ``S(0) = 2`` exactly, so the threshold solves
    in closed form; for one-sided loss it is linear.

    Returns:
        ``(eta_critical, chsh_at_unit_efficiency)``.
    """
    e_tot = float(np.sum(_CHSH_SIGNS * corr))
    m_a = float(_CHSH_SIGNS.sum(axis=1) @ marg_a)
    m_b = float(_CHSH_SIGNS.sum(axis=0) @ marg_b)
    if e_tot <= 2.0:
        return 1.0, e_tot
    if side == "both":
        m = m_a + m_b
        eta = (4.0 - m) / (e_tot - m + 2.0)
    elif side == "alice":
        eta = (2.0 - m_b) / (e_tot - m_b)
    else:
        raise ValueError(f"side must be 'both' or 'alice', got {side!r}")
    return float(np.clip(eta, 0.0, 1.0)), e_tot


def _threshold_starts(optimize_theta: bool) -> list[np.ndarray]:
    starts = []
    thetas = (0.02, 0.05, 0.1, 0.2, 0.4, np.pi / 4) if optimize_theta else (None,)
    angle_sets = (
        (*FAMILY_ALICE_ANGLES, *FAMILY_BOB_ANGLES),
        (*SINGLET_ALICE_ANGLES, *SINGLET_BOB_ANGLES),
        (0.1, 0.5, -0.3, 0.2),
        (-0.2, 0.6, 0.3, -0.5),
    )
    for th in thetas:
        for angles in angle_sets:
            vec = list(angles) if th is None else [th, *angles]
            starts.append(np.array(vec, dtype=float))
    return starts


def critical_efficiency(
    state: DensityOperator | None = None,
    alice_angles: Sequence[float] | None = None,
    bob_angles: Sequence[float] | None = None,
    *,
    side: str = "both",
    eta_tol: float = 1e-4,
) -> EfficiencyThresholdResult:
    """Find the critical detection efficiency of a fair-binned CHSH test.

    With ``state=None`` the search optimizes over the partially entangled
    family ``cos(theta)|00> + sin(theta)|11>`` using closed-form correlators;
    pushing ``theta -> 0`` drives the symmetric threshold towards its known
    infimum of 2/3.  With a fixed state the correlators come from the exact
    Born-rule pipeline, and only the angles (if unspecified) are optimized.
    A fixed maximally entangled state with its optimal angles yields the
    textbook symmetric threshold ``2 (sqrt(2) - 1) ~ 0.8284``.

    Args:
        state: Fixed two-qubit state, or None to optimize over the family.
        alice_angles: Two fixed angles, or None to optimize them.
        bob_angles: Two fixed angles, or None to optimize them.
        side: ``"both"`` for symmetric losses, ``"alice"`` for loss on
            Alice's side only (perfect Bob).
        eta_tol: Requested absolute accuracy of the optimized threshold.

    Returns:
        An :class:`EfficiencyThresholdResult`.  ``eta_critical = 1.0`` with
        ``violation_at_unit_efficiency = False`` means the configuration
        never violates CHSH and there is nothing to certify.
    """
    fixed_angles = alice_angles is not None and bob_angles is not None
    if (alice_angles is None) != (bob_angles is None):
        raise ValueError("supply both angle lists or neither")
    if state is not None and tuple(state.dims) != (2, 2):
        raise DimensionMismatchError("critical_efficiency expects a two-qubit state")

    def correlations(theta: float | None, aa: np.ndarray, bb: np.ndarray):
        if state is None:
            return _family_correlations(theta, aa, bb)
        return _state_correlations(state, aa, bb)

    if fixed_angles:
        aa = np.asarray(alice_angles, dtype=float)
        bb = np.asarray(bob_angles, dtype=float)
        if aa.shape != (2,) or bb.shape != (2,):
            raise DimensionMismatchError("CHSH needs exactly two angles per party")
        if state is None:
            # Only theta left to optimize: scan + polish.
            def objective(t: np.ndarray) -> float:
                eta, e_tot = _eta_threshold(*_family_correlations(t[0], aa, bb), side)
                return eta if e_tot > 2.0 else 1.0 + (2.0 - e_tot)

            best = None
            for t0 in (0.02, 0.1, 0.3, np.pi / 4):
                res = minimize(
                    objective,
                    np.array([t0]),
                    method="Nelder-Mead",
                    options={"xatol": eta_tol / 10, "fatol": 1e-12},
                )
                if best is None or res.fun < best.fun:
                    best = res
            theta = float(best.x[0])
            eta, e_tot = _eta_threshold(*_family_correlations(theta, aa, bb), side)
        else:
            theta = None
            eta, e_tot = _eta_threshold(*correlations(None, aa, bb), side)
        return EfficiencyThresholdResult(
            eta_critical=eta,
            theta=theta,
            alice_angles=(float(aa[0]), float(aa[1])),
            bob_angles=(float(bb[0]), float(bb[1])),
            chsh_at_unit_efficiency=e_tot,
            violation_at_unit_efficiency=e_tot > 2.0,
        )

    optimize_theta = state is None

    def objective(params: np.ndarray) -> float:
        if optimize_theta:
            theta, aa = params[0], params[1:3]
            bb = params[3:5]
            corr, ma, mb = _family_correlations(theta, aa, bb)
        else:
            aa, bb = params[0:2], params[2:4]
            corr, ma, mb = _state_correlations(state, aa, bb)
        eta, e_tot = _eta_threshold(corr, ma, mb, side)
        # Outside the violation region, fall back to a slope that guides the
        # optimizer towards violating configurations.
        return eta if e_tot > 2.0 else 1.0 + (2.0 - e_tot)

    best = None
    for start in _threshold_starts(optimize_theta):
        res = minimize(
            objective,
            start,
            method="Nelder-Mead",
            options={"xatol": eta_tol / 10, "fatol": 1e-12, "maxiter": 8000, "maxfev": 12000},
        )
        if best is None or res.fun < best.fun:
            best = res
    params = best.x
    if optimize_theta:
        theta = float(params[0])
        aa, bb = params[1:3], params[3:5]
        corr, ma, mb = _family_correlations(theta, aa, bb)
    else:
        theta = None
        aa, bb = params[0:2], params[2:4]
        corr, ma, mb = _state_correlations(state, aa, bb)
    eta, e_tot = _eta_threshold(corr, ma, mb, side)
    if e_tot <= 2.0:
        eta = 1.0
    return EfficiencyThresholdResult(
        eta_critical=eta,
        theta=theta,
        alice_angles=(float(aa[0]), float(aa[1])),
        bob_angles=(float(bb[0]), float(bb[1])),
        chsh_at_unit_efficiency=e_tot,
        violation_at_unit_efficiency=e_tot > 2.0,
    )


# --------------------------------------------------------------------------
# Post-selection attack: faking CHSH violations with classical no-click tricks
# --------------------------------------------------------------------------


def _local_strategies() -> tuple[np.ndarray, np.ndarray]:
    """All deterministic single-party strategies with optional no-clicks.

    A strategy decides, for each of the two inputs, whether the detector
    clicks and which +-1 value it reports when it does.  There are nine:
    one silent strategy, two one-input families of two, and four all-click
    assignments.

    Returns:
        ``(clicks, values)`` of shapes ``(9, 2)``; ``values`` entries at
        non-clicking inputs are placeholders and must be masked by
        ``clicks``.
    """
    clicks, values = [], []
    for mask in ((0, 0), (1, 0), (0, 1), (1, 1)):
        options: list[tuple[float, float]] = [(1.0, 1.0)]
        if mask == (1, 0):
            options = [(1.0, 1.0), (-1.0, 1.0)]
        elif mask == (0, 1):
            options = [(1.0, 1.0), (1.0, -1.0)]
        elif mask == (1, 1):
            options = [(a, b) for a in (1.0, -1.0) for b in (1.0, -1.0)]
        for vals in options:
            clicks.append(mask)
            values.append(vals)
    return np.array(clicks, dtype=float), np.array(values, dtype=float)


_CLICKS, _VALUES = _local_strategies()
_N_STRAT = _CLICKS.shape[0]


def _pair_tensors() -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-pair coincidence and signed-coincidence tensors, flattened over pairs."""
    ca = _CLICKS[:, None, :, None]  # (9, 1, x, 1)
    cb = _CLICKS[None, :, None, :]  # (1, 9, 1, y)
    coincidence = (ca * cb).reshape(_N_STRAT * _N_STRAT, 4)
    signed = (
        ca * cb * _VALUES[:, None, :, None] * _VALUES[None, :, None, :]
    ).reshape(_N_STRAT * _N_STRAT, 4)
    click_a = np.repeat(_CLICKS, _N_STRAT, axis=0)  # (81, 2): Alice click mask per pair
    click_b = np.tile(_CLICKS, (_N_STRAT, 1))  # (81, 2): Bob click mask per pair
    return coincidence, signed, click_a, click_b


_COIN, _SIGNED, _CLICK_A, _CLICK_B = _pair_tensors()
_CHSH_SIGNS_FLAT = _CHSH_SIGNS.reshape(4)

# Smallest admissible coincidence probability per setting pair: an ensemble
# that never produces coincidences in some cell would be rejected by any
# experiment, so the attacker must keep every cell populated.
_MIN_COINCIDENCE = 1e-9


def _postselected_chsh(weights: np.ndarray) -> float:
    den = _COIN.T @ weights
    if np.any(den < _MIN_COINCIDENCE):
        return -np.inf
    num = _SIGNED.T @ weights
    return float(_CHSH_SIGNS_FLAT @ (num / den))


def _strategy_index(click_a, values_a, click_b, values_b) -> int:
    ia = next(
        i
        for i in range(_N_STRAT)
        if np.array_equal(_CLICKS[i], click_a)
        and all(v == w for v, w, c in zip(_VALUES[i], values_a, click_a) if c)
    )
    ib = next(
        i
        for i in range(_N_STRAT)
        if np.array_equal(_CLICKS[i], click_b)
        and all(v == w for v, w, c in zip(_VALUES[i], values_b, click_b) if c)
    )
    return ia * _N_STRAT + ib


def _candidate_ensemble(eta: float) -> np.ndarray:
    """Hand-built ensemble reaching ``min(4, 2/(2 eta - 1))`` post-selected CHSH.

    Four "half-silent" strategy pairs produce perfectly signed coincidences
    in every CHSH cell (value 4) at per-input click probability 3/4; mixing
    in an always-click local strategy raises the click rate to ``eta`` at
    the cost of diluting the ``<A1 B1>`` cell.
    """
    pairs = [
        _strategy_index((1, 1), (1.0, 1.0), (1, 0), (1.0, 1.0)),
        _strategy_index((1, 1), (1.0, -1.0), (0, 1), (1.0, 1.0)),
        _strategy_index((1, 0), (1.0, 1.0), (1, 1), (1.0, 1.0)),
        _strategy_index((0, 1), (1.0, 1.0), (1, 1), (1.0, -1.0)),
    ]
    always = _strategy_index((1, 1), (1.0, 1.0), (1, 1), (1.0, 1.0))
    mu = float(np.clip(4.0 * (1.0 - eta), 0.0, 1.0))
    weights = np.zeros(_N_STRAT * _N_STRAT)
    for p in pairs:
        weights[p] += mu / 4.0
    weights[always] += 1.0 - mu
    return weights


@dataclass(frozen=True)
class AttackResult:
    """Best faked CHSH value found for a given detection efficiency.

    Attributes:
        eta: Per-input click probability the attacker must deliver.
        chsh: Post-selected CHSH value of the best ensemble found.
        weights: Mixture weights over the 81 deterministic strategy pairs.
        alice_click_rates: Resulting click probability per Alice input.
        bob_click_rates: Same for Bob.
    """

    eta: float
    chsh: float
    weights: np.ndarray
    alice_click_rates: tuple[float, float]
    bob_click_rates: tuple[float, float]


def _attack_result(eta: float, weights: np.ndarray) -> AttackResult:
    weights = np.clip(weights, 0.0, None)
    weights = weights / weights.sum()
    frozen = weights.copy()
    frozen.setflags(write=False)
    ra = _CLICK_A.T @ weights
    rb = _CLICK_B.T @ weights
    return AttackResult(
        eta=float(eta),
        chsh=_postselected_chsh(weights),
        weights=frozen,
        alice_click_rates=(float(ra[0]), float(ra[1])),
        bob_click_rates=(float(rb[0]), float(rb[1])),
    )


def loophole_attack(
    eta: float, *, extra_starts: Sequence[np.ndarray] = (), polish: bool = True
) -> AttackResult:
    """Maximize post-selected CHSH over classical strategies with no-clicks.

    Models an adversary who builds devices from deterministic local
    strategies that may refuse to answer.  When the experimenter discards
    non-coincident rounds instead of binning them, correlators are
    renormalized per setting pair, and for low enough click rates the
    adversary can fake values far beyond the quantum bound -- up to the
    algebraic maximum 4 once ``eta <= 3/4``.  At ``eta = 1`` refusals are
    impossible and the attack collapses to the local bound 2.

    The search mixes a hand-built optimal ensemble with multistart
    sequential quadratic programming over the full 81-dimensional mixture,
    constrained to per-input click probabilities of at least ``eta``.

    Args:
        eta: Required click probability per party and input, in ``(0, 1]``.
        extra_starts: Additional weight vectors to seed the optimizer
            (used by :func:`loophole_attack_curve` for warm-starting).
        polish: When False, skip the numerical search and report the best
            seed ensemble (fast path for coarse curves).

    Returns:
        An :class:`AttackResult`; ``chsh`` is a feasible (achievable) value.
    """
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must lie in (0, 1], got {eta}")
    if eta == 1.0:
        # Every strategy must always click; the best mixture is a
        # deterministic local point reaching the local bound exactly.
        return _attack_result(1.0, _candidate_ensemble(1.0))

    n = _N_STRAT * _N_STRAT
    seeds = [_candidate_ensemble(eta)]
    seeds.extend(np.clip(np.asarray(s, dtype=float), 0.0, None) for s in extra_starts)
    seeds.append(np.full(n, 1.0 / n))
    best_w = max(seeds, key=lambda w: _postselected_chsh(w / w.sum()))
    best_w = best_w / best_w.sum()
    if not polish:
        return _attack_result(eta, best_w)

    constraints = [
        {"type": "eq", "fun": lambda w: w.sum() - 1.0},
        {"type": "ineq", "fun": lambda w: _CLICK_A.T @ w - eta},
        {"type": "ineq", "fun": lambda w: _CLICK_B.T @ w - eta},
        {"type": "ineq", "fun": lambda w: _COIN.T @ w - _MIN_COINCIDENCE},
    ]
    best_val = _postselected_chsh(best_w)
    for seed in seeds:
        seed = seed / seed.sum()
        res = minimize(
            lambda w: -_postselected_chsh(w),
            seed,
            method="SLSQP",
            bounds=[(0.0, 1.0)] * n,
            constraints=constraints,
            options={"maxiter": 300, "ftol": 1e-12},
        )
        if not res.success:
            continue
        w = np.clip(res.x, 0.0, None)
        total = w.sum()
        if total <= 0:
            continue
        w = w / total
        # Feasibility check: only accept ensembles that truly meet the
        # required click rates (SLSQP can return slightly violating points).
        if np.min(_CLICK_A.T @ w) < eta - 1e-9 or np.min(_CLICK_B.T @ w) < eta - 1e-9:
            continue
        val = _postselected_chsh(w)
        if val > best_val:
            best_val, best_w = val, w
    return _attack_result(eta, best_w)


def loophole_attack_curve(etas: Sequence[float], *, polish: bool = True) -> list[AttackResult]:
    """Attack strength across efficiencies, guaranteed monotone non-increasing.

    Efficiencies are processed from high to low, warm-starting each search
    with every ensemble found so far; because any ensemble feasible at a
    higher ``eta`` stays feasible at a lower one, the reported values can
    only grow as ``eta`` drops.

    Args:
        etas: Efficiencies in ``(0, 1]``, any order.
        polish: Forwarded to :func:`loophole_attack`.

    Returns:
        Results aligned with the input order.
    """
    order = np.argsort(np.asarray(etas, dtype=float))[::-1]
    results: dict[int, AttackResult] = {}
    warm: list[np.ndarray] = []
    best_so_far = -np.inf
    for idx in order:
        res = loophole_attack(float(etas[idx]), extra_starts=warm, polish=polish)
        # Warm starts make the optimum monotone; enforce it exactly by
        # carrying forward the best ensemble seen so far.
        if res.chsh < best_so_far - 1e-12:
            prev = max(results.values(), key=lambda r: r.chsh)
            res = _attack_result(float(etas[idx]), prev.weights.copy())
        best_so_far = max(best_so_far, res.chsh)
        warm.append(res.weights.copy())
        results[int(idx)] = res
    return [results[i] for i in range(len(etas))]


def nosignalling_residual(table: CorrelationTable) -> float:
    """Largest marginal shift induced by the other party's setting choice.

    Exactly zero (up to round-off) for any behaviour produced by measuring
    a shared quantum state with uncommunicating devices; materially positive
    values flag a modeling bug or a signalling behaviour.
    """
    p = table.probabilities
    marg_a = p.sum(axis=3)  # (x, y, a)
    marg_b = p.sum(axis=2)  # (x, y, b)
    res_a = (marg_a.max(axis=1) - marg_a.min(axis=1)).max()
    res_b = (marg_b.max(axis=0) - marg_b.min(axis=0)).max()
    return float(max(res_a, res_b))
