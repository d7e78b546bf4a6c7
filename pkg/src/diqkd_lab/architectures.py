"""End-to-end entanglement-distribution architectures for DIQKD links.

Three link layouts share a common interface: a :class:`Scenario` describing
hardware and geometry goes in, a :class:`RunResult` with the heralded
correlation statistics, CHSH score, error rate, and extractable key rate
comes out.

* ``standard``: a pair source between the parties; photons fly directly to
  the measurement stations, so both detection efficiencies pick up the full
  fiber transmission and the Bell test degrades quickly with distance.
* ``local_heralding``: the source sits at Alice; Bob passes his arriving
  mode through a heralded qubit amplifier, so fiber loss is converted into
  a lower heralding rate instead of a lower detection efficiency.
* ``third_party``: sources at both ends, a Bell-state measurement at a
  midpoint station heralds entanglement swapping; again loss moves into
  the heralding rate.

Measurement conventions: Alice uses two settings at angles ``(0, pi/2)``;
Bob uses three, ``(pi, 5 pi/4, 3 pi/4)``.  Setting 0 on each side is the
key-generation basis (for the singlet these outcomes agree after Bob's
flip-free readout at ``pi``), and the CHSH test runs on Alice's two
settings against Bob's settings 1 and 2.  No-click and double-click
outcomes are folded to outcome 0 for certification.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from diqkd_lab.bellcert import (
    bell_value,
    bin_no_click,
    chsh_functional,
)
from diqkd_lab.photonics import (
    AnyModeState,
    DetectorModel,
    ModeMixture,
    ModeState,
    bell_state_measurement,
    distance_to_transmission,
    loss_channel,
    permute_modes,
    polarization_correlation_table,
    polarization_rotation,
    polarization_singlet,
    qubit_amplifier,
    spdc_source,
    tensor_modes,
)
from diqkd_lab.qstate import CorrelationTable, DimensionMismatchError

__all__ = [
    "ARCHITECTURES",
    "ALICE_ANGLES",
    "BOB_ANGLES",
    "Scenario",
    "RunResult",
    "matter_node_scenario",
    "binary_entropy",
    "devetak_winter_rate",
    "key_rate",
    "run_standard",
    "run_local_heralding",
    "run_third_party",
    "run",
    "secret_bits_per_second",
    "distance_sweep",
    "charlie_independence_residual",
]

ARCHITECTURES = ("standard", "local_heralding", "third_party")

ALICE_ANGLES = (0.0, np.pi / 2)
BOB_ANGLES = (np.pi, 5 * np.pi / 4, 3 * np.pi / 4)

# Bob settings participating in the CHSH test (setting 0 is the key basis).
CHSH_BOB_SETTINGS = (1, 2)

TSIRELSON = 2.0 * np.sqrt(2.0)


@dataclass(frozen=True)
class Scenario:
    """Hardware and geometry of one link configuration.

    Attributes:
        architecture: One of ``ARCHITECTURES``.
        distance_km: Total Alice-Bob separation.
        attenuation_db_per_km: Fiber attenuation; 0.2 dB/km is standard
            telecom fiber.
        detector_efficiency: Efficiency of every measurement and heralding
            detector.
        pair_prob: Pair-emission parameter of the nondeterministic sources.
            Zero selects ideal on-demand sources: the entangled-pair sources
            always emit exactly one pair, and the amplifier ancillas are
            ideal single photons.
        amplifier_transmission: Beamsplitter transmission of the qubit
            amplifier (``local_heralding`` only).  Values near 1 give high
            gain and low heralding rate.
        dark_count_prob: Dark-count probability per detector per trial.
        repetition_rate_hz: Source repetition rate.
        readout_time_s: Measurement dead time per heralded round; 0 means
            detection never limits throughput.
        node_fidelity: Fidelity of the distributed pair to the ideal
            singlet before transmission losses (depolarizing imperfection
            of the source or memory node).
        source_position: Position of the pair source between Alice (0) and
            Bob (1); only the ``standard`` architecture uses it.
    """

    architecture: str = "standard"
    distance_km: float = 0.0
    attenuation_db_per_km: float = 0.2
    detector_efficiency: float = 1.0
    pair_prob: float = 0.0
    amplifier_transmission: float = 0.99
    dark_count_prob: float = 0.0
    repetition_rate_hz: float = 1.0e8
    readout_time_s: float = 0.0
    node_fidelity: float = 1.0
    source_position: float = 0.5

    def __post_init__(self) -> None:
        if self.architecture not in ARCHITECTURES:
            raise ValueError(
                f"unknown architecture {self.architecture!r}; expected one of {ARCHITECTURES}"
            )
        positive = {"repetition_rate_hz": self.repetition_rate_hz}
        for name, value in positive.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        non_negative = {
            "distance_km": self.distance_km,
            "attenuation_db_per_km": self.attenuation_db_per_km,
            "readout_time_s": self.readout_time_s,
        }
        for name, value in non_negative.items():
            if value < 0:
                raise ValueError(f"{name} must be non-negative, got {value}")
        unit = {
            "detector_efficiency": self.detector_efficiency,
            "dark_count_prob": self.dark_count_prob,
            "source_position": self.source_position,
        }
        for name, value in unit.items():
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if not 0.0 <= self.pair_prob < 1.0:
            raise ValueError(f"pair_prob must lie in [0, 1), got {self.pair_prob}")
        if not 0.0 < self.amplifier_transmission < 1.0:
            raise ValueError(
                f"amplifier_transmission must lie in (0, 1), got {self.amplifier_transmission}"
            )
        if not 0.0 <= self.node_fidelity <= 1.0:
            raise ValueError(
                f"node_fidelity must lie in [0, 1], got {self.node_fidelity}"
            )

    def to_dict(self) -> dict:
        """Plain-dict form (JSON friendly)."""
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "Scenario":
        """Build a scenario from a mapping, rejecting unknown keys by name."""
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown scenario fields: {', '.join(unknown)}")
        return cls(**dict(data))


def matter_node_scenario(**overrides) -> Scenario:
    """Scenario preset for matter-memory nodes.

    Matter nodes hold the entangled state deterministically but pay for it
    with imperfect state fidelity and a measurement dead time that caps the
    usable repetition rate.
    """
    params = {
        "architecture": "standard",
        "node_fidelity": 0.90,
        "readout_time_s": 2.0e-6,
    }
    params.update(overrides)
    return Scenario(**params)


@dataclass(frozen=True)
class RunResult:
    """Outcome statistics of one simulated link.

    Attributes:
        scenario: The configuration that produced this result.
        table: Conditional (on heralding, where applicable) measurement
            statistics with outcomes ``(0, 1, no-click, double-click)``,
            shape ``(2, 3, 4, 4)``.
        herald_probability: Probability per source repetition that the
            architecture declares a usable round (1 for ``standard``).
        chsh: Fair-binned CHSH value of the conditional statistics.
        qber: Error rate of the key basis among coincident rounds
            (double clicks folded to outcome 0, no-clicks sifted out).
        key_rate: Secret bits per heralded round: the coincident fraction
            of key-basis rounds times the asymptotic rate of the binned
            CHSH certificate.
        notes: Human-readable modeling remarks.
    """

    scenario: Scenario
    table: CorrelationTable
    herald_probability: float
    chsh: float
    qber: float
    key_rate: float
    notes: tuple[str, ...] = ()


def binary_entropy(p: float) -> float:
    """Binary Shannon entropy ``h(p)`` in bits."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability must lie in [0, 1], got {p}")
    if p in (0.0, 1.0):
        return 0.0
    return float(-p * np.log2(p) - (1.0 - p) * np.log2(1.0 - p))


def devetak_winter_rate(qber: float, chsh: float) -> float:
    """Asymptotic one-way DIQKD key rate from an error rate and CHSH value.

    ``r = 1 - h(Q) - h(1/2 + sqrt((S/2)^2 - 1)/2)``, floored at zero: the
    error-correction term pays for reconciling the key basis while the CHSH
    term bounds the eavesdropper's information.  Values of ``S`` at or
    below the local bound certify nothing (rate 0); values above the
    quantum maximum are clamped to it.

    Args:
        qber: Key-basis error rate ``Q`` in ``[0, 1]``.
        chsh: CHSH value ``S``.
    """
    if not 0.0 <= qber <= 1.0:
        raise ValueError(f"qber must lie in [0, 1], got {qber}")
    if chsh <= 2.0:
        return 0.0
    s = min(float(chsh), TSIRELSON)
    eve_term = binary_entropy(0.5 + 0.5 * np.sqrt((s / 2.0) ** 2 - 1.0))
    return float(max(0.0, 1.0 - binary_entropy(qber) - eve_term))


def _chsh_from_table(table: CorrelationTable) -> float:
    """Fair-binned CHSH of the (2 x 3)-setting table on Bob's test settings."""
    p = table.probabilities
    sub = CorrelationTable(probabilities=p[:, list(CHSH_BOB_SETTINGS)])
    return bell_value(bin_no_click(sub), chsh_functional())


def _binned_qber(table: CorrelationTable, x: int = 0, y: int = 0) -> float:
    """Key-basis disagreement probability after folding every outcome to binary."""
    return bin_no_click(table).error_rate(x, y)


def _sifted_qber(table: CorrelationTable, x: int = 0, y: int = 0) -> tuple[float, float]:
    """Key-basis coincidence fraction and error rate among coincidences.

    Double clicks count as outcome 0 (they are clicks); no-click rounds on
    either side are sifted out, which both parties can do by public
    discussion without touching the Bell test.
    """
    cell = table.probabilities[x, y].copy()
    n_a, n_b = cell.shape
    if n_a > 3:
        cell[0, :] += cell[3, :]
        cell = cell[:3, :]
    if n_b > 3:
        cell[:, 0] += cell[:, 3]
        cell = cell[:, :3]
    coincident = float(cell[:2, :2].sum())
    if coincident <= 0.0:
        return 0.0, 0.5
    errors = float(cell[0, 1] + cell[1, 0])
    return coincident, errors / coincident

def key_rate(table: CorrelationTable, raw_x: int = 0, raw_y: int = 0) -> float:
    """Device-independent key rate of a measurement table, fully binned.

    Every non-binary outcome (no-click, double-click) is folded to outcome
    0 on both the key basis and the test settings before computing
    ``devetak_winter_rate``; nothing is sifted out, so this is the
    conservative rate an experiment quotes without post-selection.

    Args:
        table: Statistics with Alice's 2 settings and Bob's 3 settings.
        raw_x: Alice's key-basis setting.
        raw_y: Bob's key-basis setting.
    """
    if table.probabilities.shape[:2] != (2, 3):
        raise DimensionMismatchError(
            f"expected a (2, 3)-setting table, got {table.probabilities.shape[:2]}"
        )
    return devetak_winter_rate(_binned_qber(table, raw_x, raw_y), _chsh_from_table(table))


# --------------------------------------------------------------------------
# Shared pipeline pieces
# --------------------------------------------------------------------------


def _n_max(scenario: Scenario) -> int:
    """Smallest safe Fock truncation for the scenario's photon content.

    Ideal sources put at most one photon in any interfering mode pair; a
    two-pair source needs 3; the amplifier's two contaminated ancillas can
    stack up to four photons on its output mode pair.  The swap
    architecture truncates its sources to single-pair emission, so 2
    always suffices there.
    """
    if scenario.pair_prob == 0.0 or scenario.architecture == "third_party":
        return 2
    return 4 if scenario.architecture == "local_heralding" else 3


def _depolarize_pair(state: AnyModeState, h_mode: int, v_mode: int, fidelity: float) -> AnyModeState:
    """Depolarize one polarization qubit so a singlet keeps the given fidelity.

    Applies the depolarizing channel in Kraus form,
    ``(1 - 3 lam/4) rho + (lam/4)(X rho X + Y rho Y + Z rho Z)`` with
    ``lam = 4 (1 - fidelity) / 3``, where the Paulis act on the mode pair
    (X: H<->V swap, Z: phase on the V occupation).  One-sided on a singlet
    this yields a Werner state of exactly the requested fidelity.
    """
    if fidelity >= 1.0:
        return state
    lam = 4.0 * (1.0 - fidelity) / 3.0
    branches = state.branches if isinstance(state, ModeMixture) else ((1.0, state),)
    n = branches[0][1].n_modes
    d = branches[0][1].n_max + 1
    swap_order = list(range(n))
    swap_order[h_mode], swap_order[v_mode] = swap_order[v_mode], swap_order[h_mode]
    phase_shape = [1] * n
    phase_shape[v_mode] = d
    phase = ((-1.0) ** np.arange(d)).reshape(phase_shape)
    out: list[tuple[float, ModeState]] = []
    for w, s in branches:
        arr = s.amplitudes
        x_arr = np.transpose(arr, swap_order)
        z_arr = arr * phase
        y_arr = np.transpose(z_arr, swap_order)
        out.append((w * (1.0 - 0.75 * lam), ModeState(amplitudes=arr)))
        for pauli_arr in (x_arr, z_arr, y_arr):
            out.append((w * 0.25 * lam, ModeState(amplitudes=pauli_arr)))
    return ModeMixture(branches=tuple(out))


def _pair_state(scenario: Scenario, n_max: int, n_pair_max: int = 2) -> AnyModeState:
    """Source output on modes (aH, aV, bH, bV)."""
    if scenario.pair_prob == 0.0:
        state: AnyModeState = polarization_singlet(n_max)
    else:
        state = spdc_source(scenario.pair_prob, n_pair_max=n_pair_max, n_max=n_max)
    return _depolarize_pair(state, 2, 3, scenario.node_fidelity)


def _lossy(state: AnyModeState, modes: Sequence[int], transmission: float) -> AnyModeState:
    if transmission >= 1.0:
        return state
    for m in modes:
        state = loss_channel(state, m, transmission)
    return state


def _measure(
    state: AnyModeState,
    scenario: Scenario,
    alice_modes: tuple[int, int] = (0, 1),
    bob_modes: tuple[int, int] = (2, 3),
) -> CorrelationTable:
    detector = DetectorModel(
        efficiency=scenario.detector_efficiency,
        dark_count_prob=scenario.dark_count_prob,
    )
    return polarization_correlation_table(
        state, alice_modes, bob_modes, ALICE_ANGLES, BOB_ANGLES, detector
    )


def _result(
    scenario: Scenario,
    table: CorrelationTable,
    herald_probability: float,
    notes: tuple[str, ...],
) -> RunResult:
    chsh = _chsh_from_table(table)
    coincident, qber = _sifted_qber(table)
    rate = coincident * devetak_winter_rate(qber, chsh)
    return RunResult(
        scenario=scenario,
        table=table,
        herald_probability=float(herald_probability),
        chsh=float(chsh),
        qber=float(qber),
        key_rate=float(rate),
        notes=notes,
    )


# --------------------------------------------------------------------------
# Architectures
# --------------------------------------------------------------------------


def run_standard(scenario: Scenario) -> RunResult:
    """Direct transmission: one source, both photons travel to the parties.

    The link is modeled symmetrically: both arms use the transmission of
    the longer arm (for a mid-point source the arms are equal anyway), so
    each party's effective detection efficiency is
    ``detector_efficiency * transmission(worst arm)`` and the binned CHSH
    decays with the square of the arm transmission.  Every repetition is a
    round: ``herald_probability`` is 1.
    """
    n_max = _n_max(scenario)
    state = _pair_state(scenario, n_max)
    worst_arm = max(scenario.source_position, 1.0 - scenario.source_position)
    arm_t = distance_to_transmission(
        worst_arm * scenario.distance_km, scenario.attenuation_db_per_km
    )
    state = _lossy(state, (0, 1, 2, 3), arm_t)
    table = _measure(state, scenario)
    notes = (
        "symmetric link: both arms modeled at the longer arm's transmission "
        f"({worst_arm * scenario.distance_km:.3f} km)",
    )
    return _result(scenario, table, 1.0, notes)


def run_local_heralding(scenario: Scenario) -> RunResult:
    """Source at Alice; Bob heralds arrival with a qubit amplifier.

    Alice keeps her photon in the lab while Bob's travels the full
    distance and feeds a heralded qubit amplifier.  A successful herald
    teleports the surviving qubit onto fresh local modes; conditioned on
    it, the measured statistics are nearly distance independent (the only
    pollution is the teleported vacuum amplitude, suppressed by the
    amplifier's gain), while the heralding probability absorbs the fiber
    loss.  ``pair_prob`` parameterizes the amplifier's triggered ancilla
    sources; the entangled-pair source itself is ideal.
    """
    n_max = _n_max(scenario)
    state: AnyModeState = polarization_singlet(n_max)
    state = _depolarize_pair(state, 2, 3, scenario.node_fidelity)
    arm_t = distance_to_transmission(scenario.distance_km, scenario.attenuation_db_per_km)
    state = _lossy(state, (2, 3), arm_t)
    detector = DetectorModel(
        efficiency=scenario.detector_efficiency,
        dark_count_prob=scenario.dark_count_prob,
    )
    record = qubit_amplifier(
        state,
        (2, 3),
        scenario.amplifier_transmission,
        detector=detector,
        ancilla_pair_prob=scenario.pair_prob if scenario.pair_prob > 0 else None,
    )
    if record.conditional_state is None:
        raise RuntimeError("amplifier never heralds under this scenario")
    table = _measure(record.conditional_state, scenario)
    notes = (
        "statistics conditioned on the amplifier herald",
        f"amplifier gain {record.gain:.6g}" if record.gain is not None else "amplifier gain undefined",
    )
    return _result(scenario, table, record.success_probability, notes)


def run_third_party(scenario: Scenario) -> RunResult:
    """Sources at both ends; a midpoint Bell measurement swaps entanglement.

    Alice and Bob each keep one half of a local pair and send the other
    half to a central station, where a linear-optics Bell-state measurement
    heralds the swap; a ``psi+`` herald is corrected to ``psi-`` by a
    feed-forward phase flip.  Pair sources are truncated to single-pair
    emission here: the swap's well-known multi-pair false heralds are a
    property of the sources, not of the architecture, and are exposed
    separately by the photonics layer.
    """
    n_max = _n_max(scenario)
    # Modes: Alice keeps (0, 1); (2, 3) travel to the station.
    left = _pair_state(scenario, n_max, n_pair_max=1)
    # Right source: Bob keeps (2, 3) of his own pair; (0, 1) travel.  Build
    # then concatenate: global modes (aH aV c1H c1V c2H c2V bH bV).
    if scenario.pair_prob == 0.0:
        right: AnyModeState = polarization_singlet(n_max)
    else:
        right = spdc_source(scenario.pair_prob, n_pair_max=1, n_max=n_max)
    right = _depolarize_pair(right, 2, 3, scenario.node_fidelity)
    # Swap the right source's halves so its travelling modes come first:
    # global layout (aH aV | c1H c1V c2H c2V | bH bV).
    right = permute_modes(right, (2, 3, 0, 1))
    state = tensor_modes(left, right)
    half_t = distance_to_transmission(
        scenario.distance_km / 2.0, scenario.attenuation_db_per_km
    )
    state = _lossy(state, (2, 3, 4, 5), half_t)
    detector = DetectorModel(
        efficiency=scenario.detector_efficiency,
        dark_count_prob=scenario.dark_count_prob,
    )
    bsm = bell_state_measurement(state, (2, 3), (4, 5), detector)
    # Remaining modes: (aH, aV, bH, bV).
    merged: list[tuple[float, ModeState]] = []
    herald = 0.0
    d = n_max + 1
    phase = (-1.0) ** np.arange(d)
    for outcome in bsm.outcomes:
        if outcome.state is None or outcome.probability <= 0.0:
            continue
        herald += outcome.probability
        for w, s in outcome.state.branches:
            arr = s.amplitudes
            if outcome.label == "psi+":
                # Feed-forward: phase-flip Bob's V mode to map psi+ to psi-.
                arr = arr * phase.reshape(1, 1, 1, d)
            merged.append((outcome.probability * w, ModeState(amplitudes=arr)))
    if herald <= 0.0:
        raise RuntimeError("the swap station never heralds under this scenario")
    conditional = ModeMixture(
        branches=tuple((w / herald, s) for w, s in merged)
    )
    table = _measure(conditional, scenario)
    notes = (
        "statistics conditioned on the swap herald; psi+ heralds corrected by feed-forward",
        "pair sources truncated to single-pair emission",
    )
    return _result(scenario, table, herald, notes)


_RUNNERS = {
    "standard": run_standard,
    "local_heralding": run_local_heralding,
    "third_party": run_third_party,
}


def run(scenario: Scenario) -> RunResult:
    """Simulate a scenario with the runner matching its architecture."""
    return _RUNNERS[scenario.architecture](scenario)


def secret_bits_per_second(result: RunResult) -> float:
    """Long-run secret key throughput of a link.

    The attempt rate is the source repetition rate, capped by the readout
    dead time when one is configured; each attempt heralds with
    ``herald_probability`` and each heralded round yields ``key_rate``
    secret bits asymptotically.
    """
    scenario = result.scenario
    rate = scenario.repetition_rate_hz
    if scenario.readout_time_s > 0:
        rate = min(rate, 1.0 / scenario.readout_time_s)
    return float(rate * result.herald_probability * result.key_rate)


def distance_sweep(scenario: Scenario, distances_km: Sequence[float]) -> list[RunResult]:
    """Run the same scenario at several distances."""
    return [
        run(dataclasses.replace(scenario, distance_km=float(d))) for d in distances_km
    ]


def charlie_independence_residual(
    scenario: Scenario, settings: Sequence[tuple[int, int]] | None = None
) -> float:
    """Largest shift of the swap herald probability across measurement settings.

    For the ``third_party`` architecture the station's heralding statistics
    must not depend on which settings Alice and Bob choose -- their
    measurements act on modes the station never touches.  This check runs
    the measurement rotations *before* the Bell-state measurement (the
    operations commute) and compares the herald probability across all
    setting pairs.

    Returns:
        ``max - min`` of the herald probability over the setting pairs;
        zero up to floating-point round-off for an honest model.
    """
    if scenario.architecture != "third_party":
        raise ValueError("independence check applies to the third_party architecture")
    if settings is None:
        settings = [(x, y) for x in range(len(ALICE_ANGLES)) for y in range(len(BOB_ANGLES))]
    n_max = _n_max(scenario)
    left = _pair_state(scenario, n_max, n_pair_max=1)
    if scenario.pair_prob == 0.0:
        right: AnyModeState = polarization_singlet(n_max)
    else:
        right = spdc_source(scenario.pair_prob, n_pair_max=1, n_max=n_max)
    right = _depolarize_pair(right, 2, 3, scenario.node_fidelity)
    right = permute_modes(right, (2, 3, 0, 1))
    state = tensor_modes(left, right)
    half_t = distance_to_transmission(
        scenario.distance_km / 2.0, scenario.attenuation_db_per_km
    )
    state = _lossy(state, (2, 3, 4, 5), half_t)
    detector = DetectorModel(
        efficiency=scenario.detector_efficiency,
        dark_count_prob=scenario.dark_count_prob,
    )
    herald_probs = []
    for x, y in settings:
        rotated = polarization_rotation(state, 0, 1, ALICE_ANGLES[x])
        rotated = polarization_rotation(rotated, 6, 7, BOB_ANGLES[y])
        bsm = bell_state_measurement(rotated, (2, 3), (4, 5), detector)
        herald_probs.append(bsm.success_probability)
    return float(max(herald_probs) - min(herald_probs))
