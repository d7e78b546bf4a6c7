"""Classical post-processing that turns device outcomes into a secret key.

Two in-process party machines (Alice holds ``(x, a)``, Bob ``(y, b)``)
exchange :class:`ProtocolMessage` records over a simulated authenticated
channel and drive the standard pipeline:

1. basis announcement,
2. publication of a random estimation sample,
3. CHSH / error-rate estimation with Hoeffding confidence radii,
4. two-pass parity-bisection reconciliation with a verification hash,
5. Toeplitz-hash privacy amplification sized by the worst-case key rate.

Everything is a pure function of ``(scenario, n_rounds, seed)``; the full
transcript serializes to a stable byte string so repeated runs can be
compared byte for byte.

Conventions: outcome codes follow the measurement tables (0, 1, no-click,
double-click); parties bin every non-``1`` outcome to bit 0 before any
classical processing, so no post-selection enters the statistics.  Alice's
string is the reference during reconciliation and the final key is hashed
from it; disclosed parity bits are counted against the key length.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

import numpy as np

from diqkd_lab.architectures import RunResult, Scenario, devetak_winter_rate, run

__all__ = [
    "MessageKind",
    "ProtocolMessage",
    "ProtocolAbort",
    "RoundRecord",
    "EstimationSample",
    "Estimate",
    "ReconcileResult",
    "SessionOutcome",
    "simulate_rounds",
    "sift",
    "estimate",
    "reconcile",
    "privacy_amplify",
    "run_session",
    "serialize_transcript",
    "parse_transcript",
]

#: Bob test settings entering the CHSH estimate, with their functional signs.
_CHSH_PAIRS = (((0, 1), 1.0), ((0, 2), 1.0), ((1, 1), 1.0), ((1, 2), -1.0))

_KEY_SETTINGS = (0, 0)

_VERIFY_DIGEST_BITS = 64


class MessageKind(IntEnum):
    """Message types of the post-processing protocol."""

    BASIS_ANNOUNCE = 1
    SAMPLE_INDICES = 2
    SAMPLE_VALUES = 3
    PARITY_QUERY = 4
    PARITY_REPLY = 5
    HASH_SEED = 6
    ABORT = 7
    DONE = 8


@dataclass(frozen=True)
class ProtocolMessage:
    """One record on the authenticated public channel.

    Attributes:
        seq: Position in the transcript, starting at 0.
        kind: Message type.
        payload: Kind-specific bytes: setting/index lists as little-endian
            u32 arrays, bit strings packed MSB-first, seeds as 32 raw
            bytes, abort reasons as ASCII.
        sender: ``"alice"`` or ``"bob"`` (implicit in the choreography;
            not serialized).
    """

    seq: int
    kind: MessageKind
    payload: bytes
    sender: str


class ProtocolAbort(Exception):
    """Raised internally when a protocol stage fails its acceptance check."""

    def __init__(self, reason: str) -> None:
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class RoundRecord:
    """One measurement round as seen by the devices.

    Attributes:
        index: Round number.
        x: Alice's setting (0 or 1); 0 is the key basis.
        y: Bob's setting (0, 1 or 2); 0 is the key basis.
        a: Alice's outcome code (0, 1, 2 = no click, 3 = double click).
        b: Bob's outcome code.
        heralded: Whether the architecture declared the round usable;
            outcomes of non-heralded rounds are recorded as no-clicks.
    """

    index: int
    x: int
    y: int
    a: int
    b: int
    heralded: bool


@dataclass(frozen=True)
class EstimationSample:
    """Published estimation data: settings and binned outcome bits."""

    indices: np.ndarray
    x: np.ndarray
    y: np.ndarray
    alice_bits: np.ndarray
    bob_bits: np.ndarray


@dataclass(frozen=True)
class Estimate:
    """Plug-in estimates with Hoeffding confidence radii.

    The radii hold jointly at the configured confidence level: a union
    bound splits the failure budget over the four CHSH correlators and the
    error rate.
    """

    s_hat: float
    q_hat: float
    s_radius: float
    q_radius: float

    @property
    def s_worst(self) -> float:
        return self.s_hat - self.s_radius

    @property
    def q_worst(self) -> float:
        return min(self.q_hat + self.q_radius, 1.0)


@dataclass(frozen=True)
class ReconcileResult:
    """Outcome of the interactive reconciliation stage.

    Attributes:
        bits: Bob's corrected bit string.
        leakage_bits: Parity and verification-hash bits disclosed about
            Alice's string (Bob's replies are derivable from the published
            parities together with his own data, so they are not counted).
        corrections: Number of bit flips applied by Bob.
        verified: Whether the final verification hashes matched.
        messages: The parity/hash messages exchanged, in order.
    """

    bits: np.ndarray
    leakage_bits: int
    corrections: int
    verified: bool
    messages: tuple[ProtocolMessage, ...]


@dataclass(frozen=True)
class SessionOutcome:
    """Result of a full post-processing session.

    Attributes:
        status: ``"key"`` or ``"abort"``.
        alice_key_bits: Alice's final key (empty on abort).
        bob_key_bits: Bob's final key; bit-identical to Alice's on success.
        leakage_bits: Total reconciliation leakage charged to the key.
        estimated_s: Plug-in CHSH estimate (NaN if estimation never ran).
        estimated_q: Plug-in error-rate estimate.
        s_radius: Hoeffding radius on the CHSH estimate.
        q_radius: Hoeffding radius on the error-rate estimate.
        worst_case_rate: Key rate evaluated at the confidence-worst
            ``(S, Q)`` corner; sizes the amplified key.
        n_rounds: Rounds simulated.
        n_heralded: Rounds the architecture heralded.
        n_raw: Raw key length before amplification (heralded key-basis
            rounds outside the estimation sample).
        abort_reason: Stage tag on abort, else None.
        transcript: Every message exchanged, in order.
    """

    status: str
    alice_key_bits: np.ndarray
    bob_key_bits: np.ndarray
    leakage_bits: int
    estimated_s: float
    estimated_q: float
    s_radius: float
    q_radius: float
    worst_case_rate: float
    n_rounds: int
    n_heralded: int
    n_raw: int
    abort_reason: str | None
    transcript: tuple[ProtocolMessage, ...]


# --------------------------------------------------------------------------
# Bit and byte helpers
# --------------------------------------------------------------------------


def _pack_bits(bits: np.ndarray) -> bytes:
    return np.packbits(bits.astype(np.uint8)).tobytes()


def _unpack_bits(data: bytes, n: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=n)


def _u32_bytes(values: np.ndarray) -> bytes:
    return np.asarray(values, dtype="<u4").tobytes()


def _verify_digest(bits: np.ndarray) -> bytes:
    payload = _pack_bits(bits) + struct.pack("<I", bits.size)
    return hashlib.blake2b(payload, digest_size=_VERIFY_DIGEST_BITS // 8).digest()


def serialize_transcript(messages: Sequence[ProtocolMessage]) -> bytes:
    """Encode messages as ``{u32 seq, u8 kind, u32 length, payload}`` records.

    All integers are little-endian; the sender is implicit in the protocol
    choreography and not serialized.
    """
    parts = []
    for msg in messages:
        parts.append(struct.pack("<IBI", msg.seq, int(msg.kind), len(msg.payload)))
        parts.append(msg.payload)
    return b"".join(parts)


def parse_transcript(data: bytes) -> tuple[tuple[int, MessageKind, bytes], ...]:
    """Decode a serialized transcript into ``(seq, kind, payload)`` triples."""
    out = []
    offset = 0
    header = struct.Struct("<IBI")
    while offset < len(data):
        if offset + header.size > len(data):
            raise ValueError("truncated transcript header")
        seq, kind, length = header.unpack_from(data, offset)
        offset += header.size
        if offset + length > len(data):
            raise ValueError("truncated transcript payload")
        out.append((seq, MessageKind(kind), bytes(data[offset : offset + length])))
        offset += length
    return tuple(out)


def _binned_bit(outcome: np.ndarray) -> np.ndarray:
    """Fold device outcomes to bits: outcome 1 -> 1, everything else -> 0."""
    return (np.asarray(outcome) == 1).astype(np.uint8)


# --------------------------------------------------------------------------
# Round simulation
# --------------------------------------------------------------------------


def simulate_rounds(
    scenario: Scenario,
    n_rounds: int,
    seed: int | np.random.SeedSequence,
    *,
    result: RunResult | None = None,
) -> list[RoundRecord]:
    """Sample measurement rounds from a scenario's conditional statistics.

    Settings are drawn uniformly and independently per party; the herald
    flag is Bernoulli with the architecture's heralding probability; the
    outcome pair of a heralded round follows the conditional table cell of
    its settings.  Non-heralded rounds record no-clicks.

    Args:
        scenario: Link configuration.
        n_rounds: Number of source repetitions to simulate.
        seed: Seed for the round generator; fixed seed means an identical
            record list on every call.
        result: Optional precomputed ``run(scenario)`` output, to avoid
            re-simulating the optics.
    """
    if n_rounds <= 0:
        raise ValueError(f"n_rounds must be positive, got {n_rounds}")
    if result is None:
        result = run(scenario)
    rng = np.random.default_rng(seed)
    n_x, n_y = result.table.probabilities.shape[:2]
    x = rng.integers(0, n_x, size=n_rounds)
    y = rng.integers(0, n_y, size=n_rounds)
    heralded = rng.random(n_rounds) < result.herald_probability
    u = rng.random(n_rounds)
    joint = np.full(n_rounds, 2 * 4 + 2, dtype=np.int64)  # no-click pair
    for ix in range(n_x):
        for iy in range(n_y):
            mask = heralded & (x == ix) & (y == iy)
            if not mask.any():
                continue
            cell = result.table.probabilities[ix, iy].reshape(-1)
            edges = np.cumsum(cell)
            edges[-1] = 1.0
            joint[mask] = np.searchsorted(edges, u[mask], side="right")
    n_b = result.table.probabilities.shape[3]
    a = joint // n_b
    b = joint % n_b
    return [
        RoundRecord(
            index=i,
            x=int(x[i]),
            y=int(y[i]),
            a=int(a[i]),
            b=int(b[i]),
            heralded=bool(heralded[i]),
        )
        for i in range(n_rounds)
    ]


# --------------------------------------------------------------------------
# Sifting and estimation
# --------------------------------------------------------------------------


def sift(
    records: Sequence[RoundRecord],
    sample_fraction: float = 0.1,
    rng: np.random.Generator | None = None,
    min_raw_rounds: int = 16,
) -> tuple[np.ndarray, np.ndarray, EstimationSample]:
    """Split heralded rounds into the raw key and the estimation sample.

    A uniform random fraction of all heralded rounds is published for
    parameter estimation (it therefore covers every setting pair); the raw
    key is what remains of the key-basis rounds ``(x, y) = (0, 0)``.

    Returns:
        ``(alice_raw_bits, bob_raw_bits, sample)``.

    Raises:
        ProtocolAbort: If fewer than ``min_raw_rounds`` raw rounds remain.
    """
    if not 0.0 <= sample_fraction < 1.0:
        raise ValueError(f"sample_fraction must lie in [0, 1), got {sample_fraction}")
    if rng is None:
        rng = np.random.default_rng(0)
    heralded = [r for r in records if r.heralded]
    idx = np.array([r.index for r in heralded], dtype=np.int64)
    x = np.array([r.x for r in heralded], dtype=np.int64)
    y = np.array([r.y for r in heralded], dtype=np.int64)
    a_bits = _binned_bit(np.array([r.a for r in heralded], dtype=np.int64))
    b_bits = _binned_bit(np.array([r.b for r in heralded], dtype=np.int64))
    n_sample = int(round(sample_fraction * len(heralded)))
    if len(heralded) > 0 and n_sample > 0:
        chosen = np.sort(rng.choice(len(heralded), size=n_sample, replace=False))
    else:
        chosen = np.array([], dtype=np.int64)
    in_sample = np.zeros(len(heralded), dtype=bool)
    in_sample[chosen] = True
    raw_mask = (~in_sample) & (x == _KEY_SETTINGS[0]) & (y == _KEY_SETTINGS[1])
    sample = EstimationSample(
        indices=idx[chosen],
        x=x[chosen],
        y=y[chosen],
        alice_bits=a_bits[chosen],
        bob_bits=b_bits[chosen],
    )
    if int(raw_mask.sum()) < min_raw_rounds:
        raise ProtocolAbort("sifting:too-few-raw-rounds")
    return a_bits[raw_mask], b_bits[raw_mask], sample


def estimate(sample: EstimationSample, confidence: float = 1.0 - 1e-6) -> Estimate:
    """CHSH and error-rate estimates from the published sample.

    Correlators use the ±1 convention ``(-1)^bit``; the CHSH combination
    matches the measurement layout (Bob's settings 1 and 2 are the test
    settings).  Hoeffding radii split the failure probability
    ``1 - confidence`` evenly over the five estimated quantities, so all
    radii hold jointly at the stated confidence.

    Raises:
        ProtocolAbort: If any needed setting pair is absent from the sample.
    """
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must lie in (0, 1), got {confidence}")
    delta = (1.0 - confidence) / 5.0
    log_term = math.log(2.0 / delta)
    va = 1.0 - 2.0 * sample.alice_bits.astype(np.float64)
    vb = 1.0 - 2.0 * sample.bob_bits.astype(np.float64)
    s_hat = 0.0
    s_radius = 0.0
    for (sx, sy), sign in _CHSH_PAIRS:
        mask = (sample.x == sx) & (sample.y == sy)
        n_xy = int(mask.sum())
        if n_xy == 0:
            raise ProtocolAbort("estimation:missing-setting-pair")
        s_hat += sign * float(np.mean(va[mask] * vb[mask]))
        s_radius += math.sqrt(2.0 * log_term / n_xy)
    key_mask = (sample.x == _KEY_SETTINGS[0]) & (sample.y == _KEY_SETTINGS[1])
    n_key = int(key_mask.sum())
    if n_key == 0:
        raise ProtocolAbort("estimation:missing-setting-pair")
    q_hat = float(np.mean(sample.alice_bits[key_mask] != sample.bob_bits[key_mask]))
    q_radius = math.sqrt(log_term / (2.0 * n_key))
    return Estimate(s_hat=s_hat, q_hat=q_hat, s_radius=s_radius, q_radius=q_radius)


# --------------------------------------------------------------------------
# Reconciliation
# --------------------------------------------------------------------------


def _block_length(q_hat: float, n: int) -> int:
    """First-pass block length ``ceil(0.73 / Q)``, clamped to ``[1, n]``."""
    q = max(q_hat, 1.0 / max(n, 1))
    return int(min(n, max(1, math.ceil(0.73 / q))))


class _Transcript:
    """Order-keeping message sink shared by both parties."""

    def __init__(self, start_seq: int = 0) -> None:
        self.messages: list[ProtocolMessage] = []
        self._seq = start_seq

    def send(self, sender: str, kind: MessageKind, payload: bytes) -> ProtocolMessage:
        msg = ProtocolMessage(seq=self._seq, kind=kind, payload=payload, sender=sender)
        self._seq += 1
        self.messages.append(msg)
        return msg

    def absorb(self, messages: Sequence[ProtocolMessage]) -> None:
        """Append pre-sequenced messages produced by a sub-protocol."""
        self.messages.extend(messages)
        self._seq += len(messages)


def _parity(bits: np.ndarray) -> int:
    return int(bits.sum()) & 1


def reconcile(
    alice_bits: np.ndarray,
    bob_bits: np.ndarray,
    q_hat: float,
    *,
    permutation_seed: int | bytes = 0,
    start_seq: int = 0,
) -> ReconcileResult:
    """Two-pass interactive parity reconciliation, Alice as reference.

    Pass 1 splits the strings into blocks of ``ceil(0.73 / q_hat)`` bits;
    pass 2 repeats on a publicly permuted copy with doubled blocks.  For
    every block whose parities disagree, Bob locates one error by binary
    search -- each step discloses one of Alice's sub-block parities -- and
    flips it.  A 64-bit keyed-size hash of Alice's string closes the stage;
    mismatching hashes mark the result unverified (callers abort).

    The disclosed information charged to the key is every parity bit Alice
    publishes plus the verification hash; Bob's replies (block mismatch
    flags and search directions) are deterministic functions of the
    published parities and his own string.

    Args:
        alice_bits: Reference bit string.
        bob_bits: String to correct; same length.
        q_hat: Error-rate estimate used only to size blocks.
        permutation_seed: Public seed of the second-pass permutation.
        start_seq: Sequence number of the first emitted message.
    """
    alice_bits = np.asarray(alice_bits, dtype=np.uint8)
    bob = np.asarray(bob_bits, dtype=np.uint8).copy()
    if alice_bits.shape != bob.shape or alice_bits.ndim != 1:
        raise ValueError("bit strings must be 1-D and of equal length")
    n = alice_bits.size
    transcript = _Transcript(start_seq)
    leakage = 0
    corrections = 0
    if n > 0:
        if isinstance(permutation_seed, bytes):
            seed_words = np.frombuffer(permutation_seed, dtype="<u4")
            perm_ss = np.random.SeedSequence(seed_words.tolist())
        else:
            perm_ss = np.random.SeedSequence(permutation_seed)
        permutation = np.random.default_rng(perm_ss).permutation(n)
        k1 = _block_length(q_hat, n)
        passes = (
            (np.arange(n), k1),
            (permutation, min(n, 2 * k1)),
        )
        for order, k in passes:
            blocks = [order[i : i + k] for i in range(0, n, k)]
            alice_parities = np.array(
                [_parity(alice_bits[blk]) for blk in blocks], dtype=np.uint8
            )
            transcript.send("alice", MessageKind.PARITY_QUERY, _pack_bits(alice_parities))
            leakage += len(blocks)
            mismatch = np.array(
                [_parity(bob[blk]) != ap for blk, ap in zip(blocks, alice_parities)],
                dtype=np.uint8,
            )
            transcript.send("bob", MessageKind.PARITY_REPLY, _pack_bits(mismatch))
            for blk in (b for b, bad in zip(blocks, mismatch) if bad):
                segment = blk
                while segment.size > 1:
                    half = segment.size // 2
                    left = segment[:half]
                    alice_left = _parity(alice_bits[left])
                    transcript.send(
                        "alice",
                        MessageKind.PARITY_QUERY,
                        _pack_bits(np.array([alice_left], dtype=np.uint8)),
                    )
                    leakage += 1
                    go_left = _parity(bob[left]) != alice_left
                    transcript.send(
                        "bob",
                        MessageKind.PARITY_REPLY,
                        _pack_bits(np.array([int(go_left)], dtype=np.uint8)),
                    )
                    segment = left if go_left else segment[half:]
                bob[segment[0]] ^= 1
                corrections += 1
    digest = _verify_digest(alice_bits)
    transcript.send("alice", MessageKind.PARITY_QUERY, digest)
    leakage += _VERIFY_DIGEST_BITS
    verified = digest == _verify_digest(bob)
    transcript.send(
        "bob", MessageKind.PARITY_REPLY, b"\x01" if verified else b"\x00"
    )
    return ReconcileResult(
        bits=bob,
        leakage_bits=leakage,
        corrections=corrections,
        verified=verified,
        messages=tuple(transcript.messages),
    )


# --------------------------------------------------------------------------
# Privacy amplification
# --------------------------------------------------------------------------


def privacy_amplify(
    bits: np.ndarray,
    leakage_bits: int,
    rate: float,
    seed: int | bytes,
    *,
    security_margin: int = 64,
) -> np.ndarray:
    """Compress a reconciled string with a seeded Toeplitz hash.

    The output length is ``max(0, floor(n * rate) - leakage_bits -
    security_margin)``.  The Toeplitz matrix ``T[i, j] = t[i - j + n - 1]``
    is defined by ``n + m - 1`` seed bits drawn from a PCG64 generator, and
    the matrix-vector product over GF(2) is evaluated as a convolution.

    Args:
        bits: Reconciled key bits.
        leakage_bits: Reconciliation disclosure to subtract.
        rate: Extractable secret fraction (worst-case plug-in key rate).
        seed: Hash seed; 32 announced bytes or an integer.
        security_margin: Extra bits sacrificed for finite-size hygiene.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.ndim != 1:
        raise ValueError("bits must be a 1-D array")
    if leakage_bits < 0 or security_margin < 0:
        raise ValueError("leakage_bits and security_margin must be non-negative")
    n = bits.size
    m = max(0, math.floor(n * rate) - leakage_bits - security_margin)
    if m == 0:
        return np.zeros(0, dtype=np.uint8)
    if isinstance(seed, bytes):
        if len(seed) != 32:
            raise ValueError(f"byte seeds must be 32 bytes, got {len(seed)}")
        ss = np.random.SeedSequence(np.frombuffer(seed, dtype="<u4").tolist())
    else:
        ss = np.random.SeedSequence(seed)
    t = np.random.default_rng(ss).integers(0, 2, size=n + m - 1, dtype=np.uint8)
    # Row i of T is t[i], t[i+1], ..., t[i+n-1] read against reversed bits:
    # (T @ bits)[i] = sum_j t[i - j + n - 1] bits[j] = conv(t, bits)[n - 1 + i].
    full = np.convolve(t.astype(np.int64), bits.astype(np.int64))
    return (full[n - 1 : n - 1 + m] & 1).astype(np.uint8)


# --------------------------------------------------------------------------
# Full session
# --------------------------------------------------------------------------


def _abort_outcome(
    reason: str,
    transcript: _Transcript,
    sender: str,
    *,
    est: Estimate | None,
    n_rounds: int,
    n_heralded: int,
    n_raw: int,
    leakage: int = 0,
) -> SessionOutcome:
    transcript.send(sender, MessageKind.ABORT, reason.encode("ascii"))
    empty = np.zeros(0, dtype=np.uint8)
    return SessionOutcome(
        status="abort",
        alice_key_bits=empty,
        bob_key_bits=empty.copy(),
        leakage_bits=leakage,
        estimated_s=est.s_hat if est else float("nan"),
        estimated_q=est.q_hat if est else float("nan"),
        s_radius=est.s_radius if est else float("nan"),
        q_radius=est.q_radius if est else float("nan"),
        worst_case_rate=0.0,
        n_rounds=n_rounds,
        n_heralded=n_heralded,
        n_raw=n_raw,
        abort_reason=reason,
        transcript=tuple(transcript.messages),
    )


def run_session(
    scenario: Scenario,
    n_rounds: int,
    seed: int,
    *,
    sample_fraction: float = 0.1,
    confidence: float = 1.0 - 1e-6,
    security_margin: int = 64,
    min_raw_rounds: int = 16,
    result: RunResult | None = None,
) -> SessionOutcome:
    """Run the end-to-end protocol between two simulated parties.

    The single seed splits into independent streams for the devices and
    for Alice's protocol randomness; the second-pass permutation seed and
    the privacy-amplification seed travel through the transcript, so the
    whole session -- including the serialized transcript -- is a pure
    function of ``(scenario, n_rounds, seed)``.

    Args:
        scenario: Link configuration handed to the architecture runner.
        n_rounds: Source repetitions to simulate.
        seed: Master seed.
        sample_fraction: Fraction of heralded rounds published for
            estimation.
        confidence: Joint confidence level of the estimation radii.
        security_margin: Bits removed on top of leakage during
            amplification.
        min_raw_rounds: Abort threshold for the sifted raw key.
        result: Optional precomputed ``run(scenario)`` output.
    """
    dev_ss, alice_ss = np.random.SeedSequence(seed).spawn(2)
    alice_rng = np.random.default_rng(alice_ss)
    if result is None:
        result = run(scenario)
    records = simulate_rounds(scenario, n_rounds, dev_ss, result=result)
    n_heralded = sum(1 for r in records if r.heralded)
    transcript = _Transcript()
    x_all = np.array([r.x for r in records], dtype=np.int64)
    y_all = np.array([r.y for r in records], dtype=np.int64)
    transcript.send("alice", MessageKind.BASIS_ANNOUNCE, _u32_bytes(x_all))
    transcript.send("bob", MessageKind.BASIS_ANNOUNCE, _u32_bytes(y_all))

    try:
        alice_raw, bob_raw, sample = sift(
            records, sample_fraction, alice_rng, min_raw_rounds
        )
    except ProtocolAbort as exc:
        return _abort_outcome(
            exc.reason, transcript, "alice",
            est=None, n_rounds=n_rounds, n_heralded=n_heralded, n_raw=0,
        )
    n_raw = int(alice_raw.size)
    transcript.send(
        "alice", MessageKind.SAMPLE_INDICES, _u32_bytes(sample.indices)
    )
    transcript.send(
        "alice", MessageKind.SAMPLE_VALUES, _pack_bits(sample.alice_bits)
    )
    transcript.send("bob", MessageKind.SAMPLE_VALUES, _pack_bits(sample.bob_bits))

    try:
        est = estimate(sample, confidence)
    except ProtocolAbort as exc:
        return _abort_outcome(
            exc.reason, transcript, "alice",
            est=None, n_rounds=n_rounds, n_heralded=n_heralded, n_raw=n_raw,
        )
    if est.s_worst <= 2.0:
        return _abort_outcome(
            "estimation:insufficient-violation", transcript, "alice",
            est=est, n_rounds=n_rounds, n_heralded=n_heralded, n_raw=n_raw,
        )
    rate = devetak_winter_rate(est.q_worst, est.s_worst)
    if rate <= 0.0:
        return _abort_outcome(
            "estimation:zero-rate", transcript, "alice",
            est=est, n_rounds=n_rounds, n_heralded=n_heralded, n_raw=n_raw,
        )

    perm_seed = alice_rng.bytes(32)
    transcript.send("alice", MessageKind.HASH_SEED, perm_seed)
    recon = reconcile(
        alice_raw,
        bob_raw,
        est.q_hat,
        permutation_seed=perm_seed,
        start_seq=len(transcript.messages),
    )
    transcript.absorb(recon.messages)
    if not recon.verified:
        return _abort_outcome(
            "reconciliation:verification-failed", transcript, "bob",
            est=est, n_rounds=n_rounds, n_heralded=n_heralded, n_raw=n_raw,
            leakage=recon.leakage_bits,
        )

    pa_seed = alice_rng.bytes(32)
    transcript.send("alice", MessageKind.HASH_SEED, pa_seed)
    alice_key = privacy_amplify(
        alice_raw, recon.leakage_bits, rate, pa_seed, security_margin=security_margin
    )
    bob_key = privacy_amplify(
        recon.bits, recon.leakage_bits, rate, pa_seed, security_margin=security_margin
    )
    if alice_key.size == 0:
        return _abort_outcome(
            "amplification:zero-length", transcript, "alice",
            est=est, n_rounds=n_rounds, n_heralded=n_heralded, n_raw=n_raw,
            leakage=recon.leakage_bits,
        )
    transcript.send("alice", MessageKind.DONE, struct.pack("<I", alice_key.size))
    transcript.send("bob", MessageKind.DONE, struct.pack("<I", bob_key.size))
    return SessionOutcome(
        status="key",
        alice_key_bits=alice_key,
        bob_key_bits=bob_key,
        leakage_bits=recon.leakage_bits,
        estimated_s=est.s_hat,
        estimated_q=est.q_hat,
        s_radius=est.s_radius,
        q_radius=est.q_radius,
        worst_case_rate=rate,
        n_rounds=n_rounds,
        n_heralded=n_heralded,
        n_raw=n_raw,
        abort_reason=None,
        transcript=tuple(transcript.messages),
    )
