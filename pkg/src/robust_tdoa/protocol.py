"""Discrete-event simulation of the calibration challenge-response scheme.

The control center (CC) sends encrypted, signed challenges ``(c, f)`` to the
calibration source (CS). When the flag is set, CS embeds ``r = PRF(p2, c)``
in its signal; otherwise it embeds random filler of the same size. Sensors
timestamp every frame, and CC keeps only the first frame per sensor that
carries a still-unseen valid response.
"""

from __future__ import annotations

import heapq
import hmac
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Protocol

import numpy as np
from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .attacks import AttackVector
from .geometry import SensorNetwork, as_point
from .measurement import SignalParams, TdoaSet, pair_sigmas

log = logging.getLogger(__name__)

CHALLENGE_BYTES = 16
RESPONSE_BYTES = 16
NONCE_BYTES = 12
FRAME_MAGIC = b"CSF1"


class ProtocolError(Exception):
    pass


class CertificateError(ProtocolError):
    pass


# -- pluggable primitives ----------------------------------------------------


class AeadCipher(Protocol):
    def encrypt(self, key: bytes, nonce: bytes, plaintext: bytes) -> bytes: ...
    def decrypt(self, key: bytes, nonce: bytes, ciphertext: bytes) -> bytes: ...


class SignatureScheme(Protocol):
    def keypair(self, seed: bytes) -> tuple[bytes, bytes]: ...
    def sign(self, private_key: bytes, message: bytes) -> bytes: ...
    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool: ...


class Prf(Protocol):
    def __call__(self, key: bytes, data: bytes) -> bytes: ...


class AesGcmCipher:
    def encrypt(self, key, nonce, plaintext):
        return AESGCM(key).encrypt(nonce, plaintext, None)

    def decrypt(self, key, nonce, ciphertext):
        return AESGCM(key).decrypt(nonce, ciphertext, None)


class Ed25519Scheme:
    """Ed25519; signatures are deterministic, keys derive from a 32-byte seed."""

    def keypair(self, seed):
        sk = Ed25519PrivateKey.from_private_bytes(seed)
        pk = sk.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
        return seed, pk

    def sign(self, private_key, message):
        return Ed25519PrivateKey.from_private_bytes(private_key).sign(message)

    def verify(self, public_key, message, signature):
        try:
            Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
        except (InvalidSignature, ValueError):
            return False
        return True


def hmac_prf(key: bytes, data: bytes) -> bytes:
    """HMAC-SHA256 truncated to the response size."""
    return hmac.new(key, data, "sha256").digest()[:RESPONSE_BYTES]


@dataclass(frozen=True)
class CryptoSuite:
    cipher: AeadCipher = field(default_factory=AesGcmCipher)
    signer: SignatureScheme = field(default_factory=Ed25519Scheme)
    prf: Prf = hmac_prf


# -- keys and certificate ----------------------------------------------------


@dataclass(frozen=True)
class Certificate:
    subject: str
    public_key: bytes
    signature: bytes

    def payload(self) -> bytes:
        return self.subject.encode() + b"\x00" + self.public_key


@dataclass(frozen=True)
class KeyMaterial:
    p1: bytes
    p2: bytes
    cc_private_key: bytes
    cc_public_key: bytes
    ca_public_key: bytes
    cc_certificate: Certificate

    def __post_init__(self):
        if len(self.p1) < 16 or len(self.p2) < 16:
            raise ValueError("p1 and p2 need at least 128 bits")

    @classmethod
    def generate(cls, rng: np.random.Generator, suite: CryptoSuite | None = None, subject: str = "CC") -> "KeyMaterial":
        """Fresh secrets, a CC keypair and a CA-issued certificate binding them."""
        suite = suite or CryptoSuite()
        ca_sk, ca_pk = suite.signer.keypair(rng.bytes(32))
        cc_sk, cc_pk = suite.signer.keypair(rng.bytes(32))
        unsigned = Certificate(subject, cc_pk, b"")
        cert = Certificate(subject, cc_pk, suite.signer.sign(ca_sk, unsigned.payload()))
        return cls(rng.bytes(16), rng.bytes(32), cc_sk, cc_pk, ca_pk, cert)


def verify_certificate(cert: Certificate, ca_public_key: bytes, suite: CryptoSuite | None = None) -> bytes:
    suite = suite or CryptoSuite()
    if not suite.signer.verify(ca_public_key, cert.payload(), cert.signature):
        raise CertificateError(f"certificate for {cert.subject!r} does not verify under the CA key")
    return cert.public_key


# -- control center / calibration source --------------------------------------


@dataclass(frozen=True)
class ChallengeMessage:
    ciphertext: bytes
    signature: bytes


@dataclass
class ControlCenter:
    keys: KeyMaterial
    suite: CryptoSuite = field(default_factory=CryptoSuite)
    counter: int = 0


@dataclass
class CalibrationSource:
    """CS state. ``cc_public_key`` is set by the first successful handshake."""

    p1: bytes
    p2: bytes
    suite: CryptoSuite = field(default_factory=CryptoSuite)
    cc_public_key: bytes | None = None

    @classmethod
    def from_keys(cls, keys: KeyMaterial, suite: CryptoSuite | None = None) -> "CalibrationSource":
        return cls(keys.p1, keys.p2, suite or CryptoSuite())


def handshake(cs: CalibrationSource, cc_certificate: Certificate, ca_public_key: bytes) -> bytes:
    """Verify the CC certificate once and remember ``PK_CC``.

    Later calls return the stored key without re-verifying.
    """
    if cs.cc_public_key is not None:
        return cs.cc_public_key
    cs.cc_public_key = verify_certificate(cc_certificate, ca_public_key, cs.suite)
    return cs.cc_public_key


def issue_challenge(
    cc: ControlCenter, rng: np.random.Generator, flag_probability: float = 0.5
) -> tuple[bytes, int, ChallengeMessage]:
    """Next challenge ``c`` (8-byte counter || 8 random bytes) and flag ``f``."""
    if not 0.0 < flag_probability <= 1.0:
        raise ValueError("flag_probability must lie in (0, 1]")
    c = cc.counter.to_bytes(8, "big") + rng.bytes(CHALLENGE_BYTES - 8)
    cc.counter += 1
    f = int(rng.random() < flag_probability)
    nonce = rng.bytes(NONCE_BYTES)
    e = nonce + cc.suite.cipher.encrypt(cc.keys.p1, nonce, c + bytes([f]))
    s = cc.suite.signer.sign(cc.keys.cc_private_key, e)
    return c, f, ChallengeMessage(e, s)


@dataclass(frozen=True)
class Emission:
    """What CS puts in its signal: a fixed-size payload, response or filler."""

    payload: bytes
    response: bytes | None

    def envelope(self) -> bytes:
        return FRAME_MAGIC + len(self.payload).to_bytes(2, "big") + self.payload


def verify_and_respond(msg: ChallengeMessage, cs: CalibrationSource, rng: np.random.Generator) -> Emission | None:
    """CS side of one iteration.

    Returns ``None`` (no action) for a bad signature or ciphertext. Otherwise
    the emission carries ``r = PRF(p2, c)`` when ``f = 1`` and random filler
    of the same length when ``f = 0``.
    """
    if cs.cc_public_key is None:
        raise ProtocolError("handshake has not been performed")
    if not cs.suite.signer.verify(cs.cc_public_key, msg.ciphertext, msg.signature):
        log.info("challenge signature rejected")
        return None
    nonce, body = msg.ciphertext[:NONCE_BYTES], msg.ciphertext[NONCE_BYTES:]
    try:
        plain = cs.suite.cipher.decrypt(cs.p1, nonce, body)
    except InvalidTag:
        log.info("challenge ciphertext failed authentication")
        return None
    c, f = plain[:CHALLENGE_BYTES], plain[CHALLENGE_BYTES]
    if f == 1:
        r = cs.suite.prf(cs.p2, c)
        return Emission(r, r)
    return Emission(rng.bytes(RESPONSE_BYTES), None)


# -- frames and acceptance ----------------------------------------------------


class Origin(str, Enum):
    DIRECT = "direct"
    REPLAYED = "replayed"


@dataclass(frozen=True)
class SignalFrame:
    """One copy of an emission as received by the sensors.

    ``arrival_times`` holds each sensor's timestamp (its own clock, seconds).
    """

    iteration: int
    payload: bytes
    arrival_times: np.ndarray
    origin: Origin = Origin.DIRECT


@dataclass(frozen=True)
class Reception:
    sensor: int
    timestamp: float
    payload: bytes
    iteration: int
    origin: Origin


@dataclass
class AcceptResult:
    # accepted[challenge_key][sensor] = timestamp
    accepted: dict[bytes, dict[int, float]]
    decisions: list[tuple[Reception, str]]


def frames_to_receptions(frames) -> list[Reception]:
    out = []
    for fr in frames:
        for s, t in enumerate(np.asarray(fr.arrival_times, dtype=float)):
            if np.isfinite(t):
                out.append(Reception(s, float(t), fr.payload, fr.iteration, Origin(fr.origin)))
    return out


def accept_frames(frames, expected: dict[bytes, bytes]) -> AcceptResult:
    """Accept, per sensor, the first frame carrying each valid response.

    ``expected`` maps a challenge key to its response ``r``. Receptions are
    processed per sensor in timestamp order; repeated responses are
    discarded and unknown payloads ignored.
    """
    by_response = {r: key for key, r in expected.items()}
    receptions = frames_to_receptions(frames)
    receptions.sort(key=lambda x: (x.sensor, x.timestamp))
    accepted: dict[bytes, dict[int, float]] = {}
    decisions = []
    for rec in receptions:
        key = by_response.get(rec.payload)
        if key is None:
            decisions.append((rec, "no_valid_response"))
            continue
        slot = accepted.setdefault(key, {})
        if rec.sensor in slot:
            decisions.append((rec, "duplicate_response"))
            continue
        slot[rec.sensor] = rec.timestamp
        decisions.append((rec, "accepted"))
    return AcceptResult(accepted, decisions)


# -- adversary and session ----------------------------------------------------


class AdversaryKind(str, Enum):
    NONE = "none"
    WEAK_REPLAY = "weak_replay"
    STRONG_JAM_REPLAY = "strong_jam_replay"


@dataclass(frozen=True)
class AdversaryModel:
    kind: AdversaryKind = AdversaryKind.NONE
    relay_latency: float = 1e-6
    jam_proportion: float = 0.0
    injected_delays: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", AdversaryKind(self.kind))
        object.__setattr__(self, "injected_delays", tuple(float(d) for d in self.injected_delays))
        if self.relay_latency <= 0:
            raise ValueError("relay latency must be positive")
        if not 0.0 <= self.jam_proportion <= 1.0:
            raise ValueError("jam proportion must lie in [0, 1]")
        if any(d < 0 for d in self.injected_delays):
            raise ValueError("injected delays cannot be negative")
        if self.kind is AdversaryKind.WEAK_REPLAY and self.jam_proportion > 0:
            raise ValueError("the weak adversary cannot jam")

    def delays(self, n_sensors: int) -> np.ndarray:
        if not self.injected_delays:
            return np.zeros(n_sensors)
        if len(self.injected_delays) != n_sensors:
            raise ValueError("one injected delay per sensor required")
        return np.array(self.injected_delays)


@dataclass(frozen=True)
class SessionConfig:
    challenge_period: float = 1e-3
    cc_to_cs_latency: float = 5e-5
    flag_probability: float = 0.5
    max_forwarding_latency: float = 0.0


@dataclass
class SessionResult:
    tdoas: TdoaSet
    events: list[dict]
    shifted: np.ndarray  # per accepted sample: True if built from a replayed frame
    issued: int

    def write_event_log(self, path) -> Path:
        path = Path(path)
        try:
            with path.open("w") as fh:
                for ev in self.events:
                    fh.write(json.dumps(ev, sort_keys=True) + "\n")
        except OSError as exc:
            raise OSError(f"cannot write event log {path}: {exc}") from exc
        return path


def run_calibration_session(
    network: SensorNetwork,
    cs_position,
    keys: KeyMaterial,
    adversary: AdversaryModel,
    iterations: int,
    flag_probability: float = 0.5,
    rng: np.random.Generator | None = None,
    params: SignalParams | None = None,
    clock_offsets: AttackVector | None = None,
    config: SessionConfig | None = None,
    suite: CryptoSuite | None = None,
) -> SessionResult:
    """Simulate the calibration loop until ``iterations`` flagged challenges.

    The rng is split into independent streams for the protocol, measurement
    noise, forwarding latency and adversary, so adversary behaviour never
    perturbs the honest parts of the simulation.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    config = config or SessionConfig(flag_probability=flag_probability)
    params = params or SignalParams()
    suite = suite or CryptoSuite()
    proto_rng, noise_rng, fwd_rng, adv_rng = rng.spawn(4)

    k = network.n_sensors
    cs_pos = as_point(cs_position, network.dim)
    prop = network.delays(cs_pos)
    clock = np.zeros(k) if clock_offsets is None else np.asarray(clock_offsets.offsets, dtype=float)
    injected = adversary.delays(k)
    pairs = network.pairs
    idx = np.array(pairs)
    sigma = pair_sigmas(network, params, pairs)

    cc = ControlCenter(keys, suite)
    cs = CalibrationSource.from_keys(keys, suite)
    handshake(cs, keys.cc_certificate, keys.ca_public_key)

    events: list[dict] = []
    queue: list = []
    seq = 0

    def push(t, kind, data):
        nonlocal seq
        heapq.heappush(queue, (t, seq, kind, data))
        seq += 1

    expected: dict[bytes, bytes] = {}
    flagged_order: list[bytes] = []
    frames: list[SignalFrame] = []
    noise: dict[bytes, np.ndarray] = {}
    t = 0.0
    it = 0
    while len(flagged_order) < iterations:
        c, f, msg = issue_challenge(cc, proto_rng, config.flag_probability)
        events.append({"t": t, "event": "challenge_issued", "iteration": it, "flag": f})
        if f == 1:
            expected[c] = suite.prf(keys.p2, c)
            flagged_order.append(c)
            noise[c] = noise_rng.standard_normal(len(pairs)) * sigma
        push(t + config.cc_to_cs_latency, "deliver", (it, msg))
        t += config.challenge_period
        it += 1

    while queue:
        t_ev, _, kind, data = heapq.heappop(queue)
        if kind == "deliver":
            iteration, msg = data
            emission = verify_and_respond(msg, cs, proto_rng)
            if emission is None:
                events.append({"t": t_ev, "event": "challenge_rejected", "iteration": iteration})
                continue
            events.append({"t": t_ev, "event": "frame_emitted", "iteration": iteration})
            direct = t_ev + prop + clock
            jammed = False
            if adversary.kind is AdversaryKind.STRONG_JAM_REPLAY:
                jammed = bool(adv_rng.random() < adversary.jam_proportion)
            if not jammed:
                frames.append(SignalFrame(iteration, emission.payload, direct, Origin.DIRECT))
                push(float(direct.min()), "received", (iteration, Origin.DIRECT, direct))
            else:
                events.append({"t": t_ev, "event": "frame_jammed", "iteration": iteration})
            if adversary.kind is not AdversaryKind.NONE:
                replay = direct + adversary.relay_latency + injected
                frames.append(SignalFrame(iteration, emission.payload, replay, Origin.REPLAYED))
                push(float(replay.min()), "received", (iteration, Origin.REPLAYED, replay))
        else:
            iteration, origin, times = data
            fwd = fwd_rng.random(k) * config.max_forwarding_latency
            for s in range(k):
                events.append({
                    "t": float(times[s] + fwd[s]),
                    "event": "frame_received",
                    "iteration": iteration,
                    "sensor": s,
                    "timestamp": float(times[s]),
                    "origin": origin.value,
                })

    result = accept_frames(frames, expected)
    for rec, reason in result.decisions:
        events.append({
            "event": "frame_accepted" if reason == "accepted" else "frame_discarded",
            "reason": reason,
            "iteration": rec.iteration,
            "sensor": rec.sensor,
            "timestamp": rec.timestamp,
            "origin": rec.origin.value,
        })

    origin_of = {}
    for rec, reason in result.decisions:
        if reason == "accepted":
            origin_of.setdefault(rec.payload, set()).add(rec.origin)
    cols, shifted = [], []
    for c in flagged_order:
        stamps = result.accepted.get(c, {})
        if len(stamps) < k:
            continue
        ts = np.array([stamps[s] for s in range(k)])
        cols.append(ts[idx[:, 0]] - ts[idx[:, 1]] + noise[c])
        shifted.append(Origin.REPLAYED in origin_of.get(expected[c], set()))
    values = np.array(cols).T if cols else np.empty((len(pairs), 0))
    if values.shape[1] == 0:
        raise ProtocolError("no challenge produced a complete set of accepted frames")
    tdoas = TdoaSet(pairs, values, sigma, meta={"adversary": adversary.kind.value})
    return SessionResult(tdoas, events, np.array(shifted, dtype=bool), it)
