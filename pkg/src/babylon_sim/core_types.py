"""Shared domain types, canonical encoding, simulated hashing and signing.

Byte layout of the canonical encoding (every value starts with a one-byte tag):

    N                         None
    T / F                     True / False
    I <u32 len> <bytes>       int, big-endian two's complement, minimal length
    S <u32 len> <utf-8>       str
    B <u32 len> <bytes>       bytes
    L <u32 count> <items...>  tuple or list (decoded as tuple)
    E <str cls> <value>       Enum member (class name, then encoded value)
    D <str cls> <u32 count> <fields...>
                              registered dataclass, fields in declaration order

Every encoding is self-delimiting, so concatenations of encodings (as in the
checkpoint commitment) are unambiguous.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Optional

DIGEST_SIZE = 16
# round number recorded for a Tendermint round carried out on the Babylon chain
BABYLON_ROUND = -2
EXTERNAL = -1


class EncodingError(ValueError):
    pass


class CheckpointError(ValueError):
    """Malformed checkpoint data (length mismatch, broken parent links)."""


_REGISTRY: dict[str, type] = {}
_ENUMS: dict[str, type] = {}


def encodable(cls):
    """Class decorator registering a dataclass or Enum with the codec."""
    if isinstance(cls, type) and issubclass(cls, enum.Enum):
        _ENUMS[cls.__name__] = cls
    else:
        _REGISTRY[cls.__name__] = cls
    return cls


def _u32(n: int) -> bytes:
    return struct.pack(">I", n)


def _enc_str(s: str) -> bytes:
    raw = s.encode()
    return b"S" + _u32(len(raw)) + raw


def _encode_into(obj: Any, out: list[bytes]) -> None:
    if obj is None:
        out.append(b"N")
    elif obj is True:
        out.append(b"T")
    elif obj is False:
        out.append(b"F")
    elif isinstance(obj, enum.Enum):
        out.append(b"E")
        out.append(_enc_str(type(obj).__name__))
        _encode_into(obj.value, out)
    elif isinstance(obj, int):
        raw = obj.to_bytes((obj.bit_length() + 8) // 8 or 1, "big", signed=True)
        out.append(b"I" + _u32(len(raw)) + raw)
    elif isinstance(obj, str):
        out.append(_enc_str(obj))
    elif isinstance(obj, (bytes, bytearray)):
        out.append(b"B" + _u32(len(obj)) + bytes(obj))
    elif isinstance(obj, (tuple, list)):
        out.append(b"L" + _u32(len(obj)))
        for item in obj:
            _encode_into(item, out)
    elif dataclasses.is_dataclass(obj):
        name = type(obj).__name__
        if name not in _REGISTRY:
            raise EncodingError(f"unregistered dataclass {name}")
        fields = dataclasses.fields(obj)
        out.append(b"D")
        out.append(_enc_str(name))
        out.append(_u32(len(fields)))
        for f in fields:
            _encode_into(getattr(obj, f.name), out)
    else:
        raise EncodingError(f"cannot encode {type(obj).__name__}")


def encode(obj: Any) -> bytes:
    out: list[bytes] = []
    _encode_into(obj, out)
    return b"".join(out)


def _decode_at(buf: bytes, i: int) -> tuple[Any, int]:
    try:
        tag = buf[i : i + 1]
        i += 1
        if tag == b"N":
            return None, i
        if tag == b"T":
            return True, i
        if tag == b"F":
            return False, i
        if tag in (b"I", b"S", b"B"):
            (n,) = struct.unpack_from(">I", buf, i)
            i += 4
            raw = buf[i : i + n]
            if len(raw) != n:
                raise EncodingError("truncated input")
            i += n
            if tag == b"I":
                return int.from_bytes(raw, "big", signed=True), i
            if tag == b"S":
                return raw.decode(), i
            return bytes(raw), i
        if tag == b"L":
            (n,) = struct.unpack_from(">I", buf, i)
            i += 4
            items = []
            for _ in range(n):
                item, i = _decode_at(buf, i)
                items.append(item)
            return tuple(items), i
        if tag == b"E":
            name, i = _decode_at(buf, i)
            value, i = _decode_at(buf, i)
            return _ENUMS[name](value), i
        if tag == b"D":
            name, i = _decode_at(buf, i)
            (n,) = struct.unpack_from(">I", buf, i)
            i += 4
            values = []
            for _ in range(n):
                v, i = _decode_at(buf, i)
                values.append(v)
            return _REGISTRY[name](*values), i
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise EncodingError(str(exc)) from exc
    raise EncodingError(f"bad tag {tag!r} at offset {i - 1}")


def decode(buf: bytes) -> Any:
    obj, end = _decode_at(buf, 0)
    if end != len(buf):
        raise EncodingError("trailing bytes")
    return obj


# --------------------------------------------------------------------------
# hashing and signatures


@encodable
@dataclass(frozen=True, order=True)
class Hash:
    value: bytes

    def __hash__(self) -> int:
        return hash(self.value)

    def __repr__(self) -> str:
        return f"Hash({self.value.hex()[:10]})"

    @property
    def short(self) -> str:
        return self.value.hex()[:12]


ZERO_HASH = Hash(bytes(DIGEST_SIZE))


def hash_bytes(data: bytes) -> Hash:
    return Hash(hashlib.blake2b(data, digest_size=DIGEST_SIZE).digest())


def hash_obj(obj: Any) -> Hash:
    return hash_bytes(encode(obj))


@encodable
@dataclass(frozen=True)
class Signature:
    signer: int
    tag: bytes


class Keyring:
    """Per-run signing keys for validator ids.

    Signatures are MAC-style records: only code holding the keyring can
    produce a tag that verifies, which is all the simulation needs.
    """

    def __init__(self, seed: int | str, ids):
        self._keys = {
            v: hashlib.blake2b(f"key:{seed}:{v}".encode(), digest_size=32).digest()
            for v in ids
        }

    @property
    def ids(self) -> list[int]:
        return sorted(self._keys)

    def sign(self, msg: bytes, signer: int) -> Signature:
        key = self._keys[signer]
        return Signature(signer, hashlib.blake2b(msg, key=key, digest_size=DIGEST_SIZE).digest())

    def verify(self, msg: bytes, sig: Signature) -> Optional[int]:
        key = self._keys.get(sig.signer)
        if key is None:
            return None
        expected = hashlib.blake2b(msg, key=key, digest_size=DIGEST_SIZE).digest()
        return sig.signer if expected == sig.tag else None


# --------------------------------------------------------------------------
# enums


@encodable
class TxKind(str, enum.Enum):
    PAYLOAD = "payload"
    WITHDRAWAL_REQUEST = "withdrawal_request"
    WITHDRAWAL_TX = "withdrawal_transaction"
    REWARD = "reward_transaction"


@encodable
class VoteKind(str, enum.Enum):
    PROPOSAL = "proposal"
    PREVOTE = "prevote"
    PRECOMMIT = "precommit"


@encodable
class CommitmentKind(str, enum.Enum):
    CHECKPOINT = "checkpoint"
    MESSAGE = "message"


@encodable
class PayloadKind(str, enum.Enum):
    CHECKPOINT = "checkpoint"
    FRAUD_PROOF = "fraud_proof"
    CENSORSHIP_COMPLAINT = "censorship_complaint"
    STALLING_EVIDENCE = "stalling_evidence"
    CONSENSUS_MESSAGE = "consensus_message"


class ValidatorStatus(str, enum.Enum):
    ACTIVE = "active"
    PASSIVE = "passive"
    WITHDRAWN = "withdrawn"
    SLASHED = "slashed"


_STATUS_NEXT = {
    ValidatorStatus.ACTIVE: {ValidatorStatus.PASSIVE, ValidatorStatus.SLASHED},
    ValidatorStatus.PASSIVE: {ValidatorStatus.WITHDRAWN, ValidatorStatus.SLASHED},
    ValidatorStatus.WITHDRAWN: {ValidatorStatus.SLASHED},
    ValidatorStatus.SLASHED: set(),
}


@dataclass
class ValidatorRecord:
    id: int
    stake: int = 100
    status: ValidatorStatus = ValidatorStatus.ACTIVE

    def move_to(self, status: ValidatorStatus) -> None:
        if status == self.status:
            return
        if status not in _STATUS_NEXT[self.status]:
            raise ValueError(f"illegal transition {self.status.value} -> {status.value}")
        self.status = status

    @property
    def spendable(self) -> int:
        return 0 if self.status == ValidatorStatus.SLASHED else self.stake


# --------------------------------------------------------------------------
# PoS chain types


@encodable
@dataclass(frozen=True)
class PoSTransaction:
    kind: TxKind
    sender: int
    body: bytes

    @cached_property
    def id(self) -> Hash:
        return hash_obj(self)


def payload(body: str | bytes, sender: int = EXTERNAL) -> PoSTransaction:
    if isinstance(body, str):
        body = body.encode()
    return PoSTransaction(TxKind.PAYLOAD, sender, body)


def compute_txroot(body) -> Hash:
    return hash_obj(tuple(tx.id for tx in body))


@encodable
@dataclass(frozen=True)
class PoSBlockHeader:
    parent: Hash
    height: int
    txroot: Hash
    proposer: int
    round: int

    @cached_property
    def id(self) -> Hash:
        return hash_obj(self)


@encodable
@dataclass(frozen=True)
class ConsensusMessage:
    kind: VoteKind
    height: int
    round: int
    value: Optional[Hash]
    vr: int
    signer: int
    signature: Optional[Signature] = None

    def signing_bytes(self) -> bytes:
        return self._signing_bytes

    @cached_property
    def _signing_bytes(self) -> bytes:
        return encode((self.kind, self.height, self.round, self.value, self.vr, self.signer))

    def signed(self, keyring: Keyring) -> "ConsensusMessage":
        return dataclasses.replace(self, signature=keyring.sign(self.signing_bytes(), self.signer))

    def verify(self, keyring: Keyring) -> bool:
        cached = self.__dict__.get("_verified")
        if cached is not None and cached[0] is keyring:
            return cached[1]
        ok = (
            self.signature is not None
            and keyring.verify(self.signing_bytes(), self.signature) == self.signer
        )
        self.__dict__["_verified"] = (keyring, ok)
        return ok

    @cached_property
    def id(self) -> Hash:
        return hash_obj(self)


@encodable
@dataclass(frozen=True)
class PoSBlock:
    header: PoSBlockHeader
    body: tuple = ()
    # precommits finalizing the parent block
    justification: tuple = ()

    @property
    def id(self) -> Hash:
        return self.header.id

    @property
    def height(self) -> int:
        return self.header.height

    @property
    def parent(self) -> Hash:
        return self.header.parent

    def is_well_formed(self) -> bool:
        return self.header.txroot == compute_txroot(self.body)


def make_block(parent: "PoSBlock", body=(), proposer: int = EXTERNAL, round: int = 0,
               justification=()) -> PoSBlock:
    body = tuple(body)
    header = PoSBlockHeader(parent.id, parent.height + 1, compute_txroot(body), proposer, round)
    return PoSBlock(header, body, tuple(justification))


GENESIS_POS = PoSBlock(PoSBlockHeader(ZERO_HASH, 0, compute_txroot(()), EXTERNAL, 0))


# --------------------------------------------------------------------------
# commitments


@encodable
@dataclass(frozen=True)
class Commitment:
    h: Hash
    kind: CommitmentKind
    chain_id: str = "pos-0"
    # metadata; miners do not validate it
    submitter: int = EXTERNAL


@encodable
@dataclass(frozen=True)
class CheckpointData:
    headers: tuple
    bodies: tuple
    txroots: tuple
    # optional: header of the child block plus the precommits finalizing the last block
    child_header: Optional[PoSBlockHeader] = None
    justification: tuple = ()

    def check_shape(self) -> None:
        n = len(self.headers)
        if n == 0 or len(self.bodies) != n or len(self.txroots) != n:
            raise CheckpointError("headers, bodies and txroots must have equal non-zero length")
        for prev, cur in zip(self.headers, self.headers[1:]):
            if cur.parent != prev.id or cur.height != prev.height + 1:
                raise CheckpointError("headers are not a parent-linked segment")

    @property
    def block_ids(self) -> tuple:
        return tuple(h.id for h in self.headers)


def checkpoint_data_for(blocks, child_header=None, justification=()) -> CheckpointData:
    blocks = list(blocks)
    return CheckpointData(
        tuple(b.header for b in blocks),
        tuple(tuple(b.body) for b in blocks),
        tuple(b.header.txroot for b in blocks),
        child_header,
        tuple(justification),
    )


def compute_checkpoint_commitment(data: CheckpointData) -> Hash:
    """H(header_1 || ... || header_n || txr_1 || ... || txr_n) over canonical encodings."""
    cached = data.__dict__.get("_commitment")
    if cached is None:
        data.check_shape()
        parts = [encode(h) for h in data.headers] + [encode(r) for r in data.txroots]
        cached = hash_bytes(b"".join(parts))
        data.__dict__["_commitment"] = cached
    return cached


def compute_message_commitment(data: bytes) -> Hash:
    return hash_bytes(data)


@encodable
@dataclass(frozen=True)
class BabylonTx:
    commitment: Commitment
    payload_kind: PayloadKind

    @cached_property
    def id(self) -> Hash:
        return hash_obj(self)


@encodable
@dataclass(frozen=True)
class BabylonBlock:
    parent: Hash
    height: int
    txs: tuple
    miner: int
    tick: int = 0

    @cached_property
    def id(self) -> Hash:
        return hash_obj(self)


GENESIS_BABYLON = BabylonBlock(ZERO_HASH, 0, (), -1, 0)


# --------------------------------------------------------------------------
# evidence carried as commitment data


@encodable
@dataclass(frozen=True)
class FraudProofData:
    checkpoint_a: Hash
    data_a: CheckpointData
    checkpoint_b: Hash
    data_b: CheckpointData
    evidence_commitment: Hash
    evidence: tuple
    accused: tuple


@encodable
@dataclass(frozen=True)
class CensorshipComplaintData:
    txs: tuple


@encodable
@dataclass(frozen=True)
class StallingEvidenceData:
    height: int
    checkpoint: Hash
    data: CheckpointData


@encodable
@dataclass(frozen=True)
class OnBabylonMessageData:
    message: ConsensusMessage
    block: Optional[PoSBlock] = None
    prevotes: tuple = ()


def message_commitment_of(obj: Any) -> Hash:
    return compute_message_commitment(encode(obj))


def make_babylon_tx(kind: PayloadKind, data: Any, submitter: int = EXTERNAL,
                    chain_id: str = "pos-0") -> BabylonTx:
    if kind == PayloadKind.CHECKPOINT:
        c = Commitment(compute_checkpoint_commitment(data), CommitmentKind.CHECKPOINT, chain_id, submitter)
    else:
        c = Commitment(message_commitment_of(data), CommitmentKind.MESSAGE, chain_id, submitter)
    return BabylonTx(c, kind)


# --------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class ProtocolParams:
    n: int = 4
    k_c: int = 4
    k_w: int = 8
    delta: int = 1
    lam: float = 0.05
    beta: float = 0.0
    seed: int = 0
    # ticks an honest proposer waits after a height is finalized before proposing
    block_interval: int = 4
    n_miners: int = 3
    chain_id: str = "pos-0"
    extra: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if self.n < 4 or (self.n - 1) % 3:
            raise ValueError("n must equal 3f+1 with f >= 1")
        if self.k_c < 2 or self.k_c % 2:
            raise ValueError("k_c must be an even integer >= 2")
        if self.k_w < self.k_c:
            raise ValueError("k_w must be >= k_c")
        if self.delta < 1:
            raise ValueError("delta must be >= 1")
        if not 0 < self.lam <= 1:
            raise ValueError("lam must lie in (0, 1]")
        if not 0 <= self.beta < 1:
            raise ValueError("beta must lie in [0, 1)")

    @property
    def f(self) -> int:
        return (self.n - 1) // 3

    @property
    def quorum(self) -> int:
        return 2 * self.f + 1

    def timeout(self, round: int) -> int:
        return 2 * self.delta + self.delta * max(round, 0)
