import hashlib
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from babylon_sim.core_types import (
    GENESIS_POS,
    CheckpointData,
    CheckpointError,
    ConsensusMessage,
    EncodingError,
    Hash,
    Keyring,
    PayloadKind,
    PoSTransaction,
    ProtocolParams,
    TxKind,
    ValidatorRecord,
    ValidatorStatus,
    VoteKind,
    checkpoint_data_for,
    compute_checkpoint_commitment,
    compute_message_commitment,
    compute_txroot,
    decode,
    encode,
    make_babylon_tx,
    make_block,
    payload,
)


# Reference encoder written from the byte-layout table, kept free of the
# package's own helpers so the two can disagree.
def ref_encode(obj):
    def u32(n):
        return struct.pack(">I", n)

    def s(x):
        raw = x.encode("utf-8")
        return b"S" + u32(len(raw)) + raw

    if obj is None:
        return b"N"
    if obj is True:
        return b"T"
    if obj is False:
        return b"F"
    if isinstance(obj, (TxKind, VoteKind, PayloadKind)):
        return b"E" + s(type(obj).__name__) + s(obj.value)
    if isinstance(obj, int):
        n = max(1, (obj.bit_length() + 8) // 8)
        return b"I" + u32(n) + obj.to_bytes(n, "big", signed=True)
    if isinstance(obj, str):
        return s(obj)
    if isinstance(obj, bytes):
        return b"B" + u32(len(obj)) + obj
    if isinstance(obj, (tuple, list)):
        return b"L" + u32(len(obj)) + b"".join(ref_encode(x) for x in obj)
    names = list(obj.__dataclass_fields__)
    return (b"D" + s(type(obj).__name__) + u32(len(names))
            + b"".join(ref_encode(getattr(obj, k)) for k in names))


def ref_hash(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=16).digest()


def chain(n, tag="x"):
    blocks, parent = [], GENESIS_POS
    for i in range(n):
        parent = make_block(parent, (payload(f"{tag}{i}"),), proposer=i % 4)
        blocks.append(parent)
    return blocks


scalars = st.one_of(
    st.none(), st.booleans(), st.integers(min_value=-(2 ** 70), max_value=2 ** 70),
    st.text(max_size=12), st.binary(max_size=12),
)
values = st.recursive(scalars, lambda inner: st.lists(inner, max_size=4).map(tuple), max_leaves=12)


def test_encoding_tags_are_stable():
    assert encode(None) == b"N"
    assert encode(0) == b"I\x00\x00\x00\x01\x00"
    assert encode(-1) == b"I\x00\x00\x00\x01\xff"
    assert encode(128) == b"I\x00\x00\x00\x02\x00\x80"
    assert encode("ab") == b"S\x00\x00\x00\x02ab"
    assert encode((1, None)) == b"L\x00\x00\x00\x02I\x00\x00\x00\x01\x01N"


@settings(max_examples=300, deadline=None)
@given(values)
def test_encode_matches_reference_and_round_trips(v):
    assert encode(v) == ref_encode(v)
    assert decode(encode(v)) == v


def test_dataclass_encoding_matches_reference():
    blk = chain(2)[-1]
    assert encode(blk.header) == ref_encode(blk.header)
    assert encode(blk) == ref_encode(blk)
    assert decode(encode(blk)) == blk


def test_decode_rejects_garbage():
    for bad in (b"", b"Q", b"I\x00\x00\x00\x05\x01", encode(1) + b"N"):
        with pytest.raises(EncodingError):
            decode(bad)


def test_checkpoint_commitment_matches_reference():
    blocks = chain(3)
    data = checkpoint_data_for(blocks)
    expected = ref_hash(b"".join(ref_encode(b.header) for b in blocks)
                        + b"".join(ref_encode(b.header.txroot) for b in blocks))
    assert compute_checkpoint_commitment(data).value == expected


def test_checkpoint_commitment_ignores_bodies_and_justification():
    blocks = chain(2)
    a = checkpoint_data_for(blocks)
    b = CheckpointData(a.headers, ((), ()), a.txroots, blocks[-1].header, ())
    assert compute_checkpoint_commitment(a) == compute_checkpoint_commitment(b)


def test_checkpoint_commitment_depends_on_header_order_and_content():
    blocks = chain(3)
    other = chain(3, tag="y")
    assert compute_checkpoint_commitment(checkpoint_data_for(blocks)) != \
        compute_checkpoint_commitment(checkpoint_data_for(other))
    assert compute_checkpoint_commitment(checkpoint_data_for(blocks[:2])) != \
        compute_checkpoint_commitment(checkpoint_data_for(blocks))


def test_checkpoint_shape_errors():
    blocks = chain(3)
    with pytest.raises(CheckpointError):
        compute_checkpoint_commitment(CheckpointData((), (), ()))
    with pytest.raises(CheckpointError):
        compute_checkpoint_commitment(checkpoint_data_for([blocks[0], blocks[2]]))
    d = checkpoint_data_for(blocks)
    with pytest.raises(CheckpointError):
        compute_checkpoint_commitment(CheckpointData(d.headers, d.bodies, d.txroots[:2]))


def test_message_commitment_is_plain_hash():
    assert compute_message_commitment(b"abc").value == ref_hash(b"abc")


def test_babylon_tx_commitments():
    blocks = chain(2)
    data = checkpoint_data_for(blocks)
    tx = make_babylon_tx(PayloadKind.CHECKPOINT, data, submitter=2)
    assert tx.commitment.h == compute_checkpoint_commitment(data)
    assert tx.commitment.submitter == 2
    msg = make_babylon_tx(PayloadKind.CENSORSHIP_COMPLAINT, (b"x",))
    assert msg.commitment.h.value == ref_hash(ref_encode((b"x",)))


def test_txroot_and_well_formedness():
    blk = chain(1)[0]
    assert blk.is_well_formed()
    assert blk.header.txroot == compute_txroot(blk.body)
    forged = type(blk)(blk.header, (payload("other"),))
    assert not forged.is_well_formed()


def test_signatures_bind_signer_and_content():
    kr = Keyring(7, range(4))
    msg = ConsensusMessage(VoteKind.PREVOTE, 1, 0, Hash(b"\x01" * 16), -1, 2).signed(kr)
    assert msg.verify(kr)
    assert not msg.verify(Keyring(8, range(4)))
    tampered = ConsensusMessage(VoteKind.PREVOTE, 1, 1, msg.value, -1, 2, msg.signature)
    assert not tampered.verify(kr)
    spoofed = ConsensusMessage(VoteKind.PREVOTE, 1, 0, msg.value, -1, 3, msg.signature)
    assert not spoofed.verify(kr)


def test_validator_status_transitions():
    r = ValidatorRecord(0)
    r.move_to(ValidatorStatus.PASSIVE)
    r.move_to(ValidatorStatus.WITHDRAWN)
    with pytest.raises(ValueError):
        r.move_to(ValidatorStatus.ACTIVE)
    r.move_to(ValidatorStatus.SLASHED)
    assert r.spendable == 0


@pytest.mark.parametrize("n,f,q", [(4, 1, 3), (7, 2, 5), (10, 3, 7)])
def test_params_thresholds(n, f, q):
    p = ProtocolParams(n=n)
    assert (p.f, p.quorum) == (f, q)


def test_params_timeout_grows_with_round():
    p = ProtocolParams(delta=3)
    assert [p.timeout(r) for r in range(3)] == [6, 9, 12]


@pytest.mark.parametrize("kw", [dict(n=5), dict(k_c=3), dict(k_w=2), dict(delta=0),
                                dict(lam=0.0), dict(beta=1.0)])
def test_params_validation(kw):
    with pytest.raises(ValueError):
        ProtocolParams(**kw)


def test_transaction_ids_are_content_hashes():
    a = PoSTransaction(TxKind.PAYLOAD, 1, b"x")
    assert a.id == PoSTransaction(TxKind.PAYLOAD, 1, b"x").id
    assert a.id != PoSTransaction(TxKind.WITHDRAWAL_REQUEST, 1, b"x").id
