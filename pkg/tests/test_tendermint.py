import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from babylon_sim.core_types import (
    GENESIS_POS,
    ConsensusMessage,
    Hash,
    Keyring,
    ProtocolParams,
    VoteKind,
    make_block,
    payload,
)
from babylon_sim.tendermint import (
    NIL,
    Behavior,
    FinalizationCertificate,
    MessageLog,
    Step,
    TendermintValidator,
    certificate_from_log,
    evidence_accuses,
    extract_fraud_proof,
    proposer_for,
)

PV, PC, PROP = VoteKind.PREVOTE, VoteKind.PRECOMMIT, VoteKind.PROPOSAL


def vote(kr, kind, h, r, value, signer, vr=-1):
    return ConsensusMessage(kind, h, r, value, vr, signer).signed(kr)


def cert_of(kr, h, r, value, signers):
    return FinalizationCertificate(value, h, r, tuple(vote(kr, PC, h, r, value, s) for s in sorted(signers)))


# ---- helpers ---------------------------------------------------------------------


def test_proposer_rotation():
    vals = [0, 1, 2, 3]
    assert [proposer_for(1, r, vals) for r in range(4)] == [1, 2, 3, 0]
    assert proposer_for(4, 0, [3, 1, 0, 2]) == 0


def test_message_log_counts_equivocators_for_both_values():
    kr = Keyring(0, range(4))
    a, b = Hash(b"a" * 16), Hash(b"b" * 16)
    log = MessageLog()
    assert log.add(vote(kr, PV, 1, 0, a, 0))
    assert not log.add(vote(kr, PV, 1, 0, a, 0))
    log.add(vote(kr, PV, 1, 0, b, 0))
    assert log.signers(1, 0, PV, a) == {0} and log.signers(1, 0, PV, b) == {0}
    assert len(log.equivocations) == 1
    with pytest.raises(ValueError):
        log.add(vote(kr, PROP, 1, 0, a, 1))


def test_quorum_values_include_nil():
    kr = Keyring(0, range(4))
    log = MessageLog()
    for s in range(3):
        log.add(vote(kr, PV, 2, 1, None, s))
    assert log.quorum_values(2, 1, PV, 3) == [NIL]


def test_certificate_from_log_and_validity():
    kr = Keyring(1, range(4))
    blk = make_block(GENESIS_POS, (payload("x"),))
    log = MessageLog()
    for s in (0, 1):
        log.add(vote(kr, PC, 1, 0, blk.id, s))
    assert certificate_from_log(log, blk.id, 1, 3) is None
    log.add(vote(kr, PC, 1, 0, blk.id, 3))
    cert = certificate_from_log(log, blk.id, 1, 3)
    assert cert.signers == {0, 1, 3} and cert.round == 0
    assert cert.is_valid(3, kr)
    assert not cert.is_valid(4)
    assert not cert.is_valid(3, Keyring(2, range(4)))


# ---- state machine over an instant in-memory network ------------------------------


class Net:
    """Every vote reaches every validator immediately; blocks are built on genesis."""

    def __init__(self, n=4, behaviors=None, acceptable=None):
        self.params = ProtocolParams(n=n)
        self.kr = Keyring(0, range(n))
        self.log = MessageLog()
        self.blocks = {}
        self.proposals = {}
        self.accept = acceptable or (lambda b: True)
        behaviors = behaviors or {}
        self.vals = [TendermintValidator(v, self.params, self.kr, range(n), behaviors.get(v, Behavior()))
                     for v in range(n)]

    # ValidatorContext
    def get_block(self, bid):
        return self.blocks.get(bid)

    def proposal_for(self, h, r):
        return self.proposals.get((h, r))

    def acceptable(self, block):
        return self.accept(block)

    def build_block(self, h, r):
        return make_block(GENESIS_POS, (payload(f"h{h}r{r}"),), r % self.params.n, r)

    def broadcast_vote(self, msg, block=None):
        if msg.kind == PROP:
            self.blocks[block.id] = block
            self.proposals[(msg.height, msg.round)] = (msg, block)
        else:
            self.log.add(msg)

    def run(self, ticks):
        for t in range(ticks):
            for v in self.vals:
                v.step(t, self)
            done = [b for b in self.blocks if certificate_from_log(self.log, b, 1, self.params.quorum)]
            if done:
                return t, done
        return None, []


def test_all_honest_finalize_first_proposal():
    net = Net()
    t, done = net.run(50)
    assert done and t <= 3
    cert = certificate_from_log(net.log, done[0], 1, 3)
    assert cert.round == 0


def test_silent_proposer_costs_a_round():
    # leader of (1, 0) is validator 1
    net = Net(behaviors={1: Behavior(silent_offchain=True)})
    t, done = net.run(100)
    assert done
    assert certificate_from_log(net.log, done[0], 1, 3).round == 1
    assert t >= net.params.timeout(0)


def test_f_plus_one_silent_blocks_progress():
    net = Net(behaviors={1: Behavior(silent_offchain=True), 2: Behavior(silent_offchain=True)})
    t, done = net.run(200)
    assert not done


def test_unacceptable_block_gets_nil_and_no_lock():
    net = Net(acceptable=lambda b: False)
    net.run(30)
    assert all(v.state.locked_value is None for v in net.vals)
    assert net.log.quorum_values(1, 0, PV, 3) == [NIL]


def test_prevote_rule_examples():
    v = TendermintValidator(0, ProtocolParams(), Keyring(0, range(4)), range(4))
    a = make_block(GENESIS_POS, (payload("a"),))
    b = make_block(GENESIS_POS, (payload("b"),))
    assert v.prevote_allowed(b, -1)
    v.state.locked_value, v.state.locked_round = a, 2
    assert v.prevote_allowed(a, -1)
    assert not v.prevote_allowed(b, 1)
    assert not v.prevote_allowed(b, 2)
    assert v.prevote_allowed(b, 3)


def test_step_sequence_and_lock_on_polka():
    net = Net()
    net.run(10)
    for v in net.vals:
        assert v.state.locked_round == 0
        assert v.state.valid_value is v.state.locked_value


# ---- accountability: engineered conflicts ----------------------------------------------


VALUES = [Hash(bytes([i]) * 16) for i in range(3)]


def _order(value):
    return b"" if value is None else value.value


def engineered_run(rng, n, n_byz, rounds):
    """Abstract rounds of one height; returns (messages, byzantine set, certs by value)."""
    p = ProtocolParams(n=n)
    q = p.quorum
    kr = Keyring(rng.random(), range(n))
    byz = set(rng.sample(range(n), n_byz))
    honest = [v for v in range(n) if v not in byz]
    lock = {v: (None, -1) for v in honest}
    msgs = []
    polka = {}  # round -> set of values with a full prevote quorum
    certs = {}
    for r in range(rounds):
        # a byzantine leader may hand different honest validators different proposals
        n_props = 2 if r % n in byz else 1
        props = []
        for val in rng.sample(VALUES, n_props):
            vr_opts = [-1] + [x for x in range(r) if val in polka.get(x, ())]
            props.append((val, rng.choice(vr_opts)))
        # the coalition backs every proposal plus a random extra value
        backed = {val for val, _ in props} | {rng.choice(VALUES + [None])}
        backed = sorted(backed, key=_order)
        pre = {}
        for v in sorted(byz):
            for x in backed:
                if rng.random() < 0.9:
                    pre.setdefault(x, set()).add(v)
        for v in honest:
            val, vr = rng.choice(props)
            lv, lr = lock[v]
            ok = lv is None or lv == val or vr > lr
            pre.setdefault(val if ok else None, set()).add(v)
        for x, ss in pre.items():
            msgs += [vote(kr, PV, 1, r, x, s) for s in ss]
        polka[r] = {x for x, ss in pre.items() if x is not None and len(ss) >= q}
        pc = {}
        for v in sorted(byz):
            for x in [x for x in backed if x is not None]:
                if rng.random() < 0.9:
                    pc.setdefault(x, set()).add(v)
        for v in honest:
            # an honest validator sees all honest votes and a random part of the byzantine ones
            seen_byz = {b for b in sorted(byz) if rng.random() < 0.7}
            cands = [x for x, ss in sorted(pre.items(), key=lambda kv: _order(kv[0]))
                     if x is not None and len({s for s in ss if s not in byz or s in seen_byz}) >= q]
            if cands:
                x = cands[0]
                pc.setdefault(x, set()).add(v)
                lock[v] = (x, r)
        for x, ss in pc.items():
            msgs += [vote(kr, PC, 1, r, x, s) for s in ss]
            if len(ss) >= q and x not in certs:
                certs[x] = cert_of(kr, 1, r, x, ss)
    return kr, msgs, byz, certs, q, p.f


def _check_conflicts(seed):
    rng = random.Random(seed)
    n = rng.choice([4, 7])
    f = (n - 1) // 3
    kr, msgs, byz, certs, q, f = engineered_run(rng, n, rng.randint(f + 1, 2 * f), rng.randint(1, 4))
    found = 0
    vals = sorted(certs, key=lambda x: x.value)
    for i in range(len(vals)):
        for j in range(i + 1, len(vals)):
            ev = extract_fraud_proof(certs[vals[i]], certs[vals[j]], msgs, q)
            assert ev is not None
            assert len(ev.accused) >= f + 1
            assert set(ev.accused) <= byz
            assert set(ev.accused) <= evidence_accuses(ev.evidence, kr, q)
            found += 1
    return found


def test_engineered_conflicts_accuse_only_byzantine():
    total = sum(_check_conflicts(seed) for seed in range(3000))
    assert total >= 200


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 32))
def test_engineered_conflicts_property(seed):
    _check_conflicts(seed)


def test_same_round_conflict_accuses_double_precommitters():
    kr = Keyring(3, range(4))
    a, b = VALUES[0], VALUES[1]
    ev = extract_fraud_proof(cert_of(kr, 5, 2, a, {0, 1, 2}), cert_of(kr, 5, 2, b, {1, 2, 3}))
    assert ev.accused == (1, 2)
    assert evidence_accuses(ev.evidence, kr, 3) == {1, 2}


def test_cross_round_needs_intermediate_polka():
    kr = Keyring(3, range(4))
    a, b = VALUES[0], VALUES[1]
    ca, cb = cert_of(kr, 5, 0, a, {0, 1, 2}), cert_of(kr, 5, 3, b, {1, 2, 3})
    assert extract_fraud_proof(ca, cb, [], 3) is None
    polka = [vote(kr, PV, 5, 2, b, s) for s in (1, 2, 3)]
    ev = extract_fraud_proof(ca, cb, polka, 3)
    assert ev.accused == (1, 2)


def test_different_heights_are_not_conflicts():
    kr = Keyring(3, range(4))
    assert extract_fraud_proof(cert_of(kr, 5, 0, VALUES[0], {0, 1, 2}),
                               cert_of(kr, 6, 0, VALUES[1], {0, 1, 2})) is None


def test_verifier_excuses_legitimate_unlock():
    kr = Keyring(4, range(4))
    a, b = VALUES[0], VALUES[1]
    ev = [vote(kr, PC, 1, 0, a, 0), vote(kr, PV, 1, 2, b, 0)]
    assert evidence_accuses(ev, kr, 3) == {0}
    log = MessageLog()
    for s in (1, 2, 3):
        log.add(vote(kr, PV, 1, 1, b, s))
    assert evidence_accuses(ev, kr, 3, log) == set()


def test_verifier_ignores_forged_signatures():
    kr = Keyring(4, range(4))
    other = Keyring(5, range(4))
    ev = [vote(other, PC, 1, 0, VALUES[0], 0), vote(other, PC, 1, 0, VALUES[1], 0)]
    assert evidence_accuses(ev, kr, 3) == set()


def test_steps_enum_values():
    assert [s.value for s in Step] == ["new_round", "propose", "prevote", "precommit"]
