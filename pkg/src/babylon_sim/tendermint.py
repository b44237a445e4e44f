"""Height/round Tendermint state machine, vote bookkeeping and fraud-proof extraction."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Protocol

from .core_types import (
    ConsensusMessage,
    Hash,
    Keyring,
    PoSBlock,
    ProtocolParams,
    VoteKind,
)


class _Nil:
    def __repr__(self):
        return "NIL"


# quorum result meaning "2f+1 votes for nil"
NIL = _Nil()


class Step(str, enum.Enum):
    NEW_ROUND = "new_round"
    PROPOSE = "propose"
    PREVOTE = "prevote"
    PRECOMMIT = "precommit"


def proposer_for(height: int, round: int, validators) -> int:
    """Round-robin leader over validator ids in ascending order."""
    ids = sorted(validators)
    return ids[(height + max(round, 0)) % len(ids)]


class MessageLog:
    """Every consensus vote seen, indexed by (height, round, kind) then value then signer.

    A signer that votes for two values in the same slot is counted for both
    (that is what makes conflicting certificates possible) and the pair is
    kept as equivocation evidence.
    """

    def __init__(self):
        self.votes: dict[tuple, dict] = {}
        self.equivocations: list[tuple] = []
        self._by_id: dict[Hash, ConsensusMessage] = {}

    def __len__(self):
        return len(self._by_id)

    def __iter__(self):
        return iter(self._by_id.values())

    def add(self, msg: ConsensusMessage) -> bool:
        """Record a vote; returns False for an exact duplicate."""
        if msg.kind == VoteKind.PROPOSAL:
            raise ValueError("proposals are not votes")
        if msg.id in self._by_id:
            return False
        self._by_id[msg.id] = msg
        slot = self.votes.setdefault((msg.height, msg.round, msg.kind), {})
        for value, signers in slot.items():
            if value != msg.value and msg.signer in signers:
                self.equivocations.append((signers[msg.signer], msg))
        slot.setdefault(msg.value, {}).setdefault(msg.signer, msg)
        return True

    def signers(self, height, round, kind, value) -> set:
        return set(self.votes.get((height, round, kind), {}).get(value, {}))

    def messages(self, height, round, kind, value) -> list:
        slot = self.votes.get((height, round, kind), {}).get(value, {})
        return [slot[s] for s in sorted(slot)]

    def quorum_values(self, height, round, kind, q: int) -> list:
        """Values (block ids, or NIL) holding at least q distinct signers."""
        out = []
        for value, signers in self.votes.get((height, round, kind), {}).items():
            if len(signers) >= q:
                out.append(NIL if value is None else value)
        return sorted(out, key=lambda v: b"" if v is NIL else v.value)

    def rounds(self, height) -> list:
        return sorted({r for (h, r, _k) in self.votes if h == height})


@dataclass(frozen=True)
class FinalizationCertificate:
    block_id: Hash
    height: int
    round: int
    precommits: tuple

    @property
    def signers(self) -> frozenset:
        return frozenset(m.signer for m in self.precommits)

    def is_valid(self, quorum: int, keyring: Optional[Keyring] = None) -> bool:
        seen = set()
        for m in self.precommits:
            if (m.kind != VoteKind.PRECOMMIT or m.height != self.height
                    or m.round != self.round or m.value != self.block_id):
                return False
            if keyring is not None and not m.verify(keyring):
                return False
            seen.add(m.signer)
        return len(seen) >= quorum


def certificate_from_log(log: MessageLog, block_id: Hash, height: int, quorum: int):
    """First round at which block_id gathered a precommit quorum, as a certificate."""
    for r in log.rounds(height):
        msgs = log.messages(height, r, VoteKind.PRECOMMIT, block_id)
        if len({m.signer for m in msgs}) >= quorum:
            return FinalizationCertificate(block_id, height, r, tuple(msgs))
    return None


@dataclass
class RoundState:
    height: int = 1
    round: int = 0
    step: Step = Step.NEW_ROUND
    locked_value: Optional[PoSBlock] = None
    locked_round: int = -1
    valid_value: Optional[PoSBlock] = None
    valid_round: int = -1
    start_at: int = 0
    deadline: int = 0


class ValidatorContext(Protocol):
    """What a validator needs from the node that hosts it."""

    log: MessageLog

    def get_block(self, block_id: Hash) -> Optional[PoSBlock]: ...
    def proposal_for(self, height: int, round: int): ...
    def acceptable(self, block: PoSBlock) -> bool: ...
    def build_block(self, height: int, round: int) -> PoSBlock: ...
    def broadcast_vote(self, msg: ConsensusMessage, block: Optional[PoSBlock] = None) -> None: ...


@dataclass
class Behavior:
    """Deviations from the honest protocol for corrupted validators."""

    silent_offchain: bool = False
    silent_onchain: bool = False
    # tx ids this validator refuses to include or vote for
    censor: frozenset = frozenset()


HONEST = Behavior()


class TendermintValidator:
    def __init__(self, vid: int, params: ProtocolParams, keyring: Keyring,
                 validators: Iterable[int], behavior: Behavior = HONEST):
        self.id = vid
        self.params = params
        self.keyring = keyring
        self.validators = sorted(validators)
        self.behavior = behavior
        self.state = RoundState()
        self.halted = False
        # (height, round, locked_round, valid_round) after each transition, for lock checks
        self.history: list[tuple] = []

    @property
    def quorum(self) -> int:
        return self.params.quorum

    def start_height(self, height: int, tick: int, wait: int = 0) -> None:
        self.state = RoundState(height=height, round=0, step=Step.NEW_ROUND, start_at=tick + wait)

    def _start_round(self, r: int, tick: int) -> None:
        s = self.state
        s.round = r
        s.step = Step.NEW_ROUND
        s.start_at = tick

    def _vote(self, ctx: ValidatorContext, kind: VoteKind, value: Optional[Hash]) -> None:
        if self.behavior.silent_offchain:
            return
        s = self.state
        msg = ConsensusMessage(kind, s.height, s.round, value, -1, self.id).signed(self.keyring)
        ctx.broadcast_vote(msg)

    def _record(self) -> None:
        s = self.state
        self.history.append((s.height, s.round, s.locked_round, s.valid_round))

    def prevote_allowed(self, block: PoSBlock, vr: int) -> bool:
        s = self.state
        if s.locked_value is None:
            return True
        return block.id == s.locked_value.id or vr > s.locked_round

    def _propose(self, ctx: ValidatorContext) -> None:
        if self.behavior.silent_offchain:
            return
        s = self.state
        if s.valid_round >= 0 and s.valid_value is not None:
            block, vr = s.valid_value, s.valid_round
        else:
            block, vr = ctx.build_block(s.height, s.round), -1
        msg = ConsensusMessage(VoteKind.PROPOSAL, s.height, s.round, block.id, vr, self.id).signed(self.keyring)
        ctx.broadcast_vote(msg, block)

    def _proposal_ready(self, ctx: ValidatorContext, msg: ConsensusMessage, block: PoSBlock) -> bool:
        if msg.vr < 0:
            return True
        return len(ctx.log.signers(msg.height, msg.vr, VoteKind.PREVOTE, block.id)) >= self.quorum

    def step(self, tick: int, ctx: ValidatorContext) -> None:
        if self.halted:
            return
        for _ in range(16):
            if not self._advance(tick, ctx):
                break

    def _advance(self, tick: int, ctx: ValidatorContext) -> bool:
        s = self.state
        p = self.params
        if tick < s.start_at:
            return False

        if s.step == Step.NEW_ROUND:
            s.step = Step.PROPOSE
            s.deadline = tick + p.timeout(s.round)
            if proposer_for(s.height, s.round, self.validators) == self.id:
                self._propose(ctx)
            return True

        if s.step == Step.PROPOSE:
            prop = ctx.proposal_for(s.height, s.round)
            value = None
            decided = False
            if prop is not None:
                msg, block = prop
                if self._proposal_ready(ctx, msg, block):
                    decided = True
                    if ctx.acceptable(block) and self.prevote_allowed(block, msg.vr):
                        value = block.id
            if not decided and tick < s.deadline:
                return False
            self._vote(ctx, VoteKind.PREVOTE, value)
            s.step = Step.PREVOTE
            s.deadline = tick + p.timeout(s.round)
            return True

        if s.step == Step.PREVOTE:
            for v in ctx.log.quorum_values(s.height, s.round, VoteKind.PREVOTE, self.quorum):
                if v is NIL:
                    self._vote(ctx, VoteKind.PRECOMMIT, None)
                    s.step = Step.PRECOMMIT
                    s.deadline = tick + p.timeout(s.round)
                    return True
                block = ctx.get_block(v)
                if block is not None and ctx.acceptable(block):
                    self._vote(ctx, VoteKind.PRECOMMIT, block.id)
                    s.locked_value, s.locked_round = block, s.round
                    s.valid_value, s.valid_round = block, s.round
                    self._record()
                    s.step = Step.PRECOMMIT
                    s.deadline = tick + p.timeout(s.round)
                    return True
            if tick >= s.deadline:
                self._vote(ctx, VoteKind.PRECOMMIT, None)
                s.step = Step.PRECOMMIT
                s.deadline = tick + p.timeout(s.round)
                return True
            return False

        if s.step == Step.PRECOMMIT:
            # a late polka still refreshes validValue (never the lock)
            for v in ctx.log.quorum_values(s.height, s.round, VoteKind.PREVOTE, self.quorum):
                if v is not NIL and s.valid_round < s.round:
                    block = ctx.get_block(v)
                    if block is not None and ctx.acceptable(block):
                        s.valid_value, s.valid_round = block, s.round
                        self._record()
            nil_q = NIL in ctx.log.quorum_values(s.height, s.round, VoteKind.PRECOMMIT, self.quorum)
            if nil_q or tick >= s.deadline:
                self._start_round(s.round + 1, tick)
                return True
            return False
        return False


# --------------------------------------------------------------------------
# accountability


@dataclass(frozen=True)
class FraudEvidence:
    accused: tuple
    evidence: tuple
    height: int


def extract_fraud_proof(cert_a: FinalizationCertificate, cert_b: FinalizationCertificate,
                        messages: Iterable[ConsensusMessage] = (), quorum: Optional[int] = None,
                        conflicting: Optional[Callable[[Hash, Hash], bool]] = None) -> Optional[FraudEvidence]:
    """Identify validators that provably broke the voting rules behind two conflicting certificates.

    Same round: everyone who precommitted both blocks. Different rounds r < r':
    everyone who precommitted the round-r block and later prevoted a different
    block in the first round after r that gathered a prevote quorum for a
    different block. Without such a round in the supplied messages no proof is
    produced, which keeps the accused set free of honest validators.
    """
    if cert_a.block_id == cert_b.block_id:
        return None
    if conflicting is not None:
        if not conflicting(cert_a.block_id, cert_b.block_id):
            return None
    elif cert_a.height != cert_b.height:
        return None
    if cert_a.height != cert_b.height:
        return None
    if cert_a.round > cert_b.round:
        cert_a, cert_b = cert_b, cert_a
    q = quorum if quorum is not None else 0
    h = cert_a.height
    pre_a = {m.signer: m for m in cert_a.precommits}
    if cert_a.round == cert_b.round:
        pre_b = {m.signer: m for m in cert_b.precommits}
        accused = sorted(set(pre_a) & set(pre_b))
        evidence = tuple(m for s in accused for m in (pre_a[s], pre_b[s]))
        return FraudEvidence(tuple(accused), evidence, h) if accused else None

    log = MessageLog()
    for m in list(messages) + list(cert_a.precommits) + list(cert_b.precommits):
        if m.kind != VoteKind.PROPOSAL:
            log.add(m)
    for m in log.messages(h, cert_a.round, VoteKind.PRECOMMIT, cert_a.block_id):
        pre_a.setdefault(m.signer, m)
    for r in range(cert_a.round + 1, cert_b.round + 1):
        slot = log.votes.get((h, r, VoteKind.PREVOTE), {})
        for value, signers in sorted(slot.items(), key=lambda kv: b"" if kv[0] is None else kv[0].value):
            if value is None or value == cert_a.block_id:
                continue
            if len(signers) < max(q, 1):
                continue
            accused = sorted(set(pre_a) & set(signers))
            if not accused:
                continue
            evidence = tuple(m for s in accused for m in (pre_a[s], signers[s]))
            return FraudEvidence(tuple(accused), evidence, h)
    return None


def _unlocked(log: Optional[MessageLog], height: int, after: int, before: int, value, quorum: int) -> bool:
    if log is None:
        return False
    return any(len(log.signers(height, r, VoteKind.PREVOTE, value)) >= quorum
               for r in range(after + 1, before))


def evidence_accuses(ev_msgs: Iterable[ConsensusMessage], keyring: Keyring, quorum: int,
                     log: Optional[MessageLog] = None) -> set:
    """Validators convicted by a list of evidence messages, checked independently of the extractor.

    A validator is convicted when the list holds two of its signed votes that
    cannot both come from an honest validator: two precommits or two prevotes
    for different values in one round, or a precommit for B followed by a
    prevote for a different block C in a later round of the same height. With
    ``log``, the second kind is excused when the log shows a prevote quorum
    for C in a round strictly between the two votes (a legitimate unlock).
    """
    by_signer: dict[int, list] = {}
    for m in ev_msgs:
        if m.verify(keyring):
            by_signer.setdefault(m.signer, []).append(m)
    out = set()
    for s, msgs in by_signer.items():
        for a in msgs:
            for b in msgs:
                if a is b or a.height != b.height:
                    continue
                if a.kind == b.kind and a.round == b.round and a.value != b.value:
                    out.add(s)
                if (a.kind == VoteKind.PRECOMMIT and b.kind == VoteKind.PREVOTE and a.value is not None
                        and b.value is not None and b.round > a.round and b.value != a.value
                        and not _unlocked(log, a.height, a.round, b.round, b.value, quorum)):
                    out.add(s)
    return out
