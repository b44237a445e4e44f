"""Checkpoint-aware node view: validation, fork choice, withdrawals and slashing rules.

A node reads its longest timestamping chain in two passes. The first pass
(``Interpretation``) walks every block and records checkpoints, fraud proofs,
complaints, stalling evidence and on-chain consensus messages. The second pass
(``LivenessPass``) replays those records over a prefix of the chain and runs
the censorship and stalling logic. Nodes keep one liveness pass on the
k_c/2-deep prefix (which decides slashing) and one on the full chain (which
tells an honest validator when to act).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .babylon_chain import ACCEPT, BlockTree, Validation, deep_prefix, miner_validate_commitment
from .core_types import (
    BABYLON_ROUND,
    GENESIS_POS,
    BabylonBlock,
    BabylonTx,
    CheckpointData,
    CheckpointError,
    Commitment,
    ConsensusMessage,
    FraudProofData,
    Hash,
    Keyring,
    OnBabylonMessageData,
    PayloadKind,
    PoSBlock,
    ProtocolParams,
    StallingEvidenceData,
    TxKind,
    ValidatorStatus,
    VoteKind,
    checkpoint_data_for,
    compute_checkpoint_commitment,
    compute_txroot,
    make_babylon_tx,
    message_commitment_of,
)
from .tendermint import (
    FinalizationCertificate,
    MessageLog,
    certificate_from_log,
    evidence_accuses,
    extract_fraud_proof,
)

INF = (float("inf"), 0)


# --------------------------------------------------------------------------
# checkpoint validation


def _invalid(reason: str) -> Validation:
    return Validation(False, reason)


def node_validate_checkpoint(view: "NodeView", commitment: Commitment, data, light: bool = False) -> Validation:
    """Full-node (or light-client) validity of a checkpoint commitment."""
    if data is None:
        return _invalid("data_missing")
    if not isinstance(data, CheckpointData):
        return _invalid("malformed")
    try:
        data.check_shape()
    except CheckpointError:
        return _invalid("malformed")
    if light:
        header_roots = tuple(h.txroot for h in data.headers)
        light_data = CheckpointData(data.headers, data.bodies, header_roots)
        if compute_checkpoint_commitment(light_data) != commitment.h:
            return _invalid("hash_mismatch")
        return ACCEPT
    base = view.structural_check(commitment.h, data)
    if not base:
        return base
    for hdr in data.headers:
        if not view.is_finalized(hdr.id):
            return _invalid("not_finalized")
    return ACCEPT


def checkpoint_structure(h: Hash, data: CheckpointData) -> Validation:
    """Conditions (i)-(iii): the hash, the roots against bodies and the roots against headers."""
    try:
        if compute_checkpoint_commitment(data) != h:
            return _invalid("hash_mismatch")
    except CheckpointError:
        return _invalid("malformed")
    for root, body in zip(data.txroots, data.bodies):
        if compute_txroot(body) != root:
            return _invalid("hash_mismatch")
    for root, hdr in zip(data.txroots, data.headers):
        if root != hdr.txroot:
            return _invalid("txroot_header_mismatch")
    return ACCEPT


# --------------------------------------------------------------------------
# first pass over the chain


@dataclass
class CheckpointEntry:
    height: int
    idx: int
    block_ids: tuple
    newly_indexed: tuple
    max_pos_height: int


@dataclass
class Interpretation:
    tip: Optional[Hash] = None
    processed: int = -1
    # PoS block id -> (babylon height, tx index) of the first checkpoint covering it
    index: dict = field(default_factory=dict)
    indexed_at: dict = field(default_factory=dict)
    checkpoints: list = field(default_factory=list)
    events: dict = field(default_factory=dict)
    # unresolved entries: waiting on data or on finality of PoS blocks
    waiting_data: set = field(default_factory=set)
    waiting_blocks: set = field(default_factory=set)
    fraud: list = field(default_factory=list)

    def add_event(self, height: int, ev: tuple) -> None:
        self.events.setdefault(height, []).append(ev)

    def index_block(self, bid: Hash, pos: tuple, view: "NodeView") -> list:
        """Index bid and any unindexed ancestors at pos (checkpoint monotonicity)."""
        out = []
        cur = bid
        while cur is not None and cur not in self.index and cur != GENESIS_POS.id:
            self.index[cur] = pos
            self.indexed_at.setdefault(pos[0], []).append(cur)
            out.append(cur)
            blk = view.pos_blocks.get(cur)
            cur = blk.parent if blk is not None else None
        return out


# --------------------------------------------------------------------------
# second pass: censorship and stalling over a chain prefix


@dataclass
class RoundInfo:
    b: int
    height: int
    b1: int
    b2: int
    number: int
    proposals: dict = field(default_factory=dict)
    selected: Optional[tuple] = None
    prevotes: dict = field(default_factory=dict)
    precommits: dict = field(default_factory=dict)

    @property
    def key(self) -> tuple:
        return (self.b, self.height)


@dataclass
class Complaint:
    height: int
    txs: tuple
    b_prime: Optional[int] = None


class LivenessPass:
    """Censorship and stalling logic replayed over chain heights up to a bound."""

    def __init__(self, params: ProtocolParams, depth: int, authoritative: bool = True):
        self.params = params
        self.depth = depth
        # only the authoritative pass feeds finality back into the view
        self.authoritative = authoritative
        self.reset()

    def reset(self) -> None:
        self.processed = 0
        self.tip: Optional[Hash] = None
        self.last_new = 0
        self.round: Optional[RoundInfo] = None
        self.rounds_started = 0
        self.complaints: list[Complaint] = []
        self.censoring: dict = {}
        # (validator, reason, babylon height)
        self.slash: list = []
        self.babylon_final: dict = {}
        self.halted_at: Optional[int] = None
        self.log: list = []

    def _slash(self, v: int, reason: str, x: int) -> None:
        if self.halted_at is not None:
            return
        self.slash.append((v, reason, x))

    def advance(self, view: "NodeView", chain: list, interp: Interpretation) -> None:
        upto = len(chain) - 1 - self.depth
        if upto < 0:
            return
        if self.tip is not None and (self.processed >= len(chain) or chain[self.processed].id != self.tip):
            self.reset()
        for x in range(self.processed + 1, upto + 1):
            self._height(view, chain, interp, x)
            self.processed = x
        self.tip = chain[self.processed].id if self.processed < len(chain) else None

    def _height(self, view, chain, interp, x):
        p = self.params
        rnd = self.round
        if rnd is not None and x == rnd.b1 and rnd.selected is None:
            self._phase2(view, x)
        rnd = self.round
        if rnd is not None and x == rnd.b2:
            self._phase3(view, x)

        for ev in interp.events.get(x, ()):
            kind = ev[0]
            if kind == "checkpoint":
                entry: CheckpointEntry = ev[1]
                if not entry.newly_indexed:
                    continue
                self.last_new = x
                for c in self.complaints:
                    if c.b_prime is None and x - c.height >= 2 * p.k_c:
                        c.b_prime = x
                rnd = self.round
                if rnd is not None and x < rnd.b1 and entry.max_pos_height >= rnd.height:
                    self.log.append(("babylon_round_abort", rnd.number, x))
                    self.round = None
            elif kind == "fraud":
                accused = ev[3]
                active = [v for v in accused if not view.withdrawn_before(v, x)]
                if len(active) >= p.f + 1 and self.halted_at is None:
                    self.halted_at = x
                    if self.round is not None:
                        self.log.append(("babylon_round_halt", self.round.number, x))
                    self.round = None
            elif kind == "complaint":
                self.complaints.append(Complaint(x, ev[2]))
            elif kind == "stalling":
                if self.round is None and self.halted_at is None and x - self.last_new >= 2 * p.k_c:
                    h = view.max_indexed_height(interp, x, self.babylon_final) + 1
                    self.rounds_started += 1
                    self.round = RoundInfo(x, h, x + p.k_c, x + 2 * p.k_c, self.rounds_started)
                    self.log.append(("babylon_round_start", self.round.number, x, h))
            elif kind == "onchain":
                self._onchain(view, x, ev[1], ev[2])

        # censoring blocks first checkpointed at x
        for c in self.complaints:
            if c.b_prime is None or x <= c.b_prime:
                continue
            for bid in interp.indexed_at.get(x, ()):
                if bid in self.censoring:
                    continue
                if view.block_lacks(bid, c.txs):
                    self.censoring[bid] = x
                    for v in view.block_voters(bid):
                        self._slash(v, "censorship", x)

    def _onchain(self, view, x, idx, data: OnBabylonMessageData):
        rnd = self.round
        msg = data.message
        if rnd is None or msg.round != BABYLON_ROUND or msg.height != rnd.height:
            return
        if not view.verify_message(msg):
            return
        if msg.kind == VoteKind.PROPOSAL:
            if rnd.b <= x < rnd.b1 and msg.signer not in rnd.proposals:
                if data.block is None or data.block.height != rnd.height:
                    return
                rnd.proposals[msg.signer] = ((x, idx), msg, data.block)
        elif rnd.selected is not None and rnd.b1 <= x < rnd.b2:
            target = rnd.prevotes if msg.kind == VoteKind.PREVOTE else rnd.precommits
            if msg.value == rnd.selected[1].id:
                target.setdefault(msg.signer, msg)

    def _censoring_proposal(self, view, block: PoSBlock, before: int) -> bool:
        for c in self.complaints:
            if c.height < before and view.block_lacks(block, c.txs):
                return True
        return False

    def _phase2(self, view, x):
        rnd = self.round
        q = self.params.quorum
        good = {}
        for signer, (pos, msg, block) in rnd.proposals.items():
            if not self._censoring_proposal(view, block, rnd.b):
                good[signer] = (pos, msg, block)
        if len(good) >= q:
            rnd.selected = proposal_selection([(pos, msg, blk) for pos, msg, blk in good.values()])
            self.log.append(("babylon_round_phase", rnd.number, x, rnd.selected[1].id.value.hex()))
            return
        for v in view.validators:
            if v not in good:
                self._slash(v, "stalling", x)
        self.log.append(("babylon_round_restart", rnd.number, x))
        self.round = None

    def _phase3(self, view, x):
        rnd = self.round
        q = self.params.quorum
        block = rnd.selected[1]
        if len(rnd.prevotes) >= q and len(rnd.precommits) >= q:
            self.babylon_final[block.id] = (x, -1)
            self.last_new = x
            self.log.append(("babylon_round_finalize", rnd.number, x, block.id.value.hex()))
            self.round = None
            if self.authoritative:
                view.on_babylon_finalized(block, x)
            return
        for v in view.validators:
            if v not in rnd.prevotes or v not in rnd.precommits:
                self._slash(v, "stalling", x)
        self.log.append(("babylon_round_restart", rnd.number, x))
        self.round = None


def proposal_selection(proposals):
    """Pick the proposal with the largest vr; ties go to the earliest position.

    ``proposals`` holds (position, message, block) triples where position is a
    (babylon height, tx index) pair. Returns (message, block), or None for an
    empty input.
    """
    best = None
    for pos, msg, block in proposals:
        key = (-msg.vr, pos)
        if best is None or key < best[0]:
            best = (key, msg, block)
    return None if best is None else (best[1], best[2])


# --------------------------------------------------------------------------
# node view


class NodeView:
    def __init__(self, name: str, params: ProtocolParams, keyring: Keyring, validators,
                 check_availability: bool = True, tie_break=None, babylon_tie_break=None):
        self.name = name
        self.params = params
        self.keyring = keyring
        self.validators = sorted(validators)
        self.check_availability = check_availability
        self.fork_tie_break = tie_break
        self.pos_blocks: dict[Hash, PoSBlock] = {GENESIS_POS.id: GENESIS_POS}
        self.pos_children: dict[Hash, list] = {}
        self.log = MessageLog()
        self.certs: dict[Hash, FinalizationCertificate] = {}
        self.final_order: dict[Hash, int] = {GENESIS_POS.id: 0}
        self.final_by_height: dict[int, list] = {}
        self.babylon_final: dict[Hash, tuple] = {}
        self.babylon = BlockTree(tie_break=babylon_tie_break)
        self.data_store: dict[Hash, object] = {}
        self.withdraw_requests: list = []
        self.requests_by: dict[int, list] = {}
        self.events: list = []
        self.slashable: dict[int, tuple] = {}
        self.withdrawals: dict[int, str] = {}
        self._struct_cache: dict = {}
        self._lacks_cache: dict = {}
        self._canonical: Optional[list] = None
        self._canonical_last: Optional[list] = None
        self._grant_cache: dict = {}
        # bumped whenever the canonical chain or the interpretation is rebuilt
        self._epoch = 0
        # parents with two or more finalized children, and heights with two or more finals
        self.fork_parents: set = set()
        self._multi_heights: set = set()
        self._canonical_prev: Optional[list] = None
        self.interp = Interpretation()
        self.live = LivenessPass(params, params.k_c // 2)
        self.act = LivenessPass(params, 0, authoritative=False)
        self._dirty = False
        self._ckpt_reported: set = set()
        self.block_listener = None
        self.crisis_height: Optional[int] = None
        self.tick = 0

    # ---- PoS side -------------------------------------------------------

    def add_pos_block(self, block: PoSBlock) -> bool:
        if block.id in self.pos_blocks:
            return False
        if not block.is_well_formed():
            return False
        self.pos_blocks[block.id] = block
        self.pos_children.setdefault(block.parent, []).append(block.id)
        if self.block_listener is not None:
            self.block_listener(block)
        for tx in block.body:
            if tx.kind == TxKind.WITHDRAWAL_REQUEST:
                self.withdraw_requests.append((tx.sender, block.id))
                self.requests_by.setdefault(tx.sender, []).append(block.id)
        for m in block.justification:
            self.add_vote(m)
        self._check_finality(block.height, block.id)
        return True

    def verify_message(self, msg: ConsensusMessage) -> bool:
        return msg.verify(self.keyring) and msg.signer in self.validators

    def add_vote(self, msg: ConsensusMessage) -> list:
        if msg.kind == VoteKind.PROPOSAL or not self.verify_message(msg):
            return []
        if not self.log.add(msg):
            return []
        if msg.kind == VoteKind.PRECOMMIT and msg.value is not None and msg.value in self.pos_blocks:
            return self._check_finality(msg.height, msg.value)
        return []

    def _check_finality(self, height: int, bid: Hash) -> list:
        if bid in self.certs:
            return []
        cert = certificate_from_log(self.log, bid, height, self.params.quorum)
        if cert is None:
            return []
        self._mark_final(bid, cert)
        return [bid]

    def _mark_final(self, bid: Hash, cert=None) -> None:
        if cert is not None:
            self.certs[bid] = cert
        if bid not in self.final_order:
            self.final_order[bid] = len(self.final_order)
            blk = self.pos_blocks[bid]
            at_h = self.final_by_height.setdefault(blk.height, [])
            at_h.append(bid)
            if len(at_h) > 1:
                self._multi_heights.add(blk.height)
            if sum(1 for k in self.pos_children.get(blk.parent, ()) if k in self.final_order) > 1:
                self.fork_parents.add(blk.parent)
            self._canonical = None
            self.events.append(("pos_finalized", {"block": bid.value.hex(), "height": blk.height}))
            if bid in self.interp.waiting_blocks:
                self._dirty = True

    def on_babylon_finalized(self, block: PoSBlock, x: int) -> None:
        self.add_pos_block(block)
        self.babylon_final[block.id] = (x, -1)
        self._mark_final(block.id)
        self._canonical = None

    def is_finalized(self, bid: Hash) -> bool:
        return bid in self.final_order

    def block_voters(self, bid: Hash) -> list:
        """Proposer and precommit signers behind a finalized block."""
        blk = self.pos_blocks[bid]
        out = set()
        if blk.header.proposer >= 0:
            out.add(blk.header.proposer)
        cert = self.certs.get(bid)
        if cert is not None:
            out |= set(cert.signers)
        return sorted(out)

    def block_lacks(self, block, txs) -> bool:
        """True if some listed tx is absent from the block's body and its whole prefix."""
        blk = block if isinstance(block, PoSBlock) else self.pos_blocks[block]
        for tx in txs:
            key = (blk.id, tx.id)
            hit = self._lacks_cache.get(key)
            if hit is None:
                hit = True
                cur = blk
                while cur is not None:
                    if any(t.id == tx.id for t in cur.body):
                        hit = False
                        break
                    if cur.id == GENESIS_POS.id:
                        break
                    cur = self.pos_blocks.get(cur.parent)
                self._lacks_cache[key] = hit
            if hit:
                return True
        return False

    def max_indexed_height(self, interp: Interpretation, x: int, babylon_final: dict) -> int:
        best = 0
        for entry in interp.checkpoints:
            if entry.height <= x:
                best = max(best, entry.max_pos_height)
        for bid, pos in babylon_final.items():
            if pos[0] <= x:
                best = max(best, self.pos_blocks[bid].height)
        return best

    # ---- data and timestamping chain ------------------------------------

    def structural_check(self, h: Hash, data) -> Validation:
        key = (h, id(data))
        v = self._struct_cache.get(key)
        if v is None:
            v = checkpoint_structure(h, data)
            self._struct_cache[key] = v
        return v

    def add_data(self, h: Hash, data) -> None:
        if h in self.data_store:
            return
        self.data_store[h] = data
        if h in self.interp.waiting_data:
            self._dirty = True
        self._absorb(data)

    def _absorb(self, data) -> None:
        """Learn blocks and votes carried inside commitment data."""
        ckpts = []
        if isinstance(data, CheckpointData):
            ckpts.append(data)
        elif isinstance(data, FraudProofData):
            ckpts += [data.data_a, data.data_b]
        elif isinstance(data, StallingEvidenceData):
            ckpts.append(data.data)
        elif isinstance(data, OnBabylonMessageData):
            if data.block is not None:
                self.add_pos_block(data.block)
            for m in data.prevotes:
                self.add_vote(m)
        for d in ckpts:
            if not checkpoint_structure(compute_checkpoint_commitment(d), d):
                continue
            for hdr, body in zip(d.headers, d.bodies):
                self.add_pos_block(PoSBlock(hdr, tuple(body)))
            for m in d.justification:
                self.add_vote(m)
            for hdr in d.headers:
                self._check_finality(hdr.height, hdr.id)

    def tx_valid(self, tx: BabylonTx, data) -> Validation:
        return miner_validate_commitment(tx, data, self.params.quorum, self.check_availability)

    def add_babylon_block(self, block: BabylonBlock, datas: dict) -> list:
        if block.id in self.babylon:
            return []
        for tx in block.txs:
            d = datas.get(tx.commitment.h, self.data_store.get(tx.commitment.h))
            if not self.tx_valid(tx, d):
                return []
        for h, d in datas.items():
            self.add_data(h, d)
        return self.babylon.add(block)

    def longest_babylon(self) -> list:
        return self.babylon.chain()

    def liveness_babylon(self) -> list:
        return deep_prefix(self.longest_babylon(), self.params.k_c // 2)

    # ---- interpretation -------------------------------------------------

    def sync(self) -> None:
        """Bring both passes and the derived sets up to date with the current chain."""
        for _ in range(4):
            chain = self.babylon.chain()
            tip = chain[-1].id
            it = self.interp
            if self._dirty or (it.tip is not None and not self.babylon.is_ancestor(it.tip, tip)):
                self.interp = it = Interpretation()
                self._epoch += 1
                self.live.reset()
                self.act.reset()
                self._dirty = False
            for x in range(it.processed + 1, len(chain)):
                self._interpret(chain[x])
                it.processed = x
            it.tip = tip
            self.live.advance(self, chain, it)
            self.act.advance(self, chain, it)
            if not self._dirty:
                break
        if self.fork_parents:
            # checkpoint positions only matter where finalized siblings compete
            self._canonical = None
        self._update_withdrawals_and_slashing()
        self._note_canonical_change()
        self._note_checkpointed()

    def _note_checkpointed(self) -> None:
        for src in (self.interp.index, self.live.babylon_final):
            for bid, pos in src.items():
                if bid not in self._ckpt_reported:
                    self._ckpt_reported.add(bid)
                    self.events.append(("pos_checkpointed", {"block": bid.value.hex(),
                                                             "babylon_height": pos[0]}))

    def _interpret(self, block: BabylonBlock) -> None:
        it = self.interp
        x = block.height
        for i, tx in enumerate(block.txs):
            data = self.data_store.get(tx.commitment.h)
            if data is None:
                it.waiting_data.add(tx.commitment.h)
                continue
            if not self.tx_valid(tx, data):
                continue
            kind = tx.payload_kind
            if kind == PayloadKind.CHECKPOINT:
                v = node_validate_checkpoint(self, tx.commitment, data)
                if not v:
                    if v.reason == "not_finalized":
                        it.waiting_blocks.update(h.id for h in data.headers)
                    continue
                newly = []
                for hdr in data.headers:
                    newly += it.index_block(hdr.id, (x, i), self)
                entry = CheckpointEntry(x, i, data.block_ids, tuple(newly),
                                        max(self.pos_blocks[b].height for b in newly) if newly else 0)
                it.checkpoints.append(entry)
                it.add_event(x, ("checkpoint", entry))
            elif kind == PayloadKind.FRAUD_PROOF:
                accused = self.validate_fraud_proof(data)
                if accused:
                    it.fraud.append((x, i, data, accused, tx.commitment.submitter))
                    it.add_event(x, ("fraud", i, data, accused))
            elif kind == PayloadKind.CENSORSHIP_COMPLAINT:
                it.add_event(x, ("complaint", i, tuple(data.txs)))
            elif kind == PayloadKind.STALLING_EVIDENCE:
                if checkpoint_structure(data.checkpoint, data.data):
                    it.add_event(x, ("stalling", i, data))
            elif kind == PayloadKind.CONSENSUS_MESSAGE:
                it.add_event(x, ("onchain", i, data))

    def validate_fraud_proof(self, data: FraudProofData) -> tuple:
        """Accused validators if the proof is valid in this view, else ()."""
        for h, d in ((data.checkpoint_a, data.data_a), (data.checkpoint_b, data.data_b)):
            if not checkpoint_structure(h, d):
                return ()
        ha, hb = data.data_a.headers[-1], data.data_b.headers[-1]
        if ha.id == hb.id or ha.height != hb.height:
            return ()
        if message_commitment_of(data.evidence) != data.evidence_commitment:
            return ()
        convicted = evidence_accuses(data.evidence, self.keyring, self.params.quorum, self.log)
        accused = tuple(sorted(set(data.accused)))
        if len(accused) < self.params.f + 1 or not set(accused) <= convicted:
            return ()
        return accused

    # ---- checkpoint positions and fork choice ----------------------------

    def checkpoint_pos(self, bid: Hash) -> tuple:
        pos = self.interp.index.get(bid, INF)
        bf = self.live.babylon_final.get(bid)
        if bf is not None and bf < pos:
            pos = bf
        return pos

    def canonical(self) -> list:
        if self._canonical is None:
            last = self._canonical_last
            if last is None or self.fork_parents:
                self._canonical = fork_choice(self)
            else:
                chain = list(last)
                while True:
                    kids = [k for k in self.pos_children.get(chain[-1], ()) if k in self.final_order]
                    if not kids:
                        break
                    chain.append(kids[0])
                self._canonical = chain
            if self._canonical != last:
                self._epoch += 1
            self._canonical_last = self._canonical
        return self._canonical

    def canonical_tip(self) -> PoSBlock:
        return self.pos_blocks[self.canonical()[-1]]

    def _note_canonical_change(self) -> None:
        cur = self.canonical()
        prev = self._canonical_prev
        if prev is not None and (len(cur) < len(prev) or cur[len(prev) - 1] != prev[-1]):
            self.events.append(("fork_choice_switch", {
                "from": prev[-1].value.hex(), "to": cur[-1].value.hex(), "height": len(cur) - 1}))
            if self.crisis_height is None:
                # a finalized block left the ledger: suspend liveness slashing from here on
                self.crisis_height = self.babylon.best.height
                self.events.append(("crisis", {"babylon_height": self.crisis_height}))
        self._canonical_prev = cur

    # ---- withdrawals and slashing -----------------------------------------

    def grant_height(self, validator: int) -> Optional[int]:
        """Babylon height at which the validator's canonical withdrawal request matures."""
        reqs = self.requests_by.get(validator)
        if not reqs:
            return None
        canon = self.canonical()
        stamp = (self._epoch, len(self.interp.index),
                 len(self.live.babylon_final), len(reqs))
        hit = self._grant_cache.get(validator)
        if hit is not None and hit[0] == stamp:
            return hit[1]
        best = None
        for bid in reqs:
            h = self.pos_blocks[bid].height
            if h >= len(canon) or canon[h] != bid:
                continue
            pos = self.checkpoint_pos(bid)
            if pos == INF:
                continue
            g = pos[0] + self.params.k_w
            best = g if best is None else min(best, g)
        self._grant_cache[validator] = (stamp, best)
        return best

    def withdrawn_before(self, validator: int, x: int) -> bool:
        """Withdrawal granted on the current chain strictly before height x."""
        g = self.grant_height(validator)
        if g is None or g >= x:
            return False
        return self.first_proof_height(validator, upto=g) is None

    def first_proof_height(self, validator: int, upto: Optional[int] = None) -> Optional[int]:
        for x, _i, _data, accused, _sub in self.interp.fraud:
            if validator in accused and (upto is None or x <= upto):
                return x
        return None

    def _update_withdrawals_and_slashing(self) -> None:
        for v in self.validators:
            status = withdrawal_check(self, v)
            old = self.withdrawals.get(v)
            if status != old and status in ("granted", "denied_slashed"):
                self.events.append((f"withdrawal_{'granted' if status == 'granted' else 'denied'}",
                                    {"validator": v}))
            if status != "none":
                self.withdrawals[v] = status
        for x, _i, data, accused, submitter in self.interp.fraud:
            for v in accused:
                if not self.withdrawn_before(v, x):
                    self._add_slashable(v, "safety", x, submitter)
        for v, reason, x in self.live.slash:
            if self.crisis_height is not None and x >= self.crisis_height:
                continue
            self._add_slashable(v, reason, x, None)

    def _add_slashable(self, v: int, reason: str, x: int, reporter) -> None:
        if v in self.slashable:
            return
        self.slashable[v] = (reason, self.tick, x)
        self.events.append(("slashable_added", {"validator": v, "reason": reason, "babylon_height": x}))
        if reporter is not None and reporter >= 0:
            self.events.append(("reward", {"validator": v, "reporter": reporter, "fraction": 0.5}))

    def status_of(self, v: int) -> ValidatorStatus:
        if v in self.slashable:
            return ValidatorStatus.SLASHED
        w = self.withdrawals.get(v)
        if w == "granted":
            return ValidatorStatus.WITHDRAWN
        if w in ("pending", "requested"):
            return ValidatorStatus.PASSIVE
        return ValidatorStatus.ACTIVE

    # ---- fraud proofs ---------------------------------------------------

    def conflicting_certificates(self) -> list:
        """Pairs of finalized blocks at one height, each with a precommit certificate."""
        out = []
        for h in sorted(self._multi_heights):
            ids = self.final_by_height[h]
            with_cert = [b for b in ids if b in self.certs]
            for i in range(len(with_cert)):
                for j in range(i + 1, len(with_cert)):
                    out.append((self.certs[with_cert[i]], self.certs[with_cert[j]]))
        return out

    def build_fraud_proof(self, cert_a, cert_b) -> Optional[FraudProofData]:
        ev = extract_fraud_proof(cert_a, cert_b, list(self.log), self.params.quorum)
        if ev is None or len(ev.accused) < self.params.f + 1:
            return None
        blk_a, blk_b = self.pos_blocks[cert_a.block_id], self.pos_blocks[cert_b.block_id]
        da = checkpoint_data_for([blk_a], justification=cert_a.precommits)
        db = checkpoint_data_for([blk_b], justification=cert_b.precommits)
        return FraudProofData(
            compute_checkpoint_commitment(da), da,
            compute_checkpoint_commitment(db), db,
            message_commitment_of(ev.evidence), ev.evidence, ev.accused,
        )


# --------------------------------------------------------------------------
# stand-alone operations


def fork_choice(view: NodeView) -> list:
    """Canonical chain of finalized PoS blocks, as a list of block ids from genesis.

    Descends from genesis; where several finalized children compete, the one
    whose branch was checkpointed earliest on the longest timestamping chain
    wins, a checkpointed branch beats an unchecked one, and remaining ties go
    to ``view.fork_tie_break`` (default: the first child finalized in view).
    """
    chain = [GENESIS_POS.id]
    cur = GENESIS_POS.id
    while True:
        kids = [k for k in view.pos_children.get(cur, ()) if view.is_finalized(k)]
        if not kids:
            return chain
        if len(kids) == 1:
            nxt = kids[0]
        else:
            ranked = sorted(kids, key=lambda k: (view.checkpoint_pos(k), view.final_order[k]))
            best_pos = view.checkpoint_pos(ranked[0])
            tied = [k for k in ranked if view.checkpoint_pos(k) == best_pos]
            if len(tied) > 1 and best_pos == INF and view.fork_tie_break is not None:
                nxt = view.fork_tie_break(tied)
            else:
                nxt = ranked[0]
        chain.append(nxt)
        cur = nxt


def fork_point_violation(view: NodeView) -> Optional[dict]:
    """Check the canonical chain against every finalized rival at each fork point.

    Returns None when, at every fork, the canonical child is checkpointed no
    later than each finalized sibling (and an unchecked canonical child has
    only unchecked rivals); otherwise a witness dict.
    """
    canon = view.canonical()
    forks = sorted((view.pos_blocks[p].height, p) for p in view.fork_parents)
    for i, parent in forks:
        if i + 1 >= len(canon) or canon[i] != parent:
            continue
        child = canon[i + 1]
        mine = view.checkpoint_pos(child)
        for k in view.pos_children.get(parent, ()):
            if k == child or not view.is_finalized(k):
                continue
            theirs = view.checkpoint_pos(k)
            if theirs < mine:
                return {"height": i + 1, "canonical": child.value.hex(), "rival": k.value.hex(),
                        "canonical_pos": list(mine), "rival_pos": list(theirs)}
    return None


def emit_checkpoint(view: NodeView, submitter: int = -1) -> Optional[tuple]:
    """(BabylonTx, CheckpointData) covering canonical finalized blocks not yet checkpointed."""
    canon = view.canonical()
    start = None
    for i in range(len(canon) - 1, 0, -1):
        if canon[i] in view.interp.index or canon[i] in view.live.babylon_final:
            break
        start = i
    if start is None:
        return None
    blocks = [view.pos_blocks[b] for b in canon[start:]]
    justification = []
    for b in blocks:
        cert = view.certs.get(b.id)
        if cert is not None:
            justification.extend(cert.precommits)
    data = checkpoint_data_for(blocks, justification=justification)
    tx = make_babylon_tx(PayloadKind.CHECKPOINT, data, submitter, view.params.chain_id)
    return tx, data


def withdrawal_check(view: NodeView, validator: int) -> str:
    """'none', 'requested', 'pending', 'granted' or 'denied_slashed' for the validator."""
    requested = bool(view.requests_by.get(validator))
    g = view.grant_height(validator)
    if g is None:
        if requested and view.first_proof_height(validator) is not None:
            return "denied_slashed"
        return "requested" if requested else "none"
    tip = view.babylon.best.height
    proof = view.first_proof_height(validator)
    if proof is not None and proof <= g:
        return "denied_slashed"
    if tip >= g:
        return "granted"
    return "pending"


def process_fraud_proof(view: NodeView, proof: FraudProofData, at_height: int) -> tuple:
    """Validators a proof landing at at_height makes slashable, and whether the node halts."""
    accused = view.validate_fraud_proof(proof)
    slash = tuple(v for v in accused if not view.withdrawn_before(v, at_height))
    halt = len(slash) >= view.params.f + 1
    return slash, halt


def detect_censoring(view: NodeView) -> dict:
    """Censoring PoS blocks found on the k_c/2-deep prefix: block id -> babylon height."""
    return dict(view.live.censoring)


def honest_censorship_response(view: NodeView, block: PoSBlock) -> bool:
    """Whether an honest validator may propose or vote for block, given complaints on its chain."""
    for c in view.act.complaints:
        if view.block_lacks(block, c.txs):
            return False
    return True


def detect_stalling(view: NodeView) -> Optional[StallingEvidenceData]:
    """Stalling evidence when the k_c/2-deep prefix went 2k_c blocks without a new checkpoint."""
    live = view.live
    tip = live.processed
    if live.round is not None or live.halted_at is not None:
        return None
    if tip - live.last_new < 2 * view.params.k_c:
        return None
    canon = view.canonical()
    last = view.pos_blocks[canon[-1]]
    data = checkpoint_data_for([last])
    return StallingEvidenceData(last.height + 1, compute_checkpoint_commitment(data), data)


def proposal_checkpoint_covers(data: CheckpointData, height: int) -> bool:
    return any(h.height == height for h in data.headers)
