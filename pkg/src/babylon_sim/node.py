"""A PoS full node: one NodeView, an optional validator and the honest duties."""

from __future__ import annotations

from typing import Optional

from .core_types import (
    BABYLON_ROUND,
    ConsensusMessage,
    CensorshipComplaintData,
    OnBabylonMessageData,
    PayloadKind,
    PoSBlock,
    PoSTransaction,
    TxKind,
    VoteKind,
    make_babylon_tx,
    make_block,
)
from .enhancement import (
    INF,
    NodeView,
    detect_stalling,
    emit_checkpoint,
    fork_point_violation,
    honest_censorship_response,
)
from .tendermint import HONEST, Behavior, TendermintValidator, proposer_for


class FullNode:
    def __init__(self, sim, name: str, vid: Optional[int], behavior: Behavior = HONEST,
                 honest: bool = True, duties: bool = True, files_complaints: bool = False,
                 tie_break=None, enhanced: bool = True):
        p = sim.params
        self.sim = sim
        self.name = name
        self.vid = vid
        self.honest = honest
        self.behavior = behavior
        self.duties = duties
        self.files_complaints = files_complaints
        # without the enhancement a node ignores the timestamping chain entirely
        self.enhanced = enhanced
        # adversarial nodes may hide some votes from chosen recipients
        self.vote_filter = None
        self.view = NodeView(name, p, sim.keyring, sim.validators, sim.check_availability,
                             tie_break=tie_break, babylon_tie_break=sim.babylon_tie_break)
        self.view.block_listener = sim.note_pos_block
        self.validator: Optional[TendermintValidator] = None
        if vid is not None:
            self.validator = TendermintValidator(vid, p, sim.keyring, sim.validators, behavior)
            self.validator.start_height(1, 0, wait=p.block_interval)
        self.proposals: dict = {}
        self.mempool: dict = {}
        self.known_at: dict = {}
        self.complained: set = set()
        self.settled: set = set()
        self.last_emit = 0
        self.last_stall = None
        self.fraud_sent: set = set()
        self.onchain_sent: set = set()
        self.frozen: dict = {}
        self._dirty = True
        # tx id -> canonical block carrying it; the unsettled subset is tracked apart
        self._canon_txs: dict = {}
        self._unsettled: dict = {}
        self._canon_prev: list = []
        self._tip_reported = None
        self._pos_tip_reported = None
        self._log_seen = 0

    # ---- delivery --------------------------------------------------------

    def deliver(self, kind: str, payload) -> None:
        v = self.view
        if not self.enhanced and kind in ("babylon_block", "babylon_data"):
            return
        if kind == "vote":
            if v.add_vote(payload):
                self._dirty = True
        elif kind == "proposal":
            msg, block = payload
            if block.id != msg.value or not v.verify_message(msg):
                return
            if msg.signer != proposer_for(msg.height, msg.round, self.sim.validators):
                return
            self._add_block(block)
            self.proposals.setdefault((msg.height, msg.round), (msg, block))
        elif kind == "pos_block":
            self._add_block(payload)
        elif kind == "babylon_block":
            block, datas = payload
            if v.add_babylon_block(block, datas):
                self._dirty = True
                for d in datas.values():
                    if isinstance(d, CensorshipComplaintData):
                        for tx in d.txs:
                            self._learn_tx(tx)
        elif kind == "babylon_data":
            for h, d in payload.items():
                v.add_data(h, d)
            self._dirty = True
        elif kind == "pos_tx":
            self._learn_tx(payload)
        elif kind == "leak_chain":
            # blocks final under inactivity-leak rules; they carry no certificate
            for block in payload:
                self._add_block(block)
                if v.is_finalized(block.parent):
                    v._mark_final(block.id)
        elif kind == "bundle":
            for k, p in payload:
                self.deliver(k, p)
        self._dirty = True

    def _add_block(self, block: PoSBlock) -> None:
        if self.view.add_pos_block(block):
            self._dirty = True

    def _learn_tx(self, tx: PoSTransaction) -> None:
        if tx.id in self.mempool:
            return
        self.mempool[tx.id] = tx
        self.known_at[tx.id] = self.view.babylon.best.height
        if tx.kind == TxKind.PAYLOAD:
            self.sim.record("tx_known", self.name, tx=tx.id.value.hex())

    # ---- validator context -----------------------------------------------

    @property
    def log(self):
        return self.view.log

    def get_block(self, block_id):
        return self.view.pos_blocks.get(block_id)

    def proposal_for(self, height, round):
        return self.proposals.get((height, round))

    def acceptable(self, block: PoSBlock) -> bool:
        tip = self.view.canonical_tip()
        if block.parent != tip.id or block.height != tip.height + 1 or not block.is_well_formed():
            return False
        if self.behavior.censor and any(tx.id in self.behavior.censor for tx in block.body):
            return False
        if self.honest and not honest_censorship_response(self.view, block):
            return False
        return True

    def _pending_txs(self) -> list:
        out = []
        for tid, tx in self.mempool.items():
            if tid in self._canon_txs or tid in self.behavior.censor:
                continue
            out.append(tx)
        return out

    def build_block(self, height: int, round: int) -> PoSBlock:
        tip = self.view.canonical_tip()
        cert = self.view.certs.get(tip.id)
        just = cert.precommits if cert is not None else ()
        return make_block(tip, self._pending_txs(), self.vid, round, just)

    def broadcast_vote(self, msg: ConsensusMessage, block: Optional[PoSBlock] = None) -> None:
        hidden = self.vote_filter(msg) if self.vote_filter is not None else set()
        to = [n for n in self.sim.nodes if n != self.name and n not in hidden]
        if msg.kind == VoteKind.PROPOSAL:
            self.sim.send(self.name, to, "proposal", (msg, block), honest=self.honest)
            self.deliver("proposal", (msg, block))
        else:
            self.sim.send(self.name, to, "vote", msg, honest=self.honest)
            self.deliver("vote", msg)
        self.sim.record("message", self.name, msg_kind=msg.kind.value, height=msg.height,
                        round=msg.round, value=None if msg.value is None else msg.value.value.hex())

    # ---- per tick ------------------------------------------------------------

    def refresh(self) -> None:
        if not self._dirty:
            return
        self._dirty = False
        v = self.view
        v.tick = self.sim.now
        v.sync()
        for kind, fields in v.events:
            self.sim.record(kind, self.name, **fields)
        v.events.clear()
        for entry in v.live.log[self._log_seen:]:
            self.sim.record(entry[0], self.name, number=entry[1], babylon_height=entry[2],
                            detail=list(entry[3:]))
        self._log_seen = len(v.live.log)
        self._sync_canonical()
        if self.sim.check_invariants:
            w = fork_point_violation(v)
            if w is not None:
                self.sim.record("invariant_violation", self.name, **w)

    def _sync_canonical(self) -> None:
        canon = self.view.canonical()
        prev = self._canon_prev
        if len(prev) <= len(canon) and prev and canon[len(prev) - 1] == prev[-1]:
            new = canon[len(prev):]
        else:
            self._canon_txs = {}
            self._unsettled = {}
            new = canon
        for bid in new:
            for tx in self.view.pos_blocks[bid].body:
                if tx.id not in self._canon_txs:
                    self._canon_txs[tx.id] = bid
                    if tx.id not in self.settled:
                        self._unsettled[tx.id] = bid
        self._canon_prev = canon
        done = [tid for tid, bid in self._unsettled.items() if self.view.checkpoint_pos(bid) != INF]
        for tid in done:
            del self._unsettled[tid]
            self.settled.add(tid)
            self.sim.record("tx_settled", self.name, tx=tid.value.hex())

    def on_tick(self, tick: int) -> None:
        self.refresh()
        v = self.view
        val = self.validator
        if val is not None:
            tip = v.canonical_tip()
            if val.state.height <= tip.height:
                val.start_height(tip.height + 1, tick, wait=self.sim.params.block_interval)
            if v.live.halted_at is not None or v.crisis_height is not None:
                val.halted = True
            val.step(tick, self)
        if self.duties and self.enhanced:
            self._duties(tick)
        if val is not None and self.enhanced and not self.behavior.silent_onchain:
            self._onchain_round(tick)
        self.refresh()

    def submit(self, kind: PayloadKind, data) -> None:
        tx = make_babylon_tx(kind, data, -1 if self.vid is None else self.vid, self.sim.params.chain_id)
        self.sim.submit_babylon(self.name, tx, data, honest=self.honest)

    def _duties(self, tick: int) -> None:
        v = self.view
        p = self.sim.params
        height = v.babylon.best.height
        if height - self.last_emit >= p.k_c:
            out = emit_checkpoint(v, -1 if self.vid is None else self.vid)
            if out is not None:
                tx, data = out
                self.sim.submit_babylon(self.name, tx, data, honest=self.honest)
                self.sim.record("checkpoint_emitted", self.name, blocks=len(data.headers),
                                first=data.headers[0].height, last=data.headers[-1].height)
                self.last_emit = height
        for cert_a, cert_b in v.conflicting_certificates():
            key = frozenset((cert_a.block_id, cert_b.block_id))
            if key in self.fraud_sent:
                continue
            proof = v.build_fraud_proof(cert_a, cert_b)
            self.fraud_sent.add(key)
            if proof is not None:
                self.submit(PayloadKind.FRAUD_PROOF, proof)
                self.sim.record("fraud_proof_sent", self.name, accused=list(proof.accused))
        if self.files_complaints:
            late = [tx for tid, tx in self.mempool.items()
                    if tid not in self._canon_txs and tid not in self.complained
                    and tx.kind == TxKind.PAYLOAD and height - self.known_at[tid] >= p.k_c]
            if late:
                self.submit(PayloadKind.CENSORSHIP_COMPLAINT, CensorshipComplaintData(tuple(late)))
                self.complained.update(tx.id for tx in late)
                self.sim.record("complaint_sent", self.name, txs=[tx.id.value.hex() for tx in late])
        ev = detect_stalling(v)
        if ev is not None and (self.last_stall is None or height - self.last_stall >= p.k_c):
            self.submit(PayloadKind.STALLING_EVIDENCE, ev)
            self.last_stall = height
            self.sim.record("stalling_evidence_sent", self.name, label=ev.height)

    def _onchain_round(self, tick: int) -> None:
        v = self.view
        rnd = v.act.round
        if rnd is None or v.act.halted_at is not None or v.crisis_height is not None:
            return
        val = self.validator
        height = v.babylon.best.height
        key = (rnd.b, rnd.height, rnd.number)
        if key not in self.frozen:
            s = val.state
            if s.height == rnd.height:
                self.frozen[key] = (s.locked_value, s.locked_round, s.valid_value, s.valid_round)
            else:
                self.frozen[key] = (None, -1, None, -1)
        locked_value, locked_round, valid_value, valid_round = self.frozen[key]
        if rnd.selected is None and height < rnd.b1 and ("p",) + key not in self.onchain_sent:
            tip = v.canonical_tip()
            prevotes = ()
            if valid_round >= 0 and valid_value is not None:
                block, vr = valid_value, valid_round
                prevotes = tuple(v.log.messages(rnd.height, vr, VoteKind.PREVOTE, block.id))
            else:
                if tip.height != rnd.height - 1:
                    return
                block, vr = self.build_block(rnd.height, BABYLON_ROUND), -1
            msg = ConsensusMessage(VoteKind.PROPOSAL, rnd.height, BABYLON_ROUND, block.id, vr,
                                   self.vid).signed(self.sim.keyring)
            self.submit(PayloadKind.CONSENSUS_MESSAGE, OnBabylonMessageData(msg, block, prevotes))
            self.onchain_sent.add(("p",) + key)
        if rnd.selected is not None and height < rnd.b2:
            sel_msg, sel_block = rnd.selected
            vkey = ("v",) + key + (sel_block.id,)
            if vkey in self.onchain_sent:
                return
            self.onchain_sent.add(vkey)
            allowed = (locked_value is None or sel_block.id == locked_value.id
                       or sel_msg.vr > locked_round)
            if not allowed:
                return
            for kind in (VoteKind.PREVOTE, VoteKind.PRECOMMIT):
                m = ConsensusMessage(kind, rnd.height, BABYLON_ROUND, sel_block.id, -1,
                                     self.vid).signed(self.sim.keyring)
                self.submit(PayloadKind.CONSENSUS_MESSAGE, OnBabylonMessageData(m))

    # ---- reporting -----------------------------------------------------------

    def report_tips(self) -> None:
        best = self.view.babylon.best
        if self.enhanced and best.id != self._tip_reported:
            self._tip_reported = best.id
            self.sim.record("babylon_tip", self.name, tip=best.id.value.hex(), height=best.height,
                            honest=self.honest)
        tip = self.view.canonical_tip()
        if tip.id != self._pos_tip_reported:
            self._pos_tip_reported = tip.id
            self.sim.record("pos_tip", self.name, tip=tip.id.value.hex(), height=tip.height,
                            honest=self.honest)
