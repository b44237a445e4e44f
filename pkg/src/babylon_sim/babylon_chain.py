"""Simulated timestamping chain: block trees, miners, mining draws and security scans."""

from __future__ import annotations

import random
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .core_types import (
    GENESIS_BABYLON,
    BabylonBlock,
    BabylonTx,
    CensorshipComplaintData,
    CheckpointData,
    CheckpointError,
    CommitmentKind,
    ConsensusMessage,
    FraudProofData,
    Hash,
    OnBabylonMessageData,
    PayloadKind,
    StallingEvidenceData,
    VoteKind,
    compute_checkpoint_commitment,
    compute_txroot,
    message_commitment_of,
)


@dataclass(frozen=True)
class Validation:
    ok: bool
    reason: Optional[str] = None

    def __bool__(self) -> bool:
        return self.ok


ACCEPT = Validation(True)


def _reject(reason: str) -> Validation:
    return Validation(False, reason)


def _check_checkpoint(h: Hash, data) -> Validation:
    if not isinstance(data, CheckpointData):
        return _reject("malformed")
    try:
        if compute_checkpoint_commitment(data) != h:
            return _reject("hash_mismatch")
    except CheckpointError:
        return _reject("malformed")
    for root, body in zip(data.txroots, data.bodies):
        if compute_txroot(body) != root:
            return _reject("txroot_mismatch")
    return ACCEPT


def miner_validate_commitment(tx: BabylonTx, data, quorum: Optional[int] = None,
                              check_availability: bool = True) -> Validation:
    """Miner-side validation of a (tx, D) pair.

    Miners only check that h commits to D (plus the few structural rules each
    evidence kind needs). They never compare separate txroots against header
    roots and never look at PoS finality.
    """
    if data is None:
        return _reject("data_missing") if check_availability else ACCEPT
    c = tx.commitment
    kind = tx.payload_kind
    if kind == PayloadKind.CHECKPOINT:
        if c.kind != CommitmentKind.CHECKPOINT:
            return _reject("malformed")
        return _check_checkpoint(c.h, data)
    if c.kind != CommitmentKind.MESSAGE:
        return _reject("malformed")
    try:
        if message_commitment_of(data) != c.h:
            return _reject("hash_mismatch")
    except ValueError:
        return _reject("malformed")

    if kind == PayloadKind.FRAUD_PROOF:
        if not isinstance(data, FraudProofData):
            return _reject("malformed")
        for h, d in ((data.checkpoint_a, data.data_a), (data.checkpoint_b, data.data_b)):
            v = _check_checkpoint(h, d)
            if not v:
                return v
        if message_commitment_of(data.evidence) != data.evidence_commitment:
            return _reject("hash_mismatch")
        return ACCEPT
    if kind == PayloadKind.CENSORSHIP_COMPLAINT:
        return ACCEPT if isinstance(data, CensorshipComplaintData) else _reject("malformed")
    if kind == PayloadKind.STALLING_EVIDENCE:
        if not isinstance(data, StallingEvidenceData):
            return _reject("malformed")
        return _check_checkpoint(data.checkpoint, data.data)
    if kind == PayloadKind.CONSENSUS_MESSAGE:
        if not isinstance(data, OnBabylonMessageData) or not isinstance(data.message, ConsensusMessage):
            return _reject("malformed")
        msg = data.message
        if msg.kind == VoteKind.PROPOSAL:
            if data.block is None:
                return _reject("data_missing")
            if data.block.id != msg.value or not data.block.is_well_formed():
                return _reject("hash_mismatch")
            if msg.vr >= 0:
                signers = {
                    p.signer for p in data.prevotes
                    if p.kind == VoteKind.PREVOTE and p.height == msg.height
                    and p.round == msg.vr and p.value == msg.value
                }
                if quorum is not None and len(signers) < quorum:
                    return _reject("data_missing")
        return ACCEPT
    return _reject("malformed")


# --------------------------------------------------------------------------
# block tree


class BlockTree:
    """All Babylon blocks a participant has accepted, with the longest-chain rule.

    The best tip is maintained incrementally, so equal-height competitors are
    resolved by ``tie_break(current, candidate)``; the default keeps the
    first-received tip.
    """

    def __init__(self, genesis: BabylonBlock = GENESIS_BABYLON,
                 tie_break: Optional[Callable[[BabylonBlock, BabylonBlock], BabylonBlock]] = None):
        self.genesis = genesis
        self.blocks: dict[Hash, BabylonBlock] = {genesis.id: genesis}
        self.paths: dict[Hash, tuple] = {genesis.id: (genesis.id,)}
        self.arrival: dict[Hash, int] = {genesis.id: 0}
        self.orphans: dict[Hash, list] = {}
        self.tie_break = tie_break
        self.best = genesis
        self._seq = 0

    def __contains__(self, block_id) -> bool:
        return block_id in self.blocks

    def add(self, block: BabylonBlock) -> list[BabylonBlock]:
        """Insert a block; returns every block that became connected."""
        if block.id in self.blocks:
            return []
        if block.parent not in self.blocks:
            self.orphans.setdefault(block.parent, []).append(block)
            return []
        added = []
        stack = [block]
        while stack:
            b = stack.pop()
            if b.id in self.blocks:
                continue
            parent = self.blocks[b.parent]
            if b.height != parent.height + 1:
                continue
            self._seq += 1
            self.blocks[b.id] = b
            self.paths[b.id] = self.paths[b.parent] + (b.id,)
            self.arrival[b.id] = self._seq
            added.append(b)
            self._consider(b)
            stack.extend(self.orphans.pop(b.id, ()))
        return added

    def _consider(self, b: BabylonBlock) -> None:
        if b.height > self.best.height:
            self.best = b
        elif b.height == self.best.height and b.id != self.best.id and self.tie_break:
            self.best = self.tie_break(self.best, b)

    def chain(self, tip: Optional[Hash] = None) -> list[BabylonBlock]:
        tip = self.best.id if tip is None else tip
        return [self.blocks[i] for i in self.paths[tip]]

    def is_ancestor(self, a: Hash, b: Hash) -> bool:
        """True iff block a is on the path to block b (inclusive)."""
        pa, pb = self.paths[a], self.paths[b]
        return len(pa) <= len(pb) and pb[len(pa) - 1] == a

    def tips(self) -> list[BabylonBlock]:
        parents = {b.parent for b in self.blocks.values()}
        return [b for b in self.blocks.values() if b.id not in parents]


def longest_chain(blocks: Iterable[BabylonBlock], tie_break=None,
                  genesis: BabylonBlock = GENESIS_BABYLON) -> list[BabylonBlock]:
    """Longest validly linked chain over a set of blocks, in the given receipt order."""
    tree = BlockTree(genesis, tie_break)
    for b in blocks:
        tree.add(b)
    return tree.chain()


def deep_prefix(chain, r: int):
    if r < 0:
        raise ValueError("r must be >= 0")
    if r == 0:
        return list(chain)
    return list(chain[:-r]) if len(chain) > r else []


def adversary_prefers(predicate: Callable[[BabylonBlock], bool]):
    """Tie-break hook handing equal-height ties to whichever block satisfies predicate."""
    def tie_break(current, candidate):
        return candidate if predicate(candidate) and not predicate(current) else current
    return tie_break


# --------------------------------------------------------------------------
# miners


class MinerNode:
    def __init__(self, mid: int, honest: bool = True, quorum: Optional[int] = None,
                 check_availability: bool = True, tie_break=None):
        self.id = mid
        self.name = f"miner{mid}"
        self.honest = honest
        self.quorum = quorum
        self.check_availability = check_availability
        self.tree = BlockTree(tie_break=tie_break)
        # FIFO by receipt: tx id -> tx
        self.mempool: dict[Hash, BabylonTx] = {}
        self.data_store: dict[Hash, object] = {}
        self.rejected: dict[Hash, str] = {}
        self._chain_txids: set = set()
        self._chain_tip = self.tree.best.id
        # adversarial controls
        self.withhold = False
        self.private_tip: Optional[Hash] = None
        self.include: Optional[Callable[[BabylonTx], bool]] = None

    @property
    def tip(self) -> BabylonBlock:
        return self.tree.best

    def validate(self, tx: BabylonTx, data) -> Validation:
        return miner_validate_commitment(tx, data, self.quorum, self.check_availability)

    def receive_tx(self, tx: BabylonTx, data) -> Validation:
        v = self.validate(tx, data)
        if not v:
            self.rejected[tx.id] = v.reason
            return v
        if data is not None:
            self.data_store[tx.commitment.h] = data
        if tx.id not in self.mempool:
            self.mempool[tx.id] = tx
        return v

    def block_valid(self, block: BabylonBlock, datas: dict) -> bool:
        for tx in block.txs:
            data = datas.get(tx.commitment.h, self.data_store.get(tx.commitment.h))
            if not self.validate(tx, data):
                return False
        return True

    def receive_block(self, block: BabylonBlock, datas: dict) -> list[BabylonBlock]:
        if block.id in self.tree:
            return []
        if not self.block_valid(block, datas):
            return []
        for tx in block.txs:
            d = datas.get(tx.commitment.h)
            if d is not None:
                self.data_store.setdefault(tx.commitment.h, d)
        return self.tree.add(block)

    def _sync_chain_txids(self) -> None:
        tip = self.tree.best.id
        if tip == self._chain_tip:
            return
        if self.tree.is_ancestor(self._chain_tip, tip):
            start = len(self.tree.paths[self._chain_tip])
            ids = self.tree.paths[tip][start:]
        else:
            self._chain_txids = set()
            ids = self.tree.paths[tip]
        for bid in ids:
            self._chain_txids.update(tx.id for tx in self.tree.blocks[bid].txs)
        self._chain_tip = tip

    def pending(self) -> list[BabylonTx]:
        self._sync_chain_txids()
        return [tx for tid, tx in self.mempool.items() if tid not in self._chain_txids]

    def mine(self, tick: int) -> BabylonBlock:
        if self.private_tip is not None:
            parent = self.tree.blocks[self.private_tip]
            in_chain = {tx.id for bid in self.tree.paths[parent.id] for tx in self.tree.blocks[bid].txs}
            txs = [tx for tid, tx in self.mempool.items() if tid not in in_chain]
        else:
            parent = self.tree.best
            txs = self.pending()
        if self.include is not None:
            txs = [tx for tx in txs if self.include(tx)]
        block = BabylonBlock(parent.id, parent.height + 1, tuple(txs), self.id, tick)
        self.tree.add(block)
        if self.private_tip is not None:
            self.private_tip = block.id
        return block

    def datas_for(self, block: BabylonBlock) -> dict:
        return {tx.commitment.h: self.data_store[tx.commitment.h]
                for tx in block.txs if tx.commitment.h in self.data_store}


class MiningProcess:
    """Aggregate Bernoulli(lam) block arrivals, one draw per tick.

    Block occurrence uses the stream ``Random(f"{seed}:mining")``; who mines a
    block is drawn from a separate stream so the occurrence sequence can be
    replayed on its own.
    """

    def __init__(self, lam: float, beta: float, seed, honest_ids, adversary_id=None,
                 schedule: Optional[dict] = None):
        self.lam = lam
        self.beta = beta
        self.honest_ids = list(honest_ids)
        self.adversary_id = adversary_id
        self.schedule = schedule
        self.rng = random.Random(f"{seed}:mining")
        self.pick = random.Random(f"{seed}:miner-choice")

    def draw(self, tick: int):
        if self.schedule is not None:
            return self.schedule.get(tick)
        if self.rng.random() >= self.lam:
            return None
        if self.adversary_id is not None and self.pick.random() < self.beta:
            return self.adversary_id
        return self.honest_ids[self.pick.randrange(len(self.honest_ids))]


# --------------------------------------------------------------------------
# security scan over a recorded trace


@dataclass
class SecurityResult:
    holds: bool
    witness: Optional[dict] = None

    def __bool__(self) -> bool:
        return self.holds


@dataclass
class _Timeline:
    honest: bool
    ticks: list = field(default_factory=list)
    tips: list = field(default_factory=list)


class BabylonTraceIndex:
    """Chains of every participant over time, rebuilt from trace records.

    Consumes ``babylon_block``, ``babylon_tip`` and ``babylon_tx_received``
    records plus the ``run_start``/``run_end`` bookends.
    """

    def __init__(self, records):
        self.delta = 1
        self.end = 0
        self.parent: dict[str, Optional[str]] = {}
        self.height: dict[str, int] = {}
        self.mined_at: dict[str, int] = {}
        self.txs_in: dict[str, list] = {}
        self.timelines: dict[str, _Timeline] = {}
        self.received: dict[str, dict] = {}
        self.honest_miners: set = set()
        genesis = None
        for rec in records:
            kind = rec["kind"]
            if kind == "run_start":
                self.delta = rec["params"]["delta"]
                genesis = rec["babylon_genesis"]
            elif kind == "run_end":
                self.end = rec["tick"]
            elif kind == "babylon_block":
                bid = rec["id"]
                if bid not in self.height:
                    self.parent[bid] = rec["parent"]
                    self.height[bid] = rec["height"]
                    self.mined_at[bid] = rec["tick"]
                    for t in rec["txs"]:
                        self.txs_in.setdefault(t, []).append(bid)
            elif kind == "babylon_tip":
                tl = self.timelines.setdefault(rec["actor"], _Timeline(rec["honest"]))
                if tl.ticks and tl.ticks[-1] == rec["tick"]:
                    tl.tips[-1] = rec["tip"]
                else:
                    tl.ticks.append(rec["tick"])
                    tl.tips.append(rec["tip"])
            elif kind == "babylon_tx_received":
                if rec["honest"]:
                    self.honest_miners.add(rec["actor"])
                    if rec["valid"]:
                        self.received.setdefault(rec["tx"], {}).setdefault(rec["actor"], rec["tick"])
            elif kind == "miner":
                if rec["honest"]:
                    self.honest_miners.add(rec["actor"])
        if genesis is not None:
            self.parent.setdefault(genesis, None)
            self.height.setdefault(genesis, 0)
            self.mined_at.setdefault(genesis, 0)
        self._paths: dict[str, tuple] = {}
        for tl in self.timelines.values():
            if not tl.ticks and genesis is not None:
                tl.ticks.append(0)
                tl.tips.append(genesis)
        self.end = max([self.end] + [tl.ticks[-1] for tl in self.timelines.values() if tl.ticks])

    def path(self, bid: str) -> tuple:
        p = self._paths.get(bid)
        if p is None:
            stack = []
            cur = bid
            while cur is not None and cur not in self._paths:
                stack.append(cur)
                cur = self.parent[cur]
            base = self._paths[cur] if cur is not None else ()
            for b in reversed(stack):
                base = base + (b,)
                self._paths[b] = base
            p = self._paths[bid]
        return p

    def contains(self, tip: str, bid: str) -> bool:
        p = self.path(tip)
        h = self.height[bid]
        return h < len(p) and p[h] == bid

    def _common(self, a: str, b: str) -> int:
        pa, pb = self.path(a), self.path(b)
        lo, hi = 0, min(len(pa), len(pb)) - 1
        # last index where the two paths agree
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if pa[mid] == pb[mid]:
                lo = mid
            else:
                hi = mid - 1
        return lo

    def honest_timelines(self):
        return [tl for tl in self.timelines.values() if tl.honest]

    def last_absent(self) -> dict:
        """For every block, the last tick at which some honest chain lacked it."""
        out: dict[str, int] = {}
        for tl in self.honest_timelines():
            final = tl.tips[-1]
            fpath = self.path(final)
            # blocks off the final chain stay absent until the end
            ans: dict[int, int] = {}
            m = len(fpath)
            for k in range(len(tl.tips) - 1, -1, -1):
                cp = self._common(tl.tips[k], final)
                if cp + 1 < m:
                    end_k = (tl.ticks[k + 1] - 1) if k + 1 < len(tl.ticks) else self.end
                    for h in range(cp + 1, m):
                        ans[h] = end_k
                    m = cp + 1
            # before a participant exists it lacks nothing
            on_final = set(fpath)
            for bid, h in self.height.items():
                if bid in on_final:
                    v = ans.get(h, -1)
                else:
                    v = self.end
                if v > out.get(bid, -1):
                    out[bid] = v
        return out

    def max_unsafe_depth(self) -> tuple[int, Optional[dict]]:
        """Largest r for which the safety clause is violated (0 if none)."""
        absent = self.last_absent()
        starts = []
        for name, tl in self.timelines.items():
            for k, t in enumerate(tl.ticks):
                starts.append((t, name, k))
        starts.sort()
        start_ticks = [s[0] for s in starts]
        best, witness = 0, None
        for bid, last in absent.items():
            deadline = last - self.delta
            if deadline < 0:
                continue
            h = self.height[bid]
            lo = bisect_left(start_ticks, self.mined_at[bid])
            hi = bisect_right(start_ticks, deadline)
            # a tip adopted before the block existed may still hold it until the next change
            for t, name, k in starts[lo:hi]:
                tip = self.timelines[name].tips[k]
                depth = self.height[tip] - h
                if depth > best and self.contains(tip, bid):
                    best = depth
                    witness = {"block": bid, "node": name, "tick": t, "depth": depth,
                               "absent_until": last}
        return best, witness

    def common_length(self):
        """(ticks, lengths): common-prefix height of honest chains at each change."""
        tls = self.honest_timelines()
        events = sorted({t for tl in tls for t in tl.ticks})
        ticks, lengths = [], []
        idx = [0] * len(tls)
        for t in events:
            tips = []
            for i, tl in enumerate(tls):
                while idx[i] + 1 < len(tl.ticks) and tl.ticks[idx[i] + 1] <= t:
                    idx[i] += 1
                if tl.ticks[idx[i]] <= t:
                    tips.append(tl.tips[idx[i]])
            if not tips:
                continue
            c = min(self.height[x] for x in tips)
            ref = tips[0]
            for x in tips[1:]:
                c = min(c, self._common(ref, x))
            ticks.append(t)
            lengths.append(c)
        return ticks, lengths

    def tx_liveness_violation(self, r: int) -> Optional[dict]:
        if not self.honest_miners:
            return None
        cticks, clens = self.common_length()
        if not cticks:
            return None

        def common_at(t):
            i = bisect_right(cticks, t) - 1
            return clens[i] if i >= 0 else 0

        for tx, by_miner in self.received.items():
            if not self.honest_miners <= set(by_miner):
                continue
            t_r = max(by_miner.values())
            target = common_at(t_r) + 2 * r
            i = bisect_right(cticks, t_r)
            while i < len(cticks) and clens[i] <= target:
                i += 1
            if i == len(cticks):
                continue
            t_star = cticks[i]
            for name, tl in self.timelines.items():
                if not tl.honest:
                    continue
                k = bisect_right(tl.ticks, t_star) - 1
                checks = [max(k, 0)]
                for j in range(max(k, 0) + 1, len(tl.tips)):
                    if not self.contains(tl.tips[j], tl.tips[j - 1]):
                        checks.append(j)
                for j in checks:
                    tip = tl.tips[j]
                    th = self.height[tip]
                    if not any(self.contains(tip, b) and th - self.height[b] >= r
                               for b in self.txs_in.get(tx, ())):
                        return {"tx": tx, "node": name, "tick": max(tl.ticks[j], t_star),
                                "received": t_r}
        return None


def babylon_security_check(trace, r: int) -> SecurityResult:
    """Scan a trace for violations of the depth-r safety and liveness clauses.

    Safety: a block that was r-deep in any participant's chain (adversarial
    private chains included) at tick s must be on every honest chain from
    s + delta on. Liveness: a valid tx held by all honest miners must be r-deep
    on every honest chain once the honest common prefix has grown by more than
    2r blocks since the last of them received it.
    """
    if r < 1:
        raise ValueError("r must be >= 1")
    idx = trace if isinstance(trace, BabylonTraceIndex) else BabylonTraceIndex(trace)
    if not idx.timelines:
        return SecurityResult(True)
    depth, witness = idx.max_unsafe_depth()
    if depth >= r:
        return SecurityResult(False, {"clause": "safety", **witness})
    w = idx.tx_liveness_violation(r)
    if w is not None:
        return SecurityResult(False, {"clause": "liveness", **w})
    return SecurityResult(True)
