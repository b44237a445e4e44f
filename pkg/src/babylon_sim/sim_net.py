"""Discrete-tick network simulator: miners, full nodes, delivery queue and trace."""

from __future__ import annotations

import dataclasses
import heapq
import json
import random
from typing import Callable, Iterable, Optional

from .babylon_chain import MinerNode, MiningProcess
from .core_types import (
    GENESIS_BABYLON,
    GENESIS_POS,
    BabylonBlock,
    ConsensusMessage,
    Keyring,
    PoSBlock,
    PoSTransaction,
    ProtocolParams,
    VoteKind,
    payload,
)
from .node import FullNode
from .tendermint import HONEST, Behavior

DELAY_POLICIES = ("max", "min", "random")


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, set, frozenset)):
        return [_jsonable(x) for x in v]
    if isinstance(v, bytes):
        return v.hex()
    if hasattr(v, "value") and isinstance(getattr(v, "value"), bytes):
        return v.value.hex()
    return v


class Trace:
    """Ordered run records; serialised as JSONL with sorted keys."""

    def __init__(self, records: Optional[list] = None):
        self.records: list[dict] = records if records is not None else []

    def emit(self, tick: int, kind: str, actor: Optional[str] = None, **fields) -> dict:
        rec = {"tick": tick, "kind": kind, "actor": actor}
        for k, v in fields.items():
            rec[k] = _jsonable(v)
        self.records.append(rec)
        return rec

    def of_kind(self, *kinds: str) -> list[dict]:
        return [r for r in self.records if r["kind"] in kinds]

    def header(self) -> dict:
        for r in self.records:
            if r["kind"] == "run_start":
                return r
        raise ValueError("trace has no run_start record")

    def dumps(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "Trace":
        with open(path, encoding="utf-8") as fh:
            return cls([json.loads(line) for line in fh if line.strip()])

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)


def _dedupe_key(kind: str, payload) -> tuple:
    if kind == "babylon_block":
        return (kind, payload[0].id)
    if kind == "proposal":
        return (kind, payload[0].id)
    if kind in ("vote", "pos_block", "pos_tx"):
        return (kind, payload.id)
    if kind == "babylon_data":
        return (kind, tuple(sorted(payload)))
    return (kind, id(payload))


class Simulation:
    """One run. Nodes are named ``v<i>`` (validators), ``o<j>`` (observers) and
    ``miner<k>``; every honest message arrives within ``delta`` ticks."""

    def __init__(self, params: ProtocolParams, *, delay: str = "max",
                 check_availability: bool = True, n_observers: int = 1,
                 corrupted: Optional[dict] = None, adversary_miner: bool = False,
                 mining_schedule: Optional[dict] = None, tx_interval: int = 0,
                 tx_count: Optional[int] = None, tx_targets: Optional[list] = None,
                 complaint_filers: Iterable[str] = ("o0",), fork_tie_break=None,
                 babylon_tie_break=None, script: Optional[Callable] = None,
                 scenario: str = "custom", control: bool = False, check_invariants: bool = True,
                 enhanced: bool = True):
        if delay not in DELAY_POLICIES:
            raise ValueError(f"delay must be one of {DELAY_POLICIES}")
        self.params = params
        self.delay = delay
        self.check_availability = check_availability
        self.babylon_tie_break = babylon_tie_break
        self.validators = list(range(params.n))
        self.keyring = Keyring(params.seed, self.validators)
        self.corrupted: dict[int, Behavior] = dict(corrupted or {})
        self.scenario = scenario
        self.control = control
        self.script = script
        self.check_invariants = check_invariants
        self.enhanced = enhanced
        self.now = 0
        self.trace = Trace()
        self._net_rng = random.Random(f"{params.seed}:net")
        self._queue: list = []
        self._seq = 0
        self._rank: dict[str, int] = {}
        self._archive: list = []
        self._archived: set = set()
        self._seen_pos: set = {GENESIS_POS.id}
        self.withheld: list[BabylonBlock] = []

        self.miners: dict[str, MinerNode] = {}
        for i in range(params.n_miners):
            m = MinerNode(i, True, params.quorum, check_availability, babylon_tie_break)
            self.miners[m.name] = m
        self.adversary_miner: Optional[MinerNode] = None
        if adversary_miner or params.beta > 0:
            m = MinerNode(params.n_miners, False, params.quorum, check_availability)
            self.adversary_miner = m
            self.miners[m.name] = m
        self.mining = MiningProcess(
            params.lam, params.beta, params.seed, list(range(params.n_miners)),
            self.adversary_miner.id if self.adversary_miner is not None else None,
            mining_schedule,
        )

        filers = set(complaint_filers)
        self.nodes: dict[str, FullNode] = {}
        for v in self.validators:
            beh = self.corrupted.get(v)
            name = f"v{v}"
            if beh is None:
                self.nodes[name] = FullNode(self, name, v, HONEST, True, True, name in filers,
                                            fork_tie_break, enhanced)
            else:
                self.nodes[name] = FullNode(self, name, v, beh, False, False, False,
                                            enhanced=enhanced)
        for j in range(n_observers):
            name = f"o{j}"
            self.nodes[name] = FullNode(self, name, None, HONEST, True, True, name in filers,
                                        fork_tie_break, enhanced)
        for name in list(self.miners) + list(self.nodes) + ["env", "adversary"]:
            self._rank.setdefault(name, len(self._rank))

        self.tx_interval = tx_interval
        self.tx_count = tx_count
        self.tx_targets = tx_targets
        self.env_txs: list[PoSTransaction] = []

        self.trace.emit(0, "run_start", None,
                        params=dataclasses.asdict(params),
                        babylon_genesis=GENESIS_BABYLON.id.value.hex(),
                        pos_genesis=GENESIS_POS.id.value.hex(),
                        validators=self.validators,
                        honest_validators=[v for v in self.validators if v not in self.corrupted],
                        nodes=[{"name": n, "honest": nd.honest, "validator": nd.vid is not None}
                               for n, nd in self.nodes.items()],
                        scenario=scenario, control=control, delay=delay,
                        check_availability=check_availability, enhanced=enhanced)
        for m in self.miners.values():
            self.trace.emit(0, "miner", m.name, honest=m.honest)

    # ---- recording ----------------------------------------------------------

    def record(self, kind: str, actor: Optional[str], **fields) -> None:
        self.trace.emit(self.now, kind, actor, **fields)

    def note_pos_block(self, block: PoSBlock) -> None:
        if block.id in self._seen_pos:
            return
        self._seen_pos.add(block.id)
        self.record("pos_block", None, id=block.id, parent=block.parent, height=block.height,
                    proposer=block.header.proposer, round=block.header.round,
                    txs=[tx.id for tx in block.body])

    # ---- network --------------------------------------------------------------

    def honest_delay(self) -> int:
        d = self.params.delta
        if self.delay == "max":
            return d
        if self.delay == "min":
            return 1
        return self._net_rng.randint(1, d)

    def send(self, sender: str, recipients: Iterable[str], kind: str, payload,
             honest: bool = True, delay: Optional[int] = None) -> None:
        for r in recipients:
            d = self.honest_delay() if delay is None else delay
            if honest and not 1 <= d <= self.params.delta:
                raise ValueError("honest messages must arrive within delta ticks")
            d = max(d, 1)
            self._seq += 1
            rank = self._rank.setdefault(sender, len(self._rank))
            heapq.heappush(self._queue, (self.now + d, self.now, rank, self._seq, r, kind, payload))

    def broadcast(self, sender: str, kind: str, payload, honest: bool = True,
                  delay: Optional[int] = None) -> None:
        self.send(sender, [n for n in self.nodes if n != sender], kind, payload, honest, delay)

    def submit_babylon(self, sender: str, tx, data, honest: bool = True,
                       miners: Optional[Iterable[str]] = None, delay: Optional[int] = None) -> None:
        self.record("babylon_tx_submitted", sender, tx=tx.id, payload_kind=tx.payload_kind.value,
                    data=data is not None)
        self.send(sender, list(miners) if miners is not None else list(self.miners),
                  "babylon_tx", (tx, data), honest, delay)

    def release_data(self, sender: str, datas: dict, delay: Optional[int] = None) -> None:
        """Publish commitment data to every miner and node."""
        self.send(sender, list(self.miners) + list(self.nodes), "babylon_data", dict(datas),
                  honest=False, delay=delay)

    def _deliver(self, recipient: str, kind: str, payload) -> None:
        m = self.miners.get(recipient)
        if m is not None:
            self._deliver_miner(m, kind, payload)
            return
        node = self.nodes.get(recipient)
        if node is None:
            return
        if node.honest:
            self._archive_payload(kind, payload)
        node.deliver(kind, payload)

    def _archive_payload(self, kind: str, payload) -> None:
        key = _dedupe_key(kind, payload)
        if key in self._archived:
            return
        self._archived.add(key)
        self._archive.append((kind, payload))

    def _deliver_miner(self, m: MinerNode, kind: str, payload) -> None:
        if kind == "babylon_tx":
            tx, data = payload
            v = m.receive_tx(tx, data)
            self.record("babylon_tx_received", m.name, tx=tx.id, valid=bool(v),
                        reason=v.reason, honest=m.honest)
        elif kind == "babylon_block":
            block, datas = payload
            m.receive_block(block, datas)
        elif kind == "babylon_data":
            for h, d in payload.items():
                m.data_store.setdefault(h, d)

    # ---- mining -------------------------------------------------------------

    def _mine(self, mid: int) -> None:
        m = next(x for x in self.miners.values() if x.id == mid)
        block = m.mine(self.now)
        private = not m.honest and m.withhold
        self.record("babylon_block", m.name, id=block.id, parent=block.parent, height=block.height,
                    miner=m.name, txs=[tx.id for tx in block.txs], private=private)
        if private:
            self.withheld.append(block)
            return
        datas = m.datas_for(block)
        others = [n for n in list(self.miners) + list(self.nodes) if n != m.name]
        self.send(m.name, others, "babylon_block", (block, datas), honest=m.honest)

    def release_withheld(self, delay: Optional[int] = None) -> list[BabylonBlock]:
        """Publish the adversary miner's private blocks, oldest first."""
        m = self.adversary_miner
        out = list(self.withheld)
        self.withheld.clear()
        others = [n for n in list(self.miners) + list(self.nodes) if n != m.name]
        for block in out:
            self.send(m.name, others, "babylon_block", (block, m.datas_for(block)),
                      honest=False, delay=delay)
            self.record("babylon_release", m.name, id=block.id, height=block.height)
        return out

    # ---- environment ----------------------------------------------------------

    def inject_tx(self, tx: PoSTransaction, targets: Optional[Iterable[str]] = None) -> None:
        names = list(targets) if targets is not None else list(self.nodes)
        self.env_txs.append(tx)
        self.record("env_tx", "env", tx=tx.id, targets=names)
        self.send("env", names, "pos_tx", tx)

    def _environment(self) -> None:
        k = self.tx_interval
        if k <= 0 or self.now == 0 or self.now % k:
            return
        if self.tx_count is not None and len(self.env_txs) >= self.tx_count:
            return
        self.inject_tx(payload(f"tx-{len(self.env_txs)}"), self.tx_targets)

    # ---- adversary helpers ------------------------------------------------------

    def sign(self, kind: VoteKind, height: int, round: int, value, signer: int,
             vr: int = -1) -> ConsensusMessage:
        return ConsensusMessage(kind, height, round, value, vr, signer).signed(self.keyring)

    def spawn_late_node(self, at: Optional[int] = None, **kw) -> FullNode:
        return spawn_late_node(self, self.now if at is None else at, **kw)

    # ---- main loop ----------------------------------------------------------------

    def step(self) -> None:
        t = self.now
        mid = self.mining.draw(t)
        if mid is not None:
            self._mine(mid)
        q = self._queue
        while q and q[0][0] <= t:
            _, _, _, _, r, kind, p = heapq.heappop(q)
            self._deliver(r, kind, p)
        for name in sorted(self.nodes):
            self.nodes[name].on_tick(t)
        self._environment()
        if self.script is not None:
            self.script(self, t)
        self._report_tips()
        self.now += 1

    def _report_tips(self) -> None:
        for m in self.miners.values():
            tip = m.tree.best
            if getattr(m, "_reported", None) != tip.id:
                m._reported = tip.id
                self.record("babylon_tip", m.name, tip=tip.id, height=tip.height, honest=m.honest)
            if not m.honest and m.private_tip is not None:
                b = m.tree.blocks[m.private_tip]
                if getattr(m, "_reported_private", None) != b.id:
                    m._reported_private = b.id
                    self.record("babylon_tip", m.name + ":private", tip=b.id, height=b.height,
                                honest=False)
        for name in sorted(self.nodes):
            self.nodes[name].report_tips()

    def run(self, max_ticks: int, until: Optional[Callable[["Simulation"], bool]] = None) -> Trace:
        while self.now < max_ticks:
            self.step()
            if until is not None and until(self):
                break
        self.record("run_end", None, complete=self.now >= max_ticks)
        return self.trace

    def honest_nodes(self) -> list[FullNode]:
        return [n for n in self.nodes.values() if n.honest]


def spawn_late_node(sim: Simulation, at: int, name: Optional[str] = None,
                    enhanced: Optional[bool] = None, tie_break=None) -> FullNode:
    """Add an honest non-validator node that replays every public message seen so far."""
    if at > sim.now:
        raise ValueError("a late node cannot join in the future")
    name = name or f"late{sum(1 for n in sim.nodes if n.startswith('late'))}"
    node = FullNode(sim, name, None, HONEST, True, True, False, tie_break,
                    sim.enhanced if enhanced is None else enhanced)
    for kind, p in sim._archive:
        node.deliver(kind, p)
    sim.nodes[name] = node
    sim._rank.setdefault(name, len(sim._rank))
    sim.record("node_joined", name, at=at, replayed=len(sim._archive))
    node.refresh()
    node.report_tips()
    return node
