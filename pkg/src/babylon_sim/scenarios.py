"""Named scenarios: honest baseline, attacks on safety and liveness, and demos."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional

from .core_types import (
    PayloadKind,
    PoSBlock,
    PoSTransaction,
    ProtocolParams,
    TxKind,
    VoteKind,
    checkpoint_data_for,
    make_babylon_tx,
    make_block,
    payload,
)
from .sim_net import Simulation, Trace
from .tendermint import Behavior, proposer_for
from .theorem import ScenarioReport, check_theorem


@dataclass
class ScenarioConfig:
    scenario: str = "honest_run"
    params: ProtocolParams = field(default_factory=ProtocolParams)
    max_ticks: Optional[int] = None
    delay: str = "max"
    arm: str = ""
    options: dict = field(default_factory=dict)
    trace: Optional[str] = None
    report: Optional[str] = None

    def opt(self, key: str, default):
        v = self.options.get(key, default)
        return type(default)(v) if default is not None and not isinstance(v, type(default)) else v


@dataclass
class ScenarioResult:
    sim: Simulation
    trace: Trace
    report: ScenarioReport


def withdrawal_request(v: int) -> PoSTransaction:
    return PoSTransaction(TxKind.WITHDRAWAL_REQUEST, v, f"withdraw:{v}".encode())


def certify(sim: Simulation, block: PoSBlock, round: int, signers) -> tuple:
    """Prevotes and precommits from ``signers`` for ``block`` at ``round``."""
    h = block.height
    pv = tuple(sim.sign(VoteKind.PREVOTE, h, round, block.id, v) for v in sorted(signers))
    pc = tuple(sim.sign(VoteKind.PRECOMMIT, h, round, block.id, v) for v in sorted(signers))
    return pv, pc


def build_fork(sim: Simulation, parent: PoSBlock, parent_cert, round: int, signers,
               bodies) -> list:
    """A privately finalized chain on ``parent``: [(block, prevotes, precommits), ...]."""
    out = []
    just = tuple(parent_cert)
    prev = parent
    r = round
    for body in bodies:
        prop = proposer_for(prev.height + 1, r, sim.validators)
        if prop not in signers:
            prop = sorted(signers)[0]
        block = make_block(prev, body, prop, r, just)
        pv, pc = certify(sim, block, r, signers)
        out.append((block, pv, pc))
        just, prev, r = pc, block, 0
    return out


def fork_checkpoint(fork: list):
    blocks = [b for b, _, _ in fork]
    just = [m for _, _, pc in fork for m in pc]
    return checkpoint_data_for(blocks, justification=just)


def _first_final(sim: Simulation, node: str, height: int):
    view = sim.nodes[node].view
    ids = view.final_by_height.get(height)
    if not ids:
        return None
    bid = ids[0]
    return view.pos_blocks[bid], view.certs.get(bid)


def _spawn_late(sim: Simulation, at_tick: int, **kw):
    def hook(s, t):
        if t == at_tick:
            s.spawn_late_node(**kw)
    return hook


def _chain_scripts(*scripts):
    def run(sim, t):
        for s in scripts:
            if s is not None:
                s(sim, t)
    return run


def _finish(sim: Simulation, cfg: ScenarioConfig, default_ticks: int) -> ScenarioResult:
    ticks = cfg.max_ticks or default_ticks
    trace = sim.run(ticks)
    report = check_theorem(trace.records)
    return ScenarioResult(sim, trace, report)


def _annotate(res: ScenarioResult, **fields) -> ScenarioResult:
    """Attach scenario-level observations to the report and to the trace, so offline checks see them."""
    rec = res.trace.emit(res.sim.now, "scenario_summary", None, **fields)
    res.report.extra.update({k: rec[k] for k in fields})
    return res


def _late_tick(cfg: ScenarioConfig, default_ticks: int) -> int:
    return (cfg.max_ticks or default_ticks) - 3


# --------------------------------------------------------------------------
# baseline


def scenario_honest_run(cfg: ScenarioConfig) -> ScenarioResult:
    ticks = 800
    sim = Simulation(cfg.params, delay=cfg.delay, tx_interval=cfg.opt("tx_interval", 20),
                     scenario="honest_run")
    sim.script = _spawn_late(sim, _late_tick(cfg, ticks))
    return _finish(sim, cfg, ticks)


# --------------------------------------------------------------------------
# safety


class SplitViewAttack:
    """2f+1 signers finalize a public block and, for one victim, a conflicting
    chain that also carries their withdrawal requests."""

    def __init__(self, cfg: ScenarioConfig, corrupt: list, victim: str):
        self.height = cfg.opt("fork_height", 3)
        self.corrupt = corrupt
        self.victim = victim
        self.done = False

    def vote_filter(self, msg):
        if msg.kind == VoteKind.PRECOMMIT and msg.height == self.height:
            return {self.victim}
        return set()

    def __call__(self, sim: Simulation, t: int) -> None:
        if self.done:
            return
        spy = f"v{self.corrupt[0]}"
        hit = _first_final(sim, spy, self.height)
        if hit is None or hit[1] is None:
            return
        a_block, a_cert = hit
        view = sim.nodes[spy].view
        parent = view.pos_blocks[a_block.parent]
        pcert = view.certs.get(parent.id)
        fork = build_fork(sim, parent, pcert.precommits if pcert else (), a_cert.round, self.corrupt,
                          [(payload("conflict"),), tuple(withdrawal_request(v) for v in self.corrupt)])
        for block, _pv, pc in fork:
            sim.send("adversary", [self.victim], "pos_block", block, honest=False, delay=1)
            for m in pc:
                sim.send("adversary", [self.victim], "vote", m, honest=False, delay=1)
        sim.record("attack", "adversary", step="split_view", fork=[b.id for b, _, _ in fork])
        self.done = True


class PrivateForkEscape:
    """A mining-majority adversary checkpoints a private PoS fork on a private
    timestamping chain and releases both once its withdrawals have matured."""

    def __init__(self, cfg: ScenarioConfig, corrupt: list):
        self.height = cfg.opt("fork_height", 3)
        self.corrupt = corrupt
        self.stage = 0
        self.ckpt_tx = None
        self.fork_started = None

    def __call__(self, sim: Simulation, t: int) -> None:
        m = sim.adversary_miner
        p = sim.params
        if self.stage == 0:
            spy = f"v{self.corrupt[0]}"
            hit = _first_final(sim, spy, self.height)
            if hit is None or hit[1] is None:
                return
            a_block, a_cert = hit
            view = sim.nodes[spy].view
            parent = view.pos_blocks[a_block.parent]
            pcert = view.certs.get(parent.id)
            fork = build_fork(sim, parent, pcert.precommits if pcert else (), a_cert.round,
                              self.corrupt,
                              [(payload("conflict"),),
                               tuple(withdrawal_request(v) for v in self.corrupt)])
            data = fork_checkpoint(fork)
            tx = make_babylon_tx(PayloadKind.CHECKPOINT, data, self.corrupt[0], p.chain_id)
            m.withhold = True
            m.private_tip = m.tree.best.id
            own = {self.corrupt[0]}
            m.include = lambda btx: btx.commitment.submitter in own
            m.receive_tx(tx, data)
            self.ckpt_tx = tx
            self.fork_started = m.tree.best.height
            sim.record("attack", "adversary", step="private_fork", fork=[b.id for b, _, _ in fork])
            self.stage = 1
            return
        if self.stage == 1:
            tip = m.tree.blocks[m.private_tip]
            chain = m.tree.chain(tip.id)
            c = next((b.height for b in chain for x in b.txs if x.id == self.ckpt_tx.id), None)
            public = max(x.tree.best.height for x in sim.miners.values() if x.honest)
            if c is not None and tip.height >= c + p.k_w and tip.height > public:
                sim.release_withheld(delay=1)
                m.withhold = False
                m.private_tip = None
                m.include = None
                self.stage = 2


def scenario_safety_attack(cfg: ScenarioConfig) -> ScenarioResult:
    p = cfg.params
    arm = cfg.arm or "s1"
    corrupt = list(range(1, p.quorum + 1))
    behaviors = {v: Behavior() for v in corrupt}
    if arm == "s1":
        ticks = 900
        sim = Simulation(p, delay=cfg.delay, corrupted=behaviors, tx_interval=20,
                         tx_count=cfg.opt("tx_count", 2), scenario="safety_attack")
        attack = SplitViewAttack(cfg, corrupt, "o0")
        for v in corrupt:
            sim.nodes[f"v{v}"].vote_filter = attack.vote_filter
    elif arm == "s2":
        if p.beta <= 0:
            p = dataclasses.replace(p, beta=cfg.opt("attack_beta", 0.75))
        # a steady workload, so the stall after the escape is always measured
        ticks = 2200
        sim = Simulation(p, delay=cfg.delay, corrupted=behaviors, tx_interval=100,
                         tx_count=cfg.opt("tx_count", ticks // 100), scenario="safety_attack")
        attack = PrivateForkEscape(cfg, corrupt)
    else:
        raise ValueError(f"unknown arm {arm!r} for safety_attack")
    sim.script = _chain_scripts(attack, _spawn_late(sim, _late_tick(cfg, ticks)))
    return _annotate(_finish(sim, cfg, ticks), arm=arm)


class UnavailableFork:
    """Private fork whose checkpoint goes to the miners without its data."""

    def __init__(self, cfg: ScenarioConfig, corrupt: list, arm: str):
        self.height = cfg.opt("fork_height", 3)
        self.corrupt = corrupt
        self.arm = arm
        self.stage = 0
        self.data = None
        self.tx = None
        self.fork = None

    def __call__(self, sim: Simulation, t: int) -> None:
        spy = f"v{self.corrupt[0]}"
        if self.stage == 0:
            hit = _first_final(sim, spy, self.height)
            if hit is None or hit[1] is None:
                return
            a_block, a_cert = hit
            view = sim.nodes[spy].view
            parent = view.pos_blocks[a_block.parent]
            pcert = view.certs.get(parent.id)
            self.fork = build_fork(sim, parent, pcert.precommits if pcert else (), a_cert.round,
                                   self.corrupt,
                                   [(payload("conflict"),),
                                    tuple(withdrawal_request(v) for v in self.corrupt)])
            self.data = fork_checkpoint(self.fork)
            self.tx = make_babylon_tx(PayloadKind.CHECKPOINT, self.data, self.corrupt[0],
                                      sim.params.chain_id)
            for v in self.corrupt:
                sim.inject_tx(withdrawal_request(v))
            if self.arm == "release_before_withdrawal":
                self._release(sim)
                self.stage = 2
                return
            sim.submit_babylon("adversary", self.tx, None, honest=False)
            sim.record("attack", "adversary", step="unavailable_commitment",
                       fork=[b.id for b, _, _ in self.fork])
            self.stage = 1
            return
        if self.stage == 1:
            view = sim.nodes[spy].view
            if all(view.withdrawals.get(v) == "granted" for v in self.corrupt):
                self._release(sim)
                self.stage = 2

    def _release(self, sim: Simulation) -> None:
        h = self.tx.commitment.h
        sim.release_data("adversary", {h: self.data}, delay=1)
        for block, _pv, pc in self.fork:
            sim.send("adversary", list(sim.nodes), "pos_block", block, honest=False, delay=1)
            for m in pc:
                sim.send("adversary", list(sim.nodes), "vote", m, honest=False, delay=1)
        if self.arm != "off":
            sim.submit_babylon("adversary", self.tx, self.data, honest=False, delay=1)
        sim.record("attack", "adversary", step="release", fork=[b.id for b, _, _ in self.fork])


def scenario_long_range_unavailable(cfg: ScenarioConfig) -> ScenarioResult:
    p = cfg.params
    arm = cfg.arm or "on"
    if arm not in ("on", "off", "release_before_withdrawal"):
        raise ValueError(f"unknown arm {arm!r} for long_range_unavailable")
    corrupt = list(range(1, p.quorum + 1))
    ticks = 2200 if arm == "release_before_withdrawal" else 1500
    sim = Simulation(p, delay=cfg.delay, corrupted={v: Behavior() for v in corrupt},
                     check_availability=(arm != "off"), tx_interval=100,
                     tx_count=cfg.opt("tx_count", ticks // 100), scenario="long_range_unavailable",
                     control=(arm == "off"))
    attack = UnavailableFork(cfg, corrupt, arm)
    sim.script = _chain_scripts(attack, _spawn_late(sim, _late_tick(cfg, ticks)))
    return _annotate(_finish(sim, cfg, ticks), arm=arm, **_late_node_choice(sim, attack.fork))


def _late_node_choice(sim: Simulation, fork) -> dict:
    late = [n for n in sim.nodes.values() if n.name.startswith("late")]
    if not late or not fork:
        return {}
    canon = set(late[-1].view.canonical())
    return {"late_node_on_attack_chain": fork[0][0].id in canon}


# --------------------------------------------------------------------------
# liveness


def scenario_censorship(cfg: ScenarioConfig) -> ScenarioResult:
    p = cfg.params
    arm = cfg.arm or "f"
    count = {"f": p.f, "quorum": p.quorum}.get(arm)
    if count is None:
        raise ValueError(f"unknown arm {arm!r} for censorship")
    censors = list(range(p.n - count, p.n))
    target = payload(f"censored:{p.seed}")
    behaviors = {v: Behavior(censor=frozenset({target.id})) for v in censors}
    ticks = 2200 if arm == "quorum" else 1400
    sim = Simulation(p, delay=cfg.delay, corrupted=behaviors, tx_interval=40,
                     tx_count=cfg.opt("tx_count", 3), scenario="censorship")
    inject_at = cfg.opt("inject_at", 60)
    targets = [f"v{v}" for v in censors] + ["o0"]

    def script(s, t):
        if t == inject_at:
            s.inject_tx(target, targets)
    sim.script = _chain_scripts(script, _spawn_late(sim, _late_tick(cfg, ticks)))
    return _annotate(_finish(sim, cfg, ticks), arm=arm, censors=censors)


def scenario_stalling(cfg: ScenarioConfig) -> ScenarioResult:
    p = cfg.params
    arm = cfg.arm or "quorum_silent"
    silent = list(range(p.n - (p.f + 1), p.n))
    if arm == "quorum_silent":
        behaviors = {v: Behavior(silent_offchain=True, silent_onchain=True) for v in silent}
    elif arm == "offchain_only":
        behaviors = {v: Behavior(silent_offchain=True, silent_onchain=(i < p.f))
                     for i, v in enumerate(silent)}
    else:
        raise ValueError(f"unknown arm {arm!r} for stalling")
    ticks = 1600
    sim = Simulation(p, delay=cfg.delay, corrupted=behaviors, tx_interval=60,
                     tx_count=cfg.opt("tx_count", 4), scenario="stalling")
    sim.script = _spawn_late(sim, _late_tick(cfg, ticks))
    return _annotate(_finish(sim, cfg, ticks), arm=arm, silent=silent,
                     onchain_silent=[v for v, b in behaviors.items() if b.silent_onchain])


# --------------------------------------------------------------------------
# demonstrations


class LeakFork:
    """A minority builds a chain from an old block that is final under
    inactivity-leak rules once the absent honest stake has leaked away."""

    def __init__(self, cfg: ScenarioConfig, attacker: int, enhanced: bool):
        self.fork_at = cfg.opt("fork_height", 1)
        self.build_at = cfg.opt("build_tick", 100)
        self.release_at = cfg.opt("release_tick", 400)
        self.length = cfg.opt("attack_length", 6)
        self.attacker = attacker
        self.enhanced = enhanced
        self.blocks: list = []

    def __call__(self, sim: Simulation, t: int) -> None:
        if t == self.build_at:
            view = sim.nodes[f"v{self.attacker}"].view
            ids = view.final_by_height.get(self.fork_at)
            prev = view.pos_blocks[ids[0]]
            for i in range(self.length):
                prev = make_block(prev, (payload(f"leak:{i}"),), self.attacker, 0)
                self.blocks.append(prev)
            sim.record("attack", "adversary", step="leak_fork", fork=[b.id for b in self.blocks])
        if t == self.release_at and self.blocks:
            sim.send("adversary", list(sim.nodes), "leak_chain", tuple(self.blocks),
                     honest=False, delay=1)
            if self.enhanced:
                data = checkpoint_data_for(self.blocks)
                tx = make_babylon_tx(PayloadKind.CHECKPOINT, data, self.attacker, sim.params.chain_id)
                sim.submit_babylon("adversary", tx, data, honest=False, delay=1)
            sim.record("attack", "adversary", step="release")

    def tie_break(self, sim: Simulation) -> Callable:
        ids = {b.id for b in self.blocks}

        def pick(tied):
            sim.record("fork_choice_ambiguous", None, candidates=list(tied))
            for k in tied:
                if k in ids:
                    return k
            return tied[0]
        return pick


def scenario_inactivity_leak(cfg: ScenarioConfig) -> ScenarioResult:
    p = cfg.params
    arm = cfg.arm or "enhanced"
    if arm not in ("enhanced", "unenhanced"):
        raise ValueError(f"unknown arm {arm!r} for inactivity_leak")
    enhanced = arm == "enhanced"
    attacker = p.n - 1
    ticks = 800
    sim = Simulation(p, delay=cfg.delay, corrupted={attacker: Behavior()}, tx_interval=20,
                     tx_count=cfg.opt("tx_count", 3), scenario="inactivity_leak",
                     control=not enhanced, enhanced=enhanced)
    attack = LeakFork(cfg, attacker, enhanced)
    late_at = _late_tick(cfg, ticks)

    def spawn(s, t):
        if t == late_at:
            s.spawn_late_node(tie_break=attack.tie_break(s))
    sim.script = _chain_scripts(attack, spawn)
    res = _finish(sim, cfg, ticks)
    ambiguous = any(r["kind"] == "fork_choice_ambiguous" for r in res.trace.records)
    honest = [v for v in sim.validators if v != attacker]
    return _annotate(res, arm=arm, ambiguous=ambiguous,
                     honest_leaked=honest if attack.blocks else [],
                     **_late_node_choice(sim, [(attack.blocks[0],)] if attack.blocks else None))


class MinorityEquivocation:
    """Up to f validators double-vote at every height: besides their real votes
    they prevote and precommit a rival block, shown to half of the honest nodes."""

    def __init__(self, corrupt: list):
        self.corrupt = corrupt
        self.seen: set = set()

    def __call__(self, sim: Simulation, t: int) -> None:
        spy = sim.nodes[f"v{self.corrupt[0]}"]
        tip = spy.view.canonical_tip()
        h = tip.height + 1
        if h in self.seen:
            return
        self.seen.add(h)
        rival = make_block(tip, (payload(f"rival:{h}"),), self.corrupt[0], 0)
        honest = sorted(n.name for n in sim.honest_nodes())
        half = honest[: len(honest) // 2]
        sim.send("adversary", half, "pos_block", rival, honest=False, delay=1)
        for v in self.corrupt:
            for kind in (VoteKind.PREVOTE, VoteKind.PRECOMMIT):
                sim.send("adversary", half, "vote", sim.sign(kind, h, 0, rival.id, v),
                         honest=False, delay=1)


def minority_equivocation_run(params: ProtocolParams, ticks: int = 400, delay: str = "random") -> ScenarioResult:
    """f equivocating validators against 2f+1 honest ones; used for base safety checks."""
    corrupt = list(range(params.n - params.f, params.n))
    sim = Simulation(params, delay=delay, corrupted={v: Behavior() for v in corrupt},
                     tx_interval=20, scenario="minority_equivocation")
    sim.script = MinorityEquivocation(corrupt)
    return _finish(sim, ScenarioConfig("minority_equivocation", params), ticks)


def scenario_babylon_reorg(cfg: ScenarioConfig) -> ScenarioResult:
    """Four public honest blocks against five withheld ones, released late."""
    p = cfg.params
    honest_blocks = cfg.opt("honest_blocks", 4)
    private_blocks = cfg.opt("private_blocks", honest_blocks + 1)
    adv = p.n_miners
    schedule = {}
    t = 10
    for i in range(max(honest_blocks, private_blocks)):
        if i < honest_blocks:
            schedule[t] = i % p.n_miners
        if i < private_blocks:
            schedule[t + 5] = adv
        t += 10
    release = t + p.delta + 5
    sim = Simulation(p, delay=cfg.delay, adversary_miner=True, mining_schedule=schedule,
                     scenario="babylon_reorg")
    sim.adversary_miner.withhold = True

    def script(s, tick):
        if tick == 0:
            s.adversary_miner.private_tip = s.adversary_miner.tree.best.id
        if tick == release:
            s.release_withheld(delay=1)
            s.adversary_miner.withhold = False
            s.adversary_miner.private_tip = None
    sim.script = script
    return _finish(sim, cfg, release + 40)


SCENARIOS: dict[str, Callable[[ScenarioConfig], ScenarioResult]] = {
    "honest_run": scenario_honest_run,
    "safety_attack": scenario_safety_attack,
    "long_range_unavailable": scenario_long_range_unavailable,
    "censorship": scenario_censorship,
    "stalling": scenario_stalling,
    "inactivity_leak": scenario_inactivity_leak,
    "babylon_reorg": scenario_babylon_reorg,
}

ARMS = {
    "honest_run": [""],
    "safety_attack": ["s1", "s2"],
    "long_range_unavailable": ["on", "off", "release_before_withdrawal"],
    "censorship": ["f", "quorum"],
    "stalling": ["quorum_silent", "offchain_only"],
    "inactivity_leak": ["enhanced", "unenhanced"],
    "babylon_reorg": [""],
}


def run_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    fn = SCENARIOS.get(cfg.scenario)
    if fn is None:
        raise ValueError(f"unknown scenario {cfg.scenario!r}; choose from {sorted(SCENARIOS)}")
    res = fn(cfg)
    if cfg.trace:
        res.trace.write(cfg.trace)
    if cfg.report:
        with open(cfg.report, "w", encoding="utf-8") as fh:
            fh.write(res.report.to_text())
    return res
