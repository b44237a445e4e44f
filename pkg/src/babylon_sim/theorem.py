"""Map a run trace onto the slashable-safety and slashable-liveness clauses."""

from __future__ import annotations

import dataclasses
from bisect import bisect_right
from typing import Optional

from .babylon_chain import BabylonTraceIndex, babylon_security_check

LIVENESS_FACTOR = 13


@dataclasses.dataclass
class ScenarioReport:
    scenario: str
    seed: int
    safety_violated: bool
    conflicting_finalization: bool
    liveness_violation_span: int
    slashable_fraction: float
    slashable: list
    babylon_secure_at: dict
    verdict: str
    honest_slashed: list
    canonical_agree: bool
    prefix_invariant_ok: bool
    checkpoint_lag: int
    complaint_span: Optional[int] = None
    withdrawn_accused: list = dataclasses.field(default_factory=list)
    control: bool = False
    extra: dict = dataclasses.field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.verdict != "FAIL"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            if isinstance(v, float):
                v = f"{v:.4f}"
            lines.append(f"{k}: {v}")
        return "\n".join(lines) + "\n"


class _PosTree:
    def __init__(self, genesis: str):
        self.parent = {genesis: None}
        self.height = {genesis: 0}
        self._paths: dict = {genesis: (genesis,)}

    def add(self, bid: str, parent: str, height: int) -> None:
        self.parent.setdefault(bid, parent)
        self.height.setdefault(bid, height)

    def path(self, bid: str) -> tuple:
        p = self._paths.get(bid)
        if p is None:
            stack, cur = [], bid
            while cur not in self._paths:
                stack.append(cur)
                cur = self.parent[cur]
            p = self._paths[cur]
            for b in reversed(stack):
                p = p + (b,)
                self._paths[b] = p
        return p

    def extends(self, tip: str, bid: str) -> bool:
        p = self.path(tip)
        h = self.height[bid]
        return h < len(p) and p[h] == bid


def _common_at(cticks, clens):
    def at(t):
        i = bisect_right(cticks, t) - 1
        return clens[i] if i >= 0 else 0
    return at


def check_theorem(records, params: Optional[dict] = None) -> ScenarioReport:
    """Compute the report for one trace (a list of record dicts or a Trace)."""
    records = list(records)
    start = next(r for r in records if r["kind"] == "run_start")
    p = dict(start["params"]) if params is None else dict(params)
    n, k_c, k_w = p["n"], p["k_c"], p["k_w"]
    f = (n - 1) // 3
    honest_vals = set(start["honest_validators"])
    honest_nodes = {d["name"] for d in start["nodes"] if d["honest"]}
    initial_nodes = set(honest_nodes)
    base_validators = {d["name"] for d in start["nodes"] if d["honest"] and d["validator"]}
    end_tick = 0

    tree = _PosTree(start["pos_genesis"])
    tips: dict[str, list] = {}
    slashable: dict[str, set] = {}
    finalized: dict[str, dict] = {}
    checkpointed: dict[str, dict] = {}
    granted: dict[str, set] = {}
    known: dict[str, dict] = {}
    settled: dict[str, dict] = {}
    env_txs: list = []
    complaint_txs: dict = {}
    accused: set = set()
    invariant_ok = True
    extra: dict = {}
    for r in records:
        kind = r["kind"]
        actor = r["actor"]
        if kind == "node_joined":
            honest_nodes.add(actor)
        elif kind == "pos_block":
            tree.add(r["id"], r["parent"], r["height"])
        elif kind == "pos_tip" and r["honest"]:
            tips.setdefault(actor, []).append((r["tick"], r["tip"]))
        elif kind == "slashable_added":
            slashable.setdefault(actor, set()).add(r["validator"])
        elif kind == "pos_finalized":
            finalized.setdefault(actor, {}).setdefault(r["block"], r["tick"])
        elif kind == "pos_checkpointed":
            checkpointed.setdefault(actor, {}).setdefault(r["block"], r["tick"])
        elif kind == "withdrawal_granted":
            granted.setdefault(actor, set()).add(r["validator"])
        elif kind == "tx_known":
            known.setdefault(r["tx"], {}).setdefault(actor, r["tick"])
        elif kind == "tx_settled":
            settled.setdefault(r["tx"], {}).setdefault(actor, r["tick"])
        elif kind == "env_tx":
            env_txs.append(r["tx"])
        elif kind == "babylon_tx_submitted" and r["payload_kind"] == "censorship_complaint":
            complaint_txs[r["tx"]] = r["tick"]
        elif kind == "fraud_proof_sent":
            accused.update(r["accused"])
        elif kind == "invariant_violation":
            invariant_ok = False
        elif kind == "run_end":
            end_tick = r["tick"]
        elif kind == "scenario_summary":
            extra.update({k: v for k, v in r.items() if k not in ("tick", "kind", "actor")})

    # ledger safety: every canonical chain ever held by an honest node lies on one path
    all_tips = {tip for name in honest_nodes for _, tip in tips.get(name, ())}
    safety_violated = False
    if all_tips:
        top = max(all_tips, key=lambda b: (tree.height[b], b))
        safety_violated = any(not tree.extends(top, b) for b in all_tips)

    finals = {}
    for name in honest_nodes:
        for bid in finalized.get(name, ()):
            finals[bid] = tree.height[bid]
    by_h: dict = {}
    for bid, h in finals.items():
        by_h.setdefault(h, set()).add(bid)
    conflicting = any(len(s) > 1 for s in by_h.values())

    final_tips = [tips[name][-1][1] for name in sorted(honest_nodes) if name in tips]
    canonical_agree = True
    if final_tips:
        top = max(final_tips, key=lambda b: (tree.height[b], b))
        canonical_agree = all(tree.extends(top, b) for b in final_tips)

    views = [slashable.get(name, set()) for name in sorted(honest_nodes)]
    inter = set.intersection(*views) if views else set()
    union = set().union(*views) if views else set()
    honest_slashed = sorted(union & honest_vals)
    withdrawn_accused = sorted({v for name in honest_nodes for v in granted.get(name, ())}
                               & (accused | union))

    idx = BabylonTraceIndex(records)
    secure_w = bool(babylon_security_check(idx, max(k_w // 2, 1)))
    secure_c = bool(babylon_security_check(idx, max(k_c // 2, 1)))
    cticks, clens = idx.common_length()
    common = _common_at(cticks, clens)
    end_common = common(end_tick)

    # liveness span per environment tx, in common-prefix growth
    span = 0
    validators_present = base_validators
    for tx in env_txs:
        seen = known.get(tx, {})
        if not validators_present <= set(seen):
            continue
        t0 = max(seen[v] for v in validators_present)
        done = settled.get(tx, {})
        if initial_nodes <= set(done):
            t1 = max(done[v] for v in initial_nodes)
            span = max(span, common(t1) - common(t0))
        else:
            span = max(span, end_common - common(t0))

    complaint_span = None
    if complaint_txs:
        complained = set()
        for r in records:
            if r["kind"] == "complaint_sent":
                complained.update(r["txs"])
        landing = {}
        for r in records:
            if r["kind"] == "babylon_block":
                for t in r["txs"]:
                    if t in complaint_txs and t not in landing:
                        landing[t] = r["height"]
        if landing:
            land = min(landing.values())
            for tx in complained:
                done = settled.get(tx, {})
                if initial_nodes <= set(done):
                    t1 = max(done[v] for v in initial_nodes)
                    s = max(common(t1) - land, 0)
                else:
                    s = end_common - land
                complaint_span = s if complaint_span is None else max(complaint_span, s)

    # finalized-to-checkpointed lag on the common chain, canonical blocks only
    lag = 0
    if final_tips:
        top = max(final_tips, key=lambda b: (tree.height[b], b))
        canon = set(tree.path(top))
        for name in initial_nodes:
            ck = checkpointed.get(name, {})
            for bid, t0 in finalized.get(name, {}).items():
                if bid not in canon:
                    continue
                g0 = common(t0)
                if bid in ck:
                    lag = max(lag, common(max(ck[bid], t0)) - g0)
                else:
                    lag = max(lag, end_common - g0)

    s1 = len(inter) >= f + 1
    clauses = []
    fail = False
    if safety_violated:
        if s1:
            clauses.append("S1")
        if not secure_w:
            clauses.append("S2")
        if not clauses:
            fail = True
    if span > LIVENESS_FACTOR * k_c:
        live = []
        if s1:
            live.append("L1")
        if not secure_c:
            live.append("L2")
        if not live:
            fail = True
        clauses += live
    if honest_slashed and secure_c:
        fail = True
    verdict = "FAIL" if fail else ("+".join(clauses) if clauses else "no violation")

    return ScenarioReport(
        scenario=start.get("scenario", "custom"),
        seed=p.get("seed", 0),
        safety_violated=safety_violated,
        conflicting_finalization=conflicting,
        liveness_violation_span=span,
        slashable_fraction=len(inter) / n,
        slashable=sorted(inter),
        babylon_secure_at={"k_w/2": secure_w, "k_c/2": secure_c},
        verdict=verdict,
        honest_slashed=honest_slashed,
        canonical_agree=canonical_agree,
        prefix_invariant_ok=invariant_ok,
        checkpoint_lag=lag,
        complaint_span=complaint_span,
        withdrawn_accused=withdrawn_accused,
        control=bool(start.get("control", False)),
        extra=extra,
    )
