import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from babylon_sim.babylon_chain import (
    BabylonTraceIndex,
    BlockTree,
    MinerNode,
    MiningProcess,
    adversary_prefers,
    babylon_security_check,
    deep_prefix,
    longest_chain,
    miner_validate_commitment,
)
from babylon_sim.core_types import (
    GENESIS_BABYLON,
    GENESIS_POS,
    BabylonBlock,
    CensorshipComplaintData,
    CheckpointData,
    PayloadKind,
    ProtocolParams,
    checkpoint_data_for,
    make_babylon_tx,
    make_block,
    payload,
)
from babylon_sim.scenarios import ScenarioConfig, run_scenario


def pos_chain(n):
    blocks, parent = [], GENESIS_POS
    for i in range(n):
        parent = make_block(parent, (payload(f"t{i}"),), proposer=i % 4)
        blocks.append(parent)
    return blocks


def bab_chain(n, parent=GENESIS_BABYLON, miner=0, tick0=1):
    out = []
    for i in range(n):
        parent = BabylonBlock(parent.id, parent.height + 1, (), miner, tick0 + i)
        out.append(parent)
    return out


# ---- deep prefix and longest chain -------------------------------------------


@pytest.mark.parametrize("length,r,expected", [(10, 3, 7), (2, 5, 0), (4, 0, 4), (3, 3, 0)])
def test_deep_prefix(length, r, expected):
    chain = list(range(length))
    assert deep_prefix(chain, r) == chain[:expected]


def test_deep_prefix_rejects_negative():
    with pytest.raises(ValueError):
        deep_prefix([1], -1)


def test_longest_chain_prefers_height():
    a = bab_chain(7, miner=0)
    b = bab_chain(9, miner=1)
    assert longest_chain(a + b)[-1] == b[-1]
    assert longest_chain(b + a)[-1] == b[-1]


def test_equal_height_tie_keeps_first_received():
    a = bab_chain(3, miner=0)
    b = bab_chain(3, miner=1)
    assert longest_chain(a + b)[-1] == a[-1]
    assert longest_chain(b + a)[-1] == b[-1]


def test_adversary_tie_break_hook():
    a = bab_chain(3, miner=0)
    b = bab_chain(3, miner=9)
    tb = adversary_prefers(lambda blk: blk.miner == 9)
    assert longest_chain(a + b, tie_break=tb)[-1] == b[-1]


def test_orphans_connect_when_parent_arrives():
    blocks = bab_chain(5)
    tree = BlockTree()
    assert tree.add(blocks[3]) == []
    added = []
    for b in (blocks[0], blocks[2], blocks[1], blocks[4]):
        added += tree.add(b)
    assert tree.best == blocks[4]
    assert sorted(b.height for b in added) == [1, 2, 3, 4, 5]


def test_bad_height_is_ignored():
    bad = BabylonBlock(GENESIS_BABYLON.id, 5, (), 0, 1)
    tree = BlockTree()
    assert tree.add(bad) == []
    assert tree.best == GENESIS_BABYLON


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=30), min_size=1, max_size=40), st.randoms())
def test_best_height_is_max_and_order_independent(parents, rnd):
    blocks = [GENESIS_BABYLON]
    for i, p in enumerate(parents):
        par = blocks[p % len(blocks)]
        blocks.append(BabylonBlock(par.id, par.height + 1, (), i % 3, i))
    shuffled = blocks[1:]
    rnd.shuffle(shuffled)
    tree = BlockTree()
    for b in shuffled:
        tree.add(b)
    assert tree.best.height == max(b.height for b in blocks)
    chain = tree.chain()
    assert [b.height for b in chain] == list(range(len(chain)))
    assert all(c.parent == p.id for p, c in zip(chain, chain[1:]))


# ---- miner validation ------------------------------------------------------


def test_miner_accepts_matching_checkpoint():
    data = checkpoint_data_for(pos_chain(3))
    tx = make_babylon_tx(PayloadKind.CHECKPOINT, data)
    assert miner_validate_commitment(tx, data)


def test_miner_rejects_missing_data_only_when_checking():
    data = checkpoint_data_for(pos_chain(2))
    tx = make_babylon_tx(PayloadKind.CHECKPOINT, data)
    assert miner_validate_commitment(tx, None).reason == "data_missing"
    assert miner_validate_commitment(tx, None, check_availability=False)


def test_miner_rejects_hash_mismatch():
    tx = make_babylon_tx(PayloadKind.CHECKPOINT, checkpoint_data_for(pos_chain(2)))
    other = checkpoint_data_for(pos_chain(3))
    assert miner_validate_commitment(tx, other).reason == "hash_mismatch"


def test_miner_rejects_body_not_matching_txroot():
    blocks = pos_chain(2)
    good = checkpoint_data_for(blocks)
    tx = make_babylon_tx(PayloadKind.CHECKPOINT, good)
    forged = CheckpointData(good.headers, ((payload("evil"),), good.bodies[1]), good.txroots)
    assert miner_validate_commitment(tx, forged).reason == "txroot_mismatch"


def test_miner_does_not_check_pos_finality():
    # nothing here is finalized anywhere; miners accept it anyway
    data = checkpoint_data_for(pos_chain(1))
    assert miner_validate_commitment(make_babylon_tx(PayloadKind.CHECKPOINT, data), data)


def test_miner_message_commitments():
    data = CensorshipComplaintData((b"x",))
    tx = make_babylon_tx(PayloadKind.CENSORSHIP_COMPLAINT, data)
    assert miner_validate_commitment(tx, data)
    assert miner_validate_commitment(tx, CensorshipComplaintData((b"y",))).reason == "hash_mismatch"
    wrong_kind = make_babylon_tx(PayloadKind.CENSORSHIP_COMPLAINT, (b"x",))
    assert miner_validate_commitment(wrong_kind, (b"x",)).reason == "malformed"


def test_miner_mempool_fifo_and_no_duplicates():
    m = MinerNode(0)
    txs = []
    for i in range(3):
        d = CensorshipComplaintData((bytes([i]),))
        tx = make_babylon_tx(PayloadKind.CENSORSHIP_COMPLAINT, d)
        m.receive_tx(tx, d)
        txs.append(tx)
    m.receive_tx(txs[0], CensorshipComplaintData((b"\x00",)))
    blk = m.mine(5)
    assert list(blk.txs) == txs
    assert m.mine(6).txs == ()


def test_miner_rejects_block_with_unavailable_tx():
    data = checkpoint_data_for(pos_chain(1))
    tx = make_babylon_tx(PayloadKind.CHECKPOINT, data)
    blk = BabylonBlock(GENESIS_BABYLON.id, 1, (tx,), 9, 1)
    m = MinerNode(0)
    assert m.receive_block(blk, {}) == []
    assert m.receive_block(blk, {tx.commitment.h: data}) == [blk]
    lax = MinerNode(1, check_availability=False)
    assert lax.receive_block(blk, {}) == [blk]


# ---- mining process ----------------------------------------------------------


@pytest.mark.parametrize("seed", [0, 1, 7])
def test_mining_occurrences_replay_from_named_stream(seed):
    lam = 0.05
    mp = MiningProcess(lam, 0.0, seed, [0, 1, 2])
    got = [t for t in range(2000) if mp.draw(t) is not None]
    rng = random.Random(f"{seed}:mining")
    expected = [t for t in range(2000) if rng.random() < lam]
    assert got == expected


def test_mining_rates_are_plausible():
    mp = MiningProcess(0.1, 0.3, 3, [0, 1, 2], adversary_id=3)
    draws = [mp.draw(t) for t in range(20000)]
    mined = [d for d in draws if d is not None]
    assert abs(len(mined) / 20000 - 0.1) < 0.01
    assert abs(sum(d == 3 for d in mined) / len(mined) - 0.3) < 0.04
    assert set(mined) <= {0, 1, 2, 3}


def test_mining_schedule_overrides_randomness():
    mp = MiningProcess(0.5, 0.0, 0, [0], schedule={3: 0, 5: 1})
    assert [mp.draw(t) for t in range(7)] == [None, None, None, 0, None, 1, None]


# ---- security scan against a brute-force oracle --------------------------------


def brute_unsafe_depth(records):
    """Max r at which some block r-deep in any chain is missing from an honest chain later."""
    delta = next(r for r in records if r["kind"] == "run_start")["params"]["delta"]
    end = max(r["tick"] for r in records)
    parent, height = {}, {}
    gen = next(r for r in records if r["kind"] == "run_start")["babylon_genesis"]
    parent[gen], height[gen] = None, 0
    timelines = {}
    for r in records:
        if r["kind"] == "babylon_block":
            parent.setdefault(r["id"], r["parent"])
            height.setdefault(r["id"], r["height"])
        elif r["kind"] == "babylon_tip":
            tl = timelines.setdefault(r["actor"], (r["honest"], []))[1]
            if tl and tl[-1][0] == r["tick"]:
                tl[-1] = (r["tick"], r["tip"])
            else:
                tl.append((r["tick"], r["tip"]))

    def path(b):
        out = []
        while b is not None:
            out.append(b)
            b = parent[b]
        return set(out)

    paths = {}
    best = 0
    for _name, (_h, tl) in timelines.items():
        for t, tip in tl:
            tip_path = paths.setdefault(tip, path(tip))
            for b in tip_path:
                d = height[tip] - height[b]
                if d <= best:
                    continue
                bad = False
                for _n2, (honest, tl2) in timelines.items():
                    if not honest:
                        continue
                    for j, (t2, tip2) in enumerate(tl2):
                        last = tl2[j + 1][0] - 1 if j + 1 < len(tl2) else end
                        if last >= t + delta and b not in paths.setdefault(tip2, path(tip2)):
                            bad = True
                            break
                    if bad:
                        break
                if bad:
                    best = d
    return best


@pytest.mark.parametrize("honest_blocks,private_blocks", [(2, 3), (3, 4), (4, 5), (5, 7), (1, 1)])
def test_unsafe_depth_matches_brute_force(honest_blocks, private_blocks):
    res = run_scenario(ScenarioConfig(
        "babylon_reorg", ProtocolParams(seed=1),
        options={"honest_blocks": honest_blocks, "private_blocks": private_blocks}))
    records = res.trace.records
    depth, _ = BabylonTraceIndex(records).max_unsafe_depth()
    assert depth == brute_unsafe_depth(records)


def test_reorg_of_four_blocks_breaks_depth_four_only():
    res = run_scenario(ScenarioConfig("babylon_reorg", ProtocolParams(seed=1)))
    got = {r: bool(babylon_security_check(res.trace.records, r)) for r in range(1, 9)}
    assert got == {1: False, 2: False, 3: False, 4: False, 5: True, 6: True, 7: True, 8: True}
    w = babylon_security_check(res.trace.records, 4).witness
    assert w["clause"] == "safety" and w["depth"] >= 4


@pytest.fixture(scope="module")
def honest_trace():
    return run_scenario(ScenarioConfig("honest_run", ProtocolParams(seed=2))).trace.records


def test_honest_run_secure_at_every_depth(honest_trace):
    idx = BabylonTraceIndex(honest_trace)
    for r in range(1, 8):
        assert babylon_security_check(idx, r)
    assert brute_unsafe_depth(honest_trace) == 0


def test_empty_trace_is_vacuously_secure():
    assert babylon_security_check([], 3)
    with pytest.raises(ValueError):
        babylon_security_check([], 0)


def _honest_tips(records):
    out = {}
    parent = {}
    for r in records:
        if r["kind"] == "babylon_block":
            parent.setdefault(r["id"], r["parent"])
        elif r["kind"] == "babylon_tip" and r["honest"]:
            out.setdefault(r["actor"], []).append((r["tick"], r["tip"]))
    return out, parent


def _chain_of(tip, parent):
    out = []
    while tip is not None:
        out.append(tip)
        tip = parent.get(tip)
    return out[::-1]


def test_beta_zero_prefix_consistency(honest_trace):
    tips, parent = _honest_tips(honest_trace)
    states = sorted((t, name, tip) for name, tl in tips.items() for t, tip in tl)
    sample = states[:: max(1, len(states) // 120)]
    for t, _n, tip in sample:
        mine = _chain_of(tip, parent)[:-1]
        for t2, _n2, tip2 in sample:
            if t2 < t:
                continue
            other = _chain_of(tip2, parent)
            assert other[: len(mine)] == mine


def test_honest_chain_length_never_decreases(honest_trace):
    heights = {}
    for r in honest_trace:
        if r["kind"] == "babylon_tip" and r["honest"]:
            prev = heights.get(r["actor"], 0)
            assert r["height"] >= prev
            heights[r["actor"]] = r["height"]


def test_data_available_to_every_honest_node():
    res = run_scenario(ScenarioConfig("censorship", ProtocolParams(seed=3), arm="f"))
    nodes = res.sim.honest_nodes()
    for node in nodes:
        for blk in node.view.longest_babylon():
            for tx in blk.txs:
                for other in nodes:
                    assert tx.commitment.h in other.view.data_store
