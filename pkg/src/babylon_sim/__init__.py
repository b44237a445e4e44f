"""Deterministic simulator for Tendermint with checkpoints timestamped on a PoW chain."""

from .babylon_chain import (
    BabylonTraceIndex,
    BlockTree,
    MinerNode,
    MiningProcess,
    babylon_security_check,
    deep_prefix,
    longest_chain,
    miner_validate_commitment,
)
from .core_types import (
    BabylonBlock,
    BabylonTx,
    CheckpointData,
    Commitment,
    ConsensusMessage,
    Hash,
    Keyring,
    PoSBlock,
    PoSTransaction,
    ProtocolParams,
    compute_checkpoint_commitment,
    compute_message_commitment,
    decode,
    encode,
)
from .enhancement import (
    NodeView,
    emit_checkpoint,
    fork_choice,
    fork_point_violation,
    node_validate_checkpoint,
    process_fraud_proof,
    proposal_selection,
    withdrawal_check,
)
from .scenarios import ARMS, SCENARIOS, ScenarioConfig, ScenarioResult, run_scenario
from .sim_net import Simulation, Trace, spawn_late_node
from .tendermint import (
    Behavior,
    FinalizationCertificate,
    TendermintValidator,
    certificate_from_log,
    extract_fraud_proof,
    proposer_for,
)
from .theorem import LIVENESS_FACTOR, ScenarioReport, check_theorem

__version__ = "0.1.0"

__all__ = [
    "ARMS", "LIVENESS_FACTOR", "SCENARIOS",
    "BabylonBlock", "BabylonTraceIndex", "BabylonTx", "Behavior", "BlockTree",
    "CheckpointData", "Commitment", "ConsensusMessage", "FinalizationCertificate",
    "Hash", "Keyring", "MinerNode", "MiningProcess", "NodeView", "PoSBlock",
    "PoSTransaction", "ProtocolParams", "ScenarioConfig", "ScenarioReport",
    "ScenarioResult", "Simulation", "TendermintValidator", "Trace",
    "babylon_security_check", "certificate_from_log", "check_theorem",
    "compute_checkpoint_commitment", "compute_message_commitment", "decode",
    "deep_prefix", "emit_checkpoint", "encode", "extract_fraud_proof", "fork_choice",
    "fork_point_violation", "longest_chain", "miner_validate_commitment",
    "node_validate_checkpoint", "process_fraud_proof", "proposal_selection",
    "proposer_for", "run_scenario", "spawn_late_node", "withdrawal_check",
]
