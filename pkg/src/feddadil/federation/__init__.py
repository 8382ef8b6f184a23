"""Round protocol: wire codec, clients, transports and server orchestration."""
from .channels import ClientFailure, InProcessChannel, StreamChannel, open_channels
from .client import Client, ClientConfig
from .codec import MsgType, ProtocolError, RoundMessage
from .server import (
    DriftReport,
    FederationConfig,
    RoundError,
    RoundMetrics,
    ServerState,
    broadcast_atom_batch,
    compute_drift,
    run_round,
    sample_clients,
    server_aggregate,
    server_init,
)
