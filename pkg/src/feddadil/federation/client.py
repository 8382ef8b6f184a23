"""Client endpoint: local data, private barycentric weights, ClientUpdate."""
from __future__ import annotations

import copy
import math
import threading
from dataclasses import dataclass

import numpy as np

from ..dictionary import Atom, ClientDataset, Dictionary, LossConfig, client_update, local_loss
from .codec import AtomRows, MsgType, ProtocolError, RoundMessage, atom_version, parse_atom_batch

SCHEDULES = ("constant", "cosine")


@dataclass(frozen=True)
class ClientConfig:
    epochs: int = 1
    batches: int | None = None  # per epoch; None: n // batch_size
    lr: float = 0.1
    alpha_lr: float | None = None  # None: same as lr
    schedule: str = "constant"
    rounds: int = 100  # horizon of the cosine schedule
    loss: LossConfig = LossConfig()

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batches is not None and self.batches < 1:
            raise ValueError("batches must be >= 1")
        if self.lr < 0 or (self.alpha_lr is not None and self.alpha_lr < 0):
            raise ValueError("learning rates must be non-negative")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")

    def decay(self, round_: int) -> float:
        """Learning-rate multiplier for round ``round_`` (1-based)."""
        if self.schedule == "constant":
            return 1.0
        t = min(max(round_ - 1, 0), self.rounds) / self.rounds
        return 0.5 * (1.0 + math.cos(math.pi * t))


class Client:
    """Holds one domain's data and its weights; speaks the round protocol.

    The weights computed in a round stay pending until the server's RoundAck
    for that round arrives, so an aborted round leaves the client as it was.
    """

    def __init__(self, client_id: str, dataset: ClientDataset, n_atoms: int,
                 cfg: ClientConfig | None = None, seed=None):
        if dataset.n == 0:
            raise ValueError(f"client {client_id}: empty dataset")
        self.client_id = client_id
        self.dataset = dataset
        self.cfg = cfg or ClientConfig()
        self._alpha = np.full(n_atoms, 1.0 / n_atoms)
        self._rng = np.random.default_rng(seed)
        self._pending = None
        self._committed = 0  # last acknowledged round
        self._cond = threading.Condition()
        self.last_losses: np.ndarray | None = None

    @property
    def role(self) -> str:
        return self.dataset.role

    @property
    def alpha(self) -> np.ndarray:
        return self._alpha.copy()

    def handle(self, msg: RoundMessage) -> RoundMessage | None:
        if msg.msg_type == MsgType.ATOM_BATCH:
            return self._update(msg)
        if msg.msg_type == MsgType.ROUND_ACK:
            with self._cond:
                if self._pending is not None and self._pending[0] == msg.round:
                    self._alpha = self._pending[1]
                    self._pending = None
                    self._committed = msg.round
                    self._cond.notify_all()
            return None
        if msg.msg_type == MsgType.SHUTDOWN:
            return None
        raise ProtocolError(f"client {self.client_id} cannot handle {msg.msg_type.name}")

    def _update(self, msg: RoundMessage) -> RoundMessage:
        if self._pending is not None:
            # previous round was never acknowledged: roll back its RNG draws
            self._rng.bit_generator.state = self._pending[2]
            self._pending = None
        rows = parse_atom_batch(msg)
        local = Dictionary(
            [Atom(X, Y, k) for k, (X, Y) in enumerate(zip(rows.features, rows.labels))],
            (msg.round, self.client_id),
        )
        rng_state = copy.deepcopy(self._rng.bit_generator.state)
        decay = self.cfg.decay(msg.round)
        alpha_lr = self.cfg.lr if self.cfg.alpha_lr is None else self.cfg.alpha_lr
        res = client_update(
            local, self._alpha, self.dataset,
            epochs=self.cfg.epochs, batches=self.cfg.batches,
            lr=self.cfg.lr * decay, alpha_lr=alpha_lr * decay,
            cfg=self.cfg.loss, rng=self._rng,
        )
        self._pending = (msg.round, res.alpha, rng_state)
        self.last_losses = res.losses
        out = AtomRows(rows.indices,
                       [a.features for a in res.dictionary.atoms],
                       [a.labels for a in res.dictionary.atoms])
        return atom_version(msg.round, out, float(res.losses.mean()))

    def wait_committed(self, round_: int, timeout: float = 60.0) -> None:
        """Block until the RoundAck of ``round_`` has been applied.

        Acks travel without a reply, so on a threaded transport an observer
        must wait here before reading the weights of that round.
        """
        with self._cond:
            if not self._cond.wait_for(lambda: self._committed >= round_, timeout):
                raise TimeoutError(f"client {self.client_id} did not commit round {round_}")

    def evaluate(self, D: Dictionary, cfg: LossConfig | None = None, sample=None) -> float:
        """Local loss of this client's data (or a row subset) under ``D``."""
        X = self.dataset.features
        Y = self.dataset.labels
        if sample is not None:
            X = X[sample]
            Y = None if Y is None else Y[sample]
        return local_loss(X, Y, self._alpha, D, cfg or self.cfg.loss)
