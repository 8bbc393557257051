"""Synchronous federated rounds where unlearning hides in plain sight.

Each round, every client sends a gradient-shaped payload and a sample
count; the server takes the count-weighted mean and applies one step:

    theta_{k+1} = theta_k - lr * (sum payloads) / (sum counts)

A learning client sends its summed local gradient, so the step is plain
federated SGD. An unlearning client runs the masking unlearner locally
and sends its total parameter shift scaled by n0 / lr; pushed through
the same aggregation rule, the scaling cancels and the shift lands on
the global model exactly. The message schema is identical in both
cases - no mode flag travels on the wire, so the server cannot tell who
unlearned.

Messages can be serialized to a log of length-prefixed records
(client_id u32, n0 u32, payload_len u32, then payload_len float64
little-endian values) and the server can be replayed from such a log.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields

import numpy as np

from .datasets import ScenarioDataset
from .forsaken import Forsaken, average_posteriors_by_class, client_mask_scale
from .membership import MembershipOracle
from .metrics import catastrophic_forgetting_rate, forgetting_rate
from .model import (ModelSpec, ParamVector, evaluate, forward_batch,
                    grad_cross_entropy)
from .validation import as_flat_float

MODES = ("learn", "unlearn")


@dataclass
class ClientState:
    """One client's slice of the data."""

    client_id: int
    data_indices: np.ndarray      # global dataset rows held by this client
    unlearn_indices: np.ndarray   # the subset tagged for unlearning

    @property
    def n_samples(self) -> int:
        return len(self.data_indices)


@dataclass
class RoundMessage:
    """What goes on the wire. Identical schema for both client modes."""

    client_id: int
    payload: np.ndarray
    n_samples: int


def message_schema() -> tuple:
    """Field names of the wire message, for structural assertions."""
    return tuple(f.name for f in fields(RoundMessage))


def partition_clients(dataset: ScenarioDataset, n_clients: int) -> list:
    """Deal the training rows round-robin over `n_clients` clients."""
    rows = dataset.training_indices()
    if n_clients < 1:
        raise ValueError("need at least one client")
    if n_clients > len(rows):
        raise ValueError(f"{n_clients} clients but only {len(rows)} training rows")
    clients = []
    for c in range(n_clients):
        mine = rows[c::n_clients]
        unlearn = mine[dataset.roles[mine] == "unlearn"]
        clients.append(ClientState(client_id=c, data_indices=mine,
                                   unlearn_indices=unlearn))
    return clients


def _local_targets(params: ParamVector, spec: ModelSpec,
                   dataset: ScenarioDataset, client: ClientState) -> np.ndarray:
    """Per-unlearn-row target posteriors from the client's retained rows."""
    retained = client.data_indices[~np.isin(client.data_indices,
                                            client.unlearn_indices)]
    if len(retained) == 0:
        raise ValueError(f"client {client.client_id} has no retained rows "
                         "to estimate targets from")
    ref_posts = forward_batch(params, spec, dataset.X[retained])
    per_class, _ = average_posteriors_by_class(
        ref_posts, np.argmax(ref_posts, axis=1), spec.n_classes)
    unlearn_posts = forward_batch(params, spec,
                                  dataset.X[client.unlearn_indices])
    return per_class[np.argmax(unlearn_posts, axis=1)]


def client_round(client: ClientState, params: ParamVector, spec: ModelSpec,
                 learning_rate: float, mode: str, dataset: ScenarioDataset,
                 unlearner: Forsaken | None = None) -> RoundMessage:
    """Compute one client's message for the current round."""
    if mode not in MODES:
        raise ValueError(f"unknown client mode {mode!r}")
    if client.n_samples == 0:
        raise ValueError(f"client {client.client_id} has no local data")
    if mode == "learn":
        X = dataset.X[client.data_indices]
        y = dataset.labels[client.data_indices]
        _, grad = grad_cross_entropy(params, spec, X, y)
        payload = client.n_samples * grad.values
    else:
        if len(client.unlearn_indices) == 0:
            raise ValueError(f"client {client.client_id} was scheduled to "
                             "unlearn but holds no unlearn samples")
        unlearner = unlearner if unlearner is not None else Forsaken()
        targets = _local_targets(params, spec, dataset, client)
        result = unlearner.unlearn_arrays(params, spec,
                                          dataset.X[client.unlearn_indices],
                                          targets)
        payload = client_mask_scale(result.total_shift, learning_rate,
                                    client.n_samples)
    return RoundMessage(client_id=client.client_id, payload=payload,
                        n_samples=client.n_samples)


def server_aggregate(params: ParamVector, messages, learning_rate: float
                     ) -> ParamVector:
    """Count-weighted gradient step over this round's messages.

    Messages are applied in client-id order so that float summation does
    not depend on arrival order.
    """
    messages = sorted(messages, key=lambda m: m.client_id)
    if not messages:
        raise ValueError("round produced no messages")
    total = np.zeros(len(params))
    count = 0
    for msg in messages:
        total += as_flat_float(msg.payload, length=len(params),
                               name=f"payload from client {msg.client_id}")
        count += int(msg.n_samples)
    if count <= 0:
        raise ValueError("total declared sample count is zero")
    return params.with_values(params.values - learning_rate * total / count)


def run_simulation(dataset: ScenarioDataset, spec: ModelSpec,
                   params: ParamVector, n_clients: int, n_rounds: int,
                   learning_rate: float, schedule: dict | None = None,
                   unlearner: Forsaken | None = None,
                   oracle: MembershipOracle | None = None,
                   log_path: str | None = None):
    """Drive `n_rounds` synchronous rounds. Returns (params, round_metrics).

    `schedule` maps (round, client_id) -> mode; unscheduled pairs learn.
    Every round records test accuracy; rounds with a scheduled unlearner
    also record FR and CFR snapshots (entry model vs exit model) when an
    oracle is supplied. FR is None when the oracle saw no members among
    the round's unlearn rows beforehand.
    """
    if n_rounds < 1:
        raise ValueError("need at least one round")
    clients = partition_clients(dataset, n_clients)
    ids = {c.client_id for c in clients}
    schedule = dict(schedule or {})
    for (rnd, cid), mode in schedule.items():
        if cid not in ids:
            raise ValueError(f"schedule references unknown client {cid}")
        if not (0 <= rnd < n_rounds):
            raise ValueError(f"schedule references round {rnd} outside "
                             f"0..{n_rounds - 1}")
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r} in schedule")

    test_idx = dataset.indices("test")
    train_idx = dataset.indices("train")
    params = params.copy()
    metrics = []
    log = open(log_path, "wb") if log_path else None
    try:
        for rnd in range(n_rounds):
            modes = {c.client_id: schedule.get((rnd, c.client_id), "learn")
                     for c in clients}
            unlearn_rows = np.concatenate(
                [c.unlearn_indices for c in clients
                 if modes[c.client_id] == "unlearn"] or [np.empty(0, np.int64)])

            before_u = before_r = None
            if oracle is not None and len(unlearn_rows) > 0:
                before_u = oracle.predict(
                    forward_batch(params, spec, dataset.X[unlearn_rows]))
                before_r = oracle.predict(
                    forward_batch(params, spec, dataset.X[train_idx]))

            messages = [client_round(c, params, spec, learning_rate,
                                     modes[c.client_id], dataset, unlearner)
                        for c in clients]
            if log is not None:
                log.write(serialize_messages(messages))
            params = server_aggregate(params, messages, learning_rate)

            row = {"round": rnd,
                   "test_accuracy": evaluate(params, spec, dataset.X[test_idx],
                                             dataset.labels[test_idx])
                   if len(test_idx) else None,
                   "unlearn_clients": sorted(cid for cid, m in modes.items()
                                             if m == "unlearn"),
                   "fr": None, "cfr": None}
            if before_u is not None:
                after_u = oracle.predict(
                    forward_batch(params, spec, dataset.X[unlearn_rows]))
                after_r = oracle.predict(
                    forward_batch(params, spec, dataset.X[train_idx]))
                if before_u.sum() > 0:
                    row["fr"] = forgetting_rate(before_u, after_u)
                if before_r.sum() > 0:
                    row["cfr"] = catastrophic_forgetting_rate(before_r, after_r)
            metrics.append(row)
    finally:
        if log is not None:
            log.close()
    return params, metrics


def serialize_messages(messages) -> bytes:
    """Length-prefixed wire records, one per message."""
    chunks = []
    for msg in messages:
        payload = np.asarray(msg.payload, dtype="<f8")
        chunks.append(struct.pack("<III", msg.client_id, msg.n_samples,
                                  len(payload)))
        chunks.append(payload.tobytes())
    return b"".join(chunks)


def deserialize_messages(data: bytes) -> list:
    """Inverse of serialize_messages; validates record framing."""
    out = []
    off = 0
    header = struct.Struct("<III")
    while off < len(data):
        if off + header.size > len(data):
            raise ValueError("truncated message header")
        client_id, n0, plen = header.unpack_from(data, off)
        off += header.size
        body = plen * 8
        if off + body > len(data):
            raise ValueError(f"truncated payload for client {client_id}")
        payload = np.frombuffer(data[off:off + body], dtype="<f8").copy()
        off += body
        out.append(RoundMessage(client_id=client_id, payload=payload,
                                n_samples=n0))
    return out
