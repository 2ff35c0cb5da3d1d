from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

PRB_BANDWIDTH_KHZ = 180.0


@dataclass(frozen=True)
class UserRadioState:
    user_id: int
    # PRBs the user may receive this scheduling interval
    entitlement: int
    # Achievable rate per PRB, length P
    channel: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.entitlement < 0:
            raise ValueError("entitlement must be >= 0")
        if any(q < 0 for q in self.channel):
            raise ValueError("channel quality must be >= 0")


@dataclass(frozen=True)
class PrbGrid:
    num_prbs: int
    assignment: tuple[int | None, ...]
    rates: tuple[float, ...]

    def assigned_to(self, user_id: int) -> int:
        return sum(1 for u in self.assignment if u == user_id)

    @property
    def throughput(self) -> float:
        return float(sum(self.rates))


@dataclass(frozen=True)
class TokenAccount:
    user_id: int
    tokens: float
    # Fraction of the node's virtual compute granted to this user
    share: float
    cap: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.tokens <= self.cap:
            raise ValueError("tokens must lie in [0, cap]")
        if self.share < 0:
            raise ValueError("share must be >= 0")


@dataclass(frozen=True)
class KernelRequest:
    user_id: int
    cost: float
    seq: int

    def __post_init__(self) -> None:
        if self.cost <= 0:
            raise ValueError("kernel cost must be > 0")


@dataclass(frozen=True)
class DispatchResult:
    dispatched: tuple[KernelRequest, ...]
    queues: dict[int, tuple[KernelRequest, ...]]
    accounts: tuple[TokenAccount, ...]


def entitlement_from_bandwidth(khz: float) -> int:
    """Whole PRBs covered by a virtual bandwidth, e.g. 360 kHz -> 2."""
    return int(math.floor(khz / PRB_BANDWIDTH_KHZ + 1e-9))


def map_prbs(users: Sequence[UserRadioState], num_prbs: int) -> PrbGrid:
    """Greedy best-channel mapping: each PRB, in index order, goes to the eligible user
    with the highest quality on it (ties: lowest user id)."""
    for u in users:
        if len(u.channel) != num_prbs:
            raise ValueError(f"user {u.user_id} channel length {len(u.channel)} != {num_prbs}")
    ordered = sorted(users, key=lambda u: u.user_id)
    remaining = {u.user_id: u.entitlement for u in ordered}
    assignment: list[int | None] = [None] * num_prbs
    rates = [0.0] * num_prbs
    for p in range(num_prbs):
        best: UserRadioState | None = None
        for u in ordered:
            if remaining[u.user_id] <= 0:
                continue
            if best is None or u.channel[p] > best.channel[p]:
                best = u
        if best is None:
            continue
        assignment[p] = best.user_id
        rates[p] = best.channel[p]
        remaining[best.user_id] -= 1
    return PrbGrid(num_prbs=num_prbs, assignment=tuple(assignment), rates=tuple(rates))


def refill_tokens(accounts: Sequence[TokenAccount], budget_per_tick: float) -> list[TokenAccount]:
    if sum(a.share for a in accounts) > 1.0 + 1e-12:
        raise ValueError("token shares must sum to <= 1")
    return [
        replace(a, tokens=min(a.cap, a.tokens + a.share * budget_per_tick)) for a in accounts
    ]


def schedule_kernels(
    queues: Mapping[int, Sequence[KernelRequest]],
    accounts: Sequence[TokenAccount],
    scan_order: int,
) -> DispatchResult:
    """Round-robin over users from ``scan_order``; each pops queue heads while affordable.

    An unaffordable head blocks the rest of that user's queue.
    """
    users = sorted(a.user_id for a in accounts)
    tokens = {a.user_id: a.tokens for a in accounts}
    pending = {uid: deque(q) for uid, q in queues.items()}
    dispatched: list[KernelRequest] = []
    n = len(users)
    for step in range(n):
        uid = users[(scan_order + step) % n]
        q = pending.get(uid)
        while q and q[0].cost <= tokens[uid]:
            req = q.popleft()
            tokens[uid] -= req.cost
            dispatched.append(req)
    out_accounts = tuple(
        replace(a, tokens=tokens[a.user_id]) for a in sorted(accounts, key=lambda a: a.user_id)
    )
    return DispatchResult(
        dispatched=tuple(dispatched),
        queues={uid: tuple(q) for uid, q in pending.items()},
        accounts=out_accounts,
    )


def entitlements_from_allocation(
    x: np.ndarray, node: int, kind: int, capacity: float, num_prbs: int
) -> list[int]:
    """PRB counts per slice from a node's deployed radio units (largest remainder, ties by index)."""
    units = np.asarray(x[:, node, kind], dtype=float)
    if capacity <= 0:
        return [0] * len(units)
    quotas = units / capacity * num_prbs
    counts = np.floor(quotas + 1e-9).astype(int)
    total = min(num_prbs, int(math.floor(quotas.sum() + 1e-9)))
    spare = total - int(counts.sum())
    order = sorted(range(len(units)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: max(spare, 0)]:
        counts[i] += 1
    return counts.tolist()


def shares_from_allocation(x: np.ndarray, node: int, kind: int, capacity: float) -> list[float]:
    units = np.asarray(x[:, node, kind], dtype=float)
    if capacity <= 0:
        return [0.0] * len(units)
    return (units / capacity).tolist()


def sample_channels(
    num_users: int, num_prbs: int, rng: np.random.Generator, low: float = 0.0, high: float = 1.0
) -> np.ndarray:
    """I.i.d. per-PRB channel qualities, shape (users, PRBs)."""
    return rng.uniform(low, high, size=(num_users, num_prbs))


class ComputeHypervisor:
    """Token-based kernel scheduler: per tick refill, dispatch, rotate the scan start."""

    def __init__(self, accounts: Sequence[TokenAccount], budget_per_tick: float) -> None:
        self.accounts = tuple(sorted(accounts, key=lambda a: a.user_id))
        self.budget_per_tick = budget_per_tick
        self.queues: dict[int, deque[KernelRequest]] = {a.user_id: deque() for a in self.accounts}
        self.scan_order = 0
        self._seq = itertools.count()
        self._initial = {a.user_id: a.tokens for a in self.accounts}
        self.refilled = {a.user_id: 0.0 for a in self.accounts}
        self.spent = {a.user_id: 0.0 for a in self.accounts}

    def submit(self, user_id: int, cost: float) -> KernelRequest:
        if user_id not in self.queues:
            raise KeyError(f"unknown user {user_id}")
        req = KernelRequest(user_id=user_id, cost=cost, seq=next(self._seq))
        self.queues[user_id].append(req)
        return req

    def tick(self) -> tuple[KernelRequest, ...]:
        before = {a.user_id: a.tokens for a in self.accounts}
        refilled = refill_tokens(self.accounts, self.budget_per_tick)
        for a in refilled:
            self.refilled[a.user_id] += a.tokens - before[a.user_id]
        result = schedule_kernels(self.queues, refilled, self.scan_order)
        for req in result.dispatched:
            self.spent[req.user_id] += req.cost
        self.accounts = result.accounts
        self.queues = {uid: deque(q) for uid, q in result.queues.items()}
        if self.accounts:
            self.scan_order = (self.scan_order + 1) % len(self.accounts)
        return result.dispatched

    def conservation_error(self) -> float:
        """Largest |initial + refilled - spent - current| over users."""
        return max(
            (
                abs(self._initial[a.user_id] + self.refilled[a.user_id] - self.spent[a.user_id] - a.tokens)
                for a in self.accounts
            ),
            default=0.0,
        )


@dataclass(frozen=True)
class NodeHypervisorReport:
    """What one node's two mappers did with a deployed allocation; indexed by slice."""

    node: int
    entitlements: tuple[int, ...]
    prbs_assigned: tuple[int, ...]
    radio_rate: tuple[float, ...]
    shares: tuple[float, ...]
    kernels_dispatched: tuple[int, ...]
    tokens_spent: tuple[float, ...]
    conservation_error: float


def find_kind(labels: Sequence[str], keyword: str) -> int | None:
    """First resource kind whose label contains ``keyword``."""
    return next((k for k, label in enumerate(labels) if keyword in label), None)


def drive_node(
    x: np.ndarray,
    node: int,
    capacity: np.ndarray,
    rng: np.random.Generator,
    *,
    radio_kind: int | None,
    compute_kind: int | None,
    num_prbs: int = 50,
    ticks: int = 100,
    burst_ticks: float = 4.0,
) -> NodeHypervisorReport:
    """Map one node's deployed radio units onto PRBs and run its kernel scheduler.

    Every slice is one user. Each tick every slice submits one kernel costing
    0.5 to 1.5 times an even split of the node's compute budget.
    """
    n_slices = x.shape[0]
    entitlements = [0] * n_slices
    assigned = [0] * n_slices
    rate = [0.0] * n_slices
    if radio_kind is not None:
        entitlements = entitlements_from_allocation(
            x, node, radio_kind, float(capacity[node, radio_kind]), num_prbs
        )
        channels = sample_channels(n_slices, num_prbs, rng)
        users = [
            UserRadioState(
                user_id=i, entitlement=entitlements[i], channel=tuple(channels[i].tolist())
            )
            for i in range(n_slices)
        ]
        grid = map_prbs(users, num_prbs)
        for p, owner in enumerate(grid.assignment):
            if owner is not None:
                assigned[owner] += 1
                rate[owner] += grid.rates[p]

    shares = [0.0] * n_slices
    dispatched = [0] * n_slices
    spent = [0.0] * n_slices
    conservation = 0.0
    budget = float(capacity[node, compute_kind]) if compute_kind is not None else 0.0
    if compute_kind is not None and budget > 0:
        shares = shares_from_allocation(x, node, compute_kind, budget)
        total = sum(shares)
        if total > 1.0:
            shares = [s / total for s in shares]
        hv = ComputeHypervisor(
            [
                TokenAccount(user_id=i, tokens=0.0, share=shares[i], cap=burst_ticks * budget)
                for i in range(n_slices)
            ],
            budget_per_tick=budget,
        )
        mean_cost = budget / n_slices
        for _ in range(ticks):
            for i in range(n_slices):
                hv.submit(i, float(rng.uniform(0.5, 1.5)) * mean_cost)
            for req in hv.tick():
                dispatched[req.user_id] += 1
        spent = [hv.spent[i] for i in range(n_slices)]
        conservation = hv.conservation_error()

    return NodeHypervisorReport(
        node=node,
        entitlements=tuple(entitlements),
        prbs_assigned=tuple(assigned),
        radio_rate=tuple(rate),
        shares=tuple(shares),
        kernels_dispatched=tuple(dispatched),
        tokens_spent=tuple(spent),
        conservation_error=conservation,
    )
