"""Network description, derived per-action quantities and the network file format.

Actions are indexed ``(i, a)``: a vehicle idle in region ``i`` repositions to
region ``a`` and serves the next customer picked up there. Matrices over
actions are ``L x L`` with that orientation; flattened vectors use
``i * L + a``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "NetworkError",
    "NetworkSpec",
    "DerivedNetwork",
    "build_derived",
    "generate_grid",
    "load_network",
    "save_network",
    "network_digest",
]


class NetworkError(ValueError):
    """Invalid network data; ``field`` names the offending entry when known."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


def _matrix(value, L, name):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise NetworkError(f"{name}: not a numeric matrix ({exc})", name) from None
    if arr.shape != (L, L):
        raise NetworkError(f"{name}: expected shape ({L}, {L}), got {arr.shape}", name)
    if not np.all(np.isfinite(arr)):
        raise NetworkError(f"{name}: entries must be finite", name)
    return arr


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    """Regions, demand rates, travel times and prices of a ride-hailing network."""

    regions: int
    demand: np.ndarray
    trip_time: np.ndarray
    price: float
    cost: float
    commission: float
    reposition_time: np.ndarray | None = None

    def __post_init__(self):
        L = self.regions
        if isinstance(L, bool) or not isinstance(L, (int, np.integer)) or L < 1:
            raise NetworkError("regions: must be a positive integer", "regions")
        demand = _matrix(self.demand, L, "demand")
        trip = _matrix(self.trip_time, L, "trip_time")
        if self.reposition_time is None:
            repo = trip.copy()
            np.fill_diagonal(repo, 0.0)
        else:
            repo = _matrix(self.reposition_time, L, "reposition_time")
        if np.any(demand < 0):
            raise NetworkError("demand: entries must be nonnegative", "demand")
        if not np.any(demand > 0):
            raise NetworkError("demand: at least one entry must be positive", "demand")
        if np.any(trip < 0):
            raise NetworkError("trip_time: entries must be nonnegative", "trip_time")
        if np.any(np.diag(repo) != 0):
            raise NetworkError("reposition_time: diagonal must be zero", "reposition_time")
        off = ~np.eye(L, dtype=bool)
        if np.any(repo[off] <= 0):
            raise NetworkError("reposition_time: off-diagonal entries must be positive", "reposition_time")
        for name, lo, hi, closed in (("price", 0.0, np.inf, False), ("cost", 0.0, np.inf, True),
                                     ("commission", 0.0, 1.0, False)):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float, np.floating, np.integer)):
                raise NetworkError(f"{name}: must be a number", name)
            v = float(v)
            ok = np.isfinite(v) and (v >= lo if closed else v > lo) and v < hi
            if not ok:
                rng = f"[{lo}, {hi})" if closed else f"({lo}, {hi})"
                raise NetworkError(f"{name}: {v} outside {rng}", name)
            object.__setattr__(self, name, v)
        object.__setattr__(self, "regions", int(L))
        for name, arr in (("demand", demand), ("trip_time", trip), ("reposition_time", repo)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __eq__(self, other):
        if not isinstance(other, NetworkSpec):
            return NotImplemented
        return (
            self.regions == other.regions
            and all(np.array_equal(getattr(self, k), getattr(other, k))
                    for k in ("demand", "trip_time", "reposition_time"))
            and (self.price, self.cost, self.commission) == (other.price, other.cost, other.commission)
        )

    def replace(self, **changes) -> "NetworkSpec":
        data = {k: getattr(self, k) for k in
                ("regions", "demand", "trip_time", "reposition_time", "price", "cost", "commission")}
        data.update(changes)
        return NetworkSpec(**data)

    def to_dict(self) -> dict:
        return {
            "regions": self.regions,
            "demand": self.demand.tolist(),
            "trip_time": self.trip_time.tolist(),
            "reposition_time": self.reposition_time.tolist(),
            "price": self.price,
            "cost": self.cost,
            "commission": self.commission,
        }


@dataclass(frozen=True, eq=False)
class DerivedNetwork:
    """Per-action quantities derived from a :class:`NetworkSpec`."""

    spec: NetworkSpec
    b: np.ndarray  # b_i, total demand rate originating in region i
    q: np.ndarray  # routing probabilities q_ij
    service_time: np.ndarray  # expected trip time of a customer picked up in region a
    tau_dr: np.ndarray  # active time of action (i, a)
    r_A: np.ndarray
    r_C: np.ndarray
    r_C2P: np.ndarray
    usable: np.ndarray = field(repr=False)  # action (i, a) allowed iff b_a > 0

    @property
    def L(self) -> int:
        return self.spec.regions

    @property
    def active(self) -> np.ndarray:
        return self.b > 0


def build_derived(spec: NetworkSpec) -> DerivedNetwork:
    """Compute routing, active times and per-action rewards of ``spec``."""
    L = spec.regions
    b = spec.demand.sum(axis=1)
    active = b > 0
    q = np.zeros((L, L))
    q[active] = spec.demand[active] / b[active, None]
    service = (q * spec.trip_time).sum(axis=1)
    tau = spec.reposition_time + service[None, :]
    p, c, R = spec.price, spec.cost, spec.commission
    r_C2P = np.broadcast_to(p * R * service[None, :], (L, L)).copy()
    r_C = p * (1.0 - R) * service[None, :] - c * tau
    # defined as the sum so the split identity holds bit-exactly
    r_A = r_C + r_C2P
    usable = np.broadcast_to(active[None, :], (L, L)).copy()
    for arr in (b, q, service, tau, r_A, r_C, r_C2P, usable):
        arr.setflags(write=False)
    return DerivedNetwork(spec=spec, b=b, q=q, service_time=service, tau_dr=tau,
                          r_A=r_A, r_C=r_C, r_C2P=r_C2P, usable=usable)


def generate_grid(rows: int, cols: int, seed: int, demand_values=(0, 1, 2), price: float = 1.0,
                  cost: float = 0.1, commission: float = 0.7) -> NetworkSpec:
    """Regions on an integer lattice with Manhattan travel times.

    Off-diagonal demand is drawn uniformly from ``demand_values``; the
    diagonal is zero. If every draw is zero, the generator redraws.
    """
    if rows < 1 or cols < 1 or rows * cols < 2:
        raise ValueError("grid needs at least two regions")
    values = np.array(sorted(set(float(v) for v in demand_values)))
    if values.size == 0 or np.any(values < 0):
        raise ValueError("demand_values must be a nonempty set of nonnegative rates")
    if not np.any(values > 0):
        raise ValueError("demand_values must contain a positive rate")
    coords = np.array([(r, c) for r in range(rows) for c in range(cols)])
    dist = np.abs(coords[:, None, :] - coords[None, :, :]).sum(axis=2).astype(float)
    L = rows * cols
    rng = np.random.default_rng(seed)
    off = ~np.eye(L, dtype=bool)
    while True:
        demand = np.zeros((L, L))
        demand[off] = rng.choice(values, size=L * L - L)
        if np.any(demand > 0):
            break
    return NetworkSpec(regions=L, demand=demand, trip_time=dist, reposition_time=dist.copy(),
                       price=price, cost=cost, commission=commission)


_REQUIRED = ("regions", "demand", "trip_time", "price", "cost", "commission")


def spec_from_dict(data) -> NetworkSpec:
    if not isinstance(data, dict):
        raise NetworkError("network document must be an object")
    for key in _REQUIRED:
        if key not in data:
            raise NetworkError(f"missing field '{key}'", key)
    unknown = set(data) - set(_REQUIRED) - {"reposition_time"}
    if unknown:
        raise NetworkError(f"unknown field(s): {', '.join(sorted(unknown))}", sorted(unknown)[0])
    return NetworkSpec(
        regions=data["regions"],
        demand=data["demand"],
        trip_time=data["trip_time"],
        reposition_time=data.get("reposition_time"),
        price=data["price"],
        cost=data["cost"],
        commission=data["commission"],
    )


def load_network(path) -> NetworkSpec:
    """Read a JSON network file. Errors carry line numbers or field names."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkError(f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    try:
        return spec_from_dict(data)
    except NetworkError as exc:
        raise NetworkError(f"{path}: {exc}", exc.field) from None


def save_network(spec: NetworkSpec, path) -> None:
    # json writes floats with repr, which round-trips exactly
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2) + "\n", encoding="utf-8")


def network_digest(spec: NetworkSpec) -> str:
    blob = json.dumps(spec.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
