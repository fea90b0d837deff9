"""Parametric per-device latency and energy cost model.

Each device has static base costs drawn once from lognormal distributions
(system heterogeneity) plus a per-round multiplicative variation (runtime
heterogeneity), either lognormal noise or a CSV trace lookup.

Round-level aggregates: latency is straggler-bound (max over selected),
energy is additive (sum over selected); both include the probing phase
paid by every probed candidate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidActionError, InvalidSpecError, ParseError, TraceExhaustedError
from .rng import keyed_rng


@dataclass(frozen=True)
class HeterogeneitySpec:
    """Lognormal parameters of the device pool.

    Base values are medians; sigma is the lognormal shape (sigma = 0 makes
    every device identical to the base).
    """

    comp_time_base: float = 1.0  # seconds per local epoch
    comp_time_sigma: float = 0.0
    comm_time_base: float = 1.0  # seconds per model upload+download
    comm_time_sigma: float = 0.0
    comp_power_base: float = 1.0  # watts
    comp_power_sigma: float = 0.0
    comm_power_base: float = 1.0  # watts
    comm_power_sigma: float = 0.0
    runtime_sigma: float = 0.0  # per-(device, round) multiplicative noise
    trace_path: str | None = None  # overrides runtime_sigma when set
    report_time: float = 0.0  # state-report cost added to the probing latency

    def __post_init__(self):
        for name in ("comp_time_base", "comm_time_base", "comp_power_base", "comm_power_base"):
            if not getattr(self, name) > 0:
                raise InvalidSpecError(f"{name} must be > 0")
        for name in (
            "comp_time_sigma",
            "comm_time_sigma",
            "comp_power_sigma",
            "comm_power_sigma",
            "runtime_sigma",
        ):
            if getattr(self, name) < 0:
                raise InvalidSpecError(f"{name} must be >= 0")
        if self.report_time < 0:
            raise InvalidSpecError("report_time must be >= 0")


@dataclass(frozen=True)
class DeviceProfile:
    """Static per-device cost parameters."""

    device_id: int
    comp_time: float  # seconds per local epoch (base, before runtime variation)
    comm_time: float  # seconds per round of communication
    comp_power: float  # watts while computing
    comm_power: float  # watts while communicating


@dataclass(frozen=True)
class RoundCosts:
    """Realized per-device costs for one round, plus the probing aggregates.

    Arrays cover the full probed candidate pool in device-id order.
    t_comp/e_comp are one-epoch figures; multiply by (l_ep - 1) for the
    post-probe phase.
    """

    t_comp: np.ndarray = field(repr=False)
    t_comm: np.ndarray = field(repr=False)
    e_comp: np.ndarray = field(repr=False)
    e_comm: np.ndarray = field(repr=False)
    T_prob: float = 0.0
    E_prob: float = 0.0


class VariationTrace:
    """Runtime-variation multipliers loaded from a CSV trace.

    Format: header `round,device_id,comp_mult,comm_mult`, one row per
    (round, device).
    """

    def __init__(self, table: dict[tuple[int, int], tuple[float, float]]):
        self._table = table

    @classmethod
    def load(cls, path: str | Path) -> "VariationTrace":
        path = Path(path)
        table: dict[tuple[int, int], tuple[float, float]] = {}
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["round", "device_id", "comp_mult", "comm_mult"]:
                raise ParseError(f"{path}: bad trace header at line 1: {header}")
            for lineno, row in enumerate(reader, start=2):
                try:
                    table[(int(row[0]), int(row[1]))] = (float(row[2]), float(row[3]))
                except (ValueError, IndexError):
                    raise ParseError(f"{path}: malformed trace row at line {lineno}") from None
        return cls(table)

    def lookup(self, round_index: int, device_id: int) -> tuple[float, float]:
        try:
            return self._table[(round_index, device_id)]
        except KeyError:
            raise TraceExhaustedError(
                f"trace has no entry for round {round_index}, device {device_id}"
            ) from None


def sample_profiles(n: int, spec: HeterogeneitySpec, seed: int) -> list[DeviceProfile]:
    """Draw a fixed device pool, deterministic under seed.

    Lognormal with median = base: value = base * exp(sigma * z), z ~ N(0,1).
    """
    if n < 1:
        raise InvalidSpecError("device pool size must be positive")
    rng = keyed_rng(seed)
    z = rng.standard_normal((n, 4))
    profiles = []
    for i in range(n):
        profiles.append(
            DeviceProfile(
                device_id=i,
                comp_time=spec.comp_time_base * float(np.exp(spec.comp_time_sigma * z[i, 0])),
                comm_time=spec.comm_time_base * float(np.exp(spec.comm_time_sigma * z[i, 1])),
                comp_power=spec.comp_power_base * float(np.exp(spec.comp_power_sigma * z[i, 2])),
                comm_power=spec.comm_power_base * float(np.exp(spec.comm_power_sigma * z[i, 3])),
            )
        )
    return profiles


def realize_round_costs(
    profiles: list[DeviceProfile],
    round_index: int,
    spec: HeterogeneitySpec,
    seed: int,
    trace: VariationTrace | None = None,
) -> RoundCosts:
    """Apply this round's variation multipliers to every probed candidate.

    Energy components are power x corresponding time, so runtime slowdowns
    cost energy too.  Deterministic under (seed, round_index).
    """
    n = len(profiles)
    if trace is not None:
        mults = np.array(
            [trace.lookup(round_index, p.device_id) for p in profiles], dtype=np.float64
        )
    elif spec.runtime_sigma > 0:
        z = keyed_rng(seed, round_index).standard_normal((n, 2))
        mults = np.exp(spec.runtime_sigma * z)
    else:
        mults = np.ones((n, 2))

    base_comp = np.array([p.comp_time for p in profiles])
    base_comm = np.array([p.comm_time for p in profiles])
    p_comp = np.array([p.comp_power for p in profiles])
    p_comm = np.array([p.comm_power for p in profiles])

    t_comp = base_comp * mults[:, 0]
    t_comm = base_comm * mults[:, 1]
    e_comp = p_comp * t_comp
    e_comm = p_comm * t_comm
    return RoundCosts(
        t_comp=t_comp,
        t_comm=t_comm,
        e_comp=e_comp,
        e_comm=e_comm,
        T_prob=float((t_comp + spec.report_time).max()),
        E_prob=float(e_comp.sum()),
    )


def round_latency(costs: RoundCosts, mask: np.ndarray, l_ep: int) -> float:
    """T_prob + max over selected of (t_comm + t_comp * (l_ep - 1))."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise InvalidActionError("round latency undefined for an empty selection")
    per_device = costs.t_comm + costs.t_comp * (l_ep - 1)
    return costs.T_prob + float(per_device[mask].max())


def round_energy(costs: RoundCosts, mask: np.ndarray, l_ep: int) -> float:
    """E_prob + sum over selected of (e_comm + e_comp * (l_ep - 1))."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise InvalidActionError("round energy undefined for an empty selection")
    per_device = costs.e_comm + costs.e_comp * (l_ep - 1)
    return costs.E_prob + float(per_device[mask].sum())
