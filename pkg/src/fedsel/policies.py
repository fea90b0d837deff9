"""Selection-policy contract and the analytical baselines/experts.

Every policy maps the per-round candidate observations to a boolean mask
with exactly K devices selected.  Tie-breaks everywhere favor the lower
client id so results reproduce across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpecError

STATE_FEATURES = 6


@dataclass(frozen=True)
class CandidateObservation:
    """One probed device's state report.

    The six state features are (t_comp, t_comm, e_comp, e_comm,
    probing_loss, data_size), reported on a log scale: the cost and size
    distributions are heavy-tailed, and the utility formulas the scoring
    network must express are products, which the log turns into sums.
    """

    client_id: int
    t_comp: float  # one-epoch compute time this round, seconds
    t_comm: float  # communication time this round, seconds
    e_comp: float  # one-epoch compute energy, joules
    e_comm: float  # communication energy, joules
    probing_loss: float
    data_size: int
    batch_losses: tuple[float, ...] = field(default=(), repr=False)

    def features(self) -> np.ndarray:
        raw = np.array(
            [
                self.t_comp,
                self.t_comm,
                self.e_comp,
                self.e_comm,
                self.probing_loss,
                float(self.data_size),
            ]
        )
        # the 0.01 floor keeps a vanishing probing loss from producing an
        # extreme outlier that saturates the scoring network
        return np.log(raw + 1e-2)

    def projected_time(self, l_ep: int) -> float:
        """Projected round completion time if selected."""
        return self.t_comm + self.t_comp * (l_ep - 1)


def _check_k(k: int, n: int) -> None:
    if not 1 <= k <= n:
        raise InvalidSpecError(f"K must be in [1, {n}], got {k}")


def mask_from_ids(ids: np.ndarray | list[int], n: int) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    mask[np.asarray(ids, dtype=np.int64)] = True
    return mask


def top_k_ids(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the K largest scores; ties broken by lower index."""
    order = np.lexsort((np.arange(len(scores)), -np.asarray(scores, dtype=np.float64)))
    return np.sort(order[:k])


def random_policy(observations: list[CandidateObservation], k: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform K-subset via seeded shuffle."""
    n = len(observations)
    _check_k(k, n)
    return mask_from_ids(rng.permutation(n)[:k], n)


def oort_utility(obs: CandidateObservation, latency_budget: float, alpha: float, l_ep: int) -> float:
    """Statistical utility (batch count x RMS batch loss) x system penalty.

    The system factor (T/t_i)^alpha applies only when the projected round
    time t_i exceeds the budget T.
    """
    losses = np.asarray(obs.batch_losses if obs.batch_losses else (obs.probing_loss,))
    util = len(losses) * float(np.sqrt(np.mean(losses**2)))
    t_i = obs.projected_time(l_ep)
    if t_i > latency_budget:
        util *= (latency_budget / t_i) ** alpha
    return util


def oort_policy(
    observations: list[CandidateObservation],
    k: int,
    latency_budget: float,
    alpha: float,
    l_ep: int,
) -> np.ndarray:
    """Top-K by utility combining training loss and latency."""
    n = len(observations)
    _check_k(k, n)
    utils = np.array([oort_utility(o, latency_budget, alpha, l_ep) for o in observations])
    return mask_from_ids(top_k_ids(utils, k), n)


def greedy_loss_policy(observations: list[CandidateObservation], k: int) -> np.ndarray:
    """Top-K by probing loss, descending."""
    n = len(observations)
    _check_k(k, n)
    return mask_from_ids(top_k_ids(np.array([o.probing_loss for o in observations]), k), n)


def greedy_latency_policy(observations: list[CandidateObservation], k: int, l_ep: int) -> np.ndarray:
    """Top-K by projected round time, ascending."""
    n = len(observations)
    _check_k(k, n)
    times = np.array([o.projected_time(l_ep) for o in observations])
    return mask_from_ids(top_k_ids(-times, k), n)


def latency_tier_policy(
    observations: list[CandidateObservation],
    k: int,
    num_tiers: int,
    tier_index: int,
    l_ep: int,
) -> np.ndarray:
    """Latency-tiered selection.

    Devices are sorted by projected round time into num_tiers equal quantile
    tiers; the caller rotates tier_index round-robin.  Within the active
    tier the K lowest-loss devices are selected, falling back to
    neighboring (faster first) tiers when the tier is short.
    """
    n = len(observations)
    _check_k(k, n)
    if num_tiers < 1:
        raise InvalidSpecError("num_tiers must be >= 1")
    times = np.array([o.projected_time(l_ep) for o in observations])
    by_time = np.lexsort((np.arange(n), times))
    tiers = [list(t) for t in np.array_split(by_time, num_tiers)]
    active = tier_index % num_tiers
    # visiting order: active tier, then neighbors by distance (faster first)
    visit = sorted(range(num_tiers), key=lambda t: (abs(t - active), t))
    picked: list[int] = []
    for t in visit:
        if len(picked) >= k:
            break
        members = [i for i in tiers[t] if i not in picked]
        losses = np.array([observations[i].probing_loss for i in members])
        # lowest loss first, ties by lower id
        order = np.lexsort((members, losses))
        picked.extend(members[j] for j in order[: k - len(picked)])
    return mask_from_ids(picked, n)


class Policy:
    """Base class: stateful policies carry their own seed/counters."""

    name = "policy"

    def select(self, observations: list[CandidateObservation], k: int) -> np.ndarray:
        raise NotImplementedError


class RandomPolicy(Policy):
    name = "random"

    def __init__(self, seed: int = 0):
        self._rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))

    def select(self, observations, k):
        return random_policy(observations, k, self._rng)


class OortPolicy(Policy):
    name = "oort"

    def __init__(self, latency_budget: float, alpha: float, l_ep: int):
        self.latency_budget = latency_budget
        self.alpha = alpha
        self.l_ep = l_ep

    def scores(self, observations):
        return np.array(
            [oort_utility(o, self.latency_budget, self.alpha, self.l_ep) for o in observations]
        )

    def select(self, observations, k):
        return oort_policy(observations, k, self.latency_budget, self.alpha, self.l_ep)


class TierPolicy(Policy):
    name = "tier"

    def __init__(self, num_tiers: int, l_ep: int):
        self.num_tiers = num_tiers
        self.l_ep = l_ep
        self._calls = 0

    def select(self, observations, k):
        mask = latency_tier_policy(observations, k, self.num_tiers, self._calls, self.l_ep)
        self._calls += 1
        return mask


class GreedyLossPolicy(Policy):
    name = "greedy_loss"

    def scores(self, observations):
        return np.array([o.probing_loss for o in observations])

    def select(self, observations, k):
        return greedy_loss_policy(observations, k)


class GreedyLatencyPolicy(Policy):
    name = "greedy_latency"

    def __init__(self, l_ep: int):
        self.l_ep = l_ep

    def scores(self, observations):
        return -np.array([o.projected_time(self.l_ep) for o in observations])

    def select(self, observations, k):
        return greedy_latency_policy(observations, k, self.l_ep)
