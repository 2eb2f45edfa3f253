"""Two-objective evolutionary engine with age-based innovation protection.

Selection follows elitist NSGA-II: non-dominated sorting over (age down,
reward up), crowding distance for truncation and tie-breaks, binary
tournaments over the top half, and a merged parents+children survivor
step.  The "age" objective counts generations since an individual's
lineage last had a protected component mutated; which mutations reset it
is the protection policy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from evoworld.errors import ConfigError, LogicError
from evoworld.genome import Genome, MutationEvent, mutate
from evoworld.rng import RandomSource

POLICY_KINDS = ("dip", "controller-protect", "memory-and-controller-protect",
                "random-age", "none")

# components whose mutation resets age, per policy kind; random-age and none
# fall back to the dip rule for bookkeeping (see apply_protection)
RESET_COMPONENTS = {
    "dip": ("visual", "memory"),
    "controller-protect": ("controller",),
    "memory-and-controller-protect": ("memory", "controller"),
    "random-age": (),
    "none": ("visual", "memory"),
}


@dataclass
class Individual:
    genome: Genome
    id: int
    age: int = 0
    reward: float | None = None
    rank: int | None = None
    crowding: float | None = None
    parent_id: int | None = None

    @property
    def evaluated(self) -> bool:
        return self.reward is not None


@dataclass(frozen=True)
class ProtectionPolicy:
    kind: str = "dip"
    random_age_range: tuple = (0, 20)

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ConfigError(f"unknown policy {self.kind!r}; expected one of {POLICY_KINDS}")
        lo, hi = self.random_age_range
        if lo < 0 or hi < lo:
            raise ConfigError(f"bad random-age range {self.random_age_range}")
        object.__setattr__(self, "random_age_range", (int(lo), int(hi)))

    @property
    def reward_only(self) -> bool:
        return self.kind == "none"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "random_age_range": list(self.random_age_range)}

    @classmethod
    def from_dict(cls, d: dict) -> "ProtectionPolicy":
        return cls(d["kind"], tuple(d.get("random_age_range", (0, 20))))


@dataclass
class Population:
    members: list
    generation: int = 0
    size: int = 0
    next_id: int = 0

    def __post_init__(self):
        if self.size == 0:
            self.size = len(self.members)
        if len(self.members) != self.size:
            raise ConfigError(f"population has {len(self.members)} members, size says {self.size}")
        if self.next_id == 0 and self.members:
            self.next_id = max(m.id for m in self.members) + 1


def dominates(a: Individual, b: Individual) -> bool:
    """Pareto dominance: age minimized, reward maximized, one strict."""
    if not a.evaluated or not b.evaluated:
        raise LogicError("dominance needs evaluated individuals (reward set)")
    if a.age <= b.age and a.reward >= b.reward:
        return a.age < b.age or a.reward > b.reward
    return False


def _reward_dominates(a: Individual, b: Individual) -> bool:
    if not a.evaluated or not b.evaluated:
        raise LogicError("dominance needs evaluated individuals (reward set)")
    return a.reward > b.reward


def nondominated_sort(members: list, reward_only: bool = False) -> list:
    """Fast non-dominated sort; returns fronts as lists of member indices.

    Each member's rank field is set to its front index.
    """
    dom = _reward_dominates if reward_only else dominates
    n = len(members)
    dominated_by = [[] for _ in range(n)]
    dom_count = [0] * n
    for i in range(n):
        mi = members[i]
        for j in range(i + 1, n):
            mj = members[j]
            if dom(mi, mj):
                dominated_by[i].append(j)
                dom_count[j] += 1
            elif dom(mj, mi):
                dominated_by[j].append(i)
                dom_count[i] += 1
    fronts = []
    current = [i for i in range(n) if dom_count[i] == 0]
    while current:
        fronts.append(current)
        nxt = []
        for i in current:
            for j in dominated_by[i]:
                dom_count[j] -= 1
                if dom_count[j] == 0:
                    nxt.append(j)
        current = sorted(nxt)
    for r, front in enumerate(fronts):
        for i in front:
            members[i].rank = r
    return fronts


def brute_force_fronts(members: list, reward_only: bool = False) -> list:
    """O(n^3) reference front construction; test/verify oracle only."""
    dom = _reward_dominates if reward_only else dominates
    remaining = list(range(len(members)))
    fronts = []
    while remaining:
        front = [
            i for i in remaining
            if not any(dom(members[j], members[i]) for j in remaining if j != i)
        ]
        fronts.append(sorted(front))
        remaining = [i for i in remaining if i not in front]
    return fronts


def crowding_distance(front: list, members: list, reward_only: bool = False) -> dict:
    """Crowding distance per member id; boundary individuals map to inf.

    Each member's crowding field is set as a side effect.
    """
    if not front:
        raise ConfigError("crowding_distance needs a nonempty front")
    objectives = [lambda m: float(m.reward)] if reward_only else [
        lambda m: float(m.age),
        lambda m: float(m.reward),
    ]
    dist = {members[i].id: 0.0 for i in front}
    if len(front) <= 2:
        dist = {members[i].id: math.inf for i in front}
    else:
        for obj in objectives:
            order = sorted(front, key=lambda i: obj(members[i]))
            lo, hi = obj(members[order[0]]), obj(members[order[-1]])
            dist[members[order[0]].id] = math.inf
            dist[members[order[-1]].id] = math.inf
            if hi == lo:
                continue  # degenerate objective adds nothing
            for pos in range(1, len(order) - 1):
                ident = members[order[pos]].id
                if dist[ident] != math.inf:
                    gap = obj(members[order[pos + 1]]) - obj(members[order[pos - 1]])
                    dist[ident] += gap / (hi - lo)
    for i in front:
        members[i].crowding = dist[members[i].id]
    return dist


def rank_population(members: list, reward_only: bool = False) -> list:
    """Assign rank and crowding to every member; returns the fronts."""
    fronts = nondominated_sort(members, reward_only)
    for front in fronts:
        crowding_distance(front, members, reward_only)
    return fronts


def _beats(a: Individual, b: Individual, rng: RandomSource) -> bool:
    """Crowded-comparison tournament: rank, then crowding, then coin flip."""
    if a.rank != b.rank:
        return a.rank < b.rank
    if a.crowding != b.crowding:
        return a.crowding > b.crowding
    return bool(rng.random() < 0.5)


def select_parents(pop: Population, n: int, rng: RandomSource) -> list:
    """n winners of independent binary tournaments over the top half.

    The eligible pool is the best half of the population under
    (rank ascending, crowding descending); both tournament entrants are
    drawn uniformly from it, with replacement.
    """
    ranked = sorted(
        pop.members,
        key=lambda m: (m.rank, -m.crowding if m.crowding is not None else 0.0),
    )
    pool = ranked[: max(1, len(ranked) // 2)]
    picks = []
    for _ in range(n):
        i, j = int(rng.integers(len(pool))), int(rng.integers(len(pool)))
        a, b = pool[i], pool[j]
        picks.append(a if i == j or _beats(a, b, rng) else b)
    return picks


def apply_protection(event: MutationEvent, child: Individual,
                     policy: ProtectionPolicy, rng: RandomSource) -> Individual:
    """Set the child's age according to the protection policy.

    The child arrives carrying its parent's age.  dip resets on visual or
    memory mutations, the two control-side treatments on theirs;
    random-age ignores the event and draws uniform in the configured
    range.  Policy "none" keeps dip-style bookkeeping so logs stay
    comparable, but its age never enters dominance.
    """
    if policy.kind == "random-age":
        lo, hi = policy.random_age_range
        child.age = int(rng.integers(lo, hi + 1))
    elif event.component in RESET_COMPONENTS[policy.kind]:
        child.age = 0
    return child


def increment_ages(pop: Population) -> None:
    for m in pop.members:
        m.age += 1


@dataclass
class StepReport:
    """Per-generation bookkeeping handed to the run logger."""

    resets: dict = field(default_factory=lambda: {c: 0 for c in ("visual", "memory", "controller")})
    mutations: dict = field(default_factory=lambda: {c: 0 for c in ("visual", "memory", "controller")})
    children: int = 0


def generation_step(pop: Population, policy: ProtectionPolicy, evaluator,
                    sigma: float, rng: RandomSource):
    """One elitist generation; returns (next population, StepReport).

    Sequence: ages +1; rank and crowd the current population; N children
    via binary tournaments + single-component mutation + protection;
    children evaluated in batch; parents and children merged, re-sorted,
    and truncated back to N with the last front split by crowding.

    evaluator is a callable (genomes, generation) -> list of rewards; it
    must substitute a domain-minimum reward for failed evaluations.
    """
    for m in pop.members:
        if not m.evaluated:
            raise LogicError("generation_step needs a fully evaluated population")
    n = pop.size
    increment_ages(pop)
    rank_population(pop.members, policy.reward_only)

    parents = select_parents(pop, n, rng.derive("select"))
    report = StepReport(children=n)
    children = []
    for idx, parent in enumerate(parents):
        child_genome, event = mutate(parent.genome, sigma, rng.derive("mutate", idx))
        child = Individual(
            genome=child_genome,
            id=pop.next_id + idx,
            age=parent.age,
            parent_id=parent.id,
        )
        apply_protection(event, child, policy, rng.derive("age", idx))
        report.mutations[event.component] += 1
        if policy.kind != "random-age" and event.component in RESET_COMPONENTS[policy.kind]:
            report.resets[event.component] += 1
        children.append(child)

    rewards = evaluator([c.genome for c in children], pop.generation + 1)
    if len(rewards) != len(children):
        raise LogicError(
            f"evaluator returned {len(rewards)} rewards for {len(children)} children"
        )
    for child, r in zip(children, rewards):
        child.reward = float(r)

    merged = pop.members + children
    fronts = rank_population(merged, policy.reward_only)
    survivors = []
    for front in fronts:
        if len(survivors) + len(front) <= n:
            survivors.extend(front)
        else:
            room = n - len(survivors)
            # split the overfull front by crowding, largest first; index
            # order breaks exact ties deterministically
            chosen = sorted(front, key=lambda i: (-merged[i].crowding, i))[:room]
            survivors.extend(chosen)
        if len(survivors) == n:
            break
    next_members = [merged[i] for i in sorted(survivors)]
    return (
        Population(next_members, generation=pop.generation + 1, size=n,
                   next_id=pop.next_id + n),
        report,
    )
