"""Episode simulation for flat and hierarchical controllers.

Random draws per episode come from one ``numpy.random.Generator`` seeded
with the episode seed, in a fixed order: initial pursuer cell, initial
evader cell (redrawn as a pair while the state is a capture), then per
step one uniform for the pursuer controller, one for the evader
controller, and one kernel uniform per agent.  Every controller consumes
its uniform whether or not it needs it, so swapping controllers never
shifts the stream.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .abstraction import Partition
from .aggregated_game import AggregatedSolution
from .gridworld import AgentRole, PegEnv
from .options import OptionDef, OptionSet

__all__ = [
    "PolicyError",
    "HierPolicy",
    "FlatController",
    "HierarchicalController",
    "EpisodeResult",
    "MatchupReport",
    "run_episode",
    "run_matchups",
    "write_trajectory",
    "read_trajectory",
]

TRAJECTORY_FIELDS = [
    "step", "pursuer_cell", "evader_cell", "pursuer_action", "evader_action",
    "pursuer_mode", "evader_mode", "pursuer_superstate", "evader_superstate",
]


class PolicyError(RuntimeError):
    """A controller met a state its policy does not cover."""


def _sample(probs: np.ndarray, u: float) -> int:
    cdf = np.cumsum(probs)
    return int(min(np.searchsorted(cdf, u * cdf[-1], side="right"), len(probs) - 1))


@dataclass(eq=False)
class HierPolicy:
    """Everything a two-resolution controller needs at run time."""

    partition: Partition
    options: OptionSet
    local: dict
    aggregated: AggregatedSolution

    def check_coverage(self):
        L = self.partition.superstate_count
        for k1 in range(L):
            for k2 in range(L):
                gamma = (k1, k2)
                if gamma in self.local:
                    continue
                if gamma not in self.aggregated.pursuer_policy:
                    raise PolicyError(f"superstate {gamma} has neither a local game nor an option menu")


class FlatController:
    """Samples the stationary mixed policy at the current joint state."""

    def __init__(self, policy: np.ndarray, role: AgentRole, n_cells: int):
        self.policy = np.asarray(policy, dtype=float)
        self.role = AgentRole(role)
        self.n_cells = n_cells
        self.name = "nash"

    def reset(self):
        pass

    def act(self, s1: int, s2: int, u: float) -> tuple[int, str]:
        return _sample(self.policy[s1 * self.n_cells + s2], u), "flat"


class HierarchicalController:
    """Local Nash inside local-game superstates; options elsewhere.

    A selected option runs until the joint superstate changes.

    At a non-capture local state whose Nash value is zero the evader can
    already hold the pursuer to nothing, so every pursuer action there
    belongs to some local equilibrium and the simplex vertex is arbitrary
    (usually stay, which can idle forever beside an out-of-reach evader).
    The pursuer then selects the equilibrium that follows its best option,
    scored by the aggregated value of the superstate the option leads to,
    provided that beats the current superstate's value; otherwise it keeps
    the local action.
    """

    def __init__(self, policy: HierPolicy, role: AgentRole, n_cells: int,
                 zero_tol: float = 1e-9):
        self.hier = policy
        self.role = AgentRole(role)
        self.n_cells = n_cells
        self.zero_tol = zero_tol
        self.name = "hier"
        self.reset()

    def reset(self):
        self.option: OptionDef | None = None
        self.selected_at: tuple[int, int] | None = None

    def superstate(self, s1: int, s2: int) -> tuple[int, int]:
        return self.hier.partition.joint_label(s1, s2)

    def _idle_option(self, gamma: tuple[int, int]) -> OptionDef | None:
        menu = self.hier.options.available(self.role, gamma[0])
        if not menu:
            return None
        agg = self.hier.aggregated
        scores = [agg.value((o.target, gamma[1])) for o in menu]
        best = int(np.argmax(scores))
        return menu[best] if scores[best] > agg.value(gamma) else None

    def act(self, s1: int, s2: int, u: float) -> tuple[int, str]:
        gamma = self.superstate(s1, s2)
        local = self.hier.local.get(gamma)
        if local is not None:
            self.option = None
            self.selected_at = None
            try:
                pos = int(local.position(s1 * self.n_cells + s2))
            except KeyError:
                raise PolicyError(f"state {(s1, s2)} missing from local game {gamma}") from None
            if self.role == AgentRole.PURSUER and abs(local.values[pos]) <= self.zero_tol:
                option = self._idle_option(gamma)
                if option is not None:
                    return option.action(s1), f"local-idle:{option.name}"
            return _sample(local.policy(self.role)[pos], u), "local"
        if self.option is None or self.selected_at != gamma:
            menu = self.hier.options.available(self.role, gamma[int(self.role)])
            table = (self.hier.aggregated.pursuer_policy if self.role == AgentRole.PURSUER
                     else self.hier.aggregated.evader_policy)
            if gamma not in table or not menu:
                raise PolicyError(f"no option policy at superstate {gamma}")
            self.option = menu[_sample(table[gamma], u)]
            self.selected_at = gamma
        own = s1 if self.role == AgentRole.PURSUER else s2
        return self.option.action(own), f"option:{self.option.name}"


@dataclass
class EpisodeResult:
    steps: int
    captured: bool
    seed: int
    trajectory: list = field(default_factory=list)


def _initial_state(env: PegEnv, rng: np.random.Generator) -> tuple[int, int]:
    n = env.n_cells
    if env.capture_matrix.all():
        raise ValueError("every joint state is a capture; no live start exists")
    while True:
        s1 = int(rng.integers(n))
        s2 = int(rng.integers(n))
        if not env.capture_matrix[s1, s2]:
            return s1, s2


def _move(dest: np.ndarray, prob: np.ndarray, s: int, a: int, u: float) -> int:
    return int(dest[s, a, 0] if u < prob[s, a, 0] else dest[s, a, 1])


def _labels(*ctrls) -> np.ndarray | None:
    for c in ctrls:
        if isinstance(c, HierarchicalController):
            return c.hier.partition.labels
    return None


def run_episode(env: PegEnv, pursuer, evader, seed: int, step_cap: int = 1000,
                record: bool = False) -> EpisodeResult:
    """Play one episode from a uniformly drawn live start until capture or ``step_cap``."""
    if step_cap <= 0:
        raise ValueError("step_cap must be positive")
    rng = np.random.default_rng(seed)
    d1, p1 = env.kernel(AgentRole.PURSUER)
    d2, p2 = env.kernel(AgentRole.EVADER)
    pursuer.reset()
    evader.reset()
    labels = _labels(pursuer, evader)
    s1, s2 = _initial_state(env, rng)
    trajectory = []
    steps = 0
    captured = False
    while steps < step_cap:
        u1, u2 = rng.random(), rng.random()
        a1, m1 = pursuer.act(s1, s2, u1)
        a2, m2 = evader.act(s1, s2, u2)
        if record:
            g1, g2 = (int(labels[s1]), int(labels[s2])) if labels is not None else (-1, -1)
            trajectory.append((steps, s1, s2, a1, a2, m1, m2, g1, g2))
        k1, k2 = rng.random(), rng.random()
        s1 = _move(d1, p1, s1, a1, k1)
        s2 = _move(d2, p2, s2, a2, k2)
        steps += 1
        if env.capture_matrix[s1, s2]:
            captured = True
            break
    if record:
        g1, g2 = (int(labels[s1]), int(labels[s2])) if labels is not None else (-1, -1)
        trajectory.append((steps, s1, s2, -1, -1, "captured" if captured else "step-cap", "", g1, g2))
    return EpisodeResult(steps=steps, captured=captured, seed=seed, trajectory=trajectory)


@dataclass
class MatchupReport:
    rows: list = field(default_factory=list)
    episodes: dict = field(default_factory=dict)

    FIELDS = ["pursuer", "evader", "episodes", "captured", "capture_rate",
              "mean_steps", "std_steps", "sem_steps", "base_seed"]

    def row(self, pursuer: str, evader: str) -> dict:
        for r in self.rows:
            if r["pursuer"] == pursuer and r["evader"] == evader:
                return r
        raise KeyError((pursuer, evader))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.FIELDS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()


def summarize(pursuer: str, evader: str, results: list[EpisodeResult], base_seed: int) -> dict:
    steps = np.array([r.steps for r in results if r.captured], dtype=float)
    k = steps.size
    mean = float(steps.mean()) if k else math.nan
    std = float(steps.std(ddof=1)) if k > 1 else 0.0
    return {
        "pursuer": pursuer,
        "evader": evader,
        "episodes": len(results),
        "captured": int(k),
        "capture_rate": k / len(results) if results else math.nan,
        "mean_steps": mean,
        "std_steps": std,
        "sem_steps": std / math.sqrt(k) if k > 1 else 0.0,
        "base_seed": base_seed,
    }


def run_matchups(env: PegEnv, controllers: dict, pairings, n_episodes: int,
                 base_seed: int = 0, step_cap: int = 1000, record: bool = False) -> MatchupReport:
    """Run each ``(pursuer_name, evader_name)`` pairing for ``n_episodes``.

    ``controllers`` maps a name to a ``(pursuer_controller, evader_controller)``
    pair.  Episode ``k`` of every pairing uses seed ``base_seed + k``, so all
    pairings face the same starting positions.  Uncaptured episodes are
    censored: they count toward the capture rate but not the mean.
    """
    if n_episodes <= 0:
        raise ValueError("n_episodes must be positive")
    report = MatchupReport()
    for p_name, e_name in pairings:
        pursuer = controllers[p_name][0]
        evader = controllers[e_name][1]
        results = [run_episode(env, pursuer, evader, base_seed + k, step_cap, record)
                   for k in range(n_episodes)]
        report.rows.append(summarize(p_name, e_name, results, base_seed))
        report.episodes[(p_name, e_name)] = results
    return report


def write_trajectory(result: EpisodeResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAJECTORY_FIELDS)
    w.writerows(result.trajectory)
    return buf.getvalue()


def read_trajectory(text: str) -> list[tuple]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != TRAJECTORY_FIELDS:
        raise ValueError("not a trajectory file")
    out = []
    for row in reader:
        step, c1, c2, a1, a2, m1, m2, g1, g2 = row
        out.append((int(step), int(c1), int(c2), int(a1), int(a2), m1, m2, int(g1), int(g2)))
    return out
