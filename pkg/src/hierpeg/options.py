"""Options that navigate one agent between adjacent superstates."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .abstraction import Partition, SuperstateTopology
from .flat_solver import ConvergenceError
from .gridworld import AgentRole, PegEnv

__all__ = [
    "LocalMdp",
    "OptionDef",
    "OptionSet",
    "build_local_mdp",
    "solve_local_mdp",
    "build_all_options",
]


@dataclass(frozen=True, eq=False)
class LocalMdp:
    """Single-agent MDP on a superstate plus its periphery.

    ``states`` lists the domain first, then the periphery (each part sorted).
    ``kernel[a, i, j]`` is the restricted transition probability between
    local positions; periphery rows are self-loops.
    """

    agent: AgentRole
    source: int
    target: int
    states: np.ndarray
    n_domain: int
    kernel: np.ndarray
    reward: np.ndarray
    discount: float

    @property
    def domain(self) -> np.ndarray:
        return self.states[: self.n_domain]

    @property
    def periphery(self) -> np.ndarray:
        return self.states[self.n_domain:]


@dataclass(frozen=True, eq=False)
class OptionDef:
    agent: AgentRole
    source: int
    target: int
    domain: np.ndarray
    terminal: np.ndarray
    policy: np.ndarray
    values: np.ndarray | None = None

    @cached_property
    def _lookup(self) -> dict[int, int]:
        return {int(s): int(a) for s, a in zip(self.domain, self.policy)}

    def action(self, cell: int) -> int:
        try:
            return self._lookup[int(cell)]
        except KeyError:
            raise KeyError(f"cell {cell} outside the domain of option {self.source}->{self.target}") from None

    @property
    def name(self) -> str:
        return f"{self.source}->{self.target}"


class OptionSet:
    """Options keyed by ``(agent, source)``; each list is ordered by target."""

    def __init__(self, options=()):
        self._by_source: dict[tuple[int, int], list[OptionDef]] = {}
        for o in options:
            self._by_source.setdefault((int(o.agent), o.source), []).append(o)
        for lst in self._by_source.values():
            lst.sort(key=lambda o: o.target)
            targets = [o.target for o in lst]
            if len(set(targets)) != len(targets):
                raise ValueError("duplicate option for the same adjacent pair")

    def available(self, agent: AgentRole, source: int) -> tuple[OptionDef, ...]:
        return tuple(self._by_source.get((int(agent), int(source)), ()))

    def __iter__(self):
        for key in sorted(self._by_source):
            yield from self._by_source[key]

    def __len__(self) -> int:
        return sum(len(v) for v in self._by_source.values())

    def count(self, agent: AgentRole) -> int:
        return sum(len(v) for (a, _), v in self._by_source.items() if a == int(agent))


def build_local_mdp(env: PegEnv, partition: Partition, topology: SuperstateTopology,
                    agent: AgentRole, source: int, target: int) -> LocalMdp:
    agent = AgentRole(agent)
    if target not in topology.adjacency[int(agent)][source]:
        raise ValueError(f"superstate {target} is not adjacent to {source} for the {agent.name.lower()}")
    domain = partition.members(source)
    peri = topology.peri(agent, source)
    states = np.concatenate([domain, peri])
    pos = np.full(env.n_cells, -1, dtype=np.int64)
    pos[states] = np.arange(states.size)

    dest, prob = env.kernel(agent)
    n_local, n_act = states.size, dest.shape[1]
    kernel = np.zeros((n_act, n_local, n_local))
    for a in range(n_act):
        for slot in range(2):
            d = pos[dest[domain, a, slot]]
            np.add.at(kernel[a], (np.arange(domain.size), d), prob[domain, a, slot])
        kernel[a, np.arange(domain.size, n_local), np.arange(domain.size, n_local)] = 1.0

    reward = np.zeros(n_local)
    reward[domain.size:] = (partition.labels[peri] == target).astype(float)
    return LocalMdp(agent, source, target, states, domain.size, kernel, reward, env.discount)


def solve_local_mdp(mdp: LocalMdp, tol: float = 1e-10, max_iters: int = 100_000):
    """Value iteration with periphery values fixed at ``reward / (1 - discount)``.

    Returns ``(values, policy)``; ``policy`` covers the domain only.  Ties go
    to the lowest action index, and zero-valued states (target unreachable
    inside the restriction) get the stay action.
    """
    nd = mdp.n_domain
    beta = mdp.discount
    V = np.zeros(mdp.states.size)
    V[nd:] = mdp.reward[nd:] / (1.0 - beta)
    for _ in range(max_iters):
        q = mdp.reward[:nd, None] + beta * np.einsum("aij,j->ia", mdp.kernel[:, :nd], V)
        new = q.max(axis=1)
        residual = float(np.max(np.abs(new - V[:nd]))) if nd else 0.0
        V[:nd] = new
        if residual < tol:
            break
    else:
        raise ConvergenceError(f"option value iteration did not converge ({mdp.source}->{mdp.target})")
    q = mdp.reward[:nd, None] + beta * np.einsum("aij,j->ia", mdp.kernel[:, :nd], V)
    best = q.max(axis=1, keepdims=True)
    policy = np.argmax(q >= best - 1e-12 * np.maximum(1.0, np.abs(best)), axis=1)
    policy[V[:nd] <= 0.0] = 0
    return V, policy


def build_all_options(env: PegEnv, partition: Partition, topology: SuperstateTopology,
                      tol: float = 1e-10) -> OptionSet:
    opts = []
    for agent in AgentRole:
        for source, targets in enumerate(topology.adjacency[int(agent)]):
            for target in targets:
                mdp = build_local_mdp(env, partition, topology, agent, source, target)
                values, policy = solve_local_mdp(mdp, tol=tol)
                opts.append(OptionDef(
                    agent=agent,
                    source=source,
                    target=target,
                    domain=mdp.domain,
                    terminal=mdp.periphery,
                    policy=policy,
                    values=values,
                ))
    return OptionSet(opts)
