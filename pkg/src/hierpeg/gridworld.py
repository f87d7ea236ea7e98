"""Grid maps, per-agent kernels and the joint pursuit-evasion dynamics."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

__all__ = [
    "AgentRole",
    "ActionSet",
    "GridMap",
    "MapError",
    "PegEnv",
    "PURSUER_ACTIONS",
    "EVADER_ACTIONS",
    "parse_map",
    "room_grid_map",
    "individual_transition",
    "joint_transition",
    "is_capture",
]

_DIRECTIONS = {"N": (-1, 0), "S": (1, 0), "E": (0, 1), "W": (0, -1)}


class MapError(ValueError):
    """Raised for malformed or unusable grid maps."""


class AgentRole(enum.IntEnum):
    """Pursuer is the maximizing agent, Evader the minimizing one."""

    PURSUER = 0
    EVADER = 1

    @property
    def other(self) -> "AgentRole":
        return AgentRole(1 - self)


@dataclass(frozen=True)
class ActionSet:
    """Ordered primitive moves as ``(direction, distance)`` pairs.

    ``("-", 0)`` is the stay move and always comes first.  Policies index
    into this order, so it is part of the persistence format.
    """

    moves: tuple[tuple[str, int], ...]

    @classmethod
    def with_reach(cls, reach: int) -> "ActionSet":
        moves = [("-", 0)]
        for dist in range(1, reach + 1):
            moves.extend((d, dist) for d in "NSEW")
        return cls(tuple(moves))

    def __len__(self) -> int:
        return len(self.moves)

    def labels(self) -> list[str]:
        return ["stay" if d == 0 else f"{name}{d}" for name, d in self.moves]


PURSUER_ACTIONS = ActionSet.with_reach(2)
EVADER_ACTIONS = ActionSet.with_reach(1)


@dataclass(frozen=True)
class GridMap:
    """Rectangular grid with wall cells; free cells are indexed row-major."""

    width: int
    height: int
    walls: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "walls", frozenset(map(tuple, self.walls)))
        if self.width < 1 or self.height < 1:
            raise MapError("map must have at least one row and column")
        for r, c in self.walls:
            if not (0 <= r < self.height and 0 <= c < self.width):
                raise MapError(f"wall cell {(r, c)} outside the map")
        if not self.free_cells:
            raise MapError("map has no free cells")
        if not self._connected():
            raise MapError("free cells are not 4-connected")

    @cached_property
    def free_cells(self) -> tuple[tuple[int, int], ...]:
        return tuple(
            (r, c)
            for r in range(self.height)
            for c in range(self.width)
            if (r, c) not in self.walls
        )

    @cached_property
    def index(self) -> dict[tuple[int, int], int]:
        return {cell: i for i, cell in enumerate(self.free_cells)}

    @cached_property
    def coords(self) -> np.ndarray:
        return np.array(self.free_cells, dtype=np.int64).reshape(-1, 2)

    @property
    def n_free(self) -> int:
        return len(self.free_cells)

    def is_free(self, r: int, c: int) -> bool:
        return 0 <= r < self.height and 0 <= c < self.width and (r, c) not in self.walls

    def _connected(self) -> bool:
        start = self.free_cells[0]
        seen = {start}
        queue = deque([start])
        while queue:
            r, c = queue.popleft()
            for dr, dc in _DIRECTIONS.values():
                nxt = (r + dr, c + dc)
                if nxt not in seen and self.is_free(*nxt):
                    seen.add(nxt)
                    queue.append(nxt)
        return len(seen) == len(self.free_cells)

    def to_text(self) -> str:
        rows = []
        for r in range(self.height):
            rows.append("".join("#" if (r, c) in self.walls else "." for c in range(self.width)))
        return "\n".join(rows) + "\n"


def parse_map(text: str) -> GridMap:
    """Parse a ``#``/``.`` map block.  Trailing newline is optional."""
    lines = text.splitlines()
    while lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise MapError("empty map")
    width = len(lines[0])
    walls = set()
    for r, line in enumerate(lines):
        if len(line) != width:
            raise MapError(f"ragged map: line {r} has length {len(line)}, expected {width}")
        for c, ch in enumerate(line):
            if ch == "#":
                walls.add((r, c))
            elif ch != ".":
                raise MapError(f"illegal character {ch!r} at {(r, c)}")
    return GridMap(width=width, height=len(lines), walls=frozenset(walls))


def room_grid_map(rooms: int, room_size: int, door_offset: int | None = None) -> str:
    """Text of a ``rooms x rooms`` world of square rooms with one-cell walls.

    Every wall segment between two neighbouring rooms gets a single door at
    ``door_offset`` cells from the segment start (default: the middle).
    """
    if rooms < 1 or room_size < 1:
        raise ValueError("rooms and room_size must be positive")
    if door_offset is None:
        door_offset = room_size // 2
    if not 0 <= door_offset < room_size:
        raise ValueError("door_offset must lie inside a wall segment")
    pitch = room_size + 1
    size = rooms * pitch + 1
    grid = [["#"] * size for _ in range(size)]
    for i in range(rooms):
        for j in range(rooms):
            r0, c0 = i * pitch + 1, j * pitch + 1
            for r in range(r0, r0 + room_size):
                for c in range(c0, c0 + room_size):
                    grid[r][c] = "."
            if j + 1 < rooms:
                grid[r0 + door_offset][c0 + room_size] = "."
            if i + 1 < rooms:
                grid[r0 + room_size][c0 + door_offset] = "."
    return "\n".join("".join(row) for row in grid) + "\n"


@dataclass(frozen=True)
class PegEnv:
    """Two-agent pursuit-evasion game on a grid map.

    The terminal set holds all joint states whose Chebyshev distance is at
    most ``capture_radius``; reward is +1 there and 0 elsewhere.  ``slip``
    is the probability that a commanded move is replaced by stay.
    """

    map: GridMap
    pursuer_actions: ActionSet = PURSUER_ACTIONS
    evader_actions: ActionSet = EVADER_ACTIONS
    capture_radius: int = 1
    discount: float = 0.95
    slip: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.discount < 1.0:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")
        if not 0.0 <= self.slip < 1.0:
            raise ValueError(f"slip must lie in [0, 1), got {self.slip}")
        if self.capture_radius < 0:
            raise ValueError("capture_radius must be non-negative")

    @property
    def n_cells(self) -> int:
        return self.map.n_free

    @property
    def n_joint(self) -> int:
        return self.map.n_free ** 2

    def actions(self, role: AgentRole) -> ActionSet:
        return self.pursuer_actions if role == AgentRole.PURSUER else self.evader_actions

    def n_actions(self, role: AgentRole) -> int:
        return len(self.actions(role))

    @cached_property
    def _kernels(self) -> tuple[tuple[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]:
        return (self._build_kernel(self.pursuer_actions), self._build_kernel(self.evader_actions))

    def _build_kernel(self, actions: ActionSet) -> tuple[np.ndarray, np.ndarray]:
        # (n, A, 2) destinations and probabilities: slot 0 = executed move, slot 1 = slip-to-stay
        n = self.map.n_free
        dest = np.empty((n, len(actions), 2), dtype=np.int64)
        prob = np.empty((n, len(actions), 2))
        for i, (r, c) in enumerate(self.map.free_cells):
            for a, (name, dist) in enumerate(actions.moves):
                target = i
                if dist > 0:
                    dr, dc = _DIRECTIONS[name]
                    path = [(r + dr * k, c + dc * k) for k in range(1, dist + 1)]
                    if all(self.map.is_free(*cell) for cell in path):
                        target = self.map.index[path[-1]]
                dest[i, a] = (target, i)
                if target == i:
                    prob[i, a] = (1.0, 0.0)
                else:
                    prob[i, a] = (1.0 - self.slip, self.slip)
        return dest, prob

    def kernel(self, role: AgentRole) -> tuple[np.ndarray, np.ndarray]:
        """Padded ``(dest, prob)`` arrays of shape ``(n_cells, n_actions, 2)``."""
        return self._kernels[int(role)]

    def transition_matrices(self, role: AgentRole) -> list[sp.csr_matrix]:
        """One sparse ``n_cells x n_cells`` matrix per action."""
        dest, prob = self.kernel(role)
        n = self.n_cells
        rows = np.repeat(np.arange(n), 2)
        return [
            sp.csr_matrix((prob[:, a].ravel(), (rows, dest[:, a].ravel())), shape=(n, n))
            for a in range(dest.shape[1])
        ]

    @cached_property
    def reach(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """Boolean one-step reachability ``R[s, s']`` per role (any action)."""
        out = []
        for role in AgentRole:
            dest, prob = self.kernel(role)
            n = self.n_cells
            mask = prob.reshape(n, -1) > 0
            rows = np.repeat(np.arange(n), mask.shape[1])[mask.ravel()]
            cols = dest.reshape(n, -1).ravel()[mask.ravel()]
            m = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
            m.data[:] = 1.0
            out.append(m)
        return out[0], out[1]

    @cached_property
    def capture_matrix(self) -> np.ndarray:
        """``C[i, j]`` is True when pursuer at cell i captures evader at cell j."""
        xy = self.map.coords
        cheb = np.abs(xy[:, None, :] - xy[None, :, :]).max(axis=2)
        C = cheb <= self.capture_radius
        C.setflags(write=False)
        return C

    @cached_property
    def terminal(self) -> np.ndarray:
        """Boolean mask over joint indices ``pursuer * n_cells + evader``."""
        return self.capture_matrix.ravel()

    def joint_index(self, pursuer: int, evader: int) -> int:
        return pursuer * self.n_cells + evader

    def split_index(self, s: int) -> tuple[int, int]:
        return divmod(int(s), self.n_cells)

    def reward(self, s: int) -> float:
        return 1.0 if self.terminal[s] else 0.0


def individual_transition(env: PegEnv, role: AgentRole, s: int, a: int) -> dict[int, float]:
    if not 0 <= a < env.n_actions(role):
        raise IndexError(f"action {a} out of range for {role.name}")
    dest, prob = env.kernel(role)
    out: dict[int, float] = {}
    for d, p in zip(dest[s, a], prob[s, a]):
        if p > 0:
            out[int(d)] = out.get(int(d), 0.0) + float(p)
    return out


def joint_transition(env: PegEnv, s: tuple[int, int], a1: int, a2: int) -> dict[tuple[int, int], float]:
    """Distribution over joint states ``(pursuer, evader)``; terminal states self-loop."""
    if is_capture(env, s):
        return {tuple(s): 1.0}
    d1 = individual_transition(env, AgentRole.PURSUER, s[0], a1)
    d2 = individual_transition(env, AgentRole.EVADER, s[1], a2)
    return {(x, y): p * q for x, p in d1.items() for y, q in d2.items()}


def is_capture(env: PegEnv, s: tuple[int, int]) -> bool:
    return bool(env.capture_matrix[s[0], s[1]])
