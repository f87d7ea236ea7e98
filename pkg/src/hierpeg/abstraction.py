"""Superstate partitions and their periphery, boundary and adjacency."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .gridworld import AgentRole, GridMap, PegEnv

__all__ = [
    "PartitionError",
    "Partition",
    "SuperstateTopology",
    "partition_from_blocks",
    "partition_from_file",
    "infer_room_grid",
    "single_superstate",
    "compute_topology",
    "joint_periphery",
    "joint_boundary",
]


class PartitionError(ValueError):
    pass


@dataclass(frozen=True)
class Partition:
    """Label per free cell (row-major order); labels are ``0..count-1``."""

    labels: np.ndarray
    superstate_count: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        if labels.ndim != 1 or labels.size == 0:
            raise PartitionError("labels must be a non-empty vector")
        if labels.min() < 0 or labels.max() >= self.superstate_count:
            raise PartitionError("label outside 0..superstate_count-1")
        counts = np.bincount(labels, minlength=self.superstate_count)
        if np.any(counts == 0):
            raise PartitionError(f"empty superstate {int(np.flatnonzero(counts == 0)[0])}")

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)

    def membership(self) -> np.ndarray:
        """Boolean ``(count, n_cells)`` indicator matrix."""
        return self.labels[None, :] == np.arange(self.superstate_count)[:, None]

    def joint_label(self, pursuer_cell: int, evader_cell: int) -> tuple[int, int]:
        return int(self.labels[pursuer_cell]), int(self.labels[evader_cell])

    def __eq__(self, other):
        if not isinstance(other, Partition):
            return NotImplemented
        return self.superstate_count == other.superstate_count and np.array_equal(self.labels, other.labels)

    def __hash__(self):
        return hash((self.superstate_count, self.labels.tobytes()))

    def to_text(self, grid: GridMap) -> str:
        rows = []
        for r in range(grid.height):
            vals = []
            for c in range(grid.width):
                i = grid.index.get((r, c))
                vals.append("-1" if i is None else str(int(self.labels[i])))
            rows.append(",".join(vals))
        return "\n".join(rows) + "\n"


def single_superstate(grid: GridMap) -> Partition:
    return Partition(np.zeros(grid.n_free, dtype=np.int64), 1)


def _room_of_cell(grid: GridMap, rooms: int) -> np.ndarray:
    """(room_row, room_col) for every free cell of a regular room grid."""
    if (grid.height - 1) % rooms or (grid.width - 1) % rooms:
        raise PartitionError(f"a {grid.height}x{grid.width} map cannot hold {rooms} rooms per side")
    ph, pw = (grid.height - 1) // rooms, (grid.width - 1) // rooms
    if ph < 2 or pw < 2:
        raise PartitionError("rooms would be empty")
    out = np.empty((grid.n_free, 2), dtype=np.int64)
    for i, (r, c) in enumerate(grid.free_cells):
        on_hwall, on_vwall = r % ph == 0, c % pw == 0
        if on_hwall and on_vwall:
            raise PartitionError(f"free cell {(r, c)} sits on a wall intersection")
        if r in (0, grid.height - 1) or c in (0, grid.width - 1):
            raise PartitionError(f"free cell {(r, c)} on the outer wall")
        if on_hwall:
            # door between the room above and the room below; it belongs to the one above
            if not (grid.is_free(r - 1, c) and grid.is_free(r + 1, c)):
                raise PartitionError(f"free cell {(r, c)} on a wall line is not a door")
            out[i] = (r // ph - 1, c // pw)
        elif on_vwall:
            if not (grid.is_free(r, c - 1) and grid.is_free(r, c + 1)):
                raise PartitionError(f"free cell {(r, c)} on a wall line is not a door")
            out[i] = (r // ph, c // pw - 1)
        else:
            out[i] = (r // ph, c // pw)
    for r in range(grid.height):
        for c in range(grid.width):
            if r % ph and c % pw and not grid.is_free(r, c):
                raise PartitionError(f"wall cell {(r, c)} inside a room")
    return out


def infer_room_grid(grid: GridMap) -> int:
    """Smallest number of rooms per side for which the map is a regular room grid.

    ``1`` is rejected unless the whole interior is free.
    """
    for rooms in range(1, min(grid.height, grid.width)):
        try:
            _room_of_cell(grid, rooms)
        except PartitionError:
            continue
        return rooms
    raise PartitionError("map lacks a regular room structure")


def partition_from_blocks(grid: GridMap, block: int, room_grid: int | None = None) -> Partition:
    """Group each ``block x block`` square of rooms into one superstate.

    Door cells on a wall line belong to the room above (horizontal walls)
    or to the left (vertical walls).
    """
    if room_grid is None:
        room_grid = infer_room_grid(grid)
    if block < 1 or room_grid % block:
        raise PartitionError(f"block size {block} does not divide {room_grid} rooms per side")
    rooms = _room_of_cell(grid, room_grid)
    per_side = room_grid // block
    labels = (rooms[:, 0] // block) * per_side + rooms[:, 1] // block
    return Partition(labels, per_side * per_side)


def partition_from_file(grid: GridMap, text: str) -> Partition:
    """Parse comma-separated integer labels aligned with the map (``-1`` on walls)."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) != grid.height:
        raise PartitionError(f"partition has {len(lines)} rows, map has {grid.height}")
    labels = np.full(grid.n_free, -1, dtype=np.int64)
    for r, line in enumerate(lines):
        try:
            vals = [int(tok) for tok in line.split(",")]
        except ValueError as exc:
            raise PartitionError(f"row {r}: {exc}") from None
        if len(vals) != grid.width:
            raise PartitionError(f"row {r} has {len(vals)} entries, map has {grid.width}")
        for c, v in enumerate(vals):
            i = grid.index.get((r, c))
            if i is None:
                if v != -1:
                    raise PartitionError(f"label {v} on wall cell {(r, c)}")
            elif v < 0:
                raise PartitionError(f"free cell {(r, c)} has no label")
            else:
                labels[i] = v
    ids, normalized = np.unique(labels, return_inverse=True)
    return Partition(normalized, len(ids))


@dataclass(frozen=True)
class SuperstateTopology:
    """Per-role periphery/boundary masks and adjacency lists.

    ``periphery[role][k]`` and ``boundary[role][k]`` are boolean masks over
    free cells; ``adjacency[role][k]`` is the sorted tuple of superstates
    adjacent to ``k``.
    """

    periphery: tuple[np.ndarray, np.ndarray]
    boundary: tuple[np.ndarray, np.ndarray]
    adjacency: tuple[tuple[tuple[int, ...], ...], tuple[tuple[int, ...], ...]]

    def peri(self, role: AgentRole, k: int) -> np.ndarray:
        return np.flatnonzero(self.periphery[int(role)][k])

    def bndry(self, role: AgentRole, k: int) -> np.ndarray:
        return np.flatnonzero(self.boundary[int(role)][k])

    def adjacent_pairs(self, role: AgentRole) -> set[tuple[int, int]]:
        return {(k, t) for k, targets in enumerate(self.adjacency[int(role)]) for t in targets}


def compute_topology(env: PegEnv, partition: Partition) -> SuperstateTopology:
    if len(partition.labels) != env.n_cells:
        raise PartitionError("partition does not match the map")
    M = partition.membership().astype(float)
    inside = M.astype(bool)
    peri, bndry, adj = [], [], []
    for role in AgentRole:
        R = env.reach[int(role)]
        # (M @ R)[k, s'] > 0  <=>  s' reachable in one step from superstate k
        from_inside = np.asarray((sp.csr_matrix(M) @ R).todense()) > 0
        from_outside = np.asarray((sp.csr_matrix(1.0 - M) @ R).todense()) > 0
        p = from_inside & ~inside
        b = from_outside & inside
        peri.append(p)
        bndry.append(b)
        adj.append(tuple(
            tuple(int(t) for t in np.flatnonzero((p[k][None, :] & inside).any(axis=1)))
            for k in range(partition.superstate_count)
        ))
    return SuperstateTopology(tuple(peri), tuple(bndry), tuple(adj))


def _members_pair(partition: Partition, gamma: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    k1, k2 = gamma
    if not (0 <= k1 < partition.superstate_count and 0 <= k2 < partition.superstate_count):
        raise PartitionError(f"joint superstate {gamma} out of range")
    return partition.members(k1), partition.members(k2)


def joint_periphery(env: PegEnv, partition: Partition, gamma: tuple[int, int]) -> np.ndarray:
    """Sorted joint indices outside ``gamma`` reachable in one joint step
    from a non-terminal state of ``gamma``."""
    g1, g2 = _members_pair(partition, gamma)
    R1, R2 = env.reach
    n = env.n_cells
    src = (~env.capture_matrix[np.ix_(g1, g2)]).astype(float)
    reached = np.asarray((R1[g1].T @ sp.csr_matrix(src) @ R2[g2]).todense()) > 0
    in1 = np.zeros(n, dtype=bool)
    in1[g1] = True
    in2 = np.zeros(n, dtype=bool)
    in2[g2] = True
    reached &= ~np.outer(in1, in2)
    s1, s2 = np.nonzero(reached)
    return s1 * n + s2


def joint_boundary(env: PegEnv, partition: Partition, gamma: tuple[int, int]) -> np.ndarray:
    """Sorted joint indices inside ``gamma`` reachable in one joint step
    from a non-terminal state outside ``gamma``."""
    g1, g2 = _members_pair(partition, gamma)
    R1, R2 = env.reach
    n = env.n_cells
    in1 = np.zeros(n, dtype=bool)
    in1[g1] = True
    in2 = np.zeros(n, dtype=bool)
    in2[g2] = True
    src = (~np.outer(in1, in2) & ~env.capture_matrix).astype(float)
    reached = np.asarray((R1[:, g1].T @ sp.csr_matrix(src) @ R2[:, g2]).todense()) > 0
    i, j = np.nonzero(reached)
    return g1[i] * n + g2[j]
