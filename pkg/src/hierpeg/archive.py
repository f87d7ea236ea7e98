"""Binary policy archives.

Layout: the magic ``b"HPEG"``, a little-endian ``u16`` format version and a
``u32`` section count, then the sections.  Each section is

    u16 name length, name (utf-8)
    u8 dtype length, dtype string (numpy ``dtype.str`` or ``"json"``)
    u8 ndim, ndim x u64 shape
    u64 payload length, payload bytes (little-endian, C order)

The first section, ``meta``, is a JSON object holding the kind, the
environment fingerprint and the scalar statistics.  Timings are left out
so that solving the same configuration twice produces identical bytes.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .abstraction import Partition
from .aggregated_game import AggregatedSolution
from .flat_solver import SolveStats
from .gridworld import AgentRole, PegEnv
from .local_games import LocalSolution
from .options import OptionDef, OptionSet
from .simulator import FlatController, HierarchicalController, HierPolicy

__all__ = [
    "ArchiveError",
    "FingerprintError",
    "Archive",
    "FORMAT_VERSION",
    "fingerprint",
    "flat_archive",
    "hier_archive",
    "dump_archive",
    "parse_archive",
    "save_archive",
    "load_archive",
    "inspect_archive",
]

MAGIC = b"HPEG"
FORMAT_VERSION = 1
_ALLOWED = {"<f8", "<i8", "|b1"}


class ArchiveError(ValueError):
    pass


class FingerprintError(ArchiveError):
    """The archive was solved for a different environment."""


def fingerprint(env: PegEnv) -> str:
    """sha256 over the map, discount, capture radius, slip and action sets."""
    blob = json.dumps(
        {
            "map": env.map.to_text(),
            "discount": repr(float(env.discount)),
            "capture_radius": int(env.capture_radius),
            "slip": repr(float(env.slip)),
            "pursuer_actions": [list(m) for m in env.pursuer_actions.moves],
            "evader_actions": [list(m) for m in env.evader_actions.moves],
        },
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(eq=False)
class Archive:
    kind: str
    meta: dict
    arrays: dict = field(default_factory=dict)

    @property
    def fingerprint(self) -> str:
        return self.meta["fingerprint"]

    def check(self, env: PegEnv) -> None:
        if self.fingerprint != fingerprint(env):
            raise FingerprintError("archive fingerprint does not match the current environment")

    def flat_policies(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self.kind != "flat":
            raise ArchiveError(f"{self.kind} archive has no flat policies")
        a = self.arrays
        return a["values"], a["pursuer_policy"], a["evader_policy"]

    def hier_policy(self) -> HierPolicy:
        if self.kind != "hier":
            raise ArchiveError(f"{self.kind} archive has no hierarchical policy")
        return _unpack_hier(self)

    def controller(self, role: AgentRole, env: PegEnv):
        self.check(env)
        if self.kind == "flat":
            _, p1, p2 = self.flat_policies()
            return FlatController(p1 if AgentRole(role) == AgentRole.PURSUER else p2, role, env.n_cells)
        return HierarchicalController(self.hier_policy(), role, env.n_cells)


def _stats_dict(stats: SolveStats | None) -> dict | None:
    if stats is None:
        return None
    return {
        "iterations": int(stats.iterations),
        "final_residual": float(stats.final_residual),
        "lp_count": int(stats.lp_count),
        "lp_per_iteration": int(stats.lp_per_iteration),
        "residuals": [float(r) for r in stats.residuals],
    }


def _stats_obj(d: dict | None) -> SolveStats | None:
    return None if d is None else SolveStats(**d)


def _env_meta(env: PegEnv) -> dict:
    return {
        "n_cells": env.n_cells,
        "discount": float(env.discount),
        "capture_radius": int(env.capture_radius),
        "slip": float(env.slip),
    }


def flat_archive(env: PegEnv, values, pursuer_policy, evader_policy, stats: SolveStats) -> Archive:
    meta = {
        "kind": "flat",
        "fingerprint": fingerprint(env),
        "env": _env_meta(env),
        "n_joint": env.n_joint,
        "n_terminal": int(env.terminal.sum()),
        "stats": _stats_dict(stats),
    }
    arrays = {
        "values": np.asarray(values, dtype=np.float64),
        "pursuer_policy": np.asarray(pursuer_policy, dtype=np.float64),
        "evader_policy": np.asarray(evader_policy, dtype=np.float64),
    }
    return Archive("flat", meta, arrays)


def hier_archive(env: PegEnv, policy: HierPolicy, phase_stats: dict | None = None) -> Archive:
    """Pack a ``HierPolicy``.  ``phase_stats`` entries named ``seconds`` are dropped."""
    agg = policy.aggregated
    arrays: dict[str, np.ndarray] = {"partition.labels": policy.partition.labels.astype(np.int64)}
    opt_meta = []
    for k, o in enumerate(policy.options):
        opt_meta.append([int(o.agent), int(o.source), int(o.target)])
        arrays[f"option.{k}.domain"] = o.domain.astype(np.int64)
        arrays[f"option.{k}.terminal"] = o.terminal.astype(np.int64)
        arrays[f"option.{k}.policy"] = o.policy.astype(np.int64)
        if o.values is not None:
            arrays[f"option.{k}.values"] = o.values.astype(np.float64)
    local_meta = []
    for k, gamma in enumerate(sorted(policy.local)):
        sol = policy.local[gamma]
        local_meta.append({"superstate": list(gamma), "stats": _stats_dict(sol.stats)})
        arrays[f"local.{k}.states"] = sol.states.astype(np.int64)
        arrays[f"local.{k}.values"] = sol.values.astype(np.float64)
        arrays[f"local.{k}.pursuer_policy"] = sol.pursuer_policy.astype(np.float64)
        arrays[f"local.{k}.evader_policy"] = sol.evader_policy.astype(np.float64)
    arrays["aggregated.values"] = agg.values.astype(np.float64)
    arrays["aggregated.terminal"] = agg.terminal.astype(bool)
    arrays["aggregated.rewards"] = agg.rewards.astype(np.float64)
    menus = sorted(agg.pursuer_policy)
    for k, gamma in enumerate(menus):
        arrays[f"aggregated.{k}.pursuer_policy"] = agg.pursuer_policy[gamma].astype(np.float64)
        arrays[f"aggregated.{k}.evader_policy"] = agg.evader_policy[gamma].astype(np.float64)
    transitions = [
        [g[0], g[1], a, b, [[t[0], t[1], float(m)] for t, m in sorted(row.items())]]
        for (g, a, b), row in sorted(agg.transitions.items())
    ]
    phases = None
    if phase_stats is not None:
        phases = {name: {k: v for k, v in d.items() if k != "seconds"} for name, d in phase_stats.items()}
    meta = {
        "kind": "hier",
        "fingerprint": fingerprint(env),
        "env": _env_meta(env),
        "superstate_count": int(policy.partition.superstate_count),
        "options": opt_meta,
        "local": local_meta,
        "aggregated": {
            "menus": [list(g) for g in menus],
            "transitions": transitions,
            "flags": [[kind, list(g)] for kind, g in agg.flags],
            "stats": _stats_dict(agg.stats),
        },
        "phase_stats": phases,
    }
    return Archive("hier", meta, arrays)


def _unpack_hier(archive: Archive) -> HierPolicy:
    meta, a = archive.meta, archive.arrays
    L = meta["superstate_count"]
    partition = Partition(a["partition.labels"], L)
    opts = []
    for k, (agent, source, target) in enumerate(meta["options"]):
        opts.append(OptionDef(
            agent=AgentRole(agent),
            source=source,
            target=target,
            domain=a[f"option.{k}.domain"],
            terminal=a[f"option.{k}.terminal"],
            policy=a[f"option.{k}.policy"],
            values=a.get(f"option.{k}.values"),
        ))
    local = {}
    for k, entry in enumerate(meta["local"]):
        gamma = tuple(entry["superstate"])
        local[gamma] = LocalSolution(
            superstate=gamma,
            states=a[f"local.{k}.states"],
            values=a[f"local.{k}.values"],
            pursuer_policy=a[f"local.{k}.pursuer_policy"],
            evader_policy=a[f"local.{k}.evader_policy"],
            stats=_stats_obj(entry["stats"]),
        )
    am = meta["aggregated"]
    menus = [tuple(g) for g in am["menus"]]
    transitions = {
        ((t[0], t[1]), t[2], t[3]): {(r[0], r[1]): r[2] for r in t[4]} for t in am["transitions"]
    }
    agg = AggregatedSolution(
        superstate_count=L,
        values=a["aggregated.values"],
        terminal=a["aggregated.terminal"],
        rewards=a["aggregated.rewards"],
        pursuer_policy={g: a[f"aggregated.{k}.pursuer_policy"] for k, g in enumerate(menus)},
        evader_policy={g: a[f"aggregated.{k}.evader_policy"] for k, g in enumerate(menus)},
        transitions=transitions,
        stats=_stats_obj(am["stats"]),
        flags=[(kind, tuple(g)) for kind, g in am["flags"]],
    )
    return HierPolicy(partition, OptionSet(opts), local, agg)


def _write_section(buf: io.BytesIO, name: str, dtype: str, shape: tuple, payload: bytes) -> None:
    raw = name.encode()
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<B", len(dtype)))
    buf.write(dtype.encode())
    buf.write(struct.pack("<B", len(shape)))
    for d in shape:
        buf.write(struct.pack("<Q", d))
    buf.write(struct.pack("<Q", len(payload)))
    buf.write(payload)


def _canonical(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.dtype == bool:
        return arr.astype("|b1")
    if np.issubdtype(arr.dtype, np.integer):
        return arr.astype("<i8")
    if np.issubdtype(arr.dtype, np.floating):
        return arr.astype("<f8")
    raise ArchiveError(f"unsupported array dtype {arr.dtype}")


def dump_archive(archive: Archive) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HI", FORMAT_VERSION, 1 + len(archive.arrays)))
    meta = dict(archive.meta, format_version=FORMAT_VERSION)
    _write_section(buf, "meta", "json", (), json.dumps(meta, sort_keys=True).encode())
    for name in sorted(archive.arrays):
        arr = np.ascontiguousarray(_canonical(archive.arrays[name]))
        _write_section(buf, name, arr.dtype.str, arr.shape, arr.tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ArchiveError("truncated archive")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse_archive(data: bytes) -> Archive:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise ArchiveError("not a policy archive")
    version, count = r.unpack("<HI")
    if version != FORMAT_VERSION:
        raise ArchiveError(f"unsupported archive version {version}")
    meta = None
    arrays = {}
    for _ in range(count):
        (n,) = r.unpack("<H")
        name = r.take(n).decode()
        (n,) = r.unpack("<B")
        dtype = r.take(n).decode()
        (ndim,) = r.unpack("<B")
        shape = tuple(r.unpack(f"<{ndim}Q")) if ndim else ()
        (size,) = r.unpack("<Q")
        payload = r.take(size)
        if dtype == "json":
            if name != "meta":
                raise ArchiveError(f"unexpected json section {name!r}")
            meta = json.loads(payload)
            continue
        if dtype not in _ALLOWED:
            raise ArchiveError(f"section {name!r} has unsupported dtype {dtype!r}")
        arr = np.frombuffer(payload, dtype=np.dtype(dtype)).reshape(shape).copy()
        arrays[name] = arr
    if r.pos != len(data):
        raise ArchiveError("trailing bytes after the last section")
    if meta is None:
        raise ArchiveError("archive has no meta section")
    meta.pop("format_version", None)
    return Archive(meta["kind"], meta, arrays)


def save_archive(archive: Archive, path) -> None:
    Path(path).write_bytes(dump_archive(archive))


def load_archive(path, env: PegEnv | None = None) -> Archive:
    """Read an archive; with ``env`` the fingerprint is verified too."""
    archive = parse_archive(Path(path).read_bytes())
    if env is not None:
        archive.check(env)
    return archive


def inspect_archive(archive: Archive, max_items: int = 8) -> str:
    """Human-readable dump: meta as indented JSON, then one line per array."""
    out = [f"format_version: {FORMAT_VERSION}", f"kind: {archive.kind}"]
    meta = dict(archive.meta)
    if "aggregated" in meta:
        meta["aggregated"] = dict(meta["aggregated"], transitions=f"<{len(meta['aggregated']['transitions'])} rows>")
    out.append(json.dumps(meta, indent=2, sort_keys=True))
    for name in sorted(archive.arrays):
        arr = archive.arrays[name]
        flat = arr.ravel()
        head = ", ".join(f"{v:.6g}" if arr.dtype.kind == "f" else str(v) for v in flat[:max_items])
        more = ", ..." if flat.size > max_items else ""
        out.append(f"{name} {arr.dtype.str} {list(arr.shape)}: [{head}{more}]")
    return "\n".join(out) + "\n"
