"""Seeded per-frame edit streams (deleted, added) over a superset mesh."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mesh import SupersetMesh

SCENARIOS = ("fracture", "refinement", "merge", "repeated_locality")


class EditError(ValueError):
    """An edit batch is inconsistent with the active mask."""


class ScheduleConfigError(ValueError):
    pass


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based Philox generator keyed by (seed, stream)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


@dataclass(frozen=True)
class EditBatch:
    deleted: tuple[int, ...] = ()
    added: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "deleted", tuple(sorted(int(t) for t in self.deleted)))
        object.__setattr__(self, "added", tuple(sorted(int(t) for t in self.added)))
        if len(set(self.deleted)) != len(self.deleted) or len(set(self.added)) != len(self.added):
            raise EditError("duplicate tet ids in edit batch")
        if set(self.deleted) & set(self.added):
            raise EditError("a tet cannot be both deleted and added in one frame")

    def __len__(self) -> int:
        return len(self.deleted) + len(self.added)

    def touched(self) -> tuple[int, ...]:
        return self.deleted + self.added


def validate_batch(mask: np.ndarray, batch: EditBatch) -> None:
    n = len(mask)
    for t in batch.touched():
        if not 0 <= t < n:
            raise EditError(f"tet id {t} out of range")
    if batch.deleted:
        dead = [t for t in batch.deleted if not mask[t]]
        if dead:
            raise EditError(f"deleting inactive tets {dead[:8]}")
    if batch.added:
        live = [t for t in batch.added if mask[t]]
        if live:
            raise EditError(f"adding active tets {live[:8]}")


def apply_batch(mask: np.ndarray, batch: EditBatch) -> None:
    """Validate strictly, then flip ``mask`` in place."""
    validate_batch(mask, batch)
    if batch.deleted:
        mask[list(batch.deleted)] = False
    if batch.added:
        mask[list(batch.added)] = True


@dataclass
class Schedule:
    scenario: str
    seed: int
    params: dict
    initial_mask: np.ndarray
    frames: list[EditBatch] = field(default_factory=list)

    def __eq__(self, other):
        if not isinstance(other, Schedule):
            return NotImplemented
        return (self.scenario == other.scenario and self.seed == other.seed
                and self.params == other.params
                and np.array_equal(self.initial_mask, other.initial_mask)
                and self.frames == other.frames)

    def masks(self):
        """Yield the mask after each frame (a fresh copy each time)."""
        mask = self.initial_mask.copy()
        for batch in self.frames:
            apply_batch(mask, batch)
            yield mask.copy()

    def final_mask(self) -> np.ndarray:
        mask = self.initial_mask.copy()
        for batch in self.frames:
            apply_batch(mask, batch)
        return mask

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "params": self.params,
            "n_tets": int(len(self.initial_mask)),
            "initial_inactive": np.flatnonzero(~self.initial_mask).tolist(),
            "frames": [{"deleted": list(b.deleted), "added": list(b.added)} for b in self.frames],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Schedule":
        mask = np.ones(int(data["n_tets"]), dtype=bool)
        mask[data["initial_inactive"]] = False
        frames = [EditBatch(f["deleted"], f["added"]) for f in data["frames"]]
        return cls(data["scenario"], int(data["seed"]), dict(data["params"]), mask, frames)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "Schedule":
        return cls.from_dict(json.loads(Path(path).read_text()))


# --- slab selection ---------------------------------------------------------

def _plane_distances(mesh: SupersetMesh, pool: np.ndarray, axis: int | None):
    cent = mesh.centroids()[pool]
    if axis is None:
        lo = mesh.vertices[np.unique(mesh.tets[pool])].min(axis=0)
        hi = mesh.vertices[np.unique(mesh.tets[pool])].max(axis=0)
        axis = int(np.argmax(hi - lo))
    coord = cent[:, axis]
    c = float(coord.mean())
    return np.abs(coord - c), axis, c


def _extent(mesh: SupersetMesh, pool: np.ndarray, axis: int) -> float:
    x = mesh.vertices[np.unique(mesh.tets[pool]), axis]
    return float(x.max() - x.min())


def select_slab(mesh: SupersetMesh, target_fraction: float | None = None,
                half_width: float | None = None, axis: int | None = None):
    """Tets whose centroid lies within a slab around the mesh centre plane.

    With ``target_fraction`` the half-width is binary-searched to the smallest
    value holding ceil(fraction * pool) tets; distance ties at that width are
    broken by tet id so the count lands on target.  With ``half_width`` (a
    fraction of the mesh extent along the axis) the slab is taken as is.

    Returns (tet ids ordered by plane distance then id, params dict).
    """
    pool = np.flatnonzero(mesh.initial_mask())
    if len(pool) == 0:
        raise ScheduleConfigError("mesh has no tets")
    dist, axis, c = _plane_distances(mesh, pool, axis)
    order = np.lexsort((pool, dist))
    sorted_dist = dist[order]
    if (target_fraction is None) == (half_width is None):
        raise ScheduleConfigError("give exactly one of target_fraction, half_width")
    if target_fraction is not None:
        if not 0 < target_fraction < 1:
            raise ScheduleConfigError("target_fraction must be in (0, 1)")
        target = math.ceil(target_fraction * len(pool))
        lo, hi = 0.0, float(sorted_dist[-1])
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if np.count_nonzero(sorted_dist <= mid) >= target:
                hi = mid
            else:
                lo = mid
        w = hi
        count = int(np.count_nonzero(sorted_dist <= w))
        if count > target + 1:
            count = target
        params = {"axis": axis, "center": c, "half_width": w / _extent(mesh, pool, axis),
                  "target_fraction": target_fraction}
    else:
        if half_width < 0:
            raise ScheduleConfigError("half_width must be non-negative")
        w = half_width * _extent(mesh, pool, axis)
        count = int(np.count_nonzero(sorted_dist <= w))
        params = {"axis": axis, "center": c, "half_width": half_width}
    if count == 0:
        raise ScheduleConfigError("slab is empty")
    return pool[order[:count]], params


def _split(ids: np.ndarray, frames: int) -> list[np.ndarray]:
    if frames < 1:
        raise ScheduleConfigError("frames must be >= 1")
    if len(ids) < frames:
        raise ScheduleConfigError(f"slab of {len(ids)} tets cannot fill {frames} frames")
    return np.array_split(ids, frames)


def make_fracture_schedule(mesh: SupersetMesh, seed: int, frames: int,
                           target_fraction: float | None = 0.1,
                           half_width: float | None = None, axis: int | None = None) -> Schedule:
    if half_width is not None:
        target_fraction = None
    slab, params = select_slab(mesh, target_fraction, half_width, axis)
    params["frames"] = frames
    batches = [EditBatch(deleted=b.tolist()) for b in _split(slab, frames)]
    return Schedule("fracture", seed, params, mesh.initial_mask(), batches)


def make_merge_schedule(mesh: SupersetMesh, seed: int, frames: int,
                        target_fraction: float | None = 0.1,
                        half_width: float | None = None, axis: int | None = None) -> Schedule:
    if half_width is not None:
        target_fraction = None
    slab, params = select_slab(mesh, target_fraction, half_width, axis)
    params["frames"] = frames
    mask = mesh.initial_mask()
    mask[slab] = False
    batches = [EditBatch(added=b.tolist()) for b in _split(slab[::-1], frames)]
    return Schedule("merge", seed, params, mask, batches)


def make_repeated_locality_schedule(mesh: SupersetMesh, seed: int, cycles: int = 4,
                                    target_fraction: float | None = 0.1,
                                    half_width: float | None = None,
                                    axis: int | None = None) -> Schedule:
    if cycles < 1:
        raise ScheduleConfigError("cycles must be >= 1")
    if half_width is not None:
        target_fraction = None
    slab, params = select_slab(mesh, target_fraction, half_width, axis)
    params["cycles"] = cycles
    ids = slab.tolist()
    batches = []
    for _ in range(cycles):
        batches.append(EditBatch(deleted=ids))
        batches.append(EditBatch(added=ids))
    return Schedule("repeated_locality", seed, params, mesh.initial_mask(), batches)


def make_refinement_schedule(mesh: SupersetMesh, seed: int, frames: int,
                             parents_per_frame: int = 8) -> Schedule:
    if frames < 1 or parents_per_frame < 1:
        raise ScheduleConfigError("frames and parents_per_frame must be >= 1")
    parents = np.array(sorted(mesh.refinement), dtype=np.int64)
    need = frames * parents_per_frame
    if len(parents) < need:
        raise ScheduleConfigError(
            f"need {need} refinable parents, mesh has {len(parents)}")
    rng = make_rng(seed, stream=1)
    picked = rng.choice(parents, size=need, replace=False)
    batches = []
    for f in range(frames):
        group = sorted(picked[f * parents_per_frame:(f + 1) * parents_per_frame].tolist())
        kids = [c for p in group for c in mesh.refinement[p]]
        batches.append(EditBatch(deleted=group, added=kids))
    params = {"frames": frames, "parents_per_frame": parents_per_frame}
    return Schedule("refinement", seed, params, mesh.initial_mask(), batches)


def make_schedule(scenario: str, mesh: SupersetMesh, seed: int, frames: int,
                  target_fraction: float = 0.1, half_width: float | None = None,
                  parents_per_frame: int = 8, cycles: int = 4) -> Schedule:
    if scenario == "fracture":
        return make_fracture_schedule(mesh, seed, frames, target_fraction, half_width)
    if scenario == "merge":
        return make_merge_schedule(mesh, seed, frames, target_fraction, half_width)
    if scenario == "refinement":
        return make_refinement_schedule(mesh, seed, frames, parents_per_frame)
    if scenario in ("repeated_locality", "repeat"):
        return make_repeated_locality_schedule(mesh, seed, cycles, target_fraction, half_width)
    raise ScheduleConfigError(f"unknown scenario {scenario!r}")
