"""Benchmark driver: matched edit schedules across policies, per-frame metrics,
parity shadow checks and CSV/JSON reports."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import stats

from . import connectivity as conn
from . import elasticity, proxy
from .edits import SCENARIOS, EditBatch, Schedule, make_rng, make_schedule
from .mesh import SupersetMesh, build_refinement, generate_block_mesh, load_mesh
from .proxy import FULL_REBUILD, LOCAL_RECOMPUTE, POLICIES, STREAMING_UPDATE, resolve_policy
from .solver import CgConfig, DynamicsState, implicit_euler_step, static_frame_solve
from .sparse import compare_csr
from .topology import topology

OPERATORS = ("proxy", "elasticity", "dynamics")
ELASTIC_PARITY_TOL = 1e-12
WARMUP_FRAMES = 1
TIMING_COLUMNS = ("frame_time", "update_time", "connectivity_time", "finalize_time",
                  "solve_time")


class BenchConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    block: tuple[int, int, int] | None = (6, 6, 6)
    mesh_path: str | None = None          # .node file or prefix; overrides block
    operator: str = "proxy"
    scenario: str = "fracture"
    policies: tuple[str, ...] = POLICIES
    frames: int = 8
    seeds: tuple[int, ...] = tuple(range(10))
    epsilon: float = proxy.DEFAULT_EPSILON
    cg_tolerance: float = 1e-8
    cg_max_iterations: int | None = None
    material: elasticity.Material = elasticity.Material()
    parity_check: bool = True
    rebuild_period: int = 1
    spot_check_samples: int = 32
    target_fraction: float = 0.1
    half_width: float | None = None
    parents_per_frame: int = 8
    cycles: int = 4
    timestep: float = 1e-2
    reaccumulate_every: int = 0
    output: str | None = None

    def __post_init__(self):
        if self.frames < 1:
            raise BenchConfigError("frames must be >= 1")
        if not self.seeds:
            raise BenchConfigError("at least one seed is required")
        if self.operator not in OPERATORS:
            raise BenchConfigError(f"unknown operator {self.operator!r}")
        scenario = "repeated_locality" if self.scenario == "repeat" else self.scenario
        if scenario not in SCENARIOS:
            raise BenchConfigError(f"unknown scenario {self.scenario!r}")
        object.__setattr__(self, "scenario", scenario)
        if not self.policies:
            raise BenchConfigError("at least one policy is required")
        object.__setattr__(self, "policies", tuple(resolve_policy(p) for p in self.policies))
        if self.block is None and self.mesh_path is None:
            raise BenchConfigError("need a block size or a mesh file")
        if self.block is not None and min(self.block) < 1:
            raise BenchConfigError("block dimensions must be >= 1")
        if self.rebuild_period < 1:
            raise BenchConfigError("rebuild_period must be >= 1")

    @property
    def cg(self) -> CgConfig:
        return CgConfig(self.cg_tolerance, self.cg_max_iterations, self.epsilon)

    def with_(self, **changes) -> "RunConfig":
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update(changes)
        return RunConfig(**data)

    def describe(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["material"] = asdict(self.material)
        d["block"] = list(self.block) if self.block else None
        d["policies"] = list(self.policies)
        d["seeds"] = list(self.seeds)
        return d


@dataclass
class FrameMetrics:
    operator: str
    scenario: str
    policy: str
    seed: int
    frame: int
    active_tet_count: int = 0
    delta_size: int = 0
    edges_visited: int = 0
    entries_mutated: int = 0
    tets_scanned: int = 0
    cg_iterations: int = 0
    cg_residual: float = 0.0
    cg_converged: bool = True
    components: int = 0
    connectivity_mismatch_rate: float = 0.0
    parity_mismatch_count: int | None = None
    parity_max_abs_diff: float | None = None
    state_bytes: int = 0
    schedule_digest: str = ""
    frame_time: float = 0.0
    update_time: float = 0.0
    connectivity_time: float = 0.0
    finalize_time: float = 0.0
    solve_time: float = 0.0
    error: str = ""


CSV_COLUMNS = tuple(f.name for f in fields(FrameMetrics))


# --- workspace --------------------------------------------------------------

class Workspace:
    """Per-mesh precomputation shared by every seed and policy of a run."""

    def __init__(self, config: RunConfig):
        if config.mesh_path is not None:
            node, ele = _mesh_files(config.mesh_path)
            base = load_mesh(node, ele)
        else:
            base = generate_block_mesh(*config.block)
        if config.scenario == "refinement":
            base = build_refinement(base, range(base.n_tets))
        self.mesh: SupersetMesh = base
        topo = topology(base)
        topo.edge_tets
        topo.vertex_tets
        self.adjacency = conn.precompute_face_adjacency(base)
        self._elastic: dict[elasticity.Material, elasticity.ElementStiffnessCache] = {}

    def element_cache(self, material: elasticity.Material) -> elasticity.ElementStiffnessCache:
        cache = self._elastic.get(material)
        if cache is None:
            cache = elasticity.precompute_element_stiffness(
                self.mesh, material.young, material.poisson, material.density)
            cache.pair_tets
            self._elastic[material] = cache
        return cache


def _mesh_files(path: str) -> tuple[Path, Path]:
    p = Path(path)
    stem = p.with_suffix("") if p.suffix in (".node", ".ele") else p
    return stem.with_suffix(".node"), stem.with_suffix(".ele")


# --- memory accounting ------------------------------------------------------

# per-entry costs (bytes) used by every estimate below
BYTES_INDEX = 8
BYTES_VALUE = 8
BYTES_FLAG = 1
BYTES_COUNT_ENTRY = BYTES_INDEX + BYTES_INDEX      # key + multiplicity
BYTES_BLOCK = 9 * BYTES_VALUE


def estimate_state_memory(state) -> int:
    """Estimated bytes of state a policy keeps between frames.

    Full rebuild keeps only the active mask (its operator is regenerated each
    frame).  The incremental policies also keep the maintained operator;
    streaming adds its multiplicity map over active entries, local recompute
    the candidate incidence lists it rescans (sized by the candidate pool).
    """
    mesh = state.mesh
    n, t = mesh.n_vertices, mesh.n_tets
    total = t * BYTES_FLAG
    if state.policy == FULL_REBUILD:
        return total
    if isinstance(state, proxy.ProxyState):
        offdiag = state.matrix.n_offdiag
        total += n * BYTES_VALUE + (n + 1) * BYTES_INDEX + offdiag * (BYTES_INDEX + BYTES_VALUE)
        if state.policy == STREAMING_UPDATE:
            total += (offdiag // 2) * BYTES_COUNT_ENTRY
        elif state.policy == LOCAL_RECOMPUTE:
            total += (mesh.n_edges + 1) * BYTES_INDEX + 6 * t * BYTES_INDEX
        return total
    pairs = len(state.blocks)
    total += n * BYTES_VALUE + pairs * (BYTES_INDEX + BYTES_BLOCK)
    if state.policy == STREAMING_UPDATE:
        total += pairs * BYTES_COUNT_ENTRY
    elif state.policy == LOCAL_RECOMPUTE:
        total += (state.cache.n_pairs + 1) * BYTES_INDEX + 10 * t * 2 * BYTES_INDEX
        total += (n + 1) * BYTES_INDEX + 4 * t * BYTES_INDEX
    return total


# --- parity shadows ---------------------------------------------------------

def proxy_parity(state: proxy.ProxyState) -> tuple[int, float]:
    """Compare the eps-free Laplacian with an independent rebuild, exactly."""
    shadow = proxy.assemble_vectorized(state.mesh, state.mask)
    return compare_csr(proxy.laplacian(state), shadow, tol=0.0)


def elastic_parity(state: elasticity.ElasticityState,
                   tol: float = ELASTIC_PARITY_TOL) -> tuple[int, float]:
    """Compare K and the lumped mass with an independent vectorized rebuild."""
    blocks, counts, mass = elasticity.assemble_vectorized(state.cache, state.mask)
    shadow = elasticity.ElasticityState(state.cache, state.mask, blocks, mass, 0.0)
    bad, worst = compare_csr(elasticity.materialize(state, epsilon=0.0),
                             elasticity.materialize(shadow, epsilon=0.0), tol)
    bad += len(state.blocks.keys() ^ blocks.keys())
    dm = np.abs(state.vertex_mass() - np.asarray(mass))
    if len(dm):
        bad += int(np.count_nonzero(dm > tol))
        worst = max(worst, float(dm.max()))
    return bad, worst


# --- the frame loop ---------------------------------------------------------

def frame_rhs(n: int, seed: int, frame: int) -> np.ndarray:
    """Seeded standard-normal load shared by every policy for (seed, frame)."""
    return make_rng(seed, stream=1000 + frame).standard_normal(n)


def build_schedule(config: RunConfig, mesh: SupersetMesh, seed: int) -> Schedule:
    return make_schedule(config.scenario, mesh, seed, config.frames,
                         target_fraction=config.target_fraction, half_width=config.half_width,
                         parents_per_frame=config.parents_per_frame, cycles=config.cycles)


def _init_state(config: RunConfig, ws: Workspace, policy: str, mask):
    if config.operator == "proxy":
        return proxy.make_proxy_state(ws.mesh, mask, policy, config.epsilon)
    cache = ws.element_cache(config.material)
    return elasticity.make_elasticity_state(cache, mask, policy, config.epsilon,
                                            config.reaccumulate_every)


def _apply(state, batch: EditBatch):
    if isinstance(state, proxy.ProxyState):
        proxy.apply_edits(state, batch)
    else:
        elasticity.apply_edits_elastic(state, batch)


def run_seed_policy(config: RunConfig, ws: Workspace, schedule_text: str,
                    policy: str, seed: int) -> list[FrameMetrics]:
    """Replay one serialized schedule under one policy."""
    schedule = Schedule.from_dict(json.loads(schedule_text))
    digest = hashlib.sha256(schedule_text.encode()).hexdigest()[:16]
    rows: list[FrameMetrics] = []
    frame = -1
    try:
        state = _init_state(config, ws, policy, schedule.initial_mask)
        cstate = conn.make_connectivity(ws.mesh, state.mask, config.rebuild_period,
                                        ws.adjacency)
        dyn = (DynamicsState.at_rest(ws.mesh.n_vertices, config.timestep)
               if config.operator == "dynamics" else None)
        ndof = ws.mesh.n_vertices * (1 if config.operator == "proxy" else 3)
        cg = config.cg
        for frame, batch in enumerate(schedule.frames):
            m = FrameMetrics(config.operator, config.scenario, policy, seed, frame,
                             schedule_digest=digest)
            rhs = frame_rhs(ndof, seed, frame) if dyn is None else None
            t0 = time.perf_counter()
            _apply(state, batch)
            t1 = time.perf_counter()
            conn.update_connectivity(cstate, batch, state.mask)
            t2 = time.perf_counter()
            if dyn is None:
                res = static_frame_solve(state, rhs, cg)
            else:
                res = implicit_euler_step(dyn, state, cg)
            t3 = time.perf_counter()
            m.update_time = t1 - t0
            m.connectivity_time = t2 - t1
            m.finalize_time = res.finalize_time
            m.solve_time = res.solve_time
            m.frame_time = t3 - t0
            m.cg_iterations = res.iterations
            m.cg_residual = res.residual
            m.cg_converged = bool(res.converged)
            m.delta_size = len(batch)
            m.active_tet_count = int(np.count_nonzero(state.mask))
            for k, v in state.counters.as_dict().items():
                setattr(m, k, v)
            # measurement apparatus below, outside every timed window
            if config.parity_check:
                if config.operator == "proxy":
                    m.parity_mismatch_count, m.parity_max_abs_diff = proxy_parity(state)
                else:
                    m.parity_mismatch_count, m.parity_max_abs_diff = elastic_parity(state)
            m.connectivity_mismatch_rate = conn.spot_check(
                cstate, state.mask, config.spot_check_samples, seed + 1000 * frame)
            m.components = cstate.component_count()
            m.state_bytes = estimate_state_memory(state)
            rows.append(m)
    except Exception as exc:  # recorded, the comparison carries on
        rows.append(FrameMetrics(config.operator, config.scenario, policy, seed, max(frame, 0),
                                 schedule_digest=digest, error=f"{type(exc).__name__}: {exc}"))
    return rows


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("STAFEM_THREADS", "1")))
    except ValueError:
        return 1


def run_benchmark(config: RunConfig, workspace: Workspace | None = None) -> list[FrameMetrics]:
    """FrameMetrics for every (policy, seed, frame); policies of a seed share
    one byte-identical serialized schedule."""
    ws = workspace or Workspace(config)
    if config.operator != "proxy":
        ws.element_cache(config.material)

    def one_seed(seed: int) -> list[FrameMetrics]:
        try:
            text = build_schedule(config, ws.mesh, seed).dumps()
        except Exception as exc:
            return [FrameMetrics(config.operator, config.scenario, p, seed, 0,
                                 error=f"{type(exc).__name__}: {exc}") for p in config.policies]
        out: list[FrameMetrics] = []
        for policy in config.policies:
            out.extend(run_seed_policy(config, ws, text, policy, seed))
        return out

    workers = min(_threads(), len(config.seeds))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            per_seed = list(pool.map(one_seed, config.seeds))
    else:
        per_seed = [one_seed(s) for s in config.seeds]
    rows = [r for chunk in per_seed for r in chunk]
    order = {p: i for i, p in enumerate(config.policies)}
    rows.sort(key=lambda r: (order[r.policy], r.seed, r.frame))
    return rows


# --- aggregation ------------------------------------------------------------

NUMERIC_COLUMNS = tuple(c for c in CSV_COLUMNS
                        if c not in ("operator", "scenario", "policy", "seed", "frame",
                                     "schedule_digest", "error", "cg_converged"))


def aggregate_rows(rows: list[FrameMetrics]) -> dict:
    """mean/std/min/max per numeric column, skipping failure rows and the
    warm-up frame (unless it is the only frame)."""
    good = [r for r in rows if not r.error]
    kept = [r for r in good if r.frame >= WARMUP_FRAMES] or good
    out = {}
    for col in NUMERIC_COLUMNS:
        vals = [getattr(r, col) for r in kept if getattr(r, col) is not None]
        if not vals:
            continue
        a = np.asarray(vals, dtype=np.float64)
        out[col] = {"mean": float(a.mean()), "std": float(a.std()),
                    "min": float(a.min()), "max": float(a.max())}
    return out


def group_rows(rows: list[FrameMetrics]) -> dict[tuple[str, str, str], list[FrameMetrics]]:
    groups: dict[tuple[str, str, str], list[FrameMetrics]] = {}
    for r in rows:
        groups.setdefault((r.operator, r.scenario, r.policy), []).append(r)
    return groups


def per_seed_means(rows: list[FrameMetrics], column: str) -> dict[int, float]:
    by_seed: dict[int, list[float]] = {}
    for r in rows:
        if r.error or r.frame < WARMUP_FRAMES:
            continue
        by_seed.setdefault(r.seed, []).append(getattr(r, column))
    if not by_seed:  # single-frame runs
        for r in rows:
            if not r.error:
                by_seed.setdefault(r.seed, []).append(getattr(r, column))
    return {s: float(np.mean(v)) for s, v in by_seed.items()}


def median_over_seeds(rows: list[FrameMetrics], column: str) -> float:
    means = per_seed_means(rows, column)
    return float(np.median(list(means.values()))) if means else math.nan


def summary(rows: list[FrameMetrics], config: RunConfig | None = None) -> dict:
    groups = []
    for (op, sc, pol), rs in group_rows(rows).items():
        groups.append({"operator": op, "scenario": sc, "policy": pol,
                       "rows": len(rs), "failures": sum(1 for r in rs if r.error),
                       "errors": sorted({r.error for r in rs if r.error}),
                       "metrics": aggregate_rows(rs)})
    return {"config": config.describe() if config else None, "groups": groups,
            "footer": f"aggregates exclude the first {WARMUP_FRAMES} frame(s) of each run "
                      "as warm-up; parity and spot checks are not timed"}


def write_csv(rows: list[FrameMetrics], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow(["" if getattr(r, c) is None else _fmt(getattr(r, c))
                        for c in CSV_COLUMNS])
    return path


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def emit_report(rows: list[FrameMetrics], out, config: RunConfig | None = None,
                extra: dict | None = None) -> tuple[Path, Path]:
    """Write ``<out>.csv`` (one row per policy/seed/frame) and ``<out>.json``."""
    out = Path(out)
    stem = out.with_suffix("") if out.suffix in (".csv", ".json") else out
    csv_path = write_csv(rows, stem.with_suffix(".csv"))
    doc = summary(rows, config)
    if extra:
        doc.update(extra)
    json_path = stem.with_suffix(".json")
    json_path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default))
    return csv_path, json_path


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


# --- reports ----------------------------------------------------------------

def iterations_identical(rows: list[FrameMetrics]) -> bool:
    """True when every (seed, frame) has one cg_iterations value across policies."""
    seen: dict[tuple[int, int], set[int]] = {}
    for r in rows:
        if not r.error:
            seen.setdefault((r.seed, r.frame), set()).add(r.cg_iterations)
    return all(len(v) == 1 for v in seen.values())


def run_policy_comparison(config: RunConfig, workspace: Workspace | None = None):
    """All three policies on identical schedules; returns (rows, report)."""
    cfg = config.with_(policies=POLICIES)
    rows = run_benchmark(cfg, workspace)
    report = {"scenario": cfg.scenario, "operator": cfg.operator, "policies": {}}
    groups = group_rows(rows)
    for pol in POLICIES:
        rs = groups.get((cfg.operator, cfg.scenario, pol), [])
        entry = {}
        for col in ("frame_time", "update_time"):
            means = list(per_seed_means(rs, col).values())
            entry[col] = {"mean": float(np.mean(means)) if means else math.nan,
                          "std": float(np.std(means)) if means else math.nan,
                          "median": float(np.median(means)) if means else math.nan}
        entry["failures"] = sum(1 for r in rs if r.error)
        report["policies"][pol] = entry
    med = {p: report["policies"][p]["update_time"]["median"] for p in POLICIES}
    report["speedup_update_rebuild_over_streaming"] = med[FULL_REBUILD] / med[STREAMING_UPDATE]
    report["speedup_update_local_over_streaming"] = med[LOCAL_RECOMPUTE] / med[STREAMING_UPDATE]
    report["cg_iterations_identical"] = iterations_identical(rows)
    return rows, report


def run_locality_sweep(config: RunConfig, half_widths, workspace: Workspace | None = None):
    """Fracture schedules at each slab half-width; returns (rows, report)."""
    cfg = config.with_(scenario="fracture")
    ws = workspace or Workspace(cfg)
    rows: list[FrameMetrics] = []
    widths = []
    for hw in half_widths:
        run = cfg.with_(half_width=float(hw))
        rs = run_benchmark(run, ws)
        rows.extend(rs)
        entry = {"half_width": float(hw)}
        for pol, group in _by_policy(rs).items():
            entry[pol] = median_over_seeds(group, "update_time")
            entry[f"{pol}_failures"] = sum(1 for r in group if r.error)
        ok = [r for r in rs if not r.error]
        entry["delta_size"] = float(np.mean([r.delta_size for r in ok])) if ok else math.nan
        entry["slab_tets"] = float(np.mean(
            [sum(r.delta_size for r in ok if r.seed == s and r.policy == ok[0].policy)
             for s in run.seeds])) if ok else math.nan
        widths.append(entry)
    report = {"widths": widths}
    if STREAMING_UPDATE in cfg.policies and len(widths) >= 2:
        hw = [w["half_width"] for w in widths]
        s = [w[STREAMING_UPDATE] for w in widths]
        report["spearman_streaming"] = float(stats.spearmanr(hw, s).statistic)
    if {STREAMING_UPDATE, LOCAL_RECOMPUTE} <= set(cfg.policies):
        report["streaming_below_local_everywhere"] = all(
            w[STREAMING_UPDATE] <= w[LOCAL_RECOMPUTE] for w in widths)
    return rows, report


def _by_policy(rows):
    out: dict[str, list[FrameMetrics]] = {}
    for r in rows:
        out.setdefault(r.policy, []).append(r)
    return out


def run_temporal_locality(config: RunConfig, workspace: Workspace | None = None):
    """Repeated delete/re-add of one slab on the elasticity operator."""
    cfg = config.with_(scenario="repeated_locality", operator="elasticity",
                       policies=(LOCAL_RECOMPUTE, STREAMING_UPDATE))
    rows = run_benchmark(cfg, workspace)
    groups = _by_policy(rows)
    loc = median_over_seeds(groups[LOCAL_RECOMPUTE], "update_time")
    stream = median_over_seeds(groups[STREAMING_UPDATE], "update_time")
    ok = [r for r in rows if not r.error]
    report = {
        "cycles": cfg.cycles,
        "local_update_time": loc,
        "streaming_update_time": stream,
        "ratio_local_over_streaming": loc / stream,
        "parity_clean": all(r.parity_mismatch_count == 0 for r in ok) if cfg.parity_check
        else None,
        "failures": len(rows) - len(ok),
    }
    return rows, report


def parse_seeds(text: str) -> tuple[int, ...]:
    """'0..9' (inclusive), '3' or '1,4,7'."""
    text = text.strip()
    if ".." in text:
        a, b = text.split("..", 1)
        lo, hi = int(a), int(b)
        if hi < lo:
            raise BenchConfigError(f"empty seed range {text!r}")
        return tuple(range(lo, hi + 1))
    return tuple(int(s) for s in text.split(",") if s.strip())
