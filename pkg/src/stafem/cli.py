"""Command line entry point: ``stafem bench | sweep | temporal | verify | mesh | schedule``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench
from .edits import ScheduleConfigError, Schedule, make_schedule
from .elasticity import Material
from .mesh import MeshError, generate_block_mesh, write_mesh
from .proxy import POLICIES


def _block(text: str) -> tuple[int, int, int]:
    try:
        dims = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NX,NY,NZ, got {text!r}")
    if len(dims) != 3 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"expected three positive ints, got {text!r}")
    return dims


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _policies(text: str) -> tuple[str, ...]:
    if text == "all":
        return POLICIES
    return tuple(text.split(","))


def _add_run_options(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--mesh", help="TetGen .node/.ele pair (path or prefix)")
    src.add_argument("--block", type=_block, default=(6, 6, 6), help="NX,NY,NZ block mesh")
    p.add_argument("--operator", choices=bench.OPERATORS, default="proxy")
    p.add_argument("--scenario", default="fracture",
                   choices=("fracture", "refinement", "merge", "repeat", "repeated_locality"))
    p.add_argument("--policy", type=_policies, default=POLICIES,
                   help="R, L, S, a comma list, or all")
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--seeds", type=bench.parse_seeds, default=tuple(range(10)),
                   help="a..b inclusive, or a comma list")
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--cg-tol", type=float, default=1e-8)
    p.add_argument("--cg-max-iter", type=int, default=None)
    p.add_argument("--parity", action="store_true", help="run the rebuild shadow each frame")
    p.add_argument("--rebuild-period", type=int, default=1)
    p.add_argument("--target-fraction", type=float, default=0.1)
    p.add_argument("--parents-per-frame", type=int, default=8)
    p.add_argument("--cycles", type=int, default=4)
    p.add_argument("--young", type=float, default=1.0)
    p.add_argument("--poisson", type=float, default=0.3)
    p.add_argument("--density", type=float, default=1.0)
    p.add_argument("--timestep", type=float, default=1e-2)
    p.add_argument("--reaccumulate-every", type=int, default=0)
    p.add_argument("--out", default="stafem_report", help="output prefix for .csv/.json")


def _config(args) -> bench.RunConfig:
    return bench.RunConfig(
        block=None if args.mesh else args.block, mesh_path=args.mesh,
        operator=args.operator, scenario=args.scenario, policies=args.policy,
        frames=args.frames, seeds=args.seeds, epsilon=args.epsilon,
        cg_tolerance=args.cg_tol, cg_max_iterations=args.cg_max_iter,
        material=Material(args.young, args.poisson, args.density),
        parity_check=args.parity, rebuild_period=args.rebuild_period,
        target_fraction=args.target_fraction, parents_per_frame=args.parents_per_frame,
        cycles=args.cycles, timestep=args.timestep,
        reaccumulate_every=args.reaccumulate_every, output=args.out)


def _report_failures(rows) -> int:
    bad = [r for r in rows if r.error]
    for r in bad:
        print(f"FAILED {r.policy} seed={r.seed} frame={r.frame}: {r.error}", file=sys.stderr)
    return 1 if bad else 0


def cmd_bench(args) -> int:
    cfg = _config(args)
    extra = None
    if set(cfg.policies) == set(POLICIES):
        rows, report = bench.run_policy_comparison(cfg)
        extra = {"comparison": report}
    else:
        rows = bench.run_benchmark(cfg)
    csv_path, json_path = bench.emit_report(rows, args.out, cfg, extra)
    print(f"wrote {csv_path} and {json_path} ({len(rows)} rows)")
    if extra:
        c = extra["comparison"]
        print(f"update speedup rebuild/streaming {c['speedup_update_rebuild_over_streaming']:.1f}x, "
              f"local/streaming {c['speedup_update_local_over_streaming']:.1f}x")
    return _report_failures(rows)


def cmd_sweep(args) -> int:
    cfg = _config(args)
    rows, report = bench.run_locality_sweep(cfg, args.half_widths)
    csv_path, json_path = bench.emit_report(rows, args.out, cfg, {"sweep": report})
    for w in report["widths"]:
        cols = "  ".join(f"{p}={w.get(p, float('nan')):.3e}" for p in cfg.policies)
        print(f"half_width={w['half_width']:.3f}  delta={w['delta_size']:.1f}  {cols}")
    if "spearman_streaming" in report:
        print(f"spearman(streaming) = {report['spearman_streaming']:.3f}")
    print(f"wrote {csv_path} and {json_path}")
    return _report_failures(rows)


def cmd_temporal(args) -> int:
    cfg = _config(args)
    rows, report = bench.run_temporal_locality(cfg)
    csv_path, json_path = bench.emit_report(rows, args.out, cfg, {"temporal": report})
    print(f"local/streaming update ratio {report['ratio_local_over_streaming']:.2f}")
    print(f"wrote {csv_path} and {json_path}")
    return _report_failures(rows)


def cmd_verify(args) -> int:
    """Parity and counter-law sweep over every operator and scenario."""
    ok = True
    for scenario in ("fracture", "refinement", "merge", "repeated_locality"):
        base = bench.RunConfig(block=args.block, scenario=scenario, seeds=args.seeds,
                               frames=args.frames, parity_check=True)
        ws = bench.Workspace(base)
        for op in bench.OPERATORS:
            rows = bench.run_benchmark(base.with_(operator=op), ws)
            errors = [r for r in rows if r.error]
            parity = all(r.parity_mismatch_count == 0 for r in rows if not r.error)
            iters = bench.iterations_identical(rows)
            conn = all(r.connectivity_mismatch_rate == 0 for r in rows if not r.error)
            good = not errors and parity and iters and conn
            ok &= good
            print(f"{'PASS' if good else 'FAIL'} {op:10s} {scenario:17s} rows={len(rows)} "
                  f"parity={parity} cg_identical={iters} connectivity={conn} "
                  f"failures={len(errors)}")
    return 0 if ok else 1


def cmd_mesh_gen(args) -> int:
    mesh = generate_block_mesh(*args.block)
    node, ele = write_mesh(mesh, args.out)
    print(f"wrote {node} and {ele}: {mesh.n_vertices} vertices, {mesh.n_tets} tets")
    return 0


def cmd_schedule_gen(args) -> int:
    ws = bench.Workspace(bench.RunConfig(block=args.block, scenario=args.scenario,
                                         frames=args.frames, seeds=(args.seed,)))
    sched = make_schedule(args.scenario, ws.mesh, args.seed, args.frames,
                          target_fraction=args.target_fraction,
                          parents_per_frame=args.parents_per_frame, cycles=args.cycles)
    sched.save(args.out)
    print(f"wrote {args.out}: {len(sched.frames)} frames")
    return 0


def cmd_schedule_dump(args) -> int:
    sched = Schedule.load(args.path)
    init = np.asarray(sched.initial_mask, dtype=bool)
    print(f"scenario={sched.scenario} seed={sched.seed} tets={len(init)} "
          f"initially_active={int(init.sum())}")
    print(f"params={json.dumps(sched.params, sort_keys=True)}")
    for i, b in enumerate(sched.frames):
        print(f"frame {i}: -{len(b.deleted)} +{len(b.added)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stafem",
                                description="Exact sparse-operator maintenance under tet edits")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="run one operator/scenario across policies and seeds")
    _add_run_options(b)
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("sweep", help="fracture locality sweep over slab half-widths")
    _add_run_options(s)
    s.add_argument("--half-widths", type=_floats, default=[0.01, 0.02, 0.04, 0.06, 0.08])
    s.set_defaults(func=cmd_sweep)

    t = sub.add_parser("temporal", help="repeated-locality elasticity diagnostic")
    _add_run_options(t)
    t.set_defaults(func=cmd_temporal)

    v = sub.add_parser("verify", help="parity + oracle sweep over all operators/scenarios")
    v.add_argument("--block", type=_block, default=(4, 4, 4))
    v.add_argument("--frames", type=int, default=4)
    v.add_argument("--seeds", type=bench.parse_seeds, default=(0, 1))
    v.set_defaults(func=cmd_verify)

    m = sub.add_parser("mesh", help="mesh utilities")
    msub = m.add_subparsers(dest="mesh_command", required=True)
    mg = msub.add_parser("gen", help="write a block mesh as .node/.ele")
    mg.add_argument("--block", type=_block, required=True)
    mg.add_argument("--out", required=True, help="output prefix")
    mg.set_defaults(func=cmd_mesh_gen)

    sc = sub.add_parser("schedule", help="edit schedule utilities")
    ssub = sc.add_subparsers(dest="schedule_command", required=True)
    sg = ssub.add_parser("gen", help="generate a schedule JSON for a block mesh")
    sg.add_argument("--block", type=_block, default=(6, 6, 6))
    sg.add_argument("--scenario", default="fracture",
                    choices=("fracture", "refinement", "merge", "repeat", "repeated_locality"))
    sg.add_argument("--seed", type=int, default=0)
    sg.add_argument("--frames", type=int, default=8)
    sg.add_argument("--target-fraction", type=float, default=0.1)
    sg.add_argument("--parents-per-frame", type=int, default=8)
    sg.add_argument("--cycles", type=int, default=4)
    sg.add_argument("--out", required=True)
    sg.set_defaults(func=cmd_schedule_gen)
    sd = ssub.add_parser("dump", help="summarize a schedule JSON")
    sd.add_argument("path")
    sd.set_defaults(func=cmd_schedule_dump)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (bench.BenchConfigError, ScheduleConfigError, MeshError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
