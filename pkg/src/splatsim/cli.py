"""Command line driver.

Every subcommand reads one JSON config (defaults apply when omitted), writes
its delimited outputs and matplotlib figures into --out, and prints a short
summary.  All randomness flows from the config seed, so reruns with the same
config and seed produce identical files.

Thread pinning has to happen before numpy is imported, which is why the
library imports live inside the command functions rather than at the top.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _pin_threads(n: int | None) -> None:
    if n is None:
        env = os.environ.get("SPLATSIM_THREADS")
        if env is None:
            return
        n = int(env)
    if n < 1:
        raise SystemExit("thread count must be >= 1")
    for var in THREAD_ENV_VARS:
        os.environ[var] = str(n)


def _out_dir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _load_cfg(args):
    from .config import load_config

    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, overrides)


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def cmd_render(args) -> int:
    import numpy as np

    from . import figures
    from .config import scene_from_config
    from .neuralsort import fixed_decay, load_net_json, normalize_depths
    from .projection import project_scene
    from .raster import RasterConfig, render_frame, save_ppm, save_raw

    cfg = _load_cfg(args)
    out = _out_dir(args)
    scene, cams, policy = scene_from_config(cfg)
    rc = cfg["render"]
    if rc["camera_index"] >= len(cams):
        raise SystemExit(f"camera_index {rc['camera_index']} out of range "
                         f"(scene has {len(cams)} cameras)")
    cam = cams[rc["camera_index"]]
    res = project_scene(scene, cam)
    f_values = None
    if rc["mode"] == "weighted":
        if rc["net_file"]:
            net = load_net_json(rc["net_file"])
            d = normalize_depths(res.depth, net.depth_norm)
            f_values = net.forward(d, mode=rc["arithmetic"])
        else:
            d = normalize_depths(res.depth)
            f_values = fixed_decay(d, rc["decay_k"], mode=rc["arithmetic"])
    rcfg = RasterConfig(background=policy.background)
    image, stats = render_frame(res, mode=rc["mode"], arithmetic=rc["arithmetic"],
                                f_values=f_values, cfg=rcfg)
    save_ppm(image, os.path.join(out, "render.ppm"))
    save_raw(image, os.path.join(out, "render.raw"))
    _write_json(os.path.join(out, "render_stats.json"), stats.to_dict())
    figures.save_render_figure(os.path.join(out, "render.png"), image,
                               title=f"{rc['mode']}/{rc['arithmetic']}")
    mean = float(np.mean(image))
    print(f"render: {res.width}x{res.height} {rc['mode']}/{rc['arithmetic']} "
          f"gaussians={len(res.ids)} pairs={stats.pairs} mean={mean:.4f}")
    print(f"alpha MAC reduction vs naive: {stats.alpha_mac_reduction():.4%}")
    return 0


def cmd_train(args) -> int:
    from . import figures
    from .config import scene_from_config, train_config_from
    from .neuralsort import GeneralNet
    from .training import Trainer

    cfg = _load_cfg(args)
    out = _out_dir(args)
    scene, cams, policy = scene_from_config(cfg)
    tcfg = train_config_from(cfg)
    tr = cfg["train"]
    net = None
    if tr["structure"] != "decay":
        net = GeneralNet.init(tr["structure"], tr["hidden_act"],
                              tr["output_act"], seed=cfg["seed"])
    trainer = Trainer(scene, cams, net=net, config=tcfg, policy=policy)
    report = trainer.train(out_dir=out)
    _write_json(os.path.join(out, "train_report.json"), {
        "steps": tcfg.steps,
        "init_psnr": report.init_psnr,
        "final_psnr": report.final_psnr,
        "init_ssim": report.init_ssim,
        "final_ssim": report.final_ssim,
        "final_loss": report.final_loss,
        "psnr_gain": report.psnr_gain,
    })
    figures.save_training_figure(os.path.join(out, "training.png"), report.rows)
    print(f"train: {tcfg.steps} steps, PSNR {report.init_psnr:.2f} -> "
          f"{report.final_psnr:.2f} dB (gain {report.psnr_gain:+.2f})")
    return 0


def cmd_sched(args) -> int:
    import csv

    from . import figures
    from .schedule import (TRAJECTORY_KINDS, make_trajectory, save_trajectory_csv,
                           trajectory_table)

    cfg = _load_cfg(args)
    out = _out_dir(args)
    sc = cfg["schedule"]
    tx, ty, rot = sc["tiles_x"], sc["tiles_y"], sc["block_rotation"]
    rows = trajectory_table(tx, ty, rot)
    with open(os.path.join(out, "sched_table.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for kind in TRAJECTORY_KINDS:
        traj = make_trajectory(tx, ty, kind, rot)
        save_trajectory_csv(traj, os.path.join(out, f"trajectory_{kind}.csv"))
    figures.save_trajectory_figure(os.path.join(out, "trajectories.png"),
                                   tx, ty, block_rotation=rot)
    for r in rows:
        print(f"sched {r['kind']:>6}: mean step {r['mean_step']:.4f} "
              f"max {r['max_step']} unit fraction {r['unit_step_fraction']:.4f}")
    return 0


def cmd_cache(args) -> int:
    import csv

    from . import figures
    from .config import cache_config_from
    from .memsim import (CacheStats, dram_traffic_report, simulate_frame,
                         synthetic_tile_workload)
    from .schedule import TRAJECTORY_KINDS

    cfg = _load_cfg(args)
    out = _out_dir(args)
    ccfg = cache_config_from(cfg)
    cc = cfg["cache"]
    sc = cfg["schedule"]
    tx, ty = sc["tiles_x"], sc["tiles_y"]
    per_kind = {k: [] for k in TRAJECTORY_KINDS}
    rows = []
    for seed in range(cc["seeds"]):
        wl = synthetic_tile_workload(tx, ty, cc["workload_gaussians"],
                                     seed=cfg["seed"] + seed)
        for kind in TRAJECTORY_KINDS:
            st = simulate_frame(wl, kind=kind, config=ccfg,
                                block_rotation=sc["block_rotation"])
            per_kind[kind].append(st)
            rows.append({"seed": seed, "kind": kind, "accesses": st.accesses,
                         "hits": st.hits, "misses": st.misses,
                         "hit_rate": st.hit_rate})
    with open(os.path.join(out, "cache.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    # aggregate over seeds so the traffic report covers the whole experiment
    agg = {}
    for kind, stats in per_kind.items():
        agg[kind] = CacheStats(
            accesses=sum(s.accesses for s in stats),
            hits=sum(s.hits for s in stats),
            misses=sum(s.misses for s in stats),
            evictions=sum(s.evictions for s in stats),
            line_bytes=ccfg.line_bytes,
        )
    summary = {kind: dram_traffic_report(st, cc["burst_latency_cycles"],
                                         cc["pj_per_byte"])
               for kind, st in agg.items()}
    _write_json(os.path.join(out, "cache_summary.json"), summary)
    figures.save_cache_figure(os.path.join(out, "cache.png"), agg,
                              title=f"hit rate over {cc['seeds']} seeds, "
                                    f"{tx}x{ty} tiles")
    for kind in TRAJECTORY_KINDS:
        print(f"cache {kind:>6}: hit rate {agg[kind].hit_rate:.4f} "
              f"dram bytes {agg[kind].dram_bytes}")
    return 0


def cmd_perf(args) -> int:
    from . import figures
    from .config import hw_config_from, scene_from_config
    from .perfmodel import (roofline_report, save_pipeline_json, save_trace_csv,
                            simulate_interleaved_pipeline, simulate_naive_pipeline)
    from .projection import project_scene

    cfg = _load_cfg(args)
    out = _out_dir(args)
    hw = hw_config_from(cfg)
    scene, cams, _ = scene_from_config(cfg)
    cam = cams[cfg["render"]["camera_index"] % len(cams)]
    res = project_scene(scene, cam)
    tile_counts = [len(res.grid.indices(tx, ty))
                   for ty in range(res.grid.tiles_y)
                   for tx in range(res.grid.tiles_x)]
    naive = simulate_naive_pipeline(tile_counts, hw)
    inter = simulate_interleaved_pipeline(tile_counts, hw)
    speedup = naive.total_cycles / inter.total_cycles if inter.total_cycles else 1.0
    save_pipeline_json(naive, os.path.join(out, "pipeline_naive.json"))
    save_pipeline_json(inter, os.path.join(out, "pipeline_interleaved.json"))
    if inter.trace is not None:
        save_trace_csv(inter.trace, os.path.join(out, "trace.csv"))
    roof = roofline_report(hw)
    _write_json(os.path.join(out, "roofline.json"), roof)
    _write_json(os.path.join(out, "perf_summary.json"), {
        "naive_cycles": naive.total_cycles,
        "interleaved_cycles": inter.total_cycles,
        "speedup": speedup,
        "sort_utilization": inter.sort_utilization,
        "intensity_ratio": roof["intensity_ratio"],
    })
    figures.save_pipeline_figure(os.path.join(out, "pipeline.png"),
                                 naive.to_dict(), inter.to_dict())
    figures.save_roofline_figure(os.path.join(out, "roofline.png"), roof)
    print(f"perf: naive {naive.total_cycles} cycles, interleaved "
          f"{inter.total_cycles} cycles, speedup {speedup:.3f}x")
    print(f"sort utilization {inter.sort_utilization:.4f}, roofline intensity "
          f"ratio {roof['intensity_ratio']:.2f}")
    return 0


def cmd_fp16scan(args) -> int:
    from . import figures
    from .fp16 import scan_leaky_relu

    out = _out_dir(args)
    scan = scan_leaky_relu()
    payload = scan.to_dict()
    _write_json(os.path.join(out, "fp16_scan.json"), payload)
    figures.save_fp16_scan_figure(os.path.join(out, "fp16_scan.png"), payload)
    for key, val in payload.items():
        print(f"fp16scan {key}: {val}")
    return 0


def cmd_dse(args) -> int:
    from . import figures
    from .config import scene_from_config, train_config_from
    from .training import dse_grid, save_dse_csv

    cfg = _load_cfg(args)
    out = _out_dir(args)
    scene, cams, _ = scene_from_config(cfg)
    ds = cfg["dse"]
    rows = dse_grid(scene, cams, steps=ds["steps"], structures=ds["structures"],
                    hidden_acts=ds["hidden_acts"], output_acts=ds["output_acts"],
                    config=train_config_from(cfg), seed=cfg["seed"])
    save_dse_csv(rows, os.path.join(out, "dse.csv"))
    figures.save_dse_figure(os.path.join(out, "dse.png"), rows)
    ok = [r for r in rows if not r["diverged"]]
    if ok:
        best = max(ok, key=lambda r: r["final_psnr"])
        print(f"dse: best {best['structure']}/{best['hidden_act']}/"
              f"{best['output_act']} PSNR {best['final_psnr']:.2f} dB "
              f"({best['n_macs']} MACs)")
    print(f"dse: {len(rows)} configurations, {len(rows) - len(ok)} diverged")
    return 0


COMMANDS = {
    "render": (cmd_render, "rasterize one frame and write image plus stats"),
    "train": (cmd_train, "fit the decay net and appearance on a scene"),
    "sched": (cmd_sched, "emit tile traversal orders and locality table"),
    "cache": (cmd_cache, "sweep traversals through the gaussian cache model"),
    "perf": (cmd_perf, "pipeline cycle model and roofline for one frame"),
    "fp16scan": (cmd_fp16scan, "census of the leaky ReLU hardware shortcut"),
    "dse": (cmd_dse, "short training sweep over decay net structures"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatsim",
        description="software model of a gaussian splatting accelerator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None,
                       help="JSON config file; defaults apply when omitted")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default="out",
                       help="output directory (created if missing)")
        p.add_argument("--threads", type=int, default=None,
                       help="pin BLAS/OpenMP threads (or set SPLATSIM_THREADS)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _pin_threads(args.threads)
    from .config import ConfigError

    try:
        return COMMANDS[args.command][0](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
