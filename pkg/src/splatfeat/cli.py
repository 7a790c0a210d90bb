"""Command-line entry point wiring the library into reproducible batch runs.

Every subcommand writes a JSON run manifest (inputs, config, output hashes,
wall time) into its output directory, so runs can be audited and replayed.
Exit codes: 0 success, 1 validation/data failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import reports
from .adapter import (gradcheck as gradcheck_mod, gs_pe, init_params,
                      load_params, project_channels, refine, save_params,
                      adaptive_fuse, build_toy_task, toy_train, PEConfig)
from .adapter.train import DivergenceError
from .camera_io import load_cameras, save_cameras
from .dataprep import (ANCHOR_GROUPS, EASY_FRACTION, GROUP_SIZE,
                       IOU_THRESHOLD, prep_view_groups, voxel_prune)
from .geo_eval import (Trajectory, align_scale, chamfer, covis_mask,
                       pose_error, psnr, ssim)
from .ply_io import PlyParseError, load_ply, save_ply
from .rasterizer import (RasterConfig, composite_values, compute_contributions,
                         project, render_depth_points)
from .scene import FeatureMap, ValidationError
from .sh import eval_sh_colors
from .synth import bench_scene, ring_views, synth_bundle
from .tensor_io import TensorFormatError, read_tensor, write_tensor
from .uplift import LiftConfig, attach_features, lift

GRADCHECK_TOLERANCE = 1e-5


def _default_threads() -> int:
    env = os.environ.get("SPLATFEAT_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


class Run:
    """Collects inputs/config and writes the manifest at the end."""

    def __init__(self, args):
        self.command = args.command
        self.out = args.out
        os.makedirs(self.out, exist_ok=True)
        self.t0 = time.perf_counter()
        self.inputs: dict[str, str] = {}
        self.config = {k: v for k, v in vars(args).items()
                       if k not in ("command", "func") and v is not None}
        self.outputs: list[str] = []
        self.report: dict = {}

    def path(self, name: str) -> str:
        p = os.path.join(self.out, name)
        self.outputs.append(p)
        return p

    def add_input(self, label: str, path):
        self.inputs[label] = str(path)

    def finish(self) -> dict:
        manifest = {
            "command": self.command,
            "inputs": self.inputs,
            "config": {k: str(v) if not isinstance(v, (int, float, bool, str))
                       else v for k, v in self.config.items()},
            "report": self.report,
            "outputs": {os.path.relpath(p, self.out): reports.sha256_file(p)
                        for p in self.outputs if os.path.isfile(p)},
            "wall_time_s": round(time.perf_counter() - self.t0, 6),
        }
        path = os.path.join(self.out, "manifest.json")
        reports.save_json(path, manifest)
        return manifest


def _raster_config(args) -> RasterConfig:
    return RasterConfig(threads=args.threads,
                        sh_degree=getattr(args, "sh_degree", 0))


def _dtype(args):
    return np.float32 if args.precision == "f32" else np.float64


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> tuple[Run, int]:
    run = Run(args)
    cfg = _raster_config(args)
    bundle = synth_bundle(args.gaussians, args.views, args.feature_dim,
                          args.seed, width=args.width, height=args.height,
                          focal=args.focal, layout=args.layout, config=cfg)
    save_ply(bundle.scene, run.path("scene.ply"))
    run.outputs.append(os.path.join(run.out, "scene.ply.features.ftc1"))
    save_cameras(bundle.views, run.path("cameras.json"))
    stack = np.stack([fm.data for fm in bundle.feature_maps]).astype(_dtype(args))
    write_tensor(run.path("features.ftc1"), stack)
    run.report = {"gaussians": len(bundle.scene), "views": args.views,
                  "feature_dim": args.feature_dim}
    return run, 0


def cmd_render(args) -> tuple[Run, int]:
    run = Run(args)
    run.add_input("scene", args.scene)
    run.add_input("cameras", args.cameras)
    scene = load_ply(args.scene)
    views = load_cameras(args.cameras)
    cfg = _raster_config(args)

    colors, feats, doms, domw, alphas = [], [], [], [], []
    culled = 0
    for view in views:
        proj = project(scene, view, cfg)
        contrib, dominant, cul = compute_contributions(scene, view, cfg, proj)
        culled += cul
        if cfg.sh_degree > 0:
            dirs = scene.positions - view.center
            nrm = np.linalg.norm(dirs, axis=1, keepdims=True)
            nrm[nrm == 0] = 1.0
            color_vals = eval_sh_colors(scene.sh, dirs / nrm, cfg.sh_degree)
        else:
            color_vals = eval_sh_colors(scene.sh, None, 0)
        colors.append(composite_values(contrib, color_vals))
        if scene.features is not None:
            feats.append(composite_values(contrib, scene.features))
        doms.append(dominant.ids.astype(np.float64))
        domw.append(dominant.weights)
        alphas.append(contrib.alpha)

    dt = _dtype(args)
    write_tensor(run.path("colors.ftc1"), np.stack(colors).astype(dt))
    write_tensor(run.path("alpha.ftc1"), np.stack(alphas).astype(dt))
    write_tensor(run.path("dominant_ids.ftc1"), np.stack(doms))
    write_tensor(run.path("dominant_weights.ftc1"), np.stack(domw))
    if feats:
        write_tensor(run.path("features.ftc1"), np.stack(feats).astype(dt))
    reports.image_png(run.path("view0_color.png"), colors[0])
    run.report = {"views": len(views), "culled": culled,
                  "has_features": bool(feats)}
    return run, 0


def _latent_views(views, stack_shape):
    """Match feature-stack resolution to cameras via the downsample factor."""
    _, h, w, _ = stack_shape
    out = []
    for v in views:
        if v.width == w and v.height == h:
            out.append((v, 1))
            continue
        if v.width % w or v.height % h or v.width // w != v.height // h:
            raise ValidationError(
                f"camera {v.view_id} ({v.width}x{v.height}) incompatible with "
                f"feature grid {w}x{h}")
        n = v.width // w
        out.append((v.downsampled(n), n))
    return out


def cmd_lift(args) -> tuple[Run, int]:
    run = Run(args)
    run.add_input("scene", args.scene)
    run.add_input("cameras", args.cameras)
    run.add_input("features", args.features)
    scene = load_ply(args.scene)
    views = load_cameras(args.cameras)
    stack = read_tensor(args.features)
    if stack.ndim != 4:
        raise ValidationError(
            f"{args.features}: expected rank-4 (views, H, W, C) stack")
    if stack.shape[0] != len(views):
        raise ValidationError(
            f"{stack.shape[0]} feature maps vs {len(views)} cameras")
    cfg = _raster_config(args)

    maps, contribs = [], []
    for (latent_view, n), data in zip(_latent_views(views, stack.shape), stack):
        contrib, _, _ = compute_contributions(scene, latent_view, cfg)
        contribs.append(contrib)
        maps.append(FeatureMap(latent_view.view_id, data, downsample=n))
    top_k = "all" if args.top_k == "all" else int(args.top_k)
    lifted = lift(maps, contribs, len(scene),
                  LiftConfig(top_k=top_k, normalize_output=not args.no_normalize))
    write_tensor(run.path("lifted.ftc1"), np.asarray(lifted, dtype=_dtype(args)))
    if args.attach_out:
        save_ply(attach_features(scene, np.asarray(lifted, dtype=np.float64)),
                 args.attach_out)
        run.outputs.append(args.attach_out)
        run.outputs.append(args.attach_out + ".features.ftc1")
    nz = int((np.linalg.norm(np.asarray(lifted, dtype=np.float64), axis=1)
              > 1e-12).sum())
    run.report = {"gaussians": len(scene), "channels": int(lifted.shape[1]),
                  "nonzero_rows": nz}
    return run, 0


def cmd_fuse(args) -> tuple[Run, int]:
    run = Run(args)
    for label in ("scene", "cameras", "ref_features", "target_features"):
        run.add_input(label, getattr(args, label))
    run.add_input("params", args.params)
    scene = load_ply(args.scene)
    views = load_cameras(args.cameras)
    ref_stack = read_tensor(args.ref_features).astype(np.float64)
    tar_stack = read_tensor(args.target_features).astype(np.float64)
    params = load_params(args.params)
    cfg = _raster_config(args)

    p = ref_stack.shape[0]
    q = tar_stack.shape[0]
    if p + q != len(views):
        raise ValidationError(
            f"{p} reference + {q} target stacks vs {len(views)} cameras "
            "(reference views come first)")
    ref_views = views[:p]
    tar_views = views[p:]

    ref_latent = _latent_views(ref_views, ref_stack.shape)
    tar_latent = _latent_views(tar_views, tar_stack.shape)

    ref_maps, ref_contribs = [], []
    for (lv, n), data in zip(ref_latent, ref_stack):
        contrib, _, _ = compute_contributions(scene, lv, cfg)
        ref_contribs.append(contrib)
        ref_maps.append(FeatureMap(lv.view_id, data, downsample=n))
    lifted = lift(ref_maps, ref_contribs, len(scene),
                  LiftConfig(top_k="all", normalize_output=False))

    pe_cfg = PEConfig.for_scene(scene, omega0=args.omega0)
    fused_stack, gate_stack = [], []
    for (lv, n), f_tar in zip(tar_latent, tar_stack):
        contrib, dominant, _ = compute_contributions(scene, lv, cfg)
        g = composite_values(contrib, lifted)
        g_pe = gs_pe(FeatureMap(lv.view_id, g, n), dominant, scene, pe_cfg)
        refined, _ = refine(g_pe.data, params)
        g_tilde, _ = project_channels(refined, params)
        fused, gate, _ = adaptive_fuse(f_tar, g_tilde, params)
        fused_stack.append(fused)
        gate_stack.append(gate)

    dt = _dtype(args)
    write_tensor(run.path("fused.ftc1"), np.stack(fused_stack).astype(dt))
    write_tensor(run.path("gates.ftc1"), np.stack(gate_stack).astype(dt))
    reports.mask_png(run.path("gate_view0.png"),
                     0.5 * (gate_stack[0][..., 0] + 1.0))
    run.report = {"target_views": q,
                  "gate_mean": float(np.mean(gate_stack)),
                  "gate_min": float(np.min(gate_stack)),
                  "gate_max": float(np.max(gate_stack))}
    return run, 0


def cmd_eval_pose(args) -> tuple[Run, int]:
    run = Run(args)
    run.add_input("gt_cameras", args.gt_cameras)
    run.add_input("pred_cameras", args.pred_cameras)
    gt = Trajectory.from_views(load_cameras(args.gt_cameras))
    pred = Trajectory.from_views(load_cameras(args.pred_cameras))
    err = pose_error(gt, pred, scene_scale=args.scene_scale)
    scale = align_scale(gt, pred)

    rel = np.einsum("fij,fik->fjk", gt.rotations, pred.rotations)
    traces = np.einsum("fii->f", rel)
    per_r = np.degrees(np.arccos(np.clip((traces - 1) / 2, -1, 1)))
    reports.write_csv(run.path("pose_errors.csv"),
                      ["frame", "r_err_deg"],
                      [(i, f"{r:.6f}") for i, r in enumerate(per_r)])
    reports.trajectory_png(run.path("trajectories.png"), gt.centers,
                           pred.centers, scale * pred.centers)
    run.report = {"T_err_cm": err.t_err_cm, "R_err_deg": err.r_err_deg,
                  "scale": scale}
    reports.save_json(run.path("report.json"), run.report)
    return run, 0


def cmd_eval_chamfer(args) -> tuple[Run, int]:
    run = Run(args)
    run.add_input("points_a", args.points_a)
    run.add_input("points_b", args.points_b)
    a = read_tensor(args.points_a).astype(np.float64).reshape(-1, 3)
    b = read_tensor(args.points_b).astype(np.float64).reshape(-1, 3)
    cd = chamfer(a, b)
    from scipy.spatial import cKDTree
    d_ab, _ = cKDTree(b).query(a, k=1)
    reports.write_csv(run.path("nn_distances.csv"), ["index", "distance"],
                      [(i, f"{d:.9g}") for i, d in enumerate(d_ab)])
    reports.histogram_png(run.path("nn_distances.png"), d_ab,
                          "nearest-neighbor distance")
    run.report = {"CD": cd, "points_a": int(a.shape[0]),
                  "points_b": int(b.shape[0])}
    reports.save_json(run.path("report.json"), run.report)
    return run, 0


def cmd_eval_covis(args) -> tuple[Run, int]:
    run = Run(args)
    run.add_input("ref_points", args.ref_points)
    run.add_input("cameras", args.cameras)
    run.add_input("pred", args.pred)
    run.add_input("gt", args.gt)
    ref_points = read_tensor(args.ref_points).astype(np.float64).reshape(-1, 3)
    depth_points = ref_points
    if args.all_points:
        run.add_input("all_points", args.all_points)
        depth_points = read_tensor(args.all_points).astype(np.float64).reshape(-1, 3)
    views = load_cameras(args.cameras)
    pred = read_tensor(args.pred).astype(np.float64)
    gt = read_tensor(args.gt).astype(np.float64)
    if pred.shape != gt.shape or pred.shape[0] != len(views):
        raise ValidationError("pred/gt stacks must match cameras in count and shape")

    masks, rows = [], []
    psnr_v_all, psnr_u_all, ssim_all = [], [], []
    for i, view in enumerate(views):
        depth = render_depth_points(depth_points, view)
        mask = covis_mask(ref_points, view, depth, tol=args.tol)
        masks.append(mask)
        pv = psnr(pred[i], gt[i], mask) if mask.any() else float("nan")
        pu = psnr(pred[i], gt[i], ~mask) if (~mask).any() else float("nan")
        sv = ssim(pred[i], gt[i])
        psnr_v_all.append(pv)
        psnr_u_all.append(pu)
        ssim_all.append(sv)
        rows.append((view.view_id, f"{mask.mean():.6f}", f"{pv:.4f}",
                     f"{pu:.4f}", f"{sv:.6f}"))

    write_tensor(run.path("covis_masks.ftc1"),
                 np.stack(masks).astype(np.float32))
    reports.write_csv(run.path("covis_metrics.csv"),
                      ["view", "covis_fraction", "psnr_v", "psnr_u", "ssim"], rows)
    reports.mask_png(run.path("covis_view0.png"), masks[0])
    run.report = {
        "PSNR_V": float(np.nanmean(psnr_v_all)),
        "PSNR_U": float(np.nanmean(psnr_u_all)),
        "SSIM": float(np.mean(ssim_all)),
        "covis_fraction": float(np.mean([m.mean() for m in masks])),
    }
    reports.save_json(run.path("report.json"), run.report)
    return run, 0


def cmd_prep_views(args) -> tuple[Run, int]:
    run = Run(args)
    run.add_input("cameras", args.cameras)
    views = load_cameras(args.cameras)
    embed = None
    if args.embeddings:
        run.add_input("embeddings", args.embeddings)
        emb = read_tensor(args.embeddings).astype(np.float64)
        if emb.ndim != 2 or emb.shape[0] != len(views):
            raise ValidationError(
                f"{args.embeddings}: expected ({len(views)}, D) matrix")
        norms = np.linalg.norm(emb, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        unit = emb / norms

        def embed(i, _unit=unit):
            return _unit[i]

    groups = prep_view_groups(
        views, input_count=args.input_count, embed=embed,
        anchor_count=args.anchors, group_size=args.group_size,
        easy_fraction=args.easy_fraction, iou_threshold=args.iou_threshold,
        iou_samples=args.iou_samples, seed=args.seed)
    payload = [{"anchor": g.anchor,
                "input_views": list(g.input_views),
                "easy_targets": list(g.easy_targets),
                "hard_targets": list(g.hard_targets)} for g in groups]
    reports.save_json(run.path("view_groups.json"), {"groups": payload})
    rows = []
    for gi, g in enumerate(groups):
        for role, members in (("input", g.input_views),
                              ("easy", g.easy_targets),
                              ("hard", g.hard_targets)):
            rows.extend((gi, role, m) for m in members)
    reports.write_csv(run.path("view_groups.csv"),
                      ["group", "role", "frame"], rows)
    run.report = {"groups": len(groups),
                  "sizes": [len(g.input_views) + len(g.easy_targets)
                            + len(g.hard_targets) for g in groups]}
    return run, 0


def cmd_prune(args) -> tuple[Run, int]:
    run = Run(args)
    run.add_input("scene", args.scene)
    scene = load_ply(args.scene)
    pruned, rate = voxel_prune(scene, args.voxel_size)
    save_ply(pruned, run.path("pruned.ply"))
    if pruned.features is not None:
        run.outputs.append(os.path.join(run.out, "pruned.ply.features.ftc1"))
    run.report = {"total": len(scene), "kept": len(pruned),
                  "prune_rate": rate}
    reports.save_json(run.path("report.json"), run.report)
    print(f"pruned {len(scene)} -> {len(pruned)} Gaussians "
          f"(prune rate {rate:.4f})")
    return run, 0


def cmd_gradcheck(args) -> tuple[Run, int]:
    run = Run(args)
    results = gradcheck_mod.run_all(trials=args.trials, base_seed=args.seed)
    ok = True
    rows = []
    for name in sorted(results):
        err = results[name]
        passed = err <= GRADCHECK_TOLERANCE
        ok = ok and passed
        print(f"{name}: max relative error {err:.3e} "
              f"[{'PASS' if passed else 'FAIL'}]")
        rows.append((name, f"{err:.6e}", "pass" if passed else "fail"))
    reports.write_csv(run.path("gradcheck.csv"), ["op", "max_rel_err", "status"],
                      rows)
    names = sorted(results)
    reports.gradcheck_png(run.path("gradcheck.png"), names,
                          [results[n] for n in names], GRADCHECK_TOLERANCE)
    run.report = {"results": {k: float(v) for k, v in results.items()},
                  "tolerance": GRADCHECK_TOLERANCE, "all_pass": ok}
    reports.save_json(run.path("report.json"), run.report)
    return run, 0 if ok else 1


def cmd_bench(args) -> tuple[Run, int]:
    run = Run(args)
    cfg = RasterConfig(threads=args.threads)
    scene = bench_scene(args.gaussians, args.feature_dim, args.seed)
    view = ring_views(1, width=args.width, height=args.height,
                      focal=args.width * 0.99)[0]

    # Warm the JIT outside the timed section.
    small = bench_scene(64, args.feature_dim, args.seed + 1)
    contrib, _, _ = compute_contributions(small, view, cfg)
    composite_values(contrib, small.features)

    def timed(s):
        best = np.inf
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            contrib, _, _ = compute_contributions(s, view, cfg)
            composite_values(contrib, s.features)
            best = min(best, time.perf_counter() - t0)
        return best

    full_s = timed(scene)
    pruned, rate = voxel_prune(scene, args.prune_voxel)
    pruned_s = timed(pruned)

    ms_full = 1000.0 * full_s
    ms_pruned = 1000.0 * pruned_s
    rows = [("full", len(scene), f"{ms_full:.3f}",
             f"{len(scene) / full_s / 1e6:.3f}"),
            ("pruned", len(pruned), f"{ms_pruned:.3f}",
             f"{len(pruned) / pruned_s / 1e6:.3f}")]
    reports.write_csv(run.path("bench.csv"),
                      ["variant", "gaussians", "ms_per_frame", "mgaussians_per_s"],
                      rows)
    reports.bench_png(run.path("bench.png"), ["full", "pruned"],
                      [ms_full, ms_pruned])
    run.report = {"gaussians": len(scene), "ms_per_frame": ms_full,
                  "pruned_gaussians": len(pruned), "prune_rate": rate,
                  "pruned_ms_per_frame": ms_pruned,
                  "gaussians_per_s": len(scene) / full_s}
    reports.save_json(run.path("report.json"), run.report)
    print(f"full: {ms_full:.1f} ms/frame ({len(scene)} Gaussians); "
          f"pruned: {ms_pruned:.1f} ms/frame ({len(pruned)})")

    code = 0
    if full_s > args.max_seconds:
        print(f"FAIL: render took {full_s:.2f}s > ceiling {args.max_seconds}s",
              file=sys.stderr)
        code = 1
    if ms_pruned > ms_full:
        print("FAIL: pruning did not improve render time", file=sys.stderr)
        code = 1
    return run, code


def cmd_train(args) -> tuple[Run, int]:
    run = Run(args)
    task = build_toy_task(n_gaussians=args.gaussians, ref_count=args.ref_count,
                          tar_count=args.tar_count,
                          feature_dim=args.feature_dim, size=args.size,
                          seed=args.seed)
    params = init_params(args.feature_dim, seed=args.seed, zero_gate=True)
    result = toy_train(task, params, steps=args.steps, lr=args.lr,
                       seed=args.seed)
    save_params(result.params, os.path.join(run.out, "params"))
    for f in sorted(os.listdir(os.path.join(run.out, "params"))):
        run.outputs.append(os.path.join(run.out, "params", f))
    reports.write_csv(run.path("loss_curve.csv"),
                      ["step", "total", "surrogate", "feature"],
                      [(i, f"{t:.9g}", f"{s:.9g}", f"{f:.9g}")
                       for i, (t, s, f) in enumerate(zip(
                           result.losses, result.surrogate_losses,
                           result.feature_losses))])
    reports.loss_curve_png(run.path("loss_curve.png"), result.losses,
                           result.surrogate_losses, result.feature_losses)
    ratio = result.losses[-1] / result.losses[0]
    run.report = {"initial_loss": result.losses[0],
                  "final_loss": result.losses[-1], "ratio": ratio,
                  "steps": args.steps, "lr": args.lr}
    reports.save_json(run.path("report.json"), run.report)
    print(f"loss {result.losses[0]:.5f} -> {result.losses[-1]:.5f} "
          f"(ratio {ratio:.4f})")
    return run, 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatfeat",
        description="Gaussian-splat feature lifting, rendering, fusion, and "
                    "geometric evaluation at desk scale.")
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=_default_threads())
        p.add_argument("--precision", choices=("f32", "f64"), default="f64")

    p = sub.add_parser("synth", help="generate a synthetic scene + features")
    common(p)
    p.add_argument("--gaussians", type=int, default=8)
    p.add_argument("--views", type=int, default=3)
    p.add_argument("--feature-dim", type=int, default=8)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--focal", type=float, default=80.0)
    p.add_argument("--layout", choices=("cloud", "sites"), default="sites")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("render", help="render colors/features for all views")
    common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--sh-degree", type=int, default=0, choices=(0, 1, 2, 3))
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("lift", help="lift per-view features onto Gaussians")
    common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--features", required=True, help="FTC1 (V,H,W,C) stack")
    p.add_argument("--top-k", default="all")
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--attach-out", help="also write scene with features")
    p.set_defaults(func=cmd_lift)

    p = sub.add_parser("fuse", help="gs_pe -> refine -> project -> adaptive fuse")
    common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--ref-features", required=True)
    p.add_argument("--target-features", required=True)
    p.add_argument("--params", required=True, help="FusionParams bundle dir")
    p.add_argument("--omega0", type=float, default=10000.0)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval-pose", help="trajectory errors vs ground truth")
    common(p)
    p.add_argument("--gt-cameras", required=True)
    p.add_argument("--pred-cameras", required=True)
    p.add_argument("--scene-scale", type=float, default=1.0,
                   help="meters per scene unit")
    p.set_defaults(func=cmd_eval_pose)

    p = sub.add_parser("eval-chamfer", help="Chamfer distance of point sets")
    common(p)
    p.add_argument("--points-a", required=True)
    p.add_argument("--points-b", required=True)
    p.set_defaults(func=cmd_eval_chamfer)

    p = sub.add_parser("eval-covis", help="co-visibility masks + split PSNR")
    common(p)
    p.add_argument("--ref-points", required=True)
    p.add_argument("--all-points")
    p.add_argument("--cameras", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--tol", type=float, default=0.05)
    p.set_defaults(func=cmd_eval_covis)

    p = sub.add_parser("prep-views", help="view-group selection")
    common(p)
    p.add_argument("--cameras", required=True)
    p.add_argument("--input-count", type=int, default=3)
    p.add_argument("--embeddings", help="FTC1 (frames, D) matrix")
    p.add_argument("--anchors", type=int, default=ANCHOR_GROUPS)
    p.add_argument("--group-size", type=int, default=GROUP_SIZE)
    p.add_argument("--easy-fraction", type=float, default=EASY_FRACTION)
    p.add_argument("--iou-threshold", type=float, default=IOU_THRESHOLD)
    p.add_argument("--iou-samples", type=int, default=20000)
    p.set_defaults(func=cmd_prep_views)

    p = sub.add_parser("prune", help="voxel-based Gaussian pruning")
    common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--voxel-size", type=float, required=True)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    common(p)
    p.add_argument("--trials", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="rendering throughput benchmark")
    common(p)
    p.add_argument("--gaussians", type=int, default=100_000)
    p.add_argument("--width", type=int, default=384)
    p.add_argument("--height", type=int, default=384)
    p.add_argument("--feature-dim", type=int, default=32)
    p.add_argument("--repeats", type=int, default=2)
    p.add_argument("--prune-voxel", type=float, default=0.05)
    p.add_argument("--max-seconds", type=float, default=4.0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("train", help="toy trainer on a synthetic task")
    common(p)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--gaussians", type=int, default=3)
    p.add_argument("--ref-count", type=int, default=1)
    p.add_argument("--tar-count", type=int, default=1)
    p.add_argument("--feature-dim", type=int, default=8)
    p.add_argument("--size", type=int, default=16)
    p.set_defaults(func=cmd_train)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 2
    try:
        run, code = args.func(args)
        run.finish()
        return code
    except (ValidationError, PlyParseError, TensorFormatError,
            DivergenceError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: missing file {e.filename}", file=sys.stderr)
        return 1


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
