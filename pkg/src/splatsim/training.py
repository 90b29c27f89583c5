"""Appearance and decay-net optimization against sorted-render ground truth.

The trainable state is deliberately small: the decay net parameters, the
DC spherical-harmonics color of every Gaussian, and its opacity logit.
Geometry (means, scales, rotations) stays frozen and there is no
densification; the question under study is whether weighted blending plus
a learned depth weight can recover sorted-compositing quality, not
whether the scene itself can be refit.

Ground truth is rendered once per camera with sorted front-to-back
compositing in exact arithmetic.  Each step renders one camera (cycling
round-robin) through the weighted path, scores

    loss = (1 - lambda) * L1 + lambda * (1 - SSIM)        lambda = 0.2

and backpropagates through the normalized blend, the alpha clamp and
threshold masks, and the decay net.  Per-parameter-group Adam applies
the updates: the net at mlp_lr, colors and opacities at their base rates
scaled by gaussian_lr_factor.  Tiles accumulate in a fixed order, so a
run is bit-reproducible for a given seed and config.

The forward here does not clip colors (keeps the gradient chain exact);
evaluation renders go through the standard frame path, which does.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .metrics import psnr, ssim, ssim_grad
from .neuralsort import (DecayNet, GeneralNet, GENERAL_STRUCTURES, HIDDEN_ACTS,
                         OUTPUT_ACTS, normalize_depths, weighted_backward,
                         weighted_forward)
from .projection import TILE_SIZE, project_scene
from .raster import RasterConfig, alpha_tiles_batch, render_frame
from .scene import SH_C0, GroundTruthPolicy, Scene


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"loss became non-finite at step {step}: {loss}")
        self.step = step
        self.loss = loss


@dataclass
class TrainConfig:
    steps: int = 2000
    mlp_lr: float = 0.005
    color_dc_lr: float = 0.0025
    opacity_lr: float = 0.05
    gaussian_lr_factor: float = 0.01
    lambda_ssim: float = 0.2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_every: int = 500
    snapshot_every: int = 0  # 0 disables periodic snapshots
    depth_norm: str = "frame_max"
    seed: int = 0


class Adam:
    """Per-key Adam state; learning rate is supplied per call."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.b1 = beta1
        self.b2 = beta2
        self.eps = eps
        self._m = {}
        self._v = {}
        self._t = {}

    def delta(self, key: str, grad: np.ndarray, lr: float) -> np.ndarray:
        g = np.asarray(grad, dtype=np.float64)
        t = self._t.get(key, 0) + 1
        self._t[key] = t
        m = self.b1 * self._m.get(key, 0.0) + (1 - self.b1) * g
        v = self.b2 * self._v.get(key, 0.0) + (1 - self.b2) * g * g
        self._m[key] = m
        self._v[key] = v
        mhat = m / (1 - self.b1 ** t)
        vhat = v / (1 - self.b2 ** t)
        return -lr * mhat / (np.sqrt(vhat) + self.eps)


def _net_deltas(net, grads: dict, adam: Adam, lr: float) -> dict:
    if isinstance(net, DecayNet):
        return {k: adam.delta(f"net.{k}", grads[k], lr)
                for k in ("w1", "b1", "w2", "b2")}
    return {"weights": [adam.delta(f"net.w{i}", g, lr)
                        for i, g in enumerate(grads["weights"])],
            "biases": [adam.delta(f"net.b{i}", g, lr)
                       for i, g in enumerate(grads["biases"])]}


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)  # {step, loss, psnr, ssim}
    init_psnr: float = math.nan
    init_ssim: float = math.nan
    final_psnr: float = math.nan
    final_ssim: float = math.nan

    @property
    def final_loss(self) -> float:
        return self.rows[-1]["loss"] if self.rows else math.nan

    @property
    def psnr_gain(self) -> float:
        return self.final_psnr - self.init_psnr

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "loss", "psnr", "ssim"])
            for r in self.rows:
                w.writerow([r["step"], repr(r["loss"]),
                            "" if r["psnr"] is None else repr(r["psnr"]),
                            "" if r["ssim"] is None else repr(r["ssim"])])


class Trainer:
    def __init__(self, scene: Scene, cameras, net=None,
                 config: TrainConfig | None = None,
                 policy: GroundTruthPolicy | None = None):
        self.cfg = config or TrainConfig()
        self.policy = policy or GroundTruthPolicy()
        self.scene = scene.copy()
        self.cams = list(cameras)
        if not self.cams:
            raise ValueError("training needs at least one camera")
        self.net = net if net is not None else DecayNet.init(
            seed=self.cfg.seed, depth_norm=self.cfg.depth_norm)
        self.sh_dc = self.scene.sh[:, 0, :].astype(np.float64)
        self.op_logit = self.scene.opacity_logits.astype(np.float64)
        max_id = int(self.scene.ids.max())
        self._row_of_id = np.full(max_id + 1, -1, dtype=np.int64)
        self._row_of_id[self.scene.ids] = np.arange(len(self.scene.ids))
        self.rcfg = RasterConfig(background=self.policy.background)
        self.adam = Adam(self.cfg.beta1, self.cfg.beta2, self.cfg.adam_eps)
        self.ground_truth = [self._render_gt(c) for c in self.cams]

    def _render_gt(self, cam) -> np.ndarray:
        res = project_scene(self.scene, cam)
        img, _ = render_frame(res, mode=self.policy.render_mode,
                              arithmetic=self.policy.arithmetic, cfg=self.rcfg)
        return img

    def _sync_scene(self) -> None:
        self.scene.sh[:, 0, :] = self.sh_dc.astype(np.float32)
        self.scene.opacity_logits = self.op_logit.astype(np.float32)

    def _forward(self, cam):
        """Weighted render of one camera with per-tile caches for backward."""
        self._sync_scene()
        res = project_scene(self.scene, cam)
        h, w = cam.height, cam.width
        bg = np.asarray(self.policy.background, dtype=np.float64)
        image = np.empty((h, w, 3))
        image[:, :] = bg
        tiles = []
        f = np.zeros(0)
        net_cache = None
        if len(res.ids):
            dnorm = normalize_depths(res.depth, self.net.depth_norm)
            f, net_cache = self.net.forward_cached(dnorm)
            grid = res.grid
            for ty in range(grid.tiles_y):
                for tx in range(grid.tiles_x):
                    m = grid.indices(tx, ty)
                    if len(m) == 0:
                        continue
                    ox, oy = tx * TILE_SIZE, ty * TILE_SIZE
                    alphas = alpha_tiles_batch(res.mu[m], res.conic[m],
                                               res.opacity[m], (ox, oy),
                                               "exact", "axis",
                                               self.rcfg.alpha_cap)
                    color, cache = weighted_forward(
                        alphas, res.rgb[m], f[m],
                        alpha_skip=self.rcfg.alpha_skip, background=bg)
                    th = min(TILE_SIZE, h - oy)
                    tw = min(TILE_SIZE, w - ox)
                    tile_img = color.reshape(TILE_SIZE, TILE_SIZE, 3)
                    image[oy:oy + th, ox:ox + tw] = tile_img[:th, :tw]
                    tiles.append((m, (ox, oy), alphas, cache))
        return image, res, f, net_cache, tiles

    def _loss_grad_image(self, image: np.ndarray, target: np.ndarray):
        lam = self.cfg.lambda_ssim
        n = image.size
        diff = image - target
        l1 = np.abs(diff).mean()
        s, ds = ssim_grad(image, target)
        loss = (1.0 - lam) * l1 + lam * (1.0 - s)
        g = (1.0 - lam) * np.sign(diff) / n - lam * ds
        return loss, g

    def loss_and_grads(self, cam_index: int):
        cam = self.cams[cam_index]
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            image, res, f, net_cache, tiles = self._forward(cam)
            loss, g_img = self._loss_grad_image(image, self.ground_truth[cam_index])
            n_scene = len(self.scene.ids)
            d_dc = np.zeros((n_scene, 3))
            d_logit = np.zeros(n_scene)
            df_total = np.zeros(len(res.ids))
            h, w = cam.height, cam.width
            for m, (ox, oy), alphas, cache in tiles:
                th = min(TILE_SIZE, h - oy)
                tw = min(TILE_SIZE, w - ox)
                g_tile = np.zeros((TILE_SIZE, TILE_SIZE, 3))
                g_tile[:th, :tw] = g_img[oy:oy + th, ox:ox + tw]
                g_flat = g_tile.reshape(-1, 3)
                grads = weighted_backward(cache, alphas, res.rgb[m], f[m], g_flat)
                df_total[m] += grads["f"]
                rows = self._row_of_id[res.ids[m]]
                # alpha chain: d alpha / d logit = alpha * (1 - o) while the
                # clamp is inactive; capped or skipped entries contribute zero
                uncapped = alphas < self.rcfg.alpha_cap
                o = res.opacity[m]
                d_logit_m = (grads["alpha"] * uncapped * alphas).sum(axis=1) * (1.0 - o)
                np.add.at(d_logit, rows, d_logit_m)
                # color chain through the non-negative clamp on SH evaluation
                active = (res.rgb[m] > 0).astype(np.float64)
                np.add.at(d_dc, rows, grads["rgb"] * active * SH_C0)
            net_grads = (self.net.backward(net_cache, df_total)
                         if net_cache is not None else None)
        return loss, {"net": net_grads, "sh_dc": d_dc, "opacity_logit": d_logit}

    def train_step(self, step_index: int) -> float:
        cam_index = step_index % len(self.cams)
        loss, grads = self.loss_and_grads(cam_index)
        if not np.isfinite(loss):
            raise TrainingDiverged(step_index, loss)
        cfg = self.cfg
        if grads["net"] is not None:
            self.net.apply_update(_net_deltas(self.net, grads["net"], self.adam,
                                              cfg.mlp_lr))
        self.sh_dc += self.adam.delta("sh_dc", grads["sh_dc"],
                                      cfg.gaussian_lr_factor * cfg.color_dc_lr)
        self.op_logit += self.adam.delta("opacity_logit", grads["opacity_logit"],
                                         cfg.gaussian_lr_factor * cfg.opacity_lr)
        return float(loss)

    def render_current(self, cam_index: int) -> np.ndarray:
        """Weighted render with the current net and appearance, clipped."""
        self._sync_scene()
        cam = self.cams[cam_index]
        res = project_scene(self.scene, cam)
        if len(res.ids):
            dnorm = normalize_depths(res.depth, self.net.depth_norm)
            f = self.net.forward(dnorm)
        else:
            f = np.zeros(0)
        img, _ = render_frame(res, mode="weighted", f_values=f, cfg=self.rcfg)
        return img

    def evaluate(self) -> tuple:
        """Mean PSNR and SSIM of the weighted render across all cameras."""
        ps, ss = [], []
        for i in range(len(self.cams)):
            img = self.render_current(i)
            ps.append(psnr(self.ground_truth[i], img))
            ss.append(ssim(self.ground_truth[i], img))
        return float(np.mean(ps)), float(np.mean(ss))

    def train(self, out_dir=None) -> TrainReport:
        report = TrainReport()
        report.init_psnr, report.init_ssim = self.evaluate()
        cfg = self.cfg
        for i in range(1, cfg.steps + 1):
            loss = self.train_step(i - 1)
            do_eval = (cfg.eval_every > 0 and i % cfg.eval_every == 0) or i == cfg.steps
            p = s = None
            if do_eval:
                p, s = self.evaluate()
            report.rows.append({"step": i, "loss": loss, "psnr": p, "ssim": s})
            if out_dir is not None and cfg.snapshot_every > 0 and \
                    i % cfg.snapshot_every == 0:
                self._snapshot(out_dir, i)
        report.final_psnr, report.final_ssim = self.evaluate()
        if out_dir is not None:
            self._snapshot(out_dir, None)
            report.save_csv(f"{out_dir}/train_log.csv")
        return report

    def _snapshot(self, out_dir, step) -> None:
        name = "net_final.json" if step is None else f"net_{step:06d}.json"
        if isinstance(self.net, DecayNet):
            self.net.save_json(f"{out_dir}/{name}")
        else:
            import json
            with open(f"{out_dir}/{name}", "w") as fh:
                json.dump(self.net.to_dict(), fh, indent=2)


def dse_grid(scene: Scene, cameras, steps: int = 150,
             structures=None, hidden_acts=None, output_acts=None,
             config: TrainConfig | None = None, seed: int = 0) -> list:
    """Short training runs over the small-net design space.

    Returns one row per (structure, hidden activation, output activation)
    with cost counts and before/after quality.
    """
    structures = list(structures or GENERAL_STRUCTURES)
    hidden_acts = list(hidden_acts or HIDDEN_ACTS)
    output_acts = list(output_acts or OUTPUT_ACTS)
    base = config or TrainConfig()
    rows = []
    for st in structures:
        for ha in hidden_acts:
            for oa in output_acts:
                net = GeneralNet.init(structure=st, hidden_act=ha,
                                      output_act=oa, seed=seed)
                cfg = replace(base, steps=steps, eval_every=0)
                trainer = Trainer(scene, cameras, net=net, config=cfg)
                try:
                    report = trainer.train()
                    rows.append({
                        "structure": st, "hidden_act": ha, "output_act": oa,
                        "n_macs": net.n_macs, "n_params": net.n_params,
                        "init_psnr": report.init_psnr,
                        "final_psnr": report.final_psnr,
                        "final_loss": report.final_loss, "diverged": False,
                    })
                except TrainingDiverged:
                    rows.append({
                        "structure": st, "hidden_act": ha, "output_act": oa,
                        "n_macs": net.n_macs, "n_params": net.n_params,
                        "init_psnr": math.nan, "final_psnr": math.nan,
                        "final_loss": math.nan, "diverged": True,
                    })
    return rows


def save_dse_csv(rows: list, path) -> None:
    cols = ["structure", "hidden_act", "output_act", "n_macs", "n_params",
            "init_psnr", "final_psnr", "final_loss", "diverged"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([r[c] for c in cols])
