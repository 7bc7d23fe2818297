"""Experiment drivers shared by the CLI and the acceptance suite: dataset
assembly, operator construction, training/evaluation/baseline/analysis
runs, and their artifact files."""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import checkpoint as ckpt_io
from .baselines import CsConfig, default_lambda_grid, fista, ista, tune_lambda
from .config import ExperimentConfig, parse_sweep_grid
from .contraction import analyze_trajectory, debias
from .core import ComplexImage, norm
from .errors import ConfigError, ParameterError
from .metrics import nrmse, snr_db, ssim
from .operators import (BoxDownsampleOperator, LinearOperator,
                        MaskedFourierOperator, gradient_step)
from .pgm import read_pgm, write_pgm16
from .phantoms import PhantomSpec, generate_dataset
from .proxnet import ProximalConfig, capture_masks
from .sampling import generate_vardens_mask, save_mask_bits, save_mask_pgm
from .unroll import (TrainConfig, UnrollConfig, reconstruct, train,
                     unrolled_forward, write_trace_csv)


# ---------------------------------------------------------------------------
# data and operators


def _center_crop_pad(plane: np.ndarray, size: int) -> np.ndarray:
    h, w = plane.shape
    out = np.zeros((size, size), np.float32)
    src_r = max((h - size) // 2, 0)
    src_c = max((w - size) // 2, 0)
    dst_r = max((size - h) // 2, 0)
    dst_c = max((size - w) // 2, 0)
    rows = min(h, size)
    cols = min(w, size)
    out[dst_r:dst_r + rows, dst_c:dst_c + cols] = \
        plane[src_r:src_r + rows, src_c:src_c + cols]
    return out


def load_image_dir(path: str, size: int) -> List[ComplexImage]:
    """Ingest a directory of PGMs: paired *_re.pgm/*_im.pgm complex images
    or plain grayscale ones (imaginary part zero), center-cropped/padded."""
    names = sorted(f for f in os.listdir(path) if f.lower().endswith(".pgm"))
    if not names:
        raise ParameterError(f"no PGM images found in {path}")
    images = []
    seen_im = {f for f in names if f.endswith("_im.pgm")}
    for name in names:
        if name.endswith("_im.pgm"):
            continue
        re_plane = read_pgm(os.path.join(path, name))
        if name.endswith("_re.pgm"):
            im_name = name[:-7] + "_im.pgm"
            if im_name not in seen_im:
                raise ParameterError(f"{name} has no matching _im.pgm")
            im_plane = read_pgm(os.path.join(path, im_name))
        else:
            im_plane = np.zeros_like(re_plane)
        images.append(ComplexImage(_center_crop_pad(re_plane, size),
                                   _center_crop_pad(im_plane, size)))
    return images


def build_dataset(cfg: ExperimentConfig) -> List[ComplexImage]:
    if cfg.data_dir is not None:
        return load_image_dir(cfg.data_dir, cfg.image_size)
    spec = PhantomSpec(cfg.phantom_min_ellipses, cfg.phantom_max_ellipses,
                       cfg.phantom_intensity_min, cfg.phantom_intensity_max,
                       cfg.phantom_phase)
    return generate_dataset(cfg.data_num, cfg.image_size, spec, cfg.data_seed)


def split_dataset(images: Sequence[ComplexImage], holdout: int):
    if holdout >= len(images):
        raise ConfigError(f"holdout ({holdout}) must be smaller than the "
                          f"dataset ({len(images)})")
    return list(images[:-holdout]), list(images[-holdout:])


def build_operator(cfg: ExperimentConfig):
    """Returns (operator, mask-or-None) for the configured task."""
    if cfg.task == "mri":
        mask = generate_vardens_mask(cfg.image_size, cfg.image_size,
                                     cfg.mask_rate, cfg.mask_center_fraction,
                                     cfg.mask_decay, cfg.mask_seed)
        return MaskedFourierOperator(mask), mask
    return BoxDownsampleOperator(cfg.image_size, cfg.image_size), None


def simulate_measurements(images: Sequence[ComplexImage], op: LinearOperator,
                          noise_std: float = 0.0, seed: int = 0
                          ) -> List[ComplexImage]:
    ys = [op.apply(x) for x in images]
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        ys = [ComplexImage(y.re + rng.normal(0, noise_std, y.shape).astype(np.float32),
                           y.im + rng.normal(0, noise_std, y.shape).astype(np.float32))
              for y in ys]
    return ys


def prox_config(cfg: ExperimentConfig) -> ProximalConfig:
    return ProximalConfig(arch=cfg.arch, num_res_blocks=cfg.num_res_blocks,
                          feature_maps=cfg.feature_maps, chain_layers=cfg.chain_layers,
                          chain_kernel=cfg.chain_kernel, activation=cfg.activation,
                          normalization=cfg.normalization)


def unroll_config(cfg: ExperimentConfig) -> UnrollConfig:
    return UnrollConfig(iterations=cfg.unroll_t, alpha_init=cfg.resolved_alpha_init(),
                        beta=cfg.beta, loss=cfg.loss)


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    return TrainConfig(lr=cfg.lr, lr_halve_every=cfg.lr_halve_every,
                       batch_size=cfg.batch_size, epochs=cfg.epochs,
                       seed=cfg.train_seed)


def _pmap(fn, items, threads: int):
    """Order-preserving map; per-item work is independent and
    deterministic, so results do not depend on the worker count."""
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# evaluation helpers


@dataclass
class EvalRow:
    index: int
    snr_zf: float
    snr: float
    ssim: float
    nrmse: float


def evaluate_model(net, alpha: float, op: LinearOperator, iterations: int,
                   pairs: Sequence[Tuple[ComplexImage, ComplexImage]]) -> List[EvalRow]:
    rows = []
    for i, (x_true, y) in enumerate(pairs):
        xhat, _ = reconstruct(net, alpha, op, y, iterations)
        zf = op.adjoint(y)
        rows.append(EvalRow(i, snr_db(zf, x_true), snr_db(xhat, x_true),
                            ssim(xhat, x_true), nrmse(xhat, x_true)))
    return rows


def mean_snr(rows: Sequence[EvalRow]) -> float:
    return float(np.mean([r.snr for r in rows]))


# ---------------------------------------------------------------------------
# command bodies


def run_genmask(cfg: ExperimentConfig, out_dir: str) -> dict:
    if cfg.task != "mri":
        raise ConfigError("genmask requires task = mri")
    os.makedirs(out_dir, exist_ok=True)
    mask = generate_vardens_mask(cfg.image_size, cfg.image_size, cfg.mask_rate,
                                 cfg.mask_center_fraction, cfg.mask_decay,
                                 cfg.mask_seed)
    pgm = os.path.join(out_dir, "mask.pgm")
    bits = os.path.join(out_dir, "mask.bits")
    save_mask_pgm(mask, pgm)
    save_mask_bits(mask, bits)
    return {"popcount": mask.popcount, "pgm": pgm, "bits": bits}


def run_gendata(cfg: ExperimentConfig, out_dir: str) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    images = build_dataset(cfg)
    for i, img in enumerate(images):
        write_pgm16(os.path.join(out_dir, f"img_{i:04d}_re.pgm"), img.re)
        write_pgm16(os.path.join(out_dir, f"img_{i:04d}_im.pgm"), img.im)
    return {"count": len(images), "dir": out_dir}


def run_train(cfg: ExperimentConfig, out_dir: str, log=None) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    images = build_dataset(cfg)
    train_set, _ = split_dataset(images, cfg.holdout)
    op, _ = build_operator(cfg)
    ys = simulate_measurements(train_set, op, cfg.noise_std, cfg.data_seed)
    result = train(train_set, lambda i: op, unroll_config(cfg), train_config(cfg),
                   prox_config(cfg), measurements=ys, log=log)
    ckpt = result.to_checkpoint(unroll_config(cfg), cfg.train_seed)
    ckpt_path = os.path.join(out_dir, "checkpoint.npgd")
    ckpt_io.save(ckpt, ckpt_path)
    trace_path = os.path.join(out_dir, "loss_trace.csv")
    write_trace_csv(result.trace, trace_path)
    return {"checkpoint": ckpt_path, "trace": trace_path,
            "final_loss": result.trace[-1][3], "seconds": result.seconds,
            "result": result}


def _load_checkpoint(cfg: ExperimentConfig):
    if cfg.checkpoint_path is None:
        raise ConfigError("checkpoint_path is required for this command")
    ck = ckpt_io.load(cfg.checkpoint_path)
    net, alpha = ckpt_io.restore_net(ck)
    return ck, net, alpha


def run_reconstruct(cfg: ExperimentConfig, out_dir: str) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    ck, net, alpha = _load_checkpoint(cfg)
    images = build_dataset(cfg)
    _, test_set = split_dataset(images, cfg.holdout)
    op, _ = build_operator(cfg)
    if op.in_shape != (cfg.image_size, cfg.image_size):
        raise ConfigError("image_size does not match the operator")
    ys = simulate_measurements(test_set, op, cfg.noise_std, cfg.data_seed)
    recons = _pmap(lambda y: reconstruct(net, alpha, op, y, ck.unroll_t)[0],
                   ys, cfg.threads)
    rows = []
    for i, (x_true, y) in enumerate(zip(test_set, ys)):
        xhat = recons[i]
        zf = op.adjoint(y)
        write_pgm16(os.path.join(out_dir, f"recon_{i:04d}.pgm"), xhat.magnitude())
        write_pgm16(os.path.join(out_dir, f"zf_{i:04d}.pgm"), zf.magnitude())
        write_pgm16(os.path.join(out_dir, f"truth_{i:04d}.pgm"), x_true.magnitude())
        rows.append(EvalRow(i, snr_db(zf, x_true), snr_db(xhat, x_true),
                            ssim(xhat, x_true), nrmse(xhat, x_true)))
    path = os.path.join(out_dir, "metrics.csv")
    with open(path, "w", newline="") as fh:
        fh.write("index,snr_zf_db,snr_db,ssim,nrmse\n")
        for r in rows:
            fh.write(f"{r.index},{r.snr_zf:.9g},{r.snr:.9g},{r.ssim:.9g},{r.nrmse:.9g}\n")
    return {"metrics": path, "rows": rows,
            "mean_snr": mean_snr(rows),
            "mean_snr_zf": float(np.mean([r.snr_zf for r in rows]))}


def run_baseline(cfg: ExperimentConfig, out_dir: str, log=None) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    images = build_dataset(cfg)
    train_set, test_set = split_dataset(images, cfg.holdout)
    op, _ = build_operator(cfg)
    ys_test = simulate_measurements(test_set, op, cfg.noise_std, cfg.data_seed)
    cs = CsConfig(lam=cfg.cs_lambda or 1.0, iterations=cfg.cs_iterations,
                  solver=cfg.cs_solver, levels=cfg.cs_levels)
    table = []
    if cfg.cs_lambda is None:
        val = train_set[-min(cfg.cs_val_images, len(train_set)):]
        ys_val = simulate_measurements(val, op, cfg.noise_std, cfg.data_seed)
        grid = default_lambda_grid(ys_val, op, cfg.cs_levels,
                                   points=cfg.cs_grid_points,
                                   lo=cfg.cs_grid_lo, hi=cfg.cs_grid_hi)
        best, table = tune_lambda(list(zip(val, ys_val)), op, grid, cs)
        cs.lam = best
        if log is not None:
            log(f"tuned lambda = {best:.6g}")
    solve = fista if cs.solver == "fista" else ista
    solved = _pmap(lambda y: solve(y, op, cs), ys_test, cfg.threads)
    rows = []
    for i, (x_true, y) in enumerate(zip(test_set, ys_test)):
        xhat, trace = solved[i]
        with open(os.path.join(out_dir, f"cs_trace_{i:04d}.csv"), "w", newline="") as fh:
            fh.write("iter,objective,data_term,l1_term\n")
            for it, obj, data, l1 in trace:
                fh.write(f"{it},{obj:.9g},{data:.9g},{l1:.9g}\n")
        zf = op.adjoint(y)
        rows.append(EvalRow(i, snr_db(zf, x_true), snr_db(xhat, x_true),
                            ssim(xhat, x_true), nrmse(xhat, x_true)))
    path = os.path.join(out_dir, "cs_metrics.csv")
    with open(path, "w", newline="") as fh:
        fh.write("index,snr_zf_db,snr_db,ssim,nrmse\n")
        for r in rows:
            fh.write(f"{r.index},{r.snr_zf:.9g},{r.snr:.9g},{r.ssim:.9g},{r.nrmse:.9g}\n")
    return {"lambda": cs.lam, "grid_table": table, "metrics": path,
            "rows": rows, "mean_snr": mean_snr(rows)}


def run_analyze(cfg: ExperimentConfig, out_dir: str) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    ck, net, alpha = _load_checkpoint(cfg)
    images = build_dataset(cfg)
    _, test_set = split_dataset(images, cfg.holdout)
    op, _ = build_operator(cfg)
    ys = simulate_measurements(test_set, op, 0.0, cfg.data_seed)
    pairs = list(zip(test_set, ys))
    traces, aggregate = analyze_trajectory(net, alpha, op, pairs, ck.unroll_t,
                                           out_dir=out_dir)
    debias_rows = []
    for i, (x_true, y) in enumerate(pairs):
        traj = unrolled_forward(net, op, y, ck.unroll_t, alpha)
        x_t = ComplexImage.from_channels(traj.final)
        # linearize where the frozen map is actually applied: the final
        # proximal input g(x_T; y)
        masks = capture_masks(net, gradient_step(x_t, y, alpha, op))
        res = debias(net, masks, op, alpha, y, x_t)
        debias_rows.append((i, int(res.converged), int(res.diverged), res.iterations,
                            norm(y - op.apply(x_t)), norm(y - op.apply(res.x))))
    path = os.path.join(out_dir, "debias.csv")
    with open(path, "w", newline="") as fh:
        fh.write("index,converged,diverged,iterations,residual_xT,residual_debiased\n")
        for row in debias_rows:
            fh.write(f"{row[0]},{row[1]},{row[2]},{row[3]},{row[4]:.9g},{row[5]:.9g}\n")
    return {"traces": traces, "aggregate": aggregate, "debias": debias_rows,
            "out_dir": out_dir}


def run_sweep(cfg: ExperimentConfig, out_dir: str, log=None) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    cells = parse_sweep_grid(cfg.sweep_grid)
    images = build_dataset(cfg)
    train_set, test_set = split_dataset(images, cfg.holdout)
    op, _ = build_operator(cfg)
    ys_train = simulate_measurements(train_set, op, cfg.noise_std, cfg.data_seed)
    ys_test = simulate_measurements(test_set, op, cfg.noise_std, cfg.data_seed)
    rows = []
    for t, rb in cells:
        pc = ProximalConfig(arch=cfg.arch, num_res_blocks=rb,
                            feature_maps=cfg.feature_maps, chain_layers=cfg.chain_layers,
                            chain_kernel=cfg.chain_kernel, activation=cfg.activation,
                            normalization=cfg.normalization)
        uc = UnrollConfig(iterations=t, alpha_init=cfg.resolved_alpha_init(),
                          beta=cfg.beta, loss=cfg.loss)
        result = train(train_set, lambda i: op, uc, train_config(cfg), pc,
                       measurements=ys_train, log=log)
        t0 = time.perf_counter()
        eval_rows = evaluate_model(result.net, float(result.alpha.value), op, t,
                                   list(zip(test_set, ys_test)))
        infer_seconds = (time.perf_counter() - t0) / max(len(test_set), 1)
        rows.append((t, rb, result.seconds, infer_seconds,
                     mean_snr(eval_rows),
                     float(np.mean([r.ssim for r in eval_rows]))))
        if log is not None:
            log(f"cell T={t} RB={rb}: snr={rows[-1][4]:.2f} dB")
    path = os.path.join(out_dir, "sweep.csv")
    with open(path, "w", newline="") as fh:
        fh.write("T,RBs,train_seconds,infer_seconds_per_image,snr_mean,ssim_mean\n")
        for row in rows:
            fh.write(f"{row[0]},{row[1]},{row[2]:.9g},{row[3]:.9g},"
                     f"{row[4]:.9g},{row[5]:.9g}\n")
    return {"sweep": path, "rows": rows}
