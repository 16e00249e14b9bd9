"""Toy training loop: sampling, augmentation, loss log and checkpoints."""

from __future__ import annotations

import csv
import json
import logging
import platform
import time
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data import Dataset, augment, load_dataset
from .model import SaliencyNet, load_checkpoint, save_checkpoint, train_step

log = logging.getLogger(__name__)

LOSS_HEADER = ("step", "bce", "iou", "fm", "mse", "total")


def sample_batch(ds: Dataset, seed: int, step: int, batch: int, do_augment: bool) -> tuple[np.ndarray, np.ndarray]:
    """Batch for ``step``; depends only on (seed, step) so resumed runs line up."""
    rng = np.random.default_rng([seed, step])
    idx = rng.choice(len(ds), size=batch, replace=len(ds) < batch)
    images, masks = [], []
    for i in idx:
        img, mask = ds.images[i], ds.masks[i]
        if do_augment:
            img, mask = augment(rng, img, mask)
        images.append(img)
        masks.append(mask)
    return np.stack(images), np.stack(masks)


def predict_dataset(net: SaliencyNet, images: np.ndarray, chunk: int = 16) -> tuple[np.ndarray, np.ndarray]:
    maps, props = [], []
    for i in range(0, len(images), chunk):
        s, p = net.predict(images[i:i + chunk])
        maps.append(s)
        props.append(p)
    return np.concatenate(maps), np.concatenate(props)


def training_metrics(net: SaliencyNet, ds: Dataset) -> dict[str, float]:
    s, p = predict_dataset(net, ds.images)
    target = ds.masks.mean(axis=(1, 2, 3))
    return {
        "train_mae": float(np.mean(np.abs(s - ds.masks))),
        "pg_mse": float(np.mean((p - target) ** 2)),
    }


def _fmt(x: float) -> str:
    return repr(float(x))


def run_training(cfg: RunConfig, out_dir=None) -> dict:
    out = Path(out_dir or cfg["out_dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from exc
    (out / "config.txt").write_text(cfg.dumps(), encoding="utf-8")

    ds = load_dataset(cfg["data_dir"])
    model_cfg = cfg.model_config()
    if ds.images.shape[2] != model_cfg.input_size or ds.images.shape[3] != model_cfg.input_size:
        log.warning("dataset images are %s, model.input_size is %d", ds.images.shape[2:], model_cfg.input_size)
    settings = cfg.train_settings()
    net = SaliencyNet(model_cfg)

    rows: list[tuple] = []
    loss_path = out / "loss.csv"
    if cfg["train.resume"]:
        load_checkpoint(cfg["train.resume"], net)
        if loss_path.is_file():
            with open(loss_path, newline="") as fh:
                rows = [tuple(r) for r in list(csv.reader(fh))[1:]][: net.params.steps]
    start = net.params.steps
    steps = cfg["steps"]

    t0 = time.time()
    with open(loss_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOSS_HEADER)
        writer.writerows(rows)
        for step in range(start, steps):
            images, masks = sample_batch(ds, cfg["seed"], step, cfg["model.batch"], cfg["train.augment"])
            report = train_step(net, images, masks, settings)
            writer.writerow((step, *(_fmt(v) for v in report.as_row())))
            if (step + 1) % cfg["train.checkpoint_every"] == 0:
                fh.flush()
                save_checkpoint(out / f"ckpt_{step + 1:06d}.bin", net)
            if step % 25 == 0:
                log.info("step %d total %.4f", step, report.total)
    save_checkpoint(out / "final.bin", net)

    summary = training_metrics(net, ds)
    summary["steps"] = steps
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    info = {
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(t0)),
        "seconds": round(time.time() - t0, 3),
        "resumed_from": cfg["train.resume"] or None,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config_source": cfg.source,
    }
    (out / "run_info.json").write_text(json.dumps(info, indent=2) + "\n")
    return summary
