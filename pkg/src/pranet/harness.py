"""Training, evaluation, inference, benchmarking and ablation workflows."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np
from PIL import Image

from . import checkpoint, data, jsonfmt, metrics, model, ops
from .autograd import GradTape, Tensor
from .errors import DataIOError, InvalidArgument, NumericError
from .loss import total_loss
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.prnt"
BEST_CHECKPOINT_NAME = "checkpoint_best.prnt"
EVAL_BATCH = 16

_MODEL_KEYS = {
    "inputSize": "input_size",
    "levelChannels": "level_channels",
    "reducedChannels": "reduced_channels",
    "refineDepth": "refine_depth",
    "enablePPD": "enable_ppd",
    "enableRA": "enable_ra",
}


def model_config_to_json(cfg: model.ModelConfig) -> dict:
    d = cfg.to_dict()
    return {k: d[v] for k, v in _MODEL_KEYS.items()}


def model_config_from_json(d: dict) -> model.ModelConfig:
    unknown = set(d) - set(_MODEL_KEYS)
    if unknown:
        raise InvalidArgument(f"unknown model config fields: {sorted(unknown)}")
    kwargs = {_MODEL_KEYS[k]: v for k, v in d.items()}
    return model.ModelConfig(**{"input_size": 64, **kwargs})


@dataclass
class DataSource:
    kind: str = "synthetic"
    n: int = 250
    size: int = 64
    seed: int = 1
    image_dir: Optional[str] = None
    mask_dir: Optional[str] = None

    def load(self) -> data.Dataset:
        if self.kind == "synthetic":
            return data.synth_generate(self.seed, self.n, self.size)
        if self.kind == "directories":
            if not self.image_dir or not self.mask_dir:
                raise InvalidArgument("directories data source needs imageDir and maskDir")
            return data.load_pairs(self.image_dir, self.mask_dir)
        raise InvalidArgument(f"unknown data source kind {self.kind!r}")

    def to_json(self) -> dict:
        if self.kind == "synthetic":
            return {"kind": "synthetic", "n": self.n, "size": self.size, "seed": self.seed}
        return {"kind": "directories", "imageDir": self.image_dir, "maskDir": self.mask_dir}

    @classmethod
    def from_json(cls, d: dict) -> "DataSource":
        kind = d.get("kind", "synthetic")
        if kind == "synthetic":
            return cls(kind, int(d.get("n", 250)), int(d.get("size", 64)), int(d.get("seed", 1)))
        return cls(kind, image_dir=d.get("imageDir"), mask_dir=d.get("maskDir"))


@dataclass
class RunConfig:
    model: model.ModelConfig = field(default_factory=model.ModelConfig.desk)
    epochs: int = 20
    batch_size: int = 8
    lr: float = 1e-4
    seed: int = 0
    data_source: DataSource = field(default_factory=DataSource)
    output_dir: str = "runs/default"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or not self.lr > 0:
            raise InvalidArgument("need epochs >= 1, batchSize >= 1 and lr > 0")
        if self.seed < 0:
            raise InvalidArgument("seed must be non-negative")

    def to_json(self) -> dict:
        return {
            "model": model_config_to_json(self.model),
            "epochs": self.epochs,
            "batchSize": self.batch_size,
            "lr": self.lr,
            "seed": self.seed,
            "dataSource": self.data_source.to_json(),
            "outputDir": self.output_dir,
        }

    @classmethod
    def from_json(cls, d: dict) -> "RunConfig":
        known = {"model", "epochs", "batchSize", "lr", "seed", "dataSource", "outputDir"}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgument(f"unknown run config fields: {sorted(unknown)}")
        return cls(
            model=model_config_from_json(d.get("model", {})),
            epochs=int(d.get("epochs", 20)),
            batch_size=int(d.get("batchSize", 8)),
            lr=float(d.get("lr", 1e-4)),
            seed=int(d.get("seed", 0)),
            data_source=DataSource.from_json(d.get("dataSource", {})),
            output_dir=str(d.get("outputDir", "runs/default")),
        )

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise DataIOError(f"cannot read config {path}: {exc}") from exc
        try:
            return cls.from_json(json.loads(text))
        except json.JSONDecodeError as exc:
            raise InvalidArgument(f"config {path} is not valid JSON: {exc}") from exc


# ---------------------------------------------------------------- prediction

def predict_batch(params: dict, cfg: model.ModelConfig, images: List[np.ndarray]) -> List[np.ndarray]:
    """Probability maps at ``cfg.input_size`` for images of any extent."""
    size = cfg.input_size
    resized = [
        img if img.shape[2:] == (size, size)
        else ops.bilinear_resize(Tensor(img), size, size).data
        for img in images
    ]
    out = []
    for i in range(0, len(resized), EVAL_BATCH):
        x = Tensor(np.concatenate(resized[i:i + EVAL_BATCH]).astype(np.float32))
        out.extend(model.predict(x, params, cfg).data)
    return [p[None] for p in out]


def evaluate_params(params: dict, cfg: model.ModelConfig, dataset: data.Dataset) -> metrics.MetricReport:
    if len(dataset) == 0:
        raise InvalidArgument("cannot evaluate an empty dataset")
    preds = predict_batch(params, cfg, [s.image for s in dataset])
    return metrics.evaluate_dataset(
        {s.image_id: p for s, p in zip(dataset, preds)},
        {s.image_id: s.mask for s in dataset},
    )


def _mean_dice(params, cfg, dataset) -> float:
    preds = predict_batch(params, cfg, [s.image for s in dataset])
    sized = [
        p if p.shape[2:] == s.mask.shape[2:]
        else ops.bilinear_resize(Tensor(p), *s.mask.shape[2:]).data
        for s, p in zip(dataset, preds)
    ]
    return float(np.mean([metrics.dice_iou(p, s.mask)[0] for s, p in zip(dataset, sized)]))


# ---------------------------------------------------------------- training

@dataclass
class TrainResult:
    params: dict
    best_params: dict
    best_epoch: int
    log: List[dict]
    splits: tuple
    test_report: Optional[metrics.MetricReport] = None


def _stack(samples) -> tuple:
    return (np.concatenate([s.image for s in samples]).astype(np.float32),
            np.concatenate([s.mask for s in samples]).astype(np.float32))


def train(config: RunConfig, on_epoch: Optional[Callable[[dict], None]] = None,
          dataset: Optional[data.Dataset] = None) -> TrainResult:
    """Run the full recipe and score the best-validation parameters on the test split."""
    cfg = config.model
    dataset = config.data_source.load() if dataset is None else dataset
    train_set, val_set, test_set = data.split_80_10_10(dataset, config.seed)
    base = cfg.input_size
    fixed = [data.resize_sample(s, base) for s in train_set]
    views = {sc: [data.multiscale_view(s, sc, base) for s in fixed] for sc in data.SCALES}

    params = model.init_params(cfg, config.seed)
    state = AdamState.zeros(params)
    rng = np.random.default_rng([config.seed, 1])
    history = []
    best_dice, best_epoch, best_params = -1.0, 0, None

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(fixed))
        losses = []
        for b, start in enumerate(range(0, len(order), config.batch_size)):
            scale = data.SCALES[int(rng.integers(len(data.SCALES)))]
            images, masks = _stack([views[scale][i] for i in order[start:start + config.batch_size]])
            try:
                with GradTape() as tape:
                    outs = model.forward(Tensor(images), params, cfg)
                    loss, _ = total_loss(outs, masks)
                tape.backward(loss)
                grads = {k: p.grad for k, p in params.items()}
                adam_step(params, grads, state, config.lr)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {b}: {exc}") from exc
            losses.append(loss.item())

        val_dice = _mean_dice(params, cfg, val_set) if len(val_set) else float("nan")
        row = {"epoch": epoch, "meanLoss": float(np.mean(losses)), "valDice": val_dice}
        history.append(row)
        log.info("epoch %d  loss %.4f  val dice %.4f", epoch, row["meanLoss"], val_dice)
        if on_epoch:
            on_epoch(row)
        if val_dice > best_dice:
            best_dice, best_epoch = val_dice, epoch
            best_params = {k: Tensor(p.data.copy(), requires_grad=True) for k, p in params.items()}

    report = evaluate_params(best_params, cfg, test_set) if len(test_set) else None
    return TrainResult(params, best_params, best_epoch, history, (train_set, val_set, test_set), report)


def write_report(path, report: metrics.MetricReport) -> str:
    text = jsonfmt.dumps(report.to_dict())
    Path(path).write_text(text)
    return text


def cmd_train(config: RunConfig, on_epoch=None) -> TrainResult:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = train(config, on_epoch)
    cfg_json = config.to_json()
    checkpoint.save(out / CHECKPOINT_NAME, result.params, cfg_json, result.log)
    checkpoint.save(out / BEST_CHECKPOINT_NAME, result.best_params, cfg_json,
                    result.log[:result.best_epoch])
    (out / "train_log.json").write_text(jsonfmt.dumps(
        {"bestEpoch": result.best_epoch, "epochs": result.log}))
    (out / "split.json").write_text(jsonfmt.dumps(
        {tag: ds.ids for tag, ds in zip(("train", "val", "test"), result.splits)}))
    if result.test_report is not None:
        write_report(out / "test_report.json", result.test_report)
    return result


# ---------------------------------------------------------------- eval / infer / bench

def load_model(path):
    params, cfg_json, header = checkpoint.load(path)
    cfg = model_config_from_json(cfg_json["model"])
    expected = set(model.layer_specs(cfg))
    got = {k.rsplit(".", 1)[0] for k in params}
    if expected != got:
        raise InvalidArgument(f"checkpoint parameters do not match its model config")
    return params, cfg, cfg_json


def cmd_eval(checkpoint_path, source: DataSource) -> metrics.MetricReport:
    params, cfg, _ = load_model(checkpoint_path)
    dataset = source.load()
    if len(dataset) == 0:
        raise InvalidArgument("evaluation dataset is empty")
    return evaluate_params(params, cfg, dataset)


def cmd_infer(checkpoint_path, image_path, out_path) -> np.ndarray:
    params, cfg, _ = load_model(checkpoint_path)
    try:
        with Image.open(image_path) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except OSError as exc:
        raise DataIOError(f"cannot read {image_path}: {exc}") from exc
    h, w = rgb.shape[:2]
    prob = predict_batch(params, cfg, [rgb.transpose(2, 0, 1)[None].copy()])[0]
    prob = ops.bilinear_resize(Tensor(prob), h, w).data[0, 0]
    gray = np.floor(np.clip(prob, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    try:
        Image.fromarray(gray, "L").save(out_path, format="PNG")
    except OSError as exc:
        raise DataIOError(f"cannot write {out_path}: {exc}") from exc
    return gray


def cmd_bench(checkpoint_path, size: int, iterations: int, warmup: int) -> dict:
    if size <= 0 or size % 16:
        raise InvalidArgument(f"bench size must be a positive multiple of 16, got {size}")
    if iterations < 1 or warmup < 0:
        raise InvalidArgument("need iterations >= 1 and warmup >= 0")
    params, cfg, _ = load_model(checkpoint_path)
    cfg = replace(cfg, input_size=size)
    x = Tensor(np.random.default_rng(0).uniform(0, 1, (1, 3, size, size)).astype(np.float32))
    for _ in range(warmup):
        model.predict(x, params, cfg)
    times = []
    for _ in range(iterations):
        t0 = time.perf_counter()
        model.predict(x, params, cfg)
        times.append(time.perf_counter() - t0)
    mean_ms = 1000.0 * float(np.mean(times))
    return {"size": size, "iterations": iterations, "meanMs": mean_ms, "fps": 1000.0 / mean_ms}


# ---------------------------------------------------------------- ablation

ABLATION_SETTINGS = (
    ("No.1", "Backbone", False, False),
    ("No.2", "PPD + Backbone", True, False),
    ("No.3", "RA + Backbone", False, True),
    ("No.4", "PPD + RA + Backbone", True, True),
)


def cmd_ablate(config: RunConfig, on_row=None) -> List[dict]:
    """Train and test the four component settings on identical data and seed."""
    dataset = config.data_source.load()
    rows = []
    for label, name, ppd, ra in ABLATION_SETTINGS:
        variant = replace(config, model=replace(config.model, enable_ppd=ppd, enable_ra=ra))
        result = train(variant, dataset=dataset)
        rep = result.test_report
        row = {"setting": label, "name": name, "meanDice": rep.mean_dice,
               "meanIoU": rep.mean_iou, "sAlpha": rep.s_alpha}
        rows.append(row)
        if on_row:
            on_row(row)
    return rows


def format_ablation(rows: List[dict]) -> str:
    head = f"{'Setting':<6}  {'Name':<22}{'meanDice':>10}{'meanIoU':>10}{'S_alpha':>10}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r['setting']:<6}  {r['name']:<22}{r['meanDice']:>10.6f}"
                     f"{r['meanIoU']:>10.6f}{r['sAlpha']:>10.6f}")
    return "\n".join(lines)
