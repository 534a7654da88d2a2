"""Stage-wise trainer, evaluator and policy comparison for the toy tasks.

A run walks through the stages in order: train a dense base model, add
MultiPool, insert gates one block per stage (shallowest first), then lower
the sparsity target step by step, each stage starting from the previous
stage's weights.  Batch size is one image.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import fileio
from .autodiff import Tape, add, channel, scale
from .blocks import FlopReport, accumulate_ponder, count_flops
from .data import augment, center_crop, gen_dataset
from .gating import TemperatureSchedule, anneal_tau
from .model import POLICIES, NetConfig, ToyNet, is_trainable
from .multipool import DEFAULT_RATES, branch_densities
from .objectives import (
    SparsityBudget,
    boundary_loss,
    depth_loss,
    normal_loss,
    semantic_loss,
    total_loss,
)

STAGES = ("base", "multipool", "gates", "rho")
TRAIN_HEADER = ["event", "stage", "step", "task_loss", "total_loss", "lr", "tau", "rho",
                "density_mean", "densities"]
COMPARE_HEADER = ["policy", "budget", "seed", "truncate", "flop_ratio", "predicted_ratio",
                  "metric", "pixel_acc", "density_mean", "train_density", "note"]


# ------------------------------------------------------------------- config


@dataclass(frozen=True)
class RunConfig:
    task: str = "shapes-semantic"
    image_size: int = 32
    crop_margin: int = 4
    n_train: int = 200
    n_eval: int = 40
    depth: int = 6
    channels: int = 32
    ratio: int = 2
    head_channels: int = 8
    policy: str = "PAG"
    rho: float = 0.7
    rho_schedule: tuple = ()
    lam: float = 1e-4
    sparsity_scope: str = "per-layer"
    tau_start: float = 1.0
    tau_end: float = 0.1
    base_lr: float = 2e-4
    lr_power: float = 0.9
    momentum: float = 0.9
    grad_clip: float = 0.0
    iters_base: int = 2000
    iters_multipool: int = 600
    iters_gate: int = 150
    iters_rho: int = 400
    multipool: str = "none"
    mp_at: int = -1
    rates: tuple = DEFAULT_RATES
    truncate: int = -1
    stages: tuple = STAGES
    density_window: int = 100
    noise_tail: float = 0.0
    # image-level gates: sparsity sees a running mean over this many images
    rate_memory: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}")
        if not 0.0 < self.rho <= 1.0:
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        if any(not 0.0 < r <= 1.0 for r in self.rho_schedule):
            raise ValueError("every scheduled rho must lie in (0, 1]")
        if list(self.rho_schedule) != sorted(self.rho_schedule, reverse=True):
            raise ValueError("rho_schedule must be non-increasing")
        if self.rho_schedule and self.rho_schedule[-1] != self.rho:
            raise ValueError("rho_schedule must end at rho")
        if self.lam < 0 or self.base_lr <= 0 or not 0 <= self.momentum < 1:
            raise ValueError("lam >= 0, base_lr > 0 and 0 <= momentum < 1 are required")
        if not 0.0 <= self.noise_tail <= 1.0:
            raise ValueError("noise_tail must lie in [0, 1]")
        if self.rate_memory < 1:
            raise ValueError("rate_memory must be >= 1")
        if self.crop_size < 2 or self.crop_size % 2:
            raise ValueError("crop size (image_size - crop_margin) must be even and positive")
        order = [STAGES.index(s) for s in self.stages if s in STAGES]
        if len(order) != len(self.stages) or order != sorted(set(order)):
            raise ValueError(f"stages must be an ordered subset of {STAGES}")
        if self.multipool not in ("none", "hard", "soft"):
            raise ValueError(f"unknown multipool mode {self.multipool!r}")
        TemperatureSchedule(self.tau_start, self.tau_end, 1)
        SparsityBudget(min(self.rho, 0.5), self.lam, self.sparsity_scope)

    @property
    def crop_size(self) -> int:
        return self.image_size - self.crop_margin

    @property
    def schedule(self) -> tuple:
        return tuple(self.rho_schedule) or (self.rho,)

    @property
    def gating(self) -> bool:
        return self.policy in ("PAG", "LayerSkip", "StaticPerforation")


def _parse_value(kind, text: str):
    text = text.strip()
    if kind is tuple:
        parts = [p.strip() for p in text.split(",") if p.strip()]
        out = []
        for p in parts:
            try:
                out.append(int(p))
            except ValueError:
                try:
                    out.append(float(p))
                except ValueError:
                    out.append(p)
        return tuple(out)
    if kind is type(None):
        return _parse_value(tuple, text) if "," in text else int(text)
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


def _field_types(cls) -> dict:
    return {f.name: type(f.default) for f in fields(cls)}


# Settings that make the toy tasks train in minutes.  The losses are sums
# over pixels, so the step size and sparsity weight differ from the
# RunConfig defaults, which follow the full-scale recipe.
TOY_RECIPE = {
    "base_lr": 1e-3,
    "grad_clip": 20.0,
    "lam": 60.0,
    "iters_base": 3000,
    "iters_multipool": 3000,
    "iters_gate": 150,
    "iters_rho": 1200,
    "noise_tail": 0.3,
    "n_eval": 200,
}


def toy_config(**overrides) -> RunConfig:
    return RunConfig(**{**TOY_RECIPE, **overrides})


def parse_config(text: str, cls=None):
    """``key = value`` lines with ``#`` comments; unknown keys are errors."""
    cls = cls or RunConfig
    types = _field_types(cls)
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(types[key], val)
    return cls(**values)


@dataclass(frozen=True)
class CompareSpec:
    """Extra keys a comparison config may carry on top of RunConfig's."""
    budgets: tuple = (0.9, 0.7, 0.5)
    policies: tuple = ("Dense", "Truncated", "LayerSkip", "StaticPerforation", "PAG")
    seeds: tuple = ()

    def __post_init__(self):
        if not self.budgets or any(not 0.0 < b <= 1.0 for b in self.budgets):
            raise ValueError("budgets must be non-empty and lie in (0, 1]")
        bad = [p for p in self.policies if p not in POLICIES]
        if bad or not self.policies:
            raise ValueError(f"unknown policies {bad}; choose from {POLICIES}")


def parse_compare_config(text: str, env=None) -> tuple:
    """``(RunConfig template, CompareSpec)`` from one ``key = value`` file."""
    mine = set(_field_types(CompareSpec))
    run_lines, cmp_lines = [], []
    for raw in text.splitlines():
        key = raw.split("#", 1)[0].split("=", 1)[0].strip()
        (cmp_lines if key in mine else run_lines).append(raw)
    template = _seed_override(parse_config("\n".join(run_lines)), env)
    return template, parse_config("\n".join(cmp_lines), CompareSpec)


def format_config(cfg) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif v is None:
            continue
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def load_config(path, env=None) -> RunConfig:
    """Read a config file; ``PAG_SEED`` in the environment overrides ``seed``."""
    return _seed_override(parse_config(Path(path).read_text()), env)


def _seed_override(cfg: RunConfig, env=None) -> RunConfig:
    env = os.environ if env is None else env
    if env.get("PAG_SEED"):
        cfg = dataclasses.replace(cfg, seed=int(env["PAG_SEED"]))
    return cfg


# ------------------------------------------------------------------ schedule


def poly_lr(it: int, maxiter: int, base_lr: float = 2e-4, power: float = 0.9) -> float:
    if not 0 <= it < maxiter:
        raise ValueError(f"iteration {it} outside [0, {maxiter})")
    return base_lr * (1.0 - it / maxiter) ** power


# ------------------------------------------------------------------ networks


def net_config(cfg: RunConfig, *, gated: Sequence[int] = (), multipool: bool = False,
               truncate: int = 0) -> NetConfig:
    static_hw = None
    if cfg.policy == "StaticPerforation":
        static_hw = (cfg.crop_size // 2, cfg.crop_size // 2)
    return NetConfig(
        task=cfg.task, channels=cfg.channels, ratio=cfg.ratio, depth=cfg.depth,
        head_channels=cfg.head_channels,
        policy=cfg.policy if cfg.gating else ("Truncated" if truncate else "Dense"),
        gated=tuple(gated) if cfg.gating else (), truncate=truncate,
        multipool=cfg.multipool if multipool else "none",
        mp_at=None if cfg.mp_at < 0 else cfg.mp_at, rates=tuple(cfg.rates), static_hw=static_hw,
    )


def predicted_ratio(net: NetConfig, rho: float, h: int, w: int) -> float:
    """FLOP ratio of ``net`` if every gate had density ``rho``."""
    toy = ToyNet(net)
    keys = {f"block{i}": rho for i in range(net.depth) if net.block_kind(i) != "Dense"}
    return count_flops(toy.layers(h, w), keys).ratio


def truncation_for_budget(cfg: RunConfig, rho: float) -> tuple:
    """Blocks to drop so the truncated net's FLOP ratio is nearest the PAG
    ratio at ``rho``.  Returns ``(blocks, achieved_ratio)``."""
    s = cfg.crop_size
    gated_cfg = dataclasses.replace(cfg, policy="PAG")
    target = predicted_ratio(net_config(gated_cfg, gated=range(cfg.depth),
                                        multipool=cfg.multipool != "none"), rho, s, s)
    best = None
    for k in range(cfg.depth):
        net = net_config(dataclasses.replace(cfg, policy="Truncated"),
                         multipool=cfg.multipool != "none", truncate=k)
        toy = ToyNet(net)
        r = count_flops(toy.layers(s, s), removed=toy.removed_blocks()).ratio
        if best is None or abs(r - target) < abs(best[1] - target) - 1e-12:
            best = (k, r)
    return best


# ------------------------------------------------------------------ training


def task_loss(task: str, out, target) -> object:
    if task == "shapes-semantic":
        return semantic_loss(out.pred, target)
    if task == "shapes-boundary":
        return boundary_loss(list(out.side) + [out.pred], target)
    if task == "ramp-depth":
        return depth_loss(channel(out.pred, 0), target)
    return normal_loss(out.pred, target)


@dataclass
class TrainResult:
    params: dict
    net: NetConfig
    rows: list = field(default_factory=list)
    train_density: float = float("nan")
    train_layer_density: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)


class Trainer:
    """SGD with momentum over single-image steps."""

    def __init__(self, cfg: RunConfig, params: Optional[dict] = None):
        self.cfg = cfg
        seq = np.random.SeedSequence(cfg.seed)
        init_ss, data_ss, gumbel_ss = seq.spawn(3)
        self.init_rng = np.random.default_rng(init_ss)
        self.data_rng = np.random.default_rng(data_ss)
        self.gumbel_rng = np.random.default_rng(gumbel_ss)
        self.data = gen_dataset(cfg.task, cfg.image_size, cfg.n_train, cfg.seed, "train")
        self.params = dict(params or {})
        self.velocity = {}
        self.rows = []
        self.rate_mean = {}

    def run_stage(self, name: str, net: NetConfig, iters: int, rho: Optional[float]) -> list:
        cfg = self.cfg
        toy = ToyNet(net)
        before = set(self.params)
        self.params = toy.extend_params(self.params, self.init_rng)
        assert before <= set(self.params)
        budget = None
        if rho is not None and rho < 1.0 and cfg.lam > 0 and net.gated:
            budget = SparsityBudget(rho, cfg.lam, cfg.sparsity_scope)
        sched = TemperatureSchedule(cfg.tau_start, cfg.tau_end, max(iters, 1))
        densities = []
        stochastic = bool(net.gated) or net.multipool == "hard"
        quiet_from = iters - int(round(cfg.noise_tail * iters)) if stochastic else iters
        for step in range(iters):
            lr = poly_lr(step, iters, cfg.base_lr, cfg.lr_power)
            tau = anneal_tau(step, sched)
            idx = int(self.data_rng.integers(len(self.data)))
            img, target = augment(*self.data[idx], cfg.crop_size, self.data_rng,
                                  flip=cfg.task != "facet-normal")
            tape = Tape()
            watched = toy.watch(self.params, tape)
            # the quiet tail trains the zero-noise gates that inference uses
            noise = self.gumbel_rng if step < quiet_from else None
            out = toy.forward(watched, img, tau=tau, rng=noise, training=True)
            tl = task_loss(cfg.task, out, target)
            loss = total_loss(tl, self._rates(out), budget) if budget else tl
            tape.backward(loss)
            self._update(watched, tape, lr)
            dens = [float(np.mean(m.data)) for m in out.masks]
            densities.append(dens)
            self.rows.append({
                "event": "train", "stage": name, "step": step,
                "task_loss": float(tl.data), "total_loss": float(loss.data),
                "lr": lr, "tau": tau, "rho": "" if rho is None else rho,
                "density_mean": float(np.mean(dens)) if dens else "",
                "densities": ";".join(f"{d:.6f}" for d in dens),
            })
        return densities

    def _rates(self, out) -> list:
        """Masks as the sparsity penalty sees them.

        A single image gives an image-level gate a density of exactly 0 or 1,
        so those gates are blended into a running mean of recent decisions
        (a stand-in for a batch mean); only the current decision is taped.
        """
        a = 1.0 / self.cfg.rate_memory
        rates = []
        for key, m in zip(out.mask_keys, out.masks):
            if m.data.size != 1:
                rates.append(m)
                continue
            prev = self.rate_mean.get(key, 1.0)
            self.rate_mean[key] = (1.0 - a) * prev + a * float(m.data.item())
            rates.append(add(scale(m, a), (1.0 - a) * prev))
        return rates

    def _update(self, watched: dict, tape: Tape, lr: float) -> None:
        grads = {k: tape.grad(t) for k, t in watched.items() if is_trainable(k)}
        if self.cfg.grad_clip > 0:
            norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if norm > self.cfg.grad_clip:
                grads = {k: g * (self.cfg.grad_clip / norm) for k, g in grads.items()}
        mu = self.cfg.momentum
        for k, g in grads.items():
            v = self.velocity.get(k)
            v = g if v is None else mu * v + g
            self.velocity[k] = v
            self.params[k] = self.params[k] - lr * v


def train(cfg: RunConfig, params: Optional[dict] = None, out_dir=None,
          snapshot_rhos: Sequence[float] = ()) -> TrainResult:
    """Run every configured stage.  ``params`` resumes from earlier weights
    (the base stage is skipped then if it is listed)."""
    trainer = Trainer(cfg, params)
    schedule = cfg.schedule
    use_mp = cfg.multipool != "none"
    gated_all = tuple(range(cfg.depth))
    truncate = 0
    if cfg.policy == "Truncated":
        truncate = cfg.truncate if cfg.truncate >= 0 else truncation_for_budget(cfg, cfg.rho)[0]
    net = net_config(cfg)
    last = []
    snapshots = {}
    if "base" in cfg.stages and params is None:
        last = trainer.run_stage("base", net, cfg.iters_base, None)
    if "multipool" in cfg.stages and use_mp:
        net = net_config(cfg, multipool=True)
        last = trainer.run_stage("multipool", net, cfg.iters_multipool, None)
    if "gates" in cfg.stages:
        if cfg.gating:
            for i in range(cfg.depth):
                net = net_config(cfg, gated=gated_all[:i + 1], multipool=use_mp)
                last = trainer.run_stage(f"gate{i}", net, cfg.iters_gate, schedule[0])
        else:
            net = net_config(cfg, multipool=use_mp, truncate=truncate)
            last = trainer.run_stage("finetune", net, cfg.iters_gate * cfg.depth, None)
    if "rho" in cfg.stages:
        for rho in schedule:
            last = trainer.run_stage(f"rho{rho:g}", net, cfg.iters_rho, rho)
            if rho in snapshot_rhos:
                snapshots[rho] = (dict(trainer.params), net, _window_density(last, cfg))
    result = TrainResult(trainer.params, net, trainer.rows, snapshots=snapshots)
    layer = _window_layer_density(last, cfg)
    result.train_layer_density = layer
    result.train_density = float(np.mean(layer)) if layer else float("nan")
    if out_dir is not None:
        save_run(out_dir, cfg, result)
    return result


def _window_layer_density(densities: list, cfg: RunConfig) -> list:
    tail = [d for d in densities[-cfg.density_window:] if d]
    return list(np.mean(tail, axis=0)) if tail else []


def _window_density(densities: list, cfg: RunConfig) -> float:
    layer = _window_layer_density(densities, cfg)
    return float(np.mean(layer)) if layer else float("nan")


def rows_to_csv(rows: list, header: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(header), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k, "")) for k in header})
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def save_run(out_dir, cfg: RunConfig, result: TrainResult) -> None:
    out = fileio.ensure_dir(out_dir)
    fileio.save_checkpoint(out / "checkpoint", result.params, {
        "run.txt": format_config(cfg),
        "net.txt": format_config(result.net),
    })
    (out / "metrics.csv").write_text(rows_to_csv(result.rows, TRAIN_HEADER))


def load_run(checkpoint_dir) -> tuple:
    """``(params, NetConfig, RunConfig)`` from a checkpoint directory."""
    d = Path(checkpoint_dir)
    params = fileio.load_checkpoint(d)
    net = parse_config((d / "net.txt").read_text(), NetConfig)
    run = parse_config((d / "run.txt").read_text())
    expected = ToyNet(net).required_names()
    if set(params) != expected:
        missing = sorted(expected - set(params))
        extra = sorted(set(params) - expected)
        raise ValueError(f"manifest does not match the network: missing {missing}, extra {extra}")
    return params, net, run


# ------------------------------------------------------------------- metrics


def semantic_metrics(pred_labels: Sequence, labels: Sequence, k: int, ignore: int = 255) -> dict:
    conf = np.zeros((k, k), dtype=np.int64)
    for p, t in zip(pred_labels, labels):
        valid = t != ignore
        np.add.at(conf, (t[valid].astype(int), p[valid].astype(int)), 1)
    tp = np.diag(conf).astype(np.float64)
    union = conf.sum(0) + conf.sum(1) - tp
    present = union > 0
    iou = float(np.mean(tp[present] / union[present])) if present.any() else 0.0
    acc = float(tp.sum() / conf.sum()) if conf.sum() else 0.0
    return {"iou": iou, "pixel_acc": acc}


def boundary_metrics(probs: Sequence, targets: Sequence,
                     thresholds: Sequence[float] = tuple(np.linspace(0.05, 0.95, 19))) -> dict:
    """Dataset-wide F-measure at the best single threshold (pixel-exact matching)."""
    best = 0.0
    for t in thresholds:
        tp = fp = fn = 0
        for p, y in zip(probs, targets):
            pos = p >= t
            gt = y > 0
            tp += int((pos & gt).sum())
            fp += int((pos & ~gt).sum())
            fn += int((~pos & gt).sum())
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        best = max(best, f)
    return {"odsF": best}


def depth_metrics(pred_log: Sequence, target_log: Sequence) -> dict:
    ratios = np.concatenate([np.exp(np.abs(np.asarray(p) - np.asarray(t))).ravel()
                             for p, t in zip(pred_log, target_log)])
    diffs = np.log(ratios)
    return {
        "delta1": float(np.mean(ratios < 1.25)),
        "delta2": float(np.mean(ratios < 1.25 ** 2)),
        "delta3": float(np.mean(ratios < 1.25 ** 3)),
        "rmse_log": float(np.sqrt(np.mean(diffs ** 2))),
    }


def normal_metrics(preds: Sequence, targets: Sequence) -> dict:
    angles = []
    for p, t in zip(preds, targets):
        p = np.asarray(p, dtype=np.float64)
        n = p / np.maximum(np.linalg.norm(p, axis=0, keepdims=True), 1e-12)
        cos = np.clip((n * t).sum(axis=0), -1.0, 1.0)
        angles.append(np.degrees(np.arccos(cos)).ravel())
    a = np.concatenate(angles)
    return {"mean_angle": float(a.mean()), "median_angle": float(np.median(a)),
            "within_11_25": float(np.mean(a < 11.25))}


PRIMARY_METRIC = {"shapes-semantic": "iou", "shapes-boundary": "odsF",
                  "ramp-depth": "delta1", "facet-normal": "within_11_25"}


# ---------------------------------------------------------------- evaluation


@dataclass
class EvalResult:
    metrics: dict
    flops: FlopReport
    layer_density: dict
    ponder: list = field(default_factory=list)
    selections: list = field(default_factory=list)

    @property
    def primary(self) -> float:
        return self.metrics[self.metrics["primary"]]


def evaluate(params: dict, net: NetConfig, dataset, *, out_dir=None,
             rho: Optional[float] = None, crop: Optional[int] = None) -> EvalResult:
    """Deterministic (zero-noise, perforated) inference over ``dataset``."""
    toy = ToyNet(net)
    missing = toy.required_names() - set(params)
    if missing:
        raise ValueError(f"parameters missing for this network: {sorted(missing)}")
    if crop is None and net.static_hw is not None and net.gated:
        crop = 2 * net.static_hw[0]
    preds, targets, ponders, selections = [], [], [], []
    dens = {}
    mp_dens = {}
    for img, target in zip(dataset.images, dataset.targets):
        if crop is not None:
            img, target = center_crop(img, crop), center_crop(target, crop)
        out = toy.forward(params, img, rng=None, training=False)
        for key, m in zip(out.mask_keys, out.masks):
            dens.setdefault(key, []).append(float(np.mean(m.data)))
        if out.masks:
            shape = img.shape[1:]
            hw = (shape[0] // 2, shape[1] // 2)
            full = [np.broadcast_to(m.data, hw) for m in out.masks]
            ponders.append(accumulate_ponder(full))
        if out.selection is not None:
            selections.append(out.selection.data)
            if net.multipool == "hard":
                for k, v in branch_densities("mp", net.rates, out.selection).items():
                    mp_dens.setdefault(k, []).append(v)
        preds.append(out.pred.data)
        targets.append(target)
    metrics = _task_metrics(net, preds, targets)
    layer_density = {k: float(np.mean(v)) for k, v in dens.items()}
    densities = dict(layer_density)
    densities.update({k: float(np.mean(v)) for k, v in mp_dens.items()})
    h, w = (preds[0].shape[1], preds[0].shape[2])
    flops = count_flops(toy.layers(h, w), densities, removed=toy.removed_blocks(), rho=rho)
    metrics["flop_ratio"] = flops.ratio
    metrics["density_mean"] = float(np.mean(list(layer_density.values()))) if layer_density else 1.0
    result = EvalResult(metrics, flops, layer_density, ponders, selections)
    if out_dir is not None:
        write_eval_outputs(out_dir, result)
    return result


def _task_metrics(net: NetConfig, preds: list, targets: list) -> dict:
    task = net.task
    if task == "shapes-semantic":
        m = semantic_metrics([p.argmax(axis=0) for p in preds], targets, net.out_channels)
    elif task == "shapes-boundary":
        m = boundary_metrics([1.0 / (1.0 + np.exp(-p[0])) for p in preds], targets)
    elif task == "ramp-depth":
        m = depth_metrics([p[0] for p in preds], targets)
    else:
        m = normal_metrics(preds, targets)
    m["primary"] = PRIMARY_METRIC[task]
    return m


EVAL_HEADER = ["metric", "value"]


def eval_csv(result: EvalResult) -> str:
    rows = [{"metric": k, "value": v} for k, v in sorted(result.metrics.items())]
    rows += [{"metric": f"density:{k}", "value": v} for k, v in sorted(result.layer_density.items())]
    return rows_to_csv(rows, EVAL_HEADER)


def write_eval_outputs(out_dir, result: EvalResult) -> None:
    out = fileio.ensure_dir(out_dir)
    (out / "eval.csv").write_text(eval_csv(result))
    flop_rows = [{"layer": n, "dense": d, "gated": g} for n, d, g in result.flops.rows()]
    (out / "flops.csv").write_text(rows_to_csv(flop_rows, ["layer", "dense", "gated"]))
    for i, pm in enumerate(result.ponder):
        fileio.write_pgm(out / f"ponder_{i:04d}.pgm", fileio.ponder_image(pm.values, pm.layer_count))
    for i, sel in enumerate(result.selections):
        fileio.write_pgm(out / f"multipool_{i:04d}.pgm", fileio.selection_image(sel))


# ------------------------------------------------------------------ comparison


def compare_policies(template: RunConfig, budgets: Sequence[float] = (0.9, 0.7, 0.5),
                     policies: Sequence[str] = ("Dense", "Truncated", "LayerSkip",
                                                "StaticPerforation", "PAG"),
                     seeds: Optional[Sequence[int]] = None, eval_data=None,
                     log=None) -> list:
    """One row per policy x budget x seed, all fine-tuned from a shared base.

    Dynamic policies follow one chain of decreasing targets (each budget
    fine-tunes from the previous one).  Truncated drops trailing blocks to the
    nearest achievable FLOP ratio.  Every variant gets the same number of
    post-base iterations as the gated chain spends to reach its budget.
    """
    budgets = tuple(sorted(budgets, reverse=True))
    seeds = (template.seed,) if seeds is None else tuple(seeds)
    rows = []
    s = template.crop_size
    for seed in seeds:
        base_cfg = dataclasses.replace(template, seed=seed, policy="Dense", stages=("base",))
        if log:
            log(f"seed {seed}: base")
        base = train(base_cfg)
        data = eval_data or gen_dataset(template.task, template.image_size, template.n_eval,
                                        seed, "eval")
        chain_iters = {}
        for i, b in enumerate(budgets):
            chain_iters[b] = template.iters_gate * template.depth + template.iters_rho * (i + 1)
        for policy in policies:
            if log:
                log(f"seed {seed}: {policy}")
            if policy in ("PAG", "LayerSkip", "StaticPerforation"):
                cfg = dataclasses.replace(template, seed=seed, policy=policy, rho=budgets[-1],
                                          rho_schedule=budgets, stages=("gates", "rho"))
                res = train(cfg, params=base.params, snapshot_rhos=budgets)
                for b in budgets:
                    params, net, tdens = res.snapshots[b]
                    ev = evaluate(params, net, data, rho=b)
                    pred = predicted_ratio(net, b, s, s)
                    note = "fixed input size; evaluated on centre crops" if policy == "StaticPerforation" else ""
                    rows.append(_compare_row(policy, b, seed, 0, ev, pred, tdens, note))
            elif policy == "Truncated":
                for b in budgets:
                    k, achieved = truncation_for_budget(template, b)
                    cfg = dataclasses.replace(template, seed=seed, policy="Truncated", truncate=k,
                                              rho=b, rho_schedule=(), stages=("gates",),
                                              iters_gate=chain_iters[b] // template.depth)
                    res = train(cfg, params=base.params)
                    ev = evaluate(res.params, res.net, data)
                    note = f"nearest achievable ratio {achieved:.4f}"
                    rows.append(_compare_row(policy, b, seed, k, ev, achieved, float("nan"), note))
            elif policy == "Dense":
                cfg = dataclasses.replace(template, seed=seed, policy="Dense", rho=1.0,
                                          rho_schedule=(), stages=("gates",),
                                          iters_gate=chain_iters[budgets[0]] // template.depth)
                res = train(cfg, params=base.params)
                ev = evaluate(res.params, res.net, data)
                rows.append(_compare_row("Dense", 1.0, seed, 0, ev, 1.0, float("nan"), ""))
            else:
                raise ValueError(f"unknown policy {policy!r}")
    return rows


def _compare_row(policy, budget, seed, truncate, ev: EvalResult, pred, tdens, note) -> dict:
    return {
        "policy": policy, "budget": budget, "seed": seed, "truncate": truncate,
        "flop_ratio": ev.metrics["flop_ratio"], "predicted_ratio": pred,
        "metric": ev.primary, "pixel_acc": ev.metrics.get("pixel_acc", ""),
        "density_mean": ev.metrics["density_mean"], "train_density": tdens, "note": note,
    }


MULTIPOOL_HEADER = ["multipool", "seed", "metric", "pixel_acc", "flop_ratio"]


def compare_multipool(template: RunConfig, modes: Sequence[str] = ("none", "hard", "soft"),
                      seeds: Optional[Sequence[int]] = None, eval_data=None) -> list:
    """Train one Dense net per mode x seed from scratch for ``iters_multipool``
    steps and evaluate each.  Mode ``none`` is the no-MultiPool baseline."""
    seeds = (template.seed,) if seeds is None else tuple(seeds)
    rows = []
    for seed in seeds:
        data = eval_data or gen_dataset(template.task, template.image_size, template.n_eval,
                                        seed, "eval")
        for mode in modes:
            stage = "base" if mode == "none" else "multipool"
            cfg = dataclasses.replace(template, seed=seed, policy="Dense", multipool=mode,
                                      stages=(stage,), iters_base=template.iters_multipool)
            res = train(cfg)
            ev = evaluate(res.params, res.net, data)
            rows.append({"multipool": mode, "seed": seed, "metric": ev.primary,
                         "pixel_acc": ev.metrics.get("pixel_acc", ""),
                         "flop_ratio": ev.metrics["flop_ratio"]})
    return rows
