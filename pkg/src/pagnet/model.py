"""Toy dense-prediction network assembled from the gated blocks.

stem (3x3 conv, ReLU, 2x2 average pool) -> ``depth`` bottleneck blocks
(optionally MultiPool after block ``mp_at``) -> head (2x nearest upsample,
1x1 conv + ReLU, 3x3 conv to the task's output channels).

Boundary nets also carry two side heads (after the middle and the last
executed block) so the boundary loss sees three prediction branches.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import blocks as B
from .autodiff import Tape, Tensor, avgpool2x, conv2d, relu, upsample2x
from .multipool import DEFAULT_RATES, PoolBranchSet, branch_layers, init_branches, multipool

POLICIES = ("Dense", "PAG", "LayerSkip", "StaticPerforation", "Truncated")
TASK_OUTPUTS = {"shapes-semantic": 4, "shapes-boundary": 1, "ramp-depth": 1, "facet-normal": 3}


@dataclass(frozen=True)
class NetConfig:
    task: str = "shapes-semantic"
    channels: int = 32
    ratio: int = 2
    depth: int = 6
    head_channels: int = 8
    policy: str = "Dense"
    gated: tuple = ()
    truncate: int = 0
    multipool: str = "none"
    mp_at: Optional[int] = None
    rates: tuple = DEFAULT_RATES
    static_hw: Optional[tuple] = None

    def __post_init__(self):
        if self.task not in TASK_OUTPUTS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.depth < 1 or not 0 <= self.truncate < self.depth:
            raise ValueError("need depth >= 1 and 0 <= truncate < depth")
        if self.multipool not in ("none", "hard", "soft"):
            raise ValueError(f"unknown multipool mode {self.multipool!r}")
        if any(not 0 <= g < self.depth for g in self.gated):
            raise ValueError("gated block index out of range")
        if self.policy == "StaticPerforation" and self.gated and self.static_hw is None:
            raise ValueError("static perforation needs a fixed input size")

    @property
    def out_channels(self) -> int:
        return TASK_OUTPUTS[self.task]

    @property
    def mp_index(self) -> int:
        # after the second-to-last block by default
        return self.depth - 2 if self.mp_at is None else self.mp_at

    @property
    def executed(self) -> int:
        return self.depth - self.truncate

    def block_kind(self, i: int) -> str:
        if i in self.gated and self.policy in ("PAG", "LayerSkip", "StaticPerforation"):
            return self.policy
        return "Dense"

    @property
    def side_at(self) -> tuple:
        return (max(self.executed // 2 - 1, 0), self.executed - 1)


@dataclass
class NetOutput:
    pred: Tensor
    side: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    mask_keys: list = field(default_factory=list)
    selection: Optional[Tensor] = None


def _he(rng, cout, cin, k):
    return rng.normal(0.0, np.sqrt(2.0 / (cin * k * k)), (cout, cin, k, k))


def is_trainable(name: str) -> bool:
    return name.rsplit(".", 1)[-1] not in B.MOMENTS


class ToyNet:
    def __init__(self, cfg: NetConfig):
        self.cfg = cfg

    # ------------------------------------------------------------ parameters

    def init_params(self, rng: np.random.Generator) -> dict:
        return self.extend_params({}, rng)

    def extend_params(self, params: dict, rng: np.random.Generator) -> dict:
        """Add whatever this config needs and ``params`` lacks; never drop anything."""
        cfg = self.cfg
        out = dict(params)
        c = cfg.channels

        def need(name, make):
            if name not in out:
                out[name] = make()

        need("stem.w", lambda: _he(rng, c, 3, 3))
        need("stem.b", lambda: np.zeros(c))
        for i in range(cfg.depth):
            if f"block{i}.w1" not in out:
                for k, v in B.init_block(c, cfg.ratio, rng).arrays().items():
                    out[f"block{i}.{k}"] = v
            if cfg.block_kind(i) == "StaticPerforation":
                h, w = cfg.static_hw
                need(f"block{i}.static", lambda: np.stack([np.zeros((h, w)), np.full((h, w), 3.0)]))
        if cfg.multipool != "none":
            if "mp.sel_w" not in out:
                for k, v in init_branches(c, rng, cfg.rates).arrays().items():
                    out[f"mp.{k}"] = v
        need("head.w1", lambda: _he(rng, cfg.head_channels, c, 1))
        need("head.b1", lambda: np.zeros(cfg.head_channels))
        need("head.w2", lambda: _he(rng, cfg.out_channels, cfg.head_channels, 3))
        need("head.b2", lambda: np.zeros(cfg.out_channels))
        if cfg.task == "shapes-boundary":
            for j in range(2):
                need(f"side{j}.w", lambda: _he(rng, 1, c, 1))
                need(f"side{j}.b", lambda: np.zeros(1))
        return out

    def required_names(self) -> set:
        return set(self.extend_params({}, np.random.default_rng(0)))

    @staticmethod
    def watch(params: dict, tape: Tape) -> dict:
        return {k: (tape.watch(v) if is_trainable(k) else v) for k, v in params.items()}

    def block_params(self, params: dict, i: int) -> B.BlockParams:
        names = B.TRAINABLE + B.MOMENTS
        return B.BlockParams(**{k: params[f"block{i}.{k}"] for k in names})

    def branch_set(self, params: dict) -> PoolBranchSet:
        sub = {k[3:]: v for k, v in params.items() if k.startswith("mp.")}
        return PoolBranchSet.from_arrays(self.cfg.rates, sub)

    # --------------------------------------------------------------- forward

    def forward(self, params: dict, image, *, tau: float = 1.0,
                rng: Optional[np.random.Generator] = None, training: bool = False,
                forced_masks: Optional[dict] = None) -> NetOutput:
        """Run the net.  ``training`` switches gated blocks to the dense-multiply
        path; ``rng=None`` means zero Gumbel noise."""
        cfg = self.cfg
        sparse = not training
        x = relu(conv2d(image, params["stem.w"], params["stem.b"]))
        x = avgpool2x(x)
        out = NetOutput(pred=None)
        sides = []
        for i in range(cfg.executed):
            p = self.block_params(params, i)
            kind = cfg.block_kind(i)
            if kind == "PAG":
                forced = None if forced_masks is None else forced_masks.get(i)
                x, g = B.pag_block(x, p, tau, rng, mask=forced, perforated=sparse)
            elif kind == "LayerSkip":
                x, g = B.layer_skip_block(x, p, tau, rng, perforated=sparse)
            elif kind == "StaticPerforation":
                x, g = B.static_perforation_block(x, p, params[f"block{i}.static"], tau, rng,
                                                  perforated=sparse)
            else:
                x, g = B.standard_block(x, p), None
            if g is not None:
                out.masks.append(g)
                out.mask_keys.append(f"block{i}")
            if cfg.multipool != "none" and i == cfg.mp_index:
                x, out.selection = multipool(x, self.branch_set(params), cfg.multipool,
                                             tau if cfg.multipool == "hard" else None, rng,
                                             perforated=sparse)
            if cfg.task == "shapes-boundary":
                for j, at in enumerate(cfg.side_at):
                    if at == i:
                        sides.append(upsample2x(conv2d(x, params[f"side{j}.w"],
                                                       params[f"side{j}.b"])))
        h = upsample2x(x)
        h = relu(conv2d(h, params["head.w1"], params["head.b1"]))
        out.pred = conv2d(h, params["head.w2"], params["head.b2"])
        out.side = sides
        return out

    # ----------------------------------------------------------------- FLOPs

    def layers(self, h: int, w: int) -> list:
        """Convolution inventory for an ``h`` x ``w`` input."""
        cfg = self.cfg
        c, inner = cfg.channels, cfg.channels // cfg.ratio
        bh, bw = h // 2, w // 2
        out = [B.ConvLayer("stem", h, w, 3, c, 3, 3)]
        for i in range(cfg.depth):
            name = f"block{i}"
            kind = cfg.block_kind(i)
            key = name if kind != "Dense" else None
            out.append(B.ConvLayer(f"{name}.f1", bh, bw, c, inner, 1, 1, block=name))
            if kind != "Dense":
                head_cin = 0 if kind == "StaticPerforation" else c
                if head_cin:
                    out.append(B.ConvLayer(f"{name}.gate", bh, bw, c, 2, 1, 1, block=name))
            out.append(B.ConvLayer(f"{name}.f2", bh, bw, inner, inner, 3, 3, block=name, gate_key=key))
            out.append(B.ConvLayer(f"{name}.f3", bh, bw, inner, c, 1, 1, block=name, gate_key=key))
            if cfg.multipool != "none" and i == cfg.mp_index:
                mp = branch_layers("mp", c, bh, bw, cfg.rates, block=name)
                if cfg.multipool == "soft":
                    mp = [replace(layer, gate_key=None) for layer in mp]
                out.extend(mp)
            if cfg.task == "shapes-boundary":
                for j, at in enumerate(cfg.side_at):
                    if at == i:
                        out.append(B.ConvLayer(f"side{j}", bh, bw, c, 1, 1, 1))
        out.append(B.ConvLayer("head.1", h, w, c, cfg.head_channels, 1, 1))
        out.append(B.ConvLayer("head.2", h, w, cfg.head_channels, cfg.out_channels, 3, 3))
        return out

    def removed_blocks(self) -> list:
        return [f"block{i}" for i in range(self.cfg.executed, self.cfg.depth)]
