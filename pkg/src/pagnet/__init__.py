"""Pixel-wise gated residual networks on numpy, with a toy training harness.

Modules:
    autodiff    tape-based reverse mode, dense and perforated convolution
    gating      Gumbel sampling and straight-through gates
    blocks      gated bottleneck blocks, baselines, ponder maps, FLOP counts
    multipool   per-pixel selection among dilated pooling branches
    objectives  sparsity budget and the four task losses
    pano        panorama normals to camera-frame normals
    data, model, train, fileio, cli   the toy harness
"""

from .autodiff import Tape, Tensor, conv2d, conv2d_perforated, grad_check
from .blocks import BlockParams, count_flops, init_block, pag_block, standard_block
from .gating import TemperatureSchedule, anneal_tau, straight_through_gate
from .multipool import DEFAULT_RATES, PoolBranchSet, init_branches, multipool
from .objectives import SparsityBudget, total_loss
from .pano import globals_to_locals, locals_to_globals

__version__ = "0.1.0"

__all__ = [
    "Tape", "Tensor", "conv2d", "conv2d_perforated", "grad_check",
    "BlockParams", "count_flops", "init_block", "pag_block", "standard_block",
    "TemperatureSchedule", "anneal_tau", "straight_through_gate",
    "DEFAULT_RATES", "PoolBranchSet", "init_branches", "multipool",
    "SparsityBudget", "total_loss",
    "globals_to_locals", "locals_to_globals",
]
