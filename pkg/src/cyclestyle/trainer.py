"""Single-pair training with one randomly drawn sub-loss per iteration."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
import torch

from .backbone import Backbone
from .checkpoint import Checkpoint, check_fingerprint, load_checkpoint, save_checkpoint
from .errors import CapacityError, DivergenceError, ValidationError
from .images import to_tensor
from .losses import SUBLOSS_IDS, LossContext, LossWeights, SubLossId
from .regions import RegionMaskSet, single_region
from .stylenet import NetConfig, StyleNetworkPair, build_pair, in_param_view

log = logging.getLogger(__name__)

MODES = ("full", "instance_norm_only")


class SubLossSchedule:
    """Draws sub-losses in shuffled blocks of six, so each appears once per block."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.cursor = 0
        self.current_block: Tuple[SubLossId, ...] = ()
        self._rng = np.random.default_rng(seed)

    def next(self) -> SubLossId:
        pos = self.cursor % len(SUBLOSS_IDS)
        if pos == 0:
            order = self._rng.permutation(len(SUBLOSS_IDS))
            self.current_block = tuple(SUBLOSS_IDS[i] for i in order)
        self.cursor += 1
        return self.current_block[pos]

    __next__ = next

    def __iter__(self):
        return self


def next_subloss(schedule: SubLossSchedule) -> SubLossId:
    return schedule.next()


@dataclass
class TrainConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    steps: int = 3000
    lr: float = 1e-3
    betas: Tuple[float, float] = (0.9, 0.999)
    seed: int = 0
    mode: str = "full"
    log_every: int = 1
    net: NetConfig = field(default_factory=NetConfig)
    autosave_every: int = 500
    autosave_path: Optional[str] = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValidationError(f"steps must be >= 1, got {self.steps}")
        if not self.lr > 0:
            raise ValidationError(f"lr must be positive, got {self.lr}")
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.log_every < 1:
            raise ValidationError("log_every must be >= 1")
        self.betas = tuple(self.betas)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


def block_totals(values: List[float], block: int = len(SUBLOSS_IDS)) -> List[float]:
    """Sums of consecutive aligned blocks of weighted sub-loss values.

    Each block contains every sub-loss once, so its sum tracks the complete
    loss (six-step moving sum, sampled at block boundaries).
    """
    n = len(values) // block
    return [float(sum(values[i * block:(i + 1) * block])) for i in range(n)]


class Trainer:
    """Optimizes a :class:`StyleNetworkPair` on one pair of photos."""

    def __init__(self, x_a, x_b, masks: Optional[RegionMaskSet], cfg: TrainConfig, backbone: Backbone,
                 pair: Optional[StyleNetworkPair] = None, sink: Optional[Callable[[dict], None]] = None,
                 start_step: int = 0):
        self.cfg = cfg
        self.backbone = backbone
        self.x_a = to_tensor(x_a, dtype=torch.float32)
        self.x_b = to_tensor(x_b, dtype=torch.float32)
        if masks is None:
            masks = single_region(tuple(self.x_a.shape[-2:]), tuple(self.x_b.shape[-2:]))
        self.masks = masks
        if pair is None:
            if cfg.mode == "instance_norm_only":
                raise ValidationError("instance_norm_only mode needs an initial checkpoint")
            pair = build_pair(cfg.net, masks.correspondence, cfg.seed)
        unknown = set(masks.correspondence) - set(pair.region_labels)
        if unknown:
            raise ValidationError(f"masks use regions {sorted(unknown)} the network has no parameters for")
        self.pair = pair
        self.ctx = LossContext(self.x_a, self.x_b, backbone, masks, cfg.weights)
        if cfg.mode == "instance_norm_only":
            for p in pair.conv_parameters():
                p.requires_grad_(False)
        self.params = in_param_view(pair, "all" if cfg.mode == "full" else "instance_norm_only")
        self.optimizer = torch.optim.Adam(self.params, lr=cfg.lr, betas=cfg.betas)
        self.schedule = SubLossSchedule(cfg.seed)
        self.g_a = pair.transfer("a")
        self.g_b = pair.transfer("b")
        self.sink = sink
        self.step = start_step
        self.history: List[dict] = []

    def train_step(self) -> dict:
        sid = self.schedule.next()
        t0 = time.perf_counter()
        self.optimizer.zero_grad(set_to_none=True)
        try:
            loss = self.ctx.weighted(sid, self.g_a, self.g_b)
        except DivergenceError as exc:
            raise type(exc)(f"{exc} at step {self.step} ({sid.value})") from exc
        value = float(loss.detach())
        if not math.isfinite(value):
            raise DivergenceError(f"non-finite loss at step {self.step} ({sid.value})")
        loss.backward()
        self.optimizer.step()
        record = {
            "step": self.step,
            "subloss_id": sid.value,
            "value": value,
            "lr": self.optimizer.param_groups[0]["lr"],
            "wall_ms": (time.perf_counter() - t0) * 1000.0,
        }
        self.history.append(record)
        if self.sink is not None and self.step % self.cfg.log_every == 0:
            self.sink(record)
        self.step += 1
        return record

    def run(self) -> Checkpoint:
        for _ in range(self.cfg.steps):
            self.train_step()
            if self.cfg.autosave_path and self.step % self.cfg.autosave_every == 0:
                save_checkpoint(self.checkpoint(), self.cfg.autosave_path)
        ckpt = self.checkpoint()
        ckpt.history = list(self.history)
        return ckpt

    def checkpoint(self) -> Checkpoint:
        return Checkpoint.from_pair(
            self.pair, x_a=self.x_a, x_b=self.x_b, masks=self.masks,
            seed=self.cfg.seed, step=self.step, train_config=self.cfg.to_dict(),
            backbone_fingerprint=self.backbone.fingerprint(), backbone_source=self.backbone.source,
            region_names={str(k): v for k, v in self.masks.names.items() if k in self.masks.correspondence},
        )

    def rendering(self, direction: str) -> torch.Tensor:
        """Current stylization of the opposite photo toward ``direction`` ('a' or 'b')."""
        with torch.no_grad():
            if direction == "a":
                return self.g_a(self.x_b, self.masks.labels_b)
            return self.g_b(self.x_a, self.masks.labels_a)


def json_lines_sink(stream) -> Callable[[dict], None]:
    def emit(record: dict) -> None:
        stream.write(json.dumps(record) + "\n")
        stream.flush()
    return emit


def train_pair(x_a, x_b, masks: Optional[RegionMaskSet], cfg: TrainConfig, backbone: Backbone,
               init: Optional[Checkpoint] = None, sink=None) -> Checkpoint:
    """Train (or resume from ``init``) a network pair on two photos."""
    pair = None
    start = 0
    if init is not None:
        check_fingerprint(init, backbone)
        pair = init.to_pair()
        start = int(init.manifest.get("step", 0))
    return Trainer(x_a, x_b, masks, cfg, backbone, pair=pair, sink=sink, start_step=start).run()


def retrain_for_new_style(base: Checkpoint, x_a, x_b, masks: Optional[RegionMaskSet], cfg: TrainConfig,
                          backbone: Backbone, sink=None) -> Checkpoint:
    """Adapt a trained pair to new photos by training only instance-norm parameters.

    The instance-norm sets are reset (scale 1, shift 0) for the new regions;
    the convolution trunk is reused untouched.
    """
    if cfg.mode != "instance_norm_only":
        raise ValidationError("retraining requires mode='instance_norm_only'")
    xa = to_tensor(x_a)
    xb = to_tensor(x_b)
    if masks is None:
        masks = single_region(tuple(xa.shape[-2:]), tuple(xb.shape[-2:]))
    n_base = len(base.region_labels)
    if len(masks.correspondence) > n_base:
        raise CapacityError(f"new pair has {len(masks.correspondence)} regions but the checkpoint was trained "
                            f"with {n_base}; use full training")
    check_fingerprint(base, backbone)
    pair = base.to_pair()
    # per-region trunks refuse labels they were not trained with
    pair.reset_in_params(masks.correspondence)
    return Trainer(xa, xb, masks, cfg, backbone, pair=pair, sink=sink).run()


__all__ = [
    "SubLossSchedule", "next_subloss", "TrainConfig", "Trainer", "train_pair", "retrain_for_new_style",
    "block_totals", "json_lines_sink", "Checkpoint", "save_checkpoint", "load_checkpoint",
]
