"""Photorealistic style transfer between two photos with cycle- and self-consistent networks."""

__version__ = "0.1.0"

from .backbone import Backbone, FeaturePyramid, extract_features, load_backbone
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .inference import StylizeRequest, Stylizer, self_apply, stylize
from .losses import LossContext, LossWeights, SubLossId
from .metrics import EvalReport, evaluate, psnr, saturation_hist_distance, style_gram_distance
from .regions import RegionMaskSet, composite, load_masks, make_mask_set
from .stylenet import NetConfig, NetView, StyleNetworkPair, build_pair
from .trainer import SubLossSchedule, TrainConfig, retrain_for_new_style, train_pair

__all__ = [
    "Backbone", "FeaturePyramid", "extract_features", "load_backbone",
    "Checkpoint", "load_checkpoint", "save_checkpoint",
    "StylizeRequest", "Stylizer", "self_apply", "stylize",
    "LossContext", "LossWeights", "SubLossId",
    "EvalReport", "evaluate", "psnr", "saturation_hist_distance", "style_gram_distance",
    "RegionMaskSet", "composite", "load_masks", "make_mask_set",
    "NetConfig", "NetView", "StyleNetworkPair", "build_pair",
    "SubLossSchedule", "TrainConfig", "retrain_for_new_style", "train_pair",
]
