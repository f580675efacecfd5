"""Feature-guided attention with voxel-level curriculum learning for 3D tumor segmentation."""
from .backbone import Backbone, BackboneConfig, BackboneOutput, backbone_forward, build_backbone
from .core import RegionMasks, compose_regions, one_hot
from .curriculum import (
    CurriculumSet,
    MiningConfig,
    MiningOutputs,
    StageSchedule,
    build_curriculum,
    mine_outputs,
    stage_for_epoch,
)
from .fga import AdjustedPrediction, AttentionMatrix, FGAConfig, FGAHead, fga_adjust, fga_forward, gfga_target
from .losses import LossConfig, LossReport, ce_loss, dice_loss, fga_loss, seg_loss, total_loss
from .metrics import MetricReport, boundary_points, dsc, evaluate_regions, hd95
from .partition import PartitionSpec, PatchMatrix, partition, unpartition
from .training import kfold_split, poly_lr

__version__ = "0.1.0"
