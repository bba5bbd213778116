from spstgcn.nn.checkpoint import load_checkpoint, save_checkpoint
from spstgcn.nn.gradcheck import grad_check, run_grad_checks
from spstgcn.nn.layers import (
    BatchNorm,
    GcnBlock,
    InitialBlock,
    Module,
    SpStGcnLayer,
    SpStGcnLayerParams,
    TemporalConv,
    gcn_block_forward,
    spatial_gcn_forward,
    spst_gcn_forward,
    structural_gcn_forward,
    temporal_conv_forward,
)
from spstgcn.nn.model import SpStGcnModel, cross_entropy_loss, model_forward, predict
from spstgcn.nn.tensor import DiffTensor

__all__ = [
    "BatchNorm",
    "DiffTensor",
    "GcnBlock",
    "InitialBlock",
    "Module",
    "SpStGcnLayer",
    "SpStGcnLayerParams",
    "SpStGcnModel",
    "TemporalConv",
    "cross_entropy_loss",
    "gcn_block_forward",
    "grad_check",
    "load_checkpoint",
    "model_forward",
    "predict",
    "run_grad_checks",
    "save_checkpoint",
    "spatial_gcn_forward",
    "spst_gcn_forward",
    "structural_gcn_forward",
    "temporal_conv_forward",
]
