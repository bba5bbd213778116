"""Spatial-structural graph convolution for skeleton-based action recognition."""

from spstgcn.config import Config
from spstgcn.graph import ntu_graph, spatial_adjacency
from spstgcn.nn import SpStGcnModel, load_checkpoint, save_checkpoint
from spstgcn.preprocess import preprocess_all
from spstgcn.skeleton_io import generate_synthetic_dataset, parse_ntu_skeleton_file, to_tensor
from spstgcn.struct_adj import edge_distance_matrix, structural_adjacency
from spstgcn.train_eval import build_branch_dataset, evaluate, train
