import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from spstgcn.enums import (
    AdjacencySign,
    Branch,
    ChannelSemantics,
    DistanceMeasure,
    SplitRule,
)
from spstgcn.errors import ConfigError, NonFiniteCoordinate, ShapeMismatch


@dataclass
class FrameRecord:
    """
    Represents the bodies detected in one frame of a skeleton file.

    ### Attributes

    - `bodies` (`list`): `(body_id, joints)` pairs where `joints` is a `(joint_count, 3)` array in meters.
    """

    bodies: List[Tuple[int, np.ndarray]] = field(default_factory = list)


@dataclass
class SkeletonSequence:
    """
    Represents a raw skeleton recording as read from disk.

    ### Attributes

    - `frames` (`list`): One `FrameRecord` per frame.
    - `joint_count` (`int`): Joints per body, 25 for NTU.
    - `body_capacity` (`int`): Maximum bodies kept per frame.
    - `label` (`int`): Optional class index.
    - `source_id` (`str`): Identifier of the recording, usually the file stem.
    """

    frames: List[FrameRecord] = field(default_factory = list)
    joint_count: int = 25
    body_capacity: int = 2
    label: Optional[int] = None
    source_id: str = ""

    def __post_init__(self):
        for index, frame in enumerate(self.frames):
            for body_id, joints in frame.bodies:
                if joints.shape != (self.joint_count, 3):
                    raise ShapeMismatch(
                        f"Body {body_id} in frame {index} has shape {joints.shape}, expected ({self.joint_count}, 3)."
                    )
                if not np.all(np.isfinite(joints)):
                    raise NonFiniteCoordinate(
                        f"Body {body_id} in frame {index} of {self.source_id or 'sequence'} has a non-finite coordinate."
                    )

    def __repr__(self):
        return f'SkeletonSequence("{self.source_id}", frames={len(self.frames)}, label={self.label})'


@dataclass
class ManifestEntry:
    """
    Represents one sample listed in a dataset manifest.

    ### Attributes

    - `path` (`str`): Location of the skeleton file.
    - `label` (`int`): Class index.
    - `subject_id` (`int`): Performer identifier, used by cross-subject splits.
    - `camera_id` (`int`): Camera identifier, used by cross-view splits.
    """

    path: str
    label: int
    subject_id: int = 0
    camera_id: int = 0


@dataclass
class DatasetManifest:
    """
    Represents an ordered list of samples and the rule used to split them.

    ### Attributes

    - `entries` (`list`): The `ManifestEntry` records in file order.
    - `split_rule` (`SplitRule`): How the manifest is split into training and evaluation sets.
    """

    entries: List[ManifestEntry] = field(default_factory = list)
    split_rule: SplitRule = SplitRule.EXPLICIT

    @property
    def labels(self) -> List[int]:
        return [entry.label for entry in self.entries]


@dataclass
class SyntheticSpec:
    """
    Describes a deterministic synthetic dataset built from edge-node motion programs.

    ### Attributes

    - `classes` (`tuple`): Names of motion programs, one per class, see `skeleton_io.MOTION_PROGRAMS`.
    - `samples_per_class` (`int`): Samples generated for each class.
    - `frames` (`int`): Frames per sample.
    - `noise` (`float`): Standard deviation of the per-coordinate jitter, in meters.
    - `amplitude` (`float`): Amplitude of the edge-node motion, in meters.
    """

    classes: Tuple[str, ...] = ("hands_converge", "hands_independent", "foot_oscillates")
    samples_per_class: int = 40
    frames: int = 64
    noise: float = 0.005
    amplitude: float = 0.15


@dataclass
class FeatureTensor:
    """
    Represents a dense `(C, T, V, M)` array carried through preprocessing.

    ### Attributes

    - `data` (`np.ndarray`): 64-bit float array of shape `(C, T, V, M)`.
    - `channel_semantics` (`ChannelSemantics`): What the channel axis holds.
    """

    data: np.ndarray
    channel_semantics: ChannelSemantics = ChannelSemantics.RAW3D

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype = np.float64)
        if self.data.ndim != 4:
            raise ShapeMismatch(f"Feature tensors are (C, T, V, M), got shape {self.data.shape}.")
        expected = self.channel_semantics.channels
        if expected is not None and self.data.shape[0] != expected:
            raise ShapeMismatch(
                f"{self.channel_semantics.value} needs {expected} channels, got {self.data.shape[0]}."
            )
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteCoordinate("Feature tensor contains NaN or infinite entries.")

    @property
    def shape(self) -> Tuple[int, int, int, int]:
        return self.data.shape

    def __repr__(self):
        return f"FeatureTensor({self.channel_semantics.value}, shape={self.data.shape})"


@dataclass
class BranchSet:
    """
    Represents the three network inputs computed from one raw tensor.

    ### Attributes

    - `joint` (`FeatureTensor`): Joint features.
    - `velocity` (`FeatureTensor`): Velocity features.
    - `bone` (`FeatureTensor`): Bone features.
    """

    joint: FeatureTensor
    velocity: FeatureTensor
    bone: FeatureTensor

    def __post_init__(self):
        shapes = {tensor.shape[1:] for tensor in (self.joint, self.velocity, self.bone)}
        if len(shapes) != 1:
            raise ShapeMismatch(f"Branches disagree on (T, V, M): {sorted(shapes)}.")

    def get(self, branch: Branch) -> FeatureTensor:
        return getattr(self, branch.value)


@dataclass
class GraphSpec:
    """
    Represents a skeleton topology.

    ### Attributes

    - `joint_count` (`int`): Number of joints `V`.
    - `edges` (`list`): Undirected joint pairs forming a tree.
    - `center_joint` (`int`): Index of the center joint, the root of the bone tree.
    - `edge_nodes` (`tuple`): Ordered degree-1 joints that receive structural connections.
    - `parent_map` (`tuple`): Parent of every joint when the tree is rooted at `center_joint`.
    - `joint_names` (`tuple`): Optional human-readable joint names.
    """

    joint_count: int
    edges: List[Tuple[int, int]]
    center_joint: int
    edge_nodes: Tuple[int, ...]
    parent_map: Tuple[int, ...] = ()
    joint_names: Tuple[str, ...] = ()

    def degree(self, joint: int) -> int:
        return sum(1 for u, v in self.edges if joint in (u, v))


@dataclass
class SpatialAdjacency:
    """
    Represents the hop-partitioned adjacency stack of the spatial branch.

    ### Attributes

    - `partitions` (`np.ndarray`): `(P, V, V)` normalized matrices, one per hop distance.
    - `raw` (`np.ndarray`): `(P, V, V)` 0/1 hop matrices.
    - `degrees` (`np.ndarray`): `(P, V)` diagonal of each normalizing matrix.
    - `max_hop` (`int`): Largest hop distance, so `P = max_hop + 1`.
    - `alpha` (`float`): Guard added to every degree.
    """

    partitions: np.ndarray
    raw: np.ndarray
    degrees: np.ndarray
    max_hop: int
    alpha: float

    @property
    def count(self) -> int:
        return self.partitions.shape[0]


@dataclass
class WarpPath:
    """
    Represents an alignment between two series.

    ### Attributes

    - `path` (`list`): `(t_a, t_b)` index pairs from `(0, 0)` to `(T_a - 1, T_b - 1)`.
    - `total_cost` (`float`): Sum of point costs along the path.
    """

    path: List[Tuple[int, int]]
    total_cost: float

    def __len__(self):
        return len(self.path)


@dataclass
class DtwConfig:
    """
    Describes how structural distances are computed.

    ### Attributes

    - `radius` (`int`): Refinement radius of FastDTW.
    - `normalize` (`bool`): Divide DTW costs by the warp-path length.
    - `epsilon` (`float`): Smallest distance used when taking reciprocals.
    - `measure` (`DistanceMeasure`): Distance between edge-node trajectories.
    - `sign` (`AdjacencySign`): Whether reciprocal distances are subtracted or added.
    - `per_branch` (`bool`): Compute one matrix per input branch instead of one per sample.
    """

    radius: int = 1
    normalize: bool = True
    epsilon: float = 1e-6
    measure: DistanceMeasure = DistanceMeasure.FASTDTW
    sign: AdjacencySign = AdjacencySign.DIFFERENTIATE
    per_branch: bool = False

    def __post_init__(self):
        if self.radius < 0:
            raise ConfigError(f"radius must be non-negative, got {self.radius}.")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}.")


@dataclass
class EdgeDistanceMatrix:
    """
    Represents pairwise distances between edge-node trajectories.

    ### Attributes

    - `D` (`np.ndarray`): `(V, V)` symmetric matrix, zero outside edge-node pairs and on the diagonal.
    - `edge_nodes` (`tuple`): The edge nodes the distances were computed for.
    - `evaluations` (`int`): Number of distance evaluations performed.
    """

    D: np.ndarray
    edge_nodes: Tuple[int, ...]
    evaluations: int = 0


@dataclass
class StructuralAdjacency:
    """
    Represents the per-sample structural matrix `As`.

    ### Attributes

    - `As` (`np.ndarray`): `(V, V)` matrix with unit diagonal and non-positive edge-node entries.
    """

    As: np.ndarray


@dataclass
class ModelConfig:
    """
    Describes the network built for one input branch.

    ### Attributes

    - `in_channels` (`int`): Channels of the branch input.
    - `init_channels` (`int`): Output channels of the initial block.
    - `blocks` (`tuple`): `(out_channels, stride)` for every GCN block.
    - `temporal_kernel` (`int`): Odd kernel size of the temporal convolutions.
    - `dropout` (`float`): Dropout probability before the classifier.
    - `num_classes` (`int`): Number of classes `N`.
    - `structural` (`bool`): Enable the structural branch (`False` gives Sp-GCN).
    - `max_hop` (`int`): Largest hop distance of the spatial partitions.
    - `alpha` (`float`): Degree guard of the spatial normalization.
    - `bn_momentum` (`float`): Momentum of batch-normalization running statistics.
    - `bn_eps` (`float`): Variance guard of batch normalization.
    """

    in_channels: int = 6
    init_channels: int = 32
    blocks: Tuple[Tuple[int, int], ...] = ((32, 1), (48, 2), (48, 1), (64, 2))
    temporal_kernel: int = 5
    dropout: float = 0.25
    num_classes: int = 60
    structural: bool = True
    max_hop: int = 2
    alpha: float = 1e-3
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        self.blocks = tuple((int(width), int(stride)) for width, stride in self.blocks)
        if not self.blocks:
            raise ConfigError("A model needs at least one GCN block.")
        widths = [self.in_channels, self.init_channels] + [width for width, _ in self.blocks]
        if any(width <= 0 for width in widths):
            raise ConfigError(f"Channel widths must be positive, got {widths}.")
        if any(stride not in (1, 2) for _, stride in self.blocks):
            raise ConfigError("Block strides must be 1 or 2.")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}.")
        if self.temporal_kernel < 1 or self.temporal_kernel % 2 == 0:
            raise ConfigError(f"temporal_kernel must be a positive odd number, got {self.temporal_kernel}.")
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be positive, got {self.num_classes}.")

    def to_text(self) -> str:
        """Return the config as flat `key = value` lines."""
        blocks = ",".join(f"{width}/{stride}" for width, stride in self.blocks)
        return "\n".join(
            [
                f"in_channels = {self.in_channels}",
                f"init_channels = {self.init_channels}",
                f"blocks = {blocks}",
                f"temporal_kernel = {self.temporal_kernel}",
                f"dropout = {self.dropout!r}",
                f"num_classes = {self.num_classes}",
                f"structural = {str(self.structural).lower()}",
                f"max_hop = {self.max_hop}",
                f"alpha = {self.alpha!r}",
                f"bn_momentum = {self.bn_momentum!r}",
                f"bn_eps = {self.bn_eps!r}",
            ]
        )

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        """Parse the output of `to_text`."""
        values = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
        try:
            return cls(
                in_channels = int(values["in_channels"]),
                init_channels = int(values["init_channels"]),
                blocks = tuple(
                    tuple(int(part) for part in item.split("/")) for item in values["blocks"].split(",")
                ),
                temporal_kernel = int(values["temporal_kernel"]),
                dropout = float(values["dropout"]),
                num_classes = int(values["num_classes"]),
                structural = values["structural"] == "true",
                max_hop = int(values["max_hop"]),
                alpha = float(values["alpha"]),
                bn_momentum = float(values["bn_momentum"]),
                bn_eps = float(values["bn_eps"]),
            )
        except (KeyError, ValueError) as e:
            raise ConfigError(f"Model config text is malformed: {e}.") from None


@dataclass
class Schedule:
    """
    Represents a constant-then-cosine learning-rate schedule.

    ### Attributes

    - `base_lr` (`float`): Learning rate of the warm epochs.
    - `warm_epochs` (`int`): Epochs trained at `base_lr`.
    - `total_epochs` (`int`): Epoch at which the rate reaches zero.
    """

    base_lr: float = 0.1
    warm_epochs: int = 10
    total_epochs: int = 50

    def lr(self, epoch: int) -> float:
        """Return the rate for a 1-based epoch."""
        if epoch <= self.warm_epochs or self.total_epochs <= self.warm_epochs:
            return self.base_lr
        progress = min(epoch - self.warm_epochs, self.total_epochs - self.warm_epochs)
        span = self.total_epochs - self.warm_epochs
        return 0.5 * self.base_lr * (1.0 + math.cos(math.pi * progress / span))


@dataclass
class OptimState:
    """
    Represents the state of the SGD optimizer.

    ### Attributes

    - `velocity` (`dict`): Momentum buffer per parameter name.
    - `momentum` (`float`): Momentum factor.
    - `weight_decay` (`float`): L2 penalty added to every gradient.
    - `nesterov` (`bool`): Use the Nesterov form of the update.
    """

    velocity: Dict[str, np.ndarray] = field(default_factory = dict)
    momentum: float = 0.9
    weight_decay: float = 1e-4
    nesterov: bool = True


@dataclass
class TrainConfig:
    """
    Describes a training run.

    ### Attributes

    - `epochs` (`int`): Number of epochs.
    - `batch_size` (`int`): Samples per batch.
    - `schedule` (`Schedule`): Learning-rate schedule.
    - `momentum` (`float`): SGD momentum.
    - `weight_decay` (`float`): SGD weight decay.
    - `nesterov` (`bool`): Use Nesterov momentum.
    - `branches` (`tuple`): Branches to train, one model each.
    - `fusion_weights` (`tuple`): Weight of each branch's logits when fusing.
    - `progress` (`bool`): Show `tqdm` progress bars.
    """

    epochs: int = 50
    batch_size: int = 16
    schedule: Schedule = field(default_factory = Schedule)
    momentum: float = 0.9
    weight_decay: float = 1e-4
    nesterov: bool = True
    branches: Tuple[Branch, ...] = (Branch.JOINT, Branch.VELOCITY, Branch.BONE)
    fusion_weights: Tuple[float, ...] = (1.0, 1.0, 1.0)
    progress: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive.")


@dataclass
class EpochRecord:
    """
    Represents one line of the metrics stream.

    ### Attributes

    - `epoch` (`int`): 1-based epoch.
    - `branch` (`str`): Branch name, or `"fused"`.
    - `split` (`str`): `"train"` or `"eval"`.
    - `loss` (`float`): Mean loss, `None` for fused records.
    - `accuracy` (`float`): Accuracy in `[0, 1]`.
    - `lr` (`float`): Learning rate of the epoch.
    """

    epoch: int
    branch: str
    split: str
    loss: Optional[float]
    accuracy: float
    lr: float


@dataclass
class RunMetrics:
    """
    Represents everything measured during a training run.

    ### Attributes

    - `records` (`list`): `EpochRecord`s in emission order.
    - `wall_time` (`float`): Seconds spent training.
    """

    records: List[EpochRecord] = field(default_factory = list)
    wall_time: float = 0.0

    def series(self, branch: str, split: str, key: str = "loss") -> List[float]:
        return [getattr(r, key) for r in self.records if r.branch == branch and r.split == split]


@dataclass
class ComplexityReport:
    """
    Represents analytic parameter and multiply-add counts.

    ### Attributes

    - `params_spatial` (`int`): Parameters of the Sp-GCN variant.
    - `params_structural` (`int`): Parameters of the SpSt-GCN variant.
    - `flops_spatial` (`int`): Forward multiply-adds per sample of Sp-GCN.
    - `flops_structural` (`int`): Forward multiply-adds per sample of SpSt-GCN.
    - `structural_weights` (`int`): Sum of `C_in * C_out` over all SpSt-GCN layers.
    """

    params_spatial: int
    params_structural: int
    flops_spatial: int
    flops_structural: int
    structural_weights: int

    @property
    def params_overhead(self) -> float:
        return self.params_structural / self.params_spatial - 1.0

    @property
    def flops_overhead(self) -> float:
        return self.flops_structural / self.flops_spatial - 1.0


@dataclass
class GradCheckReport:
    """
    Represents the outcome of a finite-difference gradient check.

    ### Attributes

    - `name` (`str`): What was checked.
    - `errors` (`dict`): Maximum relative error per checked tensor.
    - `tolerance` (`float`): Largest acceptable error.
    """

    name: str
    errors: Dict[str, float] = field(default_factory = dict)
    tolerance: float = 1e-6

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default = 0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def __str__(self):
        return "Success" if self.passed else "Failure"


@dataclass
class BranchDataset:
    """
    Represents stacked branch inputs ready for training or evaluation.

    ### Attributes

    - `inputs` (`dict`): `(N, 6, T, V, M)` array per `Branch`.
    - `labels` (`np.ndarray`): `(N,)` class indices.
    - `As` (`dict`): `(N, V, V)` structural matrices per `Branch`. Without per-branch matrices every
        branch shares the same array.
    - `ids` (`list`): Sample identifiers.
    """

    inputs: Dict[Branch, np.ndarray]
    labels: np.ndarray
    As: Dict[Branch, np.ndarray]
    ids: List[str] = field(default_factory = list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype = np.int64)
        for branch, data in self.inputs.items():
            if len(data) != len(self.labels) or len(self.As[branch]) != len(self.labels):
                raise ShapeMismatch(f"{branch.value} holds {len(data)} inputs for {len(self.labels)} labels.")

    def __len__(self):
        return len(self.labels)

    @property
    def branches(self) -> Tuple[Branch, ...]:
        return tuple(self.inputs)

    def subset(self, indices) -> "BranchDataset":
        indices = np.asarray(indices, dtype = np.int64)
        return BranchDataset(
            inputs = {branch: data[indices] for branch, data in self.inputs.items()},
            labels = self.labels[indices],
            As = {branch: As[indices] for branch, As in self.As.items()},
            ids = [self.ids[i] for i in indices] if self.ids else [],
        )


@dataclass
class EvalReport:
    """
    Represents the accuracies of a set of branch models on one dataset.

    ### Attributes

    - `branch_accuracy` (`dict`): Accuracy per branch name.
    - `fused_accuracy` (`float`): Accuracy of the weighted logit sum over every branch.
    - `grid` (`dict`): Accuracy of every non-empty branch subset, keyed like `"J+V"`.
    - `logits` (`dict`): `(N, num_classes)` logits per branch name.
    """

    branch_accuracy: Dict[str, float] = field(default_factory = dict)
    fused_accuracy: float = 0.0
    grid: Dict[str, float] = field(default_factory = dict)
    logits: Dict[str, np.ndarray] = field(default_factory = dict)
