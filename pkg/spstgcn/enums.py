from enum import Enum


class ChannelSemantics(Enum):
    """
    Enumerates what the channel axis of a `FeatureTensor` holds.

    ### Members
    - `RAW3D`: Raw x, y, z coordinates (3 channels).
    - `JOINT6`: Coordinates plus positions relative to the center joint (6 channels).
    - `VELOCITY6`: One-frame plus two-frame displacements (6 channels).
    - `BONE6`: Bone vectors plus direction-cosine angles (6 channels).
    - `HIDDEN`: Any intermediate network feature map.
    """

    RAW3D = "raw3d"
    JOINT6 = "joint6"
    VELOCITY6 = "velocity6"
    BONE6 = "bone6"
    HIDDEN = "hidden"

    @property
    def channels(self):
        """Number of channels this semantic requires, or `None` for `HIDDEN`."""
        return {"raw3d": 3, "joint6": 6, "velocity6": 6, "bone6": 6}.get(self.value)


class Branch(Enum):
    """
    Enumerates the three input branches.

    ### Members
    - `JOINT`: Joint features.
    - `VELOCITY`: Velocity features.
    - `BONE`: Bone features.
    """

    JOINT = "joint"
    VELOCITY = "velocity"
    BONE = "bone"


class SplitRule(Enum):
    """
    Enumerates how a manifest is split into training and evaluation sets.

    ### Members
    - `BY_SUBJECT`: Cross-subject split on `subject_id`.
    - `BY_CAMERA`: Cross-view split on `camera_id`.
    - `EXPLICIT`: Split on an explicit list of paths.
    """

    BY_SUBJECT = "by_subject"
    BY_CAMERA = "by_camera"
    EXPLICIT = "explicit"


class TensorRole(Enum):
    """
    Enumerates the roles a `DiffTensor` plays in a computation.

    ### Members
    - `INPUT`: Data fed to the computation.
    - `PARAMETER`: A learnable weight.
    - `INTERMEDIATE`: A value produced by an operation.
    """

    INPUT = "input"
    PARAMETER = "parameter"
    INTERMEDIATE = "intermediate"


class DistanceMeasure(Enum):
    """
    Enumerates the distances used between edge-node trajectories.

    ### Members
    - `FASTDTW`: Multilevel approximate dynamic time warping.
    - `DTW`: Exact dynamic time warping.
    - `EUCLIDEAN`: Lock-step mean point distance over aligned frames.
    - `COSINE`: One minus the cosine similarity of flattened trajectories.
    """

    FASTDTW = "fastdtw"
    DTW = "dtw"
    EUCLIDEAN = "euclidean"
    COSINE = "cosine"


class AdjacencySign(Enum):
    """
    Enumerates how the reciprocal distances enter the structural matrix.

    ### Members
    - `DIFFERENTIATE`: `As = I - D^-1`, pushing similar edge nodes apart.
    - `AGGREGATE`: `As = I + D^-1`, pulling similar edge nodes together.
    """

    DIFFERENTIATE = "differentiate"
    AGGREGATE = "aggregate"
