"""Weakly supervised point-cloud semantic segmentation from sparse clicks.

The pipeline: simulate one click per object instance, expand clicks over
geometrically homogeneous super-voxels, train a compact classifier and a
contrastive relation network on the resulting pseudo labels, propagate labels
over a dense super-voxel graph by mean-field inference, and iterate.
"""

from .annotate import ClickSet, PseudoLabels, expand_clicks, simulate_clicks
from .config import SynthScalars, TrainConfig, parse_config, with_ablation
from .errors import ClicksegError, FileFormatError, ValidationError
from .features import FeatureMatrix, extract_features
from .graph import (
    MarginalField,
    PairwiseParams,
    SuperVoxelGraph,
    build_graph,
    energy,
    map_labels,
    mean_field,
)
from .metrics import Metrics, miou
from .nets import (
    MemoryBank,
    MlpModel,
    combine_probs,
    init_memory_bank,
    init_mlp,
    mlp_forward,
    predict_unary,
    relation_probs,
    train_relation,
    train_unary,
)
from .scene import Scene, load_scene, save_scene
from .selftrain import (
    SceneBundle,
    SelfTrainResult,
    run,
    run_fully_supervised,
    run_iteration,
    update_pseudo_labels,
)
from .supervoxel import (
    PartitionParams,
    SuperVoxelPartition,
    load_partition,
    partition_region_growing,
    pool_distribution,
    pool_vectors,
    save_partition,
)
from .synth import SynthSpec, generate_corpus, generate_scene

__version__ = "0.1.0"
