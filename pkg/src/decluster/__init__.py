"""Feature clustering engine: k-means and latent-space refinement pipelines."""

from .autoencoder import (
    AdamState,
    Gradients,
    MlpParams,
    adam_step,
    encode,
    init_adam,
    init_params,
    load_params,
    pretrain,
    recon_grad,
    recon_loss,
    reconstruct,
    save_params,
)
from .dec_core import (
    DecConfig,
    HistoryRow,
    SoftAssignment,
    TargetDistribution,
    dec_fit,
    kl_grads,
    kl_loss,
    soft_assign,
    subcluster,
    target_distribution,
)
from .errors import ClusterError, FormatError, InvalidInput, NumericFailure
from .kmeans import (
    ClusterState,
    ElbowResult,
    elbow_select,
    kmeans_fit,
    kmeanspp_init,
)
from .metrics import (
    ContingencyTable,
    MetricsReport,
    adjusted_rand,
    calinski_harabasz,
    cluster_sizes,
    silhouette,
    v_measure,
)
from .reduce import (
    PcaModel,
    gap,
    load_pca,
    pca_fit,
    pca_inverse_transform,
    pca_transform,
    save_pca,
    standardize,
)
from .synth import SynthSpec, generate, separation_ratio
from .tensor_io import (
    FeatureMatrix,
    LabelVector,
    read_csv,
    read_fmat,
    read_labels,
    write_csv,
    write_fmat,
    write_labels,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
