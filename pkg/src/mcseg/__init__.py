"""Multi-channel 3D volume segmentation.

Neighborhood features + supervised posterior estimation (k-NN or Parzen
window), refined by a convex total-variation labeling solved with a
first-order primal-dual method.  Includes a synthetic phantom generator
with a portable RNG, evaluation metrics, experiment sweeps, and a CLI.
"""

from .classifiers import (
    DEFAULT_H,
    DEFAULT_K,
    KnnModel,
    ParzenModel,
    TrainingSet,
    load_model,
    save_model,
    subsample_training,
)
from .errors import InputError, NumericalError
from .evaluation import (
    ConfusionMatrix,
    MetricsReport,
    ablate_contrasts,
    all_channel_subsets,
    confusion,
    global_error,
    report,
    sweep_lambda,
    sweep_w,
    tp_rate_nuclei,
)
from .features import (
    FEATURES_PER_CHANNEL,
    FeatureMatrix,
    StandardizationStats,
    apply_standardization,
    extract_features,
    fit_standardization,
    load_feature_matrix,
    load_stats,
    save_feature_matrix,
    save_stats,
)
from .phantom import (
    DEFAULT_DEFORM_AMPLITUDE,
    DEFAULT_EXTRA_NOISE,
    DEFAULT_NOISE_SIGMA,
    DEFAULT_SMOOTHNESS,
    PhantomSpec,
    default_confusable_spec,
    generate,
    load_spec,
    make_subject,
    save_spec,
)
from .pipeline import (
    DEFAULT_LAMBDA,
    TrainParams,
    classify,
    config_with_lambda,
    default_lambda,
    entropy,
    segment,
    train_model,
)
from .rng import PortableRng
from .solver import (
    DataTerm,
    SolveDiagnostics,
    SolverConfig,
    build_data_term,
    build_weighted_data_term,
    divergence,
    energy,
    gradient,
    project_dual,
    project_simplex,
    solve,
)
from .volume import (
    GridShape,
    LabelVolume,
    MultiChannelVolume,
    PosteriorField,
    SimplexField,
    argmax_labels,
    flat_to_grid,
    grid_to_flat,
    load_volume,
    one_hot,
    save_volume,
)

__version__ = "0.1.0"
