"""Conditional score-based diffusion sampling with run-time condition mixing."""

__version__ = "0.1.0"

from .conditions import (
    AnalyticScoreModel,
    ConditionEmbedding,
    GaussianMixture,
    analytic_log_density,
    analytic_marginal,
    analytic_score,
    default_layout,
    embed_average,
    one_hot_embeddings,
)
from .config import ExperimentConfig, load_config
from .exceptions import (
    ConfigError,
    DomainError,
    MixdiffError,
    SamplerDivergenceError,
    ShapeError,
    SingularityError,
    TrainingError,
    ValidationError,
)
from .network import MlpScoreNetwork
from .probe import BayesProbe, intensity_confusion, moment_check, posterior, probability_curve
from .sampler import (
    MixSpec,
    Phase,
    SamplerConfig,
    combined_noise,
    intensity_sample,
    phase_plan,
    reverse_step,
    sample,
    sample_mixed,
)
from .schedule import NoiseSchedule
from .training import (
    FeatureExtractor,
    TrainConfig,
    diffusion_loss,
    gram_matrix,
    prior_loss,
    style_loss,
    total_loss,
    train,
)
