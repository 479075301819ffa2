"""Beta-weighted variational continual learning for multi-head Bayesian
neural network classifiers, with Monte Carlo uncertainty and the statistical
tests used to relate uncertainty to classification errors."""

from .bnn import (
    HyperParams,
    MeanFieldGaussian,
    NetworkArchitecture,
    VariationalPosterior,
    beta_elbo_loss,
    forward_local_reparam,
    init_prior,
    init_variational,
    kl_divergence,
    load_posterior,
    save_posterior,
    train_task,
)
from .continual import GridSpec, RunRecord, grid_search, run_vcl, train_reference
from .data import (
    SplitDataset,
    SyntheticTaskSpec,
    TaskDataset,
    TaskSequence,
    gen_synthetic_task,
    load_dataset,
    make_sequence,
    split_dataset,
)
from .estimator import VCLClassifier
from .inference import (
    PredictiveDistribution,
    classify,
    mutual_information,
    predictive_entropy,
    predictive_posterior,
    uncertainty_report,
)
from .metrics import AccuracyMatrix, aggregate_forget, average_accuracy, combined_metric, forget, intransigence
from .stats import kruskal_wallis, ks_normality, uncertainty_separation

__version__ = "0.1.0"
