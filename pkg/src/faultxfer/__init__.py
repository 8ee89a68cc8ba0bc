"""Fault detection for building telemetry via kernelized transition matrices.

A kernel regression maps polynomial features of the current state and inputs
to the next state.  Faults are detected with a log-likelihood ratio between
the fitted matrix and a matrix-normal fault prior, optionally refined by a
logistic layer, and models move between buildings by weighted least squares.
"""
from .bayes import (ClassifierFeatures, LogisticModel, LogLikRatio, classify_sequence,
                    classify_single, classify_windows, extract_features, feature_matrix,
                    loglik_fault, loglik_fault_marginal, loglik_normal, predict_logistic,
                    rank_one_inverse, rank_one_logdet, train_logistic)
from .data import (NormalizationParams, RawTable, Scenario, ScenarioSpec, add_time_features,
                   build_dataset, denormalize, generate_scenario, load_csv, load_matrix,
                   normalize, save_matrix, split_chronological, write_csv)
from .errors import NumericalFailureError, ParseError, RejectedInputError, SingularityError
from .estimation import (FitConfig, WlsWeights, cross_validate_model, fit_ls, fit_wls, mse,
                         transfer)
from .experiments import (ExperimentResult, precision_recall_f1, run_fault_study, run_mc_f1,
                          run_transfer_curve)
from .kernel import (Dataset, KernelConfig, SamplePair, TransitionMatrix, featurize,
                     featurize_window, perturb_matrix, rollout, simulate)
from .mlp import MlpModel, init_mlp, mlp_fit, mlp_loss, mlp_predict

__version__ = "0.1.0"
