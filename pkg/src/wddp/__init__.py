"""Weighted distributed differentially private ERM: noise calibration, simulation, sweeps."""

__version__ = "0.1.0"

from .privacy import (Calibration, CalibrationError, MechanismParams, MomentBound, PrivacyBudget,
                      calibrate_sigma, composed_log_moment, delta_for_epsilon, per_step_log_moment,
                      sample_gaussian_noise)
from .losses import (LabeledDataset, LogisticLoss, LossMetadata, PLScalarLoss, QuadraticLoss,
                     RegularizedLogisticLoss, logistic_gradient, logistic_loss, pl_test_function,
                     pl_verify, regularized_logistic)
from .data import (DatasetSpec, Partition, SyntheticSpec, load_csv, make_two_gaussians,
                   partition_random, partition_two_group, train_test_split)
from .federation import (GlobalModel, TrainingConfig, aggregate, client_noisy_step,
                         train_centralized_dp, train_centralized_nonprivate, train_distributed)
from .experiments import (SweepResult, SweepSpec, accuracy, emit_report, optimal_gap, run_sweep,
                          theoretical_bound_report)
