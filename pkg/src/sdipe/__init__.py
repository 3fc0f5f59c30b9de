"""Stratified delta-imputed propensity estimation (SDIPE) of average
treatment effects when a confounder is missing under self-masking."""

__version__ = "0.1.0"

from .datamodel import ColumnRoles, Dataset, StratifiedView, load_csv, stratify, subset, write_csv
from .estimators import AteEstimate, PooledEstimate, WeightVector, ate_sw, baseline_mi_sw, propensity_scores, sdipe, stabilized_weights
from .impute import ImputationConfig, ImputedStack, fit_imputation_model, impute_multiply, impute_once
from .inference import McScenario, SimReport, balance_report, bootstrap_ci, run_monte_carlo, sensitivity_sweep
from .numstat import RngStream, expit, fit_logistic, fit_ols, logit
from .simgen import SimConfig, apply_self_masking, generate_complete, simulate_dataset
