"""flowdesign: adaptive experimental design with normalizing flows for
rare-event failure probability estimation with expensive simulators."""

from .autodiff import NumericalError, Var, adam_step, backward
from .darcy import DarcyGrid, DarcyLimitState, darcy_solve, kl_basis, kl_expand
from .designer import (DesignBatch, adaptive_threshold, nfbd_ag_select,
                       nfbd_fg_select, nfbd_select, rho)
from .driver import (DnfConfig, RunTrace, initial_design, iteration_count,
                     lhs_baseline, load_trace, run_dnf, save_trace)
from .flows import (FlowTrainConfig, NormalizingFlow, load_flow, make_flow,
                    save_flow, train_flow)
from .mc import (Box, McEstimate, gaussian_sample, indicator, lhs_sample,
                 mc_failure_probability)
from .posterior import LimitStatePosterior, default_lambda
from .problems import (Problem, four_branch_g, iso_probability_g, make_problem)
from .surrogate import (Dataset, MlpParams, Standardizer, SurrogateModel,
                        TrainConfig, load_surrogate, mlp_forward, mse_loss,
                        save_surrogate, train_surrogate)

__version__ = "0.1.0"

__all__ = [
    "Box", "DarcyGrid", "DarcyLimitState", "Dataset", "DesignBatch",
    "DnfConfig", "FlowTrainConfig", "LimitStatePosterior", "McEstimate",
    "MlpParams", "NormalizingFlow", "NumericalError", "Problem", "RunTrace",
    "Standardizer", "SurrogateModel", "TrainConfig", "Var", "adam_step",
    "adaptive_threshold", "backward", "darcy_solve", "default_lambda",
    "four_branch_g", "gaussian_sample", "indicator", "initial_design",
    "iso_probability_g", "iteration_count", "kl_basis", "kl_expand",
    "lhs_baseline", "lhs_sample", "load_flow", "load_surrogate", "load_trace",
    "make_flow", "make_problem", "mc_failure_probability", "mlp_forward",
    "mse_loss", "nfbd_ag_select", "nfbd_fg_select", "nfbd_select", "rho",
    "run_dnf", "save_flow", "save_surrogate", "save_trace", "train_flow",
    "train_surrogate",
]
