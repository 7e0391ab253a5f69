"""deepes: two-step deep expected-shortfall regression with tail-robust
Huber training, non-crossing multi-level estimation, and a reproducible
simulation harness.
"""

from .losses import LossSpec, check_loss, huber_loss, huber_score, squared_loss
from .nn import Dataset, FitConfig, Mlp, TrainReport, fit, forward, grad
from .estimators import (
    EsModel,
    build_surrogate,
    fit_dqr,
    fit_es,
    fit_two_step,
    fit_upper,
    predict_es,
)
from .noncrossing import (
    NcEsModel,
    NcStack,
    fit_nc_dqr,
    fit_nc_dres,
    gap_activation,
    nc_predict,
    per_level_taus,
    stack_eval,
)
from .tuning import TauRule, nu2_hat, tau_hat, tau_sweep
from .simgen import DgpSpec, ErrorDist, TrueFns, es_of_eta, generate, quantile_of_eta
from .evaluate import aggregate, huber_bias_check, mspe, vpi
from .serialize import load_model, save_model

__version__ = "0.1.0"
