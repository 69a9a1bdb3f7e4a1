"""Automatic augmentation policy search for time-series forecasting."""

from .asha import RungTable, Trial, TrialStatus, budget_bound, budget_spent, make_schedule
from .augment import (
    KINDS,
    OpSpec,
    PolicyDistribution,
    SubPolicy,
    TransformKind,
    apply_op,
    apply_subpolicy,
    ops_histogram,
    policy_augmenter,
)
from .decompose import Decomposition, StlConfig, infer_period, stl_decompose
from .forecast import Checkpoint, ForecasterSpec, fine_tune, train_full
from .search import TsaaConfig, TsaaResult, prepare_search_data, run_tsaa, select_policy
from .series import SplitSpec, TimeSeries, make_windows, mae, mse, read_csv, relative_improvement
from .synth import SynthSpec, compose_with_rw, compose_wo_rw, gen_random_walk, gen_seasonal, gen_trend_shift
from .tpe import ObservationHistory, SearchSpace, suggest

__version__ = "0.1.0"
