"""Panel MIDAS nowcasting with the sparse-group LASSO, and aggregation of
unit-level nowcasts into an aggregate."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    NumericError,
    PanelNowcastError,
)
from .paneldata import (
    HORIZONS,
    Covariate,
    FrequencyRatio,
    NowcastClock,
    PanelDataset,
    aggregate_series,
    extract_window,
    load_panel_csv,
)
from .midas import DictionarySpec, MidasSpec, compress_window, lag_dictionary, shifted_legendre
from .sglasso import (
    GAMMA_GRID,
    GroupStructure,
    PenaltySpec,
    SgLassoFit,
    lambda_path,
    panel_cv,
    sg_lasso_fit,
    sg_prox,
)
from .models import (
    FitBundle,
    ModelSpec,
    NowcastSet,
    fit,
    fit_agg_on_agg,
    fit_agg_on_components,
    fit_hetar,
    fit_pooled,
    fit_ts,
    nowcast,
)
from .aggregation import (
    WeightVector,
    aggregate_nowcast,
    combine_forecasts,
    weights_w1,
    weights_w2,
    weights_w3,
    weights_w4,
)
from .simulate import SimulationConfig, run_monte_carlo, simulate_panel
from .evaluation import EvaluationWindow, rolling_evaluate, subset_units
