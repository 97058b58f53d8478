"""SLA-aware multivariate downlink traffic forecasting for cellular RANs."""

from .calibrate import (
    CalibrationResult,
    calibrate_weight,
    constant_predictor_oracle,
    line_search_weight,
)
from .dataset import (
    CellDataset,
    CellId,
    FoldPlan,
    Normalizer,
    Sample,
    SplitSpec,
    TimeGrid,
    WindowSamples,
    fit_normalizer,
    make_folds,
    split_dataset,
    windowize,
)
from .evaluate import (
    build_report,
    overprovisioning_volume,
    sla_violation_rate,
    test_loss,
)
from .features import (
    FeatureRecipe,
    PeakProfile,
    build_recipe,
    detect_peak_hours,
    handover_features,
    peak_days_vector,
    peak_hours_vector,
    pearson,
    select_ran_features,
)
from .handover import HandoverMatrix, gu14_reference_matrix
from .loss import LossConfig, wmae, wmae_grad
from .lstm import LstmSpec, TrainConfig, check_gradients, forward, grid_search, train
from .model import ForecastModel
from .multistep import HorizonPlan, predict_multistep, predict_one, rolling_forecasts
from .synth import ScenarioConfig, derive_counter_features, generate_region

__version__ = "0.1.0"
