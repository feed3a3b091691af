"""Joint Bayesian estimation of daily infections and effective reproduction
numbers from daily case counts, via a two-block MCMC sampler on a
self-exciting Poisson renewal model with detection delays."""

__version__ = "0.1.0"

from .distributions import (
    DelayKernel,
    InfectivityProfile,
    TimeVaryingDelay,
    WeekdayWeights,
    convolve_gamma_delay,
    discretize_gamma,
    round_to_sum,
    weekday_multiplicative_delay,
    weekday_shift_delay,
)
from .errors import (
    ConfigError,
    DataError,
    DimensionError,
    DivergenceError,
    NumericalError,
    ParameterError,
    RenewalError,
    StateError,
)
from .model import (
    EpidemicPath,
    EpidemicState,
    growth_rate,
    predictive_step,
    renewal_intensity,
    renewal_load,
    simulate_infections,
    simulate_path,
    variance_growth_check,
)
from .deconvolution import (
    DeconvolutionConfig,
    DeconvolutionResult,
    em_deconvolve,
    em_step,
    expected_detections,
)
from .preprocess import decompose, loess_smooth, smooth_detections, weekday_effect_estimates
from .mcmc import (
    Hyperparams,
    PosteriorSamples,
    RenewalSampler,
    make_lambda0,
    posterior_predict,
    posterior_quantiles,
    run_mcmc,
)
from .sequential import StitchedHistory, carry_prior, rolling_fit, stitch
from .evaluation import (
    BaselineResult,
    ExperimentConfig,
    MetricTable,
    baseline_two_step,
    default_truth_path,
    interval_score,
    rmse,
    run_experiment,
)
