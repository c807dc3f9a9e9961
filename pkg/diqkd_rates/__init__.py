from .version import __version__
from .correlations import Behavior, Scenario, DEFAULT_SCENARIO
from .spdc_model import SpdcParams, behavior_from_model, load_preset
from .preprocess import PreprocessParams
from .estimation import project_to_quantum
from .sdp.bff_entropy import entropy_bound, BellFunctional
from .keyrate import KeyRateModel, optimize_params, threshold_sweep, analyze_fibers
