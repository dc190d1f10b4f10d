"""Mass-weighted covering rates on finite alphabets.

Computes R(D; P, M), the smallest exponent of codebook mass needed to cover
most of a product source at distortion D, along with its Shannon,
concentration and Stein specializations, and checks the finite-n bounds by
exact enumeration and seeded Monte Carlo.
"""

__version__ = "0.1.0"

from .probcore import (
    Alphabet,
    Coupling,
    DistortionMatrix,
    EmpiricalMeasure,
    ExtendedReal,
    MassVector,
    ProbabilityVector,
    empirical_measure,
    entropy,
    mutual_information,
    normalize_distortion,
    relative_entropy,
    validate_source,
)
from .ratesolver import (
    RatePoint,
    brute_force_rate,
    concentration_exponent,
    rate_curve,
    rmin_dmax,
    shannon_rdf,
    solve_lagrangian,
    solve_rate,
    stein_exponent,
)
from .covering import (
    Codebook,
    ConditioningRule,
    achievability_trace,
    blowup_inequality_check,
    coverage_exact,
    coverage_mc,
    nearest_word,
    random_converse_trials,
    sample_codebook,
    stein_experiment,
    verify_converse,
)
from .blockrate import MarkovSource, block_marginal, block_rate, subadditivity_check
from .modelfile import Model, emit_model, load_model, parse_model
