"""Multi-state step-selection analysis toolkit.

Simulates multi-state biased correlated random walks, samples matched
control locations, and fits multi-state step-selection models by EM with
hidden Markov states.
"""

from .core import (ChoiceSet, FitResult, HmmParams, LandscapeGrid, Point,
                   StateParams, Trajectory, derive_steps)
from .circular import (Consensus, bessel_i0, consensus_vector, log_bessel_i0,
                       vonmises_logpdf, vonmises_sample, wrap_angle)
from .distance import (GammaParams, gamma_logpdf, gamma_quantile, gamma_sample,
                       gamma_to_natural, natural_to_gamma)
from .bcrw import (BcrwScenario, bcrw_step_loglik, example_two_state_scenario,
                   simulate_state_chain, simulate_trajectory)
from .controls import (CovariateFormula, ParametricScheme, UniformScheme,
                       build_choice_set, build_choice_sets,
                       correct_parametric_bias, movement_formula,
                       sample_controls)
from .clogit import ClogitProblem, clogit_fit, clogit_logprob, clogit_objective
from .hmm import (EmConfig, decode_states, em_fit, emissions, filter_smooth,
                  fit_bcrw, observed_loglik, standard_errors, update_transition)
from .study import StudyConfig, StudyReport, equivalence_report, run_study

__version__ = "0.1.0"
