"""Monte Carlo laboratory for BSDEs whose control is constrained in mean.

Typical use::

    from zbsde import make_grid, simulate_brownian, WienerIntegral, ZeroDriver
    from zbsde import LinearLower, run_pipeline

    paths = simulate_brownian(make_grid(1.0, 100), 100_000, seed=7)
    res = run_pipeline(WienerIntegral(lambda t: t - 1.0), ZeroDriver(), LinearLower(0.0), paths)
    res.solution.Y0, res.report.overall
"""
__version__ = "0.1.0"

from ._backend import available as available_backends, backend_name, use_backend
from .bsde import BsdeSolution, solve_closed_form, solve_penalized, solve_regression
from .compensator import (CompensatorSpec, alpha_case1, alpha_case2, bilateral_alpha_search,
                          build_K, malliavin_K_check)
from .config import RunConfig, load_config, parse_config
from .constraints import Bilateral, General, LinearLower, LinearUpper
from .drivers import CustomDriver, ExpInverseDriver, LinearDriver, ZeroDriver
from .errors import (BilateralInfeasibleError, ConfigParseError, DegenerateFitError, DomainError,
                     InfeasibleError, InvalidConfigError, MissingDerivativeError,
                     NoClosedFormError, NonConvergenceError, OrderingError,
                     RegressionSingularError, RootNotBracketedError, ShapeError, ZBsdeError)
from .experiments import (CaseBParams, ConcaveCheckParams, HedgingScenario, as_constraint_blowup,
                          case_b_bound_t0, concave_feasibility, hedging_demo,
                          lemma1_bound_experiment, penalization_sweep, run_pipeline)
from .paths import (EstimateCI, PathEnsemble, TimeGrid, coarsen, ito_integral, make_grid,
                    simulate_brownian, stochastic_exponential)
from .payoffs import Constant, Cylinder, GeometricExponential, WienerIntegral
from .regression import RegressionBasis
from .verify import (deterministic_K_infeasibility, minimality_report,
                     sufficient_condition_check, verify_constraint)
