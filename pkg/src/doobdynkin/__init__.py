"""Computable Doob-Dynkin factorization and optimal learning under squared loss.

Submodules
----------
measure        finite spaces, random maps, pushforwards, partitions
factorization  deciding and building phi with X = phi(Y)
condexp        exact and projected conditional expectation
risk           Bayes / posterior / frequentist risks and their identities
fiducial       flat-prior location model and the infinite-Bayes-risk example
kalman         one-dimensional Kalman-Bucy filter
cli            the ``doobdynkin`` command
"""

from .extreal import INF
from .measure import (FiniteSpace, Partition, PushforwardLaw, RandomMap, SigmaFiniteWitness,
                      initial_sigma_field, is_sigma_finite, pushforward, refine)
from .factorization import (FactorMap, NotMeasurable, SeparationReport, check_t0_separation,
                            construct_factor, extend_factor, factor_via_simple_limit,
                            is_measurable_wrt)
from .condexp import (CondExpTable, DegenerateBasis, FeatureBasis, NonSigmaFinite,
                      ProjectionFit, condexp_discrete, evaluate_fit, project_l2)
from .risk import (FiniteModel, ImproperPriorNeedsTruncation, RiskReport, UndefinedFiber,
                   bayes_risk, decompose, frequentist_risk, integrate_frequentist,
                   optimal_action, posterior_risk)

__version__ = "0.1.0"
