"""Compare ranking policies by expected click-through rate.

A/B testing, team-draft / probabilistic / optimized interleaving, IPS
counterfactual estimation, EM click-model fitting, logging-policy
optimization, and exact enumeration oracles for small instances.
"""

from .core import (ClickModel, InteractionLog, InteractionRecord, Query, QueryDistribution,
                   delta, expected_ctr_policy, expected_ctr_ranking)
from .errors import (ClickLabError, DegenerateTrainingError, EnumerationCapError,
                     InfeasiblePlanError, InvalidInputError, ParseError, SupportViolationError)
from .policies import (DeterministicPolicy, MixturePolicy, ScoreNetwork, ScoreNetworkPolicy,
                       UniformPolicy)

__version__ = "0.1.0"

__all__ = [
    "ClickModel", "InteractionLog", "InteractionRecord", "Query", "QueryDistribution",
    "delta", "expected_ctr_policy", "expected_ctr_ranking",
    "ClickLabError", "DegenerateTrainingError", "EnumerationCapError", "InfeasiblePlanError",
    "InvalidInputError", "ParseError", "SupportViolationError",
    "DeterministicPolicy", "MixturePolicy", "ScoreNetwork", "ScoreNetworkPolicy", "UniformPolicy",
]
