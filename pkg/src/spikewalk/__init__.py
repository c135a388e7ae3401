"""Random-walk solver for the 1-D steady-state heat problem.

Two execution paths share one estimator: `mcwalk` runs the walks directly as
a vectorised Markov chain, `snn` compiles them onto a simulated spiking
network of counter/buffer/gate sub-circuits.  `netgen` serialises networks,
`bench` measures accuracy and load, `cli` fronts everything.
"""

from spikewalk.problem import (
    Mesh,
    ProblemSpec,
    TimestepError,
    TransitionProbabilities,
    analytic_solution,
    expected_stopping_time,
    mesh,
    transition_probabilities,
    validate_timestep,
)

__version__ = "0.1.0"

__all__ = [
    "Mesh",
    "ProblemSpec",
    "TimestepError",
    "TransitionProbabilities",
    "analytic_solution",
    "expected_stopping_time",
    "mesh",
    "transition_probabilities",
    "validate_timestep",
    "__version__",
]
