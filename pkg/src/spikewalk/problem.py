"""Problem definition for the 1-D steady-state rod heating problem.

The continuous problem is u''(x) = F * (l - x) on [0, l] with u(0) = 0 and
u'(0) = 0: a rod clamped cold at the left end, insulated at the left boundary,
with a linearly decaying heat drain toward the free right end.  Its closed
form is u(x) = F*l*x^2/2 - F*x^3/6.

The stochastic solver discretises [0, l] into N = l/dx cells and runs walkers
on the cell midpoints.  Per timestep dt a walker's Gaussian displacement
(variance 2*dt) either clears half a cell width or it does not, which reduces
the dynamics to a three-outcome hop: left, right, or stay.  The single-hop
probabilities and their validity window live here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Default ceiling on the probability mass that would jump more than one cell
# in a single timestep.  Timesteps whose 3-cell tail mass exceeds this are
# rejected: the chain would no longer be a nearest-neighbour walk.
DEFAULT_TAIL_THRESHOLD = 0.05

# Relative slack when checking that dx divides l.
_GRID_RTOL = 1e-9


class TimestepError(ValueError):
    """Raised when dt fails the single-hop validity check for a given dx."""


def _phi(z: float) -> float:
    """Standard normal CDF via the complementary error function."""
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


@dataclass(frozen=True)
class TransitionProbabilities:
    """Single-timestep hop probabilities for one mesh cell.

    p_go is the probability of moving one cell left (and, by symmetry, one
    cell right); p_stay = 1 - 2*p_go is the remainder.  tail_mass is the
    probability that the underlying Gaussian displacement would overshoot
    more than one cell; it is diagnostic only and is folded into the lateral
    moves rather than being a separate outcome.
    """

    p_stay: float
    p_go: float
    tail_mass: float

    def __post_init__(self) -> None:
        if not 0.0 < self.p_go < 0.5:
            raise ValueError(f"p_go must lie in (0, 1/2), got {self.p_go}")
        if abs(self.p_stay + 2.0 * self.p_go - 1.0) > 1e-12:
            raise ValueError(
                f"probabilities must partition unity: p_stay={self.p_stay} p_go={self.p_go}"
            )
        if not 0.0 <= self.tail_mass <= 2.0 * self.p_go:
            raise ValueError(f"tail_mass {self.tail_mass} outside [0, 2*p_go]")


def transition_probabilities(dx: float, dt: float) -> TransitionProbabilities:
    """Hop probabilities for cell width dx and timestep dt.

    A displacement xi ~ N(0, 2*dt) moves the walker one cell when it exceeds
    dx/2 in magnitude, so p_go = Phi(-dx / (2*sqrt(2*dt))).  tail_mass is the
    two-sided mass beyond 3*dx/2 (a would-be two-cell jump).
    """
    if dx <= 0.0 or dt <= 0.0:
        raise ValueError("dx and dt must be positive")
    scale = 2.0 * math.sqrt(2.0 * dt)
    p_go = _phi(-dx / scale)
    tail = 2.0 * _phi(-3.0 * dx / scale)
    return TransitionProbabilities(p_stay=1.0 - 2.0 * p_go, p_go=p_go, tail_mass=tail)


def validate_timestep(
    dx: float, dt: float, c: float = DEFAULT_TAIL_THRESHOLD
) -> TransitionProbabilities:
    """Check that (dx, dt) keeps the walk nearest-neighbour.

    Passes iff the two-sided tail mass beyond 3*dx/2 is strictly below c.
    Returns the transition probabilities on success so callers do not have to
    recompute them; raises TimestepError otherwise.
    """
    probs = transition_probabilities(dx, dt)
    if not probs.tail_mass < c:
        raise TimestepError(
            f"dt={dt} is too coarse for dx={dx}: multi-cell jump mass "
            f"{probs.tail_mass:.4g} >= threshold {c}"
        )
    return probs


@dataclass(frozen=True)
class ProblemSpec:
    """Validated description of one solver run.

    length_l: rod length (> 0).
    forcing_f: drain coefficient F (> 0).
    dx: cell width; l/dx must be a whole number of cells N >= 1.
    dt: walker timestep; must pass validate_timestep at threshold_c.
    threshold_c: tail-mass ceiling used for the dt validity check.
    """

    length_l: float
    forcing_f: float
    dx: float
    dt: float
    threshold_c: float = DEFAULT_TAIL_THRESHOLD

    def __post_init__(self) -> None:
        if self.length_l <= 0.0:
            raise ValueError(f"length_l must be positive, got {self.length_l}")
        if self.forcing_f <= 0.0:
            raise ValueError(f"forcing_f must be positive, got {self.forcing_f}")
        if self.dx <= 0.0 or self.dx > self.length_l:
            raise ValueError(f"dx must lie in (0, length_l], got {self.dx}")
        n = self.length_l / self.dx
        if abs(n - round(n)) > _GRID_RTOL * max(n, 1.0) or round(n) < 1:
            raise ValueError(
                f"length_l/dx must be a whole number of cells >= 1, got {n}"
            )
        validate_timestep(self.dx, self.dt, self.threshold_c)

    @property
    def n_nodes(self) -> int:
        """Number of mesh cells N (exact; dx must divide length_l)."""
        return int(round(self.length_l / self.dx))

    def probabilities(self) -> TransitionProbabilities:
        return transition_probabilities(self.dx, self.dt)

    def to_dict(self) -> dict:
        return {
            "length_l": self.length_l,
            "forcing_f": self.forcing_f,
            "dx": self.dx,
            "dt": self.dt,
            "threshold_c": self.threshold_c,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemSpec":
        return cls(
            length_l=float(d["length_l"]),
            forcing_f=float(d["forcing_f"]),
            dx=float(d["dx"]),
            dt=float(d["dt"]),
            threshold_c=float(d.get("threshold_c", DEFAULT_TAIL_THRESHOLD)),
        )


@dataclass(frozen=True)
class Mesh:
    """Cell midpoints plus the index of the virtual absorbing state.

    midpoints[j] = (j + 1/2) * dx for j in 0..N-1.  A walker stepping right
    off the last cell is absorbed; that terminal state gets index N so arrays
    indexed by position can reserve one extra slot for it.
    """

    midpoints: np.ndarray
    absorbing_index: int

    @property
    def n_nodes(self) -> int:
        return self.absorbing_index


def mesh(spec: ProblemSpec) -> Mesh:
    n = spec.n_nodes
    mids = (np.arange(n, dtype=np.float64) + 0.5) * spec.dx
    return Mesh(midpoints=mids, absorbing_index=n)


def analytic_solution(x, spec: ProblemSpec):
    """Closed-form temperature u(x) = F*l*x^2/2 - F*x^3/6 on [0, l].

    Accepts a scalar or an array; raises ValueError if any point lies outside
    the rod.
    """
    arr = np.asarray(x, dtype=np.float64)
    if np.any(arr < 0.0) or np.any(arr > spec.length_l):
        raise ValueError(f"x={x} outside the rod [0, {spec.length_l}]")
    f, l = spec.forcing_f, spec.length_l
    out = f * l * arr**2 / 2.0 - f * arr**3 / 6.0
    return float(out) if np.isscalar(x) else out


def expected_stopping_time(l: float, y: float) -> float:
    """Mean time for a diffusion started at y to exit at the free end.

    For reflection at 0 and absorption at l the mean first-passage time is
    (l^2 - y^2) / 2.  Dividing by dt gives the expected number of walk steps.
    """
    if not 0.0 <= y <= l:
        raise ValueError(f"start y={y} outside [0, {l}]")
    return (l * l - y * y) / 2.0
