"""Direct Monte Carlo execution of the mesh random walk.

A cohort of walkers starts on one mesh cell and hops left/right/stay per
timestep until absorbed past the right end.  The temperature estimate for
start cell i is assembled from the cumulative visit counts n_ij (visits of
walkers started at i to cell j, initial placement excluded):

    u_raw[i] = -(F * dt / M) * sum_j n_ij * (l - x_j)
    u[i]     = u_raw[i] - u_raw[0]        (first midpoint pinned to zero)

Randomness contract
-------------------
Streams are numpy PCG64 generators derived as

    default_rng(SeedSequence(entropy=seed, spawn_key=(run, start_node, block)))

with walkers split into fixed blocks of BLOCK_SIZE (the final block may be
short).  Block results merge by addition, so runs are reproducible bit for
bit no matter how blocks are scheduled across workers.

Within a block, draws are float32 uniforms consumed in a documented order:
while more than COHORT_SWITCH walkers survive, one draw per surviving walker
per step (step-major, walker order, absorbed walkers drop out at the step
they absorb); smaller cohorts consume walker-major chunks of K steps per
walker at once (K = clamp(CHUNK_TARGET // cohort, 16, steps left)), wasting
the tail of a row once that walker absorbs.  Both phases realise the same
per-step partition [left | right | stay] of the unit interval:

    u < p_go           -> left
    p_go <= u < 2*p_go -> right
    otherwise          -> stay

with position updated as |pos + delta|, whose absolute value implements the
reflecting wall (either lateral outcome at cell 0 lands on cell 1, total
mass 2*p_go) and with absorption on first contact with index N.  For N == 1
cell 0 is simultaneously reflecting and adjacent to absorption: any lateral
outcome absorbs.

The step-major phase applies the reflection each step and is replayable
draw for draw against step_walker.  The chunked phase instead takes the
absolute value of the partial sums, |pos + cumsum(delta)|: for increments
symmetric under sign flip this walk equals the per-step reflected walk in
law (identical transition kernel from every cell), though not pathwise for
the same draws.  Tests pin the chunked phase against a scalar replay of the
partial-sum rule and both phases against the absorbing-chain oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from spikewalk.problem import (
    Mesh,
    ProblemSpec,
    TransitionProbabilities,
    expected_stopping_time,
    mesh,
)

# Fixed walker block size for stream derivation (see module docstring).
BLOCK_SIZE = 10_000
# Cohort size at which the engine switches from step-major to chunked draws.
COHORT_SWITCH = 4096
# Target number of uniforms per chunk in the chunked phase.
CHUNK_TARGET = 1 << 18
# Dense-solve guard for the exact expected-visits oracle.
ORACLE_MAX_NODES = 512

MAX_STEPS_SAFETY_FACTOR = 10


class ContractViolation(RuntimeError):
    """An operation was called outside its documented preconditions."""


@dataclass(frozen=True)
class WalkerState:
    """Position of one walker: a cell index, or absorbed (terminal)."""

    position: int
    absorbed: bool = False


def default_max_steps(spec: ProblemSpec) -> int:
    """Step cap: 10x the slowest expected absorption time on the mesh."""
    return int(
        np.ceil(
            MAX_STEPS_SAFETY_FACTOR
            * expected_stopping_time(spec.length_l, 0.0)
            / spec.dt
        )
    )


def step_walker(
    state: WalkerState,
    n_nodes: int,
    probs: TransitionProbabilities,
    u: float | None = None,
    rng: np.random.Generator | None = None,
) -> WalkerState:
    """Advance one walker by one timestep using uniform draw u.

    Scalar reference implementation of the hop rule; the step-major cohort
    phase is tested against it draw for draw (the chunked phase uses the
    law-equivalent partial-sum form, see module docstring).  Pass either u
    in [0, 1) or an rng to draw from.  Stepping an absorbed walker violates
    the contract.
    """
    if state.absorbed:
        raise ContractViolation("cannot step an absorbed walker")
    if not 0 <= state.position < n_nodes:
        raise ContractViolation(f"position {state.position} outside 0..{n_nodes - 1}")
    if u is None:
        if rng is None:
            raise ValueError("provide a draw u or an rng")
        u = rng.random()
    p = probs.p_go
    j = state.position
    if u < p:
        nxt = j - 1  # left
    elif u < 2.0 * p:
        nxt = j + 1  # right
    else:
        return state  # stay
    nxt = abs(nxt)  # reflecting wall: leaving cell 0 leftward lands on cell 1
    if nxt >= n_nodes:
        return WalkerState(position=n_nodes, absorbed=True)
    return WalkerState(position=nxt)


@dataclass
class WalkerBatch:
    """Result of one cohort: a counts row plus absorption-time samples.

    counts_row[j] is the cumulative number of post-step occupancies of cell j
    (the initial placement is not counted).  absorption_steps holds the step
    index (1-based) at which each absorbed walker left, sorted ascending;
    walkers still alive at the cap are tallied in n_unabsorbed and appear in
    serialised forms as the max_steps sentinel value.
    """

    counts_row: np.ndarray
    absorption_steps: np.ndarray
    n_walkers: int
    n_unabsorbed: int
    max_steps_used: int

    def padded_absorption_steps(self) -> np.ndarray:
        """Absorption samples padded with the max_steps sentinel."""
        pad = np.full(self.n_unabsorbed, self.max_steps_used, dtype=np.int64)
        return np.concatenate([self.absorption_steps, pad])


def _simulate_block(
    n_nodes: int,
    p_go: float,
    start: int,
    n_walkers: int,
    max_steps: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Run one walker block; returns (counts_row, absorb_hist, n_unabsorbed).

    absorb_hist[t] counts walkers absorbed exactly at step t (1-based).
    """
    n = n_nodes
    t1 = np.float32(p_go)
    t2 = np.float32(2.0 * p_go)
    counts = np.zeros(n, dtype=np.int64)
    absorb_hist = np.zeros(max_steps + 1, dtype=np.int64)
    pos = np.full(n_walkers, start, dtype=np.int64)
    t = 0

    # Step-major phase: one draw per surviving walker per step.
    while pos.size > COHORT_SWITCH and t < max_steps:
        t += 1
        u = rng.random(pos.size, dtype=np.float32)
        m1 = u < t1
        m2 = u < t2
        delta = m2.astype(np.int64)
        delta -= m1
        delta -= m1
        np.add(pos, delta, out=pos)
        np.abs(pos, out=pos)
        bc = np.bincount(pos, minlength=n + 1)
        counts += bc[:n]
        if bc[n]:
            absorb_hist[t] = bc[n]
            pos = pos[pos < n]

    # Chunked phase: K steps per surviving walker at once, walker-major.
    while pos.size and t < max_steps:
        k = min(max(CHUNK_TARGET // pos.size, 16), max_steps - t)
        u = rng.random((pos.size, k), dtype=np.float32)
        delta = (u < t2).astype(np.int64)
        m1 = u < t1
        delta -= m1
        delta -= m1
        x = np.cumsum(delta, axis=1)
        x += pos[:, None]
        np.abs(x, out=x)
        hit = x >= n
        ever_hit = np.cumsum(hit, axis=1) > 0
        counts += np.bincount(x[~ever_hit], minlength=n)[:n]
        absorbed = ever_hit[:, -1]
        if absorbed.any():
            first = np.argmax(hit[absorbed], axis=1)
            np.add.at(absorb_hist, t + first + 1, 1)
            pos = x[~absorbed, -1]
        else:
            pos = x[:, -1]
        t += k

    return counts, absorb_hist, int(pos.size)


def _block_sizes(n_walkers: int) -> list[int]:
    full, rem = divmod(n_walkers, BLOCK_SIZE)
    return [BLOCK_SIZE] * full + ([rem] if rem else [])


def _block_rng(seed: int, run: int, start: int, block: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(run, start, block))
    )


def run_walkers(
    spec: ProblemSpec,
    start_index: int,
    n_walkers: int,
    seed: int,
    max_steps: int | None = None,
    probs: TransitionProbabilities | None = None,
    run_index: int = 0,
) -> WalkerBatch:
    """Walk n_walkers starting from one cell until absorption or the cap.

    run_index selects the stream family so repeated runs decorrelate while
    staying reproducible; solve() uses 0..runs-1.
    """
    n = spec.n_nodes
    if not 0 <= start_index < n:
        raise ContractViolation(f"start_index {start_index} outside 0..{n - 1}")
    if n_walkers <= 0:
        raise ValueError("n_walkers must be positive")
    if max_steps is None:
        max_steps = default_max_steps(spec)
    if probs is None:
        probs = spec.probabilities()

    counts = np.zeros(n, dtype=np.int64)
    hist = np.zeros(max_steps + 1, dtype=np.int64)
    unabsorbed = 0
    for block, size in enumerate(_block_sizes(n_walkers)):
        rng = _block_rng(seed, run_index, start_index, block)
        c, h, miss = _simulate_block(n, probs.p_go, start_index, size, max_steps, rng)
        counts += c
        hist += h
        unabsorbed += miss

    steps = np.repeat(np.arange(max_steps + 1, dtype=np.int64), hist)
    return WalkerBatch(
        counts_row=counts,
        absorption_steps=steps,
        n_walkers=n_walkers,
        n_unabsorbed=unabsorbed,
        max_steps_used=max_steps,
    )


@dataclass
class NodeCounts:
    """Cumulative visit counts n_ij for every start cell i.

    counts[i, j] sums, over all walkers started at cell i and all their
    steps, the post-step occupancies of cell j.  Initial placements are not
    counted.  walkers_per_start is the cohort size M shared by every row;
    max_steps_used is the step cap the walks ran under.
    """

    counts: np.ndarray
    walkers_per_start: int
    max_steps_used: int

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ValueError(f"counts must be square, got {self.counts.shape}")

    @property
    def n_nodes(self) -> int:
        return self.counts.shape[0]

    def to_json_dict(self) -> dict:
        return {
            "schema": "node-counts-v1",
            "walkers_per_start": int(self.walkers_per_start),
            "max_steps_used": int(self.max_steps_used),
            "counts": self.counts.tolist(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "NodeCounts":
        if d.get("schema") != "node-counts-v1":
            raise ValueError(f"unsupported counts schema: {d.get('schema')!r}")
        return cls(
            counts=np.asarray(d["counts"], dtype=np.int64),
            walkers_per_start=int(d["walkers_per_start"]),
            max_steps_used=int(d["max_steps_used"]),
        )


@dataclass
class MeshSolution:
    """Estimated temperatures at the mesh midpoints.

    u_raw is the direct per-start estimate (always negative); u subtracts the
    first cell's value so u[0] == 0 exactly, matching the left boundary pin.
    unabsorbed_fraction reports walkers that hit the step cap; their partial
    paths are included in the estimate and flagged here.
    """

    u_raw: np.ndarray
    u: np.ndarray
    unabsorbed_fraction: float

    @property
    def n_nodes(self) -> int:
        return self.u.shape[0]

    def to_json_dict(self) -> dict:
        return {
            "schema": "mesh-solution-v1",
            "u_raw": self.u_raw.tolist(),
            "u": self.u.tolist(),
            "unabsorbed_fraction": self.unabsorbed_fraction,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "MeshSolution":
        if d.get("schema") != "mesh-solution-v1":
            raise ValueError(f"unsupported solution schema: {d.get('schema')!r}")
        return cls(
            u_raw=np.asarray(d["u_raw"], dtype=np.float64),
            u=np.asarray(d["u"], dtype=np.float64),
            unabsorbed_fraction=float(d["unabsorbed_fraction"]),
        )


def counts_to_csv(counts: NodeCounts) -> str:
    """CSV form of a counts table: one row per start cell.

    Columns: start_index, then visits_0..visits_{N-1}.  Metadata rides in a
    leading comment line (see docs/output-formats.md).
    """
    n = counts.n_nodes
    lines = [
        f"# node-counts-v1 walkers_per_start={counts.walkers_per_start} "
        f"max_steps_used={counts.max_steps_used}",
        "start_index," + ",".join(f"visits_{j}" for j in range(n)),
    ]
    for i in range(n):
        lines.append(f"{i}," + ",".join(str(v) for v in counts.counts[i]))
    return "\n".join(lines) + "\n"


def solution_to_csv(solution: MeshSolution, spec: ProblemSpec) -> str:
    """CSV form of a solution: one row per start cell (x, u_raw, u)."""
    mids = mesh(spec).midpoints
    lines = [
        f"# mesh-solution-v1 unabsorbed_fraction={solution.unabsorbed_fraction!r}",
        "x,u_raw,u",
    ]
    for x, raw, u in zip(mids, solution.u_raw, solution.u):
        lines.append(f"{float(x)!r},{float(raw)!r},{float(u)!r}")
    return "\n".join(lines) + "\n"


def estimate_solution(
    counts: NodeCounts,
    spec: ProblemSpec,
    unabsorbed_fraction: float = 0.0,
) -> MeshSolution:
    """Turn a full counts table into midpoint temperatures.

    Requires one row per start cell (counts covers the whole mesh) and a
    positive cohort size.
    """
    n = spec.n_nodes
    if counts.n_nodes != n:
        raise ContractViolation(
            f"counts table is {counts.n_nodes}x{counts.n_nodes}, mesh has {n} cells"
        )
    if counts.walkers_per_start <= 0:
        raise ContractViolation("walkers_per_start must be positive")
    mids = mesh(spec).midpoints
    weights = spec.length_l - mids
    scale = -spec.forcing_f * spec.dt / counts.walkers_per_start
    u_raw = scale * (counts.counts @ weights)
    u = u_raw - u_raw[0]
    u[0] = 0.0  # exact by construction
    return MeshSolution(u_raw=u_raw, u=u, unabsorbed_fraction=unabsorbed_fraction)


def transition_matrix(
    n_nodes: int, probs: TransitionProbabilities
) -> np.ndarray:
    """Transient-to-transient transition matrix Q of the absorbing chain.

    Row j gives the single-step probabilities among mesh cells; the missing
    mass in the last row is the absorption probability.  Encodes exactly the
    step_walker rules, including the N == 1 composite cell.
    """
    p = probs.p_go
    q = np.zeros((n_nodes, n_nodes), dtype=np.float64)
    for j in range(n_nodes):
        q[j, j] = probs.p_stay
        left, right = j - 1, j + 1
        for nxt, mass in ((left, p), (right, p)):
            nxt = abs(nxt)
            if nxt < n_nodes:
                q[j, nxt] += mass
    return q


def exact_expected_counts(
    n_nodes: int, probs: TransitionProbabilities
) -> np.ndarray:
    """Expected visit counts E[n_ij] from the fundamental matrix.

    Solves (I - Q) V = I densely and subtracts the identity so the initial
    placement is excluded, matching the estimator's counting convention.
    Guarded to small meshes; the dense solve is an oracle, not a solver.
    """
    if n_nodes > ORACLE_MAX_NODES:
        raise ContractViolation(
            f"oracle limited to {ORACLE_MAX_NODES} cells, got {n_nodes}"
        )
    q = transition_matrix(n_nodes, probs)
    eye = np.eye(n_nodes)
    v = scipy.linalg.solve(eye - q, eye)
    return v - eye


def exact_visit_variance(
    n_nodes: int, probs: TransitionProbabilities
) -> np.ndarray:
    """Per-walker variance of the visit counts, Var[n_ij].

    Fundamental-matrix identity: with V the expected visits including the
    initial placement, Var = V (2 diag(V) - I) - V^2 elementwise.  Excluding
    the initial placement shifts counts by a constant, leaving the variance
    unchanged.
    """
    q = transition_matrix(n_nodes, probs)
    eye = np.eye(n_nodes)
    v = scipy.linalg.solve(eye - q, eye)
    return v @ (2.0 * np.diag(np.diag(v)) - eye) - v * v


def exact_expected_solution(spec: ProblemSpec) -> np.ndarray:
    """Expected estimator output under the exact chain (no sampling noise)."""
    ev = exact_expected_counts(spec.n_nodes, spec.probabilities())
    mids = mesh(spec).midpoints
    weights = spec.length_l - mids
    u_raw = -spec.forcing_f * spec.dt * (ev @ weights)
    u = u_raw - u_raw[0]
    u[0] = 0.0
    return u


@dataclass
class RunData:
    """One run's counts, decoded solution, and absorption bookkeeping."""

    counts: NodeCounts
    solution: MeshSolution
    absorption_steps: list[np.ndarray]
    unabsorbed: np.ndarray


@dataclass
class SolveResult:
    """Aggregate of `runs` independent solves plus their mean curve."""

    spec: ProblemSpec
    runs: list[RunData]
    mean_solution: MeshSolution
    seed: int

    @property
    def n_runs(self) -> int:
        return len(self.runs)

    def per_run_u(self) -> np.ndarray:
        return np.stack([r.solution.u for r in self.runs])

    def absorption_mean_steps(self) -> np.ndarray:
        """Mean absorption step per start cell, pooled over runs.

        Unabsorbed walkers are excluded from the mean (they are flagged in
        unabsorbed_fraction instead).
        """
        n = self.spec.n_nodes
        out = np.full(n, np.nan)
        for i in range(n):
            samples = np.concatenate([r.absorption_steps[i] for r in self.runs])
            if samples.size:
                out[i] = samples.mean()
        return out

    def absorption_max_steps(self) -> np.ndarray:
        n = self.spec.n_nodes
        out = np.zeros(n, dtype=np.int64)
        for i in range(n):
            sizes = [r.absorption_steps[i] for r in self.runs]
            out[i] = max((s.max() for s in sizes if s.size), default=0)
        return out

    def unabsorbed_fraction(self) -> float:
        total = sum(int(r.unabsorbed.sum()) for r in self.runs)
        per_run = self.runs[0].counts.walkers_per_start * self.spec.n_nodes
        return total / (per_run * len(self.runs))


def _solve_task(args: tuple) -> tuple:
    """Worker entry: one (run, start, block) cohort.  Must stay picklable."""
    seed, run, start, block, block_size, n_nodes, p_go, max_steps = args
    rng = _block_rng(seed, run, start, block)
    counts, hist, miss = _simulate_block(
        n_nodes, p_go, start, block_size, max_steps, rng
    )
    nz = np.flatnonzero(hist)
    samples = np.repeat(nz, hist[nz])  # compact: one entry per absorbed walker
    return run, start, counts, samples, miss


def solve(
    spec: ProblemSpec,
    walkers_per_node: int,
    runs: int,
    seed: int,
    max_steps: int | None = None,
    workers: int = 1,
    probs: TransitionProbabilities | None = None,
) -> SolveResult:
    """Full direct-walk solve: every start cell, `runs` repetitions.

    Deterministic for fixed (spec, walkers_per_node, runs, seed, max_steps)
    regardless of `workers`: streams are keyed by (run, start, block), and
    block results merge by addition.
    """
    n = spec.n_nodes
    if max_steps is None:
        max_steps = default_max_steps(spec)
    if probs is None:
        probs = spec.probabilities()
    sizes = _block_sizes(walkers_per_node)
    tasks = [
        (seed, r, i, b, size, n, probs.p_go, max_steps)
        for r in range(runs)
        for i in range(n)
        for b, size in enumerate(sizes)
    ]

    counts = np.zeros((runs, n, n), dtype=np.int64)
    samples: list[list[list[np.ndarray]]] = [
        [[] for _ in range(n)] for _ in range(runs)
    ]
    unabsorbed = np.zeros((runs, n), dtype=np.int64)

    def _merge(result: tuple) -> None:
        r, i, c, s, miss = result
        counts[r, i] += c
        samples[r][i].append(s)
        unabsorbed[r, i] += miss

    if workers > 1:
        import concurrent.futures

        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            for result in pool.map(_solve_task, tasks, chunksize=4):
                _merge(result)
    else:
        for task in tasks:
            _merge(_solve_task(task))

    run_data = []
    for r in range(runs):
        nc = NodeCounts(
            counts=counts[r],
            walkers_per_start=walkers_per_node,
            max_steps_used=max_steps,
        )
        frac = float(unabsorbed[r].sum()) / (walkers_per_node * n)
        sol = estimate_solution(nc, spec, unabsorbed_fraction=frac)
        steps = [
            np.sort(np.concatenate(samples[r][i])) if samples[r][i] else
            np.empty(0, dtype=np.int64)
            for i in range(n)
        ]
        run_data.append(
            RunData(
                counts=nc,
                solution=sol,
                absorption_steps=steps,
                unabsorbed=unabsorbed[r].copy(),
            )
        )

    u_mean = np.mean([rd.solution.u for rd in run_data], axis=0)
    raw_mean = np.mean([rd.solution.u_raw for rd in run_data], axis=0)
    mean_sol = MeshSolution(
        u_raw=raw_mean,
        u=u_mean,
        unabsorbed_fraction=float(unabsorbed.sum()) / (walkers_per_node * n * runs),
    )
    return SolveResult(spec=spec, runs=run_data, mean_solution=mean_sol, seed=seed)
