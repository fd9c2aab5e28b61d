"""
Dempster-Shafer clustering with Potts-spin mean field annealing.

Elements (reports, tracks, pieces of evidence) are partitioned so that the
metaconflict ``1 - prod(1 - c_i)`` over the per-cluster conflicts c_i is
minimal. The conflicts enter the Potts model as weights of conflict
``J_ij = -log(1 - c_ij)``; mean field annealing lowers the temperature from
the critical temperature until every spin has frozen to one cluster.
"""
import logging
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, eigvalsh
from scipy.special import softmax

from .errors import AnnealingError, ConflictRangeError, NonConvergenceError

logger = logging.getLogger(__name__)

W_CAP = 12.0
G_FLOOR = 1e-12
ALPHA_BEYOND_TABLE = 3e-8

DEFAULT_ALPHA_BY_K = {1: 0.0, 2: 0.0, 3: 0.0, 4: 0.0, 5: 0.0, 6: 0.0, 7: 0.0,
                      8: 1e-6, 9: 0.0, 10: 3e-7, 11: 3e-8}

PairwiseConflict = Union[np.ndarray, Callable[[int, int], float]]


@dataclass(frozen=True)
class AnnealConfig:
    """
    Parameters of the mean field annealing.

    Args:
        gamma: self-coupling
        alpha_by_k: cluster-balance coefficient per cluster count K
        alpha_beyond: alpha for K larger than every key of alpha_by_k
        epsilon: amplitude of the uniform noise added to the spins
        tau: cooling factor per temperature step
        damping: share of the previous spins kept in each synchronous update,
            V <- (1 - damping) * update + damping * V; 0 is the plain update
        inner_tol: fixed point reached when mean |V_new - V| per element is below this
        max_inner_sweeps: updates at one temperature before cooling anyway
        freeze_tol: stop when the mean of sum_a V_ia^2 reaches this
        row_max_tol: ...and every element's largest spin reaches this
        seed: seed of the noise streams
        max_sweeps: total sweep cap before NonConvergenceError
        refine: greedy single-element moves after freezing
        keep_snapshots: keep a copy of the spins after every temperature step
    """
    gamma: float = 0.5
    alpha_by_k: Dict[int, float] = field(default_factory=lambda: dict(DEFAULT_ALPHA_BY_K))
    alpha_beyond: float = ALPHA_BEYOND_TABLE
    epsilon: float = 0.001
    tau: float = 0.9
    damping: float = 0.5
    inner_tol: float = 0.01
    max_inner_sweeps: int = 200
    freeze_tol: float = 0.99
    row_max_tol: float = 0.9
    seed: int = 0
    max_sweeps: int = 20000
    refine: bool = True
    keep_snapshots: bool = False

    def __post_init__(self):
        object.__setattr__(self, "alpha_by_k", {int(k): float(v) for k, v in self.alpha_by_k.items()})
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError(f"damping must lie in [0, 1), got {self.damping}")
        if self.max_inner_sweeps < 1:
            raise ValueError(f"max_inner_sweeps must be >= 1, got {self.max_inner_sweeps}")
        if not 0.0 < self.freeze_tol < 1.0:
            raise ValueError(f"freeze_tol must lie in (0, 1), got {self.freeze_tol}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")
        if self.max_sweeps < 1:
            raise ValueError(f"max_sweeps must be >= 1, got {self.max_sweeps}")

    def alpha(self, K: int) -> float:
        if K in self.alpha_by_k:
            return self.alpha_by_k[K]
        if self.alpha_by_k and K > max(self.alpha_by_k):
            return self.alpha_beyond
        return 0.0


@dataclass(frozen=True, eq=False)
class InteractionMatrix:
    """
    Symmetric weights of conflict between elements, zero diagonal.

    Args:
        J: (n, n) weights in [0, W_CAP]
        conflicts: the (n, n) conflicts the weights were derived from, if known
    """
    J: np.ndarray
    conflicts: Optional[np.ndarray] = None

    def __post_init__(self):
        J = np.asarray(self.J, dtype=float)
        object.__setattr__(self, "J", J)
        if J.ndim != 2 or J.shape[0] != J.shape[1] or J.shape[0] < 1:
            raise ValueError(f"Interaction matrix must be square and non-empty, got shape {J.shape}")
        if not np.array_equal(J, J.T):
            raise ValueError("Interaction matrix must be symmetric")
        if np.any(np.diag(J) != 0.0):
            raise ValueError("Interaction matrix must have a zero diagonal")
        if np.any(J < 0.0) or np.any(J > W_CAP):
            raise ValueError(f"Interaction weights must lie in [0, {W_CAP}]")

    @property
    def n(self) -> int:
        return self.J.shape[0]

    @classmethod
    def from_conflicts(cls, conflicts: np.ndarray) -> 'InteractionMatrix':
        conflicts = np.asarray(conflicts, dtype=float)
        return cls(weights_of_conflict(conflicts), conflicts)


@dataclass(frozen=True, eq=False)
class SpinState:
    """Mean field spins V (n x K) at a temperature, after ``sweep`` updates."""
    V: np.ndarray
    temperature: float
    sweep: int

    @property
    def saturation(self) -> float:
        return float((self.V ** 2).sum() / self.V.shape[0])

    @property
    def min_row_max(self) -> float:
        return float(self.V.max(axis=1).min())


@dataclass(frozen=True, eq=False)
class Partition:
    """Assignment of every element to one of K clusters (some may be empty)."""
    assignment: np.ndarray
    K: int

    def __post_init__(self):
        assignment = np.asarray(self.assignment, dtype=int)
        object.__setattr__(self, "assignment", assignment)
        if assignment.ndim != 1:
            raise ValueError("Partition assignment must be one-dimensional")
        if assignment.size and (assignment.min() < 0 or assignment.max() >= self.K):
            raise ValueError(f"Cluster labels must lie in [0, {self.K})")

    @property
    def n(self) -> int:
        return self.assignment.size

    @property
    def occupied(self) -> int:
        return len(np.unique(self.assignment))

    def clusters(self) -> List[np.ndarray]:
        """Member indices of every non-empty cluster, ordered by label."""
        return [np.flatnonzero(self.assignment == a) for a in range(self.K)
                if np.any(self.assignment == a)]

    def blocks(self) -> List[Tuple[int, ...]]:
        """Non-empty clusters as sorted tuples, ordered by smallest member."""
        return sorted(tuple(int(i) for i in c) for c in self.clusters())

    def canonical(self) -> 'Partition':
        """Relabel clusters in order of first appearance."""
        labels: Dict[int, int] = {}
        relabeled = [labels.setdefault(int(a), len(labels)) for a in self.assignment]
        return Partition(np.array(relabeled, dtype=int), self.K)

    def same_as(self, other: 'Partition') -> bool:
        """Equal up to relabeling of clusters."""
        return self.blocks() == other.blocks()

    def one_hot(self) -> np.ndarray:
        V = np.zeros((self.n, self.K))
        V[np.arange(self.n), self.assignment] = 1.0
        return V


@dataclass(frozen=True)
class TraceRow:
    sweep: int
    temperature: float
    saturation: float


@dataclass(frozen=True, eq=False)
class AnnealResult:
    """
    ``argmax_partition`` assigns every element to its largest final spin;
    ``partition`` is the same after refinement when ``AnnealConfig.refine`` is set.
    ``frozen`` is False only for the partial result of a run that hit its sweep cap.
    """
    partition: Partition
    state: SpinState
    critical_temperature: float
    trace: Tuple[TraceRow, ...]
    snapshots: Tuple[SpinState, ...] = ()
    argmax_partition: Optional[Partition] = None
    frozen: bool = True


@dataclass(frozen=True, eq=False)
class ClusterCountResult:
    """
    Outcome of the search over the number of clusters.

    ``unfrozen`` lists the K whose annealing hit the sweep cap; their curve
    entries are the weights of the partial argmax partitions and they are
    never accepted.
    """
    K: int
    partition: Partition
    total_weight: float
    curve: Tuple[Tuple[int, float], ...]
    accepted: bool
    anneal: AnnealResult
    unfrozen: Tuple[int, ...] = ()


def weight_of_conflict(c: float) -> float:
    """Weight of conflict ``-ln(1 - c)``, capped at W_CAP."""
    if not 0.0 <= c <= 1.0:
        raise ConflictRangeError(f"Conflict must lie in [0, 1], got {c}")
    if c >= 1.0:
        return W_CAP
    return min(-math.log1p(-c), W_CAP)


def weights_of_conflict(conflicts: np.ndarray) -> np.ndarray:
    conflicts = np.asarray(conflicts, dtype=float)
    if np.any(conflicts < 0.0) or np.any(conflicts > 1.0):
        raise ConflictRangeError("Conflicts must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        weights = -np.log1p(-conflicts)
    return np.minimum(weights, W_CAP)


def build_interactions(elements: Sequence, pairwise_conflict_fn: Callable[[int, int], float]
                       ) -> InteractionMatrix:
    """
    Evaluate the pairwise conflict of every element pair and turn it into weights.

    Args:
        elements: the elements to cluster (only their count and order matter)
        pairwise_conflict_fn: conflict of elements i and j, called with indices i < j

    Raises:
        ConflictRangeError: if a conflict lies outside [0, 1]
    """
    n = len(elements)
    if n < 1:
        raise ValueError("Need at least one element to cluster")
    conflicts = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            c = float(pairwise_conflict_fn(i, j))
            if not 0.0 <= c <= 1.0:
                raise ConflictRangeError(f"Conflict of elements {i} and {j} is {c}, outside [0, 1]")
            conflicts[i, j] = conflicts[j, i] = c
    return InteractionMatrix.from_conflicts(conflicts)


def _as_weights(J: Union[InteractionMatrix, np.ndarray]) -> np.ndarray:
    if isinstance(J, InteractionMatrix):
        return J.J
    return np.asarray(J, dtype=float)


def critical_temperature(J: Union[InteractionMatrix, np.ndarray], K: int,
                         alpha: float, gamma: float) -> float:
    """
    Starting temperature ``max(-lambda_min, lambda_max) / K`` of M = J + alpha - gamma*I.

    Falls back to 1/K when that value is not positive.

    Raises:
        AnnealingError: if the eigensolver fails
    """
    J = _as_weights(J)
    M = J + alpha - gamma * np.eye(J.shape[0])
    try:
        eigenvalues = eigvalsh(M)
    except (LinAlgError, ValueError) as exc:
        raise AnnealingError(f"Eigenvalue computation failed: {exc}") from exc
    t_c = max(-eigenvalues[0], eigenvalues[-1]) / K
    if t_c <= 0:
        return 1.0 / K
    return float(t_c)


class _NoiseStreams:
    """
    One counter-based random stream per element.

    Noise is keyed by the element, not by its row, so permuting the elements
    permutes the noise with them.
    """
    def __init__(self, seed: int, keys: Sequence[int], stream: int):
        self._generators = [
            np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream, int(key)])))
            for key in keys
        ]

    def draw(self, K: int) -> np.ndarray:
        return np.stack([g.random(K) for g in self._generators])


def _frozen(V: np.ndarray, config: AnnealConfig) -> bool:
    n = V.shape[0]
    return (V ** 2).sum() / n >= config.freeze_tol and V.max(axis=1).min() >= config.row_max_tol


def refine_assignment(J: np.ndarray, assignment: np.ndarray, K: int) -> np.ndarray:
    """
    Move single elements to the cluster with the least interaction until no move helps.

    Every move strictly lowers the summed within-cluster weight, so the loop ends.
    """
    assignment = np.array(assignment, dtype=int)
    n = assignment.size
    fields = J @ Partition(assignment, K).one_hot()
    moved = True
    while moved:
        moved = False
        for i in range(n):
            current = assignment[i]
            target = int(np.argmin(fields[i]))
            if fields[i, target] < fields[i, current] - 1e-12:
                fields[:, current] -= J[:, i]
                fields[:, target] += J[:, i]
                assignment[i] = target
                moved = True
    return assignment


def anneal(J: Union[InteractionMatrix, np.ndarray], K: int, config: AnnealConfig = None,
           element_keys: Sequence[int] = None) -> AnnealResult:
    """
    Cluster n elements into at most K clusters by Potts mean field annealing.

    Spins start near the symmetric state 1/K at the critical temperature. At
    each temperature the synchronous mean field update (softmax of -H/T plus
    epsilon noise, rows renormalized) is iterated to a fixed point, then the
    temperature is multiplied by tau, until the spins freeze. Each element is
    assigned to its largest spin.

    Args:
        J: interaction matrix or (n, n) weights
        K: number of clusters
        config: annealing parameters
        element_keys: non-negative ints keying each element's noise stream
            (default: the element index)

    Raises:
        NonConvergenceError: if config.max_sweeps sweeps pass before freezing
    """
    config = config or AnnealConfig()
    J = _as_weights(J)
    n = J.shape[0]
    if K < 1 or n < 1:
        raise ValueError(f"Need K >= 1 and at least one element, got K={K}, n={n}")
    keys = range(n) if element_keys is None else element_keys
    if len(keys) != n:
        raise ValueError("element_keys must have one key per element")

    alpha, gamma, epsilon = config.alpha(K), config.gamma, config.epsilon
    coupling = J + alpha
    t_c = critical_temperature(J, K, alpha, gamma)
    temperature = t_c
    noise = _NoiseStreams(config.seed, keys, K)

    V = 1.0 / K + epsilon * noise.draw(K)
    V /= V.sum(axis=1, keepdims=True)
    trace: List[TraceRow] = []
    snapshots: List[SpinState] = []
    sweep = 0
    while True:
        for _ in range(config.max_inner_sweeps):
            if sweep >= config.max_sweeps:
                raise NonConvergenceError(
                    f"Spins did not freeze within {config.max_sweeps} sweeps (K={K}, n={n})",
                    state=SpinState(V.copy(), temperature, sweep), critical_temperature=t_c)
            G = np.maximum(K / n * V.sum(axis=0), G_FLOOR)
            H = (coupling @ V - gamma * V) / G
            V_next = softmax(-H / temperature, axis=1) + epsilon * noise.draw(K)
            V_next /= V_next.sum(axis=1, keepdims=True)
            # damped synchronous step
            V_next = (1.0 - config.damping) * V_next + config.damping * V
            change = np.abs(V_next - V).sum() / n
            V = V_next
            sweep += 1
            trace.append(TraceRow(sweep, temperature, float((V ** 2).sum() / n)))
            if change <= config.inner_tol:
                break
        else:
            logger.debug("No fixed point after %d updates at T=%.4g (K=%d); cooling anyway",
                         config.max_inner_sweeps, temperature, K)
        if config.keep_snapshots:
            snapshots.append(SpinState(V.copy(), temperature, sweep))
        if _frozen(V, config):
            break
        temperature *= config.tau

    argmax = Partition(V.argmax(axis=1), K)
    partition = argmax
    if config.refine:
        partition = Partition(refine_assignment(J, argmax.assignment, K), K)
    logger.debug("Annealed n=%d into K=%d: T_c=%.4g, final T=%.4g, %d sweeps",
                 n, K, t_c, temperature, sweep)
    return AnnealResult(
        partition=partition,
        state=SpinState(V, temperature, sweep),
        critical_temperature=t_c,
        trace=tuple(trace),
        snapshots=tuple(snapshots),
        argmax_partition=argmax,
    )


def potts_energy(J: Union[InteractionMatrix, np.ndarray], V: np.ndarray,
                 gamma: float = 0.5, alpha: float = 0.0) -> float:
    """Potts energy with self-coupling and cluster-balance terms for spins V (n x K)."""
    J = _as_weights(J)
    V = np.asarray(V, dtype=float)
    clustering = 0.5 * float(np.sum(V * (J @ V)))
    self_coupling = 0.5 * gamma * float(np.sum(V ** 2))
    balance = 0.5 * alpha * float(np.sum(V.sum(axis=0) ** 2))
    return clustering - self_coupling + balance


def cluster_conflicts(partition: Partition, pairwise_conflict: PairwiseConflict) -> List[float]:
    """
    Conflict within every non-empty cluster, ``1 - prod over pairs (1 - c_ab)``.

    Args:
        partition: the partition
        pairwise_conflict: (n, n) conflict matrix or a function of two indices
    """
    result = []
    matrix = None if callable(pairwise_conflict) else np.asarray(pairwise_conflict, dtype=float)
    for members in partition.clusters():
        if matrix is not None:
            upper = np.triu_indices(len(members), 1)
            pair_conflicts = matrix[np.ix_(members, members)][upper]
        else:
            pair_conflicts = [pairwise_conflict(int(a), int(b)) for a, b in combinations(members, 2)]
        remaining = 1.0
        for c in pair_conflicts:
            remaining *= 1.0 - float(c)
        result.append(1.0 - remaining)
    return result


def metaconflict(partition: Partition, pairwise_conflict: PairwiseConflict) -> float:
    """Metaconflict ``1 - prod_i (1 - c_i)`` of a partition."""
    remaining = 1.0
    for c in cluster_conflicts(partition, pairwise_conflict):
        remaining *= 1.0 - c
    return 1.0 - remaining


def total_weight_of_conflict(partition: Partition, pairwise_conflict: PairwiseConflict) -> float:
    """Sum of the per-cluster weights of conflict, each capped at W_CAP."""
    return sum(weight_of_conflict(c) for c in cluster_conflicts(partition, pairwise_conflict))


def select_cluster_count(J: Union[InteractionMatrix, np.ndarray],
                         pairwise_conflict: PairwiseConflict, K_max: int, threshold: float,
                         config: AnnealConfig = None,
                         element_keys: Sequence[int] = None) -> ClusterCountResult:
    """
    Anneal for K = 1, 2, ... and stop at the first K whose total weight of
    conflict falls below ``threshold``.

    If no K up to K_max qualifies, the K with the smallest total weight is
    returned with ``accepted=False``. A K whose spins do not freeze is logged,
    listed in ``unfrozen`` and skipped; its partial result is only returned
    when no K froze at all.
    """
    if K_max < 1:
        raise ValueError(f"K_max must be >= 1, got {K_max}")
    if threshold <= 0:
        raise ValueError(f"threshold must be > 0, got {threshold}")
    n = _as_weights(J).shape[0]
    curve: List[Tuple[int, float]] = []
    unfrozen: List[int] = []
    best: Optional[Tuple[int, float, AnnealResult]] = None
    best_partial: Optional[Tuple[int, float, AnnealResult]] = None
    for K in range(1, min(K_max, n) + 1):
        try:
            result = anneal(J, K, config, element_keys)
        except NonConvergenceError as exc:
            partial = Partition(exc.state.V.argmax(axis=1), K)
            weight = total_weight_of_conflict(partial, pairwise_conflict)
            curve.append((K, weight))
            unfrozen.append(K)
            logger.warning("K=%d: spins did not freeze within %d sweeps; skipped (partial weight %.4g)",
                           K, exc.state.sweep, weight)
            if best_partial is None or weight < best_partial[1]:
                best_partial = (K, weight, AnnealResult(partial, exc.state, exc.critical_temperature,
                                                        (), argmax_partition=partial, frozen=False))
            continue
        weight = total_weight_of_conflict(result.partition, pairwise_conflict)
        curve.append((K, weight))
        logger.debug("K=%d: total weight of conflict %.6g", K, weight)
        if best is None or weight < best[1]:
            best = (K, weight, result)
        if weight < threshold:
            logger.info("Selected K=%d (total weight of conflict %.4g < %.4g)", K, weight, threshold)
            return ClusterCountResult(K, result.partition, weight, tuple(curve), True, result,
                                      tuple(unfrozen))
    K, weight, result = best if best is not None else best_partial
    logger.warning("No K <= %d brought the weight of conflict below %.4g; using K=%d (%.4g)",
                   min(K_max, n), threshold, K, weight)
    return ClusterCountResult(K, result.partition, weight, tuple(curve), False, result,
                              tuple(unfrozen))


def _restricted_growth_strings(n: int, K: int):
    """All set partitions of n elements into at most K blocks."""
    assignment = [0] * n

    def extend(i: int, blocks: int):
        if i == n:
            yield list(assignment)
            return
        for label in range(min(blocks + 1, K)):
            assignment[i] = label
            yield from extend(i + 1, max(blocks, label + 1))

    if n == 0:
        yield []
        return
    yield from extend(1, 1)


def brute_force_partition(conflicts: np.ndarray, K: int) -> Tuple[float, Partition]:
    """Exhaustive minimal-metaconflict partition into at most K blocks (n <= ~10)."""
    conflicts = np.asarray(conflicts, dtype=float)
    n = conflicts.shape[0]
    best_value, best_partition = math.inf, None
    for assignment in _restricted_growth_strings(n, K):
        partition = Partition(np.array(assignment, dtype=int), K)
        value = metaconflict(partition, conflicts)
        if value < best_value:
            best_value, best_partition = value, partition
    return best_value, best_partition


def simple_support_conflicts(focal_sets: Sequence[FrozenSet], masses: Sequence[float]) -> np.ndarray:
    """
    Pairwise conflicts between simple support functions.

    Two functions focused on disjoint sets with masses s_i, s_j conflict with
    s_i * s_j; functions whose focal sets intersect do not conflict.
    """
    n = len(focal_sets)
    if len(masses) != n:
        raise ValueError("Need one mass per focal set")
    conflicts = np.zeros((n, n))
    for i, j in combinations(range(n), 2):
        if not focal_sets[i] & focal_sets[j]:
            conflicts[i, j] = conflicts[j, i] = masses[i] * masses[j]
    return conflicts


def power_set_family(K: int, mass: float = 1.0) -> Tuple[List[FrozenSet[int]], np.ndarray]:
    """
    One simple support function per non-empty subset of a K-element frame.

    The N = 2^K - 1 functions need exactly K clusters for zero conflict.
    """
    frame = range(1, K + 1)
    focal_sets = [frozenset(s) for size in range(1, K + 1) for s in combinations(frame, size)]
    return focal_sets, simple_support_conflicts(focal_sets, [mass] * len(focal_sets))
