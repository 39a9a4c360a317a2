"""Sparse non-negative Poisson CP decomposition of the migration tensor.

The count tensor is approximated by a rank-K sum of outer products with
origin factors O (N x K), destination factors D (N x K) and time factors
T (M x K); component weights lam carry the mass so that factor columns can
stay normalized to unit sum. Fitting maximizes the Poisson likelihood of
the observed counts (optionally with a Gamma prior on factor entries) via
multiplicative updates, alternating over the three modes. Diagonal cells
(origin == destination) are structural zeros: they are excluded from both
the data term and the reconstructed-mass term, so the model is never
penalized for mass it cannot place there.

With prior_shape a=1 and prior_rate b=0 the updates are exact
maximum-likelihood steps and the negative log-likelihood is non-increasing
sweep over sweep; a>1 / b>0 adds Gamma(a, b) MAP smoothing.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from .ingestion import InputError
from .tensor import MigrationTensor

# floor applied to reconstructed rates inside update ratios; factor entries
# themselves are never floored, so zeros stay absorbing
RATE_EPS = 1e-12

MODES = ("origin", "destination", "time")


@dataclass
class FactorModel:
    """Rank-K non-negative CP factors plus component weights.

    In normalized form each column of O, D and T sums to 1 and
    ``weights[k]`` carries component k's total mass.
    """

    O: np.ndarray
    D: np.ndarray
    T: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.O = np.asarray(self.O, dtype=float)
        self.D = np.asarray(self.D, dtype=float)
        self.T = np.asarray(self.T, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        K = self.K
        if self.O.ndim != 2 or self.D.ndim != 2 or self.T.ndim != 2:
            raise ValueError("factor matrices must be 2-d")
        if self.D.shape[1] != K or self.T.shape[1] != K or self.weights.shape != (K,):
            raise ValueError("factor matrices and weights disagree on rank")
        if self.O.shape[0] != self.D.shape[0]:
            raise ValueError("origin and destination factors must share N")
        for arr in (self.O, self.D, self.T, self.weights):
            if not np.isfinite(arr).all() or (arr < 0).any():
                raise ValueError("factor entries must be finite and non-negative")

    @property
    def K(self) -> int:
        return self.O.shape[1]

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.O.shape[0], self.D.shape[0], self.T.shape[0])

    def copy(self) -> "FactorModel":
        return FactorModel(self.O.copy(), self.D.copy(), self.T.copy(), self.weights.copy())

    def normalized(self) -> "FactorModel":
        """Canonical gauge: unit-sum columns, mass moved into the weights."""
        out = self.copy()
        lam = out.weights
        for mat in (out.O, out.D, out.T):
            s = mat.sum(axis=0)
            scale = np.where(s > 0, s, 1.0)
            mat /= scale
            lam = lam * s
        out.weights = lam
        return out

    def sorted_by_weight(self) -> "FactorModel":
        order = np.argsort(-self.weights, kind="stable")
        return FactorModel(self.O[:, order], self.D[:, order], self.T[:, order], self.weights[order])


@dataclass(frozen=True)
class FitConfig:
    rank: int = 15
    max_iters: int = 500
    rel_tol: float = 1e-6
    seed: int = 0
    prior_shape: float = 1.0
    prior_rate: float = 0.0
    restarts: int = 10

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.max_iters < 1 or self.restarts < 1:
            raise ValueError("max_iters and restarts must be positive")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.prior_shape < 1 or self.prior_rate < 0:
            raise ValueError("need prior_shape >= 1 and prior_rate >= 0")


@dataclass
class FitTrace:
    """Objective history of one fit run (negative log-likelihood).

    ``objectives[0]`` is the initial model's objective; each further entry
    follows one full sweep over the three modes.
    """

    objectives: list[float] = field(default_factory=list)
    n_sweeps: int = 0
    converged: bool = False
    restart: int = 0


def _draw_factors(dims: tuple[int, int, int], rank: int, rng: np.random.Generator) -> FactorModel:
    N1, N2, M = dims
    O = rng.uniform(0.1, 1.1, size=(N1, rank))
    D = rng.uniform(0.1, 1.1, size=(N2, rank))
    T = rng.uniform(0.1, 1.1, size=(M, rank))
    return FactorModel(O, D, T, np.ones(rank))


def init_factors(dims: tuple[int, int, int], config: FitConfig) -> FactorModel:
    """Seeded random start: entries i.i.d. uniform on (0.1, 1.1), weights 1."""
    return _draw_factors(dims, config.rank, np.random.default_rng(config.seed))


def reconstruct_entry(model: FactorModel, i: int, j: int, t: int) -> float:
    """Reconstructed rate at one cell: sum_k lam_k * O_ik * D_jk * T_tk."""
    return float((model.O[i] * model.D[j] * model.T[t]) @ model.weights)


def _rates(model: FactorModel, coords: np.ndarray) -> np.ndarray:
    return (model.O[coords[:, 0]] * model.D[coords[:, 1]] * model.T[coords[:, 2]]) @ model.weights


def _reconstructed_mass(model: FactorModel) -> float:
    """Total reconstructed rate over admissible cells (diagonal excluded)."""
    full = model.weights @ (model.O.sum(0) * model.D.sum(0) * model.T.sum(0))
    diag = model.weights @ ((model.O * model.D).sum(0) * model.T.sum(0))
    return float(full - diag)


def log_likelihood(tensor: MigrationTensor, model: FactorModel) -> float:
    """Poisson log-likelihood up to the constant log(A!) term.

    Returns -inf (rather than raising) when the model assigns rate zero to
    a cell with observed counts.
    """
    if model.dims != tensor.dims:
        raise ValueError(f"model dims {model.dims} != tensor dims {tensor.dims}")
    mass = _reconstructed_mass(model)
    if tensor.nnz == 0:
        return -mass
    rates = _rates(model, tensor.coords)
    if (rates <= 0).any():
        return float("-inf")
    return float(tensor.counts @ np.log(rates) - mass)


def _unnormalized(model: FactorModel, mode: str) -> np.ndarray:
    """The given mode's factor matrix with the weights absorbed into it."""
    if mode == "origin":
        return model.O * model.weights
    if mode == "destination":
        return model.D * model.weights
    if mode == "time":
        return model.T * model.weights
    raise ValueError(f"unknown mode {mode!r}")


def mode_update(tensor: MigrationTensor, model: FactorModel, mode: str,
                prior_shape: float = 1.0, prior_rate: float = 0.0) -> FactorModel:
    """One multiplicative update of a single factor matrix.

    Absorbs the weights into the updated mode, applies the Poisson
    multiplicative rule over the nonzero entries (cost O(nnz * K)), then
    renormalizes that matrix's columns back into (factors, weights). The
    other two matrices pass through untouched. Denominators subtract the
    structurally-absent diagonal's contribution.
    """
    if model.dims != tensor.dims:
        raise ValueError(f"model dims {model.dims} != tensor dims {tensor.dims}")
    a, b = prior_shape, prior_rate
    ii, jj, tt = tensor.coords[:, 0], tensor.coords[:, 1], tensor.coords[:, 2]
    W = _unnormalized(model, mode)
    sum_T = model.T.sum(0)

    if mode == "origin":
        rows, contrib = ii, model.D[jj] * model.T[tt]
        rates = (W[ii] * contrib).sum(axis=1)
        denom = b + model.D.sum(0) * sum_T - model.D * sum_T
    elif mode == "destination":
        rows, contrib = jj, model.O[ii] * model.T[tt]
        rates = (W[jj] * contrib).sum(axis=1)
        denom = b + model.O.sum(0) * sum_T - model.O * sum_T
    else:
        rows, contrib = tt, model.O[ii] * model.D[jj]
        rates = (W[tt] * contrib).sum(axis=1)
        denom = b + np.broadcast_to(
            model.O.sum(0) * model.D.sum(0) - (model.O * model.D).sum(0), W.shape)

    num = np.zeros_like(W)
    if tensor.nnz:
        ratio = tensor.counts / np.maximum(rates, RATE_EPS)
        np.add.at(num, rows, contrib * ratio[:, None])

    W_new = ((a - 1.0) + W * num) / np.maximum(denom, RATE_EPS)

    lam_new = W_new.sum(0)
    scale = np.where(lam_new > 0, lam_new, 1.0)
    mat_new = W_new / scale
    if mode == "origin":
        return FactorModel(mat_new, model.D, model.T, lam_new)
    if mode == "destination":
        return FactorModel(model.O, mat_new, model.T, lam_new)
    return FactorModel(model.O, model.D, mat_new, lam_new)


def fit(tensor: MigrationTensor, config: FitConfig) -> tuple[FactorModel, FitTrace]:
    """Fit the decomposition with seeded multi-restart alternating updates.

    Each restart draws a fresh random start from one seeded stream, then
    sweeps origin -> destination -> time until the relative objective
    change drops to rel_tol or max_iters is hit. The restart with the best
    final objective wins (ties to the earliest restart); its model comes
    back normalized with components sorted by descending weight.
    """
    N, _, M = tensor.dims
    if config.rank > min(N, M):
        warnings.warn(
            f"rank {config.rank} exceeds min tensor dim {min(N, M)}; "
            "the decomposition is overcomplete", RuntimeWarning)
    rng = np.random.default_rng(config.seed)
    best_model: FactorModel | None = None
    best_trace: FitTrace | None = None
    for restart in range(config.restarts):
        # sweeps are gauge-covariant, so the raw draw needs no normalizing
        # here; the winner is canonicalized exactly once on return
        model = _draw_factors(tensor.dims, config.rank, rng)
        trace = FitTrace(restart=restart)
        obj = -log_likelihood(tensor, model)
        trace.objectives.append(obj)
        rel_change = float("inf")
        for _ in range(config.max_iters):
            if rel_change <= config.rel_tol:
                trace.converged = True
                break
            for mode in MODES:
                model = mode_update(tensor, model, mode,
                                    config.prior_shape, config.prior_rate)
            new_obj = -log_likelihood(tensor, model)
            trace.objectives.append(new_obj)
            trace.n_sweeps += 1
            rel_change = abs(obj - new_obj) / max(abs(obj), 1.0)
            obj = new_obj
        else:
            trace.converged = rel_change <= config.rel_tol
        if best_trace is None or trace.objectives[-1] < best_trace.objectives[-1]:
            best_model, best_trace = model, trace
    return best_model.normalized().sorted_by_weight(), best_trace


def save_model(model: FactorModel, path) -> None:
    """Write ``# cp N N M K`` then weights, O, D, T as CSV blocks.

    Floats use 17 significant digits, enough to round-trip exactly.
    """
    N1, N2, M = model.dims
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    buf.write(f"# cp {N1} {N2} {M} {model.K}\n")
    writer.writerow([f"{x:.17g}" for x in model.weights])
    for mat in (model.O, model.D, model.T):
        for row in mat:
            writer.writerow([f"{x:.17g}" for x in row])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(buf.getvalue())


def load_model(path) -> FactorModel:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if header[:2] != ["#", "cp"] or len(header) != 6:
            raise InputError(f"{path}: malformed model header")
        N1, N2, M, K = (int(x) for x in header[2:])
        rows = list(csv.reader(fh))
    expected = 1 + N1 + N2 + M
    if len(rows) != expected:
        raise InputError(f"{path}: expected {expected} data rows, found {len(rows)}")
    data = [np.array([float(x) for x in row]) for row in rows]
    weights = data[0]
    O = np.vstack(data[1:1 + N1])
    D = np.vstack(data[1 + N1:1 + N1 + N2])
    T = np.vstack(data[1 + N1 + N2:])
    model = FactorModel(O, D, T, weights)
    if model.K != K:
        raise InputError(f"{path}: header rank {K} != row width {model.K}")
    return model
