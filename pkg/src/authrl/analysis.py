"""State-coverage and exploration-diversity analyses."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats
from scipy.spatial import ConvexHull, QhullError

from .dataset import trajectories_to_rows
from .dqn import DqnConfig, train
from .env import EnvConfig, simulate
from .errors import DegenerateInputError, OutOfRangeError
from .policy import FixedProb, Greedy

PCA_TOL = 1e-10


def _accelerated(C, squarings):
    # C^(2^squarings), renormalised after every squaring; same eigenvectors
    M = C / max(np.abs(C).max(), np.finfo(float).tiny)
    for _ in range(squarings):
        M = M @ M
        M /= max(np.abs(M).max(), np.finfo(float).tiny)
    return M


def _power_iteration(C, v, tol, max_iter, scale, basis=None, squarings=6):
    M = _accelerated(C, squarings)
    lam = 0.0
    for _ in range(max_iter):
        if basis is not None:
            v = v - basis.T @ (basis @ v)
        w = M @ v
        norm = np.linalg.norm(w)
        if norm == 0.0 or np.linalg.norm(C @ v) <= 1e-14 * scale:
            # remaining spectrum is numerically zero
            return 0.0, v / np.linalg.norm(v)
        v = w / norm
        if basis is not None:
            v = v - basis.T @ (basis @ v)
            v /= np.linalg.norm(v)
        lam = float(v @ C @ v)
        if np.linalg.norm(C @ v - lam * v) <= tol * scale:
            break
    return lam, v


def top_eigenpairs(C: np.ndarray, k: int = 2, tol: float = PCA_TOL, max_iter: int = 1_000_000,
                   seed: int = 0):
    """Leading ``k`` eigenpairs of a symmetric PSD matrix.

    Power iteration on a repeatedly squared copy of the matrix (which has
    the same eigenvectors but exponentially larger eigenvalue gaps); after
    each pair is found the matrix is deflated
    (``C - lam * v v^T``) and later iterates are kept orthogonal to the
    vectors already found.
    """
    C = np.asarray(C, dtype=float)
    d = C.shape[0]
    rng = np.random.default_rng(seed)
    values, vectors = [], []
    # tolerances are relative to the undeflated matrix
    scale = max(np.abs(C).max(), np.finfo(float).tiny)
    work = C.copy()
    for _ in range(k):
        basis = np.array(vectors) if vectors else None
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        lam, v = _power_iteration(work, v, tol, max_iter, scale, basis)
        # deterministic sign: largest-magnitude coordinate positive
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        values.append(lam)
        vectors.append(v)
        work = work - lam * np.outer(v, v)
    return np.array(values), np.array(vectors)


@dataclass
class PcaProjection:
    components: np.ndarray          # [2, d], orthonormal rows
    explained_variance: np.ndarray  # [2], descending
    projected: np.ndarray           # [n, 2]
    mean: np.ndarray                # [d]

    def transform(self, points) -> np.ndarray:
        return (np.atleast_2d(points) - self.mean) @ self.components.T


def pca2(states) -> PcaProjection:
    """Project states onto their two leading principal components."""
    X = np.asarray(states, dtype=float)
    if X.ndim != 2 or X.shape[0] < 3:
        raise DegenerateInputError("pca2 needs a matrix with at least 3 rows")
    mean = X.mean(axis=0)
    Xc = X - mean
    if not np.any(Xc):
        raise DegenerateInputError("all points are identical")
    C = Xc.T @ Xc / (X.shape[0] - 1)
    values, vectors = top_eigenpairs(C, 2)
    order = np.argsort(-values, kind="stable")
    values, vectors = np.maximum(values[order], 0.0), vectors[order]
    return PcaProjection(vectors, values, Xc @ vectors.T, mean)


@dataclass
class CoverageStat:
    generalized_variance: float
    hull_area: float


def hull_area(points) -> float:
    pts = np.asarray(points, dtype=float)
    if len(np.unique(pts, axis=0)) < 3:
        return 0.0
    try:
        return float(ConvexHull(pts).volume)
    except QhullError:
        # collinear points
        return 0.0


def coverage(projection) -> CoverageStat:
    """Generalised variance and convex-hull area of 2-D projected points."""
    pts = projection.projected if isinstance(projection, PcaProjection) else np.asarray(projection)
    if pts.shape[0] < 3:
        raise DegenerateInputError("coverage needs at least 3 points")
    gv = float(np.linalg.det(np.cov(pts, rowvar=False)))
    return CoverageStat(max(gv, 0.0), hull_area(pts))


def _mean_stderr(x):
    x = np.asarray(x, dtype=float)
    mean = math.fsum(x) / len(x)
    if len(x) < 2:
        return mean, 0.0
    return mean, float(np.std(x, ddof=1) / math.sqrt(len(x)))


def return_curves(env_config: EnvConfig, policies, lengths, episodes_per_point: int,
                  user_seeds=None, run_seed: int = 0) -> list:
    """Mean cumulative reward of each policy over the first ``length`` steps.

    ``policies`` maps names to policies. All lengths of one policy share the
    same simulated episodes. Returns dicts with keys
    ``policy, length, mean, stderr``.
    """
    lengths = [int(L) for L in lengths]
    if any(L < 0 or L > env_config.horizon for L in lengths):
        raise OutOfRangeError(f"lengths must lie in [0, {env_config.horizon}]")
    if user_seeds is None:
        user_seeds = range(episodes_per_point)
    user_seeds = list(user_seeds)
    per_user = max(1, -(-episodes_per_point // len(user_seeds)))
    out = []
    for name, policy in dict(policies).items():
        trajs = simulate(env_config, policy, user_seeds, run_seed,
                         episodes_per_user=per_user)[:episodes_per_point]
        rewards = np.zeros((len(trajs), env_config.horizon))
        for i, tr in enumerate(trajs):
            rewards[i, :len(tr)] = tr.rewards
        cum = np.concatenate([np.zeros((len(trajs), 1)), np.cumsum(rewards, axis=1)], axis=1)
        for L in lengths:
            mean, se = _mean_stderr(cum[:, L])
            out.append({"policy": name, "length": L, "mean": mean, "stderr": se})
    return out


def write_csv(records, path, columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for rec in records:
            w.writerow([repr(v) if isinstance(v, float) else v for v in (rec[c] for c in columns)])


# -- studies --------------------------------------------------------------------------

def coverage_study(env_config: EnvConfig, p_values=(0.5, 0.7, 0.9), n_users: int = 500,
                   run_seed: int = 0) -> list:
    """PCA coverage of states visited under each fixed behavioural policy (same users)."""
    out = []
    for p in p_values:
        trajs = simulate(env_config, FixedProb(p), range(n_users), run_seed)
        states = np.array([s.state for tr in trajs for s in tr.steps])
        proj = pca2(states)
        cov = coverage(proj)
        out.append({"policy": f"fixed:{p}", "p_a": float(p),
                    "generalized_variance": cov.generalized_variance,
                    "hull_area": cov.hull_area,
                    "explained_variance_1": float(proj.explained_variance[0]),
                    "explained_variance_2": float(proj.explained_variance[1]),
                    "n_states": len(states)})
    return out


def split_users(n_users: int, seed: int, train_fraction: float = 0.8):
    """User-level split of ``range(n_users)``; returns (train seeds, held-out seeds)."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x05E7]))
    order = rng.permutation(n_users)
    k = int(round(train_fraction * n_users))
    return sorted(order[:k].tolist()), sorted(order[k:].tolist())


def confidence_interval(values, level: float = 0.95):
    """Student-t interval for the mean of ``values``."""
    x = np.asarray(values, dtype=float)
    mean = float(x.mean())
    if len(x) < 2:
        return mean, mean, mean
    half = stats.t.ppf(0.5 + level / 2, len(x) - 1) * x.std(ddof=1) / math.sqrt(len(x))
    return mean, mean - half, mean + half


def exploration_study(env_config: EnvConfig, p_values=(0.5, 0.7, 0.9), seeds=range(20),
                      n_users: int = 250, dqn_config: DqnConfig = DqnConfig(),
                      eval_episodes_per_user: int = 20, lengths=None, cost_a: float = 1.0):
    """Train DQN on logs of each behavioural policy and measure held-out returns.

    For every seed the user pool ``range(n_users)`` is split 80/20; the same
    training users are logged under each ``FixedProb(p)``, and the greedy
    policy of each trained model is rolled out on the held-out users.
    Returns ``(per_seed, summary)`` record lists.
    """
    lengths = list(range(env_config.horizon + 1)) if lengths is None else list(lengths)
    per_seed = []
    for seed in seeds:
        train_users, eval_users = split_users(n_users, seed)
        for p in p_values:
            trajs = simulate(env_config, FixedProb(p), train_users, run_seed=seed)
            rows = trajectories_to_rows(trajs, env_config.horizon, cost_a)
            net, _ = train(rows, replace(dqn_config, seed=seed))
            curves = return_curves(env_config, {f"fixed:{p}": Greedy(net)}, lengths,
                                   eval_episodes_per_user * len(eval_users), eval_users,
                                   run_seed=10_000 + seed)
            for rec in curves:
                per_seed.append({**rec, "seed": seed, "p_a": float(p)})
    summary = []
    for p in p_values:
        for L in lengths:
            vals = [r["mean"] for r in per_seed if r["p_a"] == p and r["length"] == L]
            mean, lo, hi = confidence_interval(vals)
            se = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
            summary.append({"policy": f"fixed:{p}", "p_a": float(p), "length": L,
                            "mean": mean, "stderr": se, "ci_low": lo, "ci_high": hi,
                            "n_seeds": len(vals)})
    return per_seed, summary
