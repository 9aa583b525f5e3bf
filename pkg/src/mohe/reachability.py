"""Item reachability scores for items that were never bought.

Child proportions under a taxonomy node come from item counts; their
Dirichlet concentration is fitted to per-item soft label vectors with
Minka's fixed-point iteration.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy.special import digamma, polygamma

from .autograd import ConfigurationError
from .eup import EupTable
from .records import ItemRecord, join_path

log = logging.getLogger(__name__)

Path = tuple[str, ...]

PURCHASED_MASS = 0.95
DEFAULT_MASS = 0.8
SAMPLE_CLAMP = 1e-6


class DirichletConvergenceError(RuntimeError):
    def __init__(self, message: str, alpha: np.ndarray, iterations: int):
        super().__init__(message)
        self.alpha = alpha
        self.iterations = iterations


def inverse_digamma(y, tol: float = 1e-14, max_iter: int = 50) -> np.ndarray:
    """Solve digamma(x) = y by Newton's method from Minka's initial guess."""
    y = np.asarray(y, dtype=np.float64)
    with np.errstate(divide="ignore"):
        x = np.where(y >= -2.22, np.exp(y) + 0.5, -1.0 / (y - digamma(1.0)))
    for _ in range(max_iter):
        step = (digamma(x) - y) / polygamma(1, x)
        x = x - step
        if np.all(np.abs(step) <= tol * np.abs(x)):
            break
    return x


def _moment_init(p: np.ndarray) -> np.ndarray:
    mean = p.mean(axis=0)
    second = (p ** 2).mean(axis=0)
    var = second - mean ** 2
    ok = var > 1e-15
    if not ok.any():
        return mean.copy()
    concentration = np.median((mean[ok] - second[ok]) / var[ok])
    return mean * max(concentration, 1e-3)


def dirichlet_mle(samples, tol: float = 1e-8, max_iter: int = 1000) -> np.ndarray:
    """Maximum-likelihood Dirichlet concentration for points on the simplex.

    Iterates ``alpha_k <- inv_digamma(digamma(sum(alpha)) + mean_i log p_ik)``
    from a moment-matching start until the largest relative change drops
    below ``tol``.
    """
    p = np.asarray(samples, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 2:
        raise ValueError("need at least two sample vectors")
    if p.shape[1] < 2:
        raise ValueError("need at least two components")
    if np.any(p <= 0) or np.any(p >= 1):
        raise ValueError("sample entries must lie strictly inside (0, 1); smooth them first")
    mean_log = np.log(p).mean(axis=0)
    alpha = _moment_init(p)
    for it in range(1, max_iter + 1):
        new = inverse_digamma(digamma(alpha.sum()) + mean_log)
        if not np.all(np.isfinite(new)) or np.any(new <= 0):
            raise DirichletConvergenceError("Dirichlet fixed point left the valid domain", alpha, it)
        change = np.max(np.abs(new - alpha) / new)
        alpha = new
        if change < tol:
            return alpha
    raise DirichletConvergenceError(
        f"Dirichlet fixed point did not converge in {max_iter} iterations", alpha, max_iter)


def dirichlet_newton(samples, alpha0, tol: float = 1e-8, max_iter: int = 100) -> np.ndarray:
    """Newton's method on the Dirichlet log-likelihood from ``alpha0``.

    The Hessian is a diagonal plus a constant, so the step is solved in
    O(K). Steps that would leave the positive orthant are halved.
    """
    p = np.asarray(samples, dtype=np.float64)
    mean_log = np.log(p).mean(axis=0)
    alpha = np.asarray(alpha0, dtype=np.float64).copy()
    for it in range(1, max_iter + 1):
        total = alpha.sum()
        grad = digamma(total) - digamma(alpha) + mean_log
        q = -polygamma(1, alpha)
        z = polygamma(1, total)
        b = (grad / q).sum() / (1.0 / z + (1.0 / q).sum())
        step = (grad - b) / q
        new = alpha - step
        while np.any(new <= 0):
            step = step / 2
            new = alpha - step
        change = np.max(np.abs(new - alpha) / new)
        alpha = new
        if change < tol:
            return alpha
    raise DirichletConvergenceError(f"Newton refinement did not converge in {max_iter} iterations", alpha, max_iter)


def estimate_theta(counts) -> np.ndarray:
    """Child proportions from item counts; any empty child triggers add-one smoothing."""
    c = np.asarray(counts, dtype=np.float64)
    if c.size == 0 or c.sum() <= 0:
        raise ValueError("node has no items")
    if np.any(c == 0):
        c = c + 1.0
    return c / c.sum()


def build_eta(k: int, n_children: int, purchased: bool, rng: np.random.Generator,
              purchased_mass: float = PURCHASED_MASS, default_mass: float = DEFAULT_MASS) -> np.ndarray:
    """Soft label vector putting most mass on child ``k``.

    Purchased (or carted) items keep ``purchased_mass`` and spread the rest
    with Dirichlet(1, ..., 1) weights; other items keep ``default_mass`` and
    spread the rest with normalized uniform draws.
    """
    if not 0 <= k < n_children:
        raise ValueError(f"child index {k} outside [0, {n_children})")
    if n_children == 1:
        return np.ones(1)
    mass = purchased_mass if purchased else default_mass
    if purchased:
        split = rng.dirichlet(np.ones(n_children - 1))
    else:
        draws = rng.random(n_children - 1)
        split = draws / draws.sum()
    eta = np.empty(n_children)
    eta[k] = mass
    eta[np.arange(n_children) != k] = split * (1.0 - mass)
    return eta


def smooth_samples(samples: np.ndarray, clamp: float = SAMPLE_CLAMP) -> np.ndarray:
    s = np.clip(samples, clamp, 1.0 - clamp)
    return s / s.sum(axis=1, keepdims=True)


@dataclass
class NodeProportions:
    node: Path
    children: list[Path]
    theta: np.ndarray
    alpha: np.ndarray


def taxonomy_children(items: Iterable[ItemRecord], level: int) -> dict[Path, list[Path]]:
    """Level-``level`` node -> sorted list of its children seen in ``items``."""
    children: dict[Path, set[Path]] = defaultdict(set)
    for it in items:
        if len(it.genre_path) > level:
            children[it.genre_path[:level]].add(it.genre_path[:level + 1])
    return {n: sorted(c) for n, c in sorted(children.items())}


def fit_node_proportions(train_items: list[ItemRecord], level: int, seed: int = 0,
                         taxonomy: Mapping[Path, list[Path]] | None = None,
                         purchased_mass: float = PURCHASED_MASS,
                         default_mass: float = DEFAULT_MASS) -> dict[Path, NodeProportions]:
    """Theta and alpha for every level-``level`` node with training items."""
    taxonomy = taxonomy or taxonomy_children(train_items, level)
    rng = np.random.default_rng(seed)
    by_node: dict[Path, list[ItemRecord]] = defaultdict(list)
    for it in sorted(train_items, key=lambda r: r.id):
        if len(it.genre_path) > level:
            by_node[it.genre_path[:level]].append(it)
    out = {}
    for node, children in taxonomy.items():
        members = by_node.get(node)
        if not members:
            continue
        pos = {c: i for i, c in enumerate(children)}
        ks = [pos[it.genre_path[:level + 1]] for it in members]
        theta = estimate_theta(np.bincount(ks, minlength=len(children)))
        if len(children) == 1:
            alpha = np.ones(1)
        else:
            etas = np.array([build_eta(k, len(children), it.purchased or it.added_to_cart, rng,
                                       purchased_mass, default_mass) for k, it in zip(ks, members)])
            # identical soft labels put the likelihood maximum at infinite concentration
            if len(np.unique(etas, axis=0)) < 2:
                log.warning("node %s has fewer than two distinct soft labels; using a flat Dirichlet",
                            join_path(node))
                out[node] = NodeProportions(node, children, theta, np.ones(len(children)))
                continue
            samples = smooth_samples(etas)
            try:
                alpha = dirichlet_mle(samples)
            except DirichletConvergenceError as slow:
                # the fixed point crawls at high concentration; finish from its last iterate
                try:
                    alpha = dirichlet_newton(samples, slow.alpha)
                except DirichletConvergenceError as exc:
                    raise DirichletConvergenceError(f"{join_path(node)}: {exc}", exc.alpha,
                                                    slow.iterations + exc.iterations) from exc
        out[node] = NodeProportions(node, children, theta, alpha)
    return out


def normalized_eup(eup: EupTable, level: int) -> dict[Path, float]:
    """Each level-``level`` path's EuP divided by the sum over its siblings."""
    paths = [p for p in eup if len(p) == level]
    sums: dict[Path, float] = defaultdict(float)
    for p in paths:
        sums[p[:-1]] += eup[p].score
    return {p: (eup[p].score / sums[p[:-1]] if sums[p[:-1]] > 0 else 0.0) for p in paths}


@dataclass
class ReachabilityReport:
    level: int
    scores: dict[Path, list[float]] = field(default_factory=dict)
    skipped_no_eup: int = 0
    skipped_interacted: int = 0
    skipped_shallow: int = 0

    @property
    def node_means(self) -> dict[Path, float]:
        return {c: float(np.mean(s)) for c, s in self.scores.items()}

    @property
    def mean_score(self) -> float:
        flat = [x for s in self.scores.values() for x in s]
        return float(np.mean(flat)) if flat else 0.0

    @property
    def count(self) -> int:
        return sum(len(s) for s in self.scores.values())

    def write_table(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("child_path\tmean_score\tcount\n")
            for child, scores in sorted(self.scores.items()):
                fh.write(f"{join_path(child)}\t{np.mean(scores):.6g}\t{len(scores)}\n")


def item_reachability(heldout: Iterable[ItemRecord], predictions: Mapping[str, Path], eup: EupTable,
                      proportions: Mapping[Path, NodeProportions], level: int) -> ReachabilityReport:
    """Score = [prediction right at ``level``] * EuP-hat * theta_c * theta_c ** (alpha_c - 1).

    Items that were purchased or carted are skipped, as are items whose
    genre path stops at ``level`` or whose level-``level`` path has no EuP.
    """
    eup_hat = normalized_eup(eup, level)
    report = ReachabilityReport(level)
    for it in sorted(heldout, key=lambda r: r.id):
        if it.purchased or it.added_to_cart:
            report.skipped_interacted += 1
            continue
        if len(it.genre_path) <= level:
            report.skipped_shallow += 1
            continue
        node, child = it.genre_path[:level], it.genre_path[:level + 1]
        props = proportions.get(node)
        if props is None:
            raise ConfigurationError(f"no theta/alpha for node {join_path(node)!r}")
        try:
            m = props.children.index(child)
        except ValueError:
            raise ConfigurationError(f"{join_path(child)!r} is not a known child of {join_path(node)!r}") from None
        if node not in eup_hat:
            report.skipped_no_eup += 1
            continue
        if it.id not in predictions:
            raise KeyError(f"no prediction for item {it.id!r}")
        correct = tuple(predictions[it.id][:level]) == node
        theta = props.theta[m]
        score = float(correct) * eup_hat[node] * theta * theta ** (props.alpha[m] - 1.0)
        report.scores.setdefault(child, []).append(score)
    return report


def compare_levels(train_items: list[ItemRecord], heldout: list[ItemRecord],
                   predictions: Mapping[str, Mapping[str, Path]], eup_by_level: Mapping[int, EupTable],
                   levels: tuple[int, int] = (3, 4), seed: int = 0) -> list[dict]:
    """Mean reachability per classifier at two evaluation levels."""
    taxonomy_items = [*train_items, *heldout]
    fitted = {l: fit_node_proportions(train_items, l, seed, taxonomy_children(taxonomy_items, l))
              for l in levels}
    rows = []
    for name, preds in predictions.items():
        means = [item_reachability(heldout, preds, eup_by_level[l], fitted[l], l).mean_score for l in levels]
        rows.append({"classifier": name, "levels": list(levels), "means": means, "gain": means[1] - means[0]})
    return rows


def format_comparison(rows: list[dict], leaf_level: int) -> str:
    """Plain-text table: classifier, R_a, R_b and the gain, in percent."""
    a, b = rows[0]["levels"]
    head = (f"Classifiers\tR{a}:n_{{l={a}}}>..>n_{{L={leaf_level}}}\t"
            f"R{b}:n_{{l={b}}}>..>n_{{L={leaf_level}}}\tR{b}-R{a}")
    lines = [head]
    for r in rows:
        lo, hi = r["means"]
        lines.append(f"{r['classifier']}\t{100 * lo:.3f}%\t{100 * hi:.3f}%\t{100 * r['gain']:.3f}%")
    return "\n".join(lines) + "\n"
