"""Pessimistic model selection and its two Lepski-style refinements."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .dataset import Dataset, partition_dataset
from .learners import CandidateConfig, FeatureSpec, fqi_fit, greedy_policy
from .mdp import Policy
from .ope import (
    CLIP_BOUNDS,
    SIGMA_FLOOR,
    CandidateEvaluation,
    evaluate_chunk,
    fit_ratio,
)


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {p}")
    return float(ndtri(p))


def z_upper(alpha: float) -> float:
    """``z_{alpha}``: the ``(1 - alpha)`` standard normal quantile (0 at ``alpha = 0.5``)."""
    return normal_quantile(1.0 - alpha)


@dataclass(frozen=True)
class SelectionConfig:
    n_chunks: int = 20
    alpha: float = 0.01
    refit_full: bool = True
    ratio_features: FeatureSpec = FeatureSpec("tabular")
    lambda_omega: float = 1e-6
    clip_bounds: tuple = CLIP_BOUNDS
    sigma_floor: float = SIGMA_FLOOR

    def __post_init__(self):
        if self.n_chunks < 2:
            raise ValueError(f"n_chunks must be >= 2, got {self.n_chunks}")
        # alpha = 1 is admitted: it zeroes the penalty and gives plain argmax
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")


def lepski_order(sigmas) -> np.ndarray:
    """Candidate indices sorted by sigma, largest first; ties keep index order."""
    return np.argsort(-np.asarray(sigmas, dtype=float), kind="stable")


def lepski_position(values, se, sigmas, alpha: float) -> tuple:
    """Return ``(order, k)``: the sigma ordering and the 1-based length of the
    longest prefix whose intervals ``value +- 2 z_{alpha/(2L)} se`` share a point."""
    values, se = np.asarray(values, dtype=float), np.asarray(se, dtype=float)
    L = values.size
    order = lepski_order(sigmas)
    half = 2.0 * z_upper(alpha / (2 * L)) * se
    lo, hi = -np.inf, np.inf
    k = 0
    for idx in order:
        lo = max(lo, values[idx] - half[idx])
        hi = min(hi, values[idx] + half[idx])
        if lo > hi:
            break
        k += 1
    return order, k


def combined_position(values, se, order, k: int, alpha: float) -> int:
    """0-based sorted position maximizing ``value - 2 z_{alpha/2} se`` within the first ``k``."""
    values, se = np.asarray(values, dtype=float), np.asarray(se, dtype=float)
    prefix = np.asarray(order[:k])
    bound = values[prefix] - 2.0 * z_upper(alpha / 2) * se[prefix]
    return int(np.argmax(bound))


@dataclass
class SelectionReport:
    """Per-candidate aggregates and the three selections.

    ``se = sigma * sqrt(O / (n_retained (O - 1)))``; ``lower = value - z_{alpha/2} se``
    is the pessimistic score and ``[value - h, value + h]`` with
    ``h = 2 z_{alpha/(2L)} se`` the Lepski interval. Chosen indices are 0-based
    candidate indices.
    """

    candidate_ids: list
    values: np.ndarray
    sigmas: np.ndarray
    n_retained: int
    n_chunks: int
    alpha: float
    evaluations: list = field(default_factory=list)
    selected_policy: Policy | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.sigmas = np.asarray(self.sigmas, dtype=float)
        if self.values.size == 0:
            raise ValueError("report needs at least one candidate")
        if self.values.shape != self.sigmas.shape or len(self.candidate_ids) != self.values.size:
            raise ValueError("candidate ids, values and sigmas must have equal length")

    @classmethod
    def from_evaluations(cls, evaluations, n_retained, n_chunks, alpha, **kwargs) -> "SelectionReport":
        return cls(
            [e.candidate_id for e in evaluations],
            [e.value_agg for e in evaluations],
            [e.sigma_agg for e in evaluations],
            n_retained,
            n_chunks,
            alpha,
            evaluations=list(evaluations),
            **kwargs,
        )

    @property
    def n_candidates(self) -> int:
        return self.values.size

    @property
    def se_factor(self) -> float:
        O = self.n_chunks
        return float(np.sqrt(O / (self.n_retained * (O - 1))))

    @property
    def se(self) -> np.ndarray:
        return self.sigmas * self.se_factor

    @property
    def z_half_alpha(self) -> float:
        return z_upper(self.alpha / 2)

    @property
    def z_bonferroni(self) -> float:
        return z_upper(self.alpha / (2 * self.n_candidates))

    @property
    def lower(self) -> np.ndarray:
        return self.values - self.z_half_alpha * self.se

    @property
    def intervals(self) -> np.ndarray:
        half = 2.0 * self.z_bonferroni * self.se
        return np.column_stack([self.values - half, self.values + half])

    @property
    def sigma_order(self) -> np.ndarray:
        return lepski_order(self.sigmas)

    @property
    def pms(self) -> int:
        return int(np.argmax(self.lower))

    @property
    def lepski_prefix(self) -> int:
        return lepski_position(self.values, self.se, self.sigmas, self.alpha)[1]

    @property
    def lepski(self) -> int:
        return lepski_select(self, self.alpha)

    @property
    def combined(self) -> int:
        return combined_select(self, self.alpha)

    @property
    def chosen(self) -> dict:
        return {"pms": self.pms, "lepski": self.lepski, "combined": self.combined}

    def top_by_lower(self, k: int) -> np.ndarray:
        """Indices of the ``k`` largest pessimistic scores, ties to lower index."""
        return np.argsort(-self.lower, kind="stable")[:k]

    def to_dict(self) -> dict:
        intervals = self.intervals
        return {
            "alpha": self.alpha,
            "n_chunks": self.n_chunks,
            "n_retained": self.n_retained,
            "se_factor": self.se_factor,
            "z_half_alpha": self.z_half_alpha,
            "z_bonferroni": self.z_bonferroni,
            "candidates": [
                {
                    "id": cid,
                    "value": float(self.values[i]),
                    "sigma": float(self.sigmas[i]),
                    "se": float(self.se[i]),
                    "lower": float(self.lower[i]),
                    "interval": [float(intervals[i, 0]), float(intervals[i, 1])],
                }
                for i, cid in enumerate(self.candidate_ids)
            ],
            "evaluations": [e.to_dict() for e in self.evaluations],
            "sigma_order": self.sigma_order.tolist(),
            "lepski_prefix": self.lepski_prefix,
            "chosen": self.chosen,
            "selected_policy": None if self.selected_policy is None else self.selected_policy.probs.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SelectionReport":
        cands = d["candidates"]
        policy = d.get("selected_policy")
        return cls(
            [c["id"] for c in cands],
            [c["value"] for c in cands],
            [c["sigma"] for c in cands],
            d["n_retained"],
            d["n_chunks"],
            d["alpha"],
            evaluations=[CandidateEvaluation.from_dict(e) for e in d.get("evaluations", [])],
            selected_policy=None if policy is None else Policy(policy),
        )


def lepski_select(report: SelectionReport, alpha: float) -> int:
    """Candidate at the end of the longest sigma-sorted prefix with intersecting intervals."""
    order, k = lepski_position(report.values, report.se, report.sigmas, alpha)
    # the first interval is never empty, so k >= 1
    return int(order[k - 1])


def combined_select(report: SelectionReport, alpha: float) -> int:
    """Best pessimistic score ``value - 2 z_{alpha/2} se`` within the Lepski prefix."""
    order, k = lepski_position(report.values, report.se, report.sigmas, alpha)
    return int(order[combined_position(report.values, report.se, order, k, alpha)])


def evaluate_candidates(
    dataset: Dataset,
    candidates: list,
    config: SelectionConfig,
    nu,
    n_actions: int,
):
    """Sequential chunked evaluation of every candidate.

    For ``o = 1 .. O-1`` each candidate is fit on the first ``o`` chunks and
    evaluated on chunk ``o + 1``. Returns the evaluations and the partition.
    """
    if not candidates:
        raise ValueError("need at least one candidate")
    nu = np.asarray(nu, dtype=float)
    S, A = nu.size, n_actions
    partition = partition_dataset(dataset, config.n_chunks)
    batches = [dataset.batch(idx) for idx in partition.chunks]
    cumulative = []
    running = None
    for b in batches[:-1]:
        running = b.stats(S, A) if running is None else running + b.stats(S, A)
        cumulative.append(running)
    ratio_map = config.ratio_features.build(S, A)

    evaluations = []
    for cand in candidates:
        ev = CandidateEvaluation(cand.id)
        for o, stats in enumerate(cumulative, start=1):
            q = fqi_fit(stats, cand, S, A)
            pi = greedy_policy(q)
            omega = fit_ratio(
                stats, pi, nu, ratio_map, cand.gamma, config.lambda_omega, config.clip_bounds
            )
            ev.chunk_evals.append(
                evaluate_chunk(o, q, pi, omega, batches[o], nu, cand.gamma, config.sigma_floor)
            )
        evaluations.append(ev)
    return evaluations, partition


def pessimistic_select(
    dataset: Dataset,
    candidates: list,
    config: SelectionConfig,
    nu,
    n_actions: int,
) -> SelectionReport:
    """Pick the candidate with the largest lower confidence limit of its value.

    ``nu`` is the reference initial-state distribution (its length fixes the
    number of states). If ``config.refit_full`` the chosen candidate is refit
    on the whole dataset and its greedy policy stored as ``selected_policy``.
    """
    evaluations, partition = evaluate_candidates(dataset, candidates, config, nu, n_actions)
    report = SelectionReport.from_evaluations(
        evaluations, partition.n_retained, config.n_chunks, config.alpha
    )
    if config.refit_full:
        cand: CandidateConfig = candidates[report.pms]
        q = fqi_fit(dataset.batch(), cand, len(nu), n_actions)
        report.selected_policy = greedy_policy(q)
    return report
