"""Ranking metrics (P@1, MAP, MRR), the argmax answer selector, and
head-teacher agreement analysis.

All-negative questions are skipped by every metric (average precision is
undefined without positives) and counted in ``num_questions_skipped``.
Ties break toward the lowest original candidate index, so every metric is
deterministic and invariant under strictly increasing score transforms.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError


@dataclass
class ScoredQuestion:
    question_id: str
    candidate_ids: list[str]
    labels: list[int]
    scores: list[float]

    def __post_init__(self):
        if not (len(self.candidate_ids) == len(self.labels) == len(self.scores)):
            raise ContractError(
                f"question {self.question_id!r}: candidate/label/score lengths differ")
        if len(self.candidate_ids) == 0:
            raise ContractError(f"question {self.question_id!r} has no candidates")
        if not np.all(np.isfinite(self.scores)):
            raise ContractError(f"question {self.question_id!r} has non-finite scores")

    def has_positive(self) -> bool:
        return any(lbl == 1 for lbl in self.labels)


def select_answer(sq: ScoredQuestion) -> str:
    """Id of the top-scored candidate; ties go to the lowest index."""
    best = int(np.argmax(sq.scores))  # argmax returns the first maximal index
    return sq.candidate_ids[best]


def _ranked_labels(sq: ScoredQuestion) -> list[int]:
    # Stable sort by descending score keeps original index order on ties.
    order = np.argsort(-np.asarray(sq.scores), kind="stable")
    return [sq.labels[i] for i in order]


def _average_precision(ranked: list[int]) -> float:
    hits = 0
    precisions = []
    for rank, label in enumerate(ranked, start=1):
        if label == 1:
            hits += 1
            precisions.append(hits / rank)
    return sum(precisions) / len(precisions)


def _reciprocal_rank(ranked: list[int]) -> float:
    for rank, label in enumerate(ranked, start=1):
        if label == 1:
            return 1.0 / rank
    raise AssertionError("called on an all-negative question")


@dataclass
class RankingReport:
    precision_at_1: float
    mean_average_precision: float
    mean_reciprocal_rank: float
    num_questions_evaluated: int
    num_questions_skipped: int

    def to_dict(self) -> dict:
        return {
            "p_at_1": self.precision_at_1,
            "map": self.mean_average_precision,
            "mrr": self.mean_reciprocal_rank,
            "num_questions_evaluated": self.num_questions_evaluated,
            "num_questions_skipped": self.num_questions_skipped,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")


def evaluate_ranking(questions: list[ScoredQuestion]) -> RankingReport:
    evaluated = [q for q in questions if q.has_positive()]
    skipped = len(questions) - len(evaluated)
    if not evaluated:
        return RankingReport(0.0, 0.0, 0.0, 0, skipped)
    p1_hits = 0
    aps = []
    rrs = []
    for sq in evaluated:
        picked = select_answer(sq)
        if sq.labels[sq.candidate_ids.index(picked)] == 1:
            p1_hits += 1
        ranked = _ranked_labels(sq)
        aps.append(_average_precision(ranked))
        rrs.append(_reciprocal_rank(ranked))
    n = len(evaluated)
    return RankingReport(p1_hits / n, sum(aps) / n, sum(rrs) / n, n, skipped)


def precision_at_1(questions: list[ScoredQuestion]) -> float:
    return evaluate_ranking(questions).precision_at_1


def mean_average_precision(questions: list[ScoredQuestion]) -> float:
    return evaluate_ranking(questions).mean_average_precision


def mean_reciprocal_rank(questions: list[ScoredQuestion]) -> float:
    return evaluate_ranking(questions).mean_reciprocal_rank


def shuffled_score_baseline(questions: list[ScoredQuestion], seed: int = 0,
                            trials: int = 20) -> RankingReport:
    """Expected metrics under random scoring, by averaging shuffled trials."""
    rng = np.random.default_rng(seed)
    reports = []
    for _ in range(trials):
        shuffled = [
            ScoredQuestion(q.question_id, q.candidate_ids, q.labels,
                           list(rng.random(len(q.scores))))
            for q in questions
        ]
        reports.append(evaluate_ranking(shuffled))
    n = len(reports)
    return RankingReport(
        sum(r.precision_at_1 for r in reports) / n,
        sum(r.mean_average_precision for r in reports) / n,
        sum(r.mean_reciprocal_rank for r in reports) / n,
        reports[0].num_questions_evaluated,
        reports[0].num_questions_skipped,
    )


# ---------------------------------------------------------------------------
# Head-teacher agreement: among questions the head answers correctly, the
# fraction where the teacher picks the same candidate.
# ---------------------------------------------------------------------------

def agreement(head_questions: list[ScoredQuestion],
              teacher_questions: list[ScoredQuestion]) -> float | None:
    """Returns None (undefined) when the head answers nothing correctly."""
    if len(head_questions) != len(teacher_questions):
        raise ContractError("head and teacher scored different question sets")
    teacher_by_id = {q.question_id: q for q in teacher_questions}
    if set(teacher_by_id) != {q.question_id for q in head_questions}:
        raise ContractError("head and teacher scored different question sets")
    numerator = 0
    denominator = 0
    for hq in head_questions:
        if not hq.has_positive():
            continue
        tq = teacher_by_id[hq.question_id]
        if sorted(tq.candidate_ids) != sorted(hq.candidate_ids):
            raise ContractError(f"candidate sets differ for question {hq.question_id!r}")
        head_pick = select_answer(hq)
        if hq.labels[hq.candidate_ids.index(head_pick)] != 1:
            continue
        denominator += 1
        if select_answer(tq) == head_pick:
            numerator += 1
    if denominator == 0:
        return None
    return numerator / denominator


@dataclass
class AgreementMatrix:
    head_ids: list[str]
    teacher_ids: list[str]
    values: list[list[float | None]]
    head_p_at_1: dict[str, float] = field(default_factory=dict)
    teacher_p_at_1: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "head_ids": self.head_ids,
            "teacher_ids": self.teacher_ids,
            "values": self.values,
            "head_p_at_1": self.head_p_at_1,
            "teacher_p_at_1": self.teacher_p_at_1,
        }

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")

    def save_csv(self, path: str | Path) -> None:
        """Plot-data emitter: one row per head, one column per teacher."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["head"] + self.teacher_ids)
            for head_id, row in zip(self.head_ids, self.values):
                writer.writerow([head_id] + ["" if v is None else f"{v:.6f}" for v in row])


def agreement_matrix(head_scores: dict[str, list[ScoredQuestion]],
                     teacher_scores: dict[str, list[ScoredQuestion]]) -> AgreementMatrix:
    head_ids = list(head_scores)
    teacher_ids = list(teacher_scores)
    values = [[agreement(head_scores[h], teacher_scores[t]) for t in teacher_ids]
              for h in head_ids]
    return AgreementMatrix(
        head_ids=head_ids,
        teacher_ids=teacher_ids,
        values=values,
        head_p_at_1={h: precision_at_1(head_scores[h]) for h in head_ids},
        teacher_p_at_1={t: precision_at_1(teacher_scores[t]) for t in teacher_ids},
    )
