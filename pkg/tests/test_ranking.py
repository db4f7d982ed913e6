import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rankdistill.errors import ContractError
from rankdistill.ranking import (
    AgreementMatrix,
    ScoredQuestion,
    agreement,
    agreement_matrix,
    evaluate_ranking,
    mean_average_precision,
    mean_reciprocal_rank,
    precision_at_1,
    select_answer,
    shuffled_score_baseline,
)


def sq(labels, scores, qid="q"):
    ids = [f"{qid}_c{i}" for i in range(len(labels))]
    return ScoredQuestion(qid, ids, list(labels), [float(s) for s in scores])


# ---------------------------------------------------------------------------
# Brute-force reference (independent of the library's sort-based path):
# a candidate's rank is 1 + the number of candidates that beat it, where
# "beats" means higher score, or equal score at a lower index.
# ---------------------------------------------------------------------------

def brute_rank(scores, idx):
    return 1 + sum(
        1 for j, s in enumerate(scores)
        if s > scores[idx] or (s == scores[idx] and j < idx)
    )


def brute_metrics(questions):
    p1 = []
    aps = []
    rrs = []
    skipped = 0
    for q in questions:
        if 1 not in q.labels:
            skipped += 1
            continue
        ranks = [brute_rank(q.scores, i) for i in range(len(q.scores))]
        top_idx = ranks.index(1)
        p1.append(1.0 if q.labels[top_idx] == 1 else 0.0)
        pos_ranks = sorted(r for r, lbl in zip(ranks, q.labels) if lbl == 1)
        precs = [sum(1 for r2 in pos_ranks if r2 <= r) / r for r in pos_ranks]
        aps.append(sum(precs) / len(precs))
        rrs.append(1.0 / min(pos_ranks))
    n = len(p1)
    return (sum(p1) / n, sum(aps) / n, sum(rrs) / n, n, skipped)


def random_questions(rng, count, max_candidates=10):
    questions = []
    for i in range(count):
        n = int(rng.integers(1, max_candidates + 1))
        labels = (rng.random(n) < 0.3).astype(int).tolist()
        # Integer-ish scores force plenty of ties.
        scores = rng.integers(0, 5, size=n).astype(float)
        scores += rng.random(n) * (rng.random() < 0.5)
        questions.append(sq(labels, scores, qid=f"q{i}"))
    return questions


class TestSelectAnswer:
    def test_single_candidate(self):
        assert select_answer(sq([1], [0.4])) == "q_c0"

    def test_argmax(self):
        assert select_answer(sq([0, 1, 0], [0.2, 0.9, 0.1])) == "q_c1"

    def test_tie_breaks_to_lowest_index(self):
        assert select_answer(sq([0, 1, 1], [0.5, 0.5, 0.5])) == "q_c0"


class TestPrecisionAt1:
    def test_all_top_positive(self):
        qs = [sq([1, 0], [0.9, 0.1], qid=f"q{i}") for i in range(5)]
        assert precision_at_1(qs) == 1.0

    def test_top_negative_contributes_zero(self):
        assert precision_at_1([sq([1, 0, 0], [0.1, 0.9, 0.8])]) == 0.0

    def test_matches_brute_force_on_random_questions(self):
        qs = random_questions(np.random.default_rng(0), 100)
        assert abs(precision_at_1(qs) - brute_metrics(qs)[0]) < 1e-12


class TestMeanAveragePrecision:
    def test_single_positive_ranked_first(self):
        assert mean_average_precision([sq([1], [0.5])]) == 1.0

    def test_hand_case_one_zero_one(self):
        # Ranked labels [1, 0, 1] -> AP = (1/1 + 2/3) / 2 = 5/6.
        q = sq([1, 0, 1], [0.9, 0.5, 0.1])
        assert mean_average_precision([q]) == pytest.approx(5 / 6, abs=1e-15)

    def test_invariant_under_question_permutation(self):
        qs = random_questions(np.random.default_rng(1), 30)
        forward = mean_average_precision(qs)
        backward = mean_average_precision(list(reversed(qs)))
        assert forward == pytest.approx(backward, abs=1e-15)


class TestMeanReciprocalRank:
    def test_first_ranked_positive(self):
        assert mean_reciprocal_rank([sq([0, 1], [0.1, 0.9])]) == 1.0

    def test_third_ranked_positive(self):
        assert mean_reciprocal_rank([sq([0, 0, 1], [0.9, 0.8, 0.1])]) == pytest.approx(1 / 3)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_p_at_1_never_exceeds_mrr(self, seed):
        qs = random_questions(np.random.default_rng(seed), 20)
        report = evaluate_ranking(qs)
        assert report.precision_at_1 <= report.mean_reciprocal_rank + 1e-12
        assert report.mean_reciprocal_rank <= 1.0


class TestOracleEquivalence:
    def test_all_metrics_match_brute_force(self):
        qs = random_questions(np.random.default_rng(42), 500)
        report = evaluate_ranking(qs)
        b_p1, b_map, b_mrr, b_n, b_skip = brute_metrics(qs)
        assert abs(report.precision_at_1 - b_p1) < 1e-12
        assert abs(report.mean_average_precision - b_map) < 1e-12
        assert abs(report.mean_reciprocal_rank - b_mrr) < 1e-12
        assert report.num_questions_evaluated == b_n
        assert report.num_questions_skipped == b_skip

    def test_perfect_ranking_scores_one(self):
        rng = np.random.default_rng(3)
        qs = []
        for i in range(20):
            n = int(rng.integers(2, 8))
            n_pos = int(rng.integers(1, n))
            labels = [1] * n_pos + [0] * (n - n_pos)
            scores = sorted(rng.random(n), reverse=True)
            qs.append(sq(labels, scores, qid=f"q{i}"))
        report = evaluate_ranking(qs)
        assert report.precision_at_1 == 1.0
        assert report.mean_average_precision == 1.0
        assert report.mean_reciprocal_rank == 1.0

    def test_skip_accounting(self):
        qs = [sq([0, 0], [0.1, 0.2], "a"), sq([1, 0], [0.5, 0.1], "b"),
              sq([0], [0.3], "c")]
        report = evaluate_ranking(qs)
        assert report.num_questions_evaluated == 1
        assert report.num_questions_skipped == 2
        assert report.num_questions_evaluated + report.num_questions_skipped == len(qs)


@given(st.integers(0, 2**31 - 1),
       st.sampled_from(["affine", "exp", "cube"]))
@settings(max_examples=40, deadline=None)
def test_metrics_invariant_under_monotone_transforms(seed, kind):
    rng = np.random.default_rng(seed)
    qs = random_questions(rng, 15)
    transform = {
        "affine": lambda s: 3.0 * s + 1.0,
        "exp": lambda s: np.exp(s / 10.0),
        "cube": lambda s: s ** 3 + 0.5 * s,
    }[kind]
    mapped = [ScoredQuestion(q.question_id, q.candidate_ids, q.labels,
                             [float(transform(s)) for s in q.scores]) for q in qs]
    base = evaluate_ranking(qs)
    moved = evaluate_ranking(mapped)
    assert base.precision_at_1 == pytest.approx(moved.precision_at_1, abs=1e-12)
    assert base.mean_average_precision == pytest.approx(moved.mean_average_precision, abs=1e-12)
    assert base.mean_reciprocal_rank == pytest.approx(moved.mean_reciprocal_rank, abs=1e-12)
    for q, m in zip(qs, mapped):
        assert select_answer(q) == select_answer(m)


def test_shuffled_baseline_is_far_below_perfect():
    rng = np.random.default_rng(5)
    qs = []
    for i in range(50):
        labels = [1] + [0] * 19
        qs.append(sq(labels, rng.random(20), qid=f"q{i}"))
    baseline = shuffled_score_baseline(qs, seed=0, trials=10)
    assert baseline.mean_average_precision < 0.4


class TestAgreement:
    def test_self_agreement_is_one(self):
        qs = random_questions(np.random.default_rng(6), 40)
        if all(not q.has_positive() for q in qs):  # pragma: no cover
            pytest.skip("degenerate draw")
        value = agreement(qs, qs)
        assert value == 1.0

    def test_half_agreement(self):
        # Head is correct on q1 and q2; teacher picks the same only on q1.
        head = [sq([1, 0], [0.9, 0.1], "q1"), sq([0, 1], [0.1, 0.9], "q2")]
        teacher = [sq([1, 0], [0.8, 0.2], "q1"), sq([0, 1], [0.9, 0.1], "q2")]
        assert agreement(head, teacher) == 0.5

    def test_undefined_when_head_never_correct(self):
        head = [sq([0, 1], [0.9, 0.1], "q1")]
        teacher = [sq([0, 1], [0.9, 0.1], "q1")]
        assert agreement(head, teacher) is None

    def test_question_set_mismatch_rejected(self):
        head = [sq([1], [0.5], "q1")]
        teacher = [sq([1], [0.5], "q2")]
        with pytest.raises(ContractError):
            agreement(head, teacher)

    def test_matrix_and_csv(self, tmp_path):
        rng = np.random.default_rng(7)
        qs_a = random_questions(rng, 30)
        qs_b = [ScoredQuestion(q.question_id, q.candidate_ids, q.labels,
                               list(rng.random(len(q.scores)))) for q in qs_a]
        matrix = agreement_matrix({"head0": qs_a, "head1": qs_b},
                                  {"teacherA": qs_a, "teacherB": qs_b})
        assert matrix.values[0][0] == 1.0
        assert matrix.values[1][1] == 1.0
        for row in matrix.values:
            for v in row:
                assert v is None or 0.0 <= v <= 1.0
        out = tmp_path / "agreement.csv"
        matrix.save_csv(out)
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "head,teacherA,teacherB"
        assert len(lines) == 3
        matrix.save_json(tmp_path / "agreement.json")
