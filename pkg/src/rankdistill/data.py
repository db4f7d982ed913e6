"""Question/candidate dataset model, JSONL persistence, tokenization,
batching, and a synthetic generator with controllable difficulty.

The generator builds each question from a latent topic: the question
carries topic-specific words, correct answers carry that topic's marker
word, and distractors carry markers of other topics (or plain filler).
``noise_rate`` corrupts surface cues while leaving labels untouched, so
the task stays learnable but not saturable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ContractError

# Reserved token ids; everything else starts at 5.
PAD_ID = 0
BOS_ID = 1
SEP_ID = 2
EOS_ID = 3
UNK_ID = 4
RESERVED_TOKENS = {"<pad>": PAD_ID, "<bos>": BOS_ID, "<sep>": SEP_ID,
                   "<eos>": EOS_ID, "<unk>": UNK_ID}

SPLIT_NAMES = ("train", "dev", "test")


@dataclass
class Candidate:
    example_id: str
    text: str
    label: int


@dataclass
class Question:
    question_id: str
    text: str
    candidates: list[Candidate]

    def has_positive(self) -> bool:
        return any(c.label == 1 for c in self.candidates)


@dataclass
class AS2Dataset:
    train: list[Question]
    dev: list[Question]
    test: list[Question]
    vocabulary: dict[str, int]

    def split(self, name: str) -> list[Question]:
        if name not in SPLIT_NAMES:
            raise ConfigurationError(f"unknown split {name!r}, expected one of {SPLIT_NAMES}")
        return getattr(self, name)

    def validate(self) -> None:
        seen_q: dict[str, str] = {}
        seen_e: set[str] = set()
        for split_name in SPLIT_NAMES:
            for q in self.split(split_name):
                if q.question_id in seen_q:
                    raise ContractError(
                        f"question id {q.question_id!r} appears in both "
                        f"{seen_q[q.question_id]!r} and {split_name!r}")
                seen_q[q.question_id] = split_name
                if not q.candidates:
                    raise ContractError(f"question {q.question_id!r} has no candidates")
                for c in q.candidates:
                    if c.example_id in seen_e:
                        raise ContractError(f"duplicate example id {c.example_id!r}")
                    seen_e.add(c.example_id)
                if split_name == "train" and not q.has_positive():
                    raise ContractError(
                        f"train question {q.question_id!r} has no positive candidate")


@dataclass(frozen=True)
class GeneratorConfig:
    """Synthetic benchmark knobs.

    ``positive_rate`` defaults to 1/25; ``IMBALANCE_STRESS_RATE`` mirrors a
    one-in-400 imbalance regime. ``noise_rate`` is the probability that a
    candidate's surface form misleads (a positive loses its marker, or a
    topical distractor gains the true one).
    """

    num_questions: tuple[int, int, int] = (200, 50, 50)
    candidates_per_question: int = 20
    positive_rate: float = 1.0 / 25.0
    noise_rate: float = 0.1
    vocab_size: int = 200
    seed: int = 0
    question_len: tuple[int, int] = (3, 6)
    candidate_len: tuple[int, int] = (4, 9)

    def __post_init__(self):
        if not 0.0 < self.positive_rate <= 1.0:
            raise ConfigurationError(f"positive_rate must be in (0, 1], got {self.positive_rate}")
        if not 0.0 <= self.noise_rate < 1.0:
            raise ConfigurationError(f"noise_rate must be in [0, 1), got {self.noise_rate}")
        if self.vocab_size < 30:
            raise ConfigurationError("vocab_size must be at least 30")
        if any(n <= 0 for n in self.num_questions) or self.candidates_per_question < 1:
            raise ConfigurationError("question and candidate counts must be positive")


IMBALANCE_STRESS_RATE = 1.0 / 400.0


def benchmark_config(seed: int = 7) -> GeneratorConfig:
    """The standard desk benchmark: generous enough to separate strategies,
    small enough for minutes-scale runs."""
    return GeneratorConfig(num_questions=(600, 100, 200), candidates_per_question=20,
                           positive_rate=0.1, noise_rate=0.15, vocab_size=200, seed=seed)


def _build_word_pools(vocab_size: int) -> tuple[list[list[str]], list[str], list[str]]:
    """Split the word budget into topics (2 question words + 1 marker each)
    and shared filler."""
    budget = vocab_size - len(RESERVED_TOKENS)
    num_topics = max(4, budget // 5)
    num_filler = budget - 3 * num_topics
    if num_filler < 4:
        num_topics = (budget - 4) // 3
        num_filler = budget - 3 * num_topics
    topic_words = [[f"qw{t}a", f"qw{t}b"] for t in range(num_topics)]
    markers = [f"ans{t}" for t in range(num_topics)]
    filler = [f"w{i}" for i in range(num_filler)]
    return topic_words, markers, filler


def build_vocabulary(cfg: GeneratorConfig) -> dict[str, int]:
    topic_words, markers, filler = _build_word_pools(cfg.vocab_size)
    vocab = dict(RESERVED_TOKENS)
    for word in [w for pair in topic_words for w in pair] + markers + filler:
        vocab[word] = len(vocab)
    return vocab


def generate(cfg: GeneratorConfig) -> AS2Dataset:
    """Deterministic synthetic dataset; byte-identical output per seed.

    Train questions are resampled until they carry at least one positive
    (all-negative questions are kept in dev/test only).
    """
    rng = np.random.default_rng(cfg.seed)
    topic_words, markers, filler = _build_word_pools(cfg.vocab_size)
    num_topics = len(markers)
    vocab = build_vocabulary(cfg)

    def make_question(qid: str, require_positive: bool) -> Question:
        while True:
            topic = int(rng.integers(num_topics))
            q_extra = rng.choice(filler, size=int(rng.integers(*cfg.question_len)) - 2)
            q_text = " ".join(topic_words[topic] + list(q_extra))
            labels = (rng.random(cfg.candidates_per_question) < cfg.positive_rate).astype(int)
            if require_positive and labels.sum() == 0:
                continue
            candidates = []
            for j, label in enumerate(labels):
                length = int(rng.integers(*cfg.candidate_len))
                words = list(rng.choice(filler, size=length))
                misleading = rng.random() < cfg.noise_rate
                if label == 1:
                    if not misleading:  # corrupted positives keep only filler
                        words[int(rng.integers(length))] = markers[topic]
                else:
                    topical = rng.random() < 0.6
                    if topical:
                        wrong = int(rng.integers(num_topics - 1))
                        wrong += wrong >= topic
                        words[int(rng.integers(length))] = markers[wrong]
                    if misleading:  # distractor dressed up with the true marker
                        words[int(rng.integers(length))] = markers[topic]
                candidates.append(Candidate(example_id=f"{qid}_c{j}",
                                            text=" ".join(words), label=int(label)))
            return Question(question_id=qid, text=q_text, candidates=candidates)

    splits = {}
    for split_name, count in zip(SPLIT_NAMES, cfg.num_questions):
        require_positive = split_name == "train"
        splits[split_name] = [make_question(f"q_{split_name}_{i:05d}", require_positive)
                              for i in range(count)]
    ds = AS2Dataset(train=splits["train"], dev=splits["dev"], test=splits["test"],
                    vocabulary=vocab)
    ds.validate()
    return ds


# ---------------------------------------------------------------------------
# JSONL persistence. One Question per line:
#   {"question_id": str, "text": str,
#    "candidates": [{"example_id": str, "text": str, "label": 0|1}]}
# A dataset directory holds train/dev/test.jsonl plus vocab.json.
# ---------------------------------------------------------------------------

def save_jsonl(questions: list[Question], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in questions:
            record = {
                "question_id": q.question_id,
                "text": q.text,
                "candidates": [
                    {"example_id": c.example_id, "text": c.text, "label": c.label}
                    for c in q.candidates
                ],
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_jsonl(path: str | Path) -> list[Question]:
    questions: list[Question] = []
    seen_q: set[str] = set()
    seen_e: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ContractError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            try:
                qid = record["question_id"]
                text = record["text"]
                raw_candidates = record["candidates"]
            except (KeyError, TypeError) as exc:
                raise ContractError(f"{path}:{lineno}: missing field {exc}") from exc
            if qid in seen_q:
                raise ContractError(f"{path}:{lineno}: duplicate question id {qid!r}")
            seen_q.add(qid)
            if not raw_candidates:
                raise ContractError(f"{path}:{lineno}: empty candidate list")
            candidates = []
            for c in raw_candidates:
                if c.get("label") not in (0, 1):
                    raise ContractError(
                        f"{path}:{lineno}: label must be 0 or 1, got {c.get('label')!r}")
                if c["example_id"] in seen_e:
                    raise ContractError(
                        f"{path}:{lineno}: duplicate example id {c['example_id']!r}")
                seen_e.add(c["example_id"])
                candidates.append(Candidate(example_id=c["example_id"],
                                            text=c["text"], label=int(c["label"])))
            questions.append(Question(question_id=qid, text=text, candidates=candidates))
    return questions


def save_dataset(ds: AS2Dataset, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for split_name in SPLIT_NAMES:
        save_jsonl(ds.split(split_name), out / f"{split_name}.jsonl")
    with open(out / "vocab.json", "w", encoding="utf-8") as fh:
        json.dump(ds.vocabulary, fh, sort_keys=True)


def load_dataset(in_dir: str | Path) -> AS2Dataset:
    src = Path(in_dir)
    parts = {name: load_jsonl(src / f"{name}.jsonl") for name in SPLIT_NAMES}
    with open(src / "vocab.json", encoding="utf-8") as fh:
        vocab = json.load(fh)
    ds = AS2Dataset(train=parts["train"], dev=parts["dev"], test=parts["test"],
                    vocabulary=vocab)
    ds.validate()
    return ds


def tokenize(text: str, vocabulary: dict[str, int]) -> list[int]:
    """Lowercased whitespace tokenization; OOV maps to the UNK id. Total:
    never fails, output length <= whitespace token count."""
    return [vocabulary.get(tok, UNK_ID) for tok in text.lower().split()]


@dataclass
class Pair:
    """One point-wise training/evaluation example."""

    example_id: str
    question_id: str
    question_tokens: list[int]
    answer_tokens: list[int]
    label: int


def split_pairs(questions: list[Question], vocabulary: dict[str, int]) -> list[Pair]:
    pairs = []
    for q in questions:
        q_tokens = tokenize(q.text, vocabulary)
        for c in q.candidates:
            pairs.append(Pair(example_id=c.example_id, question_id=q.question_id,
                              question_tokens=q_tokens,
                              answer_tokens=tokenize(c.text, vocabulary),
                              label=c.label))
    return pairs


def make_batches(pairs: list[Pair], batch_size: int, seed: int,
                 epoch: int = 0, shuffle: bool = True) -> list[list[Pair]]:
    """Partition pairs into batches; shuffling is deterministic per (seed, epoch)."""
    if batch_size < 1:
        raise ConfigurationError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(pairs))
    if shuffle:
        np.random.default_rng((seed, epoch)).shuffle(order)
    return [[pairs[i] for i in order[start:start + batch_size]]
            for start in range(0, len(pairs), batch_size)]
