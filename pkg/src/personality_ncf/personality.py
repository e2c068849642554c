"""OCEAN scores, the three personality feature transforms, score ingestion,
a lexicon stand-in scorer, baseline labels and distribution summaries."""

import csv
import enum
import math
import re
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import EmptyDatasetError, FormatError, RecordError

SCORE_MIN = 0.0
SCORE_MAX = 100.0
DEFAULT_TEMPERATURE = 100.0
# lexicon raw scores are small ratios (weight per token); this maps a raw
# score of 0.05 to about 73
LEXICON_SQUASH = 20.0

PROVENANCES = ("imported", "lexicon", "synthetic")


class Trait(enum.IntEnum):
    OPENNESS = 0
    CONSCIENTIOUSNESS = 1
    EXTROVERSION = 2
    AGREEABLENESS = 3
    NEUROTICISM = 4

    @property
    def column(self):
        return self.name.lower()

    @property
    def short(self):
        return ("OPEN", "CON", "EXT", "AGR", "NEU")[self]

    @classmethod
    def parse(cls, text):
        key = text.strip().lower()
        for t in cls:
            if key in (t.column, t.short.lower(), t.column[0]):
                return t
        raise ValueError(f"unknown trait {text!r}")


CSV_COLUMNS = ["user_id"] + [t.column for t in Trait]


@dataclass(frozen=True)
class OceanScores:
    openness: float
    conscientiousness: float
    extroversion: float
    agreeableness: float
    neuroticism: float

    def __post_init__(self):
        for t in Trait:
            v = getattr(self, t.column)
            if not math.isfinite(v) or not SCORE_MIN <= v <= SCORE_MAX:
                raise ValueError(f"{t.column} score {v!r} outside [0, 100]")

    @classmethod
    def from_sequence(cls, values):
        values = [float(v) for v in values]
        if len(values) != 5:
            raise ValueError(f"expected 5 scores, got {len(values)}")
        return cls(*values)

    def as_array(self):
        return np.array([getattr(self, t.column) for t in Trait], dtype=np.float64)

    def __getitem__(self, trait):
        return getattr(self, Trait(trait).column)


@dataclass
class PersonalityTable:
    """User id -> OceanScores, with a provenance tag per entry."""

    scores: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def add(self, user_id, scores, provenance):
        if user_id in self.scores:
            raise ValueError(f"duplicate user id {user_id!r}")
        if provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {provenance!r}")
        self.scores[user_id] = scores
        self.provenance[user_id] = provenance

    def __len__(self):
        return len(self.scores)

    def __contains__(self, user_id):
        return user_id in self.scores

    def __getitem__(self, user_id):
        return self.scores[user_id]

    def users(self):
        return list(self.scores)


def most_salient(scores):
    """Trait with the highest score; ties go to the lowest canonical index."""
    return Trait(int(np.argmax(scores.as_array())))


def soft_weights(scores, temperature=DEFAULT_TEMPERATURE):
    """Softmax of score/temperature over the five traits, canonical order."""
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    z = scores.as_array() / temperature
    e = np.exp(z - z.max())
    return e / e.sum()


def hard_vector(scores, normalize=False):
    """Scores divided by 100. ``normalize`` rescales to sum 1 instead."""
    v = scores.as_array() / 100.0
    if normalize:
        s = v.sum()
        return v / s if s > 0 else v
    return v


def rescale(x, low, high):
    if (low, high) == (SCORE_MIN, SCORE_MAX):
        return float(x)
    return 100.0 * ((x - low) / (high - low))


def import_scores_csv(path, source_range=(SCORE_MIN, SCORE_MAX)):
    """Read a score CSV and rescale every score affinely onto [0, 100].

    An optional ``provenance`` column is kept; rows without one are tagged
    ``imported``. Row numbers in errors count the header as row 1.
    """
    low, high = (float(v) for v in source_range)
    if not low < high:
        raise ValueError(f"invalid source range ({low}, {high})")
    table = PersonalityTable()
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = [c for c in CSV_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise FormatError(f"{path}: missing columns {', '.join(missing)}")
        for row_no, row in enumerate(reader, start=2):
            user = row["user_id"]
            if not user:
                raise RecordError("empty user_id", row_no)
            values = []
            for t in Trait:
                raw = row[t.column]
                try:
                    x = float(raw)
                except (TypeError, ValueError):
                    raise RecordError(f"{t.column}: not a number: {raw!r}", row_no) from None
                if not math.isfinite(x) or not low <= x <= high:
                    raise RecordError(f"{t.column}={raw} outside [{low:g}, {high:g}]", row_no)
                values.append(rescale(x, low, high))
            if user in table:
                raise RecordError(f"duplicate user id {user!r}", row_no)
            prov = row.get("provenance") or "imported"
            if prov not in PROVENANCES:
                raise RecordError(f"unknown provenance {prov!r}", row_no)
            table.add(user, OceanScores.from_sequence(values), prov)
    return table


def write_scores_csv(table, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_COLUMNS + ["provenance"])
        for user, scores in table.scores.items():
            w.writerow([user] + [repr(float(v)) for v in scores.as_array()] + [table.provenance[user]])


_TOKEN = re.compile(r"[a-z']+")


def tokenize(text):
    return _TOKEN.findall(text.lower())


def load_lexicon(path=None):
    """Read ``trait,word,weight`` rows into {Trait: {word: weight}}.

    Blank lines, ``#`` comments and a ``trait,word,weight`` header are skipped.
    Without a path the bundled demonstration lexicon is used.
    """
    if path is None:
        text = resources.files("personality_ncf").joinpath("data/lexicon.csv").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    lexicon = {t: {} for t in Trait}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#") or line.replace(" ", "") == "trait,word,weight":
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise RecordError(f"expected trait,word,weight: {line!r}", line_no)
        try:
            trait = Trait.parse(parts[0])
            weight = float(parts[2])
        except ValueError as e:
            raise RecordError(str(e), line_no) from None
        lexicon[trait][parts[1].lower()] = weight
    empty = [t.column for t in Trait if not lexicon[t]]
    if empty:
        raise FormatError(f"lexicon has no words for: {', '.join(empty)}")
    return lexicon


def lexicon_score(text, lexicon, squash=LEXICON_SQUASH):
    """Offline stand-in scorer: weighted word-hit rate per trait, squashed to [0, 100].

    Not a validated personality instrument; it exists so the pipeline can run
    without the commercial scoring service.
    """
    tokens = tokenize(text)
    if not tokens:
        return OceanScores(50.0, 50.0, 50.0, 50.0, 50.0)
    n = len(tokens)
    counts = {}
    for tok in tokens:
        counts[tok] = counts.get(tok, 0) + 1
    values = []
    for t in Trait:
        words = lexicon[t]
        raw = sum(words[w] * c for w, c in counts.items() if w in words) / n
        values.append(100.0 / (1.0 + math.exp(-squash * raw)))
    return OceanScores.from_sequence(values)


def assign_baseline_labels(users, mode, seed=0, trait=Trait.OPENNESS):
    """Control labels: ``random`` draws uniformly per user, ``same`` is constant."""
    users = list(users)
    if mode == "same":
        return {u: Trait(trait) for u in users}
    if mode == "random":
        rng = np.random.default_rng(seed)
        draws = rng.integers(0, len(Trait), size=len(users))
        return {u: Trait(int(d)) for u, d in zip(users, draws)}
    raise ValueError(f"unknown baseline mode {mode!r}")


def lower_median(values):
    """Median using the lower middle element for even counts."""
    s = sorted(values)
    if not s:
        raise EmptyDatasetError("median of empty sequence")
    return s[(len(s) - 1) // 2]


@dataclass
class TraitSummary:
    trait: Trait
    counts: np.ndarray
    edges: np.ndarray
    median: float
    mean: float


def trait_distribution(table, bins=20):
    if len(table) == 0:
        raise EmptyDatasetError("personality table is empty")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    matrix = np.array([s.as_array() for s in table.scores.values()])
    out = {}
    for t in Trait:
        col = matrix[:, t]
        counts, edges = np.histogram(col, bins=bins, range=(SCORE_MIN, SCORE_MAX))
        out[t] = TraitSummary(t, counts, edges, float(lower_median(col)), float(col.mean()))
    return out
