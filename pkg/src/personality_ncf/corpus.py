"""Review parsing, active-user filtering, interaction sets, dataset
statistics, leave-one-out splitting, negative sampling and synthetic data."""

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import EmptyDatasetError, FormatError, RecordError
from .personality import OceanScores, PersonalityTable, Trait, soft_weights

log = logging.getLogger(__name__)

MANDATORY_FIELDS = ("reviewerID", "asin", "reviewText", "overall")

MIN_ITEMS = 10
MIN_WORDS = 30
MAX_WORDS = 80


@dataclass(frozen=True)
class ReviewRecord:
    reviewer_id: str
    asin: str
    review_text: str
    overall: float
    vote: Optional[int] = None
    style: Optional[str] = None
    reviewer_name: Optional[str] = None

    def __post_init__(self):
        if not self.reviewer_id:
            raise ValueError("reviewerID is empty")
        if not self.asin:
            raise ValueError("asin is empty")
        if not 1.0 <= self.overall <= 5.0:
            raise ValueError(f"overall rating {self.overall} outside [1, 5]")

    def to_json(self):
        obj = {"reviewerID": self.reviewer_id, "asin": self.asin}
        if self.reviewer_name is not None:
            obj["reviewerName"] = self.reviewer_name
        if self.vote is not None:
            obj["vote"] = str(self.vote)
        if self.style is not None:
            obj["style"] = self.style
        obj["reviewText"] = self.review_text
        obj["overall"] = self.overall
        return json.dumps(obj, ensure_ascii=False)


def _parse_vote(raw):
    if raw is None:
        return None
    if isinstance(raw, bool):
        raise ValueError(f"bad vote {raw!r}")
    if isinstance(raw, int):
        return raw
    # the Amazon dumps store votes as strings with thousands separators
    return int(str(raw).replace(",", "").strip())


def _parse_style(raw):
    if raw is None or isinstance(raw, str):
        return raw
    if isinstance(raw, dict):
        return ";".join(f"{k.strip()}{str(v).strip()}" for k, v in raw.items())
    raise ValueError(f"bad style {raw!r}")


def parse_record(line, line_no=None):
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise RecordError(f"invalid JSON: {e.msg}", line_no) from None
    if not isinstance(obj, dict):
        raise RecordError("record is not a JSON object", line_no)
    for name in MANDATORY_FIELDS:
        if obj.get(name) is None:
            raise RecordError(f"missing field {name}", line_no)
    try:
        return ReviewRecord(
            reviewer_id=str(obj["reviewerID"]),
            asin=str(obj["asin"]),
            review_text=str(obj["reviewText"]),
            overall=float(obj["overall"]),
            vote=_parse_vote(obj.get("vote")),
            style=_parse_style(obj.get("style")),
            reviewer_name=obj.get("reviewerName"),
        )
    except (TypeError, ValueError) as e:
        raise RecordError(str(e), line_no) from None


def parse_reviews(lines, errors=None):
    """Parse JSON-lines review records in input order.

    Blank lines are ignored. A malformed line raises ``RecordError`` unless an
    ``errors`` list is passed, in which case the error is appended there and
    the line skipped.
    """
    records = []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(parse_record(line, line_no))
        except RecordError as e:
            if errors is None:
                raise
            errors.append(e)
    return records


def word_count(text):
    return len(text.split())


@dataclass
class UserDocument:
    user_id: str
    text: str
    qualifying_review_count: int
    total_words: int
    reviewed_items: frozenset


@dataclass
class InteractionSet:
    """Dense-indexed implicit feedback.

    ``sequences[u]`` holds user u's distinct items ordered by their last
    occurrence in the input; ``items_by_user[u]`` is the same set sorted.
    """

    users: list
    items: list
    sequences: list
    items_by_user: list = field(init=False)

    def __post_init__(self):
        self.sequences = [np.asarray(s, dtype=np.int64) for s in self.sequences]
        self.items_by_user = [np.sort(s) for s in self.sequences]
        if len(self.sequences) != len(self.users):
            raise ValueError("one sequence per user required")
        for u, s in enumerate(self.items_by_user):
            if len(s) and (s[0] < 0 or s[-1] >= len(self.items)):
                raise ValueError(f"user {u}: item index out of range")
            if np.any(np.diff(s) == 0):
                raise ValueError(f"user {u}: duplicate items")
        self.user_index = {u: i for i, u in enumerate(self.users)}
        self.item_index = {it: i for i, it in enumerate(self.items)}
        if len(self.user_index) != len(self.users) or len(self.item_index) != len(self.items):
            raise ValueError("duplicate ids in index")

    @classmethod
    def from_pairs(cls, pairs, users=None, items=None):
        """Build from (user id, item id) pairs in input order.

        Ids missing from the optional ``users``/``items`` lists are indexed
        by first appearance after the given ones.
        """
        users = list(users or [])
        items = list(items or [])
        uidx = {u: i for i, u in enumerate(users)}
        iidx = {it: i for i, it in enumerate(items)}
        seqs = {}
        for u, it in pairs:
            if u not in uidx:
                uidx[u] = len(users)
                users.append(u)
            if it not in iidx:
                iidx[it] = len(items)
                items.append(it)
            seq = seqs.setdefault(uidx[u], {})
            seq.pop(iidx[it], None)
            seq[iidx[it]] = None
        return cls(users, items, [list(seqs.get(i, {})) for i in range(len(users))])

    @property
    def n_users(self):
        return len(self.users)

    @property
    def n_items(self):
        return len(self.items)

    @property
    def n_interactions(self):
        return int(sum(len(s) for s in self.sequences))

    def pair_arrays(self):
        """(user indices, item indices) of every interaction, user-major, sorted."""
        counts = [len(s) for s in self.items_by_user]
        users = np.repeat(np.arange(self.n_users, dtype=np.int64), counts)
        items = np.concatenate(self.items_by_user) if self.n_users else np.zeros(0, np.int64)
        return users, items.astype(np.int64)

    def observed_matrix(self):
        m = np.zeros((self.n_users, self.n_items), dtype=bool)
        users, items = self.pair_arrays()
        m[users, items] = True
        return m


def filter_active(
    records,
    min_items=MIN_ITEMS,
    min_words=MIN_WORDS,
    max_words=MAX_WORDS,
    require_all_qualifying=False,
):
    """Keep users with qualifying reviews on at least ``min_items`` distinct items.

    A review qualifies when its word count lies in [min_words, max_words].
    With ``require_all_qualifying`` a user with any non-qualifying review is
    dropped outright. Retained users keep every reviewed item as an
    interaction; only qualifying text goes into their document.
    """
    by_user = {}
    for r in records:
        by_user.setdefault(r.reviewer_id, []).append(r)
    docs = []
    pairs = []
    for user, reviews in by_user.items():
        counts = [word_count(r.review_text) for r in reviews]
        ok = [min_words <= c <= max_words for c in counts]
        if require_all_qualifying and not all(ok):
            continue
        qualifying_items = {r.asin for r, q in zip(reviews, ok) if q}
        if len(qualifying_items) < min_items:
            continue
        texts = [r.review_text for r, q in zip(reviews, ok) if q]
        docs.append(
            UserDocument(
                user_id=user,
                text=" ".join(texts),
                qualifying_review_count=len(texts),
                total_words=sum(c for c, q in zip(counts, ok) if q),
                reviewed_items=frozenset(r.asin for r in reviews),
            )
        )
        pairs.extend((user, r.asin) for r in reviews)
    return docs, InteractionSet.from_pairs(pairs, users=[d.user_id for d in docs])


def density(users, items, ratings):
    """Interaction density in percent."""
    if users <= 0 or items <= 0:
        raise EmptyDatasetError("density of an empty dataset")
    return 100.0 * ratings / (users * items)


@dataclass
class DatasetStats:
    items: int
    users: int
    ratings: int
    density: float
    avg_words_per_user: Optional[float] = None
    avg_words_per_review: Optional[float] = None

    def rows(self):
        out = [
            ("items", self.items),
            ("users", self.users),
            ("ratings", self.ratings),
            ("density_pct", self.density),
        ]
        if self.avg_words_per_user is not None:
            out.append(("avg_words_per_user", self.avg_words_per_user))
            out.append(("avg_words_per_review", self.avg_words_per_review))
        return out


def dataset_stats(interactions, docs=None):
    if interactions.n_users == 0 or interactions.n_items == 0 or interactions.n_interactions == 0:
        raise EmptyDatasetError("empty dataset")
    stats = DatasetStats(
        items=interactions.n_items,
        users=interactions.n_users,
        ratings=interactions.n_interactions,
        density=density(interactions.n_users, interactions.n_items, interactions.n_interactions),
    )
    if docs:
        words = sum(d.total_words for d in docs)
        reviews = sum(d.qualifying_review_count for d in docs)
        stats.avg_words_per_user = words / len(docs)
        stats.avg_words_per_review = words / reviews if reviews else 0.0
    return stats


@dataclass
class LeaveOneOutSplit:
    """``held_out[u]`` is -1 for users with fewer than two interactions."""

    train: InteractionSet
    held_out: np.ndarray
    seed: int

    def eligible_users(self):
        return np.flatnonzero(self.held_out >= 0)

    def full_observed_matrix(self):
        m = self.train.observed_matrix()
        users = self.eligible_users()
        m[users, self.held_out[users]] = True
        return m


def leave_one_out_split(interactions, seed=0, policy="random"):
    if policy not in ("random", "last"):
        raise ValueError(f"unknown hold-out policy {policy!r}")
    rng = np.random.default_rng(seed)
    held = np.full(interactions.n_users, -1, dtype=np.int64)
    train_seqs = []
    for u, seq in enumerate(interactions.sequences):
        if len(seq) < 2:
            train_seqs.append(seq)
            continue
        pos = len(seq) - 1 if policy == "last" else int(rng.integers(len(seq)))
        held[u] = seq[pos]
        train_seqs.append(np.delete(seq, pos))
    train = InteractionSet(list(interactions.users), list(interactions.items), train_seqs)
    return LeaveOneOutSplit(train, held, seed)


class TrainingSamples(NamedTuple):
    users: np.ndarray
    items: np.ndarray
    labels: np.ndarray
    skipped_users: int


def keyed_rng(seed, *keys):
    # counter-based generator: the stream depends only on (seed, keys)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *keys])))


def sample_unobserved(observed, users, rng, max_rounds=64):
    """One uniformly drawn unobserved item per entry of ``users``.

    Every listed user must have at least one unobserved item.
    """
    n_items = observed.shape[1]
    items = rng.integers(0, n_items, size=len(users))
    bad = np.flatnonzero(observed[users, items])
    rounds = 0
    while len(bad) and rounds < max_rounds:
        items[bad] = rng.integers(0, n_items, size=len(bad))
        bad = bad[observed[users[bad], items[bad]]]
        rounds += 1
    # users with almost no free items: draw from the exact pool
    for k in bad:
        pool = np.flatnonzero(~observed[users[k]])
        items[k] = pool[rng.integers(len(pool))]
    return items


def sample_train_negatives(split, ratio=4, seed=0, epoch=0, observed=None):
    """Positives of the training set plus ``ratio`` sampled negatives each.

    Negatives avoid both train and held-out items of their user. Users with
    no unobserved item contribute positives only and are counted in
    ``skipped_users``.
    """
    if ratio < 1:
        raise ValueError("ratio must be >= 1")
    if observed is None:
        observed = split.full_observed_matrix()
    pos_u, pos_i = split.train.pair_arrays()
    full = observed.all(axis=1)
    skipped = int(np.count_nonzero(full & (observed.sum(axis=1) > 0)))
    if skipped:
        log.warning("%d users have no unobserved items; no negatives drawn for them", skipped)
    keep = ~full[pos_u]
    neg_u = np.repeat(pos_u[keep], ratio)
    rng = keyed_rng(seed, epoch, 0)
    neg_i = sample_unobserved(observed, neg_u, rng)
    users = np.concatenate([pos_u, neg_u])
    items = np.concatenate([pos_i, neg_i])
    labels = np.concatenate([np.ones(len(pos_u)), np.zeros(len(neg_u))])
    return TrainingSamples(users, items, labels, skipped)


SYNTHETIC_ALPHA = 0.2
SYNTHETIC_TEMPERATURE = 15.0


class SyntheticData(NamedTuple):
    interactions: InteractionSet
    personalities: PersonalityTable
    item_affinity: np.ndarray


def user_trait_weights(scores, temperature=SYNTHETIC_TEMPERATURE):
    return soft_weights(scores, temperature)


def interaction_probabilities(weights, item_affinity, signal_strength):
    """Per-item sampling distribution for one user."""
    n_items = item_affinity.shape[0]
    pref = item_affinity @ weights
    pref = pref / pref.sum()
    return (1.0 - signal_strength) / n_items + signal_strength * pref


def generate_synthetic(
    users,
    items,
    interactions_per_user,
    signal_strength,
    seed=0,
    alpha=SYNTHETIC_ALPHA,
    temperature=SYNTHETIC_TEMPERATURE,
):
    """Personality-correlated implicit feedback.

    Items get trait affinities drawn from a sparse Dirichlet on the 5-simplex.
    Users get OCEAN scores around 50 with one randomly boosted trait. Each
    user then draws distinct items with probability mixing a uniform term and
    the affinity matched against the user's softmaxed trait weights.

    Smaller ``alpha`` concentrates each item on fewer traits; larger
    ``temperature`` blends a user's traits more evenly.
    """
    if users < 2 or items < 2:
        raise ValueError("need at least 2 users and 2 items")
    if not 0.0 <= signal_strength <= 1.0:
        raise ValueError("signal_strength must be in [0, 1]")
    if alpha <= 0 or temperature <= 0:
        raise ValueError("alpha and temperature must be positive")
    rng = np.random.default_rng(seed)
    n_traits = len(Trait)
    affinity = rng.dirichlet(np.full(n_traits, alpha), size=items)
    base = rng.normal(50.0, 12.0, size=(users, n_traits))
    dominant = rng.integers(0, n_traits, size=users)
    base[np.arange(users), dominant] += 25.0
    base = np.clip(base, 0.0, 100.0)
    per_user = min(interactions_per_user, items)
    table = PersonalityTable()
    user_ids = [f"u{u:05d}" for u in range(users)]
    item_ids = [f"i{i:05d}" for i in range(items)]
    seqs = []
    for u in range(users):
        scores = OceanScores.from_sequence(base[u])
        table.add(user_ids[u], scores, "synthetic")
        p = interaction_probabilities(user_trait_weights(scores, temperature), affinity, signal_strength)
        seqs.append(rng.choice(items, size=per_user, replace=False, p=p))
    return SyntheticData(InteractionSet(user_ids, item_ids, seqs), table, affinity)


def write_interactions(interactions, path, index_path=None):
    """CSV ``user_id,item_id`` per user in sequence order, plus an optional
    ``kind,id,index`` sidecar that pins the dense indices."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["user_id", "item_id"])
        for u, seq in enumerate(interactions.sequences):
            for i in seq:
                w.writerow([interactions.users[u], interactions.items[i]])
    if index_path is not None:
        with open(index_path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["kind", "id", "index"])
            for i, u in enumerate(interactions.users):
                w.writerow(["user", u, i])
            for i, it in enumerate(interactions.items):
                w.writerow(["item", it, i])


def read_interactions(path, index_path=None):
    users, items = [], []
    if index_path is not None:
        with open(index_path, newline="", encoding="utf-8") as f:
            for row_no, row in enumerate(csv.DictReader(f), start=2):
                try:
                    kind, ident, idx = row["kind"], row["id"], int(row["index"])
                except (KeyError, TypeError, ValueError):
                    raise RecordError("malformed index row", row_no) from None
                target = users if kind == "user" else items if kind == "item" else None
                if target is None or idx != len(target):
                    raise RecordError(f"index rows must be dense and ordered, got {kind} {idx}", row_no)
                target.append(ident)
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["user_id", "item_id"]:
            raise FormatError(f"{path}: expected header user_id,item_id, got {header}")
        pairs = []
        for row_no, row in enumerate(reader, start=2):
            if len(row) != 2 or not row[0] or not row[1]:
                raise RecordError("expected user_id,item_id", row_no)
            pairs.append((row[0], row[1]))
    return InteractionSet.from_pairs(pairs, users=users, items=items)


def write_documents(docs, path):
    with open(path, "w", encoding="utf-8") as f:
        for d in docs:
            f.write(
                json.dumps(
                    {
                        "user_id": d.user_id,
                        "qualifying_review_count": d.qualifying_review_count,
                        "total_words": d.total_words,
                        "reviewed_items": sorted(d.reviewed_items),
                        "text": d.text,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_documents(path):
    docs = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                docs.append(
                    UserDocument(
                        user_id=obj["user_id"],
                        text=obj["text"],
                        qualifying_review_count=int(obj["qualifying_review_count"]),
                        total_words=int(obj["total_words"]),
                        reviewed_items=frozenset(obj["reviewed_items"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                raise RecordError("malformed user document", line_no) from None
    return docs
