"""Leave-one-out ranking evaluation, per-trait breakdown and Cohen's kappa."""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .corpus import keyed_rng
from .errors import EmptyDatasetError, ProtocolError
from .model import predict_batch
from .personality import Trait, most_salient

DEFAULT_KS = (3, 5, 10)
EVAL_NEGATIVES = 99


@dataclass
class RankedList:
    user: int
    candidates: np.ndarray
    rank: int


def rank_of(held_out, items, scores):
    """1-based rank of ``held_out`` among ``items`` sorted by score descending,
    ties broken by ascending item index."""
    items = np.asarray(items)
    scores = np.asarray(scores)
    pos = np.flatnonzero(items == held_out)
    if len(pos) != 1:
        raise ProtocolError(f"held-out item {held_out} must appear exactly once among candidates")
    s = scores[pos[0]]
    ahead = np.count_nonzero(scores > s) + np.count_nonzero((scores == s) & (items < held_out))
    return int(ahead) + 1


def rank_candidates(params, user, held_out, negatives, context, observed=None):
    """Score the held-out item with its negatives and return the ordering.

    ``observed`` (user x item booleans, train plus held-out) enables the
    check that no negative is a known interaction of the user.
    """
    negatives = np.asarray(negatives, dtype=np.int64)
    if len(np.unique(negatives)) != len(negatives) or np.any(negatives == held_out):
        raise ProtocolError(f"user {user}: negatives must be distinct and exclude the held-out item")
    if observed is not None and np.any(observed[user, negatives]):
        raise ProtocolError(f"user {user}: a negative overlaps the user's interactions")
    items = np.concatenate([[held_out], negatives])
    scores = predict_batch(params, np.full(len(items), user), items, context)
    order = np.lexsort((items, -scores))
    return RankedList(user, items[order], rank_of(held_out, items, scores))


def metrics_at_k(rank, k):
    """(hit, ndcg) for a single relevant item at 1-based ``rank``."""
    if k < 1:
        raise ValueError("K must be >= 1")
    if rank <= k:
        return 1, 1.0 / math.log2(rank + 1)
    return 0, 0.0


@dataclass
class EvalCandidates:
    """Flattened candidate lists; user j's slice is items[offsets[j]:offsets[j+1]]
    with its held-out item first."""

    users: np.ndarray
    held_out: np.ndarray
    offsets: np.ndarray
    items: np.ndarray
    seed: int


def build_candidates(split, seed=0, n_negatives=EVAL_NEGATIVES, observed=None):
    """Per eligible user: the held-out item plus sampled unobserved negatives.

    ``n_negatives=None`` uses every unobserved item. When fewer than
    ``n_negatives`` are available all of them are used. Draws depend only on
    (seed, user).
    """
    if observed is None:
        observed = split.full_observed_matrix()
    users = split.eligible_users()
    if len(users) == 0:
        raise EmptyDatasetError("no users with a held-out item")
    chunks = []
    offsets = [0]
    for u in users:
        pool = np.flatnonzero(~observed[u])
        if n_negatives is not None and len(pool) > n_negatives:
            rng = keyed_rng(seed, int(u))
            pool = np.sort(rng.choice(pool, size=n_negatives, replace=False))
        chunks.append(np.concatenate([[split.held_out[u]], pool]))
        offsets.append(offsets[-1] + len(chunks[-1]))
    return EvalCandidates(
        users=users,
        held_out=split.held_out[users],
        offsets=np.array(offsets),
        items=np.concatenate(chunks).astype(np.int64),
        seed=seed,
    )


@dataclass
class MetricReport:
    ks: tuple
    hr: dict
    ndcg: dict
    n_users: int
    seed: int
    users: np.ndarray
    ranks: np.ndarray

    def __post_init__(self):
        self.check()

    def check(self):
        prev_hr = prev_ndcg = 0.0
        for k in sorted(self.ks):
            hr, nd = self.hr[k], self.ndcg[k]
            if not (0.0 <= nd <= hr + 1e-15 and hr <= 1.0):
                raise AssertionError(f"metric bounds violated at K={k}: hr={hr}, ndcg={nd}")
            if hr < prev_hr or nd < prev_ndcg - 1e-15:
                raise AssertionError(f"metrics not monotone in K at K={k}")
            prev_hr, prev_ndcg = hr, nd

    def rows(self):
        for k in self.ks:
            yield "HR", k, self.hr[k]
        for k in self.ks:
            yield "NDCG", k, self.ndcg[k]


def report_from_ranks(users, ranks, ks=DEFAULT_KS, seed=0):
    ranks = np.asarray(ranks, dtype=np.int64)
    if len(ranks) == 0:
        raise EmptyDatasetError("no evaluated users")
    ks = tuple(sorted(ks))
    hr, ndcg = {}, {}
    for k in ks:
        hits = ranks <= k
        hr[k] = float(hits.mean())
        ndcg[k] = float(np.where(hits, 1.0 / np.log2(ranks + 1), 0.0).mean())
    return MetricReport(ks, hr, ndcg, len(ranks), seed, np.asarray(users), ranks)


def evaluate_candidates(params, cands, context, ks=DEFAULT_KS, chunk=65536):
    n = len(cands.items)
    owner = np.repeat(cands.users, np.diff(cands.offsets))
    scores = np.empty(n)
    for lo in range(0, n, chunk):
        scores[lo : lo + chunk] = predict_batch(params, owner[lo : lo + chunk], cands.items[lo : lo + chunk], context)
    ranks = np.empty(len(cands.users), dtype=np.int64)
    for j in range(len(cands.users)):
        a, b = cands.offsets[j], cands.offsets[j + 1]
        ranks[j] = rank_of(cands.held_out[j], cands.items[a:b], scores[a:b])
    return report_from_ranks(cands.users, ranks, ks, cands.seed)


def evaluate(params, split, context, seed=0, ks=DEFAULT_KS, n_negatives=EVAL_NEGATIVES):
    """HR@K and NDCG@K over all users with a held-out item."""
    return evaluate_candidates(params, build_candidates(split, seed, n_negatives), context, ks)


@dataclass
class TraitBreakdown:
    k: int
    counts: dict
    hr: dict
    ndcg: dict

    @property
    def total(self):
        return sum(self.counts.values())

    def recombined(self):
        """Count-weighted means across groups, as (hr, ndcg)."""
        groups = [t for t in Trait if self.counts[t]]
        n = sum(self.counts[t] for t in groups)
        return (
            sum(self.counts[t] * self.hr[t] for t in groups) / n,
            sum(self.counts[t] * self.ndcg[t] for t in groups) / n,
        )


def breakdown_by_trait(user_ids, ranks, personalities, k=10):
    """Group users by most salient trait and average HR@k / NDCG@k per group.

    Empty groups report count 0 and NaN metrics.
    """
    ranks = np.asarray(ranks, dtype=np.int64)
    groups = np.empty(len(ranks), dtype=np.int64)
    for j, u in enumerate(user_ids):
        if u not in personalities:
            raise ProtocolError(f"evaluated user {u!r} has no personality scores")
        groups[j] = most_salient(personalities[u])
    hits = ranks <= k
    gains = np.where(hits, 1.0 / np.log2(ranks + 1), 0.0)
    counts, hr, ndcg = {}, {}, {}
    for t in Trait:
        mask = groups == int(t)
        counts[t] = int(mask.sum())
        hr[t] = float(hits[mask].mean()) if counts[t] else float("nan")
        ndcg[t] = float(gains[mask].mean()) if counts[t] else float("nan")
    return TraitBreakdown(k, counts, hr, ndcg)


def cohen_kappa(a, b):
    """Unweighted Cohen's kappa between two label sequences.

    When chance agreement is 1 (both annotators constant and equal) kappa is
    defined as 1.
    """
    a, b = list(a), list(b)
    if len(a) != len(b):
        raise ValueError(f"sequence lengths differ: {len(a)} vs {len(b)}")
    if not a:
        raise ValueError("need at least one label")
    n = len(a)
    p_o = sum(x == y for x, y in zip(a, b)) / n
    labels = set(a) | set(b)
    p_e = sum((a.count(c) / n) * (b.count(c) / n) for c in labels)
    if p_e == 1.0:
        return 1.0
    return (p_o - p_e) / (1.0 - p_e)


def write_metrics_csv(report, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["metric", "K", "value"])
        for name, k, v in report.rows():
            w.writerow([name, k, f"{v:.6f}"])


def write_ranks_csv(user_ids, ranks, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["user_id", "rank"])
        for u, r in zip(user_ids, ranks):
            w.writerow([u, int(r)])


def read_ranks_csv(path):
    users, ranks = [], []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            users.append(row["user_id"])
            ranks.append(int(row["rank"]))
    return users, np.array(ranks, dtype=np.int64)


def write_breakdown_csv(breakdown, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["trait", "count", "hr", "ndcg"])
        for t in Trait:
            w.writerow([t.column, breakdown.counts[t], f"{breakdown.hr[t]:.6f}", f"{breakdown.ndcg[t]:.6f}"])
