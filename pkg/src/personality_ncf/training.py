"""Mini-batch training with negative sampling, early stopping and checkpoints."""

import logging
import math
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import numerics
from .corpus import keyed_rng, sample_train_negatives
from .errors import ConfigError, DivergenceError, FormatError, ModeMismatchError, TruncatedError
from .evaluation import EVAL_NEGATIVES, build_candidates, evaluate_candidates
from .model import (
    EMBEDDING_DIM,
    N_TRAITS,
    TRAIT_DIM,
    Hyperparams,
    NcfParams,
    PersonalityMode,
    batch_gradients,
    build_context,
    init_params,
)

log = logging.getLogger(__name__)

VALIDATION_K = 10


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 256
    negatives_per_positive: int = 4
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    patience: int = 5
    seed: int = 0
    hidden: tuple = (64, 32, 16, 8)
    init_std: float = 0.01
    eval_negatives: object = EVAL_NEGATIVES  # int, or None for every unobserved item
    freeze_trait_emb: bool = False
    # False: return the last epoch's parameters instead of the best validated ones
    restore_best: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        for name in ("batch_size", "negatives_per_positive", "patience"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")

    @property
    def hyper(self):
        return Hyperparams(hidden=tuple(self.hidden), init_std=self.init_std, seed=self.seed)


@dataclass
class EpochReport:
    epoch: int
    loss: float
    hr: float
    ndcg: float
    seconds: float


@dataclass
class TrainResult:
    params: NcfParams
    reports: list = field(default_factory=list)
    best_epoch: int = -1

    def __iter__(self):
        # allows ``params, reports = train(...)``
        return iter((self.params, self.reports))


def train(split, mode, config=TrainConfig(), personalities=None, labels=None, context=None):
    """Train an NCF model on ``split.train``, validating on the held-out items.

    Every epoch draws fresh negatives and a fresh shuffle, both keyed on
    (seed, epoch). Validation uses HR@10 then NDCG@10; with
    ``restore_best`` the best epoch's parameters are returned.
    """
    if context is None:
        context = build_context(mode, split.train.users, personalities, labels)
    params = init_params(split.train.n_users, split.train.n_items, mode, config.hyper)
    result = TrainResult(params.copy())
    if config.epochs == 0:
        return result

    observed = split.full_observed_matrix()
    cands = None
    if len(split.eligible_users()):
        cands = build_candidates(split, config.seed, config.eval_negatives, observed)

    # ``params`` views ``flat``, which Adam updates in place as a single vector
    flat, params, slices = params.flattened()
    flat_grad = np.zeros_like(flat)
    state = numerics.adam_init({"flat": flat}, config.learning_rate, config.beta1, config.beta2, config.epsilon)
    best_key = None
    stale = 0
    for epoch in range(config.epochs):
        started = time.perf_counter()
        samples = sample_train_negatives(split, config.negatives_per_positive, config.seed, epoch, observed)
        order = keyed_rng(config.seed, epoch, 1).permutation(len(samples.labels))
        total_loss = 0.0
        for b, lo in enumerate(range(0, len(order), config.batch_size)):
            idx = order[lo : lo + config.batch_size]
            grads, loss = batch_gradients(
                params, samples.users[idx], samples.items[idx], samples.labels[idx], context
            )
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}")
            if config.freeze_trait_emb:
                grads.pop("trait_emb", None)
            flat_grad[:] = 0.0
            for k, g in grads.items():
                flat_grad[slices[k]] = g.ravel()
            numerics.adam_update({"flat": flat}, {"flat": flat_grad}, state)
            total_loss += loss * len(idx)
        mean_loss = total_loss / len(order)
        hr = ndcg = float("nan")
        if cands is not None:
            report = evaluate_candidates(params, cands, context, ks=(VALIDATION_K,))
            hr, ndcg = report.hr[VALIDATION_K], report.ndcg[VALIDATION_K]
        result.reports.append(EpochReport(epoch, mean_loss, hr, ndcg, time.perf_counter() - started))
        log.info("epoch %d loss %.5f HR@10 %.4f NDCG@10 %.4f", epoch, mean_loss, hr, ndcg)

        if cands is None or not config.restore_best:
            result.params = params.copy()
            result.best_epoch = epoch
            continue
        key = (hr, ndcg)
        if best_key is None or key > best_key:
            best_key = key
            result.params = params.copy()
            result.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                log.info("early stop at epoch %d (best %d)", epoch, result.best_epoch)
                break
    return result


MAGIC = b"PNCF"
VERSION = 1


@dataclass
class Checkpoint:
    params: NcfParams
    seed: int
    epoch: int


def _tensors(params):
    out = [params.user_emb, params.item_emb]
    if params.trait_emb is not None:
        out.append(params.trait_emb)
    return out + params.mlp.arrays()


def checkpoint_bytes(params, seed=0, epoch=0):
    """Serialize parameters.

    Layout (little-endian): magic ``PNCF``; u32 version; u16 tag length and
    UTF-8 mode tag; u32 users, items, embedding width, trait rows, trait
    width, layer count; u32 per layer width (input first, output last);
    i64 seed; u32 epoch; then float32 tensors in order user_emb, item_emb,
    trait_emb (if any), and weight, bias for each MLP layer, row-major.
    """
    tag = params.mode.tag().encode("utf-8")
    trait_rows, trait_dim = params.trait_emb.shape if params.trait_emb is not None else (0, 0)
    widths = params.mlp.widths
    header = [
        MAGIC,
        struct.pack("<I", VERSION),
        struct.pack("<H", len(tag)),
        tag,
        struct.pack(
            "<6I", params.n_users, params.n_items, EMBEDDING_DIM, trait_rows, trait_dim, len(params.mlp.layers)
        ),
        struct.pack(f"<{len(widths)}I", *widths),
        struct.pack("<qI", seed, epoch),
    ]
    body = [np.ascontiguousarray(t, dtype="<f4").tobytes() for t in _tensors(params)]
    return b"".join(header + body)


def save_checkpoint(params, path, seed=0, epoch=0):
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(params, seed, epoch))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise TruncatedError(f"checkpoint truncated while reading {what}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def tensor(self, shape, what):
        n = int(np.prod(shape))
        raw = self.take(4 * n, what)
        return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)


def parse_checkpoint(data, mode=None):
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} (expected {VERSION})")
    (tag_len,) = r.unpack("<H", "mode tag")
    raw_tag = r.take(tag_len, "mode tag")
    try:
        tag = raw_tag.decode("utf-8")
        stored = PersonalityMode.from_tag(tag)
    except (UnicodeDecodeError, ValueError) as e:
        raise FormatError(f"bad mode tag: {e}") from None
    if mode is not None:
        wanted = mode.tag() if isinstance(mode, PersonalityMode) else mode
        have = tag if isinstance(mode, PersonalityMode) else stored.kind
        if wanted != have:
            raise ModeMismatchError(f"checkpoint holds mode {tag!r}, requested {wanted!r}")
    n_users, n_items, emb, trait_rows, trait_dim, n_layers = r.unpack("<6I", "dimensions")
    if emb != EMBEDDING_DIM:
        raise FormatError(f"embedding width {emb} unsupported")
    if (trait_rows, trait_dim) not in ((0, 0), (N_TRAITS, TRAIT_DIM)):
        raise FormatError(f"trait table {trait_rows}x{trait_dim} unsupported")
    widths = r.unpack(f"<{n_layers + 1}I", "layer widths")
    seed, epoch = r.unpack("<qI", "seed/epoch")
    user_emb = r.tensor((n_users, emb), "user_emb")
    item_emb = r.tensor((n_items, emb), "item_emb")
    trait_emb = r.tensor((trait_rows, trait_dim), "trait_emb") if trait_rows else None
    layers = []
    for i in range(n_layers):
        w = r.tensor((widths[i], widths[i + 1]), f"layer {i} weight")
        b = r.tensor((widths[i + 1],), f"layer {i} bias")
        layers.append((w, b))
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after checkpoint")
    try:
        params = NcfParams(user_emb, item_emb, trait_emb, numerics.MlpParams(layers), stored)
    except ValueError as e:
        raise FormatError(f"inconsistent checkpoint: {e}") from None
    return Checkpoint(params, seed, epoch)


def read_checkpoint(path, mode=None):
    with open(path, "rb") as f:
        return parse_checkpoint(f.read(), mode)


def load_checkpoint(path, mode=None):
    """Load parameters; ``mode`` (PersonalityMode or kind string) must match if given."""
    return read_checkpoint(path, mode).params
