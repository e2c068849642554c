"""NCF scoring with personality features.

The MLP input is ``[user embedding | item embedding | personality feature]``.
The feature depends on the mode:

    plain    nothing
    random   trait vector of a randomly assigned label
    same     trait vector of one fixed label for everyone
    salient  trait vector of the user's highest-scoring trait
    soft     softmax(scores / T)-weighted sum of the five trait vectors
    hard     scores / 100, a fixed input that is never trained
"""

from dataclasses import dataclass, replace

import numpy as np

from . import numerics
from .errors import ConfigError
from .personality import (
    DEFAULT_TEMPERATURE,
    Trait,
    assign_baseline_labels,
    hard_vector,
    most_salient,
    soft_weights,
)

EMBEDDING_DIM = 16
TRAIT_DIM = 4
N_TRAITS = len(Trait)

MODES = ("plain", "random", "same", "salient", "soft", "hard")
SCORE_MODES = ("salient", "soft", "hard")
LABEL_MODES = ("random", "same")


@dataclass(frozen=True)
class PersonalityMode:
    kind: str = "plain"
    seed: int = 0
    trait: Trait = Trait.OPENNESS
    temperature: float = DEFAULT_TEMPERATURE
    normalize_hard: bool = False

    def __post_init__(self):
        if self.kind not in MODES:
            raise ConfigError(f"unknown mode {self.kind!r}; expected one of {', '.join(MODES)}")
        if self.kind == "soft" and not self.temperature > 0:
            raise ConfigError("soft mode needs temperature > 0")

    @property
    def feature_dim(self):
        if self.kind == "plain":
            return 0
        if self.kind == "hard":
            return N_TRAITS
        return TRAIT_DIM

    @property
    def has_trait_emb(self):
        return self.kind not in ("plain", "hard")

    def tag(self):
        """Short string identifying the mode and its parameter."""
        if self.kind == "random":
            return f"random:{self.seed}"
        if self.kind == "same":
            return f"same:{self.trait.column}"
        if self.kind == "soft":
            return f"soft:{self.temperature!r}"
        if self.kind == "hard" and self.normalize_hard:
            return "hard:normalized"
        return self.kind

    @classmethod
    def from_tag(cls, tag):
        kind, _, arg = tag.partition(":")
        if kind == "random":
            return cls(kind, seed=int(arg or 0))
        if kind == "same":
            return cls(kind, trait=Trait.parse(arg) if arg else Trait.OPENNESS)
        if kind == "soft":
            return cls(kind, temperature=float(arg) if arg else DEFAULT_TEMPERATURE)
        if kind == "hard":
            return cls(kind, normalize_hard=arg == "normalized")
        if arg:
            raise ConfigError(f"mode {kind!r} takes no parameter")
        return cls(kind)


@dataclass(frozen=True)
class Hyperparams:
    hidden: tuple = (64, 32, 16, 8)
    init_std: float = 0.01
    seed: int = 0


@dataclass
class NcfParams:
    user_emb: np.ndarray
    item_emb: np.ndarray
    trait_emb: object  # ndarray[5, 4] or None
    mlp: numerics.MlpParams
    mode: PersonalityMode

    def __post_init__(self):
        if self.user_emb.shape[1:] != (EMBEDDING_DIM,) or self.item_emb.shape[1:] != (EMBEDDING_DIM,):
            raise numerics.ShapeError("embedding width must be 16")
        if self.mode.has_trait_emb:
            if self.trait_emb is None or self.trait_emb.shape != (N_TRAITS, TRAIT_DIM):
                raise numerics.ShapeError(f"mode {self.mode.kind} needs a 5x4 trait table")
        elif self.trait_emb is not None:
            raise numerics.ShapeError(f"mode {self.mode.kind} has no trait table")
        if self.mlp.input_width != 2 * EMBEDDING_DIM + self.mode.feature_dim:
            raise numerics.ShapeError(
                f"MLP input width {self.mlp.input_width} != {2 * EMBEDDING_DIM + self.mode.feature_dim}"
            )

    @property
    def n_users(self):
        return self.user_emb.shape[0]

    @property
    def n_items(self):
        return self.item_emb.shape[0]

    def to_dict(self):
        d = {"user_emb": self.user_emb, "item_emb": self.item_emb}
        if self.trait_emb is not None:
            d["trait_emb"] = self.trait_emb
        for i, (w, b) in enumerate(self.mlp.layers):
            d[f"mlp.{i}.w"] = w
            d[f"mlp.{i}.b"] = b
        return d

    def with_dict(self, d):
        layers = [(d[f"mlp.{i}.w"], d[f"mlp.{i}.b"]) for i in range(len(self.mlp.layers))]
        return replace(
            self,
            user_emb=d["user_emb"],
            item_emb=d["item_emb"],
            trait_emb=d.get("trait_emb"),
            mlp=numerics.MlpParams(layers),
        )

    def copy(self):
        return self.with_dict({k: v.copy() for k, v in self.to_dict().items()})

    def flattened(self):
        """Copy of the parameters packed into one vector.

        Returns (flat vector, params whose arrays are views into it, slices
        keyed like ``to_dict``).
        """
        arrays = self.to_dict()
        flat = np.concatenate([a.ravel() for a in arrays.values()]).astype(np.float64)
        views, slices, lo = {}, {}, 0
        for k, a in arrays.items():
            slices[k] = slice(lo, lo + a.size)
            views[k] = flat[slices[k]].reshape(a.shape)
            lo += a.size
        return flat, self.with_dict(views), slices


def init_params(n_users, n_items, mode, hyper=Hyperparams()):
    """Embeddings ~ N(0, init_std^2), Glorot-uniform MLP weights, zero biases."""
    if n_users < 1 or n_items < 1:
        raise ValueError("need at least one user and one item")
    rng = np.random.default_rng(hyper.seed)
    user_emb = rng.normal(0.0, hyper.init_std, size=(n_users, EMBEDDING_DIM))
    item_emb = rng.normal(0.0, hyper.init_std, size=(n_items, EMBEDDING_DIM))
    trait_emb = rng.normal(0.0, hyper.init_std, size=(N_TRAITS, TRAIT_DIM)) if mode.has_trait_emb else None
    widths = [2 * EMBEDDING_DIM + mode.feature_dim, *hyper.hidden, 1]
    return NcfParams(user_emb, item_emb, trait_emb, numerics.init_mlp(widths, rng), mode)


def personality_feature(params, user, scores=None, labels=None):
    """Feature vector for one user; ``labels`` maps user -> Trait."""
    mode = params.mode
    if mode.kind == "plain":
        return np.zeros(0)
    if mode.kind in LABEL_MODES:
        if labels is None or user not in labels:
            raise ConfigError(f"mode {mode.kind} needs a baseline label for user {user!r}")
        return params.trait_emb[labels[user]].copy()
    if scores is None:
        raise ConfigError(f"mode {mode.kind} needs personality scores for user {user!r}")
    if mode.kind == "salient":
        return params.trait_emb[most_salient(scores)].copy()
    if mode.kind == "soft":
        return soft_weights(scores, mode.temperature) @ params.trait_emb
    return hard_vector(scores, normalize=mode.normalize_hard)


@dataclass
class FeatureContext:
    """Per-user personality inputs in dense user-index order.

    Learnable modes store a mixing matrix (one-hot rows for label modes and
    ``salient``, softmax weights for ``soft``) so the feature is
    ``mixing[u] @ trait_emb``. ``hard`` stores the fixed feature rows.
    """

    mode: PersonalityMode
    mixing: object = None
    fixed: object = None

    def features(self, params, users):
        if self.mode.kind == "plain":
            return np.zeros((len(users), 0))
        if self.mode.kind == "hard":
            return self.fixed[users]
        return self.mixing[users] @ params.trait_emb


def build_context(mode, user_ids, personalities=None, labels=None):
    """Resolve per-user feature inputs for ``user_ids`` (dense-index order).

    Label modes draw their labels from the mode when ``labels`` is not
    given. Users without scores under a score-dependent mode are rejected.
    """
    n = len(user_ids)
    if mode.kind == "plain":
        return FeatureContext(mode)
    if mode.kind in LABEL_MODES:
        if labels is None:
            baseline = "random" if mode.kind == "random" else "same"
            labels = assign_baseline_labels(user_ids, baseline, seed=mode.seed, trait=mode.trait)
        missing = [u for u in user_ids if u not in labels]
        if missing:
            raise ConfigError(f"{len(missing)} users lack a baseline label (first: {missing[0]!r})")
        mixing = np.zeros((n, N_TRAITS))
        mixing[np.arange(n), [int(labels[u]) for u in user_ids]] = 1.0
        return FeatureContext(mode, mixing=mixing)
    if personalities is None:
        raise ConfigError(f"mode {mode.kind} needs personality scores")
    missing = [u for u in user_ids if u not in personalities]
    if missing:
        raise ConfigError(
            f"{len(missing)} users lack personality scores under mode {mode.kind} (first: {missing[0]!r})"
        )
    scores = [personalities[u] for u in user_ids]
    if mode.kind == "salient":
        mixing = np.zeros((n, N_TRAITS))
        mixing[np.arange(n), [int(most_salient(s)) for s in scores]] = 1.0
        return FeatureContext(mode, mixing=mixing)
    if mode.kind == "soft":
        return FeatureContext(mode, mixing=np.array([soft_weights(s, mode.temperature) for s in scores]))
    fixed = np.array([hard_vector(s, normalize=mode.normalize_hard) for s in scores]).reshape(n, N_TRAITS)
    return FeatureContext(mode, fixed=fixed)


def assemble_inputs(params, users, items, context):
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    return np.hstack([params.user_emb[users], params.item_emb[items], context.features(params, users)])


def _check_indices(params, users, items):
    users = np.asarray(users)
    items = np.asarray(items)
    if users.size and (users.min() < 0 or users.max() >= params.n_users):
        raise IndexError(f"user index out of range [0, {params.n_users})")
    if items.size and (items.min() < 0 or items.max() >= params.n_items):
        raise IndexError(f"item index out of range [0, {params.n_items})")


def predict(params, user, item, feature):
    """Probability that ``user`` interacts with ``item``."""
    _check_indices(params, [user], [item])
    feature = np.asarray(feature, dtype=np.float64)
    if feature.shape != (params.mode.feature_dim,):
        raise numerics.ShapeError(f"feature length {feature.size} != {params.mode.feature_dim}")
    x = np.concatenate([params.user_emb[user], params.item_emb[item], feature])
    prob, _ = numerics.mlp_forward(params.mlp, x[None, :])
    return float(prob[0])


def predict_batch(params, users, items, context):
    _check_indices(params, users, items)
    prob, _ = numerics.mlp_forward(params.mlp, assemble_inputs(params, users, items, context))
    return prob


def batch_gradients(params, users, items, labels, context):
    """Mean clamped BCE over the batch and its gradient for every parameter.

    Returns (grads keyed like ``NcfParams.to_dict``, mean loss). Embedding
    rows not referenced by the batch get exactly zero gradient.
    """
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    if len(users) == 0:
        raise ValueError("empty batch")
    _check_indices(params, users, items)
    x = assemble_inputs(params, users, items, context)
    prob, cache = numerics.mlp_forward(params.mlp, x)
    loss, dz = numerics.bce_from_logits_grad(prob, np.asarray(labels, dtype=np.float64))
    layer_grads, dx = numerics.mlp_backward(params.mlp, cache, dz)

    grads = {}
    d = EMBEDDING_DIM
    g_user = np.zeros_like(params.user_emb)
    np.add.at(g_user, users, dx[:, :d])
    g_item = np.zeros_like(params.item_emb)
    np.add.at(g_item, items, dx[:, d : 2 * d])
    grads["user_emb"] = g_user
    grads["item_emb"] = g_item
    if params.mode.has_trait_emb:
        grads["trait_emb"] = context.mixing[users].T @ dx[:, 2 * d :]
    for i, (dw, db) in enumerate(layer_grads):
        grads[f"mlp.{i}.w"] = dw
        grads[f"mlp.{i}.b"] = db
    return grads, loss


def grad_check_batch(params, users, items, labels, context, samples=None, h=1e-5, seed=0):
    """Worst relative error between ``batch_gradients`` and central differences.

    Checks ``samples`` random coordinates of the packed parameter vector, or
    every coordinate when ``samples`` is None.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    grads, _ = batch_gradients(params, users, items, labels, context)
    flat, view, slices = params.flattened()
    analytic = np.zeros_like(flat)
    for k, g in grads.items():
        analytic[slices[k]] = g.ravel()
    if samples is None:
        coords = np.arange(flat.size)
    else:
        coords = np.random.default_rng(seed).choice(flat.size, size=min(samples, flat.size), replace=False)
    worst = 0.0
    for c in coords:
        saved = flat[c]
        flat[c] = saved + h
        plus = batch_gradients(view, users, items, labels, context)[1]
        flat[c] = saved - h
        minus = batch_gradients(view, users, items, labels, context)[1]
        flat[c] = saved
        worst = max(worst, numerics.relative_error(analytic[c], (plus - minus) / (2 * h)))
    return worst
