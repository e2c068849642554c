"""Dense linear algebra, activations, loss, MLP backprop and Adam.

Matrices are plain 2-D float64 numpy arrays; vectors are 1-D. Everything here
is a pure function of its inputs except ``adam_update``, which mutates the
parameters and the single-writer ``AdamState`` it is given.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidLabelError, ShapeError

PROB_EPS = 1e-7

RECTIFIER = "rectifier"
LOGISTIC = "logistic"


def _shape(a):
    return "x".join(str(d) for d in np.shape(a))


def affine_forward(x, w, b):
    """Return ``x @ w + b`` for x[B, n], w[n, m], b[m]."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"cannot chain x[{_shape(x)}] with w[{_shape(w)}]")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"bias[{_shape(b)}] does not match w[{_shape(w)}]")
    return x @ w + b


def logistic(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activations(x, kind):
    """Return (value, local derivative) of the activation applied elementwise."""
    x = np.asarray(x, dtype=np.float64)
    if kind == RECTIFIER:
        return np.maximum(x, 0.0), (x > 0).astype(np.float64)
    if kind == LOGISTIC:
        p = logistic(x)
        return p, p * (1.0 - p)
    raise ValueError(f"unknown activation {kind!r}")


def bce_loss(p, y):
    """Binary cross-entropy of probability ``p`` against label ``y``.

    Works elementwise on arrays. ``p`` is clamped to [1e-7, 1 - 1e-7] before
    the logarithm, so the derivative is zero wherever the clamp is active.
    """
    y_arr = np.asarray(y, dtype=np.float64)
    if not np.all((y_arr == 0.0) | (y_arr == 1.0)):
        raise InvalidLabelError(f"labels must be 0 or 1, got {y!r}")
    p_arr = np.asarray(p, dtype=np.float64)
    pc = np.clip(p_arr, PROB_EPS, 1.0 - PROB_EPS)
    loss = -(y_arr * np.log(pc) + (1.0 - y_arr) * np.log1p(-pc))
    dloss_dp = np.where(pc == p_arr, -y_arr / pc + (1.0 - y_arr) / (1.0 - pc), 0.0)
    if np.ndim(loss) == 0:
        return float(loss), float(dloss_dp)
    return loss, dloss_dp


@dataclass
class MlpParams:
    """Fully connected tower: rectifier hidden layers, logistic output unit.

    ``layers`` is a list of (weight[n_in, n_out], bias[n_out]).
    """

    layers: list

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("MLP needs at least one layer")
        prev = None
        for i, (w, b) in enumerate(self.layers):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: w[{_shape(w)}] b[{_shape(b)}]")
            if prev is not None and w.shape[0] != prev:
                raise ShapeError(f"layer {i}: input width {w.shape[0]} != previous output {prev}")
            prev = w.shape[1]
        if prev != 1:
            raise ShapeError(f"final layer width must be 1, got {prev}")

    @property
    def input_width(self):
        return self.layers[0][0].shape[0]

    @property
    def widths(self):
        return [self.input_width] + [w.shape[1] for w, _ in self.layers]

    def arrays(self):
        out = []
        for w, b in self.layers:
            out.extend((w, b))
        return out

    def with_arrays(self, arrays):
        it = iter(arrays)
        return MlpParams([(next(it), next(it)) for _ in self.layers])

    def copy(self):
        return MlpParams([(w.copy(), b.copy()) for w, b in self.layers])


def init_mlp(widths, rng):
    """Glorot-uniform weights, zero biases. ``widths`` includes input and the final 1."""
    layers = []
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-bound, bound, size=(n_in, n_out))
        layers.append((w, np.zeros(n_out)))
    return MlpParams(layers)


def mlp_forward(params, x):
    """Batched forward pass. Returns (probabilities[B], cache for backward)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_width:
        raise ShapeError(f"input[{_shape(x)}] does not fit MLP input width {params.input_width}")
    acts = [x]
    masks = []
    h = x
    last = len(params.layers) - 1
    for i, (w, b) in enumerate(params.layers):
        z = h @ w + b
        if i < last:
            masks.append(z > 0)
            h = np.maximum(z, 0.0)
            acts.append(h)
        else:
            prob = logistic(z[:, 0])
    return prob, (acts, masks)


def mlp_backward(params, cache, dz_out):
    """Backprop from d(objective)/d(output pre-activation), shape [B].

    Returns (list of (dW, db) per layer, d input[B, n_in]). Gradients are
    summed over the batch.
    """
    acts, masks = cache
    delta = np.asarray(dz_out, dtype=np.float64).reshape(-1, 1)
    grads = [None] * len(params.layers)
    for i in range(len(params.layers) - 1, -1, -1):
        w, _ = params.layers[i]
        grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
        delta = delta @ w.T
        if i > 0:
            delta = delta * masks[i - 1]
    return grads, delta


@dataclass
class MlpGrads:
    layers: list
    input: np.ndarray


def mlp_forward_backward(params, x, label=None):
    """Forward and backward for one input vector.

    With ``label`` given the gradients are of the clamped BCE loss; without
    it they are of the output probability itself.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected a vector, got [{_shape(x)}]")
    prob, cache = mlp_forward(params, x[None, :])
    p = prob[0]
    dp_dz = p * (1.0 - p)
    if label is None:
        dz = dp_dz
    else:
        _, dloss_dp = bce_loss(p, label)
        dz = dloss_dp * dp_dz
    grads, dx = mlp_backward(params, cache, np.array([dz]))
    return float(p), MlpGrads(grads, dx[0])


def bce_from_logits_grad(prob, labels):
    """Mean clamped BCE over a batch and its gradient w.r.t. each output pre-activation."""
    loss, dloss_dp = bce_loss(prob, labels)
    n = len(prob)
    return float(loss.mean()), dloss_dp * prob * (1.0 - prob) / n


@dataclass
class AdamState:
    m: dict
    v: dict
    step_count: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_init(params, learning_rate=0.001, beta1=0.9, beta2=0.999, epsilon=1e-8):
    return AdamState(
        m={k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()},
        v={k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()},
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
    )


def adam_update(params, grads, state):
    """In-place bias-corrected Adam step on dicts of arrays.

    Mutates ``params`` arrays and ``state``. Keys absent from ``grads`` are
    left alone (their moments do not decay).
    """
    for k, g in grads.items():
        if g.shape != params[k].shape or state.m[k].shape != params[k].shape:
            raise ShapeError(
                f"{k}: param[{_shape(params[k])}] grad[{_shape(g)}] moment[{_shape(state.m[k])}]"
            )
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    step = state.learning_rate / (1.0 - b1**t)
    v_scale = 1.0 / np.sqrt(1.0 - b2**t)
    for k, g in grads.items():
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        denom = np.sqrt(v)
        denom *= v_scale
        denom += state.epsilon
        params[k] -= step * m / denom


def adam_step(params, grads, state):
    """Pure variant of ``adam_update``: returns (new params, new state)."""
    new_params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    new_state = AdamState(
        m={k: a.copy() for k, a in state.m.items()},
        v={k: a.copy() for k, a in state.v.items()},
        step_count=state.step_count,
        learning_rate=state.learning_rate,
        beta1=state.beta1,
        beta2=state.beta2,
        epsilon=state.epsilon,
    )
    adam_update(new_params, grads, new_state)
    return new_params, new_state


def relative_error(a, b, floor=1e-6):
    # below ``floor`` the error is effectively absolute; central differences
    # carry ~1e-11 of rounding noise that would dominate a pure ratio
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_check(net, x, label, samples, h=1e-5, seed=0):
    """Worst relative error between analytic and central-difference gradients.

    Checks ``samples`` randomly chosen coordinates across all weights and
    biases, plus every input coordinate.
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    _, grads = mlp_forward_backward(net, x, label)
    analytic = []
    for dw, db in grads.layers:
        analytic.extend((dw, db))

    def loss_of(params, inp):
        p, _ = mlp_forward(params, inp[None, :])
        return bce_loss(p[0], label)[0]

    rng = np.random.default_rng(seed)
    arrays = net.arrays()
    sizes = np.array([a.size for a in arrays])
    worst = 0.0
    for _ in range(samples):
        which = int(rng.choice(len(arrays), p=sizes / sizes.sum()))
        flat = int(rng.integers(arrays[which].size))
        bumped = []
        for sign in (1.0, -1.0):
            trial = [a.copy() for a in arrays]
            trial[which].flat[flat] += sign * h
            bumped.append(loss_of(net.with_arrays(trial), x))
        numeric = (bumped[0] - bumped[1]) / (2.0 * h)
        worst = max(worst, relative_error(analytic[which].flat[flat], numeric))
    for j in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        numeric = (loss_of(net, xp) - loss_of(net, xm)) / (2.0 * h)
        worst = max(worst, relative_error(grads.input[j], numeric))
    return worst
