"""Two-layer unidirectional LSTM regressor from feature frames to 106-D poses.

Everything here is plain numpy: batched forward pass, exact backpropagation
through time, per-part weighted L2 loss with a smoothness term, and Adam.
Batches are ``(B, T, D)`` arrays padded to a common length with a ``(B, T)``
validity mask; padding only ever follows the valid steps, so it cannot leak
into earlier outputs of a causal network.
"""
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_array, check_scalar, check_sequences
from .audio import FeatureSequence
from .exceptions import DimMismatch, LengthMismatch, MalformedHeader, NonFiniteLoss
from .pose import POSE_DIM, PoseSequence, canonicalize_pose, default_weights

logger = logging.getLogger(__name__)

PARAM_NAMES = ("W1", "b1", "W2", "b2", "Wy", "by")
VAR_FLOOR = 1e-8


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def init_params(input_dim, hidden=300, output_dim=POSE_DIM, seed=0):
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` initialization of all weights and biases."""
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, shape)

    return {
        "W1": uniform((4 * hidden, input_dim + hidden), input_dim + hidden),
        "b1": uniform((4 * hidden,), input_dim + hidden),
        "W2": uniform((4 * hidden, 2 * hidden), 2 * hidden),
        "b2": uniform((4 * hidden,), 2 * hidden),
        "Wy": uniform((output_dim, hidden), hidden),
        "by": uniform((output_dim,), hidden),
    }


def param_shapes_ok(params, input_dim):
    H = params["Wy"].shape[1]
    return (params["W1"].shape == (4 * H, input_dim + H) and params["W2"].shape == (4 * H, 2 * H)
            and params["b1"].shape == (4 * H,) and params["b2"].shape == (4 * H,)
            and params["by"].shape == (params["Wy"].shape[0],))


def _layer_forward(xs, W, b):
    # Gate blocks along the rows of W: input, forget, output, cell candidate.
    B, T, Din = xs.shape
    H = W.shape[0] // 4
    Wx, WhT = W[:, :Din], np.ascontiguousarray(W[:, Din:].T)
    zx = xs @ Wx.T + b
    hs = np.empty((B, T, H))
    cs = np.empty((B, T, H))
    gates = np.empty((B, T, 4 * H))
    tcs = np.empty((B, T, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(T):
        z = zx[:, t] + h @ WhT
        a = gates[:, t]
        a[:, :3 * H] = _sigmoid(z[:, :3 * H])
        a[:, 3 * H:] = np.tanh(z[:, 3 * H:])
        c = a[:, H:2 * H] * c + a[:, :H] * a[:, 3 * H:]
        tc = np.tanh(c)
        h = a[:, 2 * H:3 * H] * tc
        hs[:, t], cs[:, t], tcs[:, t] = h, c, tc
    return hs, dict(xs=xs, hs=hs, cs=cs, gates=gates, tcs=tcs)


def _layer_backward(cache, W, dhs):
    xs, hs, cs, gates, tcs = cache["xs"], cache["hs"], cache["cs"], cache["gates"], cache["tcs"]
    B, T, Din = xs.shape
    H = W.shape[0] // 4
    Wx, Wh = W[:, :Din], np.ascontiguousarray(W[:, Din:])
    dzs = np.empty((B, T, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in reversed(range(T)):
        i, f, o, g = (gates[:, t, :H], gates[:, t, H:2 * H],
                      gates[:, t, 2 * H:3 * H], gates[:, t, 3 * H:])
        tc = tcs[:, t]
        c_prev = cs[:, t - 1] if t > 0 else np.zeros((B, H))
        dh = dhs[:, t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = dzs[:, t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
        dz[:, 3 * H:] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        dh_next = dz @ Wh
    h_prev = np.concatenate([np.zeros((B, 1, H)), hs[:, :-1]], axis=1)
    dz_flat = dzs.reshape(B * T, 4 * H).T
    dW = np.concatenate([dz_flat @ xs.reshape(B * T, Din), dz_flat @ h_prev.reshape(B * T, H)], axis=1)
    db = dzs.sum(axis=(0, 1))
    dxs = dzs @ Wx
    return dW, db, dxs


def lstm_forward(params, inputs):
    """Run the network on ``inputs`` of shape (T, D) or (B, T, D).

    Returns ``(outputs, cache)``; outputs have the input's batch layout with 106 features.
    """
    x = np.asarray(inputs, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if not param_shapes_ok(params, x.shape[2]):
        raise DimMismatch(f"parameters do not accept input dimension {x.shape[2]}")
    h1, c1 = _layer_forward(x, params["W1"], params["b1"])
    h2, c2 = _layer_forward(h1, params["W2"], params["b2"])
    y = h2 @ params["Wy"].T + params["by"]
    cache = dict(layer1=c1, layer2=c2, h2=h2, single=single)
    return (y[0] if single else y), cache


def lstm_backward(params, cache, d_outputs):
    """Exact parameter gradients given the loss gradient w.r.t. the outputs."""
    dy = np.asarray(d_outputs, dtype=np.float64)
    if cache["single"]:
        dy = dy[None]
    h2 = cache["h2"]
    grads = {
        "Wy": dy.reshape(-1, dy.shape[2]).T @ h2.reshape(-1, h2.shape[2]),
        "by": dy.sum(axis=(0, 1)),
    }
    dh2 = dy @ params["Wy"]
    grads["W2"], grads["b2"], dh1 = _layer_backward(cache["layer2"], params["W2"], dh2)
    grads["W1"], grads["b1"], _ = _layer_backward(cache["layer1"], params["W1"], dh1)
    return grads


def weighted_loss(pred, target, weights, smoothness=0.0):
    """``(1/T) sum_t sum_i w_i (pred - target)^2 + smoothness * diff_energy(pred) / T``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise LengthMismatch(f"prediction {pred.shape} and target {target.shape} differ")
    loss, _ = batch_loss_and_grad(pred[None], target[None], np.ones(pred.shape[:1], bool)[None],
                                  weights, smoothness)
    return loss


def batch_loss_and_grad(pred, target, mask, weights, smoothness=0.0, per_sequence=False):
    """Mean over the batch of per-sequence weighted losses, and its gradient w.r.t. ``pred``.

    Each sequence is normalized by its own valid length; masked steps get zero gradient.
    With ``per_sequence`` the first element is the array of per-sequence losses.
    """
    m = mask.astype(np.float64)
    lengths = np.maximum(m.sum(axis=1), 1.0)
    B = len(pred)
    scale = (1.0 / (B * lengths))[:, None, None]
    err = (pred - target) * m[..., None]
    per_seq = np.einsum("bti,i->b", err * err, weights) / lengths
    grad = 2.0 * err * weights * scale
    if smoothness and pred.shape[1] > 1:
        pair = (m[:, 1:] * m[:, :-1])[..., None]
        d = (pred[:, 1:] - pred[:, :-1]) * pair
        per_seq = per_seq + smoothness * np.sum(d * d, axis=(1, 2)) / lengths
        gd = 2.0 * smoothness * d * scale
        grad[:, 1:] += gd
        grad[:, :-1] -= gd
    if per_sequence:
        return per_seq, grad
    return float(per_seq.mean()), grad


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns new ``(params, state)`` without mutating inputs."""
    t = state.t + 1
    new_params, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = beta1 * state.m.get(name, 0.0) + (1 - beta1) * g
        v = beta2 * state.v.get(name, 0.0) + (1 - beta2) * np.square(g)
        denom = np.sqrt(v / (1 - beta2 ** t))
        denom += eps
        step = m / (1 - beta1 ** t)
        step /= denom
        step *= lr
        new_params[name] = p - step
        m_new[name], v_new[name] = m, v
    return new_params, AdamState(t, m_new, v_new)


def align_features_to_pose_clock(features, fps, n_frames=None):
    """Mean-pool feature frames into pose frames ``[t/fps, (t+1)/fps)``.

    Pose frames that receive no feature frame reuse the nearest preceding one.
    ``n_frames`` defaults to ``round(len(features) * stride * fps)``.
    """
    check_scalar(fps, "fps", min_val=0.0, include_min=False)
    values = features.values
    if len(values) == 0:
        raise ValueError("features are empty")
    if n_frames is None:
        n_frames = max(1, int(round(len(values) * features.stride * fps)))
    bins = np.floor(np.arange(len(values)) * features.stride * fps + 1e-9).astype(int)
    out = np.empty((n_frames, values.shape[1]))
    sums = np.zeros((n_frames, values.shape[1]))
    counts = np.zeros(n_frames)
    keep = bins < n_frames
    np.add.at(sums, bins[keep], values[keep])
    np.add.at(counts, bins[keep], 1.0)
    last = values[0]
    for t in range(n_frames):
        if counts[t]:
            out[t] = sums[t] / counts[t]
            last = values[np.flatnonzero(bins == t)[-1]]
        else:
            preceding = np.flatnonzero(bins < t)
            last = values[preceding[-1]] if len(preceding) else last
            out[t] = last
    return out


def delay_frames(delay, fps):
    return int(round(delay * fps))


def apply_output_delay(targets, delay):
    """Shift supervision later by ``round(delay * fps)`` frames, padding with frame 0."""
    check_scalar(delay, "delay", min_val=0.0)
    d = delay_frames(delay, targets.fps)
    return PoseSequence(shift_frames(targets.frames, d), targets.fps)


def shift_frames(frames, d):
    if d == 0 or len(frames) == 0:
        return frames.copy()
    idx = np.maximum(np.arange(len(frames)) - d, 0)
    return frames[idx]


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 100
    delay: float = 0.2
    fps: float = 12.0
    smoothness: float = 0.1
    epochs: int = 100
    hidden: int = 300
    seed: int = 0
    weights: np.ndarray = None
    input_mean: np.ndarray = None
    input_var: np.ndarray = None

    def __post_init__(self):
        check_scalar(self.learning_rate, "learning_rate", min_val=0.0)
        check_scalar(self.batch_size, "batch_size", min_val=1, target_type=int)
        check_scalar(self.delay, "delay", min_val=0.0)
        check_scalar(self.smoothness, "smoothness", min_val=0.0)
        check_scalar(self.epochs, "epochs", min_val=0, target_type=int)
        check_scalar(self.hidden, "hidden", min_val=1, target_type=int)
        if self.weights is None:
            self.weights = default_weights()

    @property
    def delay_frames(self):
        return delay_frames(self.delay, self.fps)


@dataclass
class TrainResult:
    params: dict
    history: list
    config: TrainConfig


def _pad(seqs, width):
    T = max((len(s) for s in seqs), default=0)
    out = np.zeros((len(seqs), T, width))
    mask = np.zeros((len(seqs), T), dtype=bool)
    for b, s in enumerate(seqs):
        out[b, :len(s)] = s
        mask[b, :len(s)] = True
    return out, mask


def standardize(x, mean, var):
    return (x - mean) / np.sqrt(var)


def train(pairs, cfg, params=None):
    """Fit the network on ``(inputs (T, D), targets (T, 106))`` pairs.

    Inputs are standardized with statistics of the whole training set, targets
    are delayed by ``cfg.delay_frames``, and each epoch visits the pairs in a
    seeded random order, one Adam step per mini-batch of ``cfg.batch_size``
    sequences. The recorded loss of an epoch is the mean per-sequence loss
    before each batch's update.
    """
    if not pairs:
        raise ValueError("need at least one training pair")
    xs = check_sequences([p[0] for p in pairs], "inputs")
    ys = check_sequences([p[1] for p in pairs], "targets", dim=POSE_DIM)
    for x, y in zip(xs, ys):
        if len(x) != len(y):
            raise LengthMismatch(f"input has {len(x)} steps, target {len(y)}")
    D = xs[0].shape[1]
    if any(x.shape[1] != D for x in xs):
        raise DimMismatch("all inputs must share one dimension")
    stacked = np.vstack(xs)
    mean = stacked.mean(axis=0)
    var = np.maximum(stacked.var(axis=0), VAR_FLOOR)
    cfg = replace(cfg, input_mean=mean, input_var=var)
    xs = [standardize(x, mean, var) for x in xs]
    d = cfg.delay_frames
    ys = [shift_frames(y, d) for y in ys]

    if params is None:
        params = init_params(D, cfg.hidden, POSE_DIM, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    history = []
    n = len(xs)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        seq_loss = np.empty(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            X, mask = _pad([xs[i] for i in batch], D)
            Y, _ = _pad([ys[i] for i in batch], POSE_DIM)
            pred, cache = lstm_forward(params, X)
            losses, dpred = batch_loss_and_grad(pred, Y, mask, cfg.weights, cfg.smoothness, per_sequence=True)
            if not np.all(np.isfinite(losses)):
                raise NonFiniteLoss(epoch, float(np.sum(losses)))
            seq_loss[batch] = losses
            if cfg.learning_rate > 0:
                grads = lstm_backward(params, cache, dpred)
                params, state = adam_step(params, grads, state, cfg.learning_rate)
        # summed in index order so the value does not depend on the shuffle
        history.append(float(np.mean(seq_loss)))
        logger.debug("epoch %d loss %.6g", epoch, history[-1])
    return TrainResult(params, history, cfg)


def infer(params, cfg, features, fps=None, n_frames=None):
    """Predict a pose sequence from features on the 10 ms clock (or already pose-aligned arrays).

    The network's outputs lag the input by the training delay, so the input is
    padded with ``delay_frames`` copies of its last frame and the first
    ``delay_frames`` outputs are dropped. Body rotations are wrapped into the
    canonical range.
    """
    fps = cfg.fps if fps is None else fps
    if isinstance(features, FeatureSequence):
        if len(features) == 0:
            return PoseSequence(np.zeros((0, POSE_DIM)), fps)
        x = align_features_to_pose_clock(features, fps, n_frames)
    else:
        x = check_array(features, "features", ndim=2)
        if len(x) == 0:
            return PoseSequence(np.zeros((0, POSE_DIM)), fps)
    if cfg.input_mean is None or len(cfg.input_mean) != x.shape[1]:
        raise DimMismatch(f"model expects {None if cfg.input_mean is None else len(cfg.input_mean)}-D input, "
                          f"got {x.shape[1]}")
    x = standardize(x, cfg.input_mean, cfg.input_var)
    d = cfg.delay_frames
    if d:
        x = np.vstack([x, np.repeat(x[-1:], d, axis=0)])
    y, _ = lstm_forward(params, x)
    return PoseSequence(canonicalize_pose(y[d:]), fps)


def write_model(result, path):
    """Text model file: header, named weight blocks, then normalization statistics."""
    p, cfg = result.params, result.config
    D = len(cfg.input_mean)
    H = p["Wy"].shape[1]
    blocks = [(name, np.atleast_2d(p[name])) for name in PARAM_NAMES]
    blocks += [("input_mean", cfg.input_mean[None]), ("input_var", cfg.input_var[None]),
               ("fps", np.array([[cfg.fps]])), ("delay", np.array([[cfg.delay]]))]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"LSTM 1 {D} {H} {POSE_DIM} {cfg.delay_frames}\n")
        for name, arr in blocks:
            fh.write(f"{name} {arr.shape[0]} {arr.shape[1]}\n")
            for row in arr:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_model(path):
    """Load ``(params, TrainConfig)`` written by ``write_model``."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header = lines[0].split() if lines else []
    if len(header) != 6 or header[:2] != ["LSTM", "1"]:
        raise MalformedHeader(f"{path}: not an LSTM 1 model file")
    D, H, O = int(header[2]), int(header[3]), int(header[4])
    blocks, i = {}, 1
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        name, rows, cols = lines[i].split()
        rows, cols = int(rows), int(cols)
        data = [ln.split() for ln in lines[i + 1:i + 1 + rows]]
        if len(data) != rows or any(len(r) != cols for r in data):
            raise MalformedHeader(f"{path}: block {name} is truncated")
        blocks[name] = np.array(data, dtype=np.float64).reshape(rows, cols)
        i += 1 + rows
    try:
        params = {name: blocks[name] for name in PARAM_NAMES}
        for name in ("b1", "b2", "by"):
            params[name] = params[name][0]
        cfg = TrainConfig(hidden=H, fps=float(blocks["fps"][0, 0]), delay=float(blocks["delay"][0, 0]),
                          input_mean=blocks["input_mean"][0], input_var=blocks["input_var"][0])
    except KeyError as exc:
        raise MalformedHeader(f"{path}: missing block {exc}") from exc
    if not param_shapes_ok(params, D) or params["Wy"].shape[0] != O:
        raise MalformedHeader(f"{path}: block shapes do not match the header")
    return params, cfg


class LSTMPoseRegressor(BaseEstimator, RegressorMixin):
    """Sequence regressor: lists of ``(T, D)`` feature arrays to lists of ``(T, 106)`` poses.

    Inputs must already be on the pose clock (see ``align_features_to_pose_clock``).
    """

    def __init__(self, hidden_size=300, learning_rate=0.001, batch_size=100, delay=0.2, fps=12.0,
                 smoothness=0.1, epochs=100, seed=0):
        self.hidden_size = hidden_size
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.delay = delay
        self.fps = fps
        self.smoothness = smoothness
        self.epochs = epochs
        self.seed = seed

    def _config(self):
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size, delay=self.delay,
                           fps=self.fps, smoothness=self.smoothness, epochs=self.epochs,
                           hidden=self.hidden_size, seed=self.seed)

    def fit(self, X, y):
        X = check_sequences(X, "X")
        y = check_sequences(y, "y", dim=POSE_DIM)
        if len(X) != len(y):
            raise LengthMismatch(f"{len(X)} input sequences but {len(y)} targets")
        result = train(list(zip(X, y)), self._config())
        self.params_ = result.params
        self.config_ = result.config
        self.loss_history_ = result.history
        self.n_features_in_ = X[0].shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_sequences(X, "X", dim=self.n_features_in_)
        return [infer(self.params_, self.config_, x).frames for x in X]

    def score(self, X, y, sample_weight=None):
        """Negative mean weighted loss against undelayed targets."""
        preds = self.predict(X)
        y = check_sequences(y, "y", dim=POSE_DIM)
        losses = [weighted_loss(p, t, self.config_.weights, self.smoothness) for p, t in zip(preds, y)]
        return -float(np.average(losses, weights=sample_weight))
