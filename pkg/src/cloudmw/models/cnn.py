"""Compact densely connected CNN with hand-written backpropagation.

Layout (channels last, one input channel holding the P x F sample matrix)::

    conv3x3 stem [-> 2x2 average pool] -> [dense block -> transition] x (blocks - 1)
    -> dense block -> relu -> global average pool -> linear -> sigmoid

Dense-block layer ``i`` is relu -> conv3x3 producing ``growth`` channels and
reads the concatenation of the block input and all earlier layer outputs, so a
block maps ``c`` channels to ``c + layers * growth``. A transition is relu ->
conv1x1 halving the channels -> 2x2 average pool. Convolutions use zero
"same" padding; pooling floors odd sizes (a trailing odd row/column is dropped).
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass

import numpy as np

from .base import Classifier, sigmoid


class ShapeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# layers; each caches what its backward pass needs and writes parameter
# gradients into ``grads`` under the same names as in ``params``


class Conv2d:
    """Stride-1 convolution with zero "same" padding; weights stored (k, k, cin, cout)."""

    def __init__(self, name: str, params: dict, grads: dict):
        self.name, self.params, self.grads = name, params, grads

    @staticmethod
    def init(params, name, cin, cout, k, rng, dtype):
        std = np.sqrt(2.0 / (cin * k * k))
        params[f"{name}.W"] = (rng.standard_normal((k, k, cin, cout)) * std).astype(dtype)
        params[f"{name}.b"] = np.zeros(cout, dtype=dtype)

    # The padded input is multiplied once by all k*k kernel taps side by side;
    # each tap's output plane is then shifted into place and summed. This
    # avoids building an im2col matrix of the (wide) input.

    def forward(self, x):
        W = self.params[f"{self.name}.W"]
        k, _, cin, cout = W.shape
        N, H, Wd, C = x.shape
        if C != cin:
            raise ShapeError(f"{self.name}: expected {cin} channels, got {C}")
        p = k // 2
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        taps = W.transpose(2, 0, 1, 3).reshape(C, k * k * cout)
        Y = (xp.reshape(-1, C) @ taps).reshape(N, H + 2 * p, Wd + 2 * p, k, k, cout)
        out = np.broadcast_to(self.params[f"{self.name}.b"], (N, H, Wd, cout)).copy()
        for i in range(k):
            for j in range(k):
                out += Y[:, i:i + H, j:j + Wd, i, j, :]
        self.cache = (xp, x.shape)
        return out

    def backward(self, dy):
        xp, (N, H, Wd, C) = self.cache
        W = self.params[f"{self.name}.W"]
        k, _, _, cout = W.shape
        p = k // 2
        dY = np.zeros((N, H + 2 * p, Wd + 2 * p, k, k, cout), dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dY[:, i:i + H, j:j + Wd, i, j, :] = dy
        dY = dY.reshape(-1, k * k * cout)
        dtaps = xp.reshape(-1, C).T @ dY
        self.grads[f"{self.name}.W"] = dtaps.reshape(C, k, k, cout).transpose(1, 2, 0, 3)
        self.grads[f"{self.name}.b"] = dy.reshape(-1, cout).sum(axis=0)
        taps = W.transpose(2, 0, 1, 3).reshape(C, k * k * cout)
        dxp = (dY @ taps.T).reshape(N, H + 2 * p, Wd + 2 * p, C)
        return dxp[:, p:p + H, p:p + Wd, :]


class ReLU:
    def forward(self, x):
        self.mask = x > 0
        return x * self.mask

    def backward(self, dy):
        return dy * self.mask


class AvgPool2:
    def forward(self, x):
        N, H, W, C = x.shape
        h, w = H // 2, W // 2
        if h == 0 or w == 0:
            raise ShapeError(f"cannot pool a {H}x{W} map")
        self.shape = x.shape
        return x[:, : 2 * h, : 2 * w, :].reshape(N, h, 2, w, 2, C).mean(axis=(2, 4))

    def backward(self, dy):
        h, w = dy.shape[1], dy.shape[2]
        dx = np.zeros(self.shape, dtype=dy.dtype)
        dx[:, : 2 * h, : 2 * w, :] = np.repeat(np.repeat(dy, 2, axis=1), 2, axis=2) * 0.25
        return dx


class Concat:
    """Channel concatenation; backward splits the gradient back."""

    def forward(self, xs):
        self.sizes = [x.shape[-1] for x in xs]
        return np.concatenate(xs, axis=-1)

    def backward(self, dy):
        cuts = np.cumsum(self.sizes)[:-1]
        return np.split(dy, cuts, axis=-1)


class GlobalAvgPool:
    def forward(self, x):
        self.shape = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, dy):
        N, H, W, C = self.shape
        return np.broadcast_to(dy[:, None, None, :] / (H * W), self.shape).copy()


class Linear:
    def __init__(self, name, params, grads):
        self.name, self.params, self.grads = name, params, grads

    def forward(self, x):
        self.x = x
        return x @ self.params[f"{self.name}.W"] + self.params[f"{self.name}.b"]

    def backward(self, dy):
        self.grads[f"{self.name}.W"] = self.x.T @ dy
        self.grads[f"{self.name}.b"] = dy.sum(axis=0)
        return dy @ self.params[f"{self.name}.W"].T


class DenseBlock:
    def __init__(self, name, params, grads, cin, layers, growth):
        self.cin, self.layers, self.growth = cin, layers, growth
        self.relus = [ReLU() for _ in range(layers)]
        self.convs = [Conv2d(f"{name}.l{i}", params, grads) for i in range(layers)]
        self.cats = [Concat() for _ in range(layers)]

    @property
    def cout(self):
        return self.cin + self.layers * self.growth

    def forward(self, x):
        feats = x
        for relu, conv, cat in zip(self.relus, self.convs, self.cats):
            feats = cat.forward([feats, conv.forward(relu.forward(feats))])
        return feats

    def backward(self, dy):
        for relu, conv, cat in reversed(list(zip(self.relus, self.convs, self.cats))):
            d_prev, d_new = cat.backward(dy)
            dy = d_prev + relu.backward(conv.backward(d_new))
        return dy


class Transition:
    def __init__(self, name, params, grads):
        self.relu, self.conv, self.pool = ReLU(), Conv2d(name, params, grads), AvgPool2()

    def forward(self, x):
        return self.pool.forward(self.conv.forward(self.relu.forward(x)))

    def backward(self, dy):
        return self.relu.backward(self.conv.backward(self.pool.backward(dy)))


# ---------------------------------------------------------------------------
# network


@dataclass(frozen=True)
class CnnConfig:
    init_channels: int = 16
    blocks: int = 2
    layers_per_block: int = 4
    growth: int = 12
    max_epochs: int = 100
    patience: int = 5
    learning_rate: float = 1e-3
    batch_size: int = 32
    dtype: str = "float32"
    seed: int = 0
    stem_pool: bool = True

    def __post_init__(self):
        for k in ("init_channels", "blocks", "layers_per_block", "growth", "max_epochs", "patience", "batch_size"):
            if getattr(self, k) < 1:
                raise ValueError(f"{k} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def block_channels(cfg: CnnConfig) -> list[tuple[int, int]]:
    """(in, out) channel counts of every dense block."""
    out, c = [], cfg.init_channels
    for b in range(cfg.blocks):
        cout = c + cfg.layers_per_block * cfg.growth
        out.append((c, cout))
        c = cout // 2 if b < cfg.blocks - 1 else cout
    return out


def output_hw(cfg: CnnConfig, h: int, w: int) -> tuple[int, int]:
    for _ in range(cfg.blocks - 1 + int(cfg.stem_pool)):
        h, w = h // 2, w // 2
    return h, w


class DenseNet:
    def __init__(self, cfg: CnnConfig, params: dict | None = None, zero_head: bool = True):
        self.cfg = cfg
        self.grads: dict[str, np.ndarray] = {}
        dtype = np.dtype(cfg.dtype)
        if params is None:
            params = self._init_params(cfg, dtype, zero_head)
        self.params = params
        self.stem = Conv2d("stem", params, self.grads)
        self.stem_pool = AvgPool2() if cfg.stem_pool else None
        self.blocks, self.transitions = [], []
        for b, (cin, _) in enumerate(block_channels(cfg)):
            self.blocks.append(DenseBlock(f"block{b}", params, self.grads, cin, cfg.layers_per_block, cfg.growth))
            if b < cfg.blocks - 1:
                self.transitions.append(Transition(f"trans{b}", params, self.grads))
        self.head_relu, self.gap, self.head = ReLU(), GlobalAvgPool(), Linear("head", params, self.grads)

    @staticmethod
    def _init_params(cfg, dtype, zero_head):
        rng = np.random.default_rng(cfg.seed)
        p: dict[str, np.ndarray] = {}
        Conv2d.init(p, "stem", 1, cfg.init_channels, 3, rng, dtype)
        chans = block_channels(cfg)
        for b, (cin, cout) in enumerate(chans):
            for i in range(cfg.layers_per_block):
                Conv2d.init(p, f"block{b}.l{i}", cin + i * cfg.growth, cfg.growth, 3, rng, dtype)
            if b < cfg.blocks - 1:
                Conv2d.init(p, f"trans{b}", cout, cout // 2, 1, rng, dtype)
        c_last = chans[-1][1]
        if zero_head:
            p["head.W"] = np.zeros((c_last, 1), dtype=dtype)
        else:
            p["head.W"] = (rng.standard_normal((c_last, 1)) * np.sqrt(1.0 / c_last)).astype(dtype)
        p["head.b"] = np.zeros(1, dtype=dtype)
        return p

    def logits(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=self.params["stem.W"].dtype)
        if x.ndim == 2:
            x = x[None, :, :, None]
        elif x.ndim == 3:
            x = x[..., None]
        if x.ndim != 4 or x.shape[-1] != 1:
            raise ShapeError(f"expected input shaped (N, P, F, 1), got {x.shape}")
        h, w = output_hw(self.cfg, x.shape[1], x.shape[2])
        if h < 1 or w < 1:
            raise ShapeError(f"{x.shape[1]}x{x.shape[2]} input too small for this configuration")
        z = self.stem.forward(x)
        if self.stem_pool is not None:
            z = self.stem_pool.forward(z)
        for b, block in enumerate(self.blocks):
            z = block.forward(z)
            if b < len(self.transitions):
                z = self.transitions[b].forward(z)
        z = self.gap.forward(self.head_relu.forward(z))
        return self.head.forward(z)[:, 0]

    def backward(self, dlogit: np.ndarray) -> dict:
        dz = self.head.backward(dlogit[:, None])
        dz = self.head_relu.backward(self.gap.backward(dz))
        for b in reversed(range(len(self.blocks))):
            if b < len(self.transitions):
                dz = self.transitions[b].backward(dz)
            dz = self.blocks[b].backward(dz)
        if self.stem_pool is not None:
            dz = self.stem_pool.backward(dz)
        self.stem.backward(dz)
        return self.grads

    def loss_and_grads(self, x, y) -> tuple[float, dict]:
        """Mean binary cross-entropy of the batch and its parameter gradients."""
        z = self.logits(x)
        y = np.asarray(y, dtype=z.dtype)
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
        p = sigmoid(z).astype(z.dtype)
        self.backward((p - y) / len(y))
        return loss, self.grads


def cnn_forward(matrix, params: dict, cfg: CnnConfig) -> np.ndarray:
    return sigmoid(DenseNet(cfg, params).logits(matrix))


def cnn_backward(x, y, params: dict, cfg: CnnConfig) -> tuple[float, dict]:
    net = DenseNet(cfg, params)
    loss, grads = net.loss_and_grads(x, y)
    return loss, dict(grads)


def early_stop(history, patience: int) -> tuple[bool, int]:
    """Stop once the best validation accuracy is ``patience`` epochs old.

    Returns ``(stop, best_epoch)`` where ``best_epoch`` is the first epoch that
    reached the maximum.
    """
    if len(history) == 0:
        raise ValueError("empty history")
    best = int(np.argmax(history))
    return (len(history) - 1 - best) >= patience, best


def select_best(accuracy, loss) -> int:
    """Epoch with the highest validation accuracy, ties broken by lowest validation loss."""
    acc = np.asarray(accuracy, dtype=np.float64)
    if acc.size == 0 or len(loss) != acc.size:
        raise ValueError("need matching, non-empty accuracy and loss histories")
    tied = np.flatnonzero(acc == acc.max())
    return int(tied[np.argmin(np.asarray(loss, dtype=np.float64)[tied])])


class Adam:
    def __init__(self, params: dict, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
        self.params, self.lr, self.b1, self.b2, self.eps = params, lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            self.params[k] -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(self.params[k].dtype)


class DenseCNN(Classifier):
    kind = "cnn"

    def __init__(self, cfg: CnnConfig | None = None, **overrides):
        cfg = cfg or CnnConfig()
        if overrides:
            cfg = CnnConfig(**{**asdict(cfg), **overrides})
        self.cfg = cfg

    def _inputs(self, X):
        X = np.asarray(X, dtype=self.cfg.dtype)
        if X.ndim == 2:
            X = X[None]
        if X.ndim != 3:
            raise ShapeError(f"expected (N, P, F) matrices, got shape {X.shape}")
        return X[..., None]

    def fit(self, X, y, X_val=None, y_val=None):
        X = self._inputs(X)
        y = np.asarray(y, dtype=np.int64)
        if len(X) == 0:
            raise ValueError("empty training set")
        if X_val is None:
            X_val, y_val = X, y
        else:
            X_val, y_val = self._inputs(X_val), np.asarray(y_val, dtype=np.int64)
        cfg = self.cfg
        net = DenseNet(cfg)
        opt = Adam(net.params, lr=cfg.learning_rate)
        rng = np.random.default_rng(cfg.seed + 1)
        self.history_, self.val_loss_, self.train_loss_ = [], [], []
        best_params = copy.deepcopy(net.params)
        for epoch in range(cfg.max_epochs):
            order = rng.permutation(len(X))
            losses = []
            for s in range(0, len(X), cfg.batch_size):
                idx = order[s:s + cfg.batch_size]
                loss, grads = net.loss_and_grads(X[idx], y[idx])
                opt.step(grads)
                losses.append(loss)
            self.train_loss_.append(float(np.mean(losses)))
            p_val = np.clip(self._score_with(net, X_val), 1e-12, 1 - 1e-12)
            self.history_.append(float(np.mean((p_val >= 0.5) == y_val)))
            self.val_loss_.append(float(-np.mean(y_val * np.log(p_val) + (1 - y_val) * np.log(1 - p_val))))
            if select_best(self.history_, self.val_loss_) == epoch:
                best_params = copy.deepcopy(net.params)
            if early_stop(self.history_, cfg.patience)[0]:
                break
        self.best_epoch_ = select_best(self.history_, self.val_loss_)
        self.net_ = DenseNet(cfg, best_params)
        return self

    def _score_with(self, net, X, batch=256):
        out = [sigmoid(net.logits(X[s:s + batch])) for s in range(0, len(X), batch)]
        return np.concatenate(out).astype(np.float64) if out else np.zeros(0)

    def score(self, X):
        return self._score_with(self.net_, self._inputs(X))

    def hyperparams(self):
        return asdict(self.cfg)

    def arrays(self):
        out = dict(self.net_.params)
        out["_history"] = np.asarray(self.history_, dtype=np.float64)
        out["_val_loss"] = np.asarray(self.val_loss_, dtype=np.float64)
        return out

    @classmethod
    def from_state(cls, hp, arrays):
        m = cls(CnnConfig(**hp))
        params = {k: v for k, v in arrays.items() if not k.startswith("_")}
        m.net_ = DenseNet(m.cfg, params)
        m.history_ = [float(v) for v in arrays.get("_history", [])]
        m.val_loss_ = [float(v) for v in arrays.get("_val_loss", [])]
        m.best_epoch_ = select_best(m.history_, m.val_loss_) if m.history_ else 0
        return m
