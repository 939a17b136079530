"""LiDAR-to-action MLP (108 -> 256 -> 256 -> 2) with hand-written backprop.

Hidden layers use tanh; the two raw outputs are squashed into actuator limits
(``steer = max_steer * tanh(raw0)``, ``speed = max_speed * sigmoid(raw1)``).
Training regresses the raw outputs onto the inverse-squashed action labels
with a mean-squared loss and Adam.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .vehicle import Action

FORMAT_VERSION = 1
SQUASH_MARGIN = 1e-4
LAYERS = (108, 256, 256, 2)


class TrainingError(FloatingPointError):
    pass


@dataclass(frozen=True, eq=False)
class Policy:
    params: tuple[np.ndarray, ...]  # W1, b1, W2, b2, W3, b3 (W has shape fan_in x fan_out)
    max_steer: float = 0.41
    max_speed: float = 8.0
    activation: str = "tanh"

    @property
    def layers(self) -> tuple[int, ...]:
        ws = self.params[0::2]
        return (ws[0].shape[0],) + tuple(w.shape[1] for w in ws)

    def copy(self) -> "Policy":
        return replace(self, params=tuple(p.copy() for p in self.params))

    def astype(self, dtype) -> "Policy":
        return replace(self, params=tuple(p.astype(dtype) for p in self.params))

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def is_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.params)


def init_policy(seed, layers=LAYERS, max_steer: float = 0.41, max_speed: float = 8.0,
                activation: str = "tanh", dtype=np.float32) -> Policy:
    """Uniform fan-in scaled weights ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    rng = np.random.default_rng(seed)
    params = []
    for fan_in, fan_out in zip(layers[:-1], layers[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        params.append(rng.uniform(-bound, bound, (fan_in, fan_out)).astype(dtype))
        params.append(rng.uniform(-bound, bound, fan_out).astype(dtype))
    return Policy(tuple(params), max_steer, max_speed, activation)


def downsample(scan: np.ndarray, max_range: float = 10.0, stride: int = 10,
               length: int = 1080) -> np.ndarray:
    """Every ``stride``-th beam, clipped and scaled into (0, 1]."""
    scan = np.asarray(scan, dtype=np.float64)
    if scan.shape != (length,):
        raise ValueError(f"expected a scan of length {length}, got shape {scan.shape}")
    return np.minimum(scan[::stride], max_range) / max_range


def _act(x, kind):
    return np.tanh(x) if kind == "tanh" else x


def raw_forward(p: Policy, X: np.ndarray, keep: bool = False):
    """Raw (pre-squash) outputs; with ``keep`` also the hidden activations."""
    h = X
    acts = [X]
    n_layers = len(p.params) // 2
    for k in range(n_layers):
        z = h @ p.params[2 * k] + p.params[2 * k + 1]
        h = z if k == n_layers - 1 else _act(z, p.activation)
        acts.append(h)
    return (h, acts) if keep else h


def backward(p: Policy, acts: list, grad_out: np.ndarray) -> list[np.ndarray]:
    """Gradients of the loss w.r.t. every parameter given ``dL/d(raw output)``."""
    grads = [None] * len(p.params)
    g = grad_out
    n_layers = len(p.params) // 2
    for k in reversed(range(n_layers)):
        h_in = acts[k]
        grads[2 * k] = h_in.T @ g
        grads[2 * k + 1] = g.sum(axis=0)
        if k > 0:
            g = g @ p.params[2 * k].T
            if p.activation == "tanh":
                g = g * (1.0 - h_in * h_in)
    return grads


def squash(p: Policy, raw: np.ndarray) -> np.ndarray:
    steer = p.max_steer * np.tanh(raw[..., 0])
    speed = p.max_speed / (1.0 + np.exp(-raw[..., 1]))
    return np.stack([steer, speed], axis=-1)


def encode_targets(actions: np.ndarray, max_steer: float, max_speed: float) -> np.ndarray:
    """Inverse of :func:`squash`, clamped ``SQUASH_MARGIN`` away from the limits."""
    actions = np.atleast_2d(actions)
    a = np.clip(actions[:, 0] / max_steer, -1 + SQUASH_MARGIN, 1 - SQUASH_MARGIN)
    b = np.clip(actions[:, 1] / max_speed, SQUASH_MARGIN, 1 - SQUASH_MARGIN)
    return np.column_stack([np.arctanh(a), np.log(b / (1 - b))])


def forward(p: Policy, obs: np.ndarray) -> Action:
    raw = raw_forward(p, np.asarray(obs, dtype=p.params[0].dtype)[None, :])[0]
    steer = p.max_steer * math.tanh(float(raw[0]))
    speed = p.max_speed / (1.0 + math.exp(-float(raw[1])))
    return Action(steer, speed)


def mse_loss(p: Policy, X: np.ndarray, T: np.ndarray) -> float:
    Y = raw_forward(p, X)
    return float(np.mean((Y - T) ** 2))


def loss_and_grads(p: Policy, X: np.ndarray, T: np.ndarray) -> tuple[float, list[np.ndarray]]:
    Y, acts = raw_forward(p, X, keep=True)
    diff = Y - T
    loss = float(np.mean(diff * diff))
    grads = backward(p, acts, (2.0 / diff.size) * diff)
    return loss, grads


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)


def train(p0: Policy, X: np.ndarray, actions: np.ndarray, cfg: TrainConfig,
          seed=None) -> Policy:
    """Mini-batch Adam on shuffled data for ``cfg.epochs`` passes.

    Deterministic given ``(p0, X, actions, cfg, seed)``; ``seed`` defaults to
    ``cfg.seed``.  Raises :class:`TrainingError` on a non-finite loss.
    """
    p = p0.copy()
    if cfg.epochs == 0 or len(X) == 0:
        return p
    dtype = p.params[0].dtype
    X = np.asarray(X, dtype=dtype)
    T = encode_targets(np.asarray(actions, dtype=np.float64), p.max_steer, p.max_speed).astype(dtype)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    opt = Adam(lr=cfg.learning_rate)
    params = list(p.params)
    n = len(X)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(p, X[idx], T[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss {loss} at epoch {epoch}, batch offset {start}")
            opt.step(params, grads)
    if not p.is_finite():
        raise TrainingError("non-finite parameters after training")
    return p


def training_loss(p: Policy, X: np.ndarray, actions: np.ndarray, chunk: int = 8192) -> float:
    T = encode_targets(np.asarray(actions, dtype=np.float64), p.max_steer, p.max_speed)
    total = 0.0
    for s in range(0, len(X), chunk):
        Y = raw_forward(p, np.asarray(X[s:s + chunk], dtype=p.params[0].dtype))
        total += float(np.sum((Y - T[s:s + chunk]) ** 2))
    return total / T.size


def gradient_check(p: Policy, X: np.ndarray, T: np.ndarray, n_params: int = 50,
                   step: float = 1e-5, seed=0) -> float:
    """Max relative error between backprop and central differences over
    ``n_params`` randomly chosen parameters (computed in float64)."""
    p = p.astype(np.float64)
    X = np.asarray(X, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    _, grads = loss_and_grads(p, X, T)
    rng = np.random.default_rng(seed)
    sizes = [q.size for q in p.params]
    picks = rng.choice(sum(sizes), size=min(n_params, sum(sizes)), replace=False)
    offsets = np.cumsum([0] + sizes)
    worst = 0.0
    for flat in picks:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        idx = np.unravel_index(flat - offsets[k], p.params[k].shape)
        arr = p.params[k]
        orig = arr[idx]
        arr[idx] = orig + step
        up = mse_loss(p, X, T)
        arr[idx] = orig - step
        down = mse_loss(p, X, T)
        arr[idx] = orig
        numeric = (up - down) / (2 * step)
        analytic = grads[k][idx]
        denom = max(abs(numeric), abs(analytic), 1e-6)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst


# --- checkpoints ---------------------------------------------------------

def save_policy(p: Policy, path: str | Path) -> None:
    """Plain-text header followed by little-endian float32 parameters."""
    header = (f"megadagger-policy {FORMAT_VERSION}\n"
              f"layers {' '.join(str(n) for n in p.layers)}\n"
              f"activation {p.activation}\n"
              f"max_steer {p.max_steer!r}\nmax_speed {p.max_speed!r}\nend_header\n")
    body = np.concatenate([q.astype("<f4").ravel() for q in p.params])
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(body.tobytes())


def load_policy(path: str | Path) -> Policy:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    marker = b"end_header\n"
    cut = raw.find(marker)
    if cut < 0:
        raise ValueError(f"{path}: missing checkpoint header")
    fields_ = {}
    for line in raw[:cut].decode("ascii").splitlines():
        key, _, value = line.partition(" ")
        fields_[key] = value
    if fields_.get("megadagger-policy") != str(FORMAT_VERSION):
        raise ValueError(f"{path}: unsupported checkpoint format")
    layers = [int(n) for n in fields_["layers"].split()]
    body = np.frombuffer(raw[cut + len(marker):], dtype="<f4")
    params, off = [], 0
    for fan_in, fan_out in zip(layers[:-1], layers[1:]):
        for shape in ((fan_in, fan_out), (fan_out,)):
            size = int(np.prod(shape))
            params.append(body[off:off + size].reshape(shape).astype(np.float32))
            off += size
    if off != body.size:
        raise ValueError(f"{path}: parameter count does not match header")
    return Policy(tuple(params), float(fields_["max_steer"]), float(fields_["max_speed"]),
                  fields_["activation"])
