"""Learned belief dynamics: a small MLP with mean and log-variance heads.

The network is plain numpy with hand-written backprop.  Targets are the
local transition ``dx`` (tangent coordinates on SE(2)); internally they are
divided by a per-dimension scale fixed at training time, so the log-variance
clamp acts on standardised units rather than on raw metres.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry as geo
from .belief import GaussianBelief
from .systems import pusher as push
from .systems.propagation import lie_cov_step

FORMAT_VERSION = 1
ENCODER = (32, 64, 64, 32)
HEAD = (32,)
LOGVAR_CLAMP = 10.0
COMPOSITIONS = ("additive", "lie_exponential")
INPUT_MODES = ("control_only", "state_and_control")


def softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class TransitionDataset:
    inputs: np.ndarray  # raw controls (n, k), or [state, control] rows
    targets: np.ndarray  # dx (n, d)
    eval_controls: np.ndarray | None = None
    eval_outcomes: np.ndarray | None = None  # (m, repeats, d)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError("inputs and targets differ in length")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.targets))):
            raise ValueError("dataset contains non-finite values")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def eval_mean(self) -> np.ndarray:
        return self.eval_outcomes.mean(axis=1)

    @property
    def eval_cov(self) -> np.ndarray:
        d = self.eval_outcomes - self.eval_mean[:, None]
        return np.einsum("mri,mrj->mij", d, d) / (self.eval_outcomes.shape[1] - 1)

    def subset(self, n: int) -> "TransitionDataset":
        return TransitionDataset(self.inputs[:n], self.targets[:n], self.eval_controls, self.eval_outcomes)

    def to_csv(self, path):
        k, d = self.inputs.shape[1], self.targets.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"u_{i}" for i in range(k)] + [f"dx_{i}" for i in range(d)])
            for row in np.hstack([self.inputs, self.targets]):
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "TransitionDataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
        k = sum(1 for h in header if h.startswith("u_"))
        return cls(body[:, :k], body[:, k:])


@dataclass
class TransitionModel:
    in_dim: int
    out_dim: int
    params: dict = field(default_factory=dict)
    encoder: tuple = ENCODER
    head: tuple = HEAD
    composition: str = "lie_exponential"
    input_mode: str = "control_only"
    activation: str = "softplus"
    target_scale: np.ndarray | None = None
    featurize: str = "push"  # how raw controls become network inputs

    def __post_init__(self):
        if self.composition not in COMPOSITIONS:
            raise ValueError(f"composition must be one of {COMPOSITIONS}")
        if self.input_mode not in INPUT_MODES:
            raise ValueError(f"input_mode must be one of {INPUT_MODES}")
        if self.target_scale is None:
            self.target_scale = np.ones(self.out_dim)
        self.target_scale = np.asarray(self.target_scale, dtype=float)

    # layer names in forward order
    def layer_shapes(self) -> list[tuple[str, int, int]]:
        shapes = []
        prev = self.in_dim
        for i, h in enumerate(self.encoder):
            shapes.append((f"enc{i}", prev, h))
            prev = h
        for name in ("mean", "logvar"):
            p = prev
            for i, h in enumerate(self.head):
                shapes.append((f"{name}{i}", p, h))
                p = h
            shapes.append((f"{name}_out", p, self.out_dim))
        return shapes

    def copy(self) -> "TransitionModel":
        return TransitionModel(
            self.in_dim,
            self.out_dim,
            {k: v.copy() for k, v in self.params.items()},
            tuple(self.encoder),
            tuple(self.head),
            self.composition,
            self.input_mode,
            self.activation,
            self.target_scale.copy(),
            self.featurize,
        )

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "in_dim": self.in_dim,
            "out_dim": self.out_dim,
            "encoder": list(self.encoder),
            "head": list(self.head),
            "composition": self.composition,
            "input_mode": self.input_mode,
            "activation": self.activation,
            "featurize": self.featurize,
            "target_scale": self.target_scale.tolist(),
            "layers": [
                {
                    "name": name,
                    "shape": [fi, fo],
                    "W": self.params[name + ".W"].ravel().tolist(),
                    "b": self.params[name + ".b"].tolist(),
                }
                for name, fi, fo in self.layer_shapes()
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "TransitionModel":
        if data.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format {data.get('format_version')!r}")
        m = cls(
            data["in_dim"],
            data["out_dim"],
            encoder=tuple(data["encoder"]),
            head=tuple(data["head"]),
            composition=data["composition"],
            input_mode=data["input_mode"],
            activation=data["activation"],
            target_scale=np.asarray(data["target_scale"]),
            featurize=data.get("featurize", "push"),
        )
        for layer in data["layers"]:
            fi, fo = layer["shape"]
            m.params[layer["name"] + ".W"] = np.asarray(layer["W"], dtype=float).reshape(fi, fo)
            m.params[layer["name"] + ".b"] = np.asarray(layer["b"], dtype=float)
        return m

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "TransitionModel":
        return cls.from_json(json.loads(Path(path).read_text()))


def init_model(
    in_dim: int,
    out_dim: int,
    seed: int = 0,
    composition: str = "lie_exponential",
    input_mode: str = "control_only",
    encoder=ENCODER,
    head=HEAD,
    featurize: str = "push",
) -> TransitionModel:
    """Seeded uniform fan-in initialisation, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    m = TransitionModel(
        in_dim, out_dim, encoder=tuple(encoder), head=tuple(head),
        composition=composition, input_mode=input_mode, featurize=featurize,
    )
    rng = np.random.default_rng(seed)
    for name, fi, fo in m.layer_shapes():
        lim = 1.0 / math.sqrt(fi)
        m.params[name + ".W"] = rng.uniform(-lim, lim, (fi, fo))
        m.params[name + ".b"] = rng.uniform(-lim, lim, fo)
    return m


def zero_model(in_dim: int, out_dim: int, **kw) -> TransitionModel:
    m = init_model(in_dim, out_dim, **kw)
    for k in m.params:
        m.params[k][...] = 0.0
    return m


def _forward(m: TransitionModel, X):
    """Standardised outputs plus the cache needed by ``_backward``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != m.in_dim:
        raise ValueError(f"expected input dimension {m.in_dim}, got {X.shape[1]}")
    cache = {}
    h = X
    for i in range(len(m.encoder)):
        name = f"enc{i}"
        z = h @ m.params[name + ".W"] + m.params[name + ".b"]
        cache[name] = (h, z)
        h = softplus(z)
    trunk = h
    outs = {}
    for head in ("mean", "logvar"):
        h = trunk
        for i in range(len(m.head)):
            name = f"{head}{i}"
            z = h @ m.params[name + ".W"] + m.params[name + ".b"]
            cache[name] = (h, z)
            h = softplus(z)
        name = f"{head}_out"
        cache[name] = (h, None)
        outs[head] = h @ m.params[name + ".W"] + m.params[name + ".b"]
    raw_lv = outs["logvar"]
    cache["raw_logvar"] = raw_lv
    return outs["mean"], np.clip(raw_lv, -LOGVAR_CLAMP, LOGVAR_CLAMP), cache


def _backward(m: TransitionModel, cache, g_mean, g_logvar) -> dict:
    grads = {}
    raw = cache["raw_logvar"]
    g_logvar = g_logvar * ((raw > -LOGVAR_CLAMP) & (raw < LOGVAR_CLAMP))
    g_trunk = 0.0
    for head, g in (("mean", g_mean), ("logvar", g_logvar)):
        name = f"{head}_out"
        h, _ = cache[name]
        grads[name + ".W"] = h.T @ g
        grads[name + ".b"] = g.sum(axis=0)
        g = g @ m.params[name + ".W"].T
        for i in reversed(range(len(m.head))):
            name = f"{head}{i}"
            h, z = cache[name]
            g = g * _sigmoid(z)
            grads[name + ".W"] = h.T @ g
            grads[name + ".b"] = g.sum(axis=0)
            g = g @ m.params[name + ".W"].T
        g_trunk = g_trunk + g
    g = g_trunk
    for i in reversed(range(len(m.encoder))):
        name = f"enc{i}"
        h, z = cache[name]
        g = g * _sigmoid(z)
        grads[name + ".W"] = h.T @ g
        grads[name + ".b"] = g.sum(axis=0)
        g = g @ m.params[name + ".W"].T
    return grads


def features(m: TransitionModel, u, x=None) -> np.ndarray:
    """Network inputs for raw controls (and states in state_and_control mode)."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    f = push.control_features(u) if m.featurize == "push" else u
    if m.input_mode == "state_and_control":
        if x is None:
            raise ValueError("state_and_control models need the state")
        f = np.hstack([np.atleast_2d(np.asarray(x, dtype=float)), f])
    return f


def model_forward(m: TransitionModel, inputs) -> tuple[np.ndarray, np.ndarray]:
    """``(mean dx, log-variance)`` in target units for already-featurised inputs."""
    mu, lv, _ = _forward(m, inputs)
    s = m.target_scale
    return mu * s, lv + 2.0 * np.log(s)


def predict(m: TransitionModel, u, x=None) -> tuple[np.ndarray, np.ndarray]:
    return model_forward(m, features(m, u, x))


def nll_loss(pred_mean, pred_log_var, target) -> float:
    """Mean over all entries of ``0.5 * ((t - mu)^2 / sigma^2 + log sigma^2)``."""
    r = np.asarray(target, dtype=float) - pred_mean
    return float(np.mean(0.5 * (r * r * np.exp(-pred_log_var) + pred_log_var)))


def nll_grad(pred_mean, pred_log_var, target):
    """Gradient of :func:`nll_loss` w.r.t. ``(mean, log_var)``."""
    r = np.asarray(target, dtype=float) - pred_mean
    n = r.size
    inv = np.exp(-pred_log_var)
    return -r * inv / n, 0.5 * (1.0 - r * r * inv) / n


def mse_loss(pred_mean, target) -> float:
    r = np.asarray(target, dtype=float) - pred_mean
    return float(np.mean(r * r))


def mse_grad(pred_mean, target):
    r = np.asarray(target, dtype=float) - pred_mean
    return -2.0 * r / r.size


def loss_and_grads(m: TransitionModel, X, T, loss: str = "nll"):
    """Loss and parameter gradients on standardised targets ``T``."""
    mu, lv, cache = _forward(m, X)
    if loss == "nll":
        value = nll_loss(mu, lv, T)
        g_mu, g_lv = nll_grad(mu, lv, T)
    elif loss == "mse":
        value = mse_loss(mu, T)
        g_mu, g_lv = mse_grad(mu, T), np.zeros_like(lv)
    else:
        raise ValueError("loss must be 'nll' or 'mse'")
    return value, _backward(m, cache, g_mu, g_lv)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    steps: int | None = None  # if set, overrides epochs with ceil(steps * batch / n)
    batch: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    loss: str = "nll"
    seed: int = 0
    grad_clip: float = 10.0
    lr_floor: float = 0.02  # cosine decay from lr down to lr * lr_floor
    val_fraction: float = 0.0  # held-out tail used for early stopping
    patience: int | None = None  # epochs without validation gain; default epochs // 4


def train(dataset: TransitionDataset, m: TransitionModel, cfg: TrainConfig = TrainConfig()):
    """Minibatch SGD with momentum; returns ``(model, per-epoch losses)``.

    The input model is not modified.  The per-dimension target scale is set
    from the training targets before the first step.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if cfg.loss not in ("nll", "mse"):
        raise ValueError("loss must be 'nll' or 'mse'")
    m = m.copy()
    X = dataset.inputs if dataset.inputs.shape[1] == m.in_dim else features(m, dataset.inputs)
    rng = np.random.default_rng(cfg.seed)
    n_all = len(dataset)
    n_val = int(round(cfg.val_fraction * n_all))
    perm = rng.permutation(n_all)
    tr, va = perm[: n_all - n_val], perm[n_all - n_val :]
    if len(tr) == 0:
        raise ValueError("validation split leaves no training data")
    scale = dataset.targets[tr].std(axis=0)
    m.target_scale = np.where(scale > 0, scale, 1.0)
    T = dataset.targets / m.target_scale
    vel = {k: np.zeros_like(v) for k, v in m.params.items()}
    n = len(tr)
    per_epoch = -(-n // cfg.batch)
    epochs = cfg.epochs if cfg.steps is None else max(1, -(-cfg.steps // per_epoch))
    total_steps = epochs * per_epoch
    step = 0
    curve = []
    patience = cfg.patience if cfg.patience is not None else max(1, epochs // 4)
    best_val, best_params, stale = math.inf, None, 0
    for _ in range(epochs):
        order = tr[rng.permutation(n)]
        total = 0.0
        for start in range(0, n, cfg.batch):
            lr = cfg.lr * (cfg.lr_floor + (1.0 - cfg.lr_floor) * 0.5 * (1.0 + math.cos(math.pi * step / total_steps)))
            step += 1
            idx = order[start : start + cfg.batch]
            value, grads = loss_and_grads(m, X[idx], T[idx], cfg.loss)
            total += value * len(idx)
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            f = min(1.0, cfg.grad_clip / norm) if norm > 0 else 1.0
            for k, g in grads.items():
                vel[k] = cfg.momentum * vel[k] - lr * f * g
                m.params[k] += vel[k]
        curve.append(total / n)
        if not math.isfinite(curve[-1]):
            raise FloatingPointError("training diverged")
        if n_val:
            mu, lv, _ = _forward(m, X[va])
            v = nll_loss(mu, lv, T[va]) if cfg.loss == "nll" else mse_loss(mu, T[va])
            if v < best_val:
                best_val, stale = v, 0
                best_params = {k: p.copy() for k, p in m.params.items()}
            else:
                stale += 1
                if stale >= patience:
                    break
    if best_params is not None:
        m.params = best_params
    return m, np.array(curve)


def _lie_jacobian(m, x, u, h=1e-6):
    # A = I + d(dx)/dx, central differences on the state input
    d = x.shape[0]
    xs = np.repeat(x[None], 2 * d, axis=0)
    for j in range(d):
        xs[2 * j, j] += h
        xs[2 * j + 1, j] -= h
    mu, _ = predict(m, np.repeat(np.atleast_2d(u), 2 * d, axis=0), xs)
    return np.eye(d) + ((mu[0::2] - mu[1::2]) / (2.0 * h)).T


def learned_belief_propagate(b: GaussianBelief, m: TransitionModel, u) -> GaussianBelief:
    """One belief step through the learned model."""
    x = np.asarray(b.mean, dtype=float)
    mu, lv = predict(m, u, x if m.input_mode == "state_and_control" else None)
    mu, Q = mu[0], np.diag(np.exp(lv[0]))
    if m.composition == "lie_exponential":
        if b.chart != "se2":
            raise ValueError("lie_exponential models need an SE(2) belief")
        mean = geo.compose_many(x, geo.exp_many(mu))
        return GaussianBelief(mean, lie_cov_step(b.cov, mu, Q), "se2")
    if b.chart == "se2":
        raise ValueError("additive models need a vector-space belief")
    A = _lie_jacobian(m, x, u) if m.input_mode == "state_and_control" else np.eye(x.shape[0])
    P = A @ b.cov @ A.T + Q
    return GaussianBelief(x + mu, 0.5 * (P + P.T), b.chart)


def generate_pusher_dataset(
    n: int, seed: int, n_eval: int = 100, repeats: int = 10, d_max: float = push.D_MAX
) -> TransitionDataset:
    """Random pushes from the identity pose, plus a repeated-action evaluation set.

    Pushes are isotropic in the object frame, so every sample starts at the
    identity and the target is ``Log`` of the outcome pose.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    u = push.sample_push(rng, n)
    u[:, 2] *= d_max / push.D_MAX
    out = push.pusher_truth_step(np.zeros((n, 3)), u, rng)
    dx = geo.log_many(out)
    ev_u = push.sample_push(rng, n_eval)
    ev_u[:, 2] *= d_max / push.D_MAX
    reps = np.repeat(ev_u, repeats, axis=0)
    ev = geo.log_many(push.pusher_truth_step(np.zeros((n_eval * repeats, 3)), reps, rng))
    return TransitionDataset(u, dx, ev_u, ev.reshape(n_eval, repeats, 3))


# settings used for the pusher model throughout the benchmarks
PUSHER_TRAIN = dict(lr=0.03, steps=30000, val_fraction=0.2, batch=32, momentum=0.9)


def train_pusher_model(dataset: TransitionDataset, loss: str = "nll", seed: int = 0):
    m = init_model(6, 3, seed=seed)
    return train(dataset, m, TrainConfig(loss=loss, seed=seed, **PUSHER_TRAIN))


def calibration_report(m: TransitionModel, controls) -> dict:
    """Calibration against the generator's known noise, per pushing side.

    ``sigma_ratio[s]`` is the mean of ``sigma_hat / sigma_true`` over the
    bucket's controls and dimensions; ``sigma_ratio_dims[s]`` keeps the
    dimensions apart.  ``mean_rmse`` is against the generator's mean.
    """
    controls = np.atleast_2d(controls)
    mu, lv = predict(m, controls)
    true_mu = push.push_mean(controls)
    true_sig = push.push_sigma(controls)
    sig = np.exp(0.5 * lv)
    sides = np.rint(controls[:, 0]).astype(int) % 4
    ratio = sig / true_sig
    buckets, dims = {}, {}
    for s in range(4):
        sel = sides == s
        if np.any(sel):
            buckets[s] = float(ratio[sel].mean())
            dims[s] = ratio[sel].mean(axis=0)
    rmse = float(np.sqrt(np.mean((mu - true_mu) ** 2)))
    return {"sigma_ratio": buckets, "sigma_ratio_dims": dims, "mean_rmse": rmse}


class LearnedPusherSystem(push.PusherSystem):
    """Pusher whose belief model comes from a trained network; execution stays synthetic."""

    name = "pusher_learned"

    def __init__(self, scene, model: TransitionModel):
        if model.composition != "lie_exponential" or model.input_mode != "control_only":
            raise ValueError("the pusher uses a control-only Lie model")
        super().__init__(scene)
        self.model = model

    def model_mean(self, u):
        return predict(self.model, u)[0][0]

    def model_q(self, u):
        return np.diag(np.exp(predict(self.model, u)[1][0]))

    def model_step(self, u):
        mu, lv = predict(self.model, u)
        return mu[0], np.diag(np.exp(lv[0]))
