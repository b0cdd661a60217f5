"""Small shared-trunk joint model with manual backpropagation (float64 numpy).

Architecture, for a state after reading prefix ``x[:t]``::

    window  = last `context` tokens of the prefix, left-padded with BOS
    h1      = tanh(concat(E[window]) @ W1 + b1)
    s_t     = tanh(h1 @ W2 + b2)                    shared trunk output
    logits  = s_t @ Wo + bo                         token head, BOS masked
    y_hat   = mean(s_1..s_{T-1}) @ Ws + bs          score head over content states

The predictive likelihood is a unit-variance Gaussian, so its negative log is
``0.5 * ||y - y_hat||^2`` plus ``0.5 * M * log(2*pi)``; that constant is
dropped everywhere.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence as Seq

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..seqcore import ConfigError, LabeledExample, Vocabulary
from .base import NEG_INF, log_softmax

log = logging.getLogger(__name__)

PARAM_NAMES = ("E", "W1", "b1", "W2", "b2", "Wo", "bo", "Ws", "bs")
TRUNK_PARAMS = ("E", "W1", "b1", "W2", "b2")
SCORE_HEAD_PARAMS = ("Ws", "bs")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lam: float = 1.0
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    patience: int | None = None
    max_steps: int | None = None
    generative_weight: float = 1.0
    clip_norm: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")


@dataclass
class Encoded:
    """Flattened per-position arrays for a list of sequences."""

    windows: np.ndarray   # (N, context) token indices
    targets: np.ndarray   # (N,) next token at each position
    seg: np.ndarray       # (N,) owning example
    pool: np.ndarray      # (B, N) averaging weights for the score head
    n: int


class NeuralJointModel:
    def __init__(self, vocab: Vocabulary, max_len: int, context: int = 8, embed_dim: int = 16,
                 hidden: int = 32, n_outputs: int = 1, params: dict | None = None,
                 rng: np.random.Generator | None = None, init_scale: float = 0.05):
        self.vocab = vocab
        self.max_len = int(max_len)
        self.context = int(context)
        self.embed_dim = int(embed_dim)
        self.hidden = int(hidden)
        self.n_outputs = int(n_outputs)
        if params is None:
            if rng is None:
                raise ValueError("either params or rng is required")
            params = self._init_params(rng, init_scale)
        self.params = {k: np.asarray(params[k], dtype=np.float64) for k in PARAM_NAMES}
        self._check_shapes()

    def _shapes(self) -> dict[str, tuple[int, ...]]:
        V, d, h, H, M = self.vocab.size, self.embed_dim, self.context, self.hidden, self.n_outputs
        return {"E": (V, d), "W1": (h * d, H), "b1": (H,), "W2": (H, d), "b2": (d,),
                "Wo": (d, V), "bo": (V,), "Ws": (d, M), "bs": (M,)}

    def _init_params(self, rng, scale):
        out = {}
        for name, shape in self._shapes().items():
            if name.startswith("b"):
                out[name] = np.zeros(shape)
            else:
                out[name] = rng.uniform(-scale, scale, size=shape)
        return out

    def _check_shapes(self):
        for name, shape in self._shapes().items():
            if self.params[name].shape != shape:
                raise ValueError(f"parameter {name} has shape {self.params[name].shape}, expected {shape}")

    def copy(self) -> "NeuralJointModel":
        return NeuralJointModel(self.vocab, self.max_len, self.context, self.embed_dim, self.hidden,
                                self.n_outputs, params={k: v.copy() for k, v in self.params.items()})

    def hyperparams(self) -> dict:
        return {"max_len": self.max_len, "context": self.context, "embed_dim": self.embed_dim,
                "hidden": self.hidden, "n_outputs": self.n_outputs}

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    # -- encoding ------------------------------------------------------------
    def _window(self, prefix: Seq[int]) -> list[int]:
        h = self.context
        pad = [self.vocab.bos_index] * h + list(prefix)
        return pad[len(pad) - h:]

    def encode(self, seqs: Seq[tuple[int, ...]]) -> Encoded:
        h, bos = self.context, self.vocab.bos_index
        wins, tgts, segs, pool_rows = [], [], [], []
        offset = 0
        for b, x in enumerate(seqs):
            T = len(x)
            padded = np.array([bos] * h + list(x), dtype=np.int64)
            wins.append(sliding_window_view(padded, h)[:T])
            tgts.append(np.asarray(x, dtype=np.int64))
            segs.append(np.full(T, b, dtype=np.int64))
            pos = list(range(offset + 1, offset + T)) if T > 1 else [offset]
            pool_rows.append(pos)
            offset += T
        pool = np.zeros((len(seqs), offset))
        for b, pos in enumerate(pool_rows):
            pool[b, pos] = 1.0 / len(pos)
        return Encoded(np.concatenate(wins), np.concatenate(tgts), np.concatenate(segs), pool, offset)

    # -- forward -------------------------------------------------------------
    def _trunk(self, windows: np.ndarray):
        p = self.params
        X = p["E"][windows].reshape(len(windows), -1)
        H1 = np.tanh(X @ p["W1"] + p["b1"])
        S = np.tanh(H1 @ p["W2"] + p["b2"])
        return X, H1, S

    def _token_logprobs(self, S: np.ndarray) -> np.ndarray:
        logits = S @ self.params["Wo"] + self.params["bo"]
        logits[:, self.vocab.bos_index] = NEG_INF
        return log_softmax(logits)

    def next_logprobs_batch(self, prefixes):
        if not prefixes:
            return np.zeros((0, self.vocab.size))
        windows = np.array([self._window(p) for p in prefixes], dtype=np.int64)
        _, _, S = self._trunk(windows)
        return self._token_logprobs(S)

    def next_logprobs(self, prefix):
        return self.next_logprobs_batch([tuple(prefix)])[0]

    def predict_batch(self, seqs) -> np.ndarray:
        enc = self.encode(seqs)
        _, _, S = self._trunk(enc.windows)
        return enc.pool @ S @ self.params["Ws"] + self.params["bs"]

    def predict(self, seq) -> np.ndarray:
        return self.predict_batch([tuple(seq)])[0]

    def sequence_logprobs(self, seqs) -> np.ndarray:
        enc = self.encode(seqs)
        _, _, S = self._trunk(enc.windows)
        lp = self._token_logprobs(S)[np.arange(enc.n), enc.targets]
        return np.bincount(enc.seg, weights=lp, minlength=len(seqs))

    # -- loss and gradient ---------------------------------------------------
    def loss_and_grad(self, seqs, targets=None, lam: float = 0.0, gen_weights=None,
                      pred_weights=None, enc: Encoded | None = None):
        """Weighted joint negative log-likelihood and its gradient.

        ``loss = sum_b gen_w[b] * (-log p(x_b)) + lam * sum_b pred_w[b] * 0.5*||y_b - y_hat_b||^2``
        """
        p = self.params
        enc = enc if enc is not None else self.encode(seqs)
        B = enc.pool.shape[0]
        gw = np.ones(B) if gen_weights is None else np.asarray(gen_weights, dtype=np.float64)
        X, H1, S = self._trunk(enc.windows)
        LP = self._token_logprobs(S)
        rows = np.arange(enc.n)
        pos_w = gw[enc.seg]
        loss = -float(np.sum(pos_w * LP[rows, enc.targets]))

        dlogits = np.exp(LP)
        dlogits[rows, enc.targets] -= 1.0
        dlogits *= pos_w[:, None]
        grads = {"Wo": S.T @ dlogits, "bo": dlogits.sum(axis=0)}
        dS = dlogits @ p["Wo"].T

        use_pred = lam != 0.0 and targets is not None
        if use_pred:
            Y = np.asarray(targets, dtype=np.float64).reshape(B, self.n_outputs)
            pw = np.ones(B) if pred_weights is None else np.asarray(pred_weights, dtype=np.float64)
            P = enc.pool @ S
            resid = P @ p["Ws"] + p["bs"] - Y
            loss += lam * 0.5 * float(np.sum(pw[:, None] * resid ** 2))
            dY = lam * pw[:, None] * resid
            grads["Ws"] = P.T @ dY
            grads["bs"] = dY.sum(axis=0)
            dS = dS + enc.pool.T @ (dY @ p["Ws"].T)
        else:
            grads["Ws"] = np.zeros_like(p["Ws"])
            grads["bs"] = np.zeros_like(p["bs"])

        dA2 = dS * (1.0 - S ** 2)
        grads["W2"] = H1.T @ dA2
        grads["b2"] = dA2.sum(axis=0)
        dA1 = (dA2 @ p["W2"].T) * (1.0 - H1 ** 2)
        grads["W1"] = X.T @ dA1
        grads["b1"] = dA1.sum(axis=0)
        dX = (dA1 @ p["W1"].T).reshape(enc.n, self.context, self.embed_dim)
        dE = np.zeros_like(p["E"])
        np.add.at(dE, enc.windows, dX)
        grads["E"] = dE
        return loss, grads


def _unpack(batch: Seq[LabeledExample]):
    seqs = [ex.sequence for ex in batch]
    Y = np.stack([ex.scores for ex in batch])
    return seqs, Y


def joint_loss(model: NeuralJointModel, batch: Seq[LabeledExample], lam: float,
               generative_weight: float = 1.0) -> float:
    """``-sum(log p(x) + lam * log p(y|x))`` with the Gaussian constant dropped."""
    if not batch:
        raise ValueError("batch must be non-empty")
    seqs, Y = _unpack(batch)
    gw = np.full(len(seqs), generative_weight)
    return model.loss_and_grad(seqs, Y, lam, gen_weights=gw)[0]


def joint_loss_grad(model: NeuralJointModel, batch: Seq[LabeledExample], lam: float,
                    generative_weight: float = 1.0):
    if not batch:
        raise ValueError("batch must be non-empty")
    seqs, Y = _unpack(batch)
    return model.loss_and_grad(seqs, Y, lam, gen_weights=np.full(len(seqs), generative_weight))


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def apply_update(model: NeuralJointModel, grads: dict, lr: float, clip_norm: float | None = 1.0) -> float:
    """Plain gradient step with global-norm clipping; returns the pre-clip norm."""
    norm = global_norm(grads)
    scale = 1.0
    if clip_norm is not None and norm > clip_norm:
        scale = clip_norm / norm
    for k, g in grads.items():
        model.params[k] -= lr * scale * g
    return norm


@dataclass
class TrainTrace:
    losses: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    eval_losses: list[float] = field(default_factory=list)
    stopped_early: bool = False

    def moving_average(self, window: int = 10) -> np.ndarray:
        x = np.asarray(self.losses)
        if len(x) < window:
            return x.copy()
        return np.convolve(x, np.ones(window) / window, mode="valid")


def train_joint(model: NeuralJointModel, data: Seq[LabeledExample], cfg: TrainConfig,
                rng: np.random.Generator, eval_data: Seq[LabeledExample] | None = None):
    """Minibatch gradient descent on the joint loss (mean over the minibatch)."""
    if not data:
        raise ValueError("training data must be non-empty")
    seqs, Y = _unpack(data)
    trace = TrainTrace()
    best_eval, bad_epochs, steps = np.inf, 0, 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(seqs))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            bseqs = [seqs[i] for i in idx]
            loss, grads = model.loss_and_grad(bseqs, Y[idx], cfg.lam,
                                              gen_weights=np.full(len(idx), cfg.generative_weight))
            loss /= len(idx)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss {loss} at epoch {epoch}, step {steps}; "
                    f"learning rate {cfg.learning_rate} is likely too high")
            for g in grads.values():
                g /= len(idx)
            trace.grad_norms.append(apply_update(model, grads, cfg.learning_rate, cfg.clip_norm))
            trace.losses.append(loss)
            steps += 1
            if cfg.max_steps is not None and steps >= cfg.max_steps:
                break
        if eval_data:
            ev = joint_loss(model, eval_data, cfg.lam, cfg.generative_weight) / len(eval_data)
            trace.eval_losses.append(ev)
            if cfg.patience is not None:
                if ev < best_eval - 1e-12:
                    best_eval, bad_epochs = ev, 0
                else:
                    bad_epochs += 1
                    if bad_epochs >= cfg.patience:
                        trace.stopped_early = True
                        break
        if cfg.max_steps is not None and steps >= cfg.max_steps:
            break
    ma = trace.moving_average(10)
    if len(ma) > 1 and ma[-1] > ma[0]:
        log.warning("moving-average training loss rose from %.4f to %.4f", ma[0], ma[-1])
    return model, trace


def grad_check(model: NeuralJointModel, batch: Seq[LabeledExample], lam: float, eps: float = 1e-5,
               max_coords: int | None = None, rng: np.random.Generator | None = None,
               abs_floor: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    The relative error per coordinate is ``|a - n| / max(|a|, |n|, abs_floor)``.
    With ``max_coords`` set, a random subsample (at least 200) is checked.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-6, 1e-3]")
    _, grads = joint_loss_grad(model, batch, lam)
    coords = [(name, i) for name in PARAM_NAMES for i in range(model.params[name].size)]
    if max_coords is not None and max_coords < len(coords):
        rng = rng if rng is not None else np.random.default_rng(0)
        pick = rng.choice(len(coords), size=max(200, max_coords), replace=False)
        coords = [coords[i] for i in sorted(pick)]
    worst = 0.0
    for name, i in coords:
        flat = model.params[name].reshape(-1)
        orig = flat[i]
        flat[i] = orig + eps
        up = joint_loss(model, batch, lam)
        flat[i] = orig - eps
        down = joint_loss(model, batch, lam)
        flat[i] = orig
        num = (up - down) / (2 * eps)
        ana = grads[name].reshape(-1)[i]
        err = abs(ana - num) / max(abs(ana), abs(num), abs_floor)
        worst = max(worst, err)
    return worst
