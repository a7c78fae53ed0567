"""Dense ReLU network with hand-written backpropagation, and the policy
trained on GA-solved episodes.

The policy sees one decision day at a time: that day's six episode
features plus the fraction of earlier days on which it bought. During
training the fraction comes from the GA's optimal genes; at inference it
comes from the policy's own earlier decisions.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .episodes import N_FEATURES, Episode
from .errors import MissingEpisode, NonFiniteLoss, WidthMismatch

N_INPUTS = N_FEATURES + 1
DEFAULT_HIDDEN = (64, 64, 32, 32, 16)
MODEL_FORMAT = "gadle-mlp"
MODEL_VERSION = 1


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Mlp:
    """Fully connected network: ReLU hidden layers, one output layer.

    ``output`` is ``"logistic"`` (probabilities) or ``"linear"`` (raw
    values, e.g. Q-values or logits). Weights use Glorot-uniform
    initialisation from a seeded generator; biases start at zero.
    """

    def __init__(self, layer_sizes: Sequence[int], output: str = "logistic", seed=0):
        if len(layer_sizes) < 2:
            raise ValueError("need at least an input and an output width")
        if output not in ("logistic", "linear"):
            raise ValueError(f"unknown output activation {output!r}")
        self.layer_sizes = tuple(int(n) for n in layer_sizes)
        self.output = output
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.layer_sizes, self.layer_sizes[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Mlp":
        new = object.__new__(Mlp)
        new.layer_sizes = self.layer_sizes
        new.output = self.output
        new.weights = [w.copy() for w in self.weights]
        new.biases = [b.copy() for b in self.biases]
        return new

    def load_params(self, other: "Mlp") -> None:
        for mine, theirs in zip(self.params(), other.params()):
            mine[...] = theirs

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[-1] != self.n_inputs:
            raise WidthMismatch(f"expected {self.n_inputs} inputs, got {x.shape[-1]}")
        return x

    def logits(self, x, keep: bool = False):
        """Pre-activation of the output layer; with ``keep`` also the layer inputs."""
        h = self._check(x)
        acts = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if i == last else np.maximum(z, 0.0)
            acts.append(h)
        return (h, acts) if keep else h

    def __call__(self, x) -> np.ndarray:
        z = self.logits(x)
        return _sigmoid(z) if self.output == "logistic" else z

    def backward(self, acts, d_out) -> list[np.ndarray]:
        """Gradients of a scalar loss given its gradient w.r.t. the output pre-activation.

        Returned in the same order as :meth:`params`.
        """
        grads = [None] * (2 * len(self.weights))
        delta = d_out
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = acts[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i:
                delta = (delta @ self.weights[i].T) * (acts[i] > 0)
        return grads

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "layer_sizes": list(self.layer_sizes),
            "hidden_activation": "relu",
            "output_activation": self.output,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError("not a gadle model file")
        if int(d.get("version", 0)) > MODEL_VERSION:
            raise ValueError(f"model schema version {d['version']} is newer than supported")
        net = object.__new__(cls)
        net.layer_sizes = tuple(d["layer_sizes"])
        net.output = d["output_activation"]
        net.weights = [np.asarray(w, dtype=float).reshape(a, b)
                       for w, a, b in zip(d["weights"], net.layer_sizes, net.layer_sizes[1:])]
        net.biases = [np.asarray(b, dtype=float) for b in d["biases"]]
        return net


def make_policy(hidden: Sequence[int] = DEFAULT_HIDDEN, seed=0, n_inputs: int = N_INPUTS) -> Mlp:
    return Mlp((n_inputs, *hidden, 1), "logistic", seed)


def forward(policy: Mlp, inputs) -> np.ndarray:
    """Buy-twice probabilities, one per input row."""
    return policy(inputs)[:, 0]


def save_model(net: Mlp, path, extra: dict | None = None) -> None:
    d = net.to_dict()
    if extra:
        d.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(d, fh)


def load_model(path) -> Mlp:
    with open(path, encoding="utf-8") as fh:
        return Mlp.from_dict(json.load(fh))


# -- datasets -----------------------------------------------------------------


def buy_ratio_history(genes) -> np.ndarray:
    """Share of earlier days bought, for each day; 0 on the first day."""
    g = np.asarray(genes, dtype=float)
    before = np.concatenate([[0.0], np.cumsum(g)[:-1]])
    days_before = np.arange(len(g), dtype=float)
    return np.divide(before, days_before, out=np.zeros_like(before), where=days_before > 0)


def episode_inputs(episode: Episode, genes) -> np.ndarray:
    return np.column_stack([episode.features, buy_ratio_history(genes)])


@dataclass
class TrainingRows:
    inputs: np.ndarray
    labels: np.ndarray
    episode_ids: np.ndarray
    day_index: np.ndarray

    def __len__(self):
        return len(self.labels)


@dataclass
class DatasetSplit:
    train: list[int]
    validation: list[int]
    test: list[int]


@dataclass
class Dataset:
    split: DatasetSplit
    train: TrainingRows
    validation: TrainingRows
    test: TrainingRows


def split_episodes(ids, seed=0, test_size: "int | float" = 500, validation_fraction=0.33) -> DatasetSplit:
    """Episode-level split; ``test_size`` is a count or a fraction of all episodes."""
    ids = sorted(int(i) for i in ids)
    n = len(ids)
    n_test = round(test_size * n) if isinstance(test_size, float) else int(test_size)
    if not 0 <= n_test < n:
        raise ValueError(f"test size {n_test} leaves nothing to train on ({n} episodes)")
    order = list(np.random.default_rng(seed).permutation(n))
    test = sorted(ids[i] for i in order[:n_test])
    rest = [ids[i] for i in order[n_test:]]
    n_val = round(validation_fraction * len(rest))
    return DatasetSplit(sorted(rest[n_val:]), sorted(rest[:n_val]), test)


DEFAULT_TEST_FRACTION = 500 / 4245


def _rows(ids, episodes: dict, solved: dict) -> TrainingRows:
    xs, ys, eids, days = [], [], [], []
    for i in ids:
        ep, sol = episodes[i], solved[i]
        genes = np.asarray(sol.genes)
        xs.append(episode_inputs(ep, genes))
        ys.append(genes.astype(float))
        eids.append(np.full(len(genes), i))
        days.append(np.arange(1, len(genes) + 1))
    if not xs:
        return TrainingRows(np.empty((0, N_INPUTS)), np.empty(0), np.empty(0, int), np.empty(0, int))
    return TrainingRows(np.vstack(xs), np.concatenate(ys), np.concatenate(eids), np.concatenate(days))


def episodes_to_dataset(solved, episodes: Sequence[Episode], split_seed=0,
                        test_size: "int | float" = 500, validation_fraction=0.33) -> Dataset:
    """Teacher-forced rows (30 per episode) split at episode level."""
    by_id = {ep.id: ep for ep in episodes}
    sol = {s.episode_id: s for s in solved}
    if not sol:
        raise ValueError("solved set is empty")
    for i in sol:
        if i not in by_id:
            raise MissingEpisode(f"no episode with id {i}")
    split = split_episodes(sol, split_seed, test_size, validation_fraction)
    return Dataset(
        split,
        _rows(split.train, by_id, sol),
        _rows(split.validation, by_id, sol),
        _rows(split.test, by_id, sol),
    )


# -- training -----------------------------------------------------------------


@dataclass(frozen=True)
class FitConfig:
    epochs: int = 200
    mini_batch_size: int = 64
    learning_rate: float = 0.01
    shuffle_seed: int = 0
    early_stopping_patience: int = 20
    hidden: tuple = DEFAULT_HIDDEN
    init_seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def bce_from_logits(z, y) -> float:
    z = np.asarray(z, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def bce_and_grads(net: Mlp, x, y):
    z, acts = net.logits(x, keep=True)
    y = np.asarray(y, dtype=float).reshape(-1, 1)
    loss = bce_from_logits(z, y)
    d_out = (_sigmoid(z) - y) / len(y)
    return loss, net.backward(acts, d_out)


def evaluate_rows(net: Mlp, rows: TrainingRows) -> tuple[float, float]:
    if len(rows) == 0:
        return float("nan"), float("nan")
    z = net.logits(rows.inputs)[:, 0]
    acc = float(np.mean((z >= 0.0) == (rows.labels > 0.5)))
    return bce_from_logits(z, rows.labels), acc


@dataclass
class FitResult:
    policy: Mlp
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0


def fit(policy: Mlp, data: Dataset, config: FitConfig = FitConfig()) -> FitResult:
    """Mini-batch gradient descent on binary cross-entropy.

    The passed network is not modified; the returned policy carries the
    parameters of the epoch with the lowest validation loss.
    """
    if len(data.train) == 0 or len(data.validation) == 0:
        raise ValueError("fit needs non-empty train and validation rows")
    net = policy.copy()
    rng = np.random.default_rng(config.shuffle_seed)
    x, y = data.train.inputs, data.train.labels
    best_loss, best_net, best_epoch, waited = math.inf, net.copy(), 0, 0
    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(y))
        for lo in range(0, len(y), config.mini_batch_size):
            idx = order[lo : lo + config.mini_batch_size]
            _, grads = bce_and_grads(net, x[idx], y[idx])
            for p, g in zip(net.params(), grads):
                p -= config.learning_rate * g
        tr_loss, tr_acc = evaluate_rows(net, data.train)
        va_loss, va_acc = evaluate_rows(net, data.validation)
        if not (math.isfinite(tr_loss) and math.isfinite(va_loss)):
            raise NonFiniteLoss(epoch)
        history.append(
            {"epoch": epoch, "train_loss": tr_loss, "train_acc": tr_acc,
             "val_loss": va_loss, "val_acc": va_acc}
        )
        if va_loss < best_loss:
            best_loss, best_net, best_epoch, waited = va_loss, net.copy(), epoch, 0
        else:
            waited += 1
            if waited >= config.early_stopping_patience:
                break
    return FitResult(best_net, history, best_epoch)


def write_history(history: list[dict], path) -> None:
    cols = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for row in history:
            w.writerow({k: row[k] for k in cols})


def gradient_check(net: Mlp, x, y, epsilon: float = 1e-5,
                   analytic: Callable | None = None) -> float:
    """Largest relative gap between backprop and central-difference gradients.

    Relative error is ``|a - n| / max(|a|, |n|, 1e-6)`` so that exactly-zero
    gradients do not divide by zero. ``analytic`` overrides the gradient
    routine, for negative controls.
    """
    probe = net.copy()
    grads = (analytic or (lambda m, xx, yy: bce_and_grads(m, xx, yy)[1]))(probe, x, y)

    def loss():
        return bce_from_logits(probe.logits(x), y)

    worst = 0.0
    for p, g in zip(probe.params(), grads):
        flat, gflat = p.reshape(-1), np.asarray(g).reshape(-1)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + epsilon
            up = loss()
            flat[j] = keep - epsilon
            down = loss()
            flat[j] = keep
            num = (up - down) / (2 * epsilon)
            err = abs(gflat[j] - num) / max(abs(gflat[j]), abs(num), 1e-6)
            worst = max(worst, err)
    return worst


# -- inference ----------------------------------------------------------------


def predict_many(policy: Mlp, episodes: Sequence[Episode], threshold: float = 0.5) -> np.ndarray:
    """Roll the policy through each episode day by day, feeding back its own buys."""
    if not episodes:
        return np.zeros((0, 0), dtype=np.int8)
    feats = np.stack([ep.features for ep in episodes])  # (E, T, F)
    n_ep, n_days, _ = feats.shape
    genes = np.zeros((n_ep, n_days), dtype=np.int8)
    bought = np.zeros(n_ep)
    for t in range(n_days):
        ratio = bought / t if t else np.zeros(n_ep)
        prob = forward(policy, np.column_stack([feats[:, t, :], ratio]))
        genes[:, t] = prob >= threshold
        bought += genes[:, t]
    return genes


def predict_actions(policy: Mlp, episode: Episode, threshold: float = 0.5) -> np.ndarray:
    return predict_many(policy, [episode], threshold)[0]
