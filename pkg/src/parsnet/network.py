"""Single-hidden-layer denoising autoencoder with a shared softmax head.

The decoder weight is the transpose of the encoder weight by construction
(never stored separately), and the encoder weight and bias double as the
first layer of the classifier.  The hidden layer can grow and shrink at
runtime; all training is plain per-sample SGD on squared error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

SNAPSHOT_MAGIC = b"PNET1"

# Pre-activation clamp before exponentiation; saturates without overflow.
ACTIVATION_CLAMP = 30.0

THETA_KEYS = ("w_in", "b_in", "w_out", "c_out")


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -ACTIVATION_CLAMP, ACTIVATION_CLAMP)))


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - np.max(z, axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def mask_input(x: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Blank a uniformly random ``floor(fraction * len(x))``-subset of features."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError("mask fraction must lie in [0, 1)")
    count = int(fraction * x.shape[0])
    if count == 0:
        return x
    if rng is None:
        raise ValueError("masking requires a random generator")
    masked = x.copy()
    masked[rng.choice(x.shape[0], size=count, replace=False)] = 0.0
    return masked


def normalized_top2(probs: np.ndarray) -> float:
    """Confidence of the leading class against the runner-up only.

    Maps any probability vector to [0.5, 1]: 0.5 when the two strongest
    classes tie, 1 for a one-hot prediction.  Invariant to permutations.
    """
    probs = np.asarray(probs, dtype=float)
    if probs.shape[-1] < 2:
        raise ValueError("need at least two classes")
    top = np.partition(probs, -2)[-2:]
    return float(top[1] / (top[0] + top[1]))


@dataclass
class ForwardCache:
    """Intermediate results of one forward pass."""

    masked: np.ndarray        # corrupted input fed to the generative path
    hidden: np.ndarray        # encoder activations of the masked input
    recon: np.ndarray         # decoded reconstruction
    probs: np.ndarray         # class probabilities (computed on the clean input)
    hidden_clean: np.ndarray  # encoder activations of the clean input


LOSSES = ("cross_entropy", "squared")


class Network:
    """Growable tied-weight autoencoder/classifier parameter bundle.

    The classifier can train under cross-entropy (default) or summed squared
    error; the reconstruction path is always squared error.
    """

    def __init__(self, n_inputs: int, n_classes: int, n_hidden: int = 1,
                 rng: np.random.Generator | None = None, loss: str = "cross_entropy",
                 check_finite: bool = False):
        if n_inputs < 1:
            raise ValueError("n_inputs must be >= 1")
        if n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if n_hidden < 1:
            raise ValueError("n_hidden must be >= 1")
        if loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        rng = rng if rng is not None else np.random.default_rng()
        self.n_inputs = n_inputs
        self.n_classes = n_classes
        self.loss = loss
        self.check_finite = check_finite
        self.w_in = self._xavier(rng, (n_hidden, n_inputs), n_inputs, n_hidden)
        self.b_in = np.zeros(n_hidden)
        self.d = np.zeros(n_inputs)
        self.w_out = self._xavier(rng, (n_hidden, n_classes), n_hidden, n_classes)
        self.c_out = np.zeros(n_classes)

    @staticmethod
    def _xavier(rng, shape, fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, shape)

    @property
    def n_hidden(self) -> int:
        return self.w_in.shape[0]

    def theta(self) -> dict[str, np.ndarray]:
        """Live references to the classifier-relevant parameters."""
        return {"w_in": self.w_in, "b_in": self.b_in,
                "w_out": self.w_out, "c_out": self.c_out}

    def theta_copy(self) -> dict[str, np.ndarray]:
        return {key: value.copy() for key, value in self.theta().items()}

    # -- inference ---------------------------------------------------------

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_inputs:
            raise ValueError(f"expected {self.n_inputs} features, got {x.shape[-1]}")
        if not np.all(np.isfinite(x)):
            raise ValueError("input contains non-finite values")
        return x

    def forward(self, x: np.ndarray, mask_fraction: float = 0.0,
                rng: np.random.Generator | None = None) -> ForwardCache:
        x = self._check_input(x)
        masked = mask_input(x, mask_fraction, rng) if mask_fraction > 0.0 else x
        hidden = sigmoid(self.w_in @ masked + self.b_in)
        recon = sigmoid(hidden @ self.w_in + self.d)
        if masked is x:
            hidden_clean = hidden
        else:
            hidden_clean = sigmoid(self.w_in @ x + self.b_in)
        probs = softmax(hidden_clean @ self.w_out + self.c_out)
        if self.check_finite:
            for name, value in (("hidden", hidden), ("recon", recon), ("probs", probs)):
                if not np.all(np.isfinite(value)):
                    raise FloatingPointError(f"non-finite values in {name} layer")
        return ForwardCache(masked, hidden, recon, probs, hidden_clean)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        x = self._check_input(x)
        return softmax(sigmoid(self.w_in @ x + self.b_in) @ self.w_out + self.c_out)

    def predict_batch(self, features: np.ndarray) -> np.ndarray:
        """Class probabilities for a whole batch (clean inputs, vectorised)."""
        features = self._check_input(features)
        hidden = sigmoid(features @ self.w_in.T + self.b_in)
        return softmax(hidden @ self.w_out + self.c_out)

    # -- training ----------------------------------------------------------

    def generative_gradients(self, x: np.ndarray, masked: np.ndarray):
        """Reconstruction error and its gradients under the tied constraint.

        The encoder use and the decoder use of ``w_in`` each contribute a
        term; their sum is the gradient of the shared matrix.
        """
        hidden = sigmoid(self.w_in @ masked + self.b_in)
        recon = sigmoid(hidden @ self.w_in + self.d)
        diff = recon - x
        error = 0.5 * float(diff @ diff)
        delta_out = diff * recon * (1.0 - recon)
        delta_hidden = (self.w_in @ delta_out) * hidden * (1.0 - hidden)
        grads = {
            "w_in": np.outer(hidden, delta_out) + np.outer(delta_hidden, masked),
            "b_in": delta_hidden,
            "d": delta_out,
        }
        return error, grads

    def generative_step(self, x: np.ndarray, lr: float, mask_fraction: float = 0.0,
                        rng: np.random.Generator | None = None) -> float:
        """One SGD step on the reconstruction of the clean input; returns the
        pre-update error."""
        if lr < 0.0:
            raise ValueError("learning rate must be nonnegative")
        x = self._check_input(x)
        masked = mask_input(x, mask_fraction, rng) if mask_fraction > 0.0 else x
        error, grads = self.generative_gradients(x, masked)
        if lr > 0.0:
            self.w_in -= lr * grads["w_in"]
            self.b_in -= lr * grads["b_in"]
            self.d -= lr * grads["d"]
        return error

    def discriminative_gradients(self, x: np.ndarray, target: np.ndarray):
        """Classification loss and its gradients under the configured loss."""
        hidden = sigmoid(self.w_in @ x + self.b_in)
        probs = softmax(hidden @ self.w_out + self.c_out)
        diff = probs - target
        if self.loss == "squared":
            loss = 0.5 * float(diff @ diff)
            delta_logits = probs * (diff - float(diff @ probs))
        else:
            loss = -float(target @ np.log(np.maximum(probs, 1e-300)))
            delta_logits = diff
        delta_hidden = (self.w_out @ delta_logits) * hidden * (1.0 - hidden)
        grads = {
            "w_in": np.outer(delta_hidden, x),
            "b_in": delta_hidden,
            "w_out": np.outer(hidden, delta_logits),
            "c_out": delta_logits,
        }
        return loss, grads

    def discriminative_step(self, x: np.ndarray, target: np.ndarray, lr: float,
                            grad_addend: dict[str, np.ndarray] | None = None):
        """One SGD step on the classifier; returns ``(loss, data_gradients)``.

        ``grad_addend`` is added to the data gradient before the step (used
        for the anchored importance pull on self-labelled samples).
        """
        if lr < 0.0:
            raise ValueError("learning rate must be nonnegative")
        x = self._check_input(x)
        target = np.asarray(target, dtype=float)
        if target.shape != (self.n_classes,):
            raise ValueError("target must be a one-hot vector over the classes")
        loss, grads = self.discriminative_gradients(x, target)
        if lr > 0.0:
            params = self.theta()
            for key, grad in grads.items():
                step = grad if grad_addend is None else grad + grad_addend[key]
                params[key] -= lr * step
        return loss, grads

    # -- structural changes --------------------------------------------------

    def add_nodes(self, count: int, rng: np.random.Generator) -> None:
        """Append ``count`` freshly initialised hidden units; old units untouched."""
        if count < 1:
            raise ValueError("count must be >= 1")
        total = self.n_hidden + count
        new_w_in = self._xavier(rng, (count, self.n_inputs), self.n_inputs, total)
        new_w_out = self._xavier(rng, (count, self.n_classes), total, self.n_classes)
        self.w_in = np.vstack([self.w_in, new_w_in])
        self.b_in = np.append(self.b_in, np.zeros(count))
        self.w_out = np.vstack([self.w_out, new_w_out])

    def prune_nodes(self, indexes) -> None:
        """Remove the listed hidden units, preserving the order of survivors."""
        indexes = np.unique(np.asarray(indexes, dtype=int))
        if indexes.size == 0:
            return
        if indexes.min() < 0 or indexes.max() >= self.n_hidden:
            raise IndexError("hidden-unit index out of range")
        if indexes.size >= self.n_hidden:
            raise ValueError("refusing to prune every hidden unit")
        keep = np.setdiff1d(np.arange(self.n_hidden), indexes)
        self.w_in = self.w_in[keep]
        self.b_in = self.b_in[keep]
        self.w_out = self.w_out[keep]

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        meta = {"n_inputs": self.n_inputs, "n_classes": self.n_classes,
                "loss": self.loss}
        with open(path, "wb") as fh:
            fh.write(SNAPSHOT_MAGIC + b"\n")
            fh.write(json.dumps(meta).encode() + b"\n")
            for arr in (self.w_in, self.b_in, self.d, self.w_out, self.c_out):
                np.save(fh, arr)

    @classmethod
    def load(cls, path) -> "Network":
        with open(path, "rb") as fh:
            magic = fh.readline().strip()
            if magic != SNAPSHOT_MAGIC:
                raise ValueError(f"not a network snapshot (magic {magic!r})")
            meta = json.loads(fh.readline().decode())
            net = cls.__new__(cls)
            net.n_inputs = meta["n_inputs"]
            net.n_classes = meta["n_classes"]
            net.loss = meta.get("loss", "cross_entropy")
            net.check_finite = False
            net.w_in = np.load(fh, allow_pickle=False)
            net.b_in = np.load(fh, allow_pickle=False)
            net.d = np.load(fh, allow_pickle=False)
            net.w_out = np.load(fh, allow_pickle=False)
            net.c_out = np.load(fh, allow_pickle=False)
        return net
