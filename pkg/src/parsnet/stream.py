"""Scenario construction, the per-sample training loop, and prequential runs.

A scenario is a fixed sequence of batches whose training labels have been
withheld according to a policy (a sporadic fraction per batch, or labels in
the first batch only); the ground truth stays available for scoring.  The
learner wires the four learning pieces together per sample: a generative
step with structural checks on every sample, a mixture update, and either
supervised training (original plus augmented copy, importance bookkeeping,
discriminative structural checks) or an attempted self-labelled step under
the hedge pull.  Evaluation is strictly test-then-train: every batch is
scored with the model state produced by the preceding batches only.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .agmm import AgmmModel, NoClassEvidenceError
from .network import Network, normalized_top2
from .plasticity import PhaseMonitor, bias_variance, expected_hidden, prune_candidates
from .slash import HedgeState, ReconScaler, augment, propose_label


@dataclass
class Batch:
    """A contiguous chunk of the stream.

    ``labels`` is what the learner may train on (-1 marks a withheld label);
    ``truth`` is the full ground truth used for prequential scoring only.
    """

    features: np.ndarray
    labels: np.ndarray
    truth: np.ndarray


@dataclass
class StreamScenario:
    batches: list[Batch]
    num_classes: int
    policy: str
    label_fraction: float


def as_batches(features: np.ndarray, labels: np.ndarray, batch_size: int) -> list[Batch]:
    """Split arrays into fully labelled batches, keeping the original order.

    The final batch keeps whatever is left over.
    """
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError("features must be a non-empty (n, dim) array")
    if labels.shape != (features.shape[0],):
        raise ValueError("labels must align with features")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    out = []
    for start in range(0, features.shape[0], batch_size):
        stop = start + batch_size
        truth = labels[start:stop]
        out.append(Batch(features[start:stop], truth.copy(), truth))
    return out


def make_sporadic(batches: list[Batch], fraction: float,
                  rng: np.random.Generator) -> StreamScenario:
    """Keep exactly ``floor(fraction * n)`` labels per batch, chosen uniformly
    with no regard for the class distribution."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("label fraction must lie strictly between 0 and 1")
    masked = []
    for batch in batches:
        n = batch.truth.shape[0]
        keep = rng.choice(n, size=int(fraction * n), replace=False)
        labels = np.full(n, -1, dtype=np.int64)
        labels[keep] = batch.truth[keep]
        masked.append(Batch(batch.features, labels, batch.truth))
    return StreamScenario(masked, _class_count(batches), "sporadic", fraction)


def make_infinite_delay(batches: list[Batch]) -> StreamScenario:
    """Labels survive only in the first batch; everything after is unlabelled."""
    if len(batches) < 2:
        raise ValueError("infinite delay needs at least two batches")
    masked = [Batch(batches[0].features, batches[0].truth.copy(), batches[0].truth)]
    for batch in batches[1:]:
        masked.append(Batch(batch.features,
                            np.full(batch.truth.shape[0], -1, dtype=np.int64),
                            batch.truth))
    total = sum(b.truth.shape[0] for b in batches)
    return StreamScenario(masked, _class_count(batches), "infinite_delay",
                          batches[0].truth.shape[0] / total)


def _class_count(batches: list[Batch]) -> int:
    top = max(int(b.truth.max()) for b in batches)
    low = min(int(b.truth.min()) for b in batches)
    if low < 0:
        raise ValueError("ground-truth labels must be nonnegative")
    return max(top + 1, 2)


def normalize_batches(batches: list[Batch]) -> list[Batch]:
    """Min-max scale every batch by the first batch's ranges, clipped to [0, 1].

    Columns that are constant in the first batch map to 0.
    """
    first = batches[0].features
    lo = first.min(axis=0)
    span = first.max(axis=0) - lo
    flat = span == 0.0
    safe = np.where(flat, 1.0, span)
    out = []
    for index, batch in enumerate(batches):
        if batch.features.shape[1] != first.shape[1]:
            raise ValueError(
                f"batch {index} has {batch.features.shape[1]} features, "
                f"expected {first.shape[1]}")
        feats = np.clip((batch.features - lo) / safe, 0.0, 1.0)
        if flat.any():
            feats[:, flat] = 0.0
        out.append(Batch(feats, batch.labels, batch.truth))
    return out


@dataclass
class RunConfig:
    """Hyperparameters and toggles for one prequential run."""

    seed: int = 0
    agmm_conf: float = 0.55      # mixture top-2 confidence gate for self-labelling
    net_conf: float = 0.6        # network top-2 confidence gate
    init_spread: float = 0.1     # spread of freshly inserted mixture components
    lr_gen: float = 0.01
    lr_disc: float = 0.001
    loss: str = "cross_entropy"  # classifier training loss; NS stays squared-error
    mask_fraction: float = 0.1
    prune_grace: int = 40
    hedge_eps: float = 1e-8
    init_nodes: int = 1
    max_hidden: int = 1024       # hard cap on hidden growth (plumbing guard)
    prune_holdoff: int = 1000    # samples after a growth event before pruning may act
    augment_mode: str = "tabular"
    agmm_off: bool = False       # ablation: static unit Gaussian, one-at-a-time growth
    evolve_off: bool = False     # ablation: no hidden-unit structural changes
    slash_off: bool = False      # ablation: no pseudo labels, no hedge, no augmentation
    freeze_after_first: bool = False  # baseline: stop all training after the first batch
    trace_path: str | None = None
    audit_path: str | None = None


@dataclass
class RunMetrics:
    """Everything a prequential run reports."""

    batch_accuracy: list[float]
    classification_rate: float
    precision: list[float | None]
    recall: list[float | None]
    hidden_nodes: list[int]
    mixture_sizes: list[int]
    pseudo_trajectory: list[int]
    pseudo_labels: int
    train_seconds: float
    cumulative_seconds: list[float]
    confusion: np.ndarray
    counters: dict[str, int]
    events: list[tuple[int, str]] = field(default_factory=list)

    def signature(self) -> tuple:
        """Deterministic content for reproducibility checks (wall time excluded)."""
        return (
            tuple(self.batch_accuracy),
            self.classification_rate,
            tuple(self.precision),
            tuple(self.recall),
            tuple(self.hidden_nodes),
            tuple(self.mixture_sizes),
            tuple(self.pseudo_trajectory),
            self.pseudo_labels,
            self.confusion.tobytes(),
            tuple(sorted(self.counters.items())),
            tuple(self.events),
        )


def precision_recall(confusion: np.ndarray):
    """Per-class precision/recall from a confusion matrix (rows = truth).

    Classes that were never predicted (or never occurred) get ``None``
    instead of a fake zero.
    """
    tp = np.diag(confusion)
    by_pred = confusion.sum(axis=0)
    by_true = confusion.sum(axis=1)
    precision = [float(tp[i] / by_pred[i]) if by_pred[i] else None
                 for i in range(confusion.shape[0])]
    recall = [float(tp[i] / by_true[i]) if by_true[i] else None
              for i in range(confusion.shape[0])]
    return precision, recall


class StreamLearner:
    """The full online model bundle, trained one sample at a time."""

    def __init__(self, n_inputs: int, n_classes: int, config: RunConfig):
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.net = Network(n_inputs, n_classes, config.init_nodes, self.rng,
                           loss=config.loss)
        if config.agmm_off:
            # Frozen stand-in: one standard-normal component, never updated,
            # never labelled, so growth falls back to one unit at a time and
            # self-labelling stays silent.
            self.mixture = AgmmModel(n_inputs, n_classes, init_spread=1.0,
                                     prune_grace=config.prune_grace)
            self.mixture.insert(np.zeros(n_inputs))
        else:
            self.mixture = AgmmModel(n_inputs, n_classes,
                                     init_spread=config.init_spread,
                                     prune_grace=config.prune_grace)
        self.gen_monitor = PhaseMonitor()
        self.disc_monitor = PhaseMonitor()
        self.hedge = HedgeState.for_network(self.net, config.hedge_eps)
        self.scaler = ReconScaler()
        self.pseudo_count = 0
        self.samples_seen = 0
        self._last_growth = -(10 ** 9)
        self.counters = {"samples": 0, "skipped": 0, "gen_steps": 0,
                         "disc_label_steps": 0, "disc_aug_steps": 0,
                         "disc_pseudo_steps": 0}
        self.events: list[tuple[int, str]] = []
        self._eye = np.eye(n_classes)
        self._trace = open(config.trace_path, "w", newline="") if config.trace_path else None
        self._trace_csv = None
        if self._trace:
            self._trace_csv = csv.writer(self._trace)
            self._trace_csv.writerow(["sample", "phase", "bias_sq", "variance",
                                      "bias_level", "var_level", "hidden", "components"])
        self._audit = open(config.audit_path, "w", newline="") if config.audit_path else None
        self._audit_csv = None
        if self._audit:
            self._audit_csv = csv.writer(self._audit)
            self._audit_csv.writerow(["sample", "decision", "net_confidence",
                                      "agmm_confidence", "label", "hedge_strength"])

    def close(self) -> None:
        for handle in (self._trace, self._audit):
            if handle:
                handle.close()
        self._trace = self._audit = None

    # -- inference -----------------------------------------------------------

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        return self.net.predict_batch(features)

    def predict(self, features: np.ndarray) -> np.ndarray:
        return np.argmax(self.net.predict_batch(features), axis=1)

    # -- training ------------------------------------------------------------

    def _evolve(self, monitor: PhaseMonitor, target: np.ndarray, phase: str) -> None:
        """One bias/variance structural check for the given phase.

        A firing grow trigger suppresses the prune check for the same sample,
        and pruning can only act once the post-growth hold-off has elapsed:
        fresh units inflate the variance statistics for a while, and acting on
        that inflation would cut the very capacity that was just added.  The
        ablation toggle suppresses the structural actions but keeps the
        statistics (and the confidence level the mixture consumes) flowing.
        """
        cfg = self.config
        e_hidden = expected_hidden(self.net, self.mixture)
        bias_sq, variance = bias_variance(e_hidden, target, self.net, phase)
        if monitor.observe_bias(bias_sq):
            if not cfg.evolve_off and self.net.n_hidden < cfg.max_hidden:
                prev = self.net.n_hidden
                self.net.add_nodes(self.mixture.size, self.rng)
                self.hedge.grow_hidden(self.net.theta(), prev)
                self.events.append((self.samples_seen, "node_grow"))
                self._last_growth = self.samples_seen
        elif monitor.observe_variance(variance) and not cfg.evolve_off:
            settled = self.samples_seen - self._last_growth >= cfg.prune_holdoff
            doomed = prune_candidates(e_hidden) if settled else []
            if doomed:
                keep = np.setdiff1d(np.arange(self.net.n_hidden), doomed)
                self.net.prune_nodes(doomed)
                self.hedge.prune_hidden(keep)
                self.events.append((self.samples_seen, "node_prune"))
        if self._trace_csv:
            self._trace_csv.writerow([self.samples_seen, phase, bias_sq, variance,
                                      monitor.bias_level, monitor.var_level,
                                      self.net.n_hidden, self.mixture.size])

    def train_on_sample(self, x: np.ndarray, label: int) -> None:
        """Single-pass treatment of one sample (label -1 means unlabelled)."""
        cfg = self.config
        self.samples_seen += 1
        self.counters["samples"] += 1

        # Generative phase: every sample, masked input, clean target.
        recon_error = self.net.generative_step(x, cfg.lr_gen, cfg.mask_fraction, self.rng)
        self.counters["gen_steps"] += 1
        hedge_strength = self.scaler.rescale(recon_error)
        if self.mixture.size:
            self._evolve(self.gen_monitor, x, "generative")

        # Mixture update consumes the freshest bias confidence level.
        if not cfg.agmm_off:
            inserted, pruned = self.mixture.update(
                x, self.gen_monitor.bias_level, label if label >= 0 else None)
            if inserted:
                self.events.append((self.samples_seen, "mixture_insert"))
            if pruned:
                self.events.append((self.samples_seen, "mixture_prune"))

        if label >= 0:
            target = self._eye[label]
            _, grads = self.net.discriminative_step(x, target, cfg.lr_disc)
            self.counters["disc_label_steps"] += 1
            if not cfg.slash_off:
                self.hedge.record_step(
                    {k: -cfg.lr_disc * g for k, g in grads.items()}, grads)
                jittered, same = augment(x, label, self.rng, cfg.augment_mode)
                _, grads = self.net.discriminative_step(jittered, self._eye[same], cfg.lr_disc)
                self.counters["disc_aug_steps"] += 1
                self.hedge.record_step(
                    {k: -cfg.lr_disc * g for k, g in grads.items()}, grads)
                self.hedge.set_anchor(self.net.theta())
            # Structural checks run on originally labelled samples only.
            if self.mixture.size:
                self._evolve(self.disc_monitor, target, "discriminative")
        elif not cfg.slash_off:
            self.hedge.refresh_importance()
            net_probs = self.net.predict_proba(x)
            agmm_probs = None
            if self.mixture.size:
                try:
                    agmm_probs = self.mixture.class_posterior(x)
                except NoClassEvidenceError:
                    agmm_probs = None
            pseudo, reason = propose_label(net_probs, agmm_probs,
                                           cfg.agmm_conf, cfg.net_conf)
            if pseudo is not None:
                addend = self.hedge.pull(self.net.theta(), hedge_strength)
                self.net.discriminative_step(x, self._eye[pseudo.label], cfg.lr_disc,
                                             grad_addend=addend)
                self.pseudo_count += 1
                self.counters["disc_pseudo_steps"] += 1
            if self._audit_csv:
                self._audit_csv.writerow([
                    self.samples_seen, reason, normalized_top2(net_probs),
                    normalized_top2(agmm_probs) if agmm_probs is not None else "",
                    pseudo.label if pseudo is not None else "", hedge_strength])

    def train_on_batch(self, features: np.ndarray, labels: np.ndarray) -> dict:
        """Train over a batch in arrival order; invalid samples are skipped."""
        features = np.asarray(features, dtype=float)
        labels = np.asarray(labels, dtype=np.int64)
        for i in range(features.shape[0]):
            if not np.all(np.isfinite(features[i])):
                self.counters["skipped"] += 1
                continue
            self.train_on_sample(features[i], int(labels[i]))
        return {
            "hidden_nodes": self.net.n_hidden,
            "mixture_size": self.mixture.size,
            "pseudo_total": self.pseudo_count,
            "skipped": self.counters["skipped"],
        }


def prequential_run(config: RunConfig, scenario: StreamScenario) -> RunMetrics:
    """Test-then-train over every batch exactly once."""
    batches = normalize_batches(scenario.batches)
    n_inputs = batches[0].features.shape[1]
    learner = StreamLearner(n_inputs, scenario.num_classes, config)
    confusion = np.zeros((scenario.num_classes, scenario.num_classes), dtype=np.int64)
    batch_accuracy, hidden, sizes, pseudo, cumtime = [], [], [], [], []
    started = time.perf_counter()
    for index, batch in enumerate(batches):
        if batch.features.shape[1] != n_inputs:
            raise ValueError(
                f"batch {index} has {batch.features.shape[1]} features, expected {n_inputs}")
        predictions = learner.predict(batch.features)
        batch_accuracy.append(float(np.mean(predictions == batch.truth)))
        np.add.at(confusion, (batch.truth, predictions), 1)
        if not (config.freeze_after_first and index >= 1):
            learner.train_on_batch(batch.features, batch.labels)
        hidden.append(learner.net.n_hidden)
        sizes.append(learner.mixture.size)
        pseudo.append(learner.pseudo_count)
        cumtime.append(time.perf_counter() - started)
    learner.close()
    precision, recall = precision_recall(confusion)
    return RunMetrics(
        batch_accuracy=batch_accuracy,
        classification_rate=float(np.mean(batch_accuracy)),
        precision=precision,
        recall=recall,
        hidden_nodes=hidden,
        mixture_sizes=sizes,
        pseudo_trajectory=pseudo,
        pseudo_labels=learner.pseudo_count,
        train_seconds=cumtime[-1],
        cumulative_seconds=cumtime,
        confusion=confusion,
        counters=dict(learner.counters),
        events=list(learner.events),
    )
