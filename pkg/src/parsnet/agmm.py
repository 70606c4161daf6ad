"""Self-adjusting diagonal Gaussian mixture for streaming density estimation.

The mixture starts empty and maintains an open structure: a sample that
falls outside the coverage of every existing component, and survives a
vigilance check on the winning component's remaining room, becomes the
centre of a fresh component.  Samples that stay inside coverage instead
tune the winning component through support-weighted running-moment
updates.  Components whose average activation over their lifetime drops
well below the population are retired.  Per-component class frequency
counts additionally turn the mixture into a cheap class scorer for weakly
labelled streams.

All operations are strictly single-pass: each sample is looked at once and
never stored.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

# Variance floor: tuning on a near-constant stream collapses the spread,
# and both activation and likelihood divide by it.
VARIANCE_FLOOR = 1e-8

SNAPSHOT_MAGIC = b"AGMM1"

LOG_2PI = math.log(2.0 * math.pi)


class EmptyModelError(RuntimeError):
    """An operation required at least one component."""


class NoClassEvidenceError(RuntimeError):
    """Class posterior requested before any label has been observed."""


@dataclass
class GaussianComponent:
    """One diagonal-covariance component of the mixture.

    ``spread`` holds per-dimension standard deviations and stays strictly
    positive.  ``activity_sum`` accumulates the component's activation over
    its ``lifespan``, so ``0 <= activity_sum <= lifespan`` always holds.
    """

    center: np.ndarray
    spread: np.ndarray
    support: int = 1
    lifespan: int = 0
    activity_sum: float = 0.0
    class_counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def activation(component: GaussianComponent, x: np.ndarray) -> float:
    """Proximity of ``x`` to a component: the worst per-dimension Gaussian kernel.

    Returns a value in (0, 1], reaching 1 exactly when ``x`` sits on the
    centre in every dimension.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("activation: input contains non-finite values")
    z = (x - component.center) / component.spread
    return float(np.exp(-0.5 * np.max(z * z)))


def insertion_threshold(dim: int, confidence: float) -> float:
    """Proximity level below which a sample counts as uncovered input space.

    Decays with the input dimension so that high-dimensional streams do not
    insert a component for every sample; ``confidence`` shifts the coverage
    band in the same way a sigma-rule confidence level would.
    """
    if dim < 1:
        raise ValueError("insertion_threshold: dim must be >= 1")
    if confidence <= 0.0:
        raise ValueError("insertion_threshold: confidence must be positive")
    return math.exp(-(dim * confidence) / (4.0 - 2.0 * math.exp(-dim / 20.0)))


class AgmmModel:
    """Online mixture with insertion, winner tuning and activity pruning.

    Component state is stored as stacked arrays (one row per component) so
    the per-sample operations stay vectorised; :meth:`component` exposes a
    row as a :class:`GaussianComponent` view for inspection.
    """

    def __init__(self, input_dim: int, num_classes: int,
                 init_spread: float = 0.1, prune_grace: int = 40):
        if input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if init_spread <= 0.0:
            raise ValueError("init_spread must be positive")
        self.input_dim = input_dim
        self.num_classes = num_classes
        self.init_spread = init_spread
        self.prune_grace = prune_grace
        self.centers = np.empty((0, input_dim))
        self.spreads = np.empty((0, input_dim))
        self.support = np.empty(0, dtype=np.int64)
        self.lifespan = np.empty(0, dtype=np.int64)
        self.activity = np.empty(0)
        self.class_counts = np.empty((0, num_classes), dtype=np.int64)

    # -- structure ---------------------------------------------------------

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    def component(self, index: int) -> GaussianComponent:
        """Read view of one component (arrays are row views, counters copies)."""
        return GaussianComponent(
            center=self.centers[index],
            spread=self.spreads[index],
            support=int(self.support[index]),
            lifespan=int(self.lifespan[index]),
            activity_sum=float(self.activity[index]),
            class_counts=self.class_counts[index],
        )

    @property
    def components(self) -> list[GaussianComponent]:
        return [self.component(i) for i in range(self.size)]

    # -- scoring -----------------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.input_dim,):
            raise ValueError(f"expected input of shape ({self.input_dim},), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("input contains non-finite values")
        return x

    def activations(self, x: np.ndarray) -> np.ndarray:
        """Activation of every component for ``x`` (empty array when size is 0)."""
        x = self._check_input(x)
        if self.size == 0:
            return np.empty(0)
        with np.errstate(over="ignore"):
            z = (x - self.centers) / self.spreads
            return np.exp(-0.5 * np.max(z * z, axis=1))

    def winner(self, x: np.ndarray) -> int:
        """Index of the most activated component; ties go to the lowest index."""
        if self.size == 0:
            raise EmptyModelError("mixture has no components yet")
        return int(np.argmax(self.activations(x)))

    def prior_weights(self) -> np.ndarray:
        """Relative support of each component (sums to 1)."""
        if self.size == 0:
            raise EmptyModelError("mixture has no components yet")
        return self.support / self.support.sum()

    def _log_likelihood(self, x: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore"):
            z = (x - self.centers) / self.spreads
            return (-0.5 * np.sum(z * z, axis=1)
                    - np.sum(np.log(self.spreads), axis=1)
                    - 0.5 * self.input_dim * LOG_2PI)

    def mixing_coefficients(self, x: np.ndarray) -> np.ndarray:
        """Posterior component responsibilities for ``x``; always sums to 1.

        When every likelihood underflows to zero the support-based priors
        are returned instead, preserving the partition of unity.
        """
        x = self._check_input(x)
        priors = self.prior_weights()
        log_lik = self._log_likelihood(x)
        peak = np.max(log_lik)
        if not np.isfinite(peak):
            weights = priors.copy()
        else:
            weights = priors * np.exp(log_lik - peak)
            total = weights.sum()
            weights = weights / total if total > 0.0 else priors.copy()
        if abs(weights.sum() - 1.0) > 1e-9:
            raise AssertionError("mixing coefficients lost the partition of unity")
        return weights

    def class_posterior(self, x: np.ndarray) -> np.ndarray:
        """Class probabilities from per-component label frequency counts.

        Components that have never seen a label contribute a uniform class
        conditional.  Raises :class:`NoClassEvidenceError` when no label has
        been observed anywhere, signalling the caller to skip self-labelling.
        """
        x = self._check_input(x)
        if self.size == 0:
            raise EmptyModelError("mixture has no components yet")
        totals = self.class_counts.sum(axis=1)
        if totals.sum() == 0:
            raise NoClassEvidenceError("no labelled observations recorded")
        conditionals = np.full((self.size, self.num_classes), 1.0 / self.num_classes)
        seen = totals > 0
        conditionals[seen] = self.class_counts[seen] / totals[seen, None]

        priors = self.prior_weights()
        log_lik = self._log_likelihood(x)
        peak = np.max(log_lik)
        if np.isfinite(peak):
            weights = priors * np.exp(log_lik - peak)
            if weights.sum() <= 0.0:
                weights = priors
        else:
            weights = priors
        scores = weights @ conditionals
        posterior = scores / scores.sum()
        if abs(posterior.sum() - 1.0) > 1e-9:
            raise AssertionError("class posterior lost the partition of unity")
        return posterior

    # -- adaptation --------------------------------------------------------

    def insert(self, x: np.ndarray) -> None:
        """Add a component centred on ``x`` with the initial spread."""
        x = self._check_input(x)
        self.centers = np.vstack([self.centers, x[None, :]])
        self.spreads = np.vstack([self.spreads, np.full((1, self.input_dim), self.init_spread)])
        self.support = np.append(self.support, 1)
        self.lifespan = np.append(self.lifespan, 0)
        self.activity = np.append(self.activity, 0.0)
        self.class_counts = np.vstack(
            [self.class_counts, np.zeros((1, self.num_classes), dtype=np.int64)])

    def vigilance_passes(self, win: int) -> bool:
        """Whether the winner has run out of room to absorb more samples.

        Counts, per dimension, how many other components sit outside the
        winner's one-spread band; the winner must span at least that portion
        of the combined span of the others for an insertion to go ahead.
        With a single component the test is vacuously true.
        """
        if self.size <= 1:
            return True
        low = self.centers[win] - self.spreads[win]
        high = self.centers[win] + self.spreads[win]
        others = np.ones(self.size, dtype=bool)
        others[win] = False
        outside = (self.centers[others] < low) | (self.centers[others] > high)
        rho = outside.sum() / ((self.size - 1) * self.input_dim)
        span = self.spreads.mean(axis=1)
        return bool(span[win] >= rho * (span.sum() - span[win]))

    def should_insert(self, x: np.ndarray, confidence: float) -> bool:
        """Insertion gate: uncovered by every component AND vigilance passes."""
        acts = self.activations(x)
        if acts.size == 0:
            raise EmptyModelError("mixture has no components yet")
        if acts.max() >= insertion_threshold(self.input_dim, confidence):
            return False
        return self.vigilance_passes(int(acts.argmax()))

    def tune(self, win: int, x: np.ndarray) -> None:
        """Pull the winning component toward ``x`` with support-weighted moments.

        The centre moves first; the spread update then measures the squared
        distance to the already-moved centre, which keeps the variance
        estimate nonnegative-biased.
        """
        x = self._check_input(x)
        gain = 1.0 / (self.support[win] + 1.0)
        center = self.centers[win] + (x - self.centers[win]) * gain
        variance = self.spreads[win] ** 2
        variance = variance + ((x - center) ** 2 - variance) * gain
        np.maximum(variance, VARIANCE_FLOOR, out=variance)
        self.centers[win] = center
        self.spreads[win] = np.sqrt(variance)
        self.support[win] += 1

    def observe_label(self, x: np.ndarray, label: int) -> None:
        """Credit ``label`` to the component that wins ``x``."""
        if not 0 <= label < self.num_classes:
            raise ValueError(f"label {label} outside 0..{self.num_classes - 1}")
        self.class_counts[self.winner(x), label] += 1

    def prune_inactive(self) -> list[int]:
        """Retire components whose lifetime activity rate fell off the population.

        Components younger than ``prune_grace`` samples are protected, and at
        least one component always survives (the most active one is kept when
        the rule would empty the model).  Returns the removed indices.
        """
        if self.size < 2:
            return []
        rate = self.activity / np.maximum(self.lifespan, 1)
        cutoff = abs(rate.mean() - 0.5 * rate.std())
        doomed = (self.lifespan >= self.prune_grace) & (rate <= cutoff)
        if doomed.all():
            doomed[int(rate.argmax())] = False
        if not doomed.any():
            return []
        removed = np.flatnonzero(doomed)
        keep = ~doomed
        self.centers = self.centers[keep]
        self.spreads = self.spreads[keep]
        self.support = self.support[keep]
        self.lifespan = self.lifespan[keep]
        self.activity = self.activity[keep]
        self.class_counts = self.class_counts[keep]
        return removed.tolist()

    def update(self, x: np.ndarray, confidence: float,
               label: int | None = None) -> tuple[bool, list[int]]:
        """One full streaming step: age, insert-or-tune, prune, credit label.

        Returns ``(inserted, pruned_indices)`` so callers can log structural
        events.  The very first sample bootstraps the mixture.
        """
        x = self._check_input(x)
        if self.size == 0:
            self.insert(x)
            if label is not None:
                self.observe_label(x, label)
            return True, []
        acts = self.activations(x)
        self.lifespan += 1
        self.activity += acts
        inserted = self.should_insert(x, confidence)
        if inserted:
            self.insert(x)
        else:
            self.tune(int(acts.argmax()), x)
        pruned = self.prune_inactive()
        if label is not None:
            self.observe_label(x, label)
        return inserted, pruned

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        """Write a versioned snapshot that round-trips bit-exactly."""
        meta = {
            "input_dim": self.input_dim,
            "num_classes": self.num_classes,
            "init_spread": self.init_spread,
            "prune_grace": self.prune_grace,
        }
        with open(path, "wb") as fh:
            fh.write(SNAPSHOT_MAGIC + b"\n")
            fh.write(json.dumps(meta).encode() + b"\n")
            for arr in (self.centers, self.spreads, self.support,
                        self.lifespan, self.activity, self.class_counts):
                np.save(fh, arr)

    @classmethod
    def load(cls, path) -> "AgmmModel":
        with open(path, "rb") as fh:
            magic = fh.readline().strip()
            if magic != SNAPSHOT_MAGIC:
                raise ValueError(f"not a mixture snapshot (magic {magic!r})")
            meta = json.loads(fh.readline().decode())
            model = cls(meta["input_dim"], meta["num_classes"],
                        meta["init_spread"], meta["prune_grace"])
            model.centers = np.load(fh, allow_pickle=False)
            model.spreads = np.load(fh, allow_pickle=False)
            model.support = np.load(fh, allow_pickle=False)
            model.lifespan = np.load(fh, allow_pickle=False)
            model.activity = np.load(fh, allow_pickle=False)
            model.class_counts = np.load(fh, allow_pickle=False)
        return model
