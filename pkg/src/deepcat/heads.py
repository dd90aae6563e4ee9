"""Categorization heads: class logits from features via learnable centers.

Four kinds are supported:

``baseline``
    An affine read-out ``f @ W + b``.
``prototype``
    One center per class with an identity, per-class scalar (``class``) or
    per-class diagonal (``axis``) covariance.  The logit is the Gaussian
    log-density up to a shared constant, ``-d^2 - 0.5 * sum(log var)``.
``mixture``
    K Euclidean centers per class combined either as a uniform-weight
    mixture (``lse``: ``logsumexp_k(-d^2) - log K``) or as the plain sum of
    negative squared distances (``negsum``).
``exemplar``
    A mixture with one center per training example, initialized from the
    projections of the training set through the untrained feature net.

Variances are stored as log-variances, so they stay positive without
constraints.  Class priors enter as a constant log offset and are never
trained.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ConfigurationError, DataError, DimensionError, DomainError

HEAD_KINDS = ("baseline", "prototype", "mixture", "exemplar")
LOGIT_MODES = ("lse", "negsum")
INIT_SCHEMES = ("random-normal", "from-projections")
PROBABILITY_FLOOR = 1e-12


class Covariance(str, Enum):
    IDENTITY = "identity"
    CLASS = "class"
    AXIS = "axis"


def mahalanobis_sq(x, center, variance=None):
    """Squared diagonal Mahalanobis distance ``sum((x - z)^2 / var)``.

    ``variance`` may be None (identity), a scalar, or a per-dimension
    vector.  Works on arrays or tensors and broadcasts over leading axes.
    """
    diff_sq = ad.square(ad.sub(x, center))
    if variance is not None:
        diff_sq = ad.mul(diff_sq, 1.0 / np.asarray(variance, dtype=np.float64))
    return ad.reduce("sum", diff_sq, axis=-1)


class CategorizationHead:
    """Category representation (centers, covariances, priors) for ``C`` classes.

    Centers are stored as a ``C x K x D`` parameter.  Exemplar heads can hold
    a different number of centers per class; shorter classes are padded and
    the padding is masked out of every logit (``counts`` holds the real
    number per class).
    """

    def __init__(
        self,
        kind: str,
        n_classes: int,
        dim: int,
        k: int = 1,
        covariance: str | Covariance = Covariance.IDENTITY,
        logit_mode: str = "lse",
        frozen_centers: bool = False,
        use_logdet: bool = True,
        log_prior=None,
        seed: int = 0,
    ):
        if kind not in HEAD_KINDS:
            raise ConfigurationError(f"unknown head kind {kind!r}; expected one of {HEAD_KINDS}")
        if logit_mode not in LOGIT_MODES:
            raise ConfigurationError(f"unknown logit mode {logit_mode!r}; expected one of {LOGIT_MODES}")
        try:
            covariance = Covariance(covariance)
        except ValueError:
            raise ConfigurationError(f"unknown covariance {covariance!r}") from None
        if n_classes < 2 or dim < 1 or k < 1:
            raise ConfigurationError(f"need n_classes >= 2, dim >= 1, k >= 1 (got {n_classes}, {dim}, {k})")
        if kind == "prototype" and k != 1:
            raise ConfigurationError("prototype heads have exactly one center per class")
        if kind in ("mixture", "exemplar") and covariance is not Covariance.IDENTITY:
            raise ConfigurationError(f"{kind} heads use Euclidean distance (identity covariance)")
        if kind == "baseline" and covariance is not Covariance.IDENTITY:
            raise ConfigurationError("baseline heads have no covariance")

        self.kind = kind
        self.n_classes = int(n_classes)
        self.dim = int(dim)
        self.covariance = covariance
        self.logit_mode = logit_mode
        self.use_logdet = bool(use_logdet)
        if log_prior is None:
            log_prior = np.zeros(self.n_classes)
        self.log_prior = np.array(log_prior, dtype=np.float64)
        if self.log_prior.shape != (self.n_classes,):
            raise ConfigurationError(f"log_prior must have length {self.n_classes}")

        rng = np.random.default_rng(seed)
        self.params: dict[str, Parameter] = {}
        if kind == "baseline":
            self.counts = np.zeros(self.n_classes, dtype=np.int64)
            self.params["head.weight"] = Parameter(rng.normal(0.0, np.sqrt(2.0 / dim), (dim, n_classes)), "head.weight")
            self.params["head.bias"] = Parameter(np.zeros(n_classes), "head.bias")
        else:
            self.counts = np.full(self.n_classes, k, dtype=np.int64)
            centers = rng.normal(0.0, 1.0, (n_classes, k, dim))
            self.params["head.centers"] = Parameter(centers, "head.centers", frozen=frozen_centers)
            if covariance is Covariance.CLASS:
                self.params["head.log_var"] = Parameter(np.zeros(n_classes), "head.log_var")
            elif covariance is Covariance.AXIS:
                self.params["head.log_var"] = Parameter(np.zeros((n_classes, dim)), "head.log_var")

    # -- structure ---------------------------------------------------------

    @property
    def k(self) -> int:
        """Centers per class (the largest count for ragged exemplar heads)."""
        return 0 if self.kind == "baseline" else int(self.params["head.centers"].shape[1])

    @property
    def centers(self) -> Parameter | None:
        return self.params.get("head.centers")

    @property
    def log_var(self) -> Parameter | None:
        return self.params.get("head.log_var")

    @property
    def frozen_centers(self) -> bool:
        return self.centers is not None and self.centers.frozen

    @property
    def ragged(self) -> bool:
        return self.kind != "baseline" and bool(np.any(self.counts != self.k))

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def set_centers(self, centers, counts=None):
        """Replace the center array (``C x K x D``) and per-class counts."""
        centers = np.asarray(centers, dtype=np.float64)
        if centers.ndim != 3 or centers.shape[0] != self.n_classes or centers.shape[2] != self.dim:
            raise DimensionError(f"centers must be ({self.n_classes}, K, {self.dim}), got {centers.shape}")
        if self.kind == "prototype" and centers.shape[1] != 1:
            raise ConfigurationError("prototype heads have exactly one center per class")
        counts = np.full(self.n_classes, centers.shape[1]) if counts is None else np.asarray(counts)
        if counts.shape != (self.n_classes,) or counts.min() < 1 or counts.max() > centers.shape[1]:
            raise DimensionError(f"counts {counts} inconsistent with centers of shape {centers.shape}")
        self.centers.data = centers.copy()
        self.centers.grad = None
        self.counts = counts.astype(np.int64)

    def config(self) -> dict:
        return {
            "kind": self.kind,
            "n_classes": self.n_classes,
            "dim": self.dim,
            "k": self.k,
            "counts": self.counts.tolist(),
            "covariance": self.covariance.value,
            "logit_mode": self.logit_mode,
            "frozen_centers": self.frozen_centers,
            "use_logdet": self.use_logdet,
            "log_prior": self.log_prior.tolist(),
        }

    @classmethod
    def from_config(cls, cfg: dict) -> CategorizationHead:
        head = cls(
            cfg["kind"],
            cfg["n_classes"],
            cfg["dim"],
            k=1 if cfg["kind"] == "exemplar" else max(cfg["k"], 1),
            covariance=cfg["covariance"],
            logit_mode=cfg["logit_mode"],
            frozen_centers=cfg["frozen_centers"],
            use_logdet=cfg["use_logdet"],
            log_prior=cfg["log_prior"],
        )
        if head.kind != "baseline":
            head.set_centers(np.zeros((head.n_classes, cfg["k"], head.dim)), cfg["counts"])
        return head

    # -- forward -----------------------------------------------------------

    def __call__(self, features):
        return self.logits(features)

    def squared_distances(self, features) -> Tensor:
        """``B x C x K`` squared distances from each feature row to each center."""
        f = ad.as_tensor(features)
        if f.ndim != 2 or f.shape[1] != self.dim:
            raise DimensionError(f"head expects features of shape (B, {self.dim}), got {f.shape}")
        batch = f.shape[0]
        diff_sq = (f.reshape(batch, 1, 1, self.dim) - self.centers).square()
        log_var = self.log_var
        if self.covariance is Covariance.CLASS:
            diff_sq = diff_sq * ad.exp(-log_var).reshape(1, self.n_classes, 1, 1)
        elif self.covariance is Covariance.AXIS:
            diff_sq = diff_sq * ad.exp(-log_var).reshape(1, self.n_classes, 1, self.dim)
        return diff_sq.sum(axis=3)

    def logits(self, features) -> Tensor:
        """Unnormalized log-posterior, ``B x C``."""
        f = ad.as_tensor(features)
        if self.kind == "baseline":
            if f.ndim != 2 or f.shape[1] != self.dim:
                raise DimensionError(f"head expects features of shape (B, {self.dim}), got {f.shape}")
            out = f @ self.params["head.weight"] + self.params["head.bias"]
        elif self.kind == "prototype":
            out = -self.squared_distances(f).reshape(f.shape[0], self.n_classes)
            if self.use_logdet and self.covariance is Covariance.CLASS:
                out = out - ad.scale(self.log_var, 0.5 * self.dim)
            elif self.use_logdet and self.covariance is Covariance.AXIS:
                out = out - ad.scale(self.log_var.sum(axis=1), 0.5)
        else:
            neg_d2 = -self.squared_distances(f)
            ragged = self.ragged
            if self.logit_mode == "lse":
                if ragged:
                    neg_d2 = neg_d2 + self._pad_offset()
                out = ad.logsumexp(neg_d2, axis=2) - np.log(self.counts.astype(np.float64))
            else:
                if ragged:
                    neg_d2 = neg_d2 * self._valid_mask()
                out = neg_d2.sum(axis=2)
        if np.any(self.log_prior):
            out = out + self.log_prior
        return out

    def _valid_mask(self):
        return (np.arange(self.k)[None, :] < self.counts[:, None]).astype(np.float64)

    def _pad_offset(self):
        return np.where(self._valid_mask() > 0, 0.0, -np.inf)


def posterior(logits) -> np.ndarray:
    """Row-wise softmax of ``B x C`` logits (max-shifted)."""
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise DomainError("posterior needs finite logits")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: Tensor) -> Tensor:
    return logits - ad.logsumexp(logits, axis=1, keepdims=True)


def loss_onehot(logits: Tensor, labels) -> Tensor:
    """Mean negative log-posterior of the true labels, from logits."""
    logits = ad.as_tensor(logits)
    labels = np.asarray(labels)
    batch, n_classes = logits.shape
    if labels.shape != (batch,):
        raise DataError(f"expected {batch} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError(f"labels must lie in 0..{n_classes - 1}")
    onehot = np.zeros((batch, n_classes))
    onehot[np.arange(batch), labels] = 1.0
    return ad.scale((log_softmax(logits) * onehot).sum(), -1.0 / batch)


def human_fit_crossentropy(y, h) -> float:
    """Mean over stimuli of ``-sum_i h_i log y_i``; ``y`` is floored at 1e-12."""
    y = np.asarray(y, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if y.shape != h.shape or y.ndim != 2:
        raise DataError(f"model and human distributions misaligned: {y.shape} vs {h.shape}")
    bad = np.flatnonzero(np.abs(h.sum(axis=1) - 1.0) > 1e-6)
    if bad.size:
        raise DataError(f"human row {bad[0]} does not sum to 1")
    return float(np.mean(-np.sum(h * np.log(np.maximum(y, PROBABILITY_FLOOR)), axis=1)))


def init_centers(head: CategorizationHead, scheme: str, net=None, data=None, seed: int = 0):
    """Initialize centers in place.

    ``random-normal`` draws every coordinate from Normal(0, 1).
    ``from-projections`` sets center k of class i to phi(x) for the k-th
    training example of class i; exemplar heads take every example.
    """
    if head.kind == "baseline":
        return
    if scheme not in INIT_SCHEMES:
        raise ConfigurationError(f"unknown init scheme {scheme!r}; expected one of {INIT_SCHEMES}")
    if head.kind == "exemplar" and scheme != "from-projections":
        raise ConfigurationError("exemplar heads are initialized from projections of the training set")
    if scheme == "random-normal":
        rng = np.random.default_rng(seed)
        head.set_centers(rng.normal(0.0, 1.0, (head.n_classes, head.k, head.dim)), np.full(head.n_classes, head.k))
        return

    if net is None or data is None:
        raise ConfigurationError("from-projections needs a feature net and training data")
    with ad.no_grad():
        feats = net.forward(data.inputs).data
    if feats.shape[1] != head.dim:
        raise DimensionError(f"feature net produces {feats.shape[1]} features, head expects {head.dim}")
    members = [np.flatnonzero(data.labels == c) for c in range(head.n_classes)]
    if head.kind == "exemplar":
        counts = np.array([len(m) for m in members])
    else:
        counts = np.full(head.n_classes, head.k)
    for c, m in enumerate(members):
        if len(m) < max(counts[c], 1):
            raise DataError(f"class {c} has {len(m)} examples, needs at least {max(counts[c], 1)}")
    centers = np.zeros((head.n_classes, int(counts.max()), head.dim))
    for c, m in enumerate(members):
        centers[c, : counts[c]] = feats[m[: counts[c]]]
    head.set_centers(centers, counts)
