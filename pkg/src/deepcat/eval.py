"""Model assembly, metrics, the number-of-centers sweep and embedding export."""

from __future__ import annotations

import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import featurenet as fn
from ._io import atomic_write
from .data import HumanLabelSet, LabeledDataset, split
from .errors import ConfigurationError, DataError, DeepCatError, DimensionError
from .heads import (
    CategorizationHead,
    Covariance,
    human_fit_crossentropy,
    init_centers,
    posterior,
)
from .optim import TrainConfig, fit

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelSpec:
    """Everything needed to build a feature net and head for a dataset.

    ``net`` is ``"auto"`` (the default stack for vector or image inputs),
    ``"identity"``, or a layer string such as ``"dense:2:16, relu, dense:16:4"``.
    """

    net: str = "auto"
    feature_dim: int | None = None
    head: str = "prototype"
    k: int | None = None
    covariance: str = "identity"
    logit_mode: str = "lse"
    frozen_centers: bool = False
    use_logdet: bool = True
    init: str | None = None
    log_prior: tuple | None = None

    def __post_init__(self):
        if self.head == "prototype" and self.k not in (None, 1):
            raise ConfigurationError("prototype heads have exactly one center per class (k must be 1)")
        if self.head == "exemplar" and self.k is not None:
            raise ConfigurationError("exemplar heads take k from the training set; do not set k")
        if self.head in ("mixture", "exemplar") and self.covariance != Covariance.IDENTITY.value:
            raise ConfigurationError(f"{self.head} heads use identity covariance")
        if self.head == "exemplar" and self.init not in (None, "from-projections"):
            raise ConfigurationError("exemplar heads are initialized from projections")
        if self.k is not None and self.k < 1:
            raise ConfigurationError("k must be >= 1")

    @property
    def effective_k(self) -> int:
        return 1 if self.k is None else self.k

    @property
    def effective_init(self) -> str:
        return self.init or "from-projections"

    def to_dict(self):
        d = asdict(self)
        d["log_prior"] = None if self.log_prior is None else list(self.log_prior)
        return d


def _seeds(seed: int) -> tuple[int, int]:
    net_seed, head_seed = np.random.SeedSequence(seed).generate_state(2)
    return int(net_seed), int(head_seed)


def build_net(spec: ModelSpec, input_shape, seed: int) -> fn.FeatureNet:
    input_shape = tuple(input_shape)
    if spec.net == "identity":
        return fn.FeatureNet.identity(input_shape)
    if spec.net == "auto":
        if len(input_shape) == 1:
            layers = fn.default_vector_layers(input_shape[0], spec.feature_dim or 8)
        elif len(input_shape) == 3:
            layers = fn.default_image_layers(input_shape, spec.feature_dim or 32)
        else:
            raise DimensionError(f"no default network for inputs of shape {input_shape}")
    else:
        layers = fn.parse_layers(spec.net)
    return fn.build(layers, seed, input_shape=input_shape)


def build_model(spec: ModelSpec, train: LabeledDataset, seed: int):
    """Build and initialize ``(net, head)`` for ``train``."""
    net_seed, head_seed = _seeds(seed)
    net = build_net(spec, train.input_shape, net_seed)
    head = CategorizationHead(
        spec.head,
        train.n_classes,
        net.feature_dim,
        k=spec.effective_k,
        covariance=spec.covariance,
        logit_mode=spec.logit_mode,
        frozen_centers=spec.frozen_centers,
        use_logdet=spec.use_logdet,
        log_prior=spec.log_prior,
        seed=head_seed,
    )
    init_centers(head, spec.effective_init, net, train, head_seed)
    return net, head


# --- metrics ------------------------------------------------------------------


@dataclass
class RunMetrics:
    run_id: str
    seed: int
    head_kind: str
    covariance: str
    K: int
    logit_mode: str
    epochs: int
    validation_accuracy: float | None
    human_crossentropy: float | None
    per_epoch: list = field(default_factory=list)
    error: str | None = None

    def to_dict(self):
        d = asdict(self)
        if d["error"] is None:
            del d["error"]
        return d


def metrics_json(metrics) -> str:
    return json.dumps([m.to_dict() for m in metrics], indent=2, sort_keys=False) + "\n"


def predict_proba(net, head, inputs, batch_size: int = 512) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=np.float64)
    out = []
    with ad.no_grad():
        for start in range(0, len(inputs), batch_size):
            out.append(posterior(head.logits(net.forward(inputs[start : start + batch_size]))))
    if not out:
        return np.zeros((0, head.n_classes))
    return np.concatenate(out)


def predict_logits(net, head, inputs, batch_size: int = 512) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=np.float64)
    with ad.no_grad():
        chunks = [head.logits(net.forward(inputs[s : s + batch_size])).data for s in range(0, len(inputs), batch_size)]
    return np.concatenate(chunks) if chunks else np.zeros((0, head.n_classes))


def accuracy(net, head, dataset: LabeledDataset) -> float:
    """Fraction of argmax predictions equal to the label (ties go to the lower class)."""
    if dataset.n_classes != head.n_classes:
        raise DimensionError(f"dataset has {dataset.n_classes} classes, head has {head.n_classes}")
    if len(dataset) == 0:
        raise DataError("accuracy of an empty dataset is undefined")
    pred = np.argmax(predict_logits(net, head, dataset.inputs), axis=1)
    return float(np.mean(pred == dataset.labels))


def human_fit(net, head, dataset: LabeledDataset, human: HumanLabelSet) -> float:
    if len(human) != len(dataset):
        raise DataError(f"{len(human)} human rows for {len(dataset)} stimuli")
    if human.n_classes != head.n_classes:
        raise DataError(f"human labels cover {human.n_classes} classes, head has {head.n_classes}")
    return human_fit_crossentropy(predict_proba(net, head, dataset.inputs), human.distributions)


def train_run(
    spec: ModelSpec,
    train: LabeledDataset,
    validation: LabeledDataset,
    config: TrainConfig,
    human: HumanLabelSet | None = None,
    run_id: str = "run",
):
    """Build, fit and evaluate one model.  Returns ``(net, head, RunMetrics)``."""
    net, head = build_model(spec, train, config.seed)
    history = fit(net, head, train, config)
    metrics = RunMetrics(
        run_id=run_id,
        seed=config.seed,
        head_kind=spec.head,
        covariance=spec.covariance,
        K=head.k,
        logit_mode=spec.logit_mode,
        epochs=config.epochs,
        validation_accuracy=accuracy(net, head, validation),
        human_crossentropy=None if human is None else human_fit(net, head, validation, human),
        per_epoch=history,
    )
    return net, head, metrics


# --- number-of-centers sweep ------------------------------------------------------


def centers_sweep(
    spec: ModelSpec,
    dataset: LabeledDataset,
    human: HumanLabelSet | None = None,
    k_values=(1,),
    replications: int = 1,
    base_seed: int = 0,
    config: TrainConfig | None = None,
    validation: LabeledDataset | None = None,
    jobs: int = 1,
) -> list[RunMetrics]:
    """Train one mixture model per (K, replication); seed = base_seed + replication.

    Without ``validation`` the dataset is split 80/20 (stratified, seeded
    by ``base_seed``); ``human`` rows must line up with the validation set.
    A failed run is recorded with its error and the sweep continues.
    """
    k_values = [int(k) for k in k_values]
    if not k_values or min(k_values) < 1:
        raise ConfigurationError("the sweep needs a non-empty grid of K >= 1")
    if replications < 1:
        raise ConfigurationError("replications must be >= 1")
    config = config or TrainConfig()
    if validation is None:
        train, validation = split(dataset, 0.8, base_seed)
    else:
        train = dataset
    if human is not None and len(human) != len(validation):
        raise DataError(f"{len(human)} human rows for {len(validation)} validation stimuli")

    tasks = [(k, rep) for k in k_values for rep in range(replications)]

    def run(task):
        k, rep = task
        seed = base_seed + rep
        run_id = f"k{k}-r{rep}"
        run_spec = replace(spec, head="mixture", k=k, covariance="identity")
        try:
            _, _, metrics = train_run(run_spec, train, validation, replace(config, seed=seed), human, run_id)
            return metrics
        except (DeepCatError, FloatingPointError) as exc:
            logger.warning("sweep run %s failed: %s", run_id, exc)
            return RunMetrics(run_id, seed, "mixture", "identity", k, spec.logit_mode, config.epochs, None, None, [], str(exc))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]
    return results


def summarize_sweep(metrics) -> list[dict]:
    """Per-K mean/min/max validation accuracy and mean human fit over successful runs."""
    rows = []
    for k in sorted({m.K for m in metrics}):
        runs = [m for m in metrics if m.K == k]
        ok = [m for m in runs if m.error is None]
        accs = [m.validation_accuracy for m in ok]
        fits = [m.human_crossentropy for m in ok if m.human_crossentropy is not None]
        rows.append(
            {
                "K": k,
                "runs": len(runs),
                "failed": len(runs) - len(ok),
                "mean_accuracy": float(np.mean(accs)) if accs else math.nan,
                "min_accuracy": float(np.min(accs)) if accs else math.nan,
                "max_accuracy": float(np.max(accs)) if accs else math.nan,
                "mean_human_fit": float(np.mean(fits)) if fits else math.nan,
            }
        )
    return rows


def format_summary(rows) -> str:
    header = f"{'K':>6} {'runs':>5} {'failed':>6} {'mean_acc':>9} {'min_acc':>8} {'max_acc':>8} {'human_fit':>10}"
    lines = [header]
    for r in rows:
        lines.append(
            f"{r['K']:>6d} {r['runs']:>5d} {r['failed']:>6d} {r['mean_accuracy']:>9.4f} "
            f"{r['min_accuracy']:>8.4f} {r['max_accuracy']:>8.4f} {r['mean_human_fit']:>10.4f}"
        )
    return "\n".join(lines) + "\n"


# --- embeddings -----------------------------------------------------------------


def export_embeddings(net, head, dataset: LabeledDataset, sample: int, seed: int, path):
    """Write features of ``sample`` random stimuli plus every center as CSV.

    Columns are ``tag,class,index,f0..f{D-1}``.  Stimulus rows carry the
    dataset row as index; center rows carry the center ordinal within its
    class.  Projection (t-SNE etc.) is left to external tools.
    """
    if not 0 <= sample <= len(dataset):
        raise DataError(f"cannot sample {sample} of {len(dataset)} stimuli")
    rows = np.sort(np.random.default_rng(seed).choice(len(dataset), size=sample, replace=False))
    with ad.no_grad():
        feats = net.forward(dataset.inputs[rows]).data if sample else np.zeros((0, net.feature_dim))
    buf = io.StringIO()
    dim = net.feature_dim
    buf.write(",".join(["tag", "class", "index"] + [f"f{j}" for j in range(dim)]) + "\n")
    for r, f in zip(rows, feats):
        buf.write(",".join(["stim", str(int(dataset.labels[r])), str(int(r))] + [repr(float(v)) for v in f]) + "\n")
    if head.centers is not None:
        for c in range(head.n_classes):
            for k in range(int(head.counts[c])):
                values = head.centers.data[c, k]
                buf.write(",".join(["center", str(c), str(k)] + [repr(float(v)) for v in values]) + "\n")
    atomic_write(path, buf.getvalue())
