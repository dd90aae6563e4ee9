"""Finite-difference verification of every op and every head configuration."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import featurenet as fn
from .autodiff import Tensor, grad_check
from .heads import CategorizationHead, loss_onehot

STEP = 1e-4
TOLERANCE = 1e-5
KINK_MARGIN = 1e-2


@dataclass
class CaseResult:
    name: str
    max_rel_error: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<44s} max_rel_err={self.max_rel_error:.3e}"


def _uniform(rng, *shape):
    return Tensor(rng.uniform(-1.0, 1.0, shape))


def _away_from_zero(rng, *shape):
    x = rng.uniform(-1.0, 1.0, shape)
    return Tensor(np.where(np.abs(x) < KINK_MARGIN, np.sign(x + 0.5) * 0.5, x))


def _relu_margin(net, inputs) -> float:
    """Smallest |pre-activation| feeding any ReLU of ``net`` on ``inputs``."""
    trace = []
    with ad.no_grad():
        net.forward(inputs, trace=trace)
    pre = [t.data for t, layer in zip(trace, net.layers) if layer.kind == "relu"]
    return min((float(np.min(np.abs(p))) for p in pre), default=np.inf)


def _kink_free_inputs(net, rng, shape, tries=200):
    for _ in range(tries):
        x = rng.uniform(-1.0, 1.0, shape)
        if _relu_margin(net, x) > KINK_MARGIN:
            return x
    raise RuntimeError("could not draw inputs away from ReLU kinks")


def op_cases(rng):
    """(name, f, args) triples covering each differentiable op."""
    a23, b34 = _uniform(rng, 2, 3), _uniform(rng, 3, 4)
    v5 = _uniform(rng, 5)
    m34 = _uniform(rng, 3, 4)
    pos = Tensor(rng.uniform(0.5, 2.0, (3, 4)))
    img, ker = _uniform(rng, 2, 2, 6, 5), _uniform(rng, 3, 2, 3, 2)
    return [
        ("matmul", lambda a, b: (a @ b).square().sum(), [a23, b34]),
        ("add (broadcast)", lambda a, b: (a + b).square().sum(), [m34, _uniform(rng, 4)]),
        ("sub (broadcast)", lambda a, b: (a - b).square().sum(), [m34, _uniform(rng, 3, 1)]),
        ("mul (broadcast)", lambda a, b: (a * b).square().sum(), [m34, _uniform(rng, 1, 4)]),
        ("scale", lambda x: ad.scale(x, -2.5).square().sum(), [v5]),
        ("exp", lambda x: ad.exp(x).sum(), [m34]),
        ("log", lambda x: ad.log(x).square().sum(), [pos]),
        ("square", lambda x: x.square().sum(), [v5]),
        ("relu", lambda x: (ad.relu(x) * ad.relu(x)).sum() + ad.relu(x).sum(), [_away_from_zero(rng, 3, 4)]),
        ("conv2d stride 1", lambda x, k: ad.conv2d(x, k, 1).square().sum(), [img, ker]),
        ("conv2d stride 2", lambda x, k: ad.conv2d(x, k, 2).square().sum(), [img, ker]),
        ("sum axis", lambda x: x.sum(axis=1).square().sum(), [m34]),
        ("mean axis", lambda x: x.mean(axis=0).square().sum(), [m34]),
        ("max axis", lambda x: x.max(axis=1).square().sum(), [m34]),
        ("logsumexp", lambda x: ad.logsumexp(x, axis=1).square().sum(), [m34]),
        ("reshape", lambda x: (x.reshape(4, 3) @ Tensor(np.arange(3.0).reshape(3, 1))).square().sum(), [m34]),
    ]


def _model_loss(net, head, x, labels):
    def loss(*params):
        return loss_onehot(head.logits(net.forward(x)), labels)

    return loss


HEAD_CONFIGS = (
    [("baseline", {})]
    + [
        (f"prototype {cov} logdet={'on' if ld else 'off'}", {"kind": "prototype", "covariance": cov, "use_logdet": ld})
        for cov in ("identity", "class", "axis")
        for ld in (True, False)
    ]
    + [
        (f"mixture {mode} K={k}", {"kind": "mixture", "k": k, "logit_mode": mode})
        for mode in ("lse", "negsum")
        for k in (1, 3)
    ]
    + [("exemplar (uneven classes)", {"kind": "exemplar"})]
)


def head_cases(rng):
    """Full model losses (feature net -> head -> one-hot loss) on 4 random points."""
    cases = []
    n_classes, in_dim, dim = 3, 3, 4
    for name, kw in HEAD_CONFIGS:
        kw = dict(kw)
        kind = kw.pop("kind", "baseline")
        net = fn.build([fn.dense(in_dim, 5), fn.relu(), fn.dense(5, dim)], seed=int(rng.integers(1 << 30)))
        head = CategorizationHead(kind, n_classes, dim, seed=int(rng.integers(1 << 30)), **kw)
        x = _kink_free_inputs(net, rng, (4, in_dim))
        labels = np.array([0, 1, 2, 1])
        if kind == "exemplar":
            centers = rng.normal(size=(n_classes, 3, dim))
            head.set_centers(centers, np.array([2, 3, 1]))
        if head.log_var is not None:
            head.log_var.data = rng.uniform(-0.5, 0.5, head.log_var.shape)
        params = net.parameters() + head.parameters()
        cases.append((f"head: {name}", _model_loss(net, head, x, labels), params))

    conv = fn.build([fn.conv2d(1, 2, 3, 2), fn.relu(), fn.flatten(), fn.dense(2 * 2 * 2, dim)], 11, input_shape=(1, 5, 6))
    head = CategorizationHead("mixture", n_classes, dim, k=2, seed=12)
    x = _kink_free_inputs(conv, rng, (4, 1, 5, 6))
    cases.append(("featurenet: conv stack + mixture", _model_loss(conv, head, x, np.array([2, 0, 1, 0])), conv.parameters() + head.parameters()))
    return cases


def run_suite(seed: int = 0, step: float = STEP, tolerance: float = TOLERANCE) -> list[CaseResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, f, args in op_cases(rng) + head_cases(rng):
        report = grad_check(f, args, step=step, tolerance=tolerance)
        results.append(CaseResult(name, report.max_rel_error, report.passed))
    return results


def main(out=print) -> bool:
    start = time.perf_counter()
    results = run_suite()
    for r in results:
        out(r.line())
    failed = sum(not r.passed for r in results)
    out(f"{len(results) - failed}/{len(results)} cases passed in {time.perf_counter() - start:.1f}s")
    return failed == 0
