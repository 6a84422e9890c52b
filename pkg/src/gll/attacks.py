"""Adversarial attacks against either classification head, and PGD training.

FGSM takes one signed-gradient step of size eps and clamps to the input box;
IFGSM iterates smaller steps with per-iterate projection onto the
intersection of the eps-ball and the box; the Carlini-Wagner attack solves
the penalised minimum-distortion problem in tanh reparametrisation with
Adam. Attacks against the graph head differentiate through the joint graph
over the attacked batch and the labeled anchor rows, rebuilding the graph at
every gradient step since the features move.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .backprop import gll_backward
from .graph import build_graph
from .nn import cross_entropy, pgd_perturb, softmax
from .solvers import LabelData, solve_laplace

__all__ = [
    "AttackConfig",
    "AttackResult",
    "SoftmaxAttackModel",
    "GllAttackModel",
    "fgsm",
    "ifgsm",
    "cw_attack",
    "pgd_train_step",
    "attack_sweep",
    "run_attack",
    "dump_examples",
]


@dataclass(frozen=True)
class AttackConfig:
    """One attack instance. kind selects which parameters apply:
    fgsm(eps), ifgsm(eps, alpha, n_iter), cw(c, iters, lr); lo/hi is the
    valid input box."""

    kind: str
    eps: float = 0.0
    alpha: float = 0.05
    n_iter: Optional[int] = None  # ifgsm default: ceil(5 eps / alpha)
    c: float = 0.0
    iters: int = 100
    lr: float = 0.005
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.eps < 0 or self.c < 0:
            raise ValueError("attack strengths must be nonnegative")
        if self.alpha <= 0:
            raise ValueError("step size alpha must be positive")
        if self.n_iter is not None and self.n_iter < 1:
            raise ValueError("n_iter must be at least 1")
        if self.lo >= self.hi:
            raise ValueError("input box must satisfy lo < hi")


@dataclass
class AttackResult:
    adversarial: np.ndarray
    success: np.ndarray  # fooled w.r.t. the true label (CW: reached its target)
    linf: np.ndarray
    l2: np.ndarray
    clean_pred: np.ndarray
    attacked_pred: np.ndarray


class SoftmaxAttackModel:
    """Encoder + linear projection + softmax, exposing input gradients."""

    def __init__(self, encoder, projection):
        self.encoder = encoder
        self.projection = projection

    @property
    def n_classes(self):
        return self.projection.sizes[-1]

    def _scores(self, x):
        feats, ecache = self.encoder.forward(x)
        scores, pcache = self.projection.forward(feats)
        return scores, (ecache, pcache)

    def _input_grad(self, caches, grad_scores):
        ecache, pcache = caches
        _, grad_feats = self.projection.backward(pcache, grad_scores)
        _, grad_x = self.encoder.backward(ecache, grad_feats)
        return grad_x

    def predict_proba(self, x):
        scores, _ = self._scores(x)
        return softmax(scores)

    def loss_and_input_grad(self, x, y):
        scores, caches = self._scores(x)
        loss, grad_scores = cross_entropy(scores, y)
        return loss, self._input_grad(caches, grad_scores)

    def weighted_proba_grad(self, x, row_weights):
        """(F, gradient of sum(row_weights * F) with respect to x).
        row_weights may be a callable of F, evaluated after the forward."""
        scores, caches = self._scores(x)
        F = softmax(scores)
        R = row_weights(F) if callable(row_weights) else row_weights
        inner = np.sum(R * F, axis=1, keepdims=True)
        upstream = F * (R - inner)
        return F, self._input_grad(caches, upstream)


class GllAttackModel:
    """Graph head over [batch; anchors]: anchor rows are the labeled nodes,
    only batch rows are attacked. The graph is rebuilt for every call."""

    def __init__(self, encoder, anchor_x, anchor_y, n_classes, k,
                 tau=0.0, bandwidth=None, tol=1e-10, max_iter=None):
        self.encoder = encoder
        self.anchor_x = np.asarray(anchor_x, dtype=np.float64)
        self.anchor_y = np.asarray(anchor_y, dtype=np.int64)
        self.n_classes = int(n_classes)
        self.k = int(k)
        self.tau = tau
        self.bandwidth = bandwidth
        self.tol = tol
        self.max_iter = max_iter

    def _solve(self, x):
        joint = np.vstack([x, self.anchor_x])
        feats, ecache = self.encoder.forward(joint)
        base_idx = np.arange(len(x), len(joint))
        labels = LabelData.from_labels(base_idx, self.anchor_y, self.n_classes)
        graph = build_graph(feats, self.k, bandwidth=self.bandwidth)
        sol = solve_laplace(graph, labels, tau=self.tau, tol=self.tol,
                            max_iter=self.max_iter)
        return feats, ecache, graph, labels, sol

    def _input_grad(self, x, feats, ecache, graph, labels, sol, upstream_u):
        bundle = gll_backward(graph, feats, sol, upstream_u, labels,
                              tau=self.tau, tol=self.tol, max_iter=self.max_iter)
        _, grad_joint = self.encoder.backward(ecache, bundle.grad_x)
        return grad_joint[: len(x)]

    def predict_proba(self, x):
        *_, sol = self._solve(x)
        return softmax(sol.u[: len(x)])

    def loss_and_input_grad(self, x, y):
        feats, ecache, graph, labels, sol = self._solve(x)
        loss, grad_u = cross_entropy(sol.u, np.concatenate([y, self.anchor_y]),
                                     include=np.arange(len(x)))
        return loss, self._input_grad(x, feats, ecache, graph, labels, sol, grad_u)

    def weighted_proba_grad(self, x, row_weights):
        feats, ecache, graph, labels, sol = self._solve(x)
        F = softmax(sol.u[: len(x)])
        R = row_weights(F) if callable(row_weights) else row_weights
        inner = np.sum(R * F, axis=1, keepdims=True)
        upstream = np.zeros_like(sol.u)
        upstream[: len(x)] = F * (R - inner)
        return F, self._input_grad(x, feats, ecache, graph, labels, sol, upstream)


def _result(model, x, adv, y, cw_target=None):
    delta = adv - x
    clean_pred = np.argmax(model.predict_proba(x), axis=1)
    attacked_pred = np.argmax(model.predict_proba(adv), axis=1)
    if cw_target is None:
        success = attacked_pred != np.asarray(y)
    else:
        success = attacked_pred == cw_target
    return AttackResult(
        adversarial=adv,
        success=success,
        linf=np.max(np.abs(delta), axis=1),
        l2=np.linalg.norm(delta, axis=1),
        clean_pred=clean_pred,
        attacked_pred=attacked_pred,
    )


def fgsm(model, x, y, eps, lo=0.0, hi=1.0) -> AttackResult:
    """One signed-gradient ascent step on the loss, clamped to [lo, hi]."""
    x = np.asarray(x, dtype=np.float64)
    _, grad = model.loss_and_input_grad(x, y)
    adv = np.clip(x + eps * np.sign(grad), lo, hi)
    return _result(model, x, adv, y)


def _clip_ball(z, x, eps, lo, hi):
    return np.clip(z, np.maximum(lo, x - eps), np.minimum(hi, x + eps))


def ifgsm(model, x, y, eps, alpha, n_iter=None, lo=0.0, hi=1.0) -> AttackResult:
    """Iterated FGSM with per-iterate projection onto the eps-ball and the
    input box. Default iteration count is ceil(5 eps / alpha)."""
    x = np.asarray(x, dtype=np.float64)
    if n_iter is None:
        n_iter = int(math.ceil(5.0 * eps / alpha)) if eps > 0 else 0
    adv = x.copy()
    for _ in range(n_iter):
        _, grad = model.loss_and_input_grad(adv, y)
        adv = _clip_ball(adv + alpha * np.sign(grad), x, eps, lo, hi)
    return _result(model, x, adv, y)


def cw_attack(model, x, c, iters=100, lr=0.005, lo=0.0, hi=1.0,
              kappa=1e-6, refine_iters=25) -> AttackResult:
    """Carlini-Wagner L2 attack in tanh reparametrisation.

    Targets the second most probable class of the clean prediction and
    minimises ||delta||^2 + c * (max_{i != t} F_i - F_t)^+ with Adam,
    keeping the best iterate by objective value. Successful examples are
    then refined by bisecting toward the clean input for the smallest
    perturbation along the found direction that still reaches the target.
    Success means the returned point is classified as the target.
    """
    x = np.asarray(x, dtype=np.float64)
    B = len(x)
    F0 = model.predict_proba(x)
    clean_pred = np.argmax(F0, axis=1)
    masked = F0.copy()
    masked[np.arange(B), clean_pred] = -np.inf
    target = np.argmax(masked, axis=1)

    span = hi - lo
    unit = (np.clip(x, lo + kappa, hi - kappa) - lo) / span
    w = np.arctanh(2.0 * unit - 1.0)

    def to_input(wv):
        return lo + span * 0.5 * (np.tanh(wv) + 1.0)

    def margin_weights(Fp):
        other = Fp.copy()
        other[np.arange(B), target] = -np.inf
        runner = np.argmax(other, axis=1)
        margin = Fp[np.arange(B), runner] - Fp[np.arange(B), target]
        R = np.zeros_like(Fp)
        R[np.arange(B), runner] = 1.0
        R[np.arange(B), target] -= 1.0
        R[margin <= 0.0] = 0.0
        return R

    def margin_and_grad(xp):
        Fp, grad = model.weighted_proba_grad(xp, margin_weights)
        other = Fp.copy()
        other[np.arange(B), target] = -np.inf
        margin = np.max(other, axis=1) - Fp[np.arange(B), target]
        return np.maximum(margin, 0.0), grad

    # Adam state over w
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    best_obj = np.full(B, np.inf)
    best_adv = x.copy()

    for t in range(iters + 1):
        xp = to_input(w)
        delta = xp - x
        dist = np.sum(delta * delta, axis=1)
        g_margin, g_grad = margin_and_grad(xp)
        obj = dist + c * g_margin
        better = obj < best_obj
        best_obj[better] = obj[better]
        best_adv[better] = xp[better]
        if t == iters:
            break
        grad_xp = 2.0 * delta + c * g_grad
        grad_w = grad_xp * (span * 0.5) * (1.0 - np.tanh(w) ** 2)
        m = 0.9 * m + 0.1 * grad_w
        v = 0.999 * v + 0.001 * grad_w * grad_w
        mhat = m / (1.0 - 0.9 ** (t + 1))
        vhat = v / (1.0 - 0.999 ** (t + 1))
        w = w - lr * mhat / (np.sqrt(vhat) + 1e-8)

    if refine_iters:
        hit = np.argmax(model.predict_proba(best_adv), axis=1) == target
        low = np.zeros(B)  # scale of the smallest failing step
        high = np.ones(B)  # smallest known succeeding step
        for _ in range(refine_iters):
            mid = np.where(hit, 0.5 * (low + high), 1.0)
            trial = x + mid[:, None] * (best_adv - x)
            good = np.argmax(model.predict_proba(trial), axis=1) == target
            shrink = hit & good
            high[shrink] = mid[shrink]
            low[hit & ~good] = mid[hit & ~good]
        scale = np.where(hit, high, 1.0)
        best_adv = x + scale[:, None] * (best_adv - x)

    return _result(model, x, best_adv, None, cw_target=target)


def pgd_train_step(model, x, y, base_idx, eps, alpha, iters, rng,
                   lo=0.0, hi=1.0):
    """One adversarial-training step: uniform random start in the eps-box,
    IFGSM on the training loss, then the usual loss/parameter gradients on
    the perturbed batch. Returns (loss, gradients, parameters)."""
    adv = pgd_perturb(model, np.asarray(x, dtype=np.float64), y, base_idx,
                      eps, alpha, iters, rng, lo=lo, hi=hi)
    loss, _, grads, params = model.loss_probs_param_grads(adv, y, base_idx)
    return loss, grads, params


def run_attack(model, x, y, cfg: AttackConfig) -> AttackResult:
    if cfg.kind == "fgsm":
        return fgsm(model, x, y, cfg.eps, lo=cfg.lo, hi=cfg.hi)
    if cfg.kind == "ifgsm":
        return ifgsm(model, x, y, cfg.eps, cfg.alpha, n_iter=cfg.n_iter,
                     lo=cfg.lo, hi=cfg.hi)
    if cfg.kind == "cw":
        return cw_attack(model, x, cfg.c, iters=cfg.iters, lr=cfg.lr,
                         lo=cfg.lo, hi=cfg.hi)
    raise ValueError(f"unknown attack kind {cfg.kind!r}")


def attack_sweep(model, x, y, configs, dump_dir=None, seed=None):
    """Accuracy curve over a grid of attack strengths.

    Returns rows of (attack, param, accuracy, mean_l2_sq_distance); param is
    eps for the gradient-sign attacks and c for CW. Optionally dumps each
    adversarial batch next to a JSON sidecar.
    """
    y = np.asarray(y, dtype=np.int64)
    rows = []
    for cfg in configs:
        res = run_attack(model, x, y, cfg)
        acc = float(np.mean(np.argmax(model.predict_proba(res.adversarial), axis=1) == y))
        param = cfg.c if cfg.kind == "cw" else cfg.eps
        rows.append(
            {
                "attack": cfg.kind,
                "param": param,
                "accuracy": acc,
                "mean_l2_sq_distance": float(np.mean(res.l2**2)),
            }
        )
        if dump_dir is not None:
            tag = f"{cfg.kind}_{param:g}"
            dump_examples(dump_dir, tag, res.adversarial,
                          {"attack": cfg.kind, "param": param, "seed": seed})
    return rows


def dump_examples(out_dir, tag, adversarial, meta):
    """Raw little-endian float64 tensor plus JSON sidecar (shape and attack
    parameters)."""
    import os

    data_path = os.path.join(out_dir, f"adv_{tag}.f64")
    with open(data_path, "wb") as f:
        f.write(np.ascontiguousarray(adversarial, dtype="<f8").tobytes())
    sidecar = dict(meta)
    sidecar["shape"] = list(adversarial.shape)
    sidecar["dtype"] = "<f8"
    with open(data_path + ".json", "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")
