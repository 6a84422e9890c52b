"""Dense encoder with manual reverse-mode differentiation, the graph
propagation head, a softmax baseline head, and the training loop.

The encoder is a plain stack of affine layers with ReLU on all but the last.
The graph head has no trainable parameters: a batch's features become a
similarity graph, the labeled "base" rows act as boundary nodes, and the
propagated values feed a softmax cross-entropy. Its backward pass is the
exact adjoint chain from gll.backprop, so the whole network trains end to
end. All parameters and arithmetic are float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .backprop import gll_backward
from .graph import build_graph
from .solvers import LabelData, Solution, solve_laplace

__all__ = [
    "Mlp",
    "MlpCache",
    "Sgd",
    "Adam",
    "softmax",
    "cross_entropy",
    "gll_head_forward",
    "gll_head_backward",
    "base_scores",
    "select_base",
    "intra_class_mean_distance",
    "TrainConfig",
    "TrainStepModel",
    "pgd_perturb",
    "train",
    "save_checkpoint",
    "load_checkpoint",
]

_ACT_CODES = {"relu": 0, "identity": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}
_CHECKPOINT_MAGIC = b"GLLM"


@dataclass
class MlpCache:
    """Per-layer inputs and pre-activations saved by forward for backward."""

    inputs: list
    pre: list
    version: int


class Mlp:
    """Fully connected network; weights[l] has shape (fan_in, fan_out)."""

    def __init__(self, weights, biases, activations):
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.activations = list(activations)
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("layer lists disagree in length")
        for w, b in zip(self.weights, self.biases):
            if w.shape[1] != b.shape[0]:
                raise ValueError("bias shape does not match weight shape")
        for prev, nxt in zip(self.weights, self.weights[1:]):
            if prev.shape[1] != nxt.shape[0]:
                raise ValueError("layer shapes do not chain")
        self._version = 0

    @classmethod
    def create(cls, sizes, rng, out_activation="identity"):
        """Kaiming-uniform fan-in initialisation, zero biases; ReLU on all
        hidden layers."""
        weights, biases, acts = [], [], []
        for li, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
            acts.append("relu" if li < len(sizes) - 2 else out_activation)
        return cls(weights, biases, acts)

    @property
    def sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def bump_version(self):
        self._version += 1

    def forward(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != self.weights[0].shape[0]:
            raise ValueError(
                f"input dimension {X.shape[1]} does not match first layer "
                f"({self.weights[0].shape[0]})"
            )
        inputs, pre = [], []
        h = X
        for w, b, act in zip(self.weights, self.biases, self.activations):
            inputs.append(h)
            z = h @ w + b
            pre.append(z)
            h = np.maximum(z, 0.0) if act == "relu" else z
        return h, MlpCache(inputs=inputs, pre=pre, version=self._version)

    def backward(self, cache: MlpCache, grad_out):
        """Reverse-mode gradients. Returns (parameter gradients in
        parameters() order, gradient with respect to the input)."""
        if cache.version != self._version:
            raise RuntimeError("stale forward cache: parameters changed since forward")
        grad = np.asarray(grad_out, dtype=np.float64)
        param_grads = [None] * (2 * len(self.weights))
        for li in range(len(self.weights) - 1, -1, -1):
            if self.activations[li] == "relu":
                grad = grad * (cache.pre[li] > 0.0)
            param_grads[2 * li] = cache.inputs[li].T @ grad
            param_grads[2 * li + 1] = grad.sum(axis=0)
            grad = grad @ self.weights[li].T
        return param_grads, grad


class Sgd:
    """SGD with classical momentum."""

    def __init__(self, lr, momentum=0.0):
        self.lr = lr
        self.momentum = momentum
        self._velocity = None

    def step(self, params, grads):
        if self._velocity is None:
            self._velocity = [np.zeros_like(p) for p in params]
        for p, g, v in zip(params, grads, self._velocity):
            v *= self.momentum
            v += g
            p -= self.lr * v


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self._m = None
        self._v = None
        self._t = 0

    def step(self, params, grads):
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
        self._t += 1
        b1c = 1.0 - self.beta1**self._t
        b2c = 1.0 - self.beta2**self._t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def softmax(scores):
    s = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(scores, y, include=None):
    """Mean negative log-likelihood of softmax(scores) on the included rows.

    Returns (loss, gradient with respect to scores); rows outside `include`
    get zero gradient. `include` defaults to all rows.
    """
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = scores.shape[0]
    if include is None:
        mask = np.ones(n, dtype=bool)
    else:
        mask = np.zeros(n, dtype=bool)
        mask[include] = True
    count = int(mask.sum())
    if count == 0:
        return 0.0, np.zeros_like(scores)
    p = softmax(scores)
    rows = np.flatnonzero(mask)
    with np.errstate(divide="ignore"):  # exp-underflow -> inf loss -> divergence abort
        loss = -float(np.mean(np.log(p[rows, y[rows]])))
    grad = np.zeros_like(scores)
    grad[rows] = p[rows]
    grad[rows, y[rows]] -= 1.0
    grad /= count
    return loss, grad


# ---------------------------------------------------------------------------
# graph head


@dataclass
class GllHeadCache:
    graph: object
    labels: LabelData
    solution: Solution
    features: np.ndarray
    tau: float
    tol: float
    max_iter: Optional[int] = None


def gll_head_forward(
    features,
    base_indices,
    base_labels,
    n_classes,
    k,
    tau=0.0,
    bandwidth=None,
    tol=1e-10,
    max_iter=None,
):
    """Propagate base labels over the batch graph.

    Builds the similarity graph on the feature rows, solves the
    hard-constrained (tau-perturbed) Laplace problem with the base rows as
    boundary nodes, and returns (probabilities, cache). Probabilities are the
    row softmax of the propagated values.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = LabelData.from_labels(base_indices, base_labels, n_classes=n_classes)
    graph = build_graph(features, k, bandwidth=bandwidth)
    sol = solve_laplace(graph, labels, tau=tau, tol=tol, max_iter=max_iter)
    cache = GllHeadCache(
        graph=graph, labels=labels, solution=sol, features=features, tau=tau,
        tol=tol, max_iter=max_iter,
    )
    return softmax(sol.u), cache


def gll_head_backward(cache: GllHeadCache, upstream_u):
    """Exact gradient of the loss with respect to the head's input features,
    given dJ/du."""
    bundle = gll_backward(
        cache.graph,
        cache.features,
        cache.solution,
        upstream_u,
        cache.labels,
        tau=cache.tau,
        tol=cache.tol,
        max_iter=cache.max_iter,
    )
    return bundle.grad_x


# ---------------------------------------------------------------------------
# base-set selection


def base_scores(u, kind):
    """Per-node uncertainty scores of propagated values.

    entropy: -sum p log p of the row normalised to the simplex (clamped at
    1e-12); l2: 1 - ||u_row||_2. Higher means more uncertain.
    """
    u = np.asarray(u, dtype=np.float64)
    if kind == "entropy":
        p = np.clip(u, 1e-12, None)
        p = p / p.sum(axis=1, keepdims=True)
        return -np.sum(p * np.log(p), axis=1)
    if kind == "l2":
        return 1.0 - np.linalg.norm(u, axis=1)
    raise ValueError(f"unknown score kind {kind!r}")


def select_base(y, n_base, rng=None, mode="resample", scores=None):
    """Pick base (labeled) rows covering every class at least once.

    fixed: first occurrences per class in index order. resample: stratified
    uniform sample. entropy/l2: the highest-scoring rows, with the lowest
    scorers swapped out to restore any missing class.
    """
    y = np.asarray(y, dtype=np.int64)
    classes = np.unique(y)
    if n_base < len(classes):
        raise ValueError("need at least one base point per class")
    per = n_base // len(classes)
    extra = n_base - per * len(classes)
    chosen = []
    if mode in ("fixed", "resample"):
        for ci, c in enumerate(classes):
            pool = np.flatnonzero(y == c)
            take = per + (1 if ci < extra else 0)
            take = min(take, len(pool))
            if mode == "fixed":
                chosen.extend(pool[:take])
            else:
                chosen.extend(rng.choice(pool, size=take, replace=False))
    elif mode in ("entropy", "l2"):
        if scores is None:
            raise ValueError("score-based selection requires scores")
        order = np.argsort(-scores, kind="stable")
        picked = list(order[:n_base])
        for c in classes:
            if not np.any(y[picked] == c):
                pool = [i for i in order if y[i] == c]
                # drop the worst pick that leaves all covered classes intact
                for drop in reversed(picked):
                    if np.sum(y[picked] == y[drop]) > 1:
                        picked.remove(drop)
                        break
                else:
                    picked.pop()
                picked.append(pool[0])
        chosen = picked
    else:
        raise ValueError(f"unknown base selection mode {mode!r}")
    return np.sort(np.asarray(chosen, dtype=np.int64))


def intra_class_mean_distance(embedding, y):
    """Mean pairwise Euclidean distance within each class, averaged over
    classes (the clustering-tightness statistic of the ablation runs)."""
    embedding = np.asarray(embedding, dtype=np.float64)
    vals = []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        if len(idx) < 2:
            continue
        pts = embedding[idx]
        diff = pts[:, None, :] - pts[None, :, :]
        d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        iu = np.triu_indices(len(idx), k=1)
        vals.append(float(d[iu].mean()))
    return float(np.mean(vals)) if vals else 0.0


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    layer_sizes: list
    epochs: int = 1000
    batch_size: int = 0  # 0 = full batch
    base_per_batch: int = 10
    k: int = 10
    tau: float = 0.0
    bandwidth: Optional[float] = None  # None = self-tuning
    head: str = "gll"  # or "softmax"
    switch_to_gll_at: Optional[int] = None
    base_mode: str = "resample"  # fixed | resample | entropy | l2
    optimizer: str = "adam"
    lr: float = 0.01
    momentum: float = 0.9
    lr_decay: float = 1.0
    lr_decay_every: int = 0
    seed: int = 0
    solver_tol: float = 1e-10
    solver_max_iter: Optional[int] = None
    eval_ratio: float = 1.0
    eval_every: int = 1
    target_accuracy: Optional[float] = None
    record_gll_when_softmax: bool = True
    pgd_eps: float = 0.0
    pgd_alpha: float = 0.01
    pgd_iters: int = 5
    pgd_lo: float = 0.0
    pgd_hi: float = 1.0


@dataclass
class MetricsRow:
    epoch: int
    head: str
    train_loss: float
    train_acc: float
    test_acc: float


@dataclass
class TrainResult:
    encoder: Mlp
    projection: Optional[Mlp]
    metrics: list
    snapshots: dict = field(default_factory=dict)


class TrainStepModel:
    """Training-time model surface: loss, input gradients and parameter
    gradients for a batch with in-batch base rows. Used by the train loop and
    by PGD adversarial training."""

    def __init__(self, encoder, projection, head, n_classes, cfg: TrainConfig):
        self.encoder = encoder
        self.projection = projection
        self.head = head
        self.n_classes = n_classes
        self.cfg = cfg

    def _forward_loss(self, x, y, base_idx):
        feats, cache = self.encoder.forward(x)
        non_base = np.setdiff1d(np.arange(len(y)), base_idx)
        if self.head == "gll":
            probs, head_cache = gll_head_forward(
                feats,
                base_idx,
                y[base_idx],
                self.n_classes,
                self.cfg.k,
                tau=self.cfg.tau,
                bandwidth=self.cfg.bandwidth,
                tol=self.cfg.solver_tol,
                max_iter=self.cfg.solver_max_iter,
            )
            loss, grad_u = cross_entropy(head_cache.solution.u, y, include=non_base)
            return loss, probs, (cache, head_cache, grad_u, non_base)
        scores, pcache = self.projection.forward(feats)
        loss, grad_scores = cross_entropy(scores, y, include=non_base)
        return loss, softmax(scores), (cache, pcache, grad_scores, non_base)

    def loss_probs_input_grad(self, x, y, base_idx):
        loss, probs, ctx = self._forward_loss(x, y, base_idx)
        if self.head == "gll":
            cache, head_cache, grad_u, _ = ctx
            grad_feats = gll_head_backward(head_cache, grad_u)
            _, grad_x = self.encoder.backward(cache, grad_feats)
        else:
            cache, pcache, grad_scores, _ = ctx
            _, grad_feats = self.projection.backward(pcache, grad_scores)
            _, grad_x = self.encoder.backward(cache, grad_feats)
        return loss, probs, grad_x

    def loss_probs_param_grads(self, x, y, base_idx):
        loss, probs, ctx = self._forward_loss(x, y, base_idx)
        if self.head == "gll":
            cache, head_cache, grad_u, _ = ctx
            grad_feats = gll_head_backward(head_cache, grad_u)
            enc_grads, _ = self.encoder.backward(cache, grad_feats)
            return loss, probs, enc_grads, self.encoder.parameters()
        cache, pcache, grad_scores, _ = ctx
        proj_grads, grad_feats = self.projection.backward(pcache, grad_scores)
        enc_grads, _ = self.encoder.backward(cache, grad_feats)
        return (
            loss,
            probs,
            enc_grads + proj_grads,
            self.encoder.parameters() + self.projection.parameters(),
        )


def pgd_perturb(model, x, y, base_idx, eps, alpha, iters, rng, lo=0.0, hi=1.0):
    """Random start in the eps-box, then `iters` clipped signed-gradient
    ascent steps on the training loss."""
    if eps == 0.0:
        return x
    adv = x + rng.uniform(-eps, eps, size=x.shape)
    adv = np.clip(adv, np.maximum(lo, x - eps), np.minimum(hi, x + eps))
    for _ in range(iters):
        _, _, grad = model.loss_probs_input_grad(adv, y, base_idx)
        adv = adv + alpha * np.sign(grad)
        adv = np.clip(adv, np.maximum(lo, x - eps), np.minimum(hi, x + eps))
    return adv


def _evaluate(encoder, projection, head, cfg, n_classes, X_test, y_test, X_train, y_train, eval_rng):
    """Test accuracy; the graph head embeds the test rows jointly with a
    labeled sample of training rows."""
    if head == "softmax":
        feats, _ = encoder.forward(X_test)
        scores, _ = projection.forward(feats)
        return float(np.mean(np.argmax(scores, axis=1) == y_test))
    n_anchor = min(len(X_train), max(n_classes, int(round(cfg.eval_ratio * len(X_test)))))
    anchor = select_base(y_train, n_anchor, rng=eval_rng, mode="resample")
    joint = np.vstack([X_test, X_train[anchor]])
    joint_y = np.concatenate([y_test, y_train[anchor]])
    base_idx = np.arange(len(X_test), len(joint))
    feats, _ = encoder.forward(joint)
    probs, _ = gll_head_forward(
        feats,
        base_idx,
        joint_y[base_idx],
        n_classes,
        cfg.k,
        tau=cfg.tau,
        bandwidth=cfg.bandwidth,
        tol=cfg.solver_tol,
        max_iter=cfg.solver_max_iter,
    )
    pred = np.argmax(probs[: len(X_test)], axis=1)
    return float(np.mean(pred == y_test))


def _make_optimizer(cfg):
    if cfg.optimizer == "adam":
        return Adam(cfg.lr)
    if cfg.optimizer == "sgd":
        return Sgd(cfg.lr, momentum=cfg.momentum)
    raise ValueError(f"unknown optimizer {cfg.optimizer!r}")


def train(cfg: TrainConfig, X, y, X_test=None, y_test=None, encoder=None,
          snapshot_epochs=()) -> TrainResult:
    """Train the encoder under the configured head.

    Supports mid-run head switching (softmax -> gll at switch_to_gll_at,
    reusing the same encoder parameters), optional PGD adversarial training,
    per-epoch base re-selection, and embedding snapshots at the requested
    epochs. Deterministic for a fixed config and seed.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, n_classes = len(X), int(y.max()) + 1
    ss = np.random.SeedSequence(cfg.seed)
    rng, eval_rng, init_rng = (np.random.default_rng(s) for s in ss.spawn(3))

    if encoder is None:
        encoder = Mlp.create(cfg.layer_sizes, init_rng)
    projection = None
    needs_projection = cfg.head == "softmax"
    if needs_projection:
        projection = Mlp.create([cfg.layer_sizes[-1], n_classes], init_rng)

    head = cfg.head
    optimizer = _make_optimizer(cfg)
    batch_size = cfg.batch_size or n
    metrics = []
    snapshots = {}
    snapshot_epochs = set(snapshot_epochs)

    def take_snapshot(epoch):
        feats, _ = encoder.forward(X)
        snapshots[epoch] = feats.copy()

    if 0 in snapshot_epochs:
        take_snapshot(0)

    base_state = select_base(y, min(cfg.base_per_batch, n), rng=rng, mode="fixed")
    for epoch in range(1, cfg.epochs + 1):
        if head == "softmax" and cfg.switch_to_gll_at is not None and epoch > cfg.switch_to_gll_at:
            head = "gll"
            optimizer = _make_optimizer(cfg)  # fresh state for the new head
        if cfg.lr_decay_every > 0:
            decayed = cfg.lr * cfg.lr_decay ** ((epoch - 1) // cfg.lr_decay_every)
            optimizer.lr = decayed

        model = TrainStepModel(encoder, projection, head, n_classes, cfg)
        order = rng.permutation(n) if batch_size < n else np.arange(n)
        losses, correct, seen = [], 0, 0
        for start in range(0, n, batch_size):
            rows = order[start : start + batch_size]
            xb, yb = X[rows], y[rows]
            n_base = min(cfg.base_per_batch, len(rows))
            if cfg.base_mode in ("fixed", "resample"):
                base_idx = select_base(yb, n_base, rng=rng, mode=cfg.base_mode)
            else:
                # score the current propagation from the previous base set
                feats, _ = encoder.forward(xb)
                probe = base_state if len(rows) == n else select_base(
                    yb, n_base, rng=rng, mode="resample"
                )
                _, head_cache = gll_head_forward(
                    feats, probe, yb[probe], n_classes, cfg.k,
                    tau=cfg.tau, bandwidth=cfg.bandwidth, tol=cfg.solver_tol,
                    max_iter=cfg.solver_max_iter,
                )
                scores = base_scores(head_cache.solution.u, cfg.base_mode)
                scores[probe] = -np.inf  # keep the probe rows eligible only once
                base_idx = select_base(yb, n_base, mode=cfg.base_mode, scores=scores)
                if len(rows) == n:
                    base_state = base_idx
            if cfg.pgd_eps > 0.0:
                xb = pgd_perturb(
                    model, xb, yb, base_idx,
                    cfg.pgd_eps, cfg.pgd_alpha, cfg.pgd_iters, rng,
                    lo=cfg.pgd_lo, hi=cfg.pgd_hi,
                )
            loss, probs, grads, params = model.loss_probs_param_grads(xb, yb, base_idx)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"training diverged at epoch {epoch} (loss={loss}); "
                    "reduce the learning rate"
                )
            optimizer.step(params, grads)
            encoder.bump_version()
            if projection is not None:
                projection.bump_version()
            losses.append(loss)
            non_base = np.setdiff1d(np.arange(len(rows)), base_idx)
            pred = np.argmax(probs[non_base], axis=1)
            correct += int(np.sum(pred == yb[non_base]))
            seen += len(non_base)

        train_loss = float(np.mean(losses))
        train_acc = correct / max(seen, 1)
        do_eval = X_test is not None and (
            epoch % cfg.eval_every == 0 or epoch == cfg.epochs
        )
        test_acc = (
            _evaluate(encoder, projection, head, cfg, n_classes,
                      X_test, y_test, X, y, eval_rng)
            if do_eval
            else float("nan")
        )
        metrics.append(MetricsRow(epoch, head, train_loss, train_acc, test_acc))
        if head == "softmax" and cfg.record_gll_when_softmax:
            gll_loss, gll_acc, gll_test = _passive_gll_metrics(
                encoder, cfg, n_classes, X, y, X_test, y_test, rng, eval_rng,
                do_eval,
            )
            metrics.append(MetricsRow(epoch, "gll", gll_loss, gll_acc, gll_test))

        if epoch in snapshot_epochs:
            take_snapshot(epoch)
        if cfg.target_accuracy is not None and train_acc >= cfg.target_accuracy:
            break

    if snapshot_epochs and max(snapshot_epochs) > epoch and epoch not in snapshots:
        take_snapshot(epoch)
    return TrainResult(encoder=encoder, projection=projection, metrics=metrics,
                       snapshots=snapshots)


def _passive_gll_metrics(encoder, cfg, n_classes, X, y, X_test, y_test, rng, eval_rng, do_eval):
    """Graph-head loss/accuracy on the current encoder without training
    through it (recorded alongside softmax-head training)."""
    base_idx = select_base(y, min(cfg.base_per_batch, len(y)), rng=rng, mode="resample")
    feats, _ = encoder.forward(X)
    probs, head_cache = gll_head_forward(
        feats, base_idx, y[base_idx], n_classes, cfg.k,
        tau=cfg.tau, bandwidth=cfg.bandwidth, tol=cfg.solver_tol,
        max_iter=cfg.solver_max_iter,
    )
    non_base = np.setdiff1d(np.arange(len(y)), base_idx)
    loss, _ = cross_entropy(head_cache.solution.u, y, include=non_base)
    acc = float(np.mean(np.argmax(probs[non_base], axis=1) == y[non_base]))
    test_acc = (
        _evaluate(encoder, None, "gll", cfg, n_classes, X_test, y_test, X, y, eval_rng)
        if do_eval and X_test is not None
        else float("nan")
    )
    return loss, acc, test_acc


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(mlp: Mlp, path):
    """Flat binary checkpoint: magic GLLM, u32 version, u32 layer count L,
    u32 sizes[L+1], u8 activation codes[L], then the parameters as
    little-endian float64 (per layer: weight rows, then bias)."""
    sizes = mlp.sizes
    with open(path, "wb") as f:
        f.write(_CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", 1))
        f.write(struct.pack("<I", len(mlp.weights)))
        f.write(struct.pack(f"<{len(sizes)}I", *sizes))
        f.write(bytes(_ACT_CODES[a] for a in mlp.activations))
        for w, b in zip(mlp.weights, mlp.biases):
            f.write(w.astype("<f8").tobytes())
            f.write(b.astype("<f8").tobytes())


def load_checkpoint(path) -> Mlp:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != 1:
            raise ValueError(f"unsupported checkpoint version {version}")
        (nlayers,) = struct.unpack("<I", f.read(4))
        sizes = struct.unpack(f"<{nlayers + 1}I", f.read(4 * (nlayers + 1)))
        acts = [_ACT_NAMES[b] for b in f.read(nlayers)]
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            w = np.frombuffer(f.read(8 * fan_in * fan_out), dtype="<f8")
            weights.append(w.reshape(fan_in, fan_out).copy())
            biases.append(np.frombuffer(f.read(8 * fan_out), dtype="<f8").copy())
    return Mlp(weights, biases, acts)
