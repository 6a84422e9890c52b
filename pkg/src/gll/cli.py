"""Experiment driver: dataset generation, gradient checks, training runs,
tau-ablation embedding dumps, and adversarial-attack sweeps.

Every command is reproducible bit for bit given (config, seed): all
randomness is seeded, CSV floats are written in shortest round-trip form,
and the SVG plots carry no timestamps. A lock file in the output directory
prevents concurrent runs from clobbering each other's artifacts.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from .attacks import AttackConfig, GllAttackModel, SoftmaxAttackModel, attack_sweep
from .backprop import gll_backward
from .config import RunConfig, parse_config
from .datasets import gen_two_moons, load_idx
from .errors import ConfigError
from .graph import build_graph, connected_components, rebuild_weights
from .nn import (
    TrainConfig,
    intra_class_mean_distance,
    save_checkpoint,
    select_base,
    train,
)
from .solvers import LabelData, PhiSpec, solve_laplace, solve_plaplace
from .svg import scatter_svg

# epoch checkpoints of the ablation grid, rescaled to the configured budget
_ABLATION_CHECKPOINT_GEOMETRY = (0, 500, 2000, 10000, 50000, 150000)
_ABLATION_GEOMETRY_SPAN = 150000


class OutputLock:
    def __init__(self, out_dir):
        self.path = os.path.join(out_dir, ".lock")
        self.fd = None

    def __enter__(self):
        os.makedirs(os.path.dirname(self.path), exist_ok=True)
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise SystemExit(
                f"output directory is locked by another run ({self.path}); "
                "remove the lock file if that run is dead"
            )
        os.write(self.fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        if self.fd is not None:
            os.close(self.fd)
            os.unlink(self.path)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def load_dataset(cfg: RunConfig):
    """(X_train, y_train, X_test, y_test) per the dataset block; the test
    split may be empty."""
    d = cfg.dataset
    if d.kind == "two_moons":
        total = d.n + d.test_n
        X, y = gen_two_moons(total, noise=d.noise, seed=cfg.seed)
        return X[: d.n], y[: d.n], X[d.n :], y[d.n :]
    images, labels = load_idx(d.images, d.labels)
    X = images.reshape(len(images), -1)
    y = labels
    if d.subset:
        X, y = X[: d.subset], y[: d.subset]
    X_test = np.zeros((0, X.shape[1]))
    y_test = np.zeros(0, dtype=np.int64)
    if d.test_images:
        timages, tlabels = load_idx(d.test_images, d.test_labels)
        X_test = timages.reshape(len(timages), -1)
        y_test = tlabels
        if d.test_subset:
            X_test, y_test = X_test[: d.test_subset], y_test[: d.test_subset]
    return X, y, X_test, y_test


def make_train_config(cfg: RunConfig, in_dim, **overrides) -> TrainConfig:
    t = cfg.train
    kwargs = dict(
        layer_sizes=cfg.encoder_sizes(in_dim),
        epochs=t.epochs,
        batch_size=t.batch_size,
        base_per_batch=t.base_per_batch,
        k=cfg.model.k,
        tau=cfg.model.tau,
        bandwidth=cfg.model.bandwidth,
        head=cfg.model.head,
        switch_to_gll_at=t.switch_to_gll_at,
        base_mode=t.base_mode,
        optimizer=t.optimizer,
        lr=t.lr,
        momentum=t.momentum,
        lr_decay=t.lr_decay,
        lr_decay_every=t.lr_decay_every,
        seed=cfg.seed,
        solver_tol=cfg.solver.tol,
        solver_max_iter=cfg.solver.max_iter or None,
        eval_ratio=t.eval_ratio,
        eval_every=t.eval_every,
        target_accuracy=t.target_accuracy,
        pgd_eps=t.pgd_eps,
        pgd_alpha=t.pgd_alpha,
        pgd_iters=t.pgd_iters,
        pgd_lo=t.pgd_lo,
        pgd_hi=t.pgd_hi,
    )
    kwargs.update(overrides)
    return TrainConfig(**kwargs)


# ---------------------------------------------------------------------------
# gen-data


def cmd_gen_data(cfg: RunConfig, quiet):
    if cfg.dataset.kind != "two_moons":
        raise ConfigError("gen-data generates two_moons datasets only")
    X, y, X_test, y_test = load_dataset(cfg)
    out = cfg.out_dir
    write_csv(
        os.path.join(out, "train.csv"),
        ["x0", "x1", "label"],
        [(X[i, 0], X[i, 1], int(y[i])) for i in range(len(X))],
    )
    if len(X_test):
        write_csv(
            os.path.join(out, "test.csv"),
            ["x0", "x1", "label"],
            [(X_test[i, 0], X_test[i, 1], int(y_test[i])) for i in range(len(X_test))],
        )
    scatter_svg(os.path.join(out, "train.svg"), X, y, title="two moons")
    if not quiet:
        print(f"wrote {len(X)} train / {len(X_test)} test rows to {out}")
    return 0


# ---------------------------------------------------------------------------
# gradcheck


def _forward_loss(g, labels, upstream, tau, phi):
    if phi.is_linear:
        sol = solve_laplace(g, labels, tau=tau, tol=1e-13)
    else:
        sol = solve_plaplace(g, labels, p=phi.p, tau=tau, tol=1e-13, outer_tol=1e-12)
    return float(np.sum(sol.u * upstream)), sol


def _gradcheck_instance(rng, cfg, inst, rows):
    n = int(rng.choice([15, 30]))
    d = int(rng.choice([2, 5]))
    k = int(rng.choice([3, 5]))
    C = int(rng.choice([2, 3]))
    tau = float(rng.choice([0.0, cfg.solver.tau or 0.1]))
    phi = (
        PhiSpec.plaplace(cfg.solver.p)
        if cfg.solver.mode == "plaplace"
        else PhiSpec.plaplace(2.0)
    )
    if not phi.is_linear and tau == 0.0:
        tau = 0.1  # keep the nonlinear adjoint solvable
    while True:
        X = rng.standard_normal((n, d))
        g = build_graph(X, k)
        if connected_components(g)[1] == 1:
            break
    m = C + 2
    idx = np.sort(rng.choice(n, size=m, replace=False))
    labels = LabelData.from_labels(idx, rng.integers(0, C, m), n_classes=C)
    upstream = rng.standard_normal((n, C))
    _, sol = _forward_loss(g, labels, upstream, tau, phi)
    bundle = gll_backward(g, X, sol, upstream, labels, phi=phi, tau=tau, tol=1e-13)
    h = cfg.gradcheck.h

    def fd_pair(loss_plus, loss_minus):
        return (loss_plus - loss_minus) / (2.0 * h)

    # features
    for i in range(n):
        for t in range(d):
            Xp = X.copy()
            Xp[i, t] += h
            plus, _ = _forward_loss(rebuild_weights(g, Xp), labels, upstream, tau, phi)
            Xp[i, t] -= 2 * h
            minus, _ = _forward_loss(rebuild_weights(g, Xp), labels, upstream, tau, phi)
            rows.append((f"inst{inst}.x[{i},{t}]", bundle.grad_x[i, t], fd_pair(plus, minus)))
    # source term
    unl = np.setdiff1d(np.arange(n), idx)
    for a, node in enumerate(unl):
        for c in range(C):
            f = np.zeros((n, C))
            f[node, c] = 1.0
            plus, _ = _forward_loss_with_source(g, labels, upstream, tau, phi, h * f)
            minus, _ = _forward_loss_with_source(g, labels, upstream, tau, phi, -h * f)
            rows.append((f"inst{inst}.f[{node},{c}]", bundle.grad_f[a, c], fd_pair(plus, minus)))
    # boundary values
    for a in range(m):
        for c in range(C):
            vals = labels.values.copy()
            vals[a, c] += h
            plus, _ = _forward_loss(g, LabelData(idx, vals), upstream, tau, phi)
            vals[a, c] -= 2 * h
            minus, _ = _forward_loss(g, LabelData(idx, vals), upstream, tau, phi)
            rows.append((f"inst{inst}.g[{a},{c}]", bundle.grad_g[a, c], fd_pair(plus, minus)))


def _forward_loss_with_source(g, labels, upstream, tau, phi, source):
    if not phi.is_linear:
        raise ConfigError("gradcheck source perturbations require solver.mode=laplace")
    sol = solve_laplace(g, labels, tau=tau, source=source, tol=1e-13)
    return float(np.sum(sol.u * upstream)), sol


def cmd_gradcheck(cfg: RunConfig, quiet):
    if cfg.solver.mode not in ("laplace", "plaplace"):
        raise ConfigError("gradcheck supports solver.mode laplace or plaplace")
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for inst in range(cfg.gradcheck.instances):
        _gradcheck_instance(rng, cfg, inst, rows)
    tol = cfg.gradcheck.tolerance
    out_rows = []
    failures = 0
    worst = 0.0
    for name, analytic, numeric in rows:
        if abs(analytic) >= 1e-3:
            err = abs(analytic - numeric) / abs(analytic)
            ok = err <= tol
        else:
            err = abs(analytic - numeric)
            ok = err <= 1e-7
        worst = max(worst, err if abs(analytic) >= 1e-3 else 0.0)
        failures += not ok
        out_rows.append((name, analytic, numeric, err))
    write_csv(
        os.path.join(cfg.out_dir, "gradcheck.csv"),
        ["parameter", "analytic", "numeric", "relative_error"],
        out_rows,
    )
    if not quiet:
        print(
            f"gradcheck: {len(out_rows)} comparisons, max relative error "
            f"{worst:.3e}, {failures} failures"
        )
    if failures:
        bad = [r for r in out_rows if (abs(r[1]) >= 1e-3 and r[3] > tol)
               or (abs(r[1]) < 1e-3 and r[3] > 1e-7)]
        for r in bad[:20]:
            print(f"FAIL {r[0]}: analytic={r[1]!r} numeric={r[2]!r} err={r[3]:.3e}",
                  file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# train


def _metrics_rows(metrics):
    return [
        (m.epoch, m.head, m.train_loss, m.train_acc, m.test_acc) for m in metrics
    ]


def cmd_train(cfg: RunConfig, quiet):
    X, y, X_test, y_test = load_dataset(cfg)
    tconf = make_train_config(cfg, X.shape[1])
    result = train(
        tconf, X, y,
        X_test if len(X_test) else None,
        y_test if len(y_test) else None,
    )
    out = cfg.out_dir
    write_csv(
        os.path.join(out, "metrics.csv"),
        ["epoch", "head", "train_loss", "train_acc", "test_acc"],
        _metrics_rows(result.metrics),
    )
    save_checkpoint(result.encoder, os.path.join(out, "model.bin"))
    if result.projection is not None:
        save_checkpoint(result.projection, os.path.join(out, "projection.bin"))
    if not quiet:
        last = result.metrics[-1]
        print(
            f"trained {last.epoch} epochs (head={last.head}); final train "
            f"acc {last.train_acc:.4f}, loss {last.train_loss:.6f}"
        )
    return 0


# ---------------------------------------------------------------------------
# tau ablation


def ablation_checkpoints(budget):
    scale = budget / _ABLATION_GEOMETRY_SPAN
    pts = sorted({int(round(e * scale)) for e in _ABLATION_CHECKPOINT_GEOMETRY})
    return [p for p in pts if p <= budget]


def cmd_tau_ablation(cfg: RunConfig, quiet):
    X, y, _, _ = load_dataset(cfg)
    out = cfg.out_dir
    checkpoints = ablation_checkpoints(cfg.ablation.epochs)
    emb_rows = []
    spread_rows = []
    base_idx = select_base(y, min(cfg.train.base_per_batch, len(y)), mode="fixed")
    is_base = np.zeros(len(y), dtype=bool)
    is_base[base_idx] = True

    def record(tag, snapshots):
        for epoch in sorted(snapshots):
            emb = snapshots[epoch]
            for i in range(len(y)):
                emb_rows.append(
                    (epoch, tag, i, emb[i, 0], emb[i, 1], int(y[i]), int(is_base[i]))
                )
            spread_rows.append((tag, epoch, intra_class_mean_distance(emb, y)))
            scatter_svg(
                os.path.join(out, f"embedding_tau{tag}_ep{epoch}.svg"),
                emb, y, starred=is_base, title=f"tau={tag} epoch={epoch}",
            )

    # the ablation pins the base set for the whole run so the stars are stable
    for tau in cfg.ablation.taus:
        tconf = make_train_config(
            cfg, X.shape[1], head="gll", tau=tau,
            epochs=cfg.ablation.epochs, base_mode="fixed",
        )
        result = train(tconf, X, y, snapshot_epochs=checkpoints)
        record(f"{tau:g}", result.snapshots)
        if not quiet:
            last = result.metrics[-1]
            print(f"tau={tau:g}: train acc {last.train_acc:.4f}")
    if cfg.ablation.include_softmax:
        tconf = make_train_config(
            cfg, X.shape[1], head="softmax", epochs=cfg.ablation.epochs,
            base_mode="fixed", record_gll_when_softmax=False,
        )
        result = train(tconf, X, y, snapshot_epochs=checkpoints)
        record("softmax", result.snapshots)
        if not quiet:
            last = result.metrics[-1]
            print(f"softmax baseline: train acc {last.train_acc:.4f}")

    write_csv(
        os.path.join(out, "embeddings.csv"),
        ["epoch", "tau", "node", "x0", "x1", "label", "is_base"],
        emb_rows,
    )
    write_csv(
        os.path.join(out, "cluster_spread.csv"),
        ["tau", "epoch", "intra_class_mean_distance"],
        spread_rows,
    )
    return 0


# ---------------------------------------------------------------------------
# attack


def _sweep_configs(cfg: RunConfig):
    configs = []
    a = cfg.attack
    for kind in [k.strip() for k in a.kinds.split(",") if k.strip()]:
        if kind in ("fgsm", "ifgsm"):
            for eps in a.eps_grid:
                configs.append(
                    AttackConfig(kind, eps=eps, alpha=a.alpha, lo=a.lo, hi=a.hi)
                )
        elif kind == "cw":
            for c in a.c_grid:
                configs.append(
                    AttackConfig(kind, c=c, iters=a.iters, lr=a.lr, lo=a.lo, hi=a.hi)
                )
        else:
            raise ConfigError(f"unknown attack kind {kind!r}")
    return configs


def cmd_attack(cfg: RunConfig, quiet):
    X, y, X_test, y_test = load_dataset(cfg)
    if not len(X_test):
        raise ConfigError("the attack command needs a test split (dataset.test_n)")
    out = cfg.out_dir
    n_classes = int(y.max()) + 1
    anchor_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    n_anchor = cfg.attack.anchors or len(X_test)
    anchor = select_base(y, min(n_anchor, len(y)), rng=anchor_rng, mode="resample")

    variants = [("gll_natural", "gll", 0.0), ("softmax_natural", "softmax", 0.0)]
    if cfg.train.pgd_eps > 0:
        variants += [
            ("gll_robust", "gll", cfg.train.pgd_eps),
            ("softmax_robust", "softmax", cfg.train.pgd_eps),
        ]
    configs = _sweep_configs(cfg)
    for name, head, pgd_eps in variants:
        tconf = make_train_config(cfg, X.shape[1], head=head, pgd_eps=pgd_eps,
                                  record_gll_when_softmax=False)
        result = train(tconf, X, y)
        if head == "gll":
            model = GllAttackModel(
                result.encoder, X[anchor], y[anchor], n_classes,
                k=cfg.model.k, tau=cfg.model.tau,
                bandwidth=cfg.model.bandwidth, tol=cfg.solver.tol,
                max_iter=cfg.solver.max_iter or None,
            )
        else:
            model = SoftmaxAttackModel(result.encoder, result.projection)
        dump_dir = None
        if cfg.attack.dump:
            dump_dir = os.path.join(out, f"dump_{name}")
            os.makedirs(dump_dir, exist_ok=True)
        rows = attack_sweep(model, X_test, y_test, configs,
                            dump_dir=dump_dir, seed=cfg.seed)
        write_csv(
            os.path.join(out, f"sweep_{name}.csv"),
            ["attack", "param", "accuracy", "mean_l2_sq_distance"],
            [(r["attack"], r["param"], r["accuracy"], r["mean_l2_sq_distance"])
             for r in rows],
        )
        if not quiet:
            worst = min(r["accuracy"] for r in rows)
            print(f"{name}: natural-to-worst accuracy "
                  f"{rows[0]['accuracy']:.4f} -> {worst:.4f}")
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gll",
        description="graph learning layer experiment driver",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("gen-data", "generate the two-moons dataset as CSV"),
        ("gradcheck", "finite-difference verification of the backward pass"),
        ("train", "train an encoder with the configured head"),
        ("tau-ablation", "embedding snapshots over the tau grid"),
        ("attack", "adversarial sweeps against trained models"),
    ]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="path to a key = value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
    return parser


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "gradcheck": cmd_gradcheck,
    "train": cmd_train,
    "tau-ablation": cmd_tau_ablation,
    "attack": cmd_attack,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["out_dir"] = os.path.abspath(args.out)
    if args.config:
        cfg = parse_config(args.config, overrides)
        if args.out is not None:
            cfg.out_dir = os.path.abspath(args.out)
    else:
        cfg = RunConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out_dir = os.path.abspath(args.out)
    os.makedirs(cfg.out_dir, exist_ok=True)
    with OutputLock(cfg.out_dir):
        try:
            return _COMMANDS[args.command](cfg, args.quiet)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2


if __name__ == "__main__":
    sys.exit(main())
