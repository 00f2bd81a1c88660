"""Command-line interface: ``tsa <command> [flags]``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as tsadata
from .circular import TWO_PI, nat_to_conv, vm_log_pdf
from .dft import dft_check
from .evaluation import METRICS, MODEL_METRICS, one_nn_error
from .inference import map_coupled, posterior_coupled, posterior_maximal
from .learning import TrainConfig, TrainingDiverged, estimate_weights, sgd_train, sort_by_abs_weight

log = logging.getLogger("tsa")


class UsageError(Exception):
    pass


def _write_csv(path, header, rows):
    """RFC 4180 subset with LF line endings; ``path=None`` writes to stdout."""
    fh = sys.stdout if path is None else open(path, "w", newline="")
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if path is not None:
            fh.close()


def _fmt(x):
    return repr(float(x))


def _require(path, flag):
    if path is None:
        raise UsageError(f"{flag} is required")
    if not Path(path).exists():
        raise UsageError(f"{flag}: no such file: {path}")
    return path


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_make_data(args):
    if args.kind == "patches":
        out = tsadata.gen_patch_pairs(args.seed, args.n, args.side)
    else:
        images = tsadata.load_idx(_require(args.mnist_images, "--mnist-images"))
        labels = tsadata.load_idx(_require(args.mnist_labels, "--mnist-labels"))
        if images.ndim != 3 or labels.ndim != 1 or len(images) != len(labels):
            raise UsageError("--mnist-images/--mnist-labels must be matching IDX image and label files")
        if args.n is not None:
            images, labels = images[:args.n], labels[:args.n]
        out = tsadata.build_rotated_mnist(images, labels, args.seed, args.side)
    tsadata.save_dataset(out, args.out)
    print(f"wrote {len(out)} items to {args.out}")


def cmd_train(args):
    pairs = tsadata.load_dataset(_require(args.data, "--data"))
    if not isinstance(pairs, tsadata.PairBatch):
        raise UsageError(f"{args.data} holds labeled images, not transformation pairs")
    if args.filters % 2:
        raise UsageError("--filters must be even (filters come in pairs)")
    init = tsadata.load_model(_require(args.init, "--init")).basis if args.init else None
    holdout = None
    if args.holdout:
        holdout = tsadata.load_dataset(_require(args.holdout, "--holdout"))
        if not isinstance(holdout, tsadata.PairBatch):
            raise UsageError("--holdout must hold transformation pairs")
    config = TrainConfig(J=args.filters // 2, alpha0=args.alpha0, minibatch=args.minibatch,
                         passes=args.passes, sigma=args.sigma, seed=args.seed,
                         start_pass=args.start_pass, eval_every=args.eval_every,
                         grad_check=args.grad_check)
    try:
        result = sgd_train(config, pairs, init=init, holdout=holdout)
    except TrainingDiverged as exc:
        dump = Path(args.out).with_suffix(".diverged.npz")
        np.savez(dump, **{k: np.asarray(v) for k, v in exc.state.items()})
        raise RuntimeError(f"{exc}; state written to {dump}") from exc
    tsadata.save_model(result.basis, args.out)
    log_path = args.log or str(Path(args.out).with_suffix(".log.csv"))
    _write_csv(log_path, ["step", "passes", "alpha", "mean_log_marginal"],
               [(r.step, r.passes, _fmt(r.alpha), _fmt(r.mean_log_marginal)) for r in result.log])
    print(f"wrote model {args.out} and log {log_path}")
    if holdout is not None:
        ck_path = args.checkpoints or str(Path(args.out).with_suffix(".heldout.csv"))
        _write_csv(ck_path, ["step", "heldout_mean_log_marginal"],
                   [(step, _fmt(v)) for step, v in result.checkpoints])
        print(f"wrote held-out checkpoints {ck_path}")


def cmd_estimate_weights(args):
    model = tsadata.load_model(_require(args.model, "--model"))
    basis = model.basis
    est = estimate_weights(basis, tsadata.rotate_columns, np.deg2rad(args.delta_deg),
                           n=args.n, seed=args.seed)
    model.basis = basis.with_omega(est.omega)
    tsadata.save_model(model, args.out or args.model)
    order = np.argsort(np.abs(est.omega), kind="stable")
    rows = [(j, int(est.omega[j]), _fmt(est.rates[j]), _fmt(est.precision[j]),
             "yes" if est.confident[j] else "LOW") for j in order]
    _write_csv(args.table, ["subspace", "omega", "rate", "precision", "confident"], rows)
    low = int(np.sum(~est.confident))
    if low:
        print(f"warning: {low} subspace(s) have low-confidence weights", file=sys.stderr)


def _load_vector(path):
    path = Path(path)
    return np.load(path).ravel() if path.suffix == ".npy" else np.loadtxt(path).ravel()


def cmd_infer(args):
    basis = tsadata.load_model(_require(args.model, "--model")).basis
    if args.data:
        ds = tsadata.load_dataset(args.data)
        if not isinstance(ds, tsadata.PairBatch):
            raise UsageError("--data must hold transformation pairs")
        x, y = ds.X[:, args.index], ds.Y[:, args.index]
    else:
        x = _load_vector(_require(args.x, "--x"))
        y = _load_vector(_require(args.y, "--y"))
    if x.shape != (basis.D,) or y.shape != (basis.D,):
        raise ValueError(f"dimension mismatch: model D={basis.D}, x has {x.size}, y has {y.size}")
    grid = np.arange(args.grid) * (TWO_PI / args.grid)
    summary = []
    if args.mode == "maximal":
        post = posterior_maximal(basis, x, y)
        rows = []
        for j in range(basis.J):
            dens = np.exp(vm_log_pdf(grid, post.eta[j]))
            rows += [(j, _fmt(a), _fmt(p)) for a, p in zip(grid, dens)]
            mu, kappa = nat_to_conv(post.eta[j])
            summary.append(f"subspace={j} mean={mu!r} precision={kappa!r}")
        header = ["subspace", "angle", "density"]
    else:
        post = posterior_coupled(basis, x, y)
        dens = np.exp(post.log_pdf(grid))
        rows = [(_fmt(a), _fmt(p)) for a, p in zip(grid, dens)]
        summary.append(f"map={map_coupled(post)!r}")
        for h, (mu, kappa) in enumerate(zip(post.mu_plus, post.kappa_plus), start=1):
            summary.append(f"harmonic={h} mean={float(mu)!r} precision={float(kappa)!r}")
        header = ["angle", "density"]
    _write_csv(args.out, header, rows)
    print("\n".join(summary), file=sys.stderr if args.out is None else sys.stdout)


def _load_labeled(path, flag, limit=None):
    ds = tsadata.load_dataset(_require(path, flag))
    if not isinstance(ds, tsadata.LabeledImages):
        raise UsageError(f"{flag} must hold labeled images")
    if limit is not None:
        if limit > len(ds):
            print(f"warning: {flag} limit {limit} exceeds {len(ds)} items; clamped",
                  file=sys.stderr)
            limit = len(ds)
        ds = tsadata.LabeledImages(ds.images[:limit], ds.labels[:limit])
    return ds


def cmd_knn_eval(args):
    metric_names = [m for group in args.metric for m in group.split(",")]
    for m in metric_names:
        if m not in METRICS:
            raise UsageError(f"unknown metric {m!r}; choose from {', '.join(METRICS)}")
    needs_model = MODEL_METRICS.intersection(metric_names)
    if needs_model and not args.model:
        raise UsageError(f"metric(s) {', '.join(sorted(needs_model))} need --model")
    basis = tsadata.load_model(args.model).basis if args.model else None
    train = _load_labeled(args.train, "--train", args.train_limit)
    test = _load_labeled(args.test, "--test", args.limit)
    rows = []
    for m in metric_names:
        err = one_nn_error(m, train, test, basis, self_exclude=args.self_exclude)
        rows.append((m, _fmt(err), len(train), len(test)))
    _write_csv(args.out, ["metric", "error_rate", "n_train", "n_test"], rows)


def filter_grid(basis, pairs_per_row=8, gap=1):
    """8-bit tiled image of the filters, pairs side by side, sorted by ``|omega|``."""
    side = int(round(np.sqrt(basis.D)))
    if side * side != basis.D:
        raise ValueError(f"filters of length {basis.D} are not square images")
    ordered, _ = sort_by_abs_weight(basis)
    J = ordered.J
    rows = -(-J // pairs_per_row)
    cols = 2 * min(J, pairs_per_row)
    H = rows * (side + gap) + gap
    Wd = cols * (side + gap) + gap
    canvas = np.full((H, Wd), 255, dtype=np.uint8)
    for k in range(2 * J):
        f = ordered.W[:, k].reshape(side, side)
        lo, hi = f.min(), f.max()
        tile = np.full(f.shape, 128.0) if hi - lo < 1e-15 else (f - lo) / (hi - lo) * 255.0
        r, c = divmod(k, cols)
        y0, x0 = gap + r * (side + gap), gap + c * (side + gap)
        canvas[y0:y0 + side, x0:x0 + side] = np.rint(tile).astype(np.uint8)
    return canvas


def write_pgm(path, img):
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def cmd_export_filters(args):
    basis = tsadata.load_model(_require(args.model, "--model")).basis
    write_pgm(args.out, filter_grid(basis, args.pairs_per_row))
    print(f"wrote {2 * basis.J} filter tiles to {args.out}")


def cmd_dft_check(args):
    rng = np.random.default_rng(args.seed)
    rows = []
    for D in args.D:
        x = rng.standard_normal(D)
        rep = dft_check(x)
        rows.append((D, _fmt(rep.max_kappa_dev), _fmt(rep.max_phase_dev)))
    _write_csv(None, ["D", "max_kappa_dev", "max_phase_dev"], rows)


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="tsa", description="Toroidal subgroup analysis")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("make-data", help="generate rotated patch pairs or rotated MNIST")
    s.add_argument("--kind", choices=["patches", "mnist-rot"], required=True)
    s.add_argument("--n", type=int, default=None)
    s.add_argument("--side", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--mnist-images")
    s.add_argument("--mnist-labels")
    s.set_defaults(func=cmd_make_data)

    s = sub.add_parser("train", help="learn a toroidal basis by SGD")
    s.add_argument("--data", required=True)
    s.add_argument("--filters", type=int, default=100, help="number of filters (2J)")
    s.add_argument("--sigma", type=float, default=1.0)
    s.add_argument("--alpha0", type=float, default=0.25)
    s.add_argument("--minibatch", type=int, default=100)
    s.add_argument("--passes", type=int, default=1)
    s.add_argument("--start-pass", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--init", help="resume from this model file")
    s.add_argument("--grad-check", action="store_true")
    s.add_argument("--holdout", help="pair dataset scored at checkpoints")
    s.add_argument("--eval-every", type=int, default=50, help="minibatches between checkpoints")
    s.add_argument("--out", required=True)
    s.add_argument("--log")
    s.add_argument("--checkpoints", help="held-out CSV path")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("estimate-weights", help="estimate integer weights by small rotations")
    s.add_argument("--model", required=True)
    s.add_argument("--delta-deg", type=float, default=0.1)
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="updated model path (default: overwrite --model)")
    s.add_argument("--table", help="CSV path for the weight table (default: stdout)")
    s.set_defaults(func=cmd_estimate_weights)

    s = sub.add_parser("infer", help="posterior over the transformation of a pair")
    s.add_argument("--model", required=True)
    s.add_argument("--x")
    s.add_argument("--y")
    s.add_argument("--data")
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--mode", choices=["maximal", "coupled"], default="coupled")
    s.add_argument("--grid", type=int, default=1024)
    s.add_argument("--out")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("knn-eval", help="1-NN error rates")
    s.add_argument("--model")
    s.add_argument("--train", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--metric", action="append", required=True)
    s.add_argument("--limit", type=int, help="use the first N test items")
    s.add_argument("--train-limit", type=int)
    s.add_argument("--self-exclude", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_knn_eval)

    s = sub.add_parser("export-filters", help="render filters as a PGM grid")
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--pairs-per-row", type=int, default=8)
    s.set_defaults(func=cmd_export_filters)

    s = sub.add_parser("dft-check", help="compare posterior parameters with the DFT")
    s.add_argument("--D", type=int, action="append", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_dft_check)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    if getattr(args, "kind", None) == "patches" and args.n is None:
        parser.error("--n is required for --kind patches")
    try:
        args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"tsa: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
