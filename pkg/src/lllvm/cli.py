"""Command-line interface: ``lllvm {generate,fit,select-k,shortcircuit,oos}``.

Exit codes: 0 success, 2 usage error, 3 numerical failure, 4 I/O failure.
Every command writes ``manifest.json`` into its output directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .data_eval import load_matrix_csv, save_matrix_csv, swiss_roll
from .errors import InvalidParameterError, LLLVMError, NumericalError, ParseError
from .extensions import compare_graphs, out_of_sample, reconstruct, worker_count, write_ranking_csv
from .graph import build_knn_graph, edit_edge, read_edge_list, write_edge_list
from .inference import EMConfig, fit_em, load_fit_result, save_fit_result
from .model import DEFAULT_EPSILON, Dataset, Hyperparams

log = logging.getLogger("lllvm")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


class UsageError(Exception):
    """Invalid command-line input detected after argument parsing."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _nonneg_float(s):
    v = float(s)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {s}")
    return v


def _edge(s):
    try:
        i, j = (int(t) for t in s.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an edge as i,j, got {s!r}") from None
    if i == j or min(i, j) < 0:
        raise argparse.ArgumentTypeError(f"invalid edge {s!r}")
    return min(i, j), max(i, j)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command, args, inputs, outputs, wall):
    config = {k: v for k, v in vars(args).items() if k not in ("func",)}
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in config.items()}
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "input_hashes": {str(p): _sha256(p) for p in inputs},
        "outputs": sorted(str(Path(p).relative_to(out_dir)) for p in outputs),
        "output_hashes": {str(Path(p).relative_to(out_dir)): _sha256(p) for p in sorted(outputs)},
        "wall_time_seconds": wall,
    }
    fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".manifest", suffix=".json")
    with os.fdopen(fd, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    os.replace(tmp, out_dir / "manifest.json")


def _load_data(path) -> Dataset:
    return Dataset(load_matrix_csv(path))


def _hyper(args, d_y) -> Hyperparams:
    if args.dx >= d_y:
        raise UsageError(f"--dx {args.dx} must be smaller than the data dimension {d_y}")
    return Hyperparams(args.alpha0, args.gamma0, args.dx, args.epsilon)


def _config(args, seed=None) -> EMConfig:
    return EMConfig(max_iterations=args.iters, rel_tol=args.tol,
                    seed=args.seed if seed is None else seed, init_scheme=args.init)


def _check_k(k, n):
    if k >= n:
        raise UsageError(f"--k {k} must be smaller than the number of points {n}")


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args, out: Path):
    Y, X = swiss_roll(args.n, args.noise, args.seed)
    save_matrix_csv(Y, out / "Y.csv")
    save_matrix_csv(X, out / "X_true.csv")
    return [], [out / "Y.csv", out / "X_true.csv"]


def cmd_fit(args, out: Path):
    y = _load_data(args.data)
    _check_k(args.k, y.n)
    h = _hyper(args, y.d_y)
    g = build_knn_graph(y.Y, args.k)
    fit = fit_em(y, g, h, _config(args))
    paths = save_fit_result(fit, out, extra={"k": args.k})
    save_matrix_csv(y.Y, out / "Y.csv")
    write_edge_list(g, out / "graph.csv")
    return [args.data], paths + [out / "Y.csv", out / "graph.csv"]


def cmd_select_k(args, out: Path):
    y = _load_data(args.data)
    if args.k_min > args.k_max:
        raise UsageError("--k-min must not exceed --k-max")
    _check_k(args.k_max, y.n)
    h = _hyper(args, y.d_y)
    seeds = list(range(args.seed, args.seed + args.seeds))
    jobs = [(k, s) for k in range(args.k_min, args.k_max + 1) for s in seeds]
    graphs = {k: build_knn_graph(y.Y, k) for k in range(args.k_min, args.k_max + 1)}

    def run(job):
        k, s = job
        try:
            return k, s, fit_em(y, graphs[k], h, _config(args, seed=s)).final_elbo, ""
        except LLLVMError as exc:
            log.warning("fit k=%d seed=%d failed: %s", k, s, exc)
            return k, s, float("nan"), str(exc)

    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, jobs))
    else:
        rows = [run(j) for j in jobs]

    with open(out / "k_sweep.csv", "w") as fh:
        fh.write("k,seed,final_elbo\n")
        for k, s, v, _ in rows:
            fh.write(f"{k},{s},{v!r}\n")
    means = {}
    for k in graphs:
        vals = [v for kk, _, v, _ in rows if kk == k and np.isfinite(v)]
        means[k] = float(np.mean(vals)) if vals else float("nan")
    finite = {k: v for k, v in means.items() if np.isfinite(v)}
    if not finite:
        raise NumericalError("select-k: every fit failed")
    best = max(finite, key=lambda k: (finite[k], -k))
    result = {"best_k": best, "mean_elbo": {str(k): v for k, v in means.items()},
              "failures": [{"k": k, "seed": s, "error": e} for k, s, _, e in rows if e]}
    with open(out / "best_k.json", "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
    return [args.data], [out / "k_sweep.csv", out / "best_k.json"]


def cmd_shortcircuit(args, out: Path):
    y = _load_data(args.data)
    _check_k(args.k, y.n)
    h = _hyper(args, y.d_y)
    inputs = [args.data]
    if args.graph is not None:
        try:
            g = read_edge_list(args.graph, y.n)
        except InvalidParameterError as exc:
            raise UsageError(f"--graph: {exc}") from exc
        g = type(g).from_adjacency(g.adjacency, k=args.k)
        inputs.append(args.graph)
    else:
        g = build_knn_graph(y.Y, args.k)
    i, j = args.edge
    if j >= y.n:
        raise UsageError(f"--edge {i},{j} out of range for n={y.n}")
    present = bool(g.adjacency[i, j])
    toggled = edit_edge(g, i, j, not present)
    with_edge, without_edge = (g, toggled) if present else (toggled, g)
    scores = compare_graphs(y, [with_edge, without_edge], h, _config(args),
                            graph_ids=["with_edge", "without_edge"])
    write_ranking_csv(scores, out / "ranking.csv")
    by_id = {s.graph_id: s for s in scores}
    if any(s.failed for s in scores):
        verdict = "undetermined"
    elif by_id["without_edge"].final_elbo > by_id["with_edge"].final_elbo:
        verdict = "remove" if present else "keep-absent"
    elif by_id["without_edge"].final_elbo < by_id["with_edge"].final_elbo:
        verdict = "keep" if present else "add"
    else:
        verdict = "tie"
    with open(out / "verdict.txt", "w") as fh:
        fh.write(verdict + "\n")
    print(verdict)
    return inputs, [out / "ranking.csv", out / "verdict.txt"]


def cmd_oos(args, out: Path):
    fit_dir = Path(args.fit_dir)
    fit, meta = load_fit_result(fit_dir)
    y = _load_data(fit_dir / "Y.csv")
    g = read_edge_list(fit_dir / "graph.csv", y.n)
    k = args.k if args.k is not None else int(meta["k"])
    g = type(g).from_adjacency(g.adjacency, k=int(meta["k"]))
    try:
        queries = load_matrix_csv(args.query)
    except ParseError as exc:
        raise UsageError(f"--query: {exc}") from exc
    if queries.shape[1] != y.d_y:
        raise UsageError(f"query has {queries.shape[1]} columns, the fit has d_y={y.d_y}")
    d_x = fit.hyper.d_x
    spread = float(np.sqrt(np.mean(np.sum((fit.qx.means - fit.qx.means.mean(axis=0)) ** 2, axis=1))))
    header = (["query"] + [f"x{a}" for a in range(d_x)]
              + [f"cov_{a}{b}" for a in range(d_x) for b in range(d_x)]
              + [f"yhat{c}" for c in range(y.d_y)]
              + ["nearest_train", "distance", "relative_distance"])
    rows = []
    for q, y_star in enumerate(queries):
        post = out_of_sample(fit, y_star, y, g, k=min(k, y.n), n_passes=args.passes)
        y_hat = reconstruct(post.mean_x, fit, y, post.neighbour_indices)
        nearest = int(np.argmin(np.sum((y.Y - y_star) ** 2, axis=1)))
        dist = float(np.linalg.norm(post.mean_x - fit.qx.means[nearest]))
        rows.append([q, *post.mean_x, *post.cov_x.ravel(), *y_hat, nearest, dist, dist / spread])
    with open(out / "oos_results.csv", "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in r) + "\n")
    inputs = [args.query] + [fit_dir / f for f in ("fit.json", "mu_x.csv", "mu_c.csv", "covariances.bin")]
    return inputs, [out / "oos_results.csv"]


# ---------------------------------------------------------------------------
# parser and dispatch


def _add_fit_options(p, with_k=True):
    p.add_argument("--data", type=Path, required=True, help="header-less CSV, one point per row")
    if with_k:
        p.add_argument("--k", type=_positive_int, required=True)
    p.add_argument("--dx", type=_positive_int, required=True)
    p.add_argument("--iters", type=_positive_int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.add_argument("--alpha0", type=float, default=1.0)
    p.add_argument("--gamma0", type=float, default=1.0)
    p.add_argument("--init", choices=["identity-maps", "prior-sample"], default="identity-maps")
    p.add_argument("--out-dir", type=Path, default=Path("."))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lllvm", description="Locally linear latent variable model")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="sample a Swiss roll")
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--noise", type=_nonneg_float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", type=Path, default=Path("."))
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="fit the model on a k-NN graph")
    _add_fit_options(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select-k", help="sweep k and report the lower bound per k and seed")
    _add_fit_options(p, with_k=False)
    p.add_argument("--k-min", type=_positive_int, required=True)
    p.add_argument("--k-max", type=_positive_int, required=True)
    p.add_argument("--seeds", type=_positive_int, default=10)
    p.set_defaults(func=cmd_select_k)

    p = sub.add_parser("shortcircuit", help="compare the lower bound with and without one edge")
    _add_fit_options(p)
    p.add_argument("--edge", type=_edge, required=True, help="edge to toggle, as i,j")
    p.add_argument("--graph", type=Path, default=None, help="edge-list CSV to use instead of the k-NN graph")
    p.set_defaults(func=cmd_shortcircuit)

    p = sub.add_parser("oos", help="out-of-sample posterior and reconstruction for query points")
    p.add_argument("--fit-dir", type=Path, required=True)
    p.add_argument("--query", type=Path, required=True)
    p.add_argument("--k", type=_positive_int, default=None, help="neighbours per query (default: training k)")
    p.add_argument("--passes", type=_positive_int, default=1)
    p.add_argument("--out-dir", type=Path, default=Path("."))
    p.set_defaults(func=cmd_oos)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"lllvm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out_dir)
    start = time.perf_counter()
    try:
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise PermissionError(f"output directory {out} is not writable")
        inputs, outputs = args.func(args, out)
        _write_manifest(out, args.command, args, inputs, outputs, time.perf_counter() - start)
    except UsageError as exc:
        print(f"lllvm: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"lllvm: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ParseError as exc:
        print(f"lllvm: parse error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InvalidParameterError as exc:
        print(f"lllvm: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"lllvm: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
