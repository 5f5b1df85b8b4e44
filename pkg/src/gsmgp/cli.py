"""Command-line front end: synthetic data, training, prediction, benchmarks.

Run configurations are plain ``key = value`` files; every key can also be
given (or overridden) as ``--key value`` on the command line.  Exit codes:
0 success, 1 usage/configuration problem, 2 data problem, 3 finished
without meeting the convergence criterion (outputs are still written).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import consensus, gp, quant, sca, synth
from .errors import ConfigError, DataFormatError, GsmgpError
from .kernel import Dataset, GridSpec, build_grid, build_workspace

ALGORITHMS = ("sca", "dsca", "d2sca", "qd2sca")

# key -> (type, default); None default means "unset"
_SCHEMA = {
    "algorithm": (str, "sca"),
    "train": (str, None),
    "test": (str, None),
    "out": (str, "runs/out"),
    "Q": (int, None),
    "s": (int, 1),
    "N": (int, None),
    "delta": (float, None),
    "sigma2": (float, 1e-2),
    "grid_sampling": (str, "uniform"),
    "grid_seed": (int, 0),
    "v_const": (float, 1e-3),
    "mu_max": (float, None),
    "rank": (int, None),
    "factor_method": (str, "nystrom"),
    "max_iter": (int, 100),
    "step_tol": (float, 1e-5),
    "max_outer": (int, 50),
    "eps_abs": (float, 1e-4),
    "eps_rel": (float, 1e-3),
    "inner_iters": (int, 1),
    "rho_init": (float, 1e-10),
    "partition_scheme": (str, "contiguous"),
    "partition_seed": (int, None),
    "quant_seed": (int, 0),
}


@dataclass
class RunConfig:
    """Validated run parameters (see ``_SCHEMA`` for keys and defaults)."""

    values: dict

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key) from None


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines; '#' starts a comment, blanks ignored."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value.strip()
    return out


def make_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Merge defaults, config-file values and CLI overrides, then check
    cross-field requirements."""
    values = {k: d for k, (_, d) in _SCHEMA.items()}
    for source in (file_values or {}, overrides or {}):
        for key, raw in source.items():
            if key not in _SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            if raw is None:
                continue
            typ = _SCHEMA[key][0]
            try:
                values[key] = typ(raw)
            except ValueError:
                raise ConfigError(f"key {key!r}: cannot parse {raw!r} as {typ.__name__}")
    cfg = RunConfig(values=values)
    if cfg.algorithm not in ALGORITHMS:
        raise ConfigError(f"algorithm must be one of {ALGORITHMS}")
    if cfg.algorithm in ("d2sca", "qd2sca") and cfg.N is None:
        raise ConfigError(f"{cfg.algorithm} needs N (number of agents)")
    if cfg.algorithm == "qd2sca" and (cfg.delta is None or cfg.delta <= 0):
        raise ConfigError("qd2sca needs delta > 0")
    if cfg.sigma2 <= 0:
        raise ConfigError("sigma2 must be positive")
    for key in ("Q", "s", "N", "max_iter", "max_outer", "inner_iters"):
        v = cfg.values.get(key)
        if v is not None and v < 1:
            raise ConfigError(f"{key} must be >= 1")
    return cfg


# ---------------------------------------------------------------------------
# dataset and model files


def read_dataset(path) -> Dataset:
    """CSV with header ``x1,...,xP,y``; every row complete and finite."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from None
    if not lines:
        raise DataFormatError(f"{path}: empty file")
    header = [c.strip() for c in lines[0].split(",")]
    if len(header) < 2 or header[-1] != "y":
        raise DataFormatError(f"{path}:1: header must be x1,...,xP,y")
    P = len(header) - 1
    if header[:-1] != [f"x{p + 1}" for p in range(P)]:
        raise DataFormatError(f"{path}:1: feature columns must be named x1..x{P}")
    rows = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        cells = raw.split(",")
        if len(cells) != P + 1:
            raise DataFormatError(
                f"{path}:{lineno}: expected {P + 1} columns, found {len(cells)}"
            )
        try:
            vals = [float(c) for c in cells]
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: non-numeric cell") from None
        if not all(np.isfinite(vals)):
            raise DataFormatError(f"{path}:{lineno}: non-finite value")
        rows.append(vals)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=np.float64)
    return Dataset(X=arr[:, :P], y=arr[:, P])


def write_dataset(path, data: Dataset) -> None:
    with open(path, "w", encoding="utf-8") as f:
        cols = [f"x{p + 1}" for p in range(data.P)] + ["y"]
        f.write(",".join(cols) + "\n")
        for i in range(data.n):
            cells = [repr(float(v)) for v in data.X[i]] + [repr(float(data.y[i]))]
            f.write(",".join(cells) + "\n")


def save_model(path, model: gp.GPModel) -> None:
    """JSON snapshot: grid, weights, noise level and the training data
    (embedded so prediction needs no extra files)."""
    doc = {
        "grid": {
            "mu": model.grid.mu.tolist(),
            "var": model.grid.var.tolist(),
            "seed": model.grid.seed,
        },
        "weights": model.weights.tolist(),
        "noise_var": model.noise_var,
        "train": {"X": model.train.X.tolist(), "y": model.train.y.tolist()},
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)


def load_model(path) -> gp.GPModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot load model {path}: {exc}") from None
    try:
        grid = GridSpec(
            mu=np.asarray(doc["grid"]["mu"]),
            var=np.asarray(doc["grid"]["var"]),
            seed=doc["grid"]["seed"],
        )
        train = Dataset(
            X=np.asarray(doc["train"]["X"]), y=np.asarray(doc["train"]["y"])
        )
        weights = np.asarray(doc["weights"], dtype=np.float64)
        noise_var = float(doc["noise_var"])
    except (KeyError, TypeError) as exc:
        raise DataFormatError(f"model {path}: missing field {exc}") from None
    ws = build_workspace(train, grid, noise_var, rank=train.n)
    return gp.GPModel(
        grid=grid, weights=weights, noise_var=noise_var, train=train, workspace=ws
    )


# ---------------------------------------------------------------------------
# command implementations


def _default_Q(P: int) -> int:
    return 500 if P == 1 else 100 * P


def _train_once(cfg: RunConfig):
    """Run one training configuration; returns a result dict."""
    if cfg.train is None:
        raise ConfigError("no training dataset given (key 'train')")
    data = read_dataset(cfg.train)
    Q = cfg.Q if cfg.Q is not None else _default_Q(data.P)
    grid = build_grid(
        data,
        Q,
        sampling=cfg.grid_sampling,
        v_const=cfg.v_const,
        seed=cfg.grid_seed,
        mu_max=cfg.mu_max,
    )
    t0 = time.perf_counter()
    extras = {}
    if cfg.algorithm in ("sca", "dsca"):
        ws = build_workspace(
            data, grid, cfg.sigma2, rank=cfg.rank, factor_method=cfg.factor_method
        )
        partition = sca.BlockPartition.make(Q, 1 if cfg.algorithm == "sca" else cfg.s)
        weights, trace = sca.dsca(
            np.zeros(Q),
            ws,
            data.y,
            partition,
            max_iter=cfg.max_iter,
            step_tol=cfg.step_tol,
        )
        converged = trace.converged
        final_nll = trace.nll[-1]
        unit_time = float(np.sum(trace.unit_time))
        uplink_bits = 0
        model = gp.GPModel(
            grid=grid, weights=weights, noise_var=cfg.sigma2, train=data, workspace=ws
        )
        extras["sca_trace"] = trace
    else:
        settings = consensus.ConsensusSettings(
            noise_var=cfg.sigma2,
            inner_iters=cfg.inner_iters,
            max_outer=cfg.max_outer,
            eps_abs=cfg.eps_abs,
            eps_rel=cfg.eps_rel,
            rho_init=cfg.rho_init,
            partition_scheme=cfg.partition_scheme,
            partition_seed=cfg.partition_seed,
            rank=cfg.rank,
            factor_method=cfg.factor_method,
            quant_seed=cfg.quant_seed,
        )
        if cfg.algorithm == "d2sca":
            weights, trace = consensus.d2sca(data, grid, cfg.N, cfg.s, settings)
        else:
            weights, trace = quant.qd2sca(data, grid, cfg.N, cfg.s, cfg.delta, settings)
        converged = trace.converged
        final_nll = trace.nll_sum[-1]
        unit_time = float(np.sum(trace.unit_time))
        uplink_bits = trace.net.uplink_payload_bits()
        ws = build_workspace(data, grid, cfg.sigma2, rank=cfg.rank,
                             factor_method=cfg.factor_method)
        model = gp.GPModel(
            grid=grid, weights=weights, noise_var=cfg.sigma2, train=data, workspace=ws
        )
        extras["consensus_trace"] = trace
    return {
        "model": model,
        "converged": converged,
        "final_nll": final_nll,
        "unit_time": unit_time,
        "uplink_bits": uplink_bits,
        "wall_time": time.perf_counter() - t0,
        "Q": Q,
        "extras": extras,
    }


def _write_run_outputs(cfg: RunConfig, result: dict) -> None:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(out / "model.json", result["model"])
    extras = result["extras"]
    if "sca_trace" in extras:
        extras["sca_trace"].to_csv(out / "trace.csv")
    if "consensus_trace" in extras:
        trace = extras["consensus_trace"]
        trace.to_csv(out / "trace.csv")
        with open(out / "links.csv", "w", encoding="utf-8") as f:
            f.write("sender,receiver,round,payload_bits,total_bits\n")
            for snd, rcv, rnd, pb, tb in trace.net.stats_rows():
                f.write(f"{snd},{rcv},{rnd},{pb},{tb}\n")
    summary = {
        "algorithm": cfg.algorithm,
        "converged": result["converged"],
        "final_nll": result["final_nll"],
        "unit_time": result["unit_time"],
        "uplink_payload_bits": result["uplink_bits"],
        "wall_time": result["wall_time"],
        "Q": result["Q"],
    }
    with open(out / "run.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2)


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "four_mode_2d":
        train, test, meta = synth.four_mode_2d(
            args.n, noise_var=args.noise, seed=args.seed, n_test=args.test_n
        )
    elif args.kind == "sparse_1d":
        train, test, meta = synth.sparse_1d(
            args.n, noise_var=args.noise, seed=args.seed, n_test=args.test_n
        )
    else:
        raise ConfigError(f"unknown synthetic kind {args.kind!r}")
    write_dataset(out / "train.csv", train)
    write_dataset(out / "test.csv", test)
    with open(out / "truth.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2)
    print(f"wrote {train.n} train / {test.n} test rows to {out}")
    return 0


def _collect_overrides(args) -> dict:
    return {
        key: getattr(args, key)
        for key in _SCHEMA
        if getattr(args, key, None) is not None
    }


def cmd_train(args) -> int:
    file_values = parse_config_file(args.config) if args.config else {}
    cfg = make_config(file_values, _collect_overrides(args))
    result = _train_once(cfg)
    _write_run_outputs(cfg, result)
    status = "converged" if result["converged"] else "NOT converged"
    print(
        f"{cfg.algorithm}: {status}, final nll {result['final_nll']:.6f}, "
        f"unit time {result['unit_time']:.2f}s, "
        f"uplink {result['uplink_bits']} bits -> {cfg.out}"
    )
    return 0 if result["converged"] else 3


def cmd_predict(args) -> int:
    model = load_model(args.model)
    data = read_dataset(args.data)
    post = gp.predict(model, data.X)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as f:
        cols = [f"x{p + 1}" for p in range(data.P)] + ["mean", "var"]
        f.write(",".join(cols) + "\n")
        var = np.diag(post.cov)
        for i in range(data.n):
            cells = [repr(float(v)) for v in data.X[i]]
            cells += [repr(float(post.mean[i])), repr(float(var[i]))]
            f.write(",".join(cells) + "\n")
    if data.y.size:
        print(f"mse {gp.mse(post.mean, data.y)!r}")
    print(f"wrote {data.n} predictions to {out}")
    return 0


def cmd_bench(args) -> int:
    rows = []
    worst = 0
    for path in args.configs:
        cfg = make_config(parse_config_file(path), _collect_overrides(args))
        result = _train_once(cfg)
        name = Path(path).stem
        entry = {
            "name": name,
            "algorithm": cfg.algorithm,
            "Q": result["Q"],
            "s": cfg.s,
            "N": cfg.N if cfg.N is not None else 1,
            "delta": cfg.delta if cfg.delta is not None else "",
            "final_nll": result["final_nll"],
            "unit_time": result["unit_time"],
            "uplink_bits": result["uplink_bits"],
            "converged": int(result["converged"]),
            "mse": "",
        }
        if cfg.test:
            test = read_dataset(cfg.test)
            post = gp.predict(result["model"], test.X)
            entry["mse"] = gp.mse(post.mean, test.y)
        rows.append(entry)
        if not result["converged"]:
            worst = 3
    header = list(rows[0].keys()) if rows else []
    out = Path(args.table)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(str(row[k]) for k in header) + "\n")
    widths = {k: max(len(k), *(len(str(r[k])) for r in rows)) for k in header}
    print("  ".join(k.ljust(widths[k]) for k in header))
    for row in rows:
        print("  ".join(str(row[k]).ljust(widths[k]) for k in header))
    return worst


# ---------------------------------------------------------------------------
# argument plumbing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _add_config_flags(sub):
    for key, (typ, _) in _SCHEMA.items():
        sub.add_argument(f"--{key}", type=typ, default=None)


def build_parser() -> _Parser:
    parser = _Parser(prog="gsmgp", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--kind", required=True, choices=("four_mode_2d", "sparse_1d"))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-n", dest="test_n", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("train", help="learn kernel weights")
    p.add_argument("--config", default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("predict", help="posterior mean/variance at new inputs")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = subs.add_parser("bench", help="run several configs and tabulate")
    p.add_argument("--table", required=True, help="output CSV for the summary table")
    p.add_argument("configs", nargs="+")
    _add_config_flags(p)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except GsmgpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
