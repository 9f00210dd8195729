"""Command line front end: train, sweep, check-duality, report.

Exit codes: 0 success, 1 invalid input, 2 runtime failure, 3 a check failed.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import os
import sys
import traceback
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .autodiff import MLPSpec, init_params, save_checkpoint
from .data import make_ring_mixture, sample_mixture
from .dual_linear import LinearBatch, recover_weights, solve_dual_linear
from .metrics import lambda_histogram, mode_coverage
from .oracles import linear_kkt_residual, linear_primal_reference, minimize_score_lin_on_ball
from .training import LOG_FIELDS, TrainConfig, TrainLog, train
from .trust_region import ScoreLinData, solve_tr_dual

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_CHECK_FAILED = 0, 1, 2, 3
HIST_BINS = 20


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    mode_count: int = 5
    radius: float = 2.0
    covariance_scale: float = 0.1
    n_points: int = 5000
    seed: int = None

    def validate(self):
        if int(self.mode_count) != self.mode_count or self.mode_count < 1:
            raise ValueError("mode_count: must be a positive integer")
        if not self.radius > 0:
            raise ValueError("radius: must be positive")
        if not self.covariance_scale > 0:
            raise ValueError("covariance_scale: must be positive")
        if int(self.n_points) != self.n_points or self.n_points < 1:
            raise ValueError("n_points: must be a positive integer")
        if self.seed is not None and (not isinstance(self.seed, int) or isinstance(self.seed, bool)):
            raise ValueError("seed: must be an integer or null")

    @property
    def spec(self):
        return make_ring_mixture(self.mode_count, self.radius, self.covariance_scale)

    def sample(self, default_seed):
        seed = default_seed if self.seed is None else self.seed
        return sample_mixture(self.spec, self.n_points, np.random.default_rng([seed, 7]))


@dataclass
class ExperimentConfig:
    train: TrainConfig
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    output_dir: str = "runs/experiment"

    def to_dict(self):
        return {"output_dir": self.output_dir,
                "dataset": {f.name: getattr(self.dataset, f.name) for f in fields(DatasetConfig)},
                "train": self.train.to_dict()}

    @property
    def sha256(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _line_of(text, key):
    for i, line in enumerate(text.splitlines(), 1):
        if f'"{key}"' in line:
            return i
    return None


def _type_ok(default, value):
    if default is None or isinstance(default, str):
        return default is None or isinstance(value, str)
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(value, bool):
        return False
    if isinstance(default, int):
        return isinstance(value, int)
    if isinstance(default, float):
        return isinstance(value, (int, float))
    if isinstance(default, tuple):
        return isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool)
                                               for v in value)
    return True


def _build(cls, section, values, text, where):
    if not isinstance(values, dict):
        raise ConfigError(f"{where}{section}: expected an object")
    known = {f.name for f in fields(cls)}
    for key in values:
        if key not in known:
            line = _line_of(text, key)
            raise ConfigError(f"{where}{line or '?'}: unknown key '{section}.{key}'")
    for f in fields(cls):
        if f.name in values and not _type_ok(f.default, values[f.name]):
            line = _line_of(text, f.name)
            raise ConfigError(f"{where}{line or '?'}: {section}.{f.name}: expected "
                              f"{type(f.default).__name__}, got {values[f.name]!r}")
    try:
        obj = cls(**values)
        if hasattr(obj, "validate"):
            obj.validate()
    except (TypeError, ValueError) as exc:
        name = str(exc).split(":")[0]
        line = _line_of(text, name) if name in known else None
        raise ConfigError(f"{where}{line or '?'}: {section}.{exc}") from None
    return obj


def parse_experiment(text, source="<config>"):
    """Validate an experiment document; errors carry ``source:line``."""
    where = f"{source}:"
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{where}{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}1: top level must be an object")
    allowed = {"train", "dataset", "output_dir"}
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"{where}{_line_of(text, key) or '?'}: unknown key '{key}'")
    tc = _build(TrainConfig, "train", doc.get("train", {}), text, where)
    dc = _build(DatasetConfig, "dataset", doc.get("dataset", {}), text, where)
    out = doc.get("output_dir", "runs/experiment")
    if not isinstance(out, str) or not out:
        raise ConfigError(f"{where}{_line_of(text, 'output_dir') or '?'}: output_dir must be a path")
    return ExperimentConfig(tc, dc, out)


def load_experiment(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_experiment(text, str(path))


# ---------------------------------------------------------------- artifacts

def _fmt(v):
    v = float(v)
    return "" if np.isnan(v) else repr(v)


def write_curves(path, log, digest):
    with open(path, "w") as fh:
        fh.write(f"# config_sha256={digest}\n")
        fh.write(",".join(LOG_FIELDS) + "\n")
        for rec in log.records:
            fh.write(",".join(str(rec["iter"]) if k == "iter" else _fmt(rec[k]) for k in LOG_FIELDS))
            fh.write("\n")


def read_csv_table(path):
    """Header names and a float matrix (empty cells become NaN)."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    header = lines[0].split(",")
    rows = [[float(c) if c else np.nan for c in ln.split(",")] for ln in lines[1:] if ln]
    return header, np.array(rows, dtype=np.float64).reshape(len(rows), len(header))


def write_matrix(path, mat, header, digest):
    with open(path, "w") as fh:
        fh.write(f"# config_sha256={digest}\n")
        fh.write(",".join(header) + "\n")
        for row in np.atleast_2d(mat):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_artifacts(out, cfg, log):
    digest = cfg.sha256
    write_curves(out / "curves.csv", log, digest)
    for key, samples in log.samples.items():
        write_matrix(out / f"samples_{key}.csv", samples, ["x", "y"], digest)
    if log.lambdas:
        rows = []
        for it in sorted(_hist_iterations(sorted(log.lambdas), cfg.train)):
            resc = log.lambdas[it]
            n = resc.size // 2
            mass, _ = lambda_histogram(resc / (2 * n), n, HIST_BINS)
            rows.append([it, *mass])
        header = ["iter"] + [f"bin{j}" for j in range(HIST_BINS)]
        write_matrix(out / "lambda_hist.csv", np.array(rows), header, digest)
    if "final" in log.samples:
        cov = mode_coverage(log.samples["final"], cfg.dataset.spec)
        with open(out / "coverage.json", "w") as fh:
            json.dump({"config_sha256": digest, **cov.to_dict()}, fh, indent=2)


def _hist_iterations(iters, tc):
    if not iters:
        return set()
    every = tc.sample_every or max(1, tc.iterations // 10)
    return {i for i in iters if i % every == 0} | {iters[-1]}


def run_experiment(cfg, plots=False):
    """Train per ``cfg`` and write every artifact; returns the output directory."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ERROR").unlink(missing_ok=True)
    digest = cfg.sha256
    with open(out / "config.json", "w") as fh:
        json.dump({"config_sha256": digest, **cfg.to_dict()}, fh, indent=2)
    data = cfg.dataset.sample(cfg.train.seed)
    write_matrix(out / "dataset.csv", data, ["x", "y"], digest)
    log = TrainLog()
    try:
        train(cfg.train, data, log=log)
    except Exception:
        write_artifacts(out, cfg, log)
        (out / "ERROR").write_text(traceback.format_exc())
        raise
    write_artifacts(out, cfg, log)
    _save_final_checkpoint(out, cfg, log)
    if plots:
        render_plots(out)
    return out


def _save_final_checkpoint(out, cfg, log):
    tc = cfg.train
    spec = MLPSpec((tc.noise_dim, *tc.gen_hidden, 2), (tc.gen_activation,) * len(tc.gen_hidden))
    params = init_params(spec, np.random.default_rng(0)).with_values(log.theta)
    save_checkpoint(out / "checkpoint.json", spec, params,
                    discriminator=log.w.tolist(), config_sha256=cfg.sha256)


# ---------------------------------------------------------------- plots

def render_plots(directory):
    """Redraw every figure from the CSV files in ``directory``."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    directory = Path(directory)
    header, tab = read_csv_table(directory / "curves.csv")
    col = {name: tab[:, i] for i, name in enumerate(header)}
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.5))
    axes[0].plot(col["iter"], col["f_primal"], lw=0.8, label="f (primal)")
    if np.any(np.isfinite(col["g_dual_or_model"])):
        axes[0].plot(col["iter"], col["g_dual_or_model"], lw=0.8, label="g / m")
    axes[0].set_xlabel("iteration")
    axes[0].legend()
    axes[1].plot(col["iter"], col["disc_acc"], lw=0.8)
    axes[1].set_title("discriminator accuracy")
    if np.any(np.isfinite(col["lambda_median"])):
        axes[2].fill_between(col["iter"], col["lambda_p10"], col["lambda_p90"], alpha=0.3)
        axes[2].plot(col["iter"], col["lambda_median"], lw=0.8)
        axes[2].set_title("2n lambda (median, 10-90%)")
    elif np.any(np.isfinite(col["delta"])):
        axes[2].semilogy(col["iter"], col["delta"], lw=0.8)
        axes[2].set_title("trust region delta")
    fig.tight_layout()
    fig.savefig(directory / "curves.png", dpi=100)
    plt.close(fig)

    sample_files = sorted(directory.glob("samples_*.csv"), key=_sample_key)
    if sample_files:
        _, data = read_csv_table(directory / "dataset.csv")
        fig, axes = plt.subplots(1, len(sample_files), figsize=(3 * len(sample_files), 3),
                                 squeeze=False)
        for ax, path in zip(axes[0], sample_files):
            _, s = read_csv_table(path)
            ax.scatter(data[:, 0], data[:, 1], s=2, c="0.7")
            ax.scatter(s[:, 0], s[:, 1], s=2, c="C3")
            ax.set_title(path.stem.replace("samples_", "iter "))
            ax.set_aspect("equal")
        fig.tight_layout()
        fig.savefig(directory / "samples.png", dpi=100)
        plt.close(fig)

    if (directory / "lambda_hist.csv").exists():
        header, hist = read_csv_table(directory / "lambda_hist.csv")
        edges = np.linspace(0, 1, hist.shape[1])
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for row in hist:
            ax.step(edges[:-1], row[1:], where="post", lw=0.8, label=f"iter {int(row[0])}")
        ax.set_xlabel("2n lambda")
        ax.legend(fontsize=6)
        fig.tight_layout()
        fig.savefig(directory / "lambda_hist.png", dpi=100)
        plt.close(fig)


def _sample_key(path):
    tag = path.stem.replace("samples_", "")
    return (1, 0) if tag == "final" else (0, int(tag))


# ---------------------------------------------------------------- sweep

def sample_hyperparameter(dist, rng):
    """Draw from ``{"randint": [a, b]}``, ``{"rand": [a, b]}``,
    ``{"enr": [a, b]}`` (exp(-randint[a, b])) or ``{"choice": [...]}``."""
    if not isinstance(dist, dict) or len(dist) != 1:
        raise ValueError(f"distribution must be a one-key object, got {dist!r}")
    (kind, arg), = dist.items()
    if kind == "randint":
        return int(rng.integers(arg[0], arg[1], endpoint=True))
    if kind == "rand":
        return float(rng.uniform(arg[0], arg[1]))
    if kind == "enr":
        return float(np.exp(-rng.integers(arg[0], arg[1], endpoint=True)))
    if kind == "choice":
        return arg[int(rng.integers(len(arg)))]
    raise ValueError(f"unknown distribution {kind!r}")


DEFAULT_SWEEP = {
    "batch_size": {"randint": [20, 200]},
    "gen_lr": {"enr": [0, 10]},
    "beta1": {"rand": [0.1, 0.9]},
    "C": {"enr": [0, 6]},
    "disc_lr": {"enr": [0, 10]},
    "gen_hidden": {"choice": [[20, 20], [40, 40]]},
    "iterations": {"randint": [400, 2000]},
}


def parse_sweep(text, source="<sweep>"):
    where = f"{source}:"
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{where}{exc.lineno}: invalid JSON ({exc.msg})") from None
    allowed = {"output_dir", "dataset", "base", "trainer_kinds", "distributions", "workers"}
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"{where}{_line_of(text, key) or '?'}: unknown key '{key}'")
    dists = doc.get("distributions", DEFAULT_SWEEP)
    known = {f.name for f in fields(TrainConfig)}
    probe = np.random.default_rng(0)
    for key, dist in dists.items():
        if key not in known:
            raise ConfigError(f"{where}{_line_of(text, key) or '?'}: unknown hyperparameter '{key}'")
        try:
            sample_hyperparameter(dist, probe)
        except (ValueError, TypeError, IndexError) as exc:
            raise ConfigError(f"{where}{_line_of(text, key) or '?'}: distributions.{key}: {exc}") from None
    kinds = doc.get("trainer_kinds", ["dual_linear", "standard"])
    base = doc.get("base", {})
    for kind in kinds:
        _build(TrainConfig, "base", {**base, "trainer_kind": kind}, text, where)
    dc = _build(DatasetConfig, "dataset", doc.get("dataset", {}), text, where)
    workers = doc.get("workers", os.cpu_count() or 1)
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError(f"{where}{_line_of(text, 'workers') or '?'}: workers must be a positive integer")
    return dict(output_dir=doc.get("output_dir", "runs/sweep"), dataset=dc, base=base,
                kinds=kinds, distributions=dists, workers=workers)


def _run_trial(job):
    trial, kind, params, base, dataset, seed = job
    row = {"trial": trial, "trainer_kind": kind, "params": json.dumps(params, sort_keys=True)}
    try:
        tc = TrainConfig(**{**base, **params, "trainer_kind": kind, "seed": seed})
        data = dataset.sample(seed)
        log = train(tc, data)
        cov = mode_coverage(log.samples["final"], dataset.spec)
        row.update(n_covered=cov.n_covered, success=int(cov.n_covered == dataset.mode_count),
                   error="")
    except Exception as exc:  # recorded, the sweep goes on
        row.update(n_covered=0, success=0, error=f"{type(exc).__name__}: {exc}".replace(",", ";"))
    return row


def run_sweep(sweep, trials, seed):
    """Identical sampled settings and datasets for every trainer kind."""
    rng = np.random.default_rng(seed)
    jobs = []
    for trial in range(trials):
        params = {k: sample_hyperparameter(d, rng) for k, d in sweep["distributions"].items()}
        trial_seed = int(rng.integers(2**31))
        for kind in sweep["kinds"]:
            jobs.append((trial, kind, params, sweep["base"], sweep["dataset"], trial_seed))
    if sweep["workers"] == 1 or len(jobs) == 1:
        rows = [_run_trial(j) for j in jobs]
    else:
        with concurrent.futures.ProcessPoolExecutor(sweep["workers"]) as pool:
            rows = list(pool.map(_run_trial, jobs))
    summary = {}
    for kind in sweep["kinds"]:
        mine = [r for r in rows if r["trainer_kind"] == kind]
        summary[kind] = {"trials": len(mine), "success_rate": float(np.mean([r["success"] for r in mine])),
                         "failures": sum(bool(r["error"]) for r in mine)}
    return rows, summary


def write_sweep(out, rows, summary, meta):
    out.mkdir(parents=True, exist_ok=True)
    digest = hashlib.sha256(json.dumps(meta, sort_keys=True, default=str).encode()).hexdigest()
    cols = ["trial", "trainer_kind", "n_covered", "success", "params", "error"]
    with open(out / "sweep_trials.csv", "w") as fh:
        fh.write(f"# config_sha256={digest}\n")
        fh.write(",".join(cols) + "\n")
        for r in rows:
            cells = [str(r[c]) for c in cols]
            cells[4] = '"' + cells[4].replace('"', '""') + '"'
            fh.write(",".join(cells) + "\n")
    with open(out / "sweep_summary.json", "w") as fh:
        json.dump({"config_sha256": digest, **meta, "summary": summary}, fh, indent=2, default=str)


# ---------------------------------------------------------------- duality checks

LINEAR_GAP_TOL = 1e-6
LINEAR_W_TOL = 1e-4
LINEAR_KKT_TOL = 1e-5
TR_GAP_TOL = 1e-5
TR_FEAS_TOL = 1e-8
TR_CS_TOL = 1e-6


def check_linear_instance(batch):
    w_ref, primal, _ = linear_primal_reference(batch)
    lam, g, _ = solve_dual_linear(batch)
    w = recover_weights(lam, batch)
    gap = abs(primal - g) / (1 + abs(primal))
    werr = float(np.max(np.abs(w - w_ref)))
    kkt = linear_kkt_residual(lam, w, batch)
    ok = gap <= LINEAR_GAP_TOL and werr <= LINEAR_W_TOL and kkt <= LINEAR_KKT_TOL
    return ok, dict(gap=gap, w_err=werr, kkt=kkt)


def random_linear_batch(rng):
    n = int(rng.choice([5, 10, 20]))
    d = int(rng.choice([2, 5, 10]))
    C = float(rng.choice([1e-4, 1e-2, 1.0]))
    return LinearBatch(rng.normal(size=(n, d)), rng.normal(0.5, 1.0, size=(n, d)), C), (n, d, C)


def random_score_lin_data(rng, n=None, hidden=None, C=None):
    from .training import MLPScorer

    n = int(rng.choice([4, 6, 10])) if n is None else n
    hidden = int(rng.choice([6, 10])) if hidden is None else hidden
    C = float(rng.choice([1e-2, 1.0])) if C is None else C
    scorer = MLPScorer(MLPSpec((2, hidden, 1), ("tanh",)))
    w = scorer.init(rng)
    F_x, gx = scorer.per_sample_grads(w, rng.normal(size=(n, 2)))
    F_z, gz = scorer.per_sample_grads(w, rng.normal(1.0, 1.0, size=(n, 2)))
    return ScoreLinData(F_x, F_z, gx, gz, w, C)


def check_tr_instance(data, delta):
    lam, s, m, rep = solve_tr_dual(data, delta)
    _, m_ref, _ = minimize_score_lin_on_ball(data, delta)
    gap = abs(m - rep.objective_value) / (1 + abs(m))
    ref_gap = abs(m_ref - rep.objective_value) / (1 + abs(m_ref))
    feas = 0.5 * (s @ s) - delta
    cs = abs(lam.lambda_T * feas)
    ok = max(gap, ref_gap) <= TR_GAP_TOL and feas <= TR_FEAS_TOL and cs <= TR_CS_TOL
    return ok, dict(gap=gap, ref_gap=ref_gap, feasibility=feas, slackness=cs)


def run_check_duality(trials, seed, stream=None):
    stream = sys.stdout if stream is None else stream
    rng = np.random.default_rng(seed)
    failures = 0
    for i in range(trials):
        batch, (n, d, C) = random_linear_batch(rng)
        ok, info = check_linear_instance(batch)
        failures += not ok
        print(f"linear[{i}] n={n} d={d} C={C:g}: gap={info['gap']:.2e} w_err={info['w_err']:.2e} "
              f"kkt={info['kkt']:.2e} {'PASS' if ok else 'FAIL'}", file=stream)
    for i in range(trials):
        data = random_score_lin_data(rng)
        delta = float(rng.choice([1e-3, 1.0, 1e3]))
        ok, info = check_tr_instance(data, delta)
        failures += not ok
        print(f"score_lin[{i}] n={data.n} P={data.w_k.size} C={data.C:g} delta={delta:g}: "
              f"gap={info['gap']:.2e} oracle_gap={info['ref_gap']:.2e} "
              f"feas={info['feasibility']:.2e} cs={info['slackness']:.2e} {'PASS' if ok else 'FAIL'}",
              file=stream)
    print(f"{2 * trials - failures}/{2 * trials} instances passed", file=stream)
    return failures == 0


# ---------------------------------------------------------------- entry point

def build_parser():
    p = argparse.ArgumentParser(prog="dualgan", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    t = sub.add_parser("train", help="train one model and write its artifact directory")
    t.add_argument("--config", required=True)
    t.add_argument("--plots", action="store_true")
    s = sub.add_parser("sweep", help="random hyperparameter sweep over trainer kinds")
    s.add_argument("--config", required=True)
    s.add_argument("--trials", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    c = sub.add_parser("check-duality", help="strong-duality checks on random instances")
    c.add_argument("--trials", type=int, default=20)
    c.add_argument("--seed", type=int, default=0)
    r = sub.add_parser("report", help="redraw plots from an artifact directory")
    r.add_argument("--dir", required=True)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            out = run_experiment(load_experiment(args.config), plots=args.plots)
            print(f"artifacts written to {out}")
        elif args.command == "sweep":
            if args.trials < 1:
                raise ConfigError("--trials must be at least 1")
            path = Path(args.config)
            try:
                sweep = parse_sweep(path.read_text(), str(path))
            except OSError as exc:
                raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
            rows, summary = run_sweep(sweep, args.trials, args.seed)
            meta = {"trials": args.trials, "seed": args.seed,
                    "kinds": sweep["kinds"], "distributions": sweep["distributions"]}
            write_sweep(Path(sweep["output_dir"]), rows, summary, meta)
            for kind, info in summary.items():
                print(f"{kind:12s} success {info['success_rate']:.2f} over {info['trials']} "
                      f"trials ({info['failures']} failed)")
        elif args.command == "check-duality":
            if args.trials < 1:
                raise ConfigError("--trials must be at least 1")
            if not run_check_duality(args.trials, args.seed):
                return EXIT_CHECK_FAILED
        else:
            directory = Path(args.dir)
            if not (directory / "curves.csv").exists():
                raise ConfigError(f"{directory}: no curves.csv found")
            render_plots(directory)
            print(f"plots written to {directory}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
