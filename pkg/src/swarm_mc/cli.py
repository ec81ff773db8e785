"""Command-line entry point.

Subcommands: run, suite, meanfield, bench-kernel, targets.  Exit codes:
0 ok, 2 configuration error, 3 runtime numeric error.  The environment
variable SWARM_MC_THREADS caps the engine's worker count.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import diagnostics as diag
from . import meanfield as mf
from . import report
from .core import RunConfig, derived_seed, run_chain
from .errors import ConfigError, NumericError, ProposalDensityError
from .kernels import gaussian_kernel, kernel_sum, uniform_ball_kernel
from .targets import registry, target_from_spec

_STREAM_SUITE = 3


def _load_json(path: str, what: str) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise ConfigError(what, f"file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(what, f"invalid JSON in {path}: {e}") from None


def _atomic_write(path: str, data: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as f:
        f.write(data)
    os.replace(tmp, path)


def cmd_run(args) -> int:
    raw = _load_json(args.config, "config")
    config = RunConfig.from_dict(raw, seed_override=args.seed)
    result = run_chain(config, out_dir=args.out, svg=args.svg)
    final = result.records[-1]
    print(f"run complete: {config.n_iterations} iterations, "
          f"final energy distance {final.energy_distance:.6g}, "
          f"acceptance {final.acceptance_rate:.3f}")
    print(f"artifacts written to {args.out}")
    return 0


def _aggregate_curves(rep_records: list) -> tuple[np.ndarray, np.ndarray, float]:
    """Mean energy-distance curve across repetitions plus final variance."""
    iters = np.array([r.iteration for r in rep_records[0]])
    ed = np.array([[r.energy_distance for r in records] for records in rep_records])
    mean_curve = ed.mean(axis=0)
    var_curve = ed.var(axis=0, ddof=1) if ed.shape[0] > 1 else np.zeros(ed.shape[1])
    return iters, mean_curve, var_curve


def cmd_suite(args) -> int:
    spec = _load_json(args.suite, "suite")
    runs = spec.get("runs")
    if not runs:
        raise ConfigError("runs", "suite needs a nonempty 'runs' list")
    names = [r.get("name") for r in runs]
    if len(set(names)) != len(names) or None in names:
        raise ConfigError("runs", "run names must be present and unique")
    repetitions = int(spec.get("repetitions", 1))
    if repetitions < 1:
        raise ConfigError("repetitions", "must be >= 1")
    configs = {}
    for r in runs:
        cfg = r.get("config")
        if cfg is None:
            raise ConfigError(f"runs[{r['name']}].config", "missing")
        configs[r["name"]] = RunConfig.from_dict(cfg)

    os.makedirs(args.out, exist_ok=True)
    jobs = []
    for name, cfg in configs.items():
        for rep in range(repetitions):
            rep_cfg = RunConfig(**{**cfg.__dict__,
                                   "seed": derived_seed(cfg.seed, _STREAM_SUITE, rep)})
            jobs.append((name, rep, rep_cfg))

    results: dict = {}
    failures = []

    def one(job):
        name, rep, cfg = job
        out = os.path.join(args.out, name, f"rep{rep}")
        return name, rep, run_chain(cfg, out_dir=out)

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        for fut in [pool.submit(one, j) for j in jobs]:
            try:
                name, rep, res = fut.result()
                results.setdefault(name, {})[rep] = res
            except Exception as e:  # record and continue with the other runs
                failures.append(repr(e))
                print(f"warning: run failed and was skipped: {e}", file=sys.stderr)

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["method", "iter", "mean_energy_dist", "var_energy_dist"])
    curves = {}
    for name in configs:
        reps = results.get(name, {})
        if not reps:
            continue
        rep_records = [reps[k].records for k in sorted(reps)]
        iters, mean_curve, var_curve = _aggregate_curves(rep_records)
        curves[name] = (iters, mean_curve)
        for it, m, v in zip(iters, mean_curve, var_curve):
            writer.writerow([name, int(it), repr(float(m)), repr(float(v))])
    _atomic_write(os.path.join(args.out, "summary.csv"), buf.getvalue())

    baseline = None
    baseline_reps = int(spec.get("baseline_reps", 0))
    if baseline_reps > 0:
        first = configs[names[0]]
        target = target_from_spec(first.target)
        baseline = diag.iid_baseline(target, first.n_particles, baseline_reps,
                                     seed=derived_seed(first.seed, _STREAM_SUITE, 10_000))
        _atomic_write(os.path.join(args.out, "baseline.csv"),
                      "mean,q05,q95\n"
                      f"{baseline.mean!r},{baseline.q05!r},{baseline.q95!r}\n")
    if failures:
        _atomic_write(os.path.join(args.out, "failures.txt"), "\n".join(failures) + "\n")
    report.suite_figure(curves, os.path.join(args.out, "summary.png"), baseline)
    print(f"suite complete: {len(jobs) - len(failures)}/{len(jobs)} runs; "
          f"summary written to {args.out}/summary.csv")
    return 0


def _parse_grid_proposal(text: str, geometry):
    if text == "degenerate":
        return mf.DegenerateGridProposal()
    for prefix, cls in (("conv", mf.ConvolutionGridProposal),
                        ("linear", mf.LinearGridProposal)):
        if text.startswith(prefix + ":"):
            try:
                sigma = float(text.split(":", 1)[1])
            except ValueError:
                raise ConfigError("--proposal", f"bad kernel size in {text!r}") from None
            if sigma <= 0:
                raise ConfigError("--proposal", "kernel size must be positive")
            return cls(geometry, gaussian_kernel(sigma))
    raise ConfigError("--proposal",
                      f"expected conv:SIGMA, degenerate, or linear:SIGMA, got {text!r}")


def cmd_meanfield(args) -> int:
    geometry = mf.grid_geometry(args.grid, dim=args.dim)
    if args.dim == 1:
        pi = mf.two_bump_density_1d(geometry)
    else:
        from .targets import banana3

        target = banana3()
        with np.errstate(over="ignore"):
            vals = np.exp(target.log_density(geometry.centers()))
        pi = mf.make_grid_density(geometry, vals)
    proposal = _parse_grid_proposal(args.proposal, geometry)
    f0 = mf.uniform_grid_density(geometry)
    trace = mf.pde_evolve(f0, proposal, pi, dt=args.dt, n_steps=args.steps,
                          dissipation_kind=args.phi)

    os.makedirs(args.out, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["step", "chi2", "kl", "min_ratio", "max_ratio", "dissipation"])
    for k in range(trace.times.size):
        writer.writerow([k, repr(float(trace.chi2[k])), repr(float(trace.kl[k])),
                         repr(float(trace.min_ratio[k])), repr(float(trace.max_ratio[k])),
                         repr(float(trace.dissipation[k]))])
    _atomic_write(os.path.join(args.out, "entropy.csv"), buf.getvalue())
    report.entropy_figure(trace, os.path.join(args.out, "entropy.png"))
    if trace.chi2.size > 1 and trace.chi2[-1] < trace.chi2[0] / 2:
        rate = mf.fit_decay_rate(trace.times, trace.chi2)
        print(f"chi2 entropy decay rate (fitted): {rate:.4f}")
    print(f"entropy trace written to {args.out}/entropy.csv")
    return 0


def cmd_bench_kernel(args) -> int:
    rng = np.random.default_rng(0)
    sizes = [int(s) for s in args.sizes.split(",")]
    dims = [int(s) for s in args.dims.split(",")]
    kernels = {"gaussian(0.2)": gaussian_kernel(0.2), "uniform_ball(0.2)": uniform_ball_kernel(0.2)}
    print(f"{'N':>8} {'d':>3} {'kernel':>18} {'ms':>10}")
    for n in sizes:
        for d in dims:
            pts = rng.random((n, d))
            b = rng.random(n)
            for name, k in kernels.items():
                kernel_sum(pts[: min(n, 8)], pts, k, b)  # warm compile
                t0 = time.perf_counter()
                kernel_sum(pts, pts, k, b)
                ms = (time.perf_counter() - t0) * 1e3
                print(f"{n:>8} {d:>3} {name:>18} {ms:>10.2f}")
    return 0


def cmd_targets_list(args) -> int:
    for name in sorted(registry):
        t = registry[name]()
        print(f"{name}: dim={t.dim} params={t.params}")
    print("custom: load a Gaussian/Cauchy mixture from JSON "
          '({"id": "custom", "dim": ..., "components": [...]})')
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swarm-mc",
                                description="Interacting-particle Monte Carlo benchmark CLI")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one sampler configuration")
    run.add_argument("--config", required=True, help="path to the run config JSON")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--svg", action="store_true", help="write 2-D scatter frames")
    run.set_defaults(func=cmd_run)

    suite = sub.add_parser("suite", help="run a suite of configurations with repetitions")
    suite.add_argument("--suite", required=True, help="path to the suite JSON")
    suite.add_argument("--out", required=True)
    suite.add_argument("--jobs", type=int, default=1, help="concurrent repetitions")
    suite.set_defaults(func=cmd_suite)

    mfp = sub.add_parser("meanfield", help="grid evolution of the mean-field operator")
    mfp.add_argument("--grid", type=int, default=256, help="cells per axis")
    mfp.add_argument("--dim", type=int, choices=(1, 2), default=1)
    mfp.add_argument("--proposal", default="conv:0.1",
                     help="conv:SIGMA | degenerate | linear:SIGMA")
    mfp.add_argument("--phi", choices=("chi2", "kl"), default="chi2")
    mfp.add_argument("--dt", type=float, default=1.0)
    mfp.add_argument("--steps", type=int, default=100)
    mfp.add_argument("--out", required=True)
    mfp.set_defaults(func=cmd_meanfield)

    bench = sub.add_parser("bench-kernel", help="time the pairwise kernel engine")
    bench.add_argument("--sizes", default="1024,4096,16384")
    bench.add_argument("--dims", default="2,8")
    bench.set_defaults(func=cmd_bench_kernel)

    tbl = sub.add_parser("targets", help="target density utilities")
    tsub = tbl.add_subparsers(dest="targets_command", required=True)
    tlist = tsub.add_parser("list", help="list built-in targets")
    tlist.set_defaults(func=cmd_targets_list)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (NumericError, ProposalDensityError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"io error: {e.filename}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
