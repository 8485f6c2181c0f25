"""Command-line entry point: ``qdcascade {simulate,reconstruct,analyze,sweep,pipeline}``.

Exit codes: 0 success, 2 config or input error, 3 I/O error, 4 numerical
non-convergence.
"""

import argparse
import dataclasses
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

from . import analysis, io
from .cascade import expected_histograms, sample_histograms
from .config import ConfigError, Manifest, background_for, load_config, load_json
from .errors import ConvergenceError, FitError, ParameterError, ValidationError
from .tomography import windowed_tomography

log = logging.getLogger("qdcascade")

EXIT_OK, EXIT_USER, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
LOCK_NAME = ".qdcascade.lock"


class LockError(OSError):
    pass


@contextmanager
def output_lock(out_dir):
    """Exclusive lock file in ``out_dir``; a second concurrent run fails."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockError(f"{lock} exists: another run is using this output directory") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out_dir
    finally:
        lock.unlink(missing_ok=True)


def _config(args):
    try:
        cfg = load_config(args.config)
    except FileNotFoundError:
        raise ConfigError(f"config file {args.config} not found") from None
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.out is not None:
        cfg = cfg.replace(output_dir=str(args.out))
    if getattr(args, "windows", None):
        try:
            width, step = (float(v) for v in args.windows.split(","))
        except ValueError:
            raise ConfigError(f"--windows: expected '<width_ps>,<step_ps>', got {args.windows!r}") from None
        try:
            cfg = cfg.replace(tomography=dataclasses.replace(cfg.tomography, window_width=width, window_step=step))
        except ValueError as exc:
            raise ConfigError(f"--windows: {exc}") from None
    return cfg


def _hist_paths(root, kind):
    root = Path(root) / "histograms"
    return root / f"{kind}.csv", root / f"{kind}.json"


# -- stages -----------------------------------------------------------------------


def run_simulate(cfg, out, expected_only=False):
    man = Manifest("simulate", cfg)
    hist = expected_histograms(cfg.params)
    man.add_outputs(io.write_histograms(hist, *_hist_paths(out, "expected")))
    if not expected_only:
        sampled = sample_histograms(hist, cfg.seed)
        man.add_outputs(io.write_histograms(sampled, *_hist_paths(out, "sampled")))
    man.write(out)
    return hist


def _load_hist(cfg, out, path=None):
    if path is None:
        csv_path, meta_path = _hist_paths(out, cfg.tomography.histogram_source)
    else:
        csv_path = Path(path)
        meta_path = csv_path.with_suffix(".json")
    hist = io.read_histograms(csv_path, meta_path if meta_path.exists() else None)
    if hist.params is None:
        hist.params = cfg.params
    return hist, csv_path


def run_reconstruct(cfg, out, hist_path=None):
    man = Manifest("reconstruct", cfg)
    hist, csv_path = _load_hist(cfg, out, hist_path)
    man.add_input(csv_path)
    bg = background_for(cfg, hist)
    t = cfg.tomography
    series = windowed_tomography(
        hist, t.window_width, t.window_step, hist.params.g2_xx, t.repetitions, cfg.seed, bg, t.workers
    )
    if not len(series):
        raise ConvergenceError("no window could be reconstructed")
    man.add_outputs(io.write_tomography(series, Path(out) / "tomography"))
    man.notes.update(
        {
            "background_model": t.background_model,
            "likelihood_background_per_window": None if not len(series) else bg * _bins_per_window(series, hist),
            "normalization": "per analyzer-setting pair: sum of its four outcome counts",
            "window_snapping": "a window holds the bins whose centers lie in [c - w/2, c + w/2)",
            "window_edges_ps": [list(r.edges) for r in series],
            "failed_windows": {str(k): v for k, v in series.failures.items()},
        }
    )
    man.write(out)
    return series


def _bins_per_window(series, hist):
    edges = series[0].edges
    return round((edges[1] - edges[0]) / hist.grid.bin_width)


def _fit_doc(fit):
    if isinstance(fit, Exception):
        return {"error": str(fit)}
    return {
        "value": fit.value,
        "stderr": fit.stderr,
        "fit_window_ps": list(fit.fit_window),
        "reduced_deviance": fit.reduced_deviance,
        **fit.extras,
    }


def summary_document(res):
    """JSON-ready summary of one analysed scenario."""
    return {
        "scenario": res.name,
        "peak_concurrence": {
            "window_width_ps": res.peak.window_width,
            "value": res.peak.concurrence,
            "low": res.peak.concurrence_low,
            "high": res.peak.concurrence_high,
        },
        "max_window_concurrence": res.max_window,
        "weighted_average_concurrence": {
            "value": res.weighted.value,
            "low": res.weighted.low,
            "high": res.weighted.high,
            "std": res.weighted.std,
        },
        "lifetime_ps": _fit_doc(res.lifetime),
        "fss_mhz": _fit_doc(res.fss),
        "regimes": res.regimes,
        "n_windows": len(res.series),
    }


def run_analyze(cfg, out, hist_path=None, tomo_dir=None, name="run"):
    man = Manifest("analyze", cfg)
    hist, csv_path = _load_hist(cfg, out, hist_path)
    man.add_input(csv_path)
    series = io.read_tomography(Path(tomo_dir) if tomo_dir else Path(out) / "tomography")
    bg = background_for(cfg, hist)
    res = analysis.ScenarioResult(name=name, params=hist.params, series=series)
    res.peak = analysis.peak_concurrence(
        hist, hist.params.g2_xx, cfg.analysis.peak_width, cfg.tomography.repetitions, cfg.seed, bg
    )
    res.max_window = analysis.max_window_concurrence(series)
    res.weighted = analysis.weighted_average_concurrence(series)
    try:
        res.lifetime = analysis.fit_lifetime(
            hist, cfg.analysis.lifetime_fit_start, series=cfg.analysis.lifetime_series
        )
    except FitError as exc:
        res.lifetime = exc
    try:
        res.fss = analysis.fit_fss(analysis.oscillation_series(hist))
    except FitError as exc:
        res.fss = exc
    try:
        res.regimes = analysis.concurrence_regimes(series, hist.params.irf_fwhm, hist.params.tau_x)
    except ParameterError:
        res.regimes = None
    adir = Path(out) / "analysis"
    man.add_outputs([io.write_curve(series, adir / "concurrence.csv")])
    man.add_outputs([io.dump_json(summary_document(res), adir / "summary.json")])
    man.write(out)
    return res


def run_pipeline(cfg, out, expected_only=False, name="run"):
    if expected_only and cfg.tomography.histogram_source == "sampled":
        raise ConfigError("--expected-only conflicts with tomography.histogram_source = 'sampled'")
    run_simulate(cfg, out, expected_only=expected_only)
    run_reconstruct(cfg, out)
    return run_analyze(cfg, out, name=name)


def load_sweep(path):
    doc = load_json(path)
    variants = doc.get("variants") if isinstance(doc, dict) else None
    if not variants:
        raise ConfigError("sweep: 'variants' must be a non-empty list")
    out = []
    names = set()
    for k, v in enumerate(variants):
        if not isinstance(v, dict) or "name" not in v:
            raise ConfigError(f"sweep.variants[{k}]: needs a 'name'")
        if v["name"] in names or not str(v["name"]).replace("-", "_").replace(".", "_").isidentifier():
            raise ConfigError(f"sweep.variants[{k}].name: {v['name']!r} is duplicate or not a valid directory name")
        names.add(v["name"])
        out.append((v["name"], v.get("overrides", {})))
    return out


def run_sweep(cfg, out, sweep_path, expected_only=False):
    variants = load_sweep(sweep_path)
    configs = [(name, cfg.with_params(**ov)) for name, ov in variants]
    man = Manifest("sweep", cfg)
    man.add_input(sweep_path)
    results = []
    for name, vcfg in configs:
        sub = Path(out) / name
        try:
            results.append(run_pipeline(vcfg.replace(output_dir=str(sub)), sub, expected_only, name))
        except (ParameterError, FitError, ConvergenceError, ValidationError) as exc:
            log.error("variant %s failed: %s", name, exc)
            results.append(analysis.ScenarioResult(name=name, params=vcfg.params, error=str(exc)))
    rows = []
    for r in results:
        if r.error:
            rows.append([r.name, "", "", "", "", "", "", r.error])
            continue
        rows.append(
            [
                r.name,
                r.peak.concurrence,
                r.peak.concurrence_low,
                r.peak.concurrence_high,
                r.max_window,
                r.weighted.value,
                r.weighted.std,
                "",
            ]
        )
    man.add_outputs(
        [
            io.write_table(
                Path(out) / "sweep_summary.csv",
                ["scenario", "peak", "peak_low", "peak_high", "max_window", "weighted_average", "weighted_std", "error"],
                rows,
            ),
            io.write_long_format([(r.name, r.series) for r in results if not r.error], Path(out) / "scenarios_long.csv"),
        ]
    )
    man.write(out)
    return results


# -- argument parsing ---------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="qdcascade", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, windows=False):
        p.add_argument("--config", required=True, help="run configuration JSON")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory (overrides config output_dir)")
        if windows:
            p.add_argument("--windows", default=None, help="window width and step in ps, e.g. 100,100")
        return p

    p = common(sub.add_parser("simulate", help="write expected (and sampled) histograms"))
    p.add_argument("--expected-only", action="store_true", help="skip Poisson sampling")

    p = common(sub.add_parser("reconstruct", help="windowed MLE tomography"), windows=True)
    p.add_argument("--histograms", default=None, help="histogram CSV (default from output dir)")

    p = common(sub.add_parser("analyze", help="lifetime, FSS and concurrence summaries"))
    p.add_argument("--histograms", default=None)
    p.add_argument("--tomography", default=None, help="tomography output directory")

    p = common(sub.add_parser("sweep", help="run the pipeline for each variant"), windows=True)
    p.add_argument("--sweep", required=True, help="sweep JSON with a 'variants' list")
    p.add_argument("--expected-only", action="store_true")

    p = common(sub.add_parser("pipeline", help="simulate, reconstruct and analyze"), windows=True)
    p.add_argument("--expected-only", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        with output_lock(cfg.output_dir) as out:
            if args.command == "simulate":
                run_simulate(cfg, out, args.expected_only)
            elif args.command == "reconstruct":
                run_reconstruct(cfg, out, args.histograms)
            elif args.command == "analyze":
                run_analyze(cfg, out, args.histograms, args.tomography)
            elif args.command == "sweep":
                run_sweep(cfg, out, args.sweep, args.expected_only)
            elif args.command == "pipeline":
                run_pipeline(cfg, out, args.expected_only)
    except (ConfigError, ValidationError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except ConvergenceError as exc:
        print(f"error: numerical non-convergence: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
