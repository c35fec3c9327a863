"""Command-line front end: ``wavecip simulate | invert | stability | report``.

Exit codes: 0 success, 2 bad configuration, 3 bad data, 4 bad geometry,
1 for any other solver failure.
"""

import argparse
import logging
import sys
from pathlib import Path

from . import io as wio
from .config import load_config
from .exceptions import ConfigError, DataError, GeometryError, ShapeError, WavecipError
from .forward import Observation

log = logging.getLogger("wavecip")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA, EXIT_GEOMETRY = 0, 1, 2, 3, 4


def _config(args):
    cfg = load_config(args.config)
    if getattr(args, "delta", None) is not None:
        cfg = cfg.with_section("noise", delta=float(args.delta))
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_section("noise", seed=int(args.seed))
    if getattr(args, "levels", None) is not None:
        cfg = cfg.with_section("refine", levels=int(args.levels))
    return cfg


def cmd_simulate(args):
    from .synthdata import add_noise, generate_observations

    cfg = _config(args)
    trace = generate_observations(args.test, cfg)
    trace = add_noise(trace, cfg.noise.delta, cfg.noise.seed)
    out = Path(args.out or f"trace_test{args.test}.csv")
    wio.write_trace(out, trace, cfg)
    print(f"wrote {out} (config {cfg.digest()}, seed {cfg.noise.seed}, delta {cfg.noise.delta})")
    return EXIT_OK


def cmd_invert(args):
    from .config import build_setup
    from .optimizer import LOG_COLUMNS
    from .refine import refine_and_reinvert

    cfg = _config(args)
    trace = wio.read_trace(args.trace)
    setup = build_setup(cfg)
    try:
        Observation.matching(setup.grid, trace.x1, trace.ds)
    except ShapeError as exc:
        raise DataError(f"{args.trace}: {exc}") from None
    if abs(trace.tau - setup.time_grid.tau) > 1e-12 or trace.nt != setup.time_grid.nt:
        raise DataError(f"{args.trace}: tau={trace.tau:g}, nt={trace.nt} do not match the "
                        f"config (tau={setup.time_grid.tau:g}, nt={setup.time_grid.nt})")
    test_id = args.test if args.test is not None else trace.meta.get("test")
    cfg = cfg.with_section("noise", delta=float(trace.meta.get("delta", cfg.noise.delta)))
    results = refine_and_reinvert(trace, cfg, test_id=test_id)

    out = Path(args.out or "run")
    seed = trace.meta.get("seed", cfg.noise.seed)
    summaries = []
    for r in results:
        head = wio.provenance(cfg, seed=seed, level=r.level, reason=r.state.reason.replace(" ", "_"))
        wio.write_field(out / f"field_level{r.level}.csv", r.state.field, head)
        if r.state.gradient is not None:
            wio.write_field(out / f"gradient_level{r.level}.csv", r.state.field, head,
                            names=("g_rho", "g_p"), arrays=r.state.gradient)
        wio.write_table(out / f"log_level{r.level}.csv", head, LOG_COLUMNS + ("increase",),
                        r.state.log)
        summaries.append(r.summary)
        if r.note:
            log.warning("level %d: %s", r.level, r.note)
    wio.write_table(out / "summary.csv", wio.provenance(cfg, seed=seed), wio.SUMMARY_COLUMNS,
                    summaries)
    for s in summaries:
        print(",".join(wio.fmt(s.get(c)) for c in wio.SUMMARY_COLUMNS))
    return EXIT_OK


def cmd_stability(args):
    from . import stability as S

    cfg = _config(args)
    geom = S.geometry_from_config(cfg)
    st = cfg.stability
    rep = S.constants_report(cfg, geom)
    out = Path(args.out or "stability")
    head = wio.provenance(cfg)
    keys = list(rep)
    wio.write_table(out / "constants.csv", head, ("name", "value"),
                    [dict(name=k, value=rep[k]) for k in keys])
    lines = [f"{k:>24s} = {wio.fmt(rep[k])}" for k in keys]
    if args.probe_carleman:
        import numpy as np

        grid = S.probe_grid(geom, st.probe_h)
        X1, X2 = grid.mesh
        A = (X1 - geom.x0[0], X2 - geom.x0[1])
        rng = np.random.default_rng(cfg.noise.seed)
        rows = []
        for k in range(st.probe_functions):
            f = S.sine_mode(grid) if k == 0 else S.random_h10(grid, rng)
            for row in S.carleman_probe(f, A, 0.0, st.probe_s, geom, grid, lam=st.probe_lambda):
                rows.append(dict(function=k, **row))
        wio.write_table(out / "carleman.csv", head, ("function", "s", "log_lhs", "log_rhs", "ratio"),
                        rows)
        lines.append("carleman probe: function s ratio")
        lines += [f"  {r['function']} {wio.fmt(r['s'])} {wio.fmt(r['ratio'])}" for r in rows]
    if args.lipschitz:
        rows, summ = S.lipschitz_ratio_experiment(cfg, geom)
        wio.write_table(out / "lipschitz.csv", head, ("perturbation", "eps", "lhs", "rhs", "ratio"),
                        rows)
        lines += [f"lipschitz {k} = {wio.fmt(v)}" for k, v in summ.items()]
    text = head + "\n" + "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


_MESH_ORDER = {"coarse": 0}


def _mesh_key(m):
    return (_MESH_ORDER.get(m, 1), m)


def collect_report(paths):
    """Merge run summaries: level 0 as ``coarse``, the deepest level as ``refined<L>``.

    Paths may be run directories, summary files, or earlier reports (which
    pass through unchanged, so re-aggregation is idempotent).
    """
    rows = {}
    for p in paths:
        p = Path(p)
        f = p / "summary.csv" if p.is_dir() else p
        if not f.is_file():
            log.warning("no summary in %s; skipped", p)
            continue
        _, table = wio.read_table(f)
        if not table:
            continue
        if "mesh" in table[0]:
            picked = table
        else:
            levels = sorted(table, key=lambda r: int(r["level"]))
            picked = [dict(levels[0], mesh="coarse")]
            if len(levels) > 1:
                picked.append(dict(levels[-1], mesh=f"refined{levels[-1]['level']}"))
        for r in picked:
            key = (r["test"], r["delta"], r["mesh"])
            rows.setdefault(key, {c: r.get(c, "") for c in wio.REPORT_COLUMNS})

    def sort_key(k):
        test, delta, mesh = k
        return (int(test) if test.lstrip("-").isdigit() else 0, test, float(delta or 0),
                _mesh_key(mesh))

    return [rows[k] for k in sorted(rows, key=sort_key)]


def cmd_report(args):
    rows = collect_report(args.runs)
    if not rows:
        log.warning("no summaries found; writing an empty table")
    out = Path(args.out or "report.csv")
    wio.write_table(out, "# " + f"rows={len(rows)} version={wio.__version__}", wio.REPORT_COLUMNS,
                    rows)
    print(out.read_text(), end="")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="wavecip", description="Coefficient inversion for the "
                                "2-D wave equation from backscattered boundary data.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="synthetic boundary trace for a test target")
    s.add_argument("--config")
    s.add_argument("--test", type=int, choices=(1, 2, 3, 4), default=1)
    s.add_argument("--delta", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("invert", help="reconstruct rho and p from a trace")
    s.add_argument("trace")
    s.add_argument("--config")
    s.add_argument("--test", type=int, choices=(1, 2, 3, 4),
                   help="target used for error columns (default: from the trace header)")
    s.add_argument("--levels", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_invert)

    s = sub.add_parser("stability", help="stability constants and probes")
    s.add_argument("--config")
    s.add_argument("--probe-carleman", action="store_true")
    s.add_argument("--lipschitz", action="store_true", help="run the Lipschitz ratio experiment")
    s.add_argument("--out")
    s.set_defaults(func=cmd_stability)

    s = sub.add_parser("report", help="merge run summaries into one table")
    s.add_argument("runs", nargs="*")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ShapeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except GeometryError as exc:
        print(f"geometry error: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except WavecipError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
