"""Deterministic command-line front end for collapse-lab.

Every output row carries the sha256 prefix of the config file it came from;
CSV files use '.' decimals, LF line endings and a mandatory header row, and
all files are written atomically (temp + rename).  Repeated runs with
identical inputs and seed produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__, fiber_volume as fv, flow as flow_mod, gke as gke_mod, lct as lct_mod
from . import metric as metric_mod
from .density import SingularDensity, build_density, parse_punctures
from .errors import InvalidInputError, NumericalError
from .grids import GridField, TorusDomain


# ---------------------------------------------------------------------------
# I/O plumbing
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_text_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    write_text_atomic(path, "\n".join(lines) + "\n")


def write_json(path, obj) -> None:
    write_text_atomic(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def config_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:12]


def load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise InvalidInputError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"malformed JSON in {path}: {exc}") from exc


def _label(doc: dict, path) -> str:
    return str(doc.get("label", Path(path).stem))


# ---------------------------------------------------------------------------
# Config -> objects
# ---------------------------------------------------------------------------

def _background_from(doc, dom: TorusDomain):
    if doc in (None, "one"):
        return "one"
    if isinstance(doc, dict) and "samples" in doc:
        path = Path(doc["samples"])
        arr = np.load(path) if path.suffix == ".npy" else np.loadtxt(path)
        return GridField(np.asarray(arr, dtype=float), dom)
    raise InvalidInputError(f"unsupported background spec {doc!r}")


def parse_gke_config(doc: dict):
    dom = TorusDomain(int(doc.get("grid_n", 128)), float(doc.get("period", 1.0)))
    density = SingularDensity(
        punctures=parse_punctures(doc.get("punctures", [])),
        background=_background_from(doc.get("background", "one"), dom),
        floor=float(doc.get("floor", 1e-8)),
    )
    lam = float(doc.get("lambda", 1.0 / dom.period ** 2))
    tol = float(doc.get("tol", 1e-10))
    max_iter = int(doc.get("max_iter", 60))
    return dom, density, lam, tol, max_iter


def _rho0_field(doc, dom: TorusDomain, lam: float) -> GridField:
    if doc is None:
        doc = 2.0 * lam
    if isinstance(doc, (int, float)):
        return GridField.constant(dom, float(doc))
    if isinstance(doc, dict):
        base = float(doc.get("base", 1.5))
        amp = float(doc.get("amplitude", 0.5))
        field = GridField.from_function(
            dom, lambda x, y: base + amp * np.cos(2 * np.pi * x / dom.period)
            * np.cos(2 * np.pi * y / dom.period))
        if not np.all(field.values > 0.0):
            raise InvalidInputError("rho0 must stay positive")
        return field
    raise InvalidInputError(f"unsupported rho0 spec {doc!r}")


def parse_metric_config(doc: dict):
    dom = TorusDomain(int(doc.get("grid_n", 64)), float(doc.get("period", 1.0)))
    punctures = parse_punctures(doc.get("punctures", []))
    base_doc = doc.get("base", 0.5)
    if isinstance(base_doc, (int, float)):
        base = GridField.constant(dom, float(base_doc))
    elif isinstance(base_doc, dict) and "gke" in base_doc:
        gdom, density, lam, tol, max_iter = parse_gke_config(
            {**base_doc["gke"], "grid_n": doc.get("grid_n", base_doc["gke"].get("grid_n", 64))})
        F = build_density(density.snapped(gdom), gdom)
        res = gke_mod.gke_solve(F, lam, tol=tol, max_iter=max_iter)
        x, y = gdom.meshgrid()
        background = density.background_at(x, y)
        base = GridField(np.exp(res.psi.values) * background * lam, gdom)
        dom = gdom
        if not punctures:
            punctures = density.snapped(gdom).punctures
    else:
        raise InvalidInputError(f"unsupported base spec {base_doc!r}")
    return metric_mod.ConformalDensity(base, tuple(p for p in punctures))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_lct(args) -> int:
    doc = load_json(args.config)
    data = lct_mod.from_dict(doc)
    beta, n = lct_mod.asymptotic_profile(data)
    print(f"beta={beta} N={n}")
    if args.out:
        write_json(args.out, {
            "kind": "lct",
            "label": _label(doc, args.config),
            "config_hash": config_hash(args.config),
            "beta": str(beta),
            "N": n,
        })
    _manifest(args, [args.config], [args.out] if args.out else [])
    return 0


def cmd_kodaira(args) -> int:
    data = lct_mod.kodaira_resolution(args.type, m=args.m, b=args.b)
    doc = lct_mod.to_dict(data)
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if args.out:
        write_text_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    _manifest(args, [], [args.out] if args.out else [])
    return 0


def _parse_fiber_config(doc: dict) -> fv.LocalModelConfig:
    try:
        exponents = [Fraction(str(c)) for c in doc["exponents"]]
    except KeyError as exc:
        raise InvalidInputError("fiber-volume config needs 'exponents'") from exc
    kwargs = {}
    if "eliminated_index" in doc and doc["eliminated_index"] is not None:
        kwargs["eliminated_index"] = int(doc["eliminated_index"])
    if "weight" in doc:
        kwargs["weight"] = doc["weight"]
    if "radii" in doc:
        kwargs["sample_radii"] = tuple(float(s) for s in doc["radii"])
    return fv.LocalModelConfig(exponents=tuple(exponents), **kwargs)


def cmd_fiber_volume(args) -> int:
    doc = load_json(args.config)
    cfg = _parse_fiber_config(doc)
    chash = config_hash(args.config)
    samples = fv.sample_density(cfg)
    rows = []
    for s, d in samples:
        model = fv.model_density(cfg, s)
        rows.append((chash, s, d, model, d / model))
    write_csv(args.out, ("config_hash", "s", "density", "model", "ratio"), rows)
    outputs = [args.out]
    if args.fit:
        fit = fv.fit_exponents(samples)
        fit_path = args.fit if isinstance(args.fit, str) else str(args.out) + ".fit.json"
        write_json(fit_path, {
            "kind": "fiber-fit",
            "label": _label(doc, args.config),
            "config_hash": chash,
            "beta_hat": fit.beta,
            "N_hat": fit.log_power,
            "c0": fit.offset,
            "beta_exact": str(cfg.beta),
            "N_exact": cfg.log_power,
        })
        outputs.append(fit_path)
    _manifest(args, [args.config], outputs)
    return 0


def cmd_gke(args) -> int:
    doc = load_json(args.config)
    dom, density, lam, tol, max_iter = parse_gke_config(doc)
    chash = config_hash(args.config)
    F = build_density(density, dom)
    res = gke_mod.gke_solve(F, lam, tol=tol, max_iter=max_iter)
    outputs = []
    if args.out_psi:
        if args.format == "npy":
            path = Path(args.out_psi)
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
            os.close(fd)
            np.save(tmp, res.psi.values)
            os.replace(tmp + ".npy", path)
            os.unlink(tmp)
        else:
            x, y = dom.meshgrid()
            rows = [
                (chash, i, j, x[i, j], y[i, j], res.psi.values[i, j])
                for i in range(dom.n) for j in range(dom.n)
            ]
            write_csv(args.out_psi, ("config_hash", "i", "j", "x", "y", "psi"), rows)
        outputs.append(args.out_psi)
    summary = {
        "kind": "gke-summary",
        "label": _label(doc, args.config),
        "config_hash": chash,
        "grid_n": dom.n,
        "lambda": lam,
        "residual_sup": res.residual_sup,
        "psi_min": float(res.psi.values.min()),
        "psi_max": float(res.psi.values.max()),
        "iterations": res.iterations,
    }
    if args.summary:
        write_json(args.summary, summary)
        outputs.append(args.summary)
    print(json.dumps(summary, sort_keys=True))
    _manifest(args, [args.config], outputs)
    return 0


def cmd_flow(args) -> int:
    doc = load_json(args.config)
    dom, density, lam, tol, max_iter = parse_gke_config(doc)
    chash = config_hash(args.config)
    F = build_density(density, dom)
    rho0 = _rho0_field(doc.get("rho0"), dom, lam)
    times = flow_mod.default_time_grid(
        float(doc.get("t0", 0.1)), float(doc.get("t_end", 30.0)),
        int(doc.get("num_times", 16)))
    cfg = flow_mod.FlowConfig(F=F, lam=lam, rho0=rho0, times=times,
                              newton_tol=float(doc.get("newton_tol", 1e-11)),
                              dt=float(doc.get("dt", 0.25)))
    psi = gke_mod.gke_solve(F, lam, tol=tol, max_iter=max_iter).psi
    if args.mode == "continuity":
        states = flow_mod.run_continuity(cfg)
    else:
        states = flow_mod.run_krf(cfg)
    snapped = density.snapped(dom)
    delta = float(doc["delta"]) if "delta" in doc else None
    report = flow_mod.convergence_report(states, psi, cfg, mode=args.mode,
                                         punctures=snapped.punctures, delta=delta)
    rows = [
        (chash, r["t"], r["residual"], r["l1_dist"], r["sup_dist_kdelta"],
         r["sup_phidot"], r["psi_gap_density"])
        for r in report
    ]
    write_csv(args.out, ("config_hash", "t", "residual", "l1_dist",
                         "sup_dist_kdelta", "sup_phidot", "psi_gap_density"), rows)
    _manifest(args, [args.config], [args.out])
    return 0


def _read_pairs(path, columns: int):
    lines = Path(path).read_text().strip().splitlines()
    if not lines:
        raise InvalidInputError(f"empty pairs file {path}")
    rows = []
    for line in lines[1:]:
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != columns:
            raise InvalidInputError(f"expected {columns} columns in {path}: {line!r}")
        rows.append(tuple(parts))
    return rows


def _sample_pairs(g: metric_mod.MetricGraph, count: int, seed: int):
    rng = np.random.default_rng(seed)
    ids = rng.choice(g.num_nodes, size=min(count, g.num_nodes), replace=False)
    ids = np.sort(ids)
    return [(int(a), int(b)) for k, a in enumerate(ids) for b in ids[k + 1:]]


def cmd_metric(args) -> int:
    doc = load_json(args.config)
    rho = parse_metric_config(doc)
    chash = config_hash(args.config)
    g = metric_mod.build_metric_graph(rho, stencil=args.stencil)
    if args.pairs:
        pairs = _read_pairs(args.pairs, 2)
    else:
        pairs = _sample_pairs(g, args.sample, args.seed)
    rows = []
    for a, b in pairs:
        rows.append((chash, a, b, metric_mod.distance(g, a, b)))
    write_csv(args.out, ("config_hash", "a", "b", "distance"), rows)
    outputs = [args.out]
    if args.summary:
        diam = metric_mod.diameter(g)
        summary = {
            "kind": "metric-summary",
            "label": _label(doc, args.config),
            "config_hash": chash,
            "grid_n": g.dom.n,
            "stencil": args.stencil,
            "num_nodes": g.num_nodes,
            "diameter": diam.value,
            "diameter_exact": diam.exact,
            "completion_distances": [
                float(np.median(metric_mod.distances_from(g, pid)))
                for pid in g.puncture_nodes
            ],
        }
        if g.punctures:
            # Shadow of the small-ball diameter display: diam(B_{eps^L}) <= eps/2.
            eps = args.ball_epsilon
            radius = eps ** args.ball_exponent
            checks = []
            for k in range(len(g.punctures)):
                try:
                    bd = metric_mod.ball_diameter(g, f"p{k}", radius)
                except InvalidInputError:
                    bd = 0.0
                checks.append({"puncture": k, "epsilon": eps, "L": args.ball_exponent,
                               "radius": radius, "ball_diameter": bd,
                               "holds": bool(bd <= eps / 2.0)})
            summary["ball_checks"] = checks
        write_json(args.summary, summary)
        outputs.append(args.summary)
    _manifest(args, [args.config], outputs)
    return 0


def cmd_product(args) -> int:
    doc1, doc2 = load_json(args.config1), load_json(args.config2)
    g1 = metric_mod.build_metric_graph(parse_metric_config(doc1), stencil=args.stencil)
    g2 = metric_mod.build_metric_graph(parse_metric_config(doc2), stencil=args.stencil)
    p = metric_mod.ProductSpace(g1, g2)
    chash = f"{config_hash(args.config1)}+{config_hash(args.config2)}"
    pairs = _read_pairs(args.pairs, 4) if args.pairs else [
        ((a1, a2), (b1, b2)) for (a1, b1) in _sample_pairs(g1, args.sample, args.seed)
        for (a2, b2) in _sample_pairs(g2, args.sample, args.seed + 1)
    ][: args.sample ** 2]
    rows = []
    for row in pairs:
        if len(row) == 4:
            a1, a2, b1, b2 = row
        else:
            (a1, a2), (b1, b2) = row
        rows.append((chash, a1, a2, b1, b2,
                     metric_mod.product_distance(p, (a1, a2), (b1, b2))))
    write_csv(args.out, ("config_hash", "a1", "a2", "b1", "b2", "distance"), rows)
    _manifest(args, [args.config1, args.config2], [args.out])
    return 0


def cmd_collapse(args) -> int:
    doc = load_json(args.config)
    chash = config_hash(args.config)
    rho1 = parse_metric_config(doc.get("factor1", {}))
    factor2_doc = doc.get("factor2", {})
    sigmas = [float(s) for s in args.sigma_list.split(",") if s]
    if not sigmas:
        raise InvalidInputError("empty sigma list")
    k = int(doc.get("samples", 6))
    seed = int(doc.get("seed", args.seed))
    stencil = int(doc.get("stencil", 8))
    g1 = metric_mod.build_metric_graph(rho1, stencil=stencil)
    samples1 = np.sort(np.random.default_rng(seed).choice(
        g1.num_nodes, size=min(k, g1.num_nodes), replace=False))
    rows = []
    for sigma in sigmas:
        scaled = dict(factor2_doc)
        base = scaled.get("base", 0.5)
        if not isinstance(base, (int, float)):
            raise InvalidInputError("collapse factor2 base must be a constant")
        scaled["base"] = float(base) * sigma ** 2
        rho2 = parse_metric_config(scaled)
        g2 = metric_mod.build_metric_graph(rho2, stencil=stencil)
        samples2 = np.sort(np.random.default_rng(seed + 1).choice(
            g2.num_nodes, size=min(k, g2.num_nodes), replace=False))
        rep = metric_mod.product_collapse_check(g1, g2, samples1, samples2)
        rows.append((chash, sigma, rep.eps1, rep.eps2, rep.eps3, rep.eps4,
                     rep.eps_max, rep.gh_upper))
    write_csv(args.out, ("config_hash", "sigma", "eps1", "eps2", "eps3", "eps4",
                         "eps_max", "gh_upper"), rows)
    _manifest(args, [args.config], [args.out])
    return 0


_KODAIRA_SWEEP = [
    ("mI0", 2, None), ("mI1", 2, None), ("mI2", 2, None), ("mIb", 2, 3),
    ("I0star", 1, None), ("Ibstar", 1, 2),
    ("II", 1, None), ("III", 1, None), ("IV", 1, None),
    ("IIstar", 1, None), ("IIIstar", 1, None), ("IVstar", 1, None),
]


def kodaira_sweep_rows() -> list[dict]:
    rows = []
    for kind, m, b in _KODAIRA_SWEEP:
        data = lct_mod.kodaira_resolution(kind, m=m, b=b)
        beta, n = lct_mod.asymptotic_profile(data)
        beta_exp, n_exp = lct_mod.kodaira_table_entry(kind, m)
        rows.append({
            "type": kind, "m": m, "b": b,
            "beta": str(beta), "N": n,
            "beta_expected": str(beta_exp), "N_expected": n_exp,
            "match": bool(beta == beta_exp and n == n_exp),
        })
    return rows


def cmd_report(args) -> int:
    entries = []
    for path in args.inputs:
        doc = load_json(path)
        entry = {"path": str(path), "kind": doc.get("kind", "unknown")}
        entry.update({k: v for k, v in doc.items() if k != "kind"})
        entries.append(entry)
    comparisons = []
    fits = {e.get("label"): e for e in entries if e["kind"] == "fiber-fit"}
    for e in entries:
        if e["kind"] == "lct" and e.get("label") in fits:
            fit = fits[e["label"]]
            beta_exact = Fraction(e["beta"])
            comparisons.append({
                "label": e["label"],
                "beta_exact": e["beta"],
                "beta_fit": fit["beta_hat"],
                "beta_abs_error": abs(float(beta_exact) - float(fit["beta_hat"])),
                "N_exact": e["N"],
                "N_fit": fit["N_hat"],
                "match": bool(e["N"] == fit["N_hat"]
                              and abs(float(beta_exact) - float(fit["beta_hat"])) <= 0.01),
            })
    doc = {
        "schema": "collapse-lab/report-v1",
        "version": __version__,
        "entries": entries,
        "comparisons": comparisons,
    }
    if args.kodaira_table:
        doc["kodaira_table"] = kodaira_sweep_rows()
    if args.out:
        write_json(args.out, doc)
    else:
        sys.stdout.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    _manifest(args, list(args.inputs), [args.out] if args.out else [])
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _manifest(args, configs, outputs) -> None:
    path = getattr(args, "manifest", None)
    if not path:
        return
    write_json(path, {
        "command": args.command,
        "configs": [str(c) for c in configs],
        "outputs": [str(o) for o in outputs if o],
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "wall_clock_s": time.time() - args._t0,
    })


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(64)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="collapse-lab")
    parser.add_argument("--version", action="version", version=f"collapse-lab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(func=func, command=name)
        p.add_argument("--manifest", help="write a run manifest JSON here")
        return p

    p = add("lct", cmd_lct, help="exact threshold/log-power of resolution data")
    p.add_argument("config")
    p.add_argument("--out", help="also write the result as JSON")

    p = add("kodaira", cmd_kodaira, help="emit resolution data for a Kodaira type")
    p.add_argument("--type", required=True, choices=lct_mod.KODAIRA_KINDS)
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--b", type=int, default=None)
    p.add_argument("--out")

    p = add("fiber-volume", cmd_fiber_volume, help="sample the local fiber-volume density")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.add_argument("--fit", nargs="?", const=True, default=False,
                   help="append an exponent-fit JSON (optional path)")

    p = add("gke", cmd_gke, help="solve the generalized Kahler-Einstein equation")
    p.add_argument("config")
    p.add_argument("--out-psi")
    p.add_argument("--summary")
    p.add_argument("--format", choices=("csv", "npy"), default="csv")

    p = add("flow", cmd_flow, help="run a base-reduced flow family")
    p.add_argument("config")
    p.add_argument("--mode", choices=("continuity", "krf"), required=True)
    p.add_argument("--out", required=True)

    p = add("metric", cmd_metric, help="distances on a singular conformal metric")
    p.add_argument("config")
    p.add_argument("--stencil", type=int, choices=(8, 16), default=8)
    p.add_argument("--pairs")
    p.add_argument("--sample", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--summary")
    p.add_argument("--ball-epsilon", type=float, default=0.1)
    p.add_argument("--ball-exponent", type=float, default=4.0)

    p = add("product", cmd_product, help="Pythagorean product distances")
    p.add_argument("config1")
    p.add_argument("config2")
    p.add_argument("--stencil", type=int, choices=(8, 16), default=8)
    p.add_argument("--pairs")
    p.add_argument("--sample", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("collapse", cmd_collapse, help="epsilon-isometry maxima under fiber collapse")
    p.add_argument("--config", required=True)
    p.add_argument("--sigma-list", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("report", cmd_report, help="consolidate run outputs into one JSON")
    p.add_argument("inputs", nargs="*")
    p.add_argument("--kodaira-table", action="store_true")
    p.add_argument("--out")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 2
        return 0 if code == 0 else 64
    args._t0 = time.time()
    try:
        return args.func(args)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
