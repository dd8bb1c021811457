"""Command-line front end.

One subcommand per experiment or identity suite, plus ``describe``, ``phi``,
``sample-env``, and ``flow-build``.  Runs are configured by an INI file with
``[graph]``, ``[weights]``, and ``[experiment]`` sections; command-line flags
override file values.  No environment variables are consulted.

Exit codes: 0 all checks passed, 1 an acceptance flag failed, 2 invalid
usage or configuration.  Reports are canonical JSON (identical config and
seed give byte-identical bytes); wall-clock timestamps go to a ``.meta.json``
sidecar so they never break reproducibility.
"""

from __future__ import annotations

import argparse
import configparser
import datetime
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .environment import dump_environment, lattice_weights, sample_environment
from .experiments import (
    ConfigError,
    ExperimentConfig,
    ExperimentReport,
    run_experiment,
    z_pattern,
)
from .flows import (
    alpha_boosted,
    boosted_min_cut,
    build_vertex_flow,
    kappa,
    kappa_pair_formula,
    kappa_tilde,
    lift_to_arc_flow,
    min_cut_lattice,
)
from .graph import (
    BoxGraphSpec,
    GraphError,
    TorusSpec,
    box_model,
    load_graph_file,
    torus_model,
)
from .hypergeom import HypergeomParams, ParameterError, phi_mc, phi_quadrature

EXIT_OK = 0
EXIT_FLAG_FAILED = 1
EXIT_USAGE = 2

_EXPERIMENT_NAMES = ("duality", "reversal", "green-moment", "invariant-measure", "trap-times")


def _parse_floats(text: str) -> list[float]:
    return [float(tok) for tok in text.replace(";", ",").split(",") if tok.strip()]


def _parse_matrix(text: str) -> list[list[float]]:
    return [[float(tok) for tok in row.split(",") if tok.strip()] for row in text.split(";")]


def _load_ini(path: str) -> dict:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")
    out: dict = {"graph": {}, "weights": {}, "experiment": {}}
    known = set(out)
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"unknown config section [{section}]")
        out[section] = dict(parser.items(section))
    return out


_LIST_KEYS = {"n_values", "s_values", "p_values", "directions", "z_choices"}
_INT_KEYS = {"seed", "n_environments", "n_samples", "n_cycles", "n_cases", "boost_direction"}


def _experiment_config(name: str, ini: dict, args) -> ExperimentConfig:
    graph: dict = {}
    gsec = ini.get("graph", {})
    if gsec:
        graph["kind"] = gsec.get("kind", "torus")
        for key in ("d", "N"):
            if key.lower() in gsec or key in gsec:
                graph[key] = int(gsec.get(key, gsec.get(key.lower())))
    weights: dict = {}
    wsec = ini.get("weights", {})
    if "alpha" in wsec:
        vals = _parse_floats(wsec["alpha"])
        weights["alpha"] = vals[0] if len(vals) == 1 else vals
    if "z" in wsec:
        z = wsec["z"]
        weights["Z"] = z if z in ("ones", "diagonal_boost", "backtrack_damp") else _parse_matrix(z)
    if "special_alpha" in wsec:
        weights["special_alpha"] = float(wsec["special_alpha"])

    esec = dict(ini.get("experiment", {}))
    esec.pop("name", None)
    kwargs: dict = {}
    grid: dict = {}
    for key, raw in esec.items():
        if key in _INT_KEYS and key in ("seed", "n_environments", "n_samples"):
            kwargs[key] = int(raw)
        elif key == "tol":
            kwargs["tol"] = float(raw)
        elif key in _LIST_KEYS:
            canon = {"n_values": "N_values", "z_choices": "Z_choices"}.get(key, key)
            if canon == "Z_choices":
                grid[canon] = [tok.strip() for tok in raw.split(",") if tok.strip()]
            else:
                grid[canon] = _parse_floats(raw)
        elif key in _INT_KEYS:
            grid[key] = int(raw)
        else:
            raise ConfigError(f"unknown experiment option {key!r}")
    if "N_values" in grid:
        grid["N_values"] = [int(v) for v in grid["N_values"]]
    if "directions" in grid:
        grid["directions"] = [int(v) for v in grid["directions"]]

    if args.seed is not None:
        kwargs["seed"] = args.seed
    if args.replicas is not None:
        kwargs["n_environments"] = args.replicas
    if args.tol is not None:
        kwargs["tol"] = args.tol
    return ExperimentConfig(name, graph=graph, weights=weights, grid=grid, **kwargs)


def _report_schema() -> dict:
    text = resources.files("hyperwalk").joinpath("schemas/report-v1.json").read_text()
    return json.loads(text)


def validate_report_dict(report: dict) -> None:
    import jsonschema

    jsonschema.validate(report, _report_schema())


def _write_outputs(report: ExperimentReport, args) -> None:
    validate_report_dict(report.to_dict())
    payload = report.to_json()
    fmt = args.format
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        if fmt in ("json", "both"):
            out.write_text(payload)
            sidecar = {
                "written_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
                "report": out.name,
            }
            out.with_suffix(out.suffix + ".meta.json").write_text(
                json.dumps(sidecar, indent=2) + "\n"
            )
        if fmt in ("csv", "both"):
            for key, values in report.per_environment.items():
                safe = key.replace("=", "-").replace(",", "_")
                csv_path = out.with_name(out.stem + f".{safe}.csv")
                with csv_path.open("w") as fh:
                    fh.write("env_index,seed_stream,value\n")
                    for i, v in enumerate(np.asarray(values)):
                        fh.write(f"{i},{i},{v!r}\n")
    else:
        sys.stdout.write(payload)


def _lattice_model_from(ini: dict):
    gsec = ini.get("graph", {})
    kind = gsec.get("kind", "torus")
    d = int(gsec.get("d", 3))
    N = int(gsec.get("n", gsec.get("N", 2)))
    if kind == "torus":
        return torus_model(TorusSpec(d, N))
    if kind == "box":
        return box_model(BoxGraphSpec(d, N))
    raise ConfigError(f"unknown graph kind {kind!r}")


def cmd_describe(args) -> int:
    """Summarize a graph/weight configuration: counts, trap parameters, cuts."""
    if args.graph_file:
        g, h, weights = load_graph_file(args.graph_file)
        summary = {
            "vertices": g.n_vertices,
            "edges": g.n_edges,
            "arcs": h.n_arcs,
            "max_out_degree": int(g.out_degree.max()),
        }
        print(json.dumps(summary, indent=2, sort_keys=True))
        return EXIT_OK
    ini = _load_ini(args.config) if args.config else {"graph": {}, "weights": {}}
    model = _lattice_model_from(ini)
    meta = model.graph.lattice
    wsec = ini.get("weights", {})
    alpha = _parse_floats(wsec["alpha"]) if "alpha" in wsec else [1.0]
    alpha_val = alpha[0] if len(alpha) == 1 else alpha
    zspec = wsec.get("z", "ones")
    Z = zspec if isinstance(zspec, str) and zspec in (
        "ones",
        "diagonal_boost",
        "backtrack_damp",
    ) else _parse_matrix(zspec)
    ws = lattice_weights(model, alpha_val, z_pattern(Z, meta.d))
    summary = {
        "kind": meta.kind,
        "d": meta.d,
        "N": meta.N,
        "vertices": model.n_vertices,
        "edges": model.n_edges,
        "arcs": model.n_arcs,
        "kappa": kappa(ws),
        "kappa_tilde": kappa_tilde(ws),
        "kappa_pair_formula": kappa_pair_formula(ws),
    }
    if args.min_cut:
        summary["min_cut_unboosted"] = min_cut_lattice(
            ws.pattern_alpha, max(meta.N, 2), meta.d
        ).value
        summary["min_cut_boosted"] = boosted_min_cut(ws, max(meta.N, 2), 0).value
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_phi(args) -> int:
    """Evaluate the simplex integral for explicit (alpha, beta, Z)."""
    alpha = _parse_floats(args.alpha)
    beta = _parse_floats(args.beta)
    Z = _parse_matrix(args.Z)
    params = HypergeomParams(alpha, beta, Z)
    if args.mc:
        est = phi_mc(params, args.mc, args.seed or 0)
        print(
            json.dumps(
                {
                    "value": est.mean,
                    "method": "monte-carlo",
                    "std_error": est.std_error,
                    "n_samples": est.n_samples,
                },
                indent=2,
                sort_keys=True,
            )
        )
    else:
        tol = args.tol if args.tol is not None else 1e-8
        val = phi_quadrature(params, tol)
        print(
            json.dumps(
                {"value": val, "method": "quadrature", "tol": tol},
                indent=2,
                sort_keys=True,
            )
        )
    return EXIT_OK


def cmd_sample_env(args) -> int:
    """Sample one environment and write a replayable dump."""
    ini = _load_ini(args.config)
    model = _lattice_model_from(ini)
    cfg = _experiment_config("duality", ini, args)  # reuse weight parsing
    from .experiments import weights_from_config

    ws = weights_from_config(model, cfg.weights)
    seed = args.seed if args.seed is not None else cfg.seed
    env = sample_environment(model, ws, seed)
    out = args.out or "environment.json"
    dump_environment(env, out, provenance={"seed": seed})
    print(f"wrote {out}")
    return EXIT_OK


def cmd_flow_build(args) -> int:
    """Build the capacity-respecting torus flow and report its invariants."""
    ini = _load_ini(args.config)
    model = _lattice_model_from(ini)
    meta = model.graph.lattice
    if meta.kind != "torus":
        raise ConfigError("flow-build needs a torus graph")
    from .experiments import weights_from_config

    cfg = _experiment_config("duality", ini, args)
    ws = weights_from_config(model, cfg.weights)
    boosted = alpha_boosted(model, ws, 0)
    vf = build_vertex_flow(model, boosted.alpha)
    lift = lift_to_arc_flow(model, vf)
    from .graph import div_arc

    resid = float(
        np.abs(
            div_arc(model.arcs, lift.Theta) - lift.divergence_target(model.n_edges)
        ).max()
    )
    summary = {
        "N": meta.N,
        "d": meta.d,
        "min_cut": vf.strength,
        "vertex_flow_energy": vf.energy,
        "arc_flow_energy": float(lift.Theta @ lift.Theta),
        "arc_divergence_residual": resid,
        "strength": lift.strength,
    }
    payload = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(payload)
    sys.stdout.write(payload)
    return EXIT_OK


def cmd_run(name: str, args) -> int:
    """Run one experiment and write its report; exit 1 if any flag fails."""
    ini = _load_ini(args.config) if args.config else {"graph": {}, "weights": {}, "experiment": {}}
    cfg = _experiment_config(name, ini, args)
    _precheck(name, cfg)
    report = run_experiment(cfg)
    _write_outputs(report, args)
    return EXIT_OK if report.passed else EXIT_FLAG_FAILED


def _precheck(name: str, cfg: ExperimentConfig) -> None:
    # config errors must surface as exit 2 before any computation starts
    if name == "reversal":
        from .graph import div_vertex
        from .experiments import _reversal_model

        model, ws = _reversal_model(cfg)
        if np.abs(div_vertex(model.graph, ws.alpha)).max() > 1e-9:
            raise ConfigError("div(alpha) must vanish for the reversal suite")
    if name == "green-moment":
        d = int(cfg.graph.get("d", 3))
        pat = np.broadcast_to(
            np.asarray(cfg.weights.get("alpha", 1.0), dtype=np.float64), (2 * d,)
        )
        ktilde = float(pat.min())
        for s in cfg.grid.get("s_values", [0.5 * ktilde]):
            if not (0.0 < float(s) < ktilde):
                raise ConfigError(
                    f"moment order s={s} outside the proven window (0, kappa_tilde={ktilde})"
                )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hyperwalk",
        description="One-dependent walks in hypergeometric random environments: "
        "identity suites and numerical experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config with [graph], [weights], [experiment]")
    common.add_argument("--seed", type=int, default=None, help="override the seed")
    common.add_argument("--replicas", type=int, default=None, help="override n_environments")
    common.add_argument("--threads", type=int, default=1, help="worker pool size")
    common.add_argument("--out", default=None, help="output path for the JSON report")
    common.add_argument(
        "--format", choices=("json", "csv", "both"), default="json", help="output format"
    )
    common.add_argument("--tol", type=float, default=None, help="override tolerance")

    p = sub.add_parser("describe", parents=[common], help="summarize a graph/weights config")
    p.add_argument("--graph-file", help="explicit graph file (JSON)")
    p.add_argument("--min-cut", action="store_true", help="also compute box min-cuts")

    p = sub.add_parser("phi", parents=[common], help="evaluate the simplex integral")
    p.add_argument("--alpha", required=True, help="comma list, e.g. 1.0,2.0")
    p.add_argument("--beta", required=True, help="comma list")
    p.add_argument("--Z", required=True, help="semicolon-separated rows, e.g. '1,2;2,1'")
    p.add_argument("--mc", type=int, default=None, help="Monte Carlo sample count")

    sub.add_parser("sample-env", parents=[common], help="sample and dump one environment")
    sub.add_parser("flow-build", parents=[common], help="build the torus total flow")
    for name in _EXPERIMENT_NAMES:
        sub.add_parser(name, parents=[common], help=f"run the {name} suite")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.exit(EXIT_USAGE, "threads must be >= 1\n")
    try:
        if args.command == "describe":
            return cmd_describe(args)
        if args.command == "phi":
            return cmd_phi(args)
        if args.command == "sample-env":
            return cmd_sample_env(args)
        if args.command == "flow-build":
            return cmd_flow_build(args)
        return cmd_run(args.command, args)
    except (ConfigError, ParameterError, GraphError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
