"""Reproducible experiment drivers and machine-readable reports.

Each runner takes an :class:`ExperimentConfig`, runs a deterministic
seeded computation, and returns an :class:`ExperimentReport` whose flags are
pure functions of the stored estimates (see :func:`recompute_flags`).
Reports serialize to canonical JSON: identical config and seed give
byte-identical output; wall-clock metadata lives in a sidecar file only.

Boundedness across torus/box sizes is operationalized as the absence of a
statistically significant (z > 3) monotone increase across the three largest
sizes; the underlying statements are uniform-in-N bounds, which have no
finite test, so the surrogate is recorded alongside the raw estimates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import chain as chain_mod
from . import flows as flows_mod
from .environment import (
    Environment,
    WeightSystem,
    lattice_weights,
    omega_from_u_batch,
    sample_u_batch,
)
from .graph import ArcGraphModel, BoxGraphSpec, TorusSpec, box_model, torus_model
from .hypergeom import (
    Estimate,
    HypergeomParams,
    ParameterError,
    duality_sides,
    estimate_from_samples,
)

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Raised for invalid experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated inputs of one experiment run.

    ``graph``, ``weights``, and ``grid`` are experiment-specific mappings;
    unknown keys are rejected up front so config typos cannot silently
    change a run.
    """

    experiment: str
    seed: int = 0
    n_environments: int = 200
    n_samples: int = 10000
    tol: float = 1e-8
    graph: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)

    _KNOWN_GRID = {
        "s_values",
        "p_values",
        "N_values",
        "directions",
        "n_cases",
        "max_index",
        "entry_range",
        "n_cycles",
        "Z_choices",
        "boost_direction",
    }

    def __post_init__(self):
        if self.n_environments < 2:
            raise ConfigError("n_environments must be >= 2")
        if self.n_samples < 2:
            raise ConfigError("n_samples must be >= 2")
        if self.tol <= 0:
            raise ConfigError("tol must be positive")
        unknown = set(self.grid) - self._KNOWN_GRID
        if unknown:
            raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
        unknown = set(self.graph) - {"kind", "d", "N", "x0"}
        if unknown:
            raise ConfigError(f"unknown graph keys: {sorted(unknown)}")
        unknown = set(self.weights) - {"alpha", "Z", "special_alpha"}
        if unknown:
            raise ConfigError(f"unknown weight keys: {sorted(unknown)}")

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "seed": self.seed,
            "n_environments": self.n_environments,
            "n_samples": self.n_samples,
            "tol": self.tol,
            "graph": _plain(self.graph),
            "weights": _plain(self.weights),
            "grid": _plain(self.grid),
        }


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    return obj


@dataclass
class ExperimentReport:
    """Grid estimates, metadata, and deterministic pass/fail flags."""

    experiment: str
    config: dict
    metadata: dict
    grid: list
    flags: dict
    diagnostics: dict
    per_environment: dict = field(default_factory=dict)  # grid key -> raw values

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "experiment": self.experiment,
            "config": _plain(self.config),
            "metadata": _plain(self.metadata),
            "grid": _plain(self.grid),
            "flags": {k: bool(v) for k, v in sorted(self.flags.items())},
            "diagnostics": _plain(self.diagnostics),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @property
    def passed(self) -> bool:
        return all(self.flags.values())


def estimate_dict(est: Estimate) -> dict:
    return {
        "mean": float(est.mean),
        "std_error": float(est.std_error),
        "n_samples": int(est.n_samples),
    }


# ---------------------------------------------------------------------------
# weight presets


def z_pattern(name_or_matrix, d: int) -> np.ndarray:
    """Resolve a Z pattern: 'ones', a named preset, or an explicit matrix.

    Presets (all strictly positive, genuinely one-dependent):
      * ``diagonal_boost``: straight-ahead pairs weighted 1.5;
      * ``backtrack_damp``: U-turn pairs weighted 0.5.
    """
    two_d = 2 * d
    if isinstance(name_or_matrix, str):
        if name_or_matrix == "ones":
            return np.ones((two_d, two_d))
        if name_or_matrix == "diagonal_boost":
            return np.ones((two_d, two_d)) + 0.5 * np.eye(two_d)
        if name_or_matrix == "backtrack_damp":
            Z = np.ones((two_d, two_d))
            for i in range(two_d):
                Z[i, (i + d) % two_d] = 0.5
            return Z
        raise ConfigError(f"unknown Z preset {name_or_matrix!r}")
    Z = np.asarray(name_or_matrix, dtype=np.float64)
    if Z.shape != (two_d, two_d) or np.any(Z <= 0):
        raise ConfigError("Z must be a strictly positive 2d x 2d matrix")
    return Z


def weights_from_config(model: ArcGraphModel, weights: dict) -> WeightSystem:
    d = model.graph.lattice.d
    alpha = weights.get("alpha", 1.0)
    Z = z_pattern(weights.get("Z", "ones"), d)
    return lattice_weights(
        model, alpha, Z, special_alpha=float(weights.get("special_alpha", 1.0))
    )


# ---------------------------------------------------------------------------
# trend flags


def trend_summary(points: list[dict]) -> dict:
    """Monotone-increase diagnostics over the three largest grid sizes.

    ``points`` carry ``{"N": ..., "estimate": {...}}``; returns the pairwise
    z-score of the largest against the smallest of the last three, plus the
    monotonicity of the point estimates.
    """
    pts = sorted(points, key=lambda p: p["N"])[-3:]
    means = [p["estimate"]["mean"] for p in pts]
    ses = [p["estimate"]["std_error"] for p in pts]
    monotone_up = all(b > a for a, b in zip(means, means[1:]))
    denom = float(np.hypot(ses[-1], ses[0]))
    z = (means[-1] - means[0]) / denom if denom > 0 else (
        0.0 if means[-1] == means[0] else float("inf") * np.sign(means[-1] - means[0])
    )
    return {
        "sizes": [p["N"] for p in pts],
        "monotone_increase": bool(monotone_up),
        "z_largest_vs_smallest": float(z),
        "significant_increase": bool(monotone_up and z > 3.0),
    }


def recompute_flags(report_dict: dict) -> dict:
    """Re-derive every flag of a serialized report from its stored estimates.

    Flags are deterministic functions of (grid, diagnostics, tolerances);
    this is the contract that makes reports auditable after the fact.
    """
    exp = report_dict["experiment"]
    grid = report_dict["grid"]
    diag = report_dict["diagnostics"]
    flags: dict = {}
    if exp == "duality":
        flags["max_relative_residual_ok"] = (
            diag["max_relative_residual"] < diag["residual_threshold"]
        )
    elif exp == "reversal":
        flags["cycle_z_ok"] = diag["max_abs_z"] <= 4.0
        flags["hitting_residual_ok"] = diag["max_hitting_residual"] <= 1e-9
    elif exp == "green_moment":
        flags["inequality_ok"] = diag["n_inequality_violations"] == 0
        for z_name, tr in diag["trends"].items():
            flags[f"bounded[{z_name}]"] = not tr["significant_increase"]
    elif exp == "invariant_measure":
        for key, tr in diag["trends"].items():
            if diag["probe"].get(key, False):
                flags[f"divergence_detected[{key}]"] = tr["significant_increase"]
            else:
                flags[f"bounded[{key}]"] = not tr["significant_increase"]
        if "mean_is_one_z" in diag:
            flags["mean_is_one"] = abs(diag["mean_is_one_z"]) <= 3.0
        flags["flow_bound_ok"] = diag["n_flow_bound_violations"] == 0
    elif exp == "trap_times":
        flags["quenched_geometric_ok"] = abs(diag["quenched_mean_z"]) <= 3.0
        flags["running_mean_consistent"] = diag["running_mean_consistent"]
    return flags


# ---------------------------------------------------------------------------
# runners


def run_duality_sweep(cfg: ExperimentConfig) -> ExperimentReport:
    """Relative duality residuals over random balanced parameter sets."""
    n_cases = int(cfg.grid.get("n_cases", 100))
    max_index = int(cfg.grid.get("max_index", 3))
    lo, hi = cfg.grid.get("entry_range", (0.2, 5.0))
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(1,)))
    grid = []
    worst = 0.0
    while len(grid) < n_cases:
        n = int(rng.integers(1, max_index + 1))
        l = int(rng.integers(1, max_index + 1))
        alpha = rng.uniform(lo, hi, n)
        beta = rng.uniform(lo, hi, l)
        beta *= alpha.sum() / beta.sum()
        if beta.min() < lo or beta.max() > hi:
            continue
        Z = rng.uniform(lo, hi, (l, n))
        lhs, rhs = duality_sides(HypergeomParams(alpha, beta, Z), cfg.tol)
        rel = abs(lhs - rhs) / max(abs(lhs), abs(rhs))
        worst = max(worst, rel)
        grid.append(
            {
                "point": {"case": len(grid), "n": n, "l": l},
                "values": {"lhs": lhs, "rhs": rhs, "relative_residual": rel},
            }
        )
    diagnostics = {
        "max_relative_residual": worst,
        "residual_threshold": 1e-6,
    }
    report = ExperimentReport(
        "duality",
        cfg.to_dict(),
        {"n_cases": n_cases, "quadrature_tol": cfg.tol},
        grid,
        {},
        diagnostics,
    )
    report.flags = recompute_flags(report.to_dict())
    return report


def _reversal_model(cfg: ExperimentConfig):
    gspec = dict(cfg.graph) or {"kind": "torus", "d": 2, "N": 2}
    if gspec.get("kind", "torus") != "torus":
        raise ConfigError("the reversal suite runs on torus graphs")
    model = torus_model(TorusSpec(int(gspec.get("d", 2)), int(gspec.get("N", 2))))
    alpha = cfg.weights.get("alpha", 1.0)
    if np.ndim(alpha) == 1 and len(alpha) == model.n_edges:
        # explicit per-edge weights: may violate the zero-divergence premise,
        # which the caller guard is expected to reject
        ws = weights_from_config(model, {**cfg.weights, "alpha": 1.0})
        ws = ws.with_alpha(np.asarray(alpha, dtype=np.float64))
    else:
        ws = weights_from_config(model, cfg.weights)
    return model, ws


def run_reversal_suite(cfg: ExperimentConfig) -> ExperimentReport:
    """Two-sided cycle-law comparison plus per-environment hitting identities.

    Requires zero vertex divergence of the edge weights (automatic for
    translation-invariant lattice weights); rejected otherwise since the
    reversal law equality is only claimed in the balanced case.
    """
    from .graph import div_vertex

    model, ws = _reversal_model(cfg)
    div = div_vertex(model.graph, ws.alpha)
    if np.abs(div).max() > 1e-9:
        raise ConfigError("div(alpha) must vanish for the reversal suite")
    n_cycles = int(cfg.grid.get("n_cycles", 20))
    cycles = chain_mod.random_cycles(model, n_cycles, cfg.seed)
    results = chain_mod.check_weak_reversal(
        model, ws, cycles, cfg.n_samples, cfg.seed
    )
    grid = []
    max_z = 0.0
    for i, r in enumerate(results):
        max_z = max(max_z, abs(r.z_score))
        grid.append(
            {
                "point": {"cycle": i, "length": len(r.cycle.edges) - 1},
                "values": {
                    "forward_mean": r.forward_mean,
                    "forward_se": r.forward_se,
                    "reversed_mean": r.reversed_mean,
                    "reversed_se": r.reversed_se,
                    "exact": r.exact,
                    "z": r.z_score,
                },
            }
        )
    max_resid = 0.0
    for i in range(cfg.n_environments):
        u = sample_u_batch(model, ws, 1, cfg.seed + 1, first_replica=i)[0]
        omega, denom = omega_from_u_batch(model, ws, u[None, :])
        env = Environment(model, ws, omega[0], u=u, denom=denom[0])
        lhs, rhs = chain_mod.hitting_prob_check(env)
        max_resid = max(max_resid, float(np.abs(lhs - rhs).max()))
    diagnostics = {
        "max_abs_z": max_z,
        "max_hitting_residual": max_resid,
    }
    report = ExperimentReport(
        "reversal",
        cfg.to_dict(),
        {
            "n_cycles": n_cycles,
            "n_samples": cfg.n_samples,
            "n_hitting_environments": cfg.n_environments,
        },
        grid,
        {},
        diagnostics,
    )
    report.flags = recompute_flags(report.to_dict())
    return report


def run_green_moment(cfg: ExperimentConfig) -> ExperimentReport:
    """Moments of the killed Green function across box sizes.

    For each Z choice and box radius, samples environments, solves the
    Green value and the escape probability by independent linear systems,
    and checks the reciprocal inequality per environment.  The proven
    statement needs d >= 3 and moment order below the smallest edge weight;
    orders outside that window are rejected.
    """
    d = int(cfg.graph.get("d", 3))
    if d < 3:
        raise ConfigError("the Green moment experiment needs d >= 3")
    N_values = [int(N) for N in cfg.grid.get("N_values", (4, 8, 12))]
    z_choices = list(cfg.grid.get("Z_choices", ("ones", "diagonal_boost", "backtrack_damp")))
    alpha = cfg.weights.get("alpha", 1.0)
    pat = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (2 * d,))
    ktilde = float(pat.min())
    s_values = cfg.grid.get("s_values")
    if s_values is None:
        s_values = [0.5 * ktilde]
    s_values = [float(s) for s in s_values]
    for s in s_values:
        if not (0.0 < s < ktilde):
            raise ConfigError(
                f"moment order s={s} outside the proven window (0, kappa_tilde={ktilde})"
            )

    kap = flows_mod.kappa(
        lattice_weights(torus_model(TorusSpec(d, 2)), pat)
    )
    grid = []
    per_env: dict = {}
    n_viol = 0
    for zname in z_choices:
        for N in N_values:
            model = box_model(BoxGraphSpec(d, N))
            ws = weights_from_config(model, {"alpha": alpha, "Z": zname})
            u = sample_u_batch(model, ws, cfg.n_environments, cfg.seed)
            greens = np.empty(cfg.n_environments)
            escapes = np.empty(cfg.n_environments)
            for i in range(cfg.n_environments):
                omega, denom = omega_from_u_batch(model, ws, u[i][None, :])
                env = Environment(model, ws, omega[0], u=u[i], denom=denom[0])
                greens[i] = chain_mod.green_function_killed(env)
                escapes[i] = chain_mod.escape_probability(env)
                if greens[i] > 1.0 / escapes[i] + 1e-9 * greens[i]:
                    n_viol += 1
            for s in s_values:
                est = estimate_from_samples(greens**s)
                key = f"Z={zname},s={s:g},N={N}"
                per_env[key] = greens**s
                grid.append(
                    {
                        "point": {"Z": zname, "s": s, "N": N},
                        "estimate": estimate_dict(est),
                        "values": {
                            "max_green": float(greens.max()),
                            "mean_escape": float(escapes.mean()),
                        },
                    }
                )
    trends = {}
    for zname in z_choices:
        for s in s_values:
            pts = [
                {"N": g["point"]["N"], "estimate": g["estimate"]}
                for g in grid
                if g["point"]["Z"] == zname and g["point"]["s"] == s
            ]
            trends[f"Z={zname},s={s:g}"] = trend_summary(pts)
    diagnostics = {
        "n_inequality_violations": n_viol,
        "trends": trends,
    }
    report = ExperimentReport(
        "green_moment",
        cfg.to_dict(),
        {"kappa": kap, "kappa_tilde": ktilde, "d": d},
        grid,
        {},
        diagnostics,
        per_environment=per_env,
    )
    report.flags = recompute_flags(report.to_dict())
    return report


def run_invariant_measure(cfg: ExperimentConfig) -> ExperimentReport:
    """Moments of the normalized root-edge stationary mass across torus sizes.

    ``f_N`` is ``|E| pi(root edge)``; its p-th moments are estimated per
    torus size, the per-sample upper bound through the constructed total
    flow of strength ``p / |E|`` is verified, and stability or growth across
    sizes is flagged.  Points with p below the trap parameter are bounded
    claims; points with p at or above it are divergence probes.
    """
    d = int(cfg.graph.get("d", 3))
    if d < 3:
        raise ConfigError("the invariant measure experiment needs d >= 3")
    N_values = [int(N) for N in cfg.grid.get("N_values", (2, 3, 4))]
    p_values = [float(p) for p in cfg.grid.get("p_values", (1.0, 2.0))]
    boost_dir = int(cfg.grid.get("boost_direction", 0))
    alpha = cfg.weights.get("alpha", 1.0)
    zname = cfg.weights.get("Z", "ones")
    pat = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (2 * d,))

    ws_probe = lattice_weights(torus_model(TorusSpec(d, 2)), pat, z_pattern(zname, d))
    kap = flows_mod.kappa(ws_probe)
    ktilde = flows_mod.kappa_tilde(ws_probe)
    kap_alt = flows_mod.kappa_pair_formula(ws_probe)

    symmetric = bool(np.all(pat == pat[0])) and (
        isinstance(zname, str) and zname == "ones"
    )
    grid = []
    per_env: dict = {}
    n_flow_viol = 0
    flow_meta = {}
    f_one_z = None
    for N in N_values:
        model = torus_model(TorusSpec(d, N))
        ws = weights_from_config(model, {"alpha": alpha, "Z": zname})
        e0 = model.graph.lattice.root_edge
        n_edges = model.n_edges
        u = sample_u_batch(model, ws, cfg.n_environments, cfg.seed)
        omegas, _ = omega_from_u_batch(model, ws, u)
        if n_edges <= 600:
            pis = _chunked_stationary(model, omegas)
        else:
            pis = np.stack(
                [
                    chain_mod.stationary(
                        Environment(model, ws, omegas[i], u=u[i])
                    ).pi
                    for i in range(cfg.n_environments)
                ]
            )
        f = n_edges * pis[:, e0]

        flows_by_p = {}
        for p in p_values:
            if p <= flows_mod.boosted_min_cut(ws, N, boost_dir).value + 1e-12:
                af, vf, m = flows_mod.total_flow_for_exponent(
                    model, ws, p, boost_direction=boost_dir
                )
                flows_by_p[p] = af
                flow_meta[f"N={N},p={p:g}"] = {
                    "min_cut": m,
                    "theta_energy": vf.energy,
                    "Theta_energy": float(af.Theta @ af.Theta),
                }
        for p in p_values:
            vals = f**p
            est = estimate_from_samples(vals)
            key = f"N={N},p={p:g}"
            per_env[key] = vals
            bound_checked = 0
            if p in flows_by_p:
                af = flows_by_p[p]
                # the reversal-ratio bound evaluated through its exactly
                # equal stationary-power form (stable under heavy traps,
                # where tiny stationary masses make the reversed kernel
                # numerically unusable); the equality of the two routes is
                # certified by the flow-identity suite
                from .graph import div_arc

                div = div_arc(model.arcs, af.Theta)
                log_pi = np.log(np.clip(pis, 1e-250, None))
                log_ratio = log_pi @ div
                log_f = p * np.log(np.clip(f, 1e-300, None))
                slack = 1e-9 + 1e-6 * np.abs(log_ratio)
                n_flow_viol += int(np.sum(log_f > log_ratio + slack))
                bound_checked = cfg.n_environments
            grid.append(
                {
                    "point": {"N": N, "p": p},
                    "estimate": estimate_dict(est),
                    "values": {
                        "median": float(np.median(vals)),
                        "max": float(vals.max()),
                        "flow_bound_checked": bound_checked,
                    },
                }
            )
        if symmetric and N == max(N_values):
            est1 = estimate_from_samples(f)
            f_one_z = (est1.mean - 1.0) / est1.std_error if est1.std_error else 0.0

    trends = {}
    probe = {}
    for p in p_values:
        pts = [
            {"N": g["point"]["N"], "estimate": g["estimate"]}
            for g in grid
            if g["point"]["p"] == p
        ]
        key = f"p={p:g}"
        trends[key] = trend_summary(pts)
        probe[key] = bool(p >= kap)
    diagnostics = {
        "trends": trends,
        "probe": probe,
        "n_flow_bound_violations": n_flow_viol,
    }
    if f_one_z is not None:
        diagnostics["mean_is_one_z"] = float(f_one_z)
    report = ExperimentReport(
        "invariant_measure",
        cfg.to_dict(),
        {
            "kappa": kap,
            "kappa_tilde": ktilde,
            "kappa_pair_formula": kap_alt,
            "d": d,
            "flows": flow_meta,
        },
        grid,
        {},
        diagnostics,
        per_environment=per_env,
    )
    report.flags = recompute_flags(report.to_dict())
    return report


def _chunked_stationary(model, omegas, chunk: int = 64):
    out = []
    for i in range(0, omegas.shape[0], chunk):
        out.append(chain_mod.stationary_batch(model, omegas[i : i + chunk]))
    return np.concatenate(out, axis=0)


def run_trap_times(cfg: ExperimentConfig) -> ExperimentReport:
    """Annealed trap-time sweep plus the per-environment geometric check.

    Per environment the time spent in the two-edge trap is geometric with
    mean ``1/(1 - round-trip probability)``; one fixed environment is
    simulated step by step to verify that law, and the annealed sweep draws
    from it to chart running means and the empirical tail.
    """
    d = int(cfg.graph.get("d", 3))
    N = int(cfg.graph.get("N", 3))
    directions = [int(i) for i in cfg.grid.get("directions", range(d))]
    alpha = cfg.weights.get("alpha", 1.0)
    zname = cfg.weights.get("Z", "ones")
    model = torus_model(TorusSpec(d, N))
    ws = weights_from_config(model, {"alpha": alpha, "Z": zname})
    kap = flows_mod.kappa(ws)

    # quenched geometric check in one fixed environment
    from .environment import sample_environment

    env0 = sample_environment(model, ws, cfg.seed)
    mean_q = chain_mod.trap_time_mean_quenched(env0, directions[0])
    sims = np.array(
        [
            chain_mod.trap_time_sample(env0, directions[0], cfg.seed * 1000 + 17 + k)
            for k in range(cfg.n_samples)
        ],
        dtype=np.float64,
    )
    est_q = estimate_from_samples(sims)
    # degenerate small samples (every walk leaves at once) have zero sample
    # spread; floor the uncertainty by the binomial error of the analytic
    # round-trip probability pushed through the geometric mean
    q_rt = chain_mod.trap_round_trip_prob(env0, directions[0])
    se_floor = float(
        np.sqrt(q_rt * (1.0 - q_rt) / cfg.n_samples) / (1.0 - q_rt) ** 2
    )
    z_q = (est_q.mean - mean_q) / max(est_q.std_error, se_floor)

    # annealed sweep: environment-level round-trip probabilities, geometric draws
    n_env = cfg.n_environments
    u = sample_u_batch(model, ws, n_env, cfg.seed + 1)
    omegas, _ = omega_from_u_batch(model, ws, u)
    h = model.arcs
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(5,)))
    grid = []
    per_env: dict = {}
    consistent = True
    for i_dir in directions:
        e_fwd, e_back = chain_mod.trap_edges(model, i_dir)
        a1 = h.arc_index(e_fwd, e_back)
        a2 = h.arc_index(e_back, e_fwd)
        q = omegas[:, a1] * omegas[:, a2]
        t = rng.geometric(1.0 - q).astype(np.float64)
        per_env[f"direction={i_dir}"] = t
        running = np.cumsum(t) / np.arange(1, n_env + 1)
        half = running[n_env // 2 :]
        rel_fluct = float((half.max() - half.min()) / max(half[-1], 1e-300))
        tail_index = _hill_tail_index(t)
        est = estimate_from_samples(t)
        if kap > 1.5:
            consistent = consistent and rel_fluct < 0.5
        grid.append(
            {
                "point": {"direction": i_dir},
                "estimate": estimate_dict(est),
                "values": {
                    "running_mean_rel_fluctuation": rel_fluct,
                    "hill_tail_index": tail_index,
                    "max_time": float(t.max()),
                },
            }
        )
    diagnostics = {
        "quenched_mean_z": float(z_q),
        "quenched_mean_analytic": float(mean_q),
        "quenched_mean_simulated": estimate_dict(est_q),
        "running_mean_consistent": bool(consistent),
    }
    report = ExperimentReport(
        "trap_times",
        cfg.to_dict(),
        {"kappa": kap, "kappa_tilde": flows_mod.kappa_tilde(ws), "d": d, "N": N},
        grid,
        {},
        diagnostics,
        per_environment=per_env,
    )
    report.flags = recompute_flags(report.to_dict())
    return report


def _hill_tail_index(t: np.ndarray, top_fraction: float = 0.05) -> float | None:
    """Hill estimator over the top order statistics; None when the sample
    has no usable tail (all values tiny)."""
    t = np.sort(t[t > 0])[::-1]
    k = max(int(len(t) * top_fraction), 10)
    if len(t) <= k or t[k] <= 1.0:
        return None
    logs = np.log(t[:k]) - np.log(t[k])
    m = float(logs.mean())
    return 1.0 / m if m > 0 else None


RUNNERS = {
    "duality": run_duality_sweep,
    "reversal": run_reversal_suite,
    "green-moment": run_green_moment,
    "invariant-measure": run_invariant_measure,
    "trap-times": run_trap_times,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    try:
        runner = RUNNERS[cfg.experiment]
    except KeyError:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}") from None
    return runner(cfg)
