"""Declarative experiment documents: parse, run, and report.

An experiment document names an environment and a map (built-in fixtures or
inline tables), picks an inverse mode and discounting, lists the bound
certificates to check, and says where the JSON report (and optionally a
value-grid CSV) should go.  Reports are deterministic for a fixed document.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

from .abstraction import HomomorphismMap
from .certify import (
    CERTIFICATE_KINDS,
    BoundCertificate,
    CertificationContext,
    certify,
)
from .abstraction import identity_map
from .fixtures import (
    GridWorld,
    GridWorldSpec,
    RegionChain,
    build_gridworld,
    build_modified_gridworld,
    build_q_uniform_map,
    build_region_chain,
    grid_values,
    map_from_table,
    process_from_table,
    random_process,
    REFERENCE_GRID_VALUES,
)
from .history import (
    DiscountConfig,
    HistoryPolicy,
    OriginalProcess,
    context_universe,
    optimal_q,
)
from .solver import solve_regional_system

SCHEMA_VERSION = 1


class SpecError(ValueError):
    """Unparseable or inconsistent experiment document."""


@dataclass
class ExperimentSpec:
    environment: Any
    map: Any = "builtin"
    policy: str = "uniform"
    inverse_mode: str = "uniform"
    gamma: float = 0.5
    horizon: int = 12
    depth: int = 4
    tolerance: float = 1e-10
    seed: int = 0
    certificates: tuple[str, ...] = ()
    report_path: Optional[str] = None
    grid_csv_path: Optional[str] = None
    environment_options: Mapping[str, Any] = field(default_factory=dict)

    @classmethod
    def from_document(cls, doc: Mapping[str, Any]) -> "ExperimentSpec":
        if not isinstance(doc, Mapping):
            raise SpecError("experiment document must be a JSON object")
        known = {"environment", "map", "policy", "inverse_mode", "gamma",
                 "horizon", "depth", "tolerance", "seed", "certificates",
                 "outputs", "environment_options"}
        unknown = set(doc) - known
        if unknown:
            raise SpecError(f"unknown fields: {sorted(unknown)}")
        if "environment" not in doc:
            raise SpecError("missing required field 'environment'")
        outputs = doc.get("outputs", {}) or {}
        certificates = tuple(doc.get("certificates", ()))
        for kind in certificates:
            if kind not in CERTIFICATE_KINDS:
                raise SpecError(f"unknown certificate kind {kind!r}")
        spec = cls(
            environment=doc["environment"],
            map=doc.get("map", "builtin"),
            policy=doc.get("policy", "uniform"),
            inverse_mode=doc.get("inverse_mode", "uniform"),
            gamma=float(doc.get("gamma", 0.5)),
            horizon=int(doc.get("horizon", 12)),
            depth=int(doc.get("depth", 4)),
            tolerance=float(doc.get("tolerance", 1e-10)),
            seed=int(doc.get("seed", 0)),
            certificates=certificates,
            report_path=outputs.get("report"),
            grid_csv_path=outputs.get("grid_csv"),
            environment_options=doc.get("environment_options", {}) or {},
        )
        if not (0.0 <= spec.gamma < 1.0):
            raise SpecError("gamma must lie in [0, 1)")
        if spec.horizon < 1 or spec.depth < 0:
            raise SpecError("horizon must be >= 1 and depth >= 0")
        if spec.depth > spec.horizon:
            raise SpecError("depth must not exceed the horizon")
        return spec

    def echo(self) -> dict:
        return {
            "environment": self.environment,
            "map": self.map,
            "policy": self.policy,
            "inverse_mode": self.inverse_mode,
            "gamma": self.gamma,
            "horizon": self.horizon,
            "depth": self.depth,
            "tolerance": self.tolerance,
            "seed": self.seed,
            "certificates": list(self.certificates),
            "outputs": {"report": self.report_path, "grid_csv": self.grid_csv_path},
            "environment_options": dict(self.environment_options),
        }


@dataclass
class ResolvedExperiment:
    spec: ExperimentSpec
    process: OriginalProcess
    psi: HomomorphismMap
    policy: HistoryPolicy
    behavior: Optional[HistoryPolicy]
    inverse_mode: str
    cfg: DiscountConfig
    universe: list
    gridworld: Optional[GridWorld] = None
    chain: Optional[RegionChain] = None


def _grid_spec_from_options(opts: Mapping[str, Any]) -> GridWorldSpec:
    """Coerce JSON-shaped grid options (lists for cells) into a spec."""
    kwargs = dict(opts)
    if "blocked" in kwargs:
        kwargs["blocked"] = frozenset(tuple(c) for c in kwargs["blocked"])
    for key in ("goal", "start"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    try:
        return GridWorldSpec(**kwargs)
    except TypeError as exc:
        raise SpecError(f"bad grid options: {exc}") from exc


def _resolve_environment(spec: ExperimentSpec, cfg: DiscountConfig):
    env = spec.environment
    opts = dict(spec.environment_options)
    if isinstance(env, Mapping):
        return process_from_table(env), None, None, None
    if not isinstance(env, str):
        raise SpecError("environment must be a name or an inline table")
    if env == "gridworld":
        world = build_gridworld(
            _grid_spec_from_options(opts) if opts else GridWorldSpec())
        return world.process, world, None, None
    if env == "gridworld-modified":
        bundle = build_modified_gridworld(
            _grid_spec_from_options(opts) if opts else GridWorldSpec(), cfg)
        return bundle.modified.process, bundle.modified, None, bundle
    if env.startswith("region-chain-"):
        case = env.rsplit("-", 1)[-1]
        if case not in ("1", "2", "3"):
            raise SpecError(f"unknown region chain {env!r}")
        chain = build_region_chain(
            int(case), opts.get("gamma", spec.gamma),
            eps=opts.get("eps", 0), eps_prime=opts.get("eps_prime", 0))
        return chain.process, None, chain, None
    if env == "random" or env.startswith("random:"):
        seed = spec.seed if env == "random" else int(env.split(":", 1)[1])
        process, policy = random_process(
            seed,
            n_obs=int(opts.get("n_obs", 3)),
            n_actions=int(opts.get("n_actions", 3)),
            n_rewards=int(opts.get("n_rewards", 2)),
            memory=int(opts.get("memory", 1)),
        )
        return process, None, None, policy
    raise SpecError(f"unknown environment {env!r}")


def resolve(spec: ExperimentSpec) -> ResolvedExperiment:
    """Instantiate every object an experiment document names."""
    cfg = DiscountConfig(gamma=spec.gamma, horizon=spec.horizon)
    process, world, chain, extra = _resolve_environment(spec, cfg)

    # history policy for the on-policy certificate kinds
    if spec.policy == "uniform":
        policy = HistoryPolicy.uniform(process.alphabets)
    elif spec.policy == "builtin":
        if chain is not None:
            policy = chain.policy
        elif isinstance(extra, HistoryPolicy):
            policy = extra
        else:
            raise SpecError("this environment has no builtin policy")
    elif spec.policy == "optimal":
        policy = None  # resolved after the universe exists
    else:
        raise SpecError(f"unknown policy {spec.policy!r}")

    memory_candidates = [process.memory_bound]
    if policy is not None:
        memory_candidates.append(policy.memory_bound)

    # abstraction map
    map_field = spec.map
    psi: Optional[HomomorphismMap] = None
    if isinstance(map_field, str) and map_field == "builtin":
        if world is not None:
            psi = world.psi
        elif chain is not None:
            psi = chain.psi
        else:
            raise SpecError("this environment has no builtin map; "
                            "use 'identity' or 'q-uniform:<eps>'")
    if psi is not None:
        memory_candidates.append(psi.memory_bound)
    if any(m is None for m in memory_candidates):
        raise SpecError("experiment documents need memory-bounded components")
    memory = max(memory_candidates)

    universe = context_universe(process, memory, spec.depth)
    if spec.policy == "optimal":
        policy = optimal_q(process, cfg, universe).policy

    if psi is None:
        if isinstance(map_field, Mapping):
            try:
                psi = map_from_table(map_field, process)
            except (KeyError, ValueError) as exc:
                raise SpecError(f"bad inline map: {exc}") from exc
        elif map_field == "identity":
            psi = identity_map(process, universe)
        elif isinstance(map_field, str) and map_field.startswith("q-uniform:"):
            eps_target = float(map_field.split(":", 1)[1])
            opt = optimal_q(process, cfg, universe)
            psi = build_q_uniform_map(process, opt.q, eps_target, cfg, universe)
        else:
            raise SpecError(f"unknown map {map_field!r}")
        if psi.memory_bound is not None and psi.memory_bound > memory:
            universe = context_universe(process, psi.memory_bound, spec.depth)

    # inverse mode and its behavior policy
    mode = spec.inverse_mode
    behavior = None
    if mode == "uniform":
        inverse_mode = "uniform"
    elif mode.startswith("visitation:"):
        inverse_mode = "visitation"
        which = mode.split(":", 1)[1]
        if which == "uniform":
            behavior = HistoryPolicy.uniform(process.alphabets)
        elif which == "builtin":
            if chain is None:
                raise SpecError("visitation:builtin needs a builtin policy")
            behavior = chain.policy
        else:
            raise SpecError(f"unknown visitation policy {which!r}")
        if behavior.memory_bound is None or behavior.memory_bound > memory:
            universe = context_universe(
                process, max(memory, behavior.memory_bound or 0), spec.depth,
                behavior=None)
    else:
        raise SpecError(f"unknown inverse_mode {mode!r}")

    return ResolvedExperiment(spec=spec, process=process, psi=psi, policy=policy,
                              behavior=behavior, inverse_mode=inverse_mode,
                              cfg=cfg, universe=universe, gridworld=world,
                              chain=chain)


def _chain_comparison(chain: RegionChain, gamma: float) -> dict:
    res = solve_regional_system(
        chain.spec.p_matrix, [float(r) for r in chain.spec.rewards], gamma,
        reference_q=chain.reference_q)
    return {
        "regions": list(chain.spec.regions),
        "exact_q": [float(x) for x in res.q],
        "reference_q": [float(x) for x in res.reference],
        "deltas": [float(x) for x in res.deltas],
        "reference_equation_residuals": [
            float(x) for x in res.reference_equation_residuals],
        "bellman_residual": res.residual,
    }


def _grid_comparison(world: GridWorld, cfg: DiscountConfig, tol: float) -> list[dict]:
    computed = grid_values(world, cfg, tol)
    rows = []
    for cell in sorted(computed):
        rows.append({
            "cell": list(cell),
            "computed": computed[cell],
            "reference": REFERENCE_GRID_VALUES.get(cell),
        })
    return rows


def run_experiment(spec: ExperimentSpec) -> tuple[dict, bool]:
    """Run one experiment document; returns (report, all_certificates_passed)."""
    resolved = resolve(spec)
    cfg = resolved.cfg
    universe = resolved.universe
    ctx = CertificationContext(
        process=resolved.process, psi=resolved.psi, cfg=cfg, universe=universe,
        policy=resolved.policy, inverse_mode=resolved.inverse_mode,
        behavior=resolved.behavior, solver_tol=spec.tolerance)

    certificates: list[BoundCertificate] = [
        certify(kind, ctx) for kind in spec.certificates]
    all_passed = all(c.passed for c in certificates)

    report: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "spec": spec.echo(),
        "universe": {
            "size": len(universe),
            "depth": spec.depth,
            "dangling_states": [repr(s) for s in ctx.surrogate.dangling],
        },
        "gap_report": ctx.gaps.as_dict(),
        "certificates": [rec for c in certificates for rec in c.as_records()],
        "certificate_inputs": {c.kind: dict(c.inputs) for c in certificates},
        "all_passed": all_passed,
        "solver": {
            "value_iteration": {
                "iterations": ctx.star.iterations,
                "residual": ctx.star.residual,
            },
        },
        "comparisons": {},
    }
    if resolved.chain is not None:
        report["comparisons"]["region_chain"] = _chain_comparison(
            resolved.chain, spec.gamma)
    if resolved.gridworld is not None:
        report["comparisons"]["grid_reference"] = _grid_comparison(
            resolved.gridworld, cfg, spec.tolerance)
    return report, all_passed


def render_report(report: Mapping[str, Any]) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def render_grid_csv(spec: ExperimentSpec) -> str:
    """Per-cell optimal values as CSV, top row first; blocked cells marked
    ``X`` and the goal value prefixed ``T:``.  Values are in raw reward
    units so they sit on the same scale as the published reference table."""
    cfg = DiscountConfig(gamma=spec.gamma, horizon=spec.horizon)
    resolved = resolve(spec)
    world = resolved.gridworld
    if world is None:
        raise SpecError("grid output needs a grid environment")
    values = grid_values(world, cfg, spec.tolerance)
    gw = world.spec
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in range(gw.height - 1, -1, -1):
        out_row = []
        for col in range(gw.width):
            cell = (col, row)
            if cell in gw.blocked:
                out_row.append("X")
            elif cell == gw.goal:
                out_row.append(f"T:{values[cell]:.6f}")
            else:
                out_row.append(f"{values[cell]:.6f}")
        writer.writerow(out_row)
    return buf.getvalue()


def load_document(path: str) -> ExperimentSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SpecError(f"cannot read experiment document {path!r}: {exc}") from exc
    return ExperimentSpec.from_document(doc)
