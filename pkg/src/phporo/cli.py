"""Command-line front end: check | simulate | compare | export.

Scenarios are flat JSON documents (see README for the schema).  Source
densities are sums of separable terms c * x^ax * y^ay * T(omega t) with
T in {const, sin, cos}, so their time derivatives are available in closed
form wherever the machinery needs them (Schur reduction, consistent
initialization).

Exit codes: 0 all checks pass, 1 numerical or structural failure,
2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys as _sys
from dataclasses import dataclass

import numpy as np

from . import dae_analysis, fem, formulations, interconnect, numkit, phdae, timeint
from .fem import BoundViolationError, PoroMaterial
from .formulations import FORMULATION_TAGS, DiscreteOperators, NetworkCoupling
from .numkit import SingularMatrixError, StructureError
from .phdae import InconsistentStateError, PhDae


class ScenarioError(ValueError):
    """Invalid scenario configuration (exit code 2)."""


_NUMERICAL_ERRORS = (StructureError, SingularMatrixError, InconsistentStateError,
                     BoundViolationError)


# ---------------------------------------------------------------------------
# Source-term grammar
# ---------------------------------------------------------------------------

_TIME_KINDS = ("const", "sin", "cos")


@dataclass(frozen=True)
class SourceTerm:
    """One separable term c * x^ax * y^ay * T(omega t)."""

    c: float
    ax: int = 0
    ay: int = 0
    time: str = "const"
    omega: float = 1.0
    component: int = 0

    def __post_init__(self):
        if self.time not in _TIME_KINDS:
            raise ScenarioError(f"unknown time factor {self.time!r}, want one of {_TIME_KINDS}")
        if self.ax < 0 or self.ay < 0:
            raise ScenarioError("polynomial exponents must be non-negative")
        if self.component not in (0, 1):
            raise ScenarioError("component must be 0 (x) or 1 (y)")

    def value(self, x: float, y: float, t: float) -> float:
        spatial = self.c * x**self.ax * y**self.ay
        if self.time == "sin":
            return spatial * math.sin(self.omega * t)
        if self.time == "cos":
            return spatial * math.cos(self.omega * t)
        return spatial

    def time_derivative(self) -> "SourceTerm":
        if self.time == "sin":
            return SourceTerm(self.c * self.omega, self.ax, self.ay, "cos",
                              self.omega, self.component)
        if self.time == "cos":
            return SourceTerm(-self.c * self.omega, self.ax, self.ay, "sin",
                              self.omega, self.component)
        return SourceTerm(0.0, self.ax, self.ay, "const", self.omega, self.component)


def _parse_terms(raw, where: str) -> tuple[SourceTerm, ...]:
    if raw is None:
        return ()
    terms = []
    for entry in raw:
        try:
            terms.append(SourceTerm(
                c=float(entry.get("c", 0.0)),
                ax=int(entry.get("ax", 0)),
                ay=int(entry.get("ay", 0)),
                time=entry.get("time", "const"),
                omega=float(entry.get("omega", 1.0)),
                component=int(entry.get("component", 0)),
            ))
        except (TypeError, AttributeError) as exc:
            raise ScenarioError(f"malformed source term in {where}: {entry!r}") from exc
    return tuple(terms)


def _eval_terms(terms, x, y, t, component=None) -> float:
    return sum(term.value(x, y, t) for term in terms
               if component is None or term.component == component)


def _terms_zero(terms) -> bool:
    return all(term.c == 0.0 for term in terms)


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    mesh_n: int
    formulation: str
    materials: tuple
    exchange: NetworkCoupling | None
    t_end: float
    steps: int
    integrator: str
    seed: int
    source_f: tuple            # displacement source terms (component-tagged)
    source_g: tuple            # per-network tuples of pressure source terms
    initial_pressure: tuple    # per-network tuples of spatial terms
    route: str = "direct"
    tol: float | None = None

    @property
    def networks(self) -> int:
        return len(self.materials)

    def zero_input(self) -> bool:
        return _terms_zero(self.source_f) and all(_terms_zero(g) for g in self.source_g)


def parse_scenario(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object")
    try:
        mesh_n = int(doc["mesh_n"])
        formulation = str(doc["formulation"])
        raw_mats = doc["materials"]
    except KeyError as exc:
        raise ScenarioError(f"scenario is missing required key {exc}") from exc
    if formulation not in FORMULATION_TAGS:
        raise ScenarioError(f"unknown formulation {formulation!r}, want one of {FORMULATION_TAGS}")
    if mesh_n < 1:
        raise ScenarioError("mesh_n must be >= 1")
    try:
        materials = tuple(PoroMaterial(**{k: float(v) for k, v in m.items()}) for m in raw_mats)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"invalid material: {exc}") from exc
    if not materials:
        raise ScenarioError("at least one material is required")

    m = len(materials)
    exchange = None
    if doc.get("exchange_matrix") is not None:
        try:
            exchange = NetworkCoupling(np.asarray(doc["exchange_matrix"], dtype=float))
        except ValueError as exc:
            raise ScenarioError(f"invalid exchange matrix: {exc}") from exc
        if exchange.size != m:
            raise ScenarioError("exchange matrix dimension must match the material count")

    if formulation == "network":
        if m < 2 or exchange is None:
            raise ScenarioError("the network formulation needs >= 2 materials and exchange_matrix")
    elif formulation in ("full", "sqrt"):
        if m != 1:
            raise ScenarioError(f"the {formulation} formulation is single-network")
    elif m > 1 and exchange is None:
        raise ScenarioError("multi-network scenarios need exchange_matrix")
    if formulation == "alt_qs" and m > 1 and exchange is not None and not exchange.is_symmetric:
        raise ScenarioError("alt_qs with several networks needs a symmetric exchange matrix")

    raw_g = doc.get("source_g") or []
    if raw_g and not isinstance(raw_g[0], list):
        raw_g = [raw_g]
    source_g = tuple(_parse_terms(g, "source_g") for g in raw_g)
    if source_g and len(source_g) != m:
        raise ScenarioError(f"source_g must list terms for each of the {m} networks")
    if not source_g:
        source_g = tuple(() for _ in range(m))

    raw_p0 = doc.get("initial_pressure") or []
    if raw_p0 and not isinstance(raw_p0[0], list):
        raw_p0 = [raw_p0]
    initial_pressure = tuple(_parse_terms(p, "initial_pressure") for p in raw_p0)
    if initial_pressure and len(initial_pressure) != m:
        raise ScenarioError(f"initial_pressure must list terms for each of the {m} networks")
    if not initial_pressure:
        initial_pressure = tuple(() for _ in range(m))

    route = str(doc.get("route", "direct"))
    if route not in ("direct", "coupled"):
        raise ScenarioError("route must be 'direct' or 'coupled'")
    if route == "coupled" and formulation not in ("full", "alt_qs", "network"):
        raise ScenarioError(f"the coupled route is not defined for {formulation!r}")
    if route == "coupled" and formulation == "alt_qs" and m > 1:
        raise ScenarioError("the coupled alt_qs route is single-network")

    integrator = str(doc.get("integrator", "midpoint"))
    if integrator not in ("midpoint", "euler"):
        raise ScenarioError("integrator must be 'midpoint' or 'euler'")

    steps = int(doc.get("steps", 100))
    t_end = float(doc.get("t_end", 1.0))
    if steps < 1 or t_end <= 0:
        raise ScenarioError("steps must be >= 1 and t_end > 0")

    return Scenario(
        mesh_n=mesh_n,
        formulation=formulation,
        materials=materials,
        exchange=exchange,
        t_end=t_end,
        steps=steps,
        integrator=integrator,
        seed=int(doc.get("seed", 0)),
        source_f=_parse_terms(doc.get("source_f"), "source_f"),
        source_g=source_g,
        initial_pressure=initial_pressure,
        route=route,
        tol=None if doc.get("tol") is None else float(doc["tol"]),
    )


# ---------------------------------------------------------------------------
# Scenario -> operators, system, signals, initial state
# ---------------------------------------------------------------------------

def build_operators(scn: Scenario) -> DiscreteOperators:
    mesh = fem.build_unit_square_mesh(scn.mesh_n)
    if scn.networks == 1:
        return formulations.assemble_two_field(mesh, scn.materials[0])
    return formulations.assemble_network(mesh, scn.materials, scn.exchange)


def build_system(scn: Scenario, ops: DiscreteOperators):
    """Return the PhDae (or ParabolicReduction) selected by the scenario."""
    coupling = scn.exchange if scn.networks > 1 else None
    if scn.route == "coupled":
        if scn.formulation == "full":
            return interconnect.couple_two_field(ops)
        if scn.formulation == "alt_qs":
            return interconnect.couple_alt_qs(ops)
        return interconnect.couple_network(ops, scn.exchange)
    if scn.formulation == "full":
        return formulations.build_full_first_order(ops, tol=scn.tol)
    if scn.formulation == "sqrt":
        return formulations.build_sqrt_formulation(ops, tol=scn.tol)
    if scn.formulation == "quasi_static":
        return formulations.build_quasi_static(ops, coupling, tol=scn.tol)
    if scn.formulation == "alt_qs":
        return formulations.build_alternative_qs(ops, coupling, tol=scn.tol)
    if scn.formulation == "network":
        return formulations.build_network_ph(ops, scn.exchange, tol=scn.tol)
    f, fdot, g = load_signals(scn, ops)
    return formulations.schur_reduce_parabolic(ops, f, fdot, g, coupling)


def _nodal_displacement_density(ops: DiscreteOperators, terms):
    nodes = ops.vspace.mesh.nodes[ops.vspace.free_nodes]
    nfree = len(ops.vspace.free_nodes)

    def density(t: float) -> np.ndarray:
        out = np.empty(2 * nfree)
        for k, (x, y) in enumerate(nodes):
            out[k] = _eval_terms(terms, x, y, t, component=0)
            out[k + nfree] = _eval_terms(terms, x, y, t, component=1)
        return out

    return density


def _nodal_pressure_density(ops: DiscreteOperators, per_network_terms):
    nodes = ops.qspace.mesh.nodes[ops.qspace.free_nodes]

    def density(t: float) -> np.ndarray:
        cols = []
        for terms in per_network_terms:
            cols.append(np.array([_eval_terms(terms, x, y, t) for x, y in nodes]))
        return np.concatenate(cols) if cols else np.zeros(0)

    return density


def input_signal(scn: Scenario, ops: DiscreteOperators, system: PhDae):
    """Nodal-density input stacked according to the system's input blocks."""
    vu = _nodal_displacement_density(ops, scn.source_f)
    vp = _nodal_pressure_density(ops, scn.source_g)
    dp = ops.dim_p
    layout = []
    g_cursor = 0
    for name, size in system.input_blocks:
        if name == "f":
            layout.append(("f", None, size))
        elif name == "g":
            count = size // dp if dp else 0
            layout.append(("g", (g_cursor * dp, g_cursor * dp + size), size))
            g_cursor += count
        else:
            layout.append(("zero", None, size))

    def v(t: float) -> np.ndarray:
        parts = []
        vp_t = None
        for kind, span, size in layout:
            if kind == "f":
                parts.append(vu(t))
            elif kind == "g":
                if vp_t is None:
                    vp_t = vp(t)
                parts.append(vp_t[span[0] : span[1]])
            else:
                parts.append(np.zeros(size))
        return np.concatenate(parts) if parts else np.zeros(0)

    return v


def load_signals(scn: Scenario, ops: DiscreteOperators):
    """Assembled load vectors f(t), fdot(t), g(t) for the reduction machinery."""
    vu = _nodal_displacement_density(ops, scn.source_f)
    vu_dot = _nodal_displacement_density(ops, tuple(t.time_derivative() for t in scn.source_f))
    vp = _nodal_pressure_density(ops, scn.source_g)
    mp = formulations.blocked_unit_mass(ops)
    return (
        lambda t: ops.mass_u @ vu(t),
        lambda t: ops.mass_u @ vu_dot(t),
        lambda t: mp @ vp(t),
    )


def initial_pressure_vector(scn: Scenario, ops: DiscreteOperators) -> np.ndarray:
    nodes = ops.qspace.mesh.nodes[ops.qspace.free_nodes]
    cols = [np.array([_eval_terms(terms, x, y, 0.0) for x, y in nodes])
            for terms in scn.initial_pressure]
    return np.concatenate(cols) if cols else np.zeros(0)


def initial_state(scn: Scenario, ops: DiscreteOperators, system) -> np.ndarray:
    """Consistent initial state for the scenario's formulation."""
    coupling = scn.exchange if scn.networks > 1 else None
    p0 = initial_pressure_vector(scn, ops)
    if scn.formulation == "schur_parabolic":
        return p0
    f, fdot, g = load_signals(scn, ops)
    if scn.formulation == "alt_qs":
        u0, q0 = formulations.alternative_qs_initialization(ops, p0, f(0.0), coupling)
        return np.concatenate([u0, p0, q0])
    w0, u0 = dae_analysis.consistent_initialization(
        ops, p0, f(0.0), fdot(0.0), g(0.0), coupling
    )
    if scn.formulation == "sqrt":
        u0 = numkit.sqrtm_spd(ops.stiff_elast) @ u0
    return np.concatenate([w0, u0, p0])


def time_grid(scn: Scenario) -> np.ndarray:
    return np.linspace(0.0, scn.t_end, scn.steps + 1)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_check(scn: Scenario) -> tuple[dict, int]:
    ops = build_operators(scn)
    report: dict = {"formulation": scn.formulation, "route": scn.route}
    ok = True
    if scn.networks > 1:
        ell = formulations.check_network_ellipticity(ops, scn.exchange)
        report["ellipticity"] = ell.to_dict()
        ok = ok and ell.elliptic
    try:
        system = build_system(scn, ops)
    except _NUMERICAL_ERRORS as exc:
        report["error"] = str(exc)
        report["pass"] = False
        return report, 1
    if isinstance(system, formulations.ParabolicReduction):
        system = system.as_phdae()
    structure = phdae.validate_structure(system, tol=scn.tol)
    index = dae_analysis.classify_phdae_index(system, seed=scn.seed)
    report["structure"] = structure.to_dict()
    report["index"] = index.to_dict()
    ok = ok and structure.verdict
    report["pass"] = ok
    return report, 0 if ok else 1


def cmd_simulate(scn: Scenario, out_path: str) -> tuple[dict, int]:
    ops = build_operators(scn)
    system = build_system(scn, ops)
    if isinstance(system, formulations.ParabolicReduction):
        signal = system.g_tilde
        system = system.as_phdae()
    else:
        signal = input_signal(scn, ops, system)
    z0 = initial_state(scn, ops, system)
    grid = time_grid(scn)
    step = timeint.integrate_midpoint if scn.integrator == "midpoint" else timeint.integrate_euler
    traj = step(system, z0, signal, grid)
    traj.to_csv(out_path)
    residual = float(np.max(traj.balance_residuals())) if scn.steps else 0.0
    summary = {
        "out": out_path,
        "steps": scn.steps,
        "formulation": scn.formulation,
        "max_power_balance_residual": residual,
        "hamiltonian_monotone": traj.hamiltonian_nonincreasing() if scn.zero_input() else None,
        "final_hamiltonian": float(traj.hamiltonian[-1]),
    }
    return summary, 0


_TRAJECTORY_PAIRS = {
    frozenset(("full", "sqrt")),
    frozenset(("quasi_static", "schur_parabolic")),
    frozenset(("quasi_static", "alt_qs")),
    frozenset(("full", "quasi_static")),
}


def _run(scn: Scenario, ops: DiscreteOperators):
    system = build_system(scn, ops)
    if isinstance(system, formulations.ParabolicReduction):
        signal = system.g_tilde
        system_ph = system.as_phdae()
    else:
        system_ph = system
        signal = input_signal(scn, ops, system_ph)
    z0 = initial_state(scn, ops, system_ph)
    traj = timeint.integrate_midpoint(system_ph, z0, signal, time_grid(scn))
    return system_ph, traj


def _pressure_block(system: PhDae, traj: timeint.Trajectory) -> np.ndarray:
    return traj.states[:, system.state_slice("p")]


def cmd_compare(first: Scenario, second: Scenario) -> tuple[dict, int]:
    if first.mesh_n != second.mesh_n:
        raise ScenarioError("compared scenarios must share mesh_n")
    report: dict = {"pair": [first.formulation + ":" + first.route,
                             second.formulation + ":" + second.route]}

    if first.formulation == second.formulation and {first.route, second.route} == {"direct", "coupled"}:
        direct_scn, coupled_scn = (first, second) if first.route == "direct" else (second, first)
        ops = build_operators(direct_scn)
        dev = interconnect.coupling_deviation(
            build_system(coupled_scn, ops), build_system(direct_scn, ops)
        )
        report["matrix_deviation"] = dev
        report["max_matrix_deviation"] = max(dev.values())
        return report, 0

    pair = frozenset((first.formulation, second.formulation))
    if first.route != "direct" or second.route != "direct" or pair not in _TRAJECTORY_PAIRS:
        raise ScenarioError(
            f"formulations {first.formulation!r} and {second.formulation!r} are not comparable"
        )
    if (first.steps, first.t_end) != (second.steps, second.t_end):
        raise ScenarioError("compared scenarios must share the time grid")

    by_tag = {first.formulation: first, second.formulation: second}
    if pair == frozenset(("full", "sqrt")):
        if by_tag["full"].materials != by_tag["sqrt"].materials:
            raise ScenarioError("the full/sqrt comparison needs identical materials")
        ops = build_operators(by_tag["full"])
        sys_full, traj_full = _run(by_tag["full"], ops)
        sys_sqrt, traj_sqrt = _run(by_tag["sqrt"], ops)
        S = numkit.sqrtm_spd(ops.stiff_elast)
        mapped = traj_full.states.copy()
        u = sys_full.state_slice("u")
        mapped[:, u] = traj_full.states[:, u] @ S.T
        report["max_state_deviation"] = float(np.max(np.abs(mapped - traj_sqrt.states)))
        report["max_pressure_deviation"] = float(np.max(np.abs(
            _pressure_block(sys_full, traj_full) - _pressure_block(sys_sqrt, traj_sqrt)
        )))
        return report, 0

    runs = {}
    for tag, scn in by_tag.items():
        ops = build_operators(scn)
        runs[tag] = _run(scn, ops)
    if pair == frozenset(("quasi_static", "alt_qs")):
        devs = []
        for label in ("u", "p"):
            blocks = [traj.states[:, system.state_slice(label)]
                      for system, traj in (runs["quasi_static"], runs["alt_qs"])]
            devs.append(float(np.max(np.abs(blocks[0] - blocks[1]))))
        report["max_state_deviation"] = max(devs)
        report["max_pressure_deviation"] = devs[1]
        return report, 0
    tags = tuple(pair)
    p_blocks = [_pressure_block(*runs[tag]) for tag in (tags[0], tags[1])]
    report["max_pressure_deviation"] = float(np.max(np.abs(p_blocks[0] - p_blocks[1])))
    return report, 0


def cmd_export(scn: Scenario, out_dir: str) -> tuple[dict, int]:
    ops = build_operators(scn)
    system = build_system(scn, ops)
    if isinstance(system, formulations.ParabolicReduction):
        system = system.as_phdae()
    structure = phdae.validate_structure(system, tol=scn.tol)
    index = dae_analysis.classify_phdae_index(system, seed=scn.seed)
    phdae.save_phdae(system, out_dir, tol=scn.tol)
    blocks = {
        "mass_rho": ops.mass_rho,
        "stiff_elast": ops.stiff_elast,
        "mass_storage": ops.mass_storage,
        "mass_p": ops.mass_p,
        "mass_u": ops.mass_u,
    }
    for i, (K, D) in enumerate(zip(ops.stiff_flow, ops.div_coupling)):
        blocks[f"stiff_flow_{i}"] = K
        blocks[f"div_coupling_{i}"] = D
    for name, M in blocks.items():
        numkit.write_matrix_market(os.path.join(out_dir, f"{name}.mtx"), M)
    manifest = {
        "formulation": scn.formulation,
        "route": scn.route,
        "mesh_n": scn.mesh_n,
        "networks": scn.networks,
        "state_dim": system.state_dim,
        "input_dim": system.input_dim,
        "operator_blocks": sorted(blocks),
        "checks": {"structure": structure.to_dict(), "index": index.to_dict()},
    }
    with open(os.path.join(out_dir, "scenario_manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"out": out_dir, "state_dim": system.state_dim,
            "input_dim": system.input_dim, "pass": structure.verdict}, 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ScenarioError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"config {path} is not valid JSON: {exc}") from exc


def _apply_overrides(doc: dict, args) -> dict:
    doc = dict(doc)
    if args.tol is not None:
        doc["tol"] = args.tol
    if args.seed is not None:
        doc["seed"] = args.seed
    return doc


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="phporo",
        description="Structure checks, simulations and comparisons for poroelastic descriptor systems.",
    )
    parser.add_argument("command", choices=("check", "simulate", "compare", "export"))
    parser.add_argument("--config", required=True, help="path to the scenario JSON file")
    parser.add_argument("--out", default=None, help="output CSV path or export directory")
    parser.add_argument("--tol", type=float, default=None, help="override the structural tolerance")
    parser.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    args = parser.parse_args(argv)

    try:
        doc = _load_config(args.config)
        if args.command == "compare":
            if not isinstance(doc, dict) or "first" not in doc or "second" not in doc:
                raise ScenarioError("compare configs need 'first' and 'second' scenarios")
            first = parse_scenario(_apply_overrides(doc["first"], args))
            second = parse_scenario(_apply_overrides(doc["second"], args))
            report, code = cmd_compare(first, second)
        else:
            scn = parse_scenario(_apply_overrides(doc, args))
            if args.command == "check":
                report, code = cmd_check(scn)
            elif args.command == "simulate":
                out = args.out or "trajectory.csv"
                report, code = cmd_simulate(scn, out)
            else:
                out = args.out or "export"
                report, code = cmd_export(scn, out)
    except ScenarioError as exc:
        print(f"configuration error: {exc}", file=_sys.stderr)
        return 2
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=_sys.stderr)
        return 1
    except OSError as exc:
        print(f"io failure: {exc}", file=_sys.stderr)
        return 1

    print(json.dumps(report, indent=2, sort_keys=True))
    return code


if __name__ == "__main__":
    raise SystemExit(main())
