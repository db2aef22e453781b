"""Declarative scenarios: schema, validation, built-in gallery and runner.

A scenario is a nested mapping (read from TOML or taken from the gallery).
Expression-based systems look like::

    name = "speed_potential"
    formulation = "both"          # dalembert | vakonomic | both | penalty_sweep
    n = 2
    [params]
    k = 1.0
    [model]
    mass = 1.0                    # L = mass/2 |v|^2 - V unless L is given
    V = "k*(q[0]^2 + q[1]^2)"
    D = ["-0.1*v[0]", "-0.1*v[1]"]
    [constraints]
    kind = "nonlinear"            # holonomic | pfaffian | nonlinear | second_order
    F = ["v[0]^2 + v[1]^2 - 1"]
    [initial]
    q = [1.0, 0.0]
    v = [0.0, 1.0]
    lambda = [0.5]
    [integrator]
    dt = 1e-3
    t_end = 10.0

Affine-body scenarios use ``system = "affine"`` and an ``[affine]`` table
with ``n``, ``A``, ``Adot`` and optional ``mass``, ``J``, ``g``, ``eta``,
``k``, ``r``, ``rdot``.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional

import numpy as np

from .affine import AffineConfiguration, InertiaData, default_potential, simulate_affine
from .constraints import ConstraintKind, ConstraintSet
from .dalembert import DalembertSystem, PenaltyRealization
from .expr import ExpressionError, compile_scalar, compile_vector
from .integrate import IntegratorConfig, simulate
from .kernel import EngineError
from .lagrangian import LagrangianModel
from .state import AugmentedState
from .vakonomic import VakonomicSystem

logger = logging.getLogger(__name__)

FORMULATIONS = ("dalembert", "vakonomic", "both", "penalty_sweep")
KINDS = {
    "holonomic": ConstraintKind.HOLONOMIC,
    "pfaffian": ConstraintKind.LINEAR_PFAFFIAN,
    "linear_pfaffian": ConstraintKind.LINEAR_PFAFFIAN,
    "nonlinear": ConstraintKind.NONLINEAR_FIRST_ORDER,
    "second_order": ConstraintKind.SECOND_ORDER,
}


class ScenarioError(ValueError):
    """Validation failure; ``field`` is the dotted path of the offending entry."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


# ---------------------------------------------------------------------------
# gallery

_SPEED = {
    "n": 2,
    "model": {"mass": 1.0, "V": "0"},
    "constraints": {"kind": "nonlinear", "F": ["v[0]^2 + v[1]^2 - c^2"]},
    "params": {"c": 1.0},
    "integrator": {"dt": 1e-3, "t_end": 10.0},
}

BUILTINS: Dict[str, Dict[str, Any]] = {
    "speed_free": {
        **copy.deepcopy(_SPEED),
        "description": "free particle with fixed speed |v| = c; both treatments give straight-line motion",
        "provenance": "speed constraint with V = 0 (d'Alembert vs variational, no potential)",
        "formulation": "both",
        "initial": {"q": [0.0, 0.0], "v": [1.0, 0.0], "lambda": [0.0]},
    },
    "speed_potential": {
        **copy.deepcopy(_SPEED),
        "description": "fixed-speed particle in V = |q|^2 with lambda0 = 0.5; the treatments separate",
        "provenance": "speed constraint with potential (non-equivalent equations of motion)",
        "formulation": "both",
        "model": {"mass": 1.0, "V": "q[0]^2 + q[1]^2"},
        # q.v != 0: from q=(1,0), v=(0,1) the variational run is the circular orbit with constant lambda
        "initial": {"q": [1.0, 0.0], "v": [0.6, 0.8], "lambda": [0.5]},
    },
    "speed_drag": {
        **copy.deepcopy(_SPEED),
        "description": "variational fixed-speed particle with linear drag D = -0.1 v; energy audit",
        "provenance": "speed constraint with dissipation (energy balance with D.v)",
        "formulation": "vakonomic",
        "model": {"mass": 1.0, "V": "q[0]^2 + q[1]^2", "D": ["-gamma*v[0]", "-gamma*v[1]"]},
        "params": {"c": 1.0, "gamma": 0.1},
        "initial": {"q": [1.0, 0.0], "v": [0.6, 0.8], "lambda": [0.5]},
    },
    "contact_pfaffian": {
        "description": "free particle in R^3 under the contact form dz - y dx (non-integrable)",
        "provenance": "linear Pfaffian constraint, Frobenius test and magnetic-like reaction term",
        "formulation": "both",
        "n": 3,
        "model": {"mass": 1.0, "V": "0.5*q[0]^2"},
        "constraints": {"kind": "pfaffian", "F": ["v[2] - q[1]*v[0]"]},
        "initial": {"q": [0.0, 0.0, 0.0], "v": [1.0, 0.5, 0.0], "lambda": [0.2]},
        "integrator": {"dt": 1e-3, "t_end": 10.0},
    },
    "circle_pendulum": {
        "description": "pendulum on the unit circle; multiplier solution vs stiff penalty potentials",
        "provenance": "holonomic constraint, penalty potential 1/2 kappa F^2 and the kappa -> infinity limit",
        "formulation": "penalty_sweep",
        "n": 2,
        "params": {"grav": 9.81},
        "model": {"mass": 1.0, "V": "grav*q[1]"},
        "constraints": {"kind": "holonomic", "F": ["q[0]^2 + q[1]^2 - 1"]},
        "initial": {"q": [1.0, 0.0], "v": [0.0, 0.0]},
        "integrator": {"dt": 1e-4, "t_end": 1.0},
        "penalty": {"kappa": [1e2, 1e3, 1e4]},
    },
    "direction_only": {
        "description": "heading-only constraint v1/v0 = k under a constant force; adiabatic reactions",
        "provenance": "degree-0 homogeneous (direction-only) constraint",
        "formulation": "both",
        "n": 2,
        "params": {"k": 0.5},
        "model": {"mass": 1.0, "V": "-q[0]"},
        "constraints": {"kind": "nonlinear", "F": ["v[1]/v[0] - k"]},
        "initial": {"q": [0.0, 0.0], "v": [1.0, 0.5], "lambda": [0.3]},
        "integrator": {"dt": 1e-3, "t_end": 10.0},
    },
    "accel_constraint_n2": {
        "description": "acceleration constraint a0 + w^2 q0 = 0 imposed variationally (harmonic closure)",
        "provenance": "second-order constraint, N = 2 reaction formula",
        "formulation": "vakonomic",
        "n": 2,
        "params": {"w": 1.0},
        "model": {"mass": 1.0, "V": "0"},
        "constraints": {"kind": "second_order", "F": ["a[0] + w^2*q[0]"]},
        "initial": {"q": [1.0, 0.0], "v": [0.0, 1.0], "lambda": [0.0], "lambda_dot": [0.0]},
        "integrator": {"dt": 1e-3, "t_end": 1.0},
    },
    "affine_isotropic": {
        "description": "rotation-less affine body, isotropic dilatation; both treatments agree",
        "provenance": "affinely-rigid body, pure dilatational motion",
        "formulation": "both",
        "system": "affine",
        "affine": {"n": 2, "k": 1.0, "A": [[1.0, 0.0], [0.0, 1.0]], "Adot": [[0.2, 0.0], [0.0, 0.2]]},
        "integrator": {"dt": 1e-3, "t_end": 1.0},
    },
    "affine_aniso": {
        "description": "rotation-less affine body, anisotropic start; the two treatments diverge",
        "provenance": "affinely-rigid body, non-commutativity of substitution and variation",
        "formulation": "both",
        "system": "affine",
        "affine": {
            "n": 2,
            "k": 1.0,
            "A": [[1.2, 0.0], [0.0, 0.9]],
            "Adot": [[0.1, 0.3], [0.3, -0.1]],
        },
        "integrator": {"dt": 1e-3, "t_end": 1.0},
    },
}


def list_scenarios() -> List[tuple]:
    """(name, description, provenance) for every built-in."""
    return [(k, v["description"], v["provenance"]) for k, v in BUILTINS.items()]


# ---------------------------------------------------------------------------
# schema


@dataclass
class Scenario:
    name: str
    formulation: str
    raw: Dict[str, Any]
    config: IntegratorConfig
    system: str = "lagrangian"
    description: str = ""
    out_dir: Optional[str] = None
    parts: Any = field(default=None, repr=False)

    def with_overrides(self, formulation=None, dt=None, t_end=None) -> "Scenario":
        raw = copy.deepcopy(self.raw)
        if formulation is not None:
            raw["formulation"] = formulation
        integ = raw.setdefault("integrator", {})
        if dt is not None:
            integ["dt"] = dt
        if t_end is not None:
            integ["t_end"] = t_end
        return load_dict(raw, name=self.name)


def _get(d: Mapping, key: str, path: str, typ=None, default=...):
    if key not in d:
        if default is ...:
            raise ScenarioError(f"{path}.{key}".lstrip("."), "missing required field")
        return default
    val = d[key]
    if typ is not None and not isinstance(val, typ):
        names = typ.__name__ if isinstance(typ, type) else "/".join(t.__name__ for t in typ)
        raise ScenarioError(f"{path}.{key}".lstrip("."), f"expected {names}, got {type(val).__name__}")
    return val


def _vector(d, key, path, length, default=...):
    val = _get(d, key, path, (list, tuple), default)
    if val is None:
        return None
    try:
        arr = np.asarray(val, dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError(f"{path}.{key}", "entries must be numbers") from None
    if arr.shape != (length,):
        raise ScenarioError(f"{path}.{key}", f"expected {length} entries, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ScenarioError(f"{path}.{key}", "entries must be finite")
    return arr


def _matrix(d, key, path, n, default=...):
    val = _get(d, key, path, (list, tuple), default)
    if val is None:
        return None
    try:
        arr = np.asarray(val, dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError(f"{path}.{key}", "entries must be numbers") from None
    if arr.shape != (n, n):
        raise ScenarioError(f"{path}.{key}", f"expected a {n}x{n} matrix")
    return arr


def _config(raw) -> IntegratorConfig:
    integ = _get(raw, "integrator", "", dict, {})
    kw = {}
    for key, typ in (("dt", (int, float)), ("t_end", (int, float)), ("scheme", str), ("drift_tolerance", (int, float))):
        if key in integ:
            kw[key] = _get(integ, key, "integrator", typ)
    if "projection" in integ:
        kw["projection"] = _get(integ, "projection", "integrator", bool)
    if "record_every" in integ:
        kw["record_every"] = _get(integ, "record_every", "integrator", int)
    try:
        return IntegratorConfig(**kw)
    except ValueError as exc:
        raise ScenarioError("integrator", str(exc)) from None


def load_dict(raw: Mapping[str, Any], name: Optional[str] = None) -> Scenario:
    """Validate a scenario mapping.  Everything that can be checked without
    running (expressions, dimensions, kinds, initial-state shapes) is checked."""
    raw = copy.deepcopy(dict(raw))
    name = _get(raw, "name", "", str, name or "scenario")
    formulation = _get(raw, "formulation", "", str, "both").lower()
    if formulation not in FORMULATIONS:
        raise ScenarioError("formulation", f"must be one of {FORMULATIONS}")
    system = _get(raw, "system", "", str, "lagrangian").lower()
    if system not in ("lagrangian", "affine"):
        raise ScenarioError("system", "must be 'lagrangian' or 'affine'")
    cfg = _config(raw)
    sc = Scenario(name, formulation, raw, cfg, system, raw.get("description", ""))
    out = raw.get("output", {})
    if out:
        sc.out_dir = _get(out, "dir", "output", str, None)
    if system == "affine":
        if formulation == "penalty_sweep":
            raise ScenarioError("formulation", "penalty_sweep needs a holonomic Lagrangian scenario")
        sc.parts = _affine_parts(sc)
    else:
        sc.parts = _lagrangian_parts(sc)
    return sc


def load_file(path: str) -> Scenario:
    """Read a TOML scenario file."""
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ScenarioError("file", f"TOML parse error: {exc}") from None
    import os

    return load_dict(raw, name=os.path.splitext(os.path.basename(path))[0])


def load_builtin(name: str) -> Scenario:
    if name not in BUILTINS:
        raise ScenarioError("name", f"unknown built-in scenario {name!r}")
    return load_dict({"name": name, **BUILTINS[name]})


# ---------------------------------------------------------------------------
# building


@dataclass(eq=False)
class LagrangianParts:
    model: LagrangianModel
    cs: Optional[ConstraintSet]
    init: AugmentedState
    lam0: Optional[np.ndarray]
    lam_dot0: Optional[np.ndarray]
    alpha: float
    beta: float
    kappas: List[float] = field(default_factory=list)


def _lagrangian_parts(sc: Scenario) -> LagrangianParts:
    raw = sc.raw
    n = _get(raw, "n", "", int)
    if n < 1:
        raise ScenarioError("n", "dimension must be positive")
    params = _get(raw, "params", "", dict, {})
    for k, v in params.items():
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ScenarioError(f"params.{k}", "parameters must be numbers")
    mdl = _get(raw, "model", "", dict)
    try:
        if "L" in mdl:
            L = compile_scalar(_get(mdl, "L", "model", str), "model.L", n, params)
        else:
            mass = float(_get(mdl, "mass", "model", (int, float), 1.0))
            if mass <= 0:
                raise ScenarioError("model.mass", "must be positive")
            V = compile_scalar(str(_get(mdl, "V", "model", (str, int, float), "0")), "model.V", n, params)

            def L(q, v, t, V=V, mass=mass):
                return 0.5 * mass * sum(v[i] * v[i] for i in range(n)) - V(q, v, t)

        D = None
        if "D" in mdl:
            Dexpr = _get(mdl, "D", "model", list)
            if len(Dexpr) != n:
                raise ScenarioError("model.D", f"expected {n} components")
            Dv = compile_vector(Dexpr, "model.D", n, params)

            def D(q, v, t, Dv=Dv):
                return np.array(Dv(q, v, t), dtype=float)

        model = LagrangianModel(n, L, D)
        cs = None
        con = _get(raw, "constraints", "", dict, None)
        if con is not None:
            kind_name = _get(con, "kind", "constraints", str).lower()
            if kind_name not in KINDS:
                raise ScenarioError("constraints.kind", f"must be one of {sorted(KINDS)}")
            kind = KINDS[kind_name]
            Fexpr = _get(con, "F", "constraints", (list, str))
            accel = kind is ConstraintKind.SECOND_ORDER
            holo = kind is ConstraintKind.HOLONOMIC
            Ff = compile_vector(Fexpr, "constraints.F", n, params, accel=accel, velocity=not holo)
            m = 1 if isinstance(Fexpr, str) else len(Fexpr)
            if kind is ConstraintKind.HOLONOMIC:
                cs = ConstraintSet.holonomic(n, lambda q, t, Ff=Ff: Ff(q, np.zeros(n), t), m=m)
            elif kind is ConstraintKind.LINEAR_PFAFFIAN:
                cs = ConstraintSet.linear_pfaffian(n, F=Ff, m=m)
            elif kind is ConstraintKind.NONLINEAR_FIRST_ORDER:
                cs = ConstraintSet.nonlinear(n, Ff, m=m)
            else:
                cs = ConstraintSet.second_order(n, Ff, m=m)
    except ExpressionError as exc:
        raise ScenarioError(exc.field, str(exc).split(": ", 1)[1]) from None
    except ScenarioError:
        raise
    except (EngineError, ValueError, ZeroDivisionError, TypeError) as exc:
        # construction-time checks (affinity, dimensions, F(q, 0) = 0, ...)
        raise ScenarioError("constraints", str(exc)) from None

    ini = _get(raw, "initial", "", dict)
    q0 = _vector(ini, "q", "initial", n)
    v0 = _vector(ini, "v", "initial", n)
    m = 0 if cs is None else cs.m
    lam0 = _vector(ini, "lambda", "initial", m, None) if m else None
    lam_dot0 = _vector(ini, "lambda_dot", "initial", m, None) if m else None
    t0 = float(_get(ini, "t", "initial", (int, float), 0.0))
    stab = _get(raw, "stabilization", "", dict, {})
    alpha = float(_get(stab, "alpha", "stabilization", (int, float), 20.0))
    beta = float(_get(stab, "beta", "stabilization", (int, float), 100.0))
    if alpha < 0 or beta < 0:
        raise ScenarioError("stabilization", "gains must be nonnegative")

    f = sc.formulation
    kind = None if cs is None else cs.kind
    if kind is ConstraintKind.HOLONOMIC and f in ("vakonomic", "both"):
        raise ScenarioError(
            "formulation", "holonomic constraints: both treatments coincide; use dalembert or penalty_sweep"
        )
    if kind is ConstraintKind.SECOND_ORDER and f != "vakonomic":
        raise ScenarioError("formulation", "second-order constraints are only supported by the vakonomic treatment")
    if f == "penalty_sweep" and kind is not ConstraintKind.HOLONOMIC:
        raise ScenarioError("formulation", "penalty_sweep needs a holonomic constraint")
    if cs is None and f != "dalembert":
        raise ScenarioError("formulation", "unconstrained scenarios use the dalembert formulation")
    kappas = []
    if f == "penalty_sweep":
        pen = _get(raw, "penalty", "", dict)
        kappas = _get(pen, "kappa", "penalty", list)
        if not kappas or any(not isinstance(k, (int, float)) or k <= 0 for k in kappas):
            raise ScenarioError("penalty.kappa", "expected a list of positive numbers")
    init = AugmentedState(q0, v0, lam0, lam_dot0, t0)
    return LagrangianParts(model, cs, init, lam0, lam_dot0, alpha, beta, [float(k) for k in kappas])


@dataclass(eq=False)
class AffineParts:
    body: InertiaData
    V: Any
    init: AffineConfiguration


def _affine_parts(sc: Scenario) -> AffineParts:
    af = _get(sc.raw, "affine", "", dict)
    n = _get(af, "n", "affine", int, 2)
    if n not in (2, 3):
        raise ScenarioError("affine.n", "affine scenarios support n = 2 or 3")
    try:
        body = InertiaData(
            n,
            float(_get(af, "mass", "affine", (int, float), 1.0)),
            _matrix(af, "J", "affine", n, None),
            _matrix(af, "g", "affine", n, None),
            _matrix(af, "eta", "affine", n, None),
        )
    except ValueError as exc:
        raise ScenarioError("affine", str(exc)) from None
    k = float(_get(af, "k", "affine", (int, float), 1.0))
    A = _matrix(af, "A", "affine", n)
    Ad = _matrix(af, "Adot", "affine", n)
    eA = body.eta @ A
    eAd = body.eta @ Ad
    if not np.allclose(eA, eA.T, atol=1e-12) or np.min(np.linalg.eigvalsh(0.5 * (eA + eA.T))) <= 0:
        raise ScenarioError("affine.A", "must be eta-symmetric positive-definite")
    if not np.allclose(eAd, eAd.T, atol=1e-12):
        raise ScenarioError("affine.Adot", "must be eta-symmetric")
    r = _vector(af, "r", "affine", n, None)
    rdot = _vector(af, "rdot", "affine", n, None)
    init = AffineConfiguration.from_deformation(A, Ad, r, rdot)
    return AffineParts(body, default_potential(k, body.eta), init)


def formulations_for(sc: Scenario) -> List[str]:
    if sc.formulation == "both":
        return ["dalembert", "vakonomic"]
    if sc.formulation == "penalty_sweep":
        return ["dalembert"] + [f"penalty_{k:g}" for k in sc.parts.kappas]
    return [sc.formulation]


def run_single(sc: Scenario, which: str, parts=None):
    """Run one formulation (or one penalty stiffness) of a scenario.

    Returns a :class:`SimulationResult` for Lagrangian scenarios and an
    :class:`AffineResult` for affine ones.
    """
    cfg = sc.config
    if sc.system == "affine":
        parts = parts or sc.parts
        return simulate_affine(parts.body, parts.V, which, parts.init, cfg)
    parts = parts or sc.parts
    if which == "dalembert":
        system = DalembertSystem(parts.model, parts.cs, parts.alpha, parts.beta)
    elif which == "vakonomic":
        system = VakonomicSystem(parts.model, parts.cs, parts.lam0, parts.lam_dot0, parts.alpha, parts.beta)
    elif which.startswith("penalty_"):
        kappa = float(which.split("_", 1)[1])
        system = PenaltyRealization(parts.model, parts.cs, kappa).system()
    else:
        raise ValueError(f"unknown formulation {which!r}")
    return simulate(system, parts.init, cfg)
