"""Experiment descriptions, sweep execution, CSV output and run manifests.

An experiment file is an INI document with one experiment per file::

    [experiment]
    method = markov            ; markov | queueing | simulate | bound

    [params]
    K = 3
    N = 10
    U = 1
    mu = 0.5
    publisher_policy = MDP_RFB

    [sweep]                    ; optional
    axis = N                   ; N | K | U | mu_prime_inverse | gamma
    from = 2
    to = 30
    step = 1

    [variants]                 ; optional, comma-separated values, crossed
    publisher_policy = RP_RUB, MDP_RFB

    [sim]                      ; simulate only
    horizon = 2000
    warmup = 200
    replications = 5
    seed = 1
    metric = throughput        ; throughput | entry_time | exit_time

    [assumptions]              ; free text, echoed into the manifest
    U = not stated, pinned

Every row of the output CSV carries the same columns, in :data:`COLUMNS`
order.  Transient metrics produce one row per time on the grid, with the
empirical probability in ``probability`` and ``throughput`` left empty.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .core import DEFAULT_STATE_CAP, ModelParams, count_states
from .errors import AxisMismatch, InvalidParams, NotConverged, SpecError, SwarmError, Unstable
from .markov import build_generator, solve_stationary, throughput
from .queueing import fixed_point, proposition1_bound
from .sim import InitialCondition, SimConfig, estimate_throughput, transient_time_to_leave_one_club, transient_time_to_one_club

METHODS = ("markov", "queueing", "simulate", "bound")
AXES = ("N", "K", "U", "mu_prime_inverse", "gamma")
METRICS = ("throughput", "entry_time", "exit_time")
COLUMNS = (
    "method", "K", "N", "U", "mu", "mu_prime", "publisher_policy", "peer_policy", "shield", "gamma",
    "throughput", "ci_halfwidth", "iterations", "residual", "seed", "metric", "time", "probability",
)
PARAM_KEYS = ("K", "N", "U", "mu", "mu_prime", "publisher_policy", "peer_policy", "shield_newcomers", "gamma")
VARIANT_KEYS = PARAM_KEYS + ("method", "metric")
RECIPES = (
    "fig1", "fig2a", "fig2b", "fig3", "fig5a", "fig5b", "fig6a", "fig6b",
    "fig7a", "fig7b", "fig8a", "fig8b", "appD", "appE",
)
_INT_KEYS = {"K", "N"}
_BOOL_KEYS = {"shield_newcomers"}
_STR_KEYS = {"publisher_policy", "peer_policy", "method", "metric"}


@dataclass(frozen=True)
class Sweep:
    axis: str
    start: float
    stop: float
    step: float

    def values(self) -> list:
        n = int(math.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        vals = [self.start + i * self.step for i in range(n)]
        if self.axis in _INT_KEYS:
            return [int(round(v)) for v in vals]
        return [float(round(v, 12)) for v in vals]

    @classmethod
    def parse(cls, text: str) -> "Sweep":
        """Parse ``axis:from:to:step``."""
        parts = text.split(":")
        if len(parts) != 4:
            raise SpecError(f"expected axis:from:to:step, got {text!r}", field="sweep")
        try:
            start, stop, step = (float(p) for p in parts[1:])
        except ValueError:
            raise SpecError(f"non-numeric range in {text!r}", field="sweep") from None
        return cls(parts[0], start, stop, step)


@dataclass(frozen=True)
class SimSettings:
    horizon: float = 2000.0
    warmup: float = 200.0
    replications: int = 5
    seed: int = 0
    metric: str = "throughput"
    fraction: float | None = None
    grid_step: float | None = None


@dataclass(frozen=True)
class ExperimentSpec:
    method: str
    params: ModelParams
    sweep: Sweep | None = None
    sim: SimSettings = SimSettings()
    output_path: str | None = None
    variants: tuple = ()  # ((key, (value, ...)), ...)
    J: int = 1
    name: str = ""
    assumptions: tuple = ()  # ((key, text), ...)

    def points(self) -> list[dict]:
        """Flat settings of every sweep point, ordered by sweep value then variant."""
        base = {k: getattr(self.params, k) for k in PARAM_KEYS}
        base.update(method=self.method, metric=self.sim.metric)
        keys = [k for k, _ in self.variants]
        combos = list(itertools.product(*(vals for _, vals in self.variants)))
        sweep_vals = self.sweep.values() if self.sweep else [None]
        out = []
        for value in sweep_vals:
            for combo in combos:
                point = dict(base)
                point.update(zip(keys, combo))
                if value is not None:
                    _apply_axis(point, self.sweep.axis, value)
                out.append(point)
        return out

    def to_config(self) -> str:
        """Render as an experiment file that :func:`parse_spec` reads back."""
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp["experiment"] = {"method": self.method, "J": str(self.J)}
        if self.name:
            cp["experiment"]["name"] = self.name
        if self.output_path:
            cp["experiment"]["out"] = str(self.output_path)
        cp["params"] = {k: _text(getattr(self.params, k)) for k in PARAM_KEYS}
        if self.sweep:
            s = self.sweep
            cp["sweep"] = {"axis": s.axis, "from": _text(s.start), "to": _text(s.stop), "step": _text(s.step)}
        if self.variants:
            cp["variants"] = {k: ", ".join(_text(v) for v in vals) for k, vals in self.variants}
        cp["sim"] = {k: _text(v) for k, v in dataclasses.asdict(self.sim).items() if v is not None}
        if self.assumptions:
            cp["assumptions"] = dict(self.assumptions)
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _text(v) -> str:
    if hasattr(v, "value"):
        return str(v.value)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return str(v)


def _apply_axis(point: dict, axis: str, value):
    if axis == "mu_prime_inverse":
        point["mu_prime"] = 1.0 / value
    else:
        point[axis] = value


# ---------------------------------------------------------------------------
# parsing


def _line_of(text: str, section: str, key: str | None) -> int | None:
    current = None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if key is None and current == section:
                return i
        elif current == section and key is not None:
            name = line.split("=", 1)[0].split(":", 1)[0].strip()
            if name == key:
                return i
    return None


def _convert(key: str, raw: str, text: str, section: str):
    raw = raw.strip()
    try:
        if key in _INT_KEYS:
            value = float(raw)
            if value != int(value):
                raise ValueError
            return int(value)
        if key in _BOOL_KEYS:
            low = raw.lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError
            return low in ("true", "yes", "1", "on")
        if key in _STR_KEYS:
            return raw
        return float(raw)
    except ValueError:
        raise SpecError(f"cannot read {raw!r}", field=f"{section}.{key}", line=_line_of(text, section, key)) from None


def parse_spec(text: str, output_path: str | None = None) -> ExperimentSpec:
    """Read an experiment file; errors name the section, key and line."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise SpecError(str(exc).splitlines()[0], line=getattr(exc, "lineno", None)) from None

    def where(section, key=None):
        return dict(field=f"{section}.{key}" if key else section, line=_line_of(text, section, key))

    known = {"experiment", "params", "sweep", "variants", "sim", "assumptions"}
    for section in cp.sections():
        if section not in known:
            raise SpecError(f"unknown section [{section}]", **where(section))
    if not cp.has_section("experiment") or "method" not in cp["experiment"]:
        raise SpecError("missing [experiment] method", field="experiment.method")
    exp = cp["experiment"]
    method = exp["method"].strip()
    if method not in METHODS:
        raise SpecError(f"method must be one of {', '.join(METHODS)}", **where("experiment", "method"))
    J = int(_convert("K", exp.get("J", "1"), text, "experiment"))

    if not cp.has_section("params"):
        raise SpecError("missing [params] section", field="params")
    values = {}
    for key, raw in cp["params"].items():
        if key not in PARAM_KEYS:
            raise SpecError(f"unknown parameter (expected one of {', '.join(PARAM_KEYS)})", **where("params", key))
        values[key] = _convert(key, raw, text, "params")

    sweep = None
    if cp.has_section("sweep"):
        sec = cp["sweep"]
        for key in ("axis", "from", "to", "step"):
            if key not in sec:
                raise SpecError("missing key", **where("sweep", key))
        nums = [_convert("x", sec[k], text, "sweep") for k in ("from", "to", "step")]
        sweep = Sweep(sec["axis"].strip(), *nums)
        sweep_line = _line_of(text, "sweep", "axis")
    else:
        sweep_line = None

    variants = []
    if cp.has_section("variants"):
        for key, raw in cp["variants"].items():
            if key not in VARIANT_KEYS:
                raise SpecError("cannot vary this key", **where("variants", key))
            items = [v for v in raw.split(",") if v.strip()]
            if not items:
                raise SpecError("no values", **where("variants", key))
            variants.append((key, tuple(_convert(key, v, text, "variants") for v in items)))

    sim_kwargs = {}
    if cp.has_section("sim"):
        types = {"horizon": float, "warmup": float, "replications": int, "seed": int, "metric": str, "fraction": float, "grid_step": float}
        for key, raw in cp["sim"].items():
            if key not in types:
                raise SpecError("unknown simulation setting", **where("sim", key))
            try:
                sim_kwargs[key] = types[key](raw.strip()) if types[key] is not int else int(float(raw))
            except ValueError:
                raise SpecError(f"cannot read {raw!r}", **where("sim", key)) from None

    assumptions = tuple(cp["assumptions"].items()) if cp.has_section("assumptions") else ()
    out = output_path or exp.get("out")
    return build_spec(
        method, values, sweep=sweep, variants=variants, sim=sim_kwargs, J=J, output_path=out,
        name=exp.get("name", ""), assumptions=assumptions, sweep_line=sweep_line, text=text,
    )


def load_spec(path, output_path: str | None = None) -> ExperimentSpec:
    """Read an experiment file, or the spec echoed inside a run manifest."""
    text = Path(path).read_text()
    if str(path).endswith(".json"):
        text = json.loads(text)["spec"]["config"]
    return parse_spec(text, output_path)


def build_spec(
    method: str,
    values: dict,
    sweep: Sweep | None = None,
    variants=(),
    sim: dict | None = None,
    J: int = 1,
    output_path: str | None = None,
    name: str = "",
    assumptions=(),
    sweep_line: int | None = None,
    text: str | None = None,
) -> ExperimentSpec:
    """Validate loose settings and assemble an :class:`ExperimentSpec`."""
    if method not in METHODS:
        raise SpecError(f"method must be one of {', '.join(METHODS)}", field="method")
    values = dict(values)
    if "N" not in values:
        if method in ("queueing", "bound") or (sweep and sweep.axis == "N"):
            values["N"] = 1 if not sweep or sweep.axis != "N" else int(sweep.start)
        else:
            raise SpecError("population N is required for this method", field="params.N")
    if method in ("queueing", "bound"):
        # the network models the most-deprived / rarest-first publisher
        values.setdefault("publisher_policy", "MDP_RFB")
    for key in ("K", "U", "mu"):
        if key not in values:
            raise SpecError("required parameter missing", field=f"params.{key}")
    try:
        params = ModelParams(**values)
    except (InvalidParams, TypeError, ValueError) as exc:
        raise SpecError(str(exc), field="params") from None
    try:
        settings = SimSettings(**(sim or {}))
    except TypeError as exc:
        raise SpecError(str(exc), field="sim") from None

    if sweep is not None:
        where = dict(field="sweep", line=sweep_line)
        if sweep.axis not in AXES:
            raise SpecError(f"axis must be one of {', '.join(AXES)}", **where)
        if sweep.step <= 0 or sweep.stop < sweep.start or sweep.start <= 0:
            raise SpecError("range must be non-empty and positive with a positive step", **where)
        if sweep.axis in _INT_KEYS and any(v != int(v) for v in (sweep.start, sweep.step)):
            raise SpecError(f"{sweep.axis} sweeps need integer bounds and step", **where)

    spec = ExperimentSpec(
        method, params, sweep, settings, output_path, tuple((k, tuple(v)) for k, v in variants), J, name, tuple(assumptions)
    )
    _validate_points(spec)
    return spec


def _validate_points(spec: ExperimentSpec):
    sim = spec.sim
    for point in spec.points():
        method, metric = point["method"], point["metric"]
        if method not in METHODS:
            raise SpecError(f"unknown method {method!r}", field="variants.method")
        if metric not in METRICS:
            raise SpecError(f"metric must be one of {', '.join(METRICS)}", field="sim.metric")
        try:
            params = _params(point)
        except InvalidParams as exc:
            raise SpecError(f"invalid sweep point: {exc}", field="sweep") from None
        if method == "markov" and count_states(params) > DEFAULT_STATE_CAP:
            raise SpecError(f"K={params.K}, N={params.N} exceeds the enumeration cap", field="sweep")
        if method in ("queueing", "bound"):
            if params.K < 2 or params.mu_prime <= 0:
                raise SpecError("queueing model needs K >= 2 and mu_prime > 0", field="params")
            if params.seeds_enabled or params.shield_newcomers:
                raise SpecError("queueing model covers neither seeds nor shielding", field="params")
        if method == "simulate":
            # transient metrics start at time zero, so warmup only matters for throughput
            if metric == "throughput" and not sim.horizon > sim.warmup >= 0:
                raise SpecError("need horizon > warmup >= 0", field="sim.horizon")
            if not sim.horizon > 0 or sim.replications < 1:
                raise SpecError("need horizon > 0 and replications >= 1", field="sim")
            if metric == "throughput" and sim.replications < 2:
                raise SpecError("confidence intervals need replications >= 2", field="sim.replications")
        elif metric != "throughput":
            raise SpecError("transient metrics need method = simulate", field="sim.metric")


def _params(point: dict) -> ModelParams:
    return ModelParams(**{k: point[k] for k in PARAM_KEYS})


# ---------------------------------------------------------------------------
# execution


@dataclass
class PointResult:
    rows: list
    status: str
    message: str = ""
    seconds: float = 0.0


def _row(point: dict, **values) -> dict:
    row = dict.fromkeys(COLUMNS, None)
    row.update({k: point[k] for k in ("method", "K", "N", "U", "mu", "mu_prime", "publisher_policy", "peer_policy", "gamma", "metric")})
    row["shield"] = point["shield_newcomers"]
    row.update(values)
    return row


def evaluate_point(point: dict, sim: SimSettings, J: int = 1) -> PointResult:
    """Run one sweep point; numerical failures are returned, not raised."""
    start = time.perf_counter()
    method = point["method"]
    try:
        params = _params(point)
        if method == "markov":
            Q = build_generator(params)
            pi = solve_stationary(Q)
            rows = [_row(point, throughput=throughput(pi, Q), iterations=pi.iterations, residual=pi.residual)]
        elif method == "queueing":
            sol = fixed_point(params, J=J)
            resid = abs(sol.Gamma0 - sol.lambda_s) / sol.lambda_s
            rows = [_row(point, throughput=sol.lambda_s, iterations=sol.iterations, residual=resid)]
        elif method == "bound":
            rows = [_row(point, throughput=proposition1_bound(params))]
        elif point["metric"] == "throughput":
            config = SimConfig(params, sim.horizon, sim.seed, sim.warmup, sim.replications)
            est = estimate_throughput(config)
            rows = [_row(point, throughput=est.mean, ci_halfwidth=est.ci_halfwidth, seed=sim.seed)]
        else:
            rows = _transient_rows(point, params, sim)
        status, message = "ok", ""
    except (NotConverged, Unstable) as exc:
        rows, status, message = [_row(point)], "not_converged", str(exc)
    except SwarmError as exc:
        rows, status, message = [_row(point)], "failed", str(exc)
    return PointResult(rows, status, message, time.perf_counter() - start)


def _transient_rows(point: dict, params: ModelParams, sim: SimSettings) -> list:
    entry = point["metric"] == "entry_time"
    ic = InitialCondition.ALL_EMPTY if entry else InitialCondition.ONE_CLUB
    config = SimConfig(params, sim.horizon, sim.seed, 0.0, sim.replications, ic)
    step = sim.grid_step or sim.horizon / 100
    grid = np.arange(0.0, sim.horizon + step / 2, step)
    if entry:
        res = transient_time_to_one_club(config, sim.fraction or 0.9, grid)
    else:
        res = transient_time_to_leave_one_club(config, sim.fraction or 0.5, grid)
    return [_row(point, seed=sim.seed, time=t, probability=p) for t, p in zip(res.grid, res.cdf)]


def _evaluate(args):
    return evaluate_point(*args)


@dataclass
class RunManifest:
    """Provenance of one run: spec echo, version, seeds, timing and per-point status."""

    spec: dict
    version: str
    seeds: list
    started: str
    wall_clock: float
    points: list = field(default_factory=list)

    @property
    def failed(self) -> list:
        return [p for p in self.points if p["status"] != "ok"]

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, default=str)


@dataclass
class RunResult:
    spec: ExperimentSpec
    rows: list
    manifest: RunManifest

    @property
    def converged(self) -> bool:
        return not any(p["status"] == "not_converged" for p in self.manifest.points)


def run(spec: ExperimentSpec, jobs: int = 1, write: bool = True) -> RunResult:
    """Evaluate every sweep point and, when the spec names an output, write CSV and manifest.

    Failures at individual points are recorded in the manifest and leave
    an empty value in the CSV; the remaining points still run.
    """
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    t0 = time.perf_counter()
    points = spec.points()
    tasks = [(p, spec.sim, spec.J) for p in points]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_evaluate, tasks))
    else:
        results = [_evaluate(t) for t in tasks]

    rows, entries = [], []
    for i, (point, res) in enumerate(zip(points, results)):
        first = len(rows)
        rows.extend(res.rows)
        entries.append({
            "index": i,
            "rows": [first, len(rows)],
            "settings": {k: _text(v) for k, v in point.items()},
            "status": res.status,
            "message": res.message,
            "seconds": round(res.seconds, 6),
        })
    seeds = [spec.sim.seed] if any(p["method"] == "simulate" for p in points) else []
    manifest = RunManifest(
        spec={"config": spec.to_config(), "name": spec.name, "assumptions": dict(spec.assumptions)},
        version=__version__,
        seeds=seeds,
        started=started,
        wall_clock=time.perf_counter() - t0,
        points=entries,
    )
    result = RunResult(spec, rows, manifest)
    if write and spec.output_path:
        write_outputs(result, spec.output_path)
    return result


# ---------------------------------------------------------------------------
# output


def format_value(v) -> str:
    if v is None:
        return ""
    if hasattr(v, "value"):
        return str(v.value)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "inf" if math.isinf(v) else f"{float(v):.12g}"
    return str(v)


def write_csv(rows, stream, columns=COLUMNS):
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(row.get(c)) for c in columns])


def manifest_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".manifest.json")


def write_outputs(result: RunResult, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        write_csv(result.rows, fh)
    mpath = manifest_path(path)
    mpath.write_text(result.manifest.to_json())
    return mpath


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# comparison


def _value(row):
    v = row["throughput"] if row["throughput"] is not None else row["probability"]
    return None if v is None else float(v)


def _join_keys(a: ExperimentSpec, b: ExperimentSpec) -> list[str]:
    axis_a = a.sweep.axis if a.sweep else None
    axis_b = b.sweep.axis if b.sweep else None
    if axis_a != axis_b:
        raise AxisMismatch(f"sweep axes differ: {axis_a} vs {axis_b}")
    keys = []
    if axis_a is not None:
        keys.append("mu_prime" if axis_a == "mu_prime_inverse" else axis_a)
    shared = set(dict(a.variants)) & set(dict(b.variants))
    keys += [k for k, _ in a.variants if k in shared and k not in ("method",) and k not in keys]
    return keys


def _key_column(k):
    return "shield" if k == "shield_newcomers" else k


def compare(a, b, out: str | None = None) -> list[dict]:
    """Join two runs on their sweep axis and add a relative-error column.

    ``a`` and ``b`` are specs or finished runs.  The relative error is
    ``|a - b| / |b|``, so ``b`` acts as the reference.  Raises
    :class:`AxisMismatch` when the sweep axes differ or no point lines up.
    """
    ra = a if isinstance(a, RunResult) else run(a, write=False)
    rb = b if isinstance(b, RunResult) else run(b, write=False)
    keys = [_key_column(k) for k in _join_keys(ra.spec, rb.spec)]
    if any(r["time"] is not None for r in ra.rows + rb.rows):
        keys.append("time")

    def keyed(rows):
        table = {}
        for r in rows:
            table.setdefault(tuple(format_value(r[k]) for k in keys), r)
        return table

    ta, tb = keyed(ra.rows), keyed(rb.rows)
    common = [k for k in ta if k in tb]
    if not common:
        raise AxisMismatch("the two runs share no sweep point")
    joined = []
    for k in common:
        x, y = ta[k], tb[k]
        va, vb = _value(x), _value(y)
        err = None
        if va is not None and vb is not None:
            err = abs(va - vb) / abs(vb) if vb != 0 else (0.0 if va == 0 else math.inf)
        row = dict(zip(keys, k))
        row.update(
            method_a=x["method"], value_a=va, ci_halfwidth_a=x["ci_halfwidth"],
            method_b=y["method"], value_b=vb, ci_halfwidth_b=y["ci_halfwidth"], relative_error=err,
        )
        joined.append(row)
    if out:
        columns = keys + ["method_a", "value_a", "ci_halfwidth_a", "method_b", "value_b", "ci_halfwidth_b", "relative_error"]
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as fh:
            write_csv(joined, fh, columns)
    return joined


# ---------------------------------------------------------------------------
# recipes


def recipe_text(name: str) -> str:
    if name not in RECIPES:
        raise SpecError(f"unknown recipe {name!r}; choose from {', '.join(RECIPES)}", field="recipe")
    return resources.files("swarmcap").joinpath("recipes", f"{name}.ini").read_text()


def load_recipe(name: str, output_path: str | None = None) -> ExperimentSpec:
    return parse_spec(recipe_text(name), output_path)
