#!/usr/bin/env python3
"""
Experiments
Config files, the worker pool and one runner per experiment kind.

Config files are key = value text split into [sections]; each section body is
read with python-dotenv and the result validated by ExperimentConfig. Work is
cut into fixed-size chunks before it reaches the pool, so outputs do not
depend on the number of workers.
"""

import json
import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from io import StringIO
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import plots
from .commute_lab import (DEFAULT_THRESHOLD, DefectBatch, commutator_defect, commutator_defects,
                          defect_header, defect_statistics, region_ensemble)
from .concentration import (NormGrid, concentration_residual, curve_ensemble, ensemble_density_bound,
                            partition_variation, phi_delta_violations, stability_bound_audit,
                            trajectory_ensemble)
from .errors import ConfigError, DegenerateFit, FlowUndefined, TooManyLost
from .expressions import load_field_expression, load_pair_expressions
from .field_catalog import (get_audit_function, get_field, get_pair,
                            pair_names, pair_oracle, shifted_field)
from .field_core import FieldPairSpec, VectorFieldSpec
from .flow_engine import (ANALYTIC, DEFAULT_TOL, NUMERIC, FlowResult, TimeWindow,
                          chain_rule_residual, escape_time_for_field, flow_points,
                          integrate_trajectory, write_trajectory_csv)
from .grids import GridSpec, ScalarGridField, write_grid_csv
from .maximal import (maximal_function, maximal_grid, sharp_maximal_decay, sharp_maximal_function,
                      sharp_maximal_grid, sharp_radii)
from .measure_lab import (GAUSSIAN, RESTRICTED, UNIFORM_BOX, MeasureSource,
                          compressibility_estimate, sample_reference_measure, write_ensemble_csv)
from .reporting import ResidualReport, config_hash, file_digest, write_manifest, write_summary, write_table
from .residuals import gronwall_audit, residual_ladder, residual_R_integral, scaling_exponent
from .settings import DEFAULT_OUTPUT_DIR, DEFAULT_WORKERS
from .sobolev_audit import ORDERS, sample_point_pairs, sobolev_pointwise_audit
from .streams import draw_blocks

logger = logging.getLogger("flowlab-experiments")

CHUNK_SIZE = 1024

EXPERIMENTS = ("defect", "residual_ladder", "compressibility", "maximal_decay",
               "sobolev_audit", "concentration", "stability")
RUN_ONLY_KEYS = {"workers", "out", "plots"}


# Config model

def _split_list(value: Any) -> Any:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FieldSection(_Section):
    pair: Optional[str] = None
    field: Optional[str] = None
    expression: Optional[str] = None
    expression2: Optional[str] = None
    method: Literal["analytic", "numeric"] = ANALYTIC
    tol: float = Field(DEFAULT_TOL, gt=0)


class SamplingSection(_Section):
    measure: Literal["gaussian", "uniform_box", "restricted"] = GAUSSIAN
    region: Optional[List[Tuple[float, float]]] = None
    center: Optional[List[float]] = None
    radius: Optional[float] = Field(None, gt=0)
    escape_radius: Optional[float] = Field(None, gt=0)
    count: int = Field(1000, gt=0)

    @field_validator("region", mode="before")
    @classmethod
    def parse_region(cls, value):
        if isinstance(value, str):
            return [tuple(float(v) for v in axis.split(",")) for axis in value.split(";") if axis.strip()]
        return value

    @field_validator("center", mode="before")
    @classmethod
    def split_center(cls, value):
        return _split_list(value)

    @model_validator(mode="after")
    def check_region(self):
        if self.measure != GAUSSIAN and not self.region:
            raise ValueError(f"measure {self.measure} needs a region")
        if self.region and any(not lo < hi for lo, hi in self.region):
            raise ValueError("region axes need lo < hi")
        return self


class GridSection(_Section):
    low: float = -4.0
    high: float = 4.0
    cells: int = Field(32, ge=2)
    dim: int = Field(3, ge=1)

    def spec(self) -> GridSpec:
        return GridSpec.cube(self.low, self.high, self.cells, self.dim)


class DefectSection(_Section):
    s: List[float] = [0.5, 1.0, 2.0]
    t: List[float] = [0.5, 1.0, 2.0]
    threshold: float = Field(DEFAULT_THRESHOLD, gt=0)

    @field_validator("s", "t", mode="before")
    @classmethod
    def split_lists(cls, value):
        return _split_list(value)


class LadderSection(_Section):
    kinds: List[Literal["A", "B", "R"]] = ["A", "B", "R"]
    s: float = 0.3
    t: float = 0.0
    p: float = Field(1.0, ge=1)
    k_min: int = 3
    k_max: int = 10
    T: float = Field(0.0, ge=0)
    nodes: int = Field(16, ge=2)

    @field_validator("kinds", mode="before")
    @classmethod
    def split_lists(cls, value):
        return _split_list(value)


class CompressibilitySection(_Section):
    times: List[float] = [0.5, 1.0]

    @field_validator("times", mode="before")
    @classmethod
    def split_lists(cls, value):
        return _split_list(value)


class MaximalSection(_Section):
    function: str = "bump"
    p: float = Field(2.0, gt=1)
    radii: List[float] = [0.8, 0.4, 0.2, 0.1]
    interior: bool = False

    @field_validator("radii", mode="before")
    @classmethod
    def split_lists(cls, value):
        return _split_list(value)


class SobolevSection(_Section):
    function: str = "bump"
    orders: List[str] = list(ORDERS)
    pairs: int = Field(2000, gt=0)
    max_distance: float = Field(0.5, gt=0)

    @field_validator("orders", mode="before")
    @classmethod
    def split_lists(cls, value):
        return _split_list(value)


class PathSection(_Section):
    a: float = 0.0
    b: float = 1.0
    p0: float = 4.0
    p1: float = 4.0
    q: float = 2.0
    C: Optional[float] = Field(None, gt=0)
    norm_low: float = -8.0
    norm_high: float = 8.0
    norm_resolution: int = Field(64, ge=2)

    def window(self) -> TimeWindow:
        return TimeWindow(self.a, self.b)

    def norm_grid(self) -> NormGrid:
        return NormGrid(self.norm_low, self.norm_high, self.norm_resolution)


class ConcentrationSection(PathSection):
    s: float = 0.0
    t: List[float] = [0.0625, 0.125, 0.25, 0.5, 1.0]
    levels: List[int] = [0, 1, 2, 3, 4, 5]
    curves: Literal["integral", "straight"] = "integral"

    @field_validator("t", "levels", mode="before")
    @classmethod
    def split_lists(cls, value):
        return _split_list(value)


class StabilitySection(PathSection):
    field2: Optional[str] = None
    perturbation: Optional[List[float]] = None
    intervals: int = Field(4, ge=1)
    delta: float = Field(0.1, gt=0)
    phi_checks: int = Field(10000, ge=0)

    @field_validator("perturbation", mode="before")
    @classmethod
    def split_lists(cls, value):
        return _split_list(value)


class ExperimentConfig(_Section):
    experiment: Literal["defect", "residual_ladder", "compressibility", "maximal_decay",
                        "sobolev_audit", "concentration", "stability"]
    seed: int = Field(ge=0, lt=2 ** 64)
    out: str = DEFAULT_OUTPUT_DIR
    workers: int = Field(DEFAULT_WORKERS, ge=1)
    plots: bool = False
    max_lost_fraction: float = Field(0.05, ge=0, le=1)
    field: FieldSection = FieldSection()
    sampling: SamplingSection = SamplingSection()
    grid: GridSection = GridSection()
    defect: DefectSection = DefectSection()
    ladder: LadderSection = LadderSection()
    compressibility: CompressibilitySection = CompressibilitySection()
    maximal: MaximalSection = MaximalSection()
    sobolev: SobolevSection = SobolevSection()
    concentration: ConcentrationSection = ConcentrationSection()
    stability: StabilitySection = StabilitySection()

    def canonical_json(self) -> str:
        data = self.model_dump(mode="json", exclude=RUN_ONLY_KEYS)
        # expression files count by content, not by path
        sources = {}
        for path in (self.field.expression, self.field.expression2):
            if path is None:
                continue
            try:
                sources[path] = file_digest(path)
            except OSError as e:
                raise ConfigError(f"cannot read expression file {path}: {e}") from e
        if sources:
            data["expression_sha256"] = sources
        return json.dumps(data, sort_keys=True, separators=(",", ":"))

    @property
    def digest(self) -> str:
        return config_hash(self.canonical_json())


SECTIONS = tuple(name for name in ExperimentConfig.model_fields
                 if isinstance(ExperimentConfig.model_fields[name].default, BaseModel))
_HEADER = re.compile(r"^\s*\[([A-Za-z_][A-Za-z0-9_]*)\]\s*$")


def parse_config_text(text: str) -> Dict[str, Dict[str, str]]:
    """Split [section] chunks and read each with python-dotenv"""
    chunks: Dict[str, List[str]] = {"experiment": []}
    current = "experiment"
    for line in text.splitlines():
        match = _HEADER.match(line)
        if match:
            current = match.group(1).lower()
            if current != "experiment" and current not in SECTIONS:
                raise ConfigError(f"unknown config section [{current}]", section=current)
            chunks.setdefault(current, [])
            continue
        chunks[current].append(line)
    parsed = {}
    for name, lines in chunks.items():
        values = dotenv_values(stream=StringIO("\n".join(lines)))
        parsed[name] = {k.strip(): v for k, v in values.items() if v is not None and v != ""}
    return parsed


def build_config(sections: Dict[str, Dict[str, Any]],
                 overrides: Optional[Dict[str, Any]] = None,
                 defaults: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """defaults < file values < overrides"""
    data: Dict[str, Any] = dict(defaults or {})
    data.update(sections.get("experiment", {}))
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    for name in SECTIONS:
        if sections.get(name):
            data[name] = sections[name]
    if "seed" not in data:
        raise ConfigError("a seed is required (config key 'seed' or --seed)")
    try:
        config = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid experiment config: {e}") from e
    check_catalog_references(config)
    return config


def load_config(path: Optional[Union[str, Path]] = None,
                overrides: Optional[Dict[str, Any]] = None,
                defaults: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    sections: Dict[str, Dict[str, str]] = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        sections = parse_config_text(text)
    return build_config(sections, overrides, defaults)


def check_catalog_references(config: ExperimentConfig) -> None:
    """Every catalog name in the config must resolve"""
    fs = config.field
    if fs.pair is not None:
        get_pair(fs.pair)
    if fs.field is not None:
        get_field(fs.field)
    for path in (fs.expression, fs.expression2):
        if path is not None and not Path(path).is_file():
            raise ConfigError(f"expression file {path} not found")
    if config.experiment == "maximal_decay":
        get_audit_function(config.maximal.function, config.grid.dim)
    if config.experiment == "sobolev_audit":
        get_audit_function(config.sobolev.function, config.grid.dim)
        unknown = set(config.sobolev.orders) - set(ORDERS)
        if unknown:
            raise ConfigError(f"unknown Sobolev orders {sorted(unknown)}")
    if config.experiment == "stability" and config.stability.field2 is not None:
        get_field(config.stability.field2)


# Field resolution (runs in workers as well)

def resolve_pair(section: FieldSection) -> FieldPairSpec:
    if section.pair is not None:
        return get_pair(section.pair)
    if section.expression and section.expression2:
        return load_pair_expressions(section.expression, section.expression2)
    raise ConfigError("this experiment needs a field pair (pair or expression + expression2)")


def resolve_field(section: FieldSection) -> Tuple[VectorFieldSpec, Optional[Callable]]:
    """(field, closed-form flow or None)"""
    if section.field is not None:
        field = get_field(section.field)
        pair_name, _, part = section.field.rpartition(".")
        if pair_name in pair_names() and part in ("V1", "V2"):
            return field, pair_oracle(get_pair(pair_name), 1 if part == "V1" else 2)
        return field, None
    if section.expression is not None:
        return load_field_expression(section.expression), None
    if section.pair is not None:
        pair = get_pair(section.pair)
        return pair.first, pair_oracle(pair, 1)
    raise ConfigError("this experiment needs a field (field, expression or pair)")


def _flow_method(section: FieldSection, oracle: Optional[Callable]) -> str:
    if section.method == ANALYTIC and oracle is None:
        logger.info("no closed-form flow available, integrating numerically")
        return NUMERIC
    return section.method


# Worker pool

class ChunkRunner:
    """Maps picklable tasks over payloads in order, in-process for one worker"""

    def __init__(self, workers: int = 1):
        self.workers = max(1, int(workers))
        self._pool: Optional[ProcessPoolExecutor] = None

    def __enter__(self) -> "ChunkRunner":
        if self.workers > 1:
            self._pool = ProcessPoolExecutor(max_workers=self.workers)
        return self

    def __exit__(self, *exc) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def map(self, task: Callable, payloads: Sequence[Any]) -> List[Any]:
        if self._pool is None:
            return [task(p) for p in payloads]
        return list(self._pool.map(task, payloads))


def chunks(points: np.ndarray, size: int = CHUNK_SIZE) -> List[np.ndarray]:
    return [points[i:i + size] for i in range(0, len(points), size)] or [points]


def _defect_task(payload) -> DefectBatch:
    section, points, s, t = payload
    return commutator_defects(resolve_pair(section), points, s, t, section.method, section.tol)


def _flow_task(payload) -> FlowResult:
    section, points, t = payload
    field, oracle = resolve_field(section)
    return flow_points(field, points, t, section.tol, _flow_method(section, oracle), oracle)


def _ladder_task(payload) -> ResidualReport:
    section, ens, kind, s, delta, t, p = payload
    return residual_ladder(kind, resolve_pair(section), ens, s, [delta], t, p,
                           section.method, section.tol)[0]


def _concat_defects(parts: Sequence[DefectBatch]) -> DefectBatch:
    return DefectBatch(*(np.concatenate([getattr(b, name) for b in parts])
                         for name in ("points", "forward", "reverse", "defect", "crossed", "ok", "failed_leg")))


def _concat_flows(parts: Sequence[FlowResult]) -> FlowResult:
    return FlowResult(*(np.concatenate([getattr(r, name) for r in parts])
                        for name in ("points", "ok", "crossed", "status")))


# Shared helpers

def measure_source(config: ExperimentConfig, exclusion=None) -> MeasureSource:
    sampling = config.sampling
    if sampling.measure == UNIFORM_BOX:
        return MeasureSource.uniform_box(sampling.region, exclusion)
    if sampling.measure == RESTRICTED:
        return MeasureSource.restricted(sampling.region, sampling.center, sampling.radius, exclusion)
    return MeasureSource.gaussian(config.grid.dim, exclusion)


def _out_dir(config: ExperimentConfig) -> Path:
    return Path(config.out)


class RunResult:
    def __init__(self, experiment: str, out_dir: Path, digest: str):
        self.experiment = experiment
        self.out_dir = out_dir
        self.digest = digest
        self.artifacts: List[str] = []
        self.summary: Dict[str, Any] = {}
        self.lost = 0
        self.total = 0

    def table(self, name: str, header: Sequence[str], rows) -> Path:
        path = write_table(self.out_dir / name, header, rows, self.digest)
        self.artifacts.append(name)
        return path

    def add(self, path: Path) -> None:
        self.artifacts.append(Path(path).name)

    def count_lost(self, lost: int, total: int) -> None:
        self.lost += int(lost)
        self.total += int(total)

    @property
    def lost_fraction(self) -> float:
        return self.lost / self.total if self.total else 0.0


# Runners

def run_defect(config: ExperimentConfig, runner: ChunkRunner, result: RunResult) -> None:
    pair = resolve_pair(config.field)
    if config.sampling.region is None:
        raise ConfigError("defect experiments need a sampling region")
    spec, fs = config.defect, config.field

    def pooled(p: FieldPairSpec, points: np.ndarray, s: float, t: float) -> DefectBatch:
        return _concat_defects(runner.map(_defect_task, [(fs, c, s, t) for c in chunks(points)]))

    rows = defect_statistics(pair, config.sampling.region, spec.s, spec.t, config.sampling.count,
                             config.seed, spec.threshold, fs.method, fs.tol, runner=pooled)
    result.table("defect.csv", defect_header(pair.dim), [r.as_row() for r in rows])
    result.count_lost(sum(r.lost for r in rows), config.sampling.count * len(rows))
    ens = region_ensemble(pair, config.sampling.region, config.sampling.count, config.seed)
    result.add(write_ensemble_csv(ens, result.out_dir / "ensemble.csv", result.digest))
    result.summary = {"pair": pair.name, "samples": len(ens), "header": defect_header(pair.dim),
                      "rows": [r.as_row() for r in rows]}
    try:
        sample = commutator_defect(pair, ens.points[0], spec.s[-1], spec.t[-1], fs.method, fs.tol)
        result.summary["first_sample"] = {"x": sample.x, "forward": sample.forward,
                                          "reverse": sample.reverse, "defect": sample.defect,
                                          "crossed": sample.crossed}
    except FlowUndefined as e:
        logger.warning(f"first sample: {e.message}")
    if config.plots:
        means = np.array([r.mean_defect for r in rows]).reshape(len(spec.s), len(spec.t))
        result.add(plots.heat_map(result.out_dir / "defect.svg", spec.s, spec.t, means,
                                  "mean |defect|", pair.name))


def run_residual_ladder(config: ExperimentConfig, runner: ChunkRunner, result: RunResult) -> None:
    pair = resolve_pair(config.field)
    exclusion = pair.first.singular_set or pair.second.singular_set
    ens = sample_reference_measure(measure_source(config, exclusion), config.sampling.count, config.seed)
    spec = config.ladder
    deltas = [2.0 ** -k for k in range(spec.k_min, spec.k_max + 1)]
    rows, fits, series = [], {}, {}
    for kind in spec.kinds:
        payloads = [(config.field, ens, kind, spec.s, d, spec.t, spec.p) for d in deltas]
        reports = runner.map(_ladder_task, payloads)
        try:
            fit = scaling_exponent(reports)
            fits[kind] = {"slope": fit.slope, "ci_low": fit.ci_low, "ci_high": fit.ci_high,
                          "stderr": fit.stderr}
        except DegenerateFit as e:
            logger.warning(f"{kind} ladder: no scaling fit ({e.message})")
            fits[kind] = {"slope": math.nan, "ci_low": math.nan, "ci_high": math.nan, "stderr": math.nan}
        for r in reports:
            lost = int(r.extra.get("lost", 0.0))
            result.count_lost(lost, r.sample_count + lost)
            rows.append([kind, r.delta, r.value, r.sample_count, r.extra.get("lost", 0.0),
                         fits[kind]["slope"], fits[kind]["ci_low"], fits[kind]["ci_high"]])
        series[kind] = [r.value for r in reports]
    result.table("ladder.csv", ["kind", "delta", "value", "samples", "lost", "slope", "ci_low", "ci_high"],
                 rows)
    result.summary = {"pair": pair.name, "fits": fits, "deltas": deltas}

    if spec.T > 0:
        s_prime = spec.s + deltas[-1]
        audit = gronwall_audit(pair, ens, spec.s, s_prime, spec.T, spec.p,
                               method=config.field.method, tol=config.field.tol)
        integral = residual_R_integral(pair, ens, spec.s, s_prime, spec.T, spec.nodes,
                                       config.field.method, config.field.tol)
        result.summary["gronwall"] = {"sup_norm": audit.sup_norm, "bound": audit.bound,
                                      "lipschitz": audit.lipschitz, "holds": audit.holds}
        result.summary["R_integral"] = integral.value
    if config.plots:
        result.add(plots.line_plot(result.out_dir / "ladder.svg", deltas, series, "s' - s",
                                   "residual norm", pair.name, loglog=True))


def run_compressibility(config: ExperimentConfig, runner: ChunkRunner, result: RunResult) -> None:
    field, oracle = resolve_field(config.field)
    ens = sample_reference_measure(measure_source(config, field.singular_set),
                                   config.sampling.count, config.seed)
    grid = config.grid.spec()

    def mover(points: np.ndarray, t: float) -> FlowResult:
        return _concat_flows(runner.map(_flow_task, [(config.field, c, t) for c in chunks(points)]))

    report = compressibility_estimate(field, ens, config.compressibility.times, grid, flow=mover)
    result.count_lost(sum(report.lost), len(ens) * len(report.times))
    rows = [[t, ratio, lost, report.tolerance]
            for t, ratio, lost in zip(report.times, report.density_sup, report.lost)]
    result.table("compressibility.csv", ["t", "density_ratio", "lost", "tolerance"], rows)
    result.summary = {"field": field.name, "C_estimate": report.C_estimate,
                      "within_tolerance": report.within_tolerance(), "samples": len(ens)}
    sampling = config.sampling
    if sampling.escape_radius is not None and sampling.radius is not None:
        center = sampling.center or [0.0] * field.dim
        lifespan = escape_time_for_field(field, center, sampling.radius, sampling.escape_radius,
                                         seed=config.seed)
        result.summary["escape_time"] = lifespan
        if max(config.compressibility.times) > lifespan:
            logger.warning(f"flow times exceed the escape-time bound {lifespan:.4g}")
    if config.plots:
        result.add(plots.line_plot(result.out_dir / "compressibility.svg", report.times,
                                   {"sup density ratio": report.density_sup}, "t", "ratio", field.name))


def run_maximal_decay(config: ExperimentConfig, runner: ChunkRunner, result: RunResult) -> None:
    spec = config.grid.spec()
    f = get_audit_function(config.maximal.function, spec.dim)
    g = ScalarGridField.from_function(spec, f)
    decay = sharp_maximal_decay(g, config.maximal.p, config.maximal.radii, config.maximal.interior)
    star = maximal_grid(g)
    sharp = sharp_maximal_grid(g, float(np.max(decay.radii)))
    violations = int(np.sum(sharp > 2.0 * star))
    ratios = np.concatenate([[math.nan], decay.ratios])
    result.table("maximal_decay.csv", ["radius", "norm", "ratio_to_previous"],
                 zip(decay.radii, decay.norms, ratios))
    result.add(write_grid_csv(ScalarGridField(spec, star), result.out_dir / "maximal_grid.csv",
                              result.digest))
    result.summary = {"function": f.name, "p": decay.p, "monotone": decay.monotone,
                      "strictly_decreasing": decay.strictly_decreasing,
                      "sharp_over_twice_star_violations": violations}
    center = np.array([0.5 * (lo + hi) for lo, hi in spec.bounds])
    radii = sharp_radii(spec, float(np.max(decay.radii)))
    result.summary["at_center"] = {
        "maximal_within_r": maximal_function(g, center, radii),
        "sharp": sharp_maximal_function(g, center, float(np.max(decay.radii)), radii),
    }
    if config.plots:
        result.add(plots.line_plot(result.out_dir / "maximal_decay.svg", decay.radii,
                                   {"norm": decay.norms}, "r", f"L^{decay.p:g} norm", f.name, loglog=True))


def run_sobolev_audit(config: ExperimentConfig, runner: ChunkRunner, result: RunResult) -> None:
    spec = config.grid.spec()
    f = get_audit_function(config.sobolev.function, spec.dim)
    xs, ys = sample_point_pairs(spec, config.sobolev.pairs, config.seed, config.sobolev.max_distance)
    rows = []
    for order in config.sobolev.orders:
        report = sobolev_pointwise_audit(f, order, xs, ys, spec)
        rows.append([order, report.pair_count, report.skipped, report.excluded,
                     report.max_ratio, report.mean_ratio, report.max_lhs])
    result.table("sobolev_audit.csv",
                 ["order", "pairs", "skipped", "excluded", "max_ratio", "mean_ratio", "max_lhs"], rows)
    result.summary = {"function": f.name, "orders": {r[0]: {"max_ratio": r[4], "mean_ratio": r[5]}
                                                      for r in rows}}


def _straight_lines(field: VectorFieldSpec, a: float):
    def curve(points: np.ndarray, tau: float) -> np.ndarray:
        return points + (tau - a) * np.broadcast_to(field.eval(points, a), points.shape)
    return curve


def run_concentration(config: ExperimentConfig, runner: ChunkRunner, result: RunResult) -> None:
    field, _ = resolve_field(config.field)
    spec = config.concentration
    ens = sample_reference_measure(measure_source(config, field.singular_set),
                                   config.sampling.count, config.seed)
    window = spec.window()
    finest = max(spec.levels) if spec.levels else 0
    nodes = sorted(set(np.linspace(spec.a, spec.b, 2 ** finest + 1).tolist())
                   | {spec.s + t for t in spec.t if spec.a <= spec.s + t <= spec.b})
    if spec.curves == "integral":
        traj = trajectory_ensemble(field, ens, window, nodes, config.field.tol)
    else:
        traj = curve_ensemble(_straight_lines(field, spec.a), ens, window, nodes, name="straight lines")
    result.count_lost(len(ens) - len(traj), len(ens))
    grid = spec.norm_grid()
    C = spec.C if spec.C is not None else ensemble_density_bound(traj, grid=grid)

    rows, lengths, lhs_values = [], [], []
    for t in spec.t:
        res = concentration_residual(traj, field, spec.s, spec.s + t, spec.p0, spec.p1, spec.q, C, grid)
        rows.append([spec.s, spec.s + t, res.lhs, res.omega_bound, res.ratio, res.C, res.outside_fraction])
        lengths.append(t)
        lhs_values.append(res.lhs)
    result.table("concentration.csv", ["s", "t", "lhs", "omega_bound", "ratio", "C", "outside_fraction"],
                 rows)
    variation = partition_variation(traj, field, spec.a, spec.b, spec.levels, spec.p0, spec.p1, spec.q,
                                    C, grid)
    result.table("variation.csv", ["level", "mesh", "lhs_sum", "omega_sum"],
                 [v.as_row() for v in variation])

    result.summary = {"field": field.name, "curves": spec.curves, "C": C,
                      "bound_holds": all(r[2] <= r[3] for r in rows)}
    try:
        result.summary["lhs_slope"] = scaling_exponent(deltas=lengths, values=lhs_values).slope
    except DegenerateFit as e:
        logger.info(f"no length scaling fit: {e.message}")

    # one representative path, with the chain-rule check for a smooth test function
    path = integrate_trajectory(field, ens.points[0], window, config.field.tol, t_eval=nodes)
    result.add(write_trajectory_csv(path, result.out_dir / "trajectory.csv",
                                    f"config_hash={result.digest}"))
    check = chain_rule_residual(get_audit_function("quadratic", field.dim), path, field)
    result.summary["chain_rule_residual"] = check.value
    if config.plots:
        result.add(plots.line_plot(result.out_dir / "concentration.svg", lengths,
                                   {"lhs": lhs_values, "omega": [r[3] for r in rows]},
                                   "t - s", "residual", field.name, loglog=True))


def _phi_delta_check(dim: int, count: int, seed: int) -> int:
    """Violations of phi(y) <= phi(x) + |y - x| / (delta + |x|) over seeded triples"""
    if count == 0:
        return 0

    def draw(rng, size):
        scale = 10.0 ** rng.uniform(-3, 2, (size, 1))
        xs = scale * rng.standard_normal((size, dim))
        ys = xs + scale * rng.standard_normal((size, dim))
        deltas = 10.0 ** rng.uniform(-4, 1, (size, 1))
        return np.concatenate([xs, ys, deltas], axis=1)

    triples = draw_blocks(seed, count, "phi-delta", draw)
    return phi_delta_violations(triples[:, :dim], triples[:, dim:2 * dim], triples[:, -1])


def run_stability(config: ExperimentConfig, runner: ChunkRunner, result: RunResult) -> None:
    field1, _ = resolve_field(config.field)
    spec = config.stability
    if spec.field2 is not None:
        field2 = get_field(spec.field2)
    elif spec.perturbation is not None:
        field2 = shifted_field(field1, spec.perturbation)
    else:
        raise ConfigError("stability needs field2 or a perturbation vector")
    ens = sample_reference_measure(measure_source(config, field1.singular_set or field2.singular_set),
                                   config.sampling.count, config.seed)
    window = spec.window()
    partition = np.linspace(spec.a, spec.b, spec.intervals + 1)
    traj1 = trajectory_ensemble(field1, ens, window, partition, config.field.tol)
    traj2 = trajectory_ensemble(field2, ens, window, partition, config.field.tol)
    result.count_lost(2 * len(ens) - len(traj1) - len(traj2), 2 * len(ens))
    if len(traj1) != len(ens) or len(traj2) != len(ens):
        raise TooManyLost("some trajectories were lost; the identity coupling is undefined",
                          lost=result.lost)
    audit = stability_bound_audit(traj1, traj2, partition, spec.delta, spec.p0, spec.p1, spec.q,
                                  field1, field2, C1=spec.C, C2=spec.C, grid=spec.norm_grid())
    rows = [["lhs", audit.lhs]] + [[k, v] for k, v in audit.terms.items()] + \
           [["rhs_total", audit.rhs_total], ["ratio", audit.ratio]]
    result.table("stability.csv", ["term", "value"], rows)
    result.summary = {"field1": field1.name, "field2": field2.name, "delta": spec.delta,
                      "lhs": audit.lhs, "terms": audit.terms, "ratio": audit.ratio}
    result.summary["phi_delta_violations"] = _phi_delta_check(field1.dim, spec.phi_checks, config.seed)


RUNNERS: Dict[str, Callable[[ExperimentConfig, ChunkRunner, RunResult], None]] = {
    "defect": run_defect,
    "residual_ladder": run_residual_ladder,
    "compressibility": run_compressibility,
    "maximal_decay": run_maximal_decay,
    "sobolev_audit": run_sobolev_audit,
    "concentration": run_concentration,
    "stability": run_stability,
}


def run(config: ExperimentConfig) -> RunResult:
    """Run one experiment; writes the tables, summary.json and manifest.json"""
    out_dir = _out_dir(config)
    result = RunResult(config.experiment, out_dir, config.digest)
    logger.info(f"{config.experiment}: seed {config.seed}, config hash {result.digest[:12]}, "
                f"{config.workers} worker(s)")
    with ChunkRunner(config.workers) as runner:
        RUNNERS[config.experiment](config, runner, result)
    write_summary(out_dir / "summary.json", {"experiment": config.experiment, "seed": config.seed,
                                             "lost_fraction": result.lost_fraction,
                                             **result.summary}, result.digest)
    result.artifacts.append("summary.json")
    write_manifest(out_dir, result.digest, config.seed, config.experiment, result.artifacts)
    if result.lost_fraction > config.max_lost_fraction:
        raise TooManyLost(f"{config.experiment}: {result.lost} of {result.total} samples lost",
                          lost_fraction=result.lost_fraction, allowed=config.max_lost_fraction)
    return result


# Which operations each CLI subcommand reaches
OPERATIONS_BY_SUBCOMMAND: Dict[str, Tuple[str, ...]] = {
    "defect": ("sample_reference_measure", "commutator_defects", "commutator_defect",
               "defect_statistics", "flow_points", "analytic_flow_helix",
               "analytic_flow_graph_foliation", "analytic_flow_linear", "integrate_batch", "write_ensemble_csv"),
    "ladder": ("residual_A", "residual_B", "residual_R", "residual_R_integral",
               "scaling_exponent", "gronwall_audit"),
    "compress": ("pushforward_density", "compressibility_estimate", "escape_time_for_field",
                 "escape_time_bound"),
    "maximal": ("maximal_function", "sharp_maximal_function", "sharp_maximal_decay",
                "write_grid_csv"),
    "sobolev": ("sobolev_pointwise_audit",),
    "concentrate": ("trajectory_ensemble", "integrate_trajectory", "chain_rule_residual",
                    "concentration_residual", "partition_variation", "ensemble_density_bound",
                    "write_trajectory_csv"),
    "stability": ("phi_delta", "phi_delta_violations", "stability_bound_audit"),
    "catalog": ("builtin_catalog", "builtin_fields", "eval_field", "jacobian", "lie_bracket",
                "divergence", "jacobian_agreement", "load_field_expression"),
}

SUBCOMMAND_EXPERIMENTS = {
    "defect": "defect",
    "ladder": "residual_ladder",
    "compress": "compressibility",
    "maximal": "maximal_decay",
    "sobolev": "sobolev_audit",
    "concentrate": "concentration",
    "stability": "stability",
}
