"""Scenario configuration, Monte-Carlo sweeps, baselines, and table emission.

A Scenario bundles everything one optimization run needs; a SweepSpec
varies one parameter over a grid and runs a set of baselines on paired
channel draws (all baselines see the same fading for each draw). Results
aggregate to one row per (grid value, baseline).
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .beam_opt import UtilitySpec
from .channels import RisState, generate_channels
from .framework import AoOptions, optimize
from .metrics import EnergyParams, FblParams
from .topology import (
    PropagationParams,
    default_topology,
    geometric_user_sides,
    load_scenario_dict,
    single_cell_edge_topology,
)

__all__ = [
    "Scenario",
    "SweepSpec",
    "ResultTable",
    "BASELINES",
    "SWEEP_PARAMS",
    "run_single",
    "run_sweep",
    "emit",
]

BASELINES = (
    "NoRIS",
    "RandomRIS",
    "TI",
    "TU",
    "TC",
    "Shannon-TI",
    "StarES-TSU",
    "StarES-TSI",
    "StarES-TSN",
    "StarMS",
    "StarTS",
)

SWEEP_PARAMS = ("P_dB", "N_BS", "K", "n_t", "eps_c", "p_c", "iterations")

COLUMNS = ("sweep_param", "value", "baseline", "utility_mean", "utility_stderr", "draws", "seconds")


@dataclass
class Scenario:
    """One reproducible experiment configuration."""

    topology_kind: str = "two_cell"
    K: int = 2
    n_bs: int = 4
    n_ris: int = 8
    p_db: float = 10.0
    topology_seed: int = 0
    noise_power: float = 1.0
    propagation: PropagationParams = field(default_factory=PropagationParams)
    n_t: float = 256.0
    eps_c: float = 1e-5
    p_c: float = 1.0
    eta: float = 1.0 / 0.35
    utility_kind: str = "min_rate"
    weights: list | None = None
    rate_thresholds: float | None = None
    ts_fraction: float = 0.5
    ao: dict = field(default_factory=dict)

    def topology(self):
        power = 10.0 ** (self.p_db / 10.0) * self.noise_power
        if self.topology_kind == "two_cell":
            return default_topology(
                K=self.K, n_bs=self.n_bs, n_ris=self.n_ris, power=power,
                seed=self.topology_seed, noise_power=self.noise_power,
            )
        if self.topology_kind == "single_cell_edge":
            return single_cell_edge_topology(
                K=self.K, n_bs=self.n_bs, n_ris=self.n_ris, power=power,
                seed=self.topology_seed, noise_power=self.noise_power,
            )
        raise ValueError(f"unknown topology_kind {self.topology_kind!r}")

    def fbl(self):
        return FblParams(n_t=self.n_t, eps_c=self.eps_c)

    def energy(self):
        return EnergyParams(p_c=self.p_c, eta=self.eta)

    def utility(self):
        w = None if self.weights is None else np.asarray(self.weights, dtype=float)
        return UtilitySpec(self.utility_kind, weights=w, rate_thresholds=self.rate_thresholds)

    def ao_options(self):
        return AoOptions(**self.ao)

    def with_param(self, name, value):
        if name == "P_dB":
            return replace(self, p_db=float(value))
        if name == "N_BS":
            return replace(self, n_bs=int(value))
        if name == "K":
            return replace(self, K=int(value))
        if name == "n_t":
            return replace(self, n_t=float(value))
        if name == "eps_c":
            return replace(self, eps_c=float(value))
        if name == "p_c":
            return replace(self, p_c=float(value))
        if name == "iterations":
            return self
        raise ValueError(f"unknown sweep parameter {name!r}")

    def to_dict(self):
        d = {
            "topology_kind": self.topology_kind,
            "K": self.K,
            "n_bs": self.n_bs,
            "n_ris": self.n_ris,
            "p_db": self.p_db,
            "topology_seed": self.topology_seed,
            "noise_power": self.noise_power,
            "propagation": {
                "direct_exponent": self.propagation.direct_exponent,
                "ris_exponent": self.propagation.ris_exponent,
                "direct_ref_gain_db": self.propagation.direct_ref_gain_db,
                "ris_ref_gain_db": self.propagation.ris_ref_gain_db,
                "ref_distance": self.propagation.ref_distance,
                "rician_k": self.propagation.rician_k,
            },
            "n_t": self.n_t,
            "eps_c": self.eps_c,
            "p_c": self.p_c,
            "eta": self.eta,
            "utility_kind": self.utility_kind,
            "weights": self.weights,
            "rate_thresholds": self.rate_thresholds,
            "ts_fraction": self.ts_fraction,
            "ao": dict(self.ao),
        }
        return d

    @staticmethod
    def from_dict(d):
        d = dict(d)
        prop = d.pop("propagation", None)
        if isinstance(prop, dict):
            rk = prop.get("rician_k", 10**0.3)
            prop = PropagationParams(**{**prop, "rician_k": math.inf if rk == "inf" else rk})
        scen = Scenario(**{**d, "propagation": prop or PropagationParams()})
        return scen

    @staticmethod
    def from_file(path):
        d = load_scenario_dict(path)
        return Scenario.from_dict(d.get("scenario", d))


def _baseline_state(scenario, topology, baseline, draw_seed):
    """Initial surface state and packet parameters for one baseline run."""
    geo = geometric_user_sides(topology)
    regular_sides = geo.copy()
    regular_sides[geo == "t"] = "u"  # a reflecting-only surface cannot reach them
    M, n = topology.M, topology.n_ris
    fbl = scenario.fbl()

    if baseline == "NoRIS":
        sides = np.full_like(geo, "u")
        ris = RisState.regular_init(M, n, "TI", sides, frozen=True)
    elif baseline == "RandomRIS":
        rng = np.random.default_rng(draw_seed + 0x5EED)
        ris = RisState.random_unit_modulus(M, n, regular_sides, rng, frozen=True)
    elif baseline in ("TI", "TU", "TC"):
        ris = RisState.regular_init(M, n, baseline, regular_sides)
    elif baseline == "Shannon-TI":
        ris = RisState.regular_init(M, n, "TI", regular_sides)
        fbl = FblParams.shannon()
    elif baseline.startswith("StarES-"):
        ris = RisState.star_init(M, n, baseline.split("-")[1], "es", geo)
    elif baseline == "StarMS":
        rng = np.random.default_rng(scenario.topology_seed + 0xA17)
        part = RisState.random_partition(M, n, rng)
        ris = RisState.star_init(M, n, "TSI", "ms", geo, ms_partition=part)
    elif baseline == "StarTS":
        ris = RisState.star_init(M, n, "TSI", "ts", geo, ts_fraction=scenario.ts_fraction)
    else:
        raise ValueError(f"unknown baseline {baseline!r}")
    return ris, fbl


def run_single(scenario: Scenario, baseline: str, seed: int, ao_overrides=None):
    """One optimization run; returns the AoState."""
    topology = scenario.topology()
    channels = generate_channels(topology, scenario.propagation, seed)
    ris0, fbl = _baseline_state(scenario, topology, baseline, seed)
    opts = scenario.ao_options()
    if ao_overrides:
        for key, val in ao_overrides.items():
            setattr(opts, key, val)
    return optimize(
        channels, topology, ris0, scenario.utility(), fbl, scenario.energy(), opts
    )


@dataclass
class SweepSpec:
    param: str
    grid: list
    scenario: Scenario = field(default_factory=Scenario)
    baselines: tuple = ("TI", "NoRIS")
    num_draws: int = 1
    base_seed: int = 0

    def __post_init__(self):
        if self.param not in SWEEP_PARAMS:
            raise ValueError(f"unknown sweep parameter {self.param!r}")
        if not self.grid:
            raise ValueError("sweep grid must be non-empty")
        if self.num_draws < 1:
            raise ValueError("num_draws must be >= 1")
        for b in self.baselines:
            if b not in BASELINES:
                raise ValueError(f"unknown baseline {b!r}")

    @staticmethod
    def from_file(path):
        d = load_scenario_dict(path)
        sweep = dict(d["sweep"])
        scen = Scenario.from_dict(d.get("scenario", {}))
        return SweepSpec(
            param=sweep["param"],
            grid=list(sweep["grid"]),
            scenario=scen,
            baselines=tuple(sweep.get("baselines", ("TI", "NoRIS"))),
            num_draws=int(sweep.get("num_draws", 1)),
            base_seed=int(sweep.get("base_seed", 0)),
        )


@dataclass
class ResultTable:
    rows: list
    failures: int = 0

    def to_csv_lines(self):
        lines = [",".join(COLUMNS)]
        for row in self.rows:
            lines.append(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in COLUMNS))
        return lines

    def to_json_obj(self):
        return {"failures": self.failures, "rows": [dict(r) for r in self.rows]}

    @staticmethod
    def from_json_obj(obj):
        return ResultTable(rows=[dict(r) for r in obj["rows"]], failures=int(obj.get("failures", 0)))

    def cell(self, value, baseline, column="utility_mean"):
        for row in self.rows:
            if row["value"] == value and row["baseline"] == baseline:
                return row[column]
        raise KeyError((value, baseline))


def _aggregate(spec, value, baseline, utilities, seconds):
    ok = [u for u in utilities if u is not None and math.isfinite(u)]
    n = len(ok)
    mean = float(np.mean(ok)) if n else float("nan")
    stderr = float(np.std(ok, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return {
        "sweep_param": spec.param,
        "value": value,
        "baseline": baseline,
        "utility_mean": mean,
        "utility_stderr": stderr,
        "draws": n,
        "seconds": float(seconds),
    }


def _run_batch(spec, scen, ao_overrides, collect):
    """Run every (draw, baseline) pair once; returns results, seconds, failures."""
    per_baseline = {b: [] for b in spec.baselines}
    per_seconds = {b: 0.0 for b in spec.baselines}
    failures = 0
    for draw in range(spec.num_draws):
        seed = spec.base_seed + draw
        for baseline in spec.baselines:
            t0 = time.perf_counter()
            try:
                state = run_single(scen, baseline, seed, ao_overrides)
                per_baseline[baseline].append(collect(state))
            except Exception:
                failures += 1
                per_baseline[baseline].append(None)
            per_seconds[baseline] += time.perf_counter() - t0
    return per_baseline, per_seconds, failures


def run_sweep(spec: SweepSpec):
    """Paired-draw sweep; per-run failures become missing cells, not aborts."""
    rows = []
    failures = 0

    if spec.param == "iterations":
        # one batch with the largest iteration budget feeds every row
        ao_overrides = {"max_iter": int(max(spec.grid)), "stop_rel": 0.0}
        traces, seconds, failures = _run_batch(
            spec, spec.scenario, ao_overrides, lambda s: s.utility_trace
        )
        for value in spec.grid:
            for baseline in spec.baselines:
                utilities = [
                    None if tr is None else tr[min(int(value), len(tr) - 1)]
                    for tr in traces[baseline]
                ]
                rows.append(_aggregate(spec, value, baseline, utilities, seconds[baseline]))
        return ResultTable(rows=rows, failures=failures)

    for value in spec.grid:
        scen = spec.scenario.with_param(spec.param, value)
        utilities, seconds, fails = _run_batch(spec, scen, None, lambda s: s.utility)
        failures += fails
        for baseline in spec.baselines:
            rows.append(_aggregate(spec, value, baseline, utilities[baseline], seconds[baseline]))
    return ResultTable(rows=rows, failures=failures)


def emit(table: ResultTable, path, format="csv"):
    """Write the table; CSV column order is fixed as in COLUMNS."""
    if format == "csv":
        text = "\n".join(table.to_csv_lines()) + "\n"
    elif format == "json":
        text = json.dumps(table.to_json_obj(), indent=1) + "\n"
    else:
        raise ValueError(f"unknown format {format!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
