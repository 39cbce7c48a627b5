"""Scenario configuration, ensemble orchestration, and output emission.

A scenario is a JSON file (or dict) naming a kernel, an initial condition,
an N ladder, a horizon, gelation rules, a replica count, and a master
seed.  ``run_scenario`` executes every (N, replica) cell on an injectively
derived random stream, so identical (config, master seed) reruns produce
byte-identical numeric outputs at any worker count.

CSV schema, one row per replica:
    scenario_id, N, replica, seed, tau_alpha, tau_psi_delta,
    final_largest_mass, events, wall_ms
Spectra are long form: replica, t_checkpoint, band_j, band_mass, with
zero-mass bands omitted.  Unreached stopping times are empty CSV cells and
JSON nulls, never sentinel numbers.  Wall times are recorded only when the
scenario opts in (``record_timings``), because measured times would break
the byte-identity guarantee.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import gelation, kernels
from .core import ClusterType, Configuration, mono_dispersed_clusters
from .gelation import DyadicSpectrum, GelationRule
from .kernels import KernelSpec
from .simulator import HorizonStop, Trajectory, derive_stream_key, run, stream

THREADS_ENV_VAR = "COAGULAB_THREADS"

RESULT_COLUMNS = ["scenario_id", "N", "replica", "seed", "tau_alpha",
                  "tau_psi_delta", "final_largest_mass", "events", "wall_ms"]
SPECTRUM_COLUMNS = ["replica", "t_checkpoint", "band_j", "band_mass"]


class ConfigError(ValueError):
    """Invalid scenario config; the message carries the offending field path."""


# -- scenario ------------------------------------------------------------------

@dataclass
class Scenario:
    scenario_id: str
    kernel: dict
    initial: dict
    n_ladder: list[int]
    horizon: float
    replicas: int
    master_seed: int
    gelation: Optional[dict] = None
    early_stop: Optional[str] = None  # None | "alpha" | "psi_delta"
    spectrum_checkpoints: list[float] = field(default_factory=list)
    record_timings: bool = False

    def to_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "kernel": self.kernel,
            "initial": self.initial,
            "n_ladder": self.n_ladder,
            "horizon": self.horizon,
            "replicas": self.replicas,
            "master_seed": self.master_seed,
            "gelation": self.gelation,
            "early_stop": self.early_stop,
            "spectrum_checkpoints": self.spectrum_checkpoints,
            "record_timings": self.record_timings,
        }


def _need(cfg: dict, key: str, types, path: str):
    if key not in cfg:
        raise ConfigError(f"{path}.{key}: required field is missing")
    value = cfg[key]
    if not isinstance(value, types):
        raise ConfigError(f"{path}.{key}: expected {types}, got {type(value).__name__}")
    return value


def load_scenario(source: str | Path | dict) -> Scenario:
    """Parse and validate a scenario config (path, JSON string, or dict)."""
    if isinstance(source, dict):
        cfg = source
    else:
        try:
            is_file = Path(str(source)).exists()
        except OSError:
            is_file = False
        text = Path(source).read_text() if is_file else str(source)
        try:
            cfg = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"$: not valid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("$: config must be a JSON object")

    scenario_id = _need(cfg, "scenario_id", str, "$")
    kernel_cfg = _need(cfg, "kernel", dict, "$")
    _need(kernel_cfg, "name", str, "$.kernel")
    initial_cfg = _need(cfg, "initial", dict, "$")
    _need(initial_cfg, "kind", str, "$.initial")

    n_ladder = _need(cfg, "n_ladder", list, "$")
    if not n_ladder or not all(isinstance(n, int) and n > 0 for n in n_ladder):
        raise ConfigError("$.n_ladder: must be a non-empty list of positive integers")
    horizon = _need(cfg, "horizon", (int, float), "$")
    if horizon < 0:
        raise ConfigError("$.horizon: must be non-negative")
    replicas = _need(cfg, "replicas", int, "$")
    if replicas < 0:
        raise ConfigError("$.replicas: must be >= 0")
    master_seed = _need(cfg, "master_seed", int, "$")
    if not (0 <= master_seed < 2 ** 64):
        raise ConfigError("$.master_seed: must fit in 64 bits")

    gel_cfg = cfg.get("gelation")
    if gel_cfg is not None:
        if not isinstance(gel_cfg, dict):
            raise ConfigError("$.gelation: must be an object")
        if "delta" in gel_cfg and not (0 < gel_cfg["delta"] < 1):
            raise ConfigError("$.gelation.delta: must be in (0, 1)")
        if "alpha" in gel_cfg and not (0 < gel_cfg["alpha"] < 1):
            raise ConfigError("$.gelation.alpha: must be in (0, 1)")
        psi = gel_cfg.get("psi")
        if psi is not None:
            if isinstance(psi, dict):
                if not isinstance(psi.get("table"), dict):
                    raise ConfigError("$.gelation.psi.table: required for table cutoffs")
            elif psi not in ("sqrt", "cbrt", "log", "alphaN"):
                raise ConfigError(f"$.gelation.psi: unknown tag {psi!r}")
            if psi == "alphaN" and "alpha" not in gel_cfg:
                raise ConfigError("$.gelation.psi: 'alphaN' needs $.gelation.alpha")

    early_stop = cfg.get("early_stop")
    if early_stop not in (None, "alpha", "psi_delta"):
        raise ConfigError("$.early_stop: must be null, 'alpha', or 'psi_delta'")
    if early_stop == "alpha" and not (gel_cfg and "alpha" in gel_cfg):
        raise ConfigError("$.early_stop: 'alpha' needs $.gelation.alpha")
    if early_stop == "psi_delta" and not (gel_cfg and "psi" in gel_cfg and "delta" in gel_cfg):
        raise ConfigError("$.early_stop: 'psi_delta' needs $.gelation.psi and .delta")

    checkpoints = cfg.get("spectrum_checkpoints", [])
    if not isinstance(checkpoints, list) or not all(
            isinstance(t, (int, float)) and t >= 0 for t in checkpoints):
        raise ConfigError("$.spectrum_checkpoints: must be a list of non-negative times")

    scenario = Scenario(
        scenario_id=scenario_id,
        kernel=kernel_cfg,
        initial=initial_cfg,
        n_ladder=list(n_ladder),
        horizon=float(horizon),
        replicas=replicas,
        master_seed=master_seed,
        gelation=gel_cfg,
        early_stop=early_stop,
        spectrum_checkpoints=[float(t) for t in checkpoints],
        record_timings=bool(cfg.get("record_timings", False)),
    )
    build_kernel(scenario.kernel)           # fail fast on kernel parameters
    _validate_initial(scenario.initial, scenario.kernel)
    return scenario


# -- kernel and initial-condition factories -----------------------------------------

def build_kernel(cfg: dict) -> KernelSpec:
    name = cfg.get("name")
    path = "$.kernel"
    try:
        if name == "multiplicative":
            return kernels.multiplicative()
        if name == "additive":
            return kernels.additive()
        if name == "constant":
            return kernels.constant(float(cfg.get("value", 1.0)))
        if name == "homogeneous_power":
            return kernels.homogeneous_power(float(_need(cfg, "gamma", (int, float), path)))
        if name == "mass_log":
            return kernels.mass_log(float(_need(cfg, "epsilon", (int, float), path)),
                                    float(cfg.get("floor", kernels.MASS_LOG_FLOOR)))
        if name == "spatial_distance_power":
            return kernels.spatial_distance_power(
                float(_need(cfg, "kappa0", (int, float), path)),
                float(_need(cfg, "alpha", (int, float), path)),
                cfg.get("placement", "center_of_mass"))
        if name == "bilinear":
            return kernels.bilinear(np.asarray(_need(cfg, "A", list, path), dtype=float))
        if name == "concave_rho":
            return kernels.concave_rho(
                _build_rho(cfg.get("rho", {"kind": "affine", "intercept": 2.0})),
                dim=int(cfg.get("dim", 1)),
                convex=bool(cfg.get("convex", False)))
        if name == "product":
            return kernels.product_kernel(
                _build_h(_need(cfg, "h", dict, path)),
                _build_w(_need(cfg, "w", dict, path)),
                placement=cfg.get("placement", "center_of_mass"))
    except kernels.KernelConstructionError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    raise ConfigError(f"{path}.name: unknown kernel {name!r}")


def _build_rho(cfg: dict):
    kind = cfg.get("kind")
    if kind == "affine":
        intercept = float(cfg.get("intercept", 2.0))
        return lambda u: intercept - np.linalg.norm(np.atleast_1d(u), axis=-1)
    if kind == "max_norm_complement":
        return kernels.max_norm_complement_rho(float(cfg.get("radius", 1.0)))
    if kind == "quadratic":
        offset = float(cfg.get("offset", 0.0))
        return lambda u: offset + np.square(np.linalg.norm(np.atleast_1d(u), axis=-1))
    raise ConfigError(f"$.kernel.rho.kind: unknown form {kind!r}")


def _build_h(cfg: dict):
    kind = cfg.get("kind")
    if kind == "constant":
        value = float(cfg.get("value", 1.0))
        return lambda d: np.full_like(np.asarray(d, dtype=float), value)
    if kind == "exp":
        scale = float(cfg.get("scale", 1.0))
        return lambda d: np.exp(-np.asarray(d, dtype=float) / scale)
    raise ConfigError(f"$.kernel.h.kind: unknown form {kind!r}")


def _build_w(cfg: dict):
    kind = cfg.get("kind")
    if kind == "multiplicative":
        return lambda m, n: m * n
    if kind == "additive":
        return lambda m, n: m + n
    if kind == "constant":
        value = float(cfg.get("value", 1.0))
        return lambda m, n: np.full_like(np.asarray(m, dtype=float), value)
    raise ConfigError(f"$.kernel.w.kind: unknown form {kind!r}")


def _validate_initial(cfg: dict, kernel_cfg: dict) -> None:
    kind = cfg.get("kind")
    if kind == "mono_dispersed":
        return
    if kind == "uniform_positions":
        dim = cfg.get("dimension", 1)
        if not isinstance(dim, int) or dim < 1:
            raise ConfigError("$.initial.dimension: must be a positive integer")
        return
    if kind == "two_type":
        vectors = cfg.get("vectors")
        if (not isinstance(vectors, list) or len(vectors) != 2
                or any(not isinstance(v, list) for v in vectors)):
            raise ConfigError("$.initial.vectors: need exactly two feature vectors")
        return
    raise ConfigError(f"$.initial.kind: unknown kind {kind!r}")


def build_initial(cfg: dict, n: int, rng: np.random.Generator) -> list[ClusterType]:
    kind = cfg["kind"]
    if kind == "mono_dispersed":
        return mono_dispersed_clusters(n)
    if kind == "uniform_positions":
        dim = int(cfg.get("dimension", 1))
        return mono_dispersed_clusters(n, rng.random((n, dim)))
    if kind == "two_type":
        vectors = np.asarray(cfg["vectors"], dtype=float)
        split = int(round(float(cfg.get("fraction_first", 0.5)) * n))
        positions = np.vstack([np.tile(vectors[0], (split, 1)),
                               np.tile(vectors[1], (n - split, 1))])
        return mono_dispersed_clusters(n, positions)
    raise ConfigError(f"$.initial.kind: unknown kind {kind!r}")


# -- gelation rule helpers ------------------------------------------------------------

def _resolve_cutoff(gel_cfg: dict, n: int) -> int:
    psi = gel_cfg.get("psi")
    if isinstance(psi, dict):
        table = psi.get("table")
        if not isinstance(table, dict):
            raise ConfigError("$.gelation.psi.table: required for table cutoffs")
        key = str(n)
        if key not in table:
            raise ConfigError(f"$.gelation.psi.table: no entry for N={n}")
        return int(table[key])
    if psi == "sqrt":
        return math.ceil(math.sqrt(n))
    if psi == "cbrt":
        return math.ceil(n ** (1.0 / 3.0))
    if psi == "log":
        return max(math.ceil(math.log(n)), 1)
    if psi == "alphaN":
        alpha = gel_cfg.get("alpha")
        if alpha is None:
            raise ConfigError("$.gelation.psi: 'alphaN' needs $.gelation.alpha")
        return max(math.ceil(alpha * n), 1)
    raise ConfigError(f"$.gelation.psi: unknown tag {psi!r}")


def _gelation_rule(gel_cfg: dict) -> Optional[GelationRule]:
    if not gel_cfg or "psi" not in gel_cfg or "delta" not in gel_cfg:
        return None
    return GelationRule(
        psi=lambda n, cfg=gel_cfg: _resolve_cutoff(cfg, n),
        delta=float(gel_cfg["delta"]),
        alpha=gel_cfg.get("alpha"),
    )


# -- ensemble execution ------------------------------------------------------------------

@dataclass
class EnsembleResult:
    scenario: Scenario
    rows: list[dict]
    spectra: list[dict]
    aggregates: dict

    @property
    def replica_count(self) -> int:
        return len(self.rows)


def _replica_task(args: tuple) -> tuple[list[dict], list[dict]]:
    scenario_dict, n, replica = args
    scenario = Scenario(**scenario_dict)
    seed_key = derive_stream_key(scenario.master_seed, replica, n)
    try:
        return _replica_task_inner(scenario, n, replica, seed_key)
    except Exception as exc:
        raise RuntimeError(
            f"replica failed: N={n} replica={replica} seed={seed_key}: {exc}") from exc


def _replica_task_inner(scenario: Scenario, n: int, replica: int,
                        seed_key: int) -> tuple[list[dict], list[dict]]:
    kernel = build_kernel(scenario.kernel)
    rng = stream(scenario.master_seed, replica, n)
    clusters = build_initial(scenario.initial, n, rng)
    config = Configuration(clusters, kernel, n)

    gel_cfg = scenario.gelation or {}
    rule = _gelation_rule(gel_cfg)
    alpha = gel_cfg.get("alpha")

    if scenario.early_stop == "alpha":
        stop = gelation.stop_on_giant_cluster(alpha, n, horizon=scenario.horizon)
    elif scenario.early_stop == "psi_delta":
        stop = gelation.stop_on_gel_fraction(rule, n, horizon=scenario.horizon)
    else:
        stop = HorizonStop(horizon=scenario.horizon)

    t0 = time.perf_counter()
    traj = run(config, stop=stop, rng=rng, copy=False)
    wall_ms = int(round(1000.0 * (time.perf_counter() - t0)))

    tau_alpha = gelation.giant_cluster_time(traj, float(alpha)) if alpha is not None else None
    tau_psi_delta = gelation.gel_fraction_time(traj, rule) if rule is not None else None

    row = {
        "scenario_id": scenario.scenario_id,
        "N": n,
        "replica": replica,
        "seed": seed_key,
        "tau_alpha": tau_alpha,
        "tau_psi_delta": tau_psi_delta,
        "final_largest_mass": gelation.largest_mass_at(traj, traj.normalized_final_time()),
        "events": len(traj.events),
        "wall_ms": wall_ms if scenario.record_timings else None,
        "absorbed": traj.absorbed,
    }

    spectra = []
    for t in scenario.spectrum_checkpoints:
        spectrum = _spectrum_at(traj, t)
        for band, mass in sorted(spectrum.bands.items()):
            if mass > 0.0:
                spectra.append({"replica": replica, "N": n, "t_checkpoint": t,
                                "band_j": band, "band_mass": mass})
    return [row], spectra


def _spectrum_at(traj: Trajectory, t: float) -> DyadicSpectrum:
    masses = np.zeros(traj.n_initial + len(traj.events))
    for k, c in enumerate(traj.initial):
        masses[k] = c.mass
    n0 = traj.n_initial
    for k, tk in enumerate(traj.normalized_times()):
        if tk > t:
            break
        e = traj.events[k]
        masses[e.left] = masses[e.right] = 0.0
        masses[n0 + k] = e.offspring.mass
    return DyadicSpectrum.from_masses(masses[masses > 0.0])


def _aggregate(rows: list[dict], n_ladder: Sequence[int]) -> dict:
    out: dict[str, Any] = {}
    for n in n_ladder:
        sub = [r for r in rows if r["N"] == n]
        entry: dict[str, Any] = {
            "replicas": len(sub),
            "absorbed_count": sum(1 for r in sub if r.get("absorbed")),
        }
        for key in ("tau_alpha", "tau_psi_delta"):
            vals = np.asarray([r[key] for r in sub if r[key] is not None], dtype=float)
            stats: dict[str, Any] = {"count": int(len(vals)),
                                     "none_count": int(len(sub) - len(vals))}
            if len(vals):
                mean = float(vals.mean())
                sd = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
                half = 1.96 * sd / math.sqrt(len(vals)) if len(vals) > 1 else 0.0
                stats.update(mean=mean, median=float(np.median(vals)),
                             ci95=[mean - half, mean + half])
            entry[key] = stats
        out[str(n)] = entry
    return out


def run_scenario(source: str | Path | dict, threads: Optional[int] = None,
                 seed_override: Optional[int] = None,
                 replicas_override: Optional[int] = None) -> EnsembleResult:
    """Run every (N, replica) cell of a scenario; deterministic in
    (config, master seed) regardless of the worker count."""
    scenario = load_scenario(source)
    if seed_override is not None:
        scenario.master_seed = seed_override
    if replicas_override is not None:
        if replicas_override < 0:
            raise ConfigError("$.replicas: must be >= 0")
        scenario.replicas = replicas_override

    if threads is None:
        threads = int(os.environ.get(THREADS_ENV_VAR, "1"))
    threads = max(1, threads)

    tasks = [(scenario.to_dict(), n, r)
             for n in scenario.n_ladder for r in range(scenario.replicas)]

    rows: list[dict] = []
    spectra: list[dict] = []
    if threads == 1 or len(tasks) <= 1:
        results = map(_replica_task, tasks)
    else:
        pool = ProcessPoolExecutor(max_workers=threads)
        try:
            results = list(pool.map(_replica_task, tasks, chunksize=1))
        finally:
            pool.shutdown()
    for row_chunk, spec_chunk in results:
        rows.extend(row_chunk)
        spectra.extend(spec_chunk)

    rows.sort(key=lambda r: (r["N"], r["replica"]))
    spectra.sort(key=lambda r: (r["N"], r["replica"], r["t_checkpoint"], r["band_j"]))
    aggregates = _aggregate(rows, scenario.n_ladder)
    return EnsembleResult(scenario=scenario, rows=rows, spectra=spectra,
                          aggregates=aggregates)


# -- emission -----------------------------------------------------------------------------

def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def results_csv_text(result: EnsembleResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)
    for row in result.rows:
        writer.writerow([_cell(row[c]) for c in RESULT_COLUMNS])
    return buf.getvalue()


def spectra_csv_text(result: EnsembleResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["N"] + SPECTRUM_COLUMNS)
    for row in result.spectra:
        writer.writerow([_cell(row["N"])] + [_cell(row[c]) for c in SPECTRUM_COLUMNS])
    return buf.getvalue()


def result_json_text(result: EnsembleResult) -> str:
    envelope = {
        "config": result.scenario.to_dict(),
        "rows": [{c: row[c] for c in RESULT_COLUMNS} for row in result.rows],
        "spectra": result.spectra,
        "aggregates": result.aggregates,
    }
    return json.dumps(envelope, sort_keys=True, indent=2, allow_nan=False) + "\n"


def emit(result: EnsembleResult, fmt: str, out_dir: str | Path) -> list[Path]:
    """Write the ensemble outputs; returns the created paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    stem = result.scenario.scenario_id
    if fmt == "csv":
        path = out_dir / f"{stem}_results.csv"
        path.write_text(results_csv_text(result))
        written.append(path)
        if result.scenario.spectrum_checkpoints:
            spath = out_dir / f"{stem}_spectra.csv"
            spath.write_text(spectra_csv_text(result))
            written.append(spath)
    elif fmt == "json":
        path = out_dir / f"{stem}_results.json"
        path.write_text(result_json_text(result))
        written.append(path)
    else:
        raise ConfigError(f"$.format: unknown format {fmt!r}")
    return written


def write_event_log(traj: Trajectory, path: str | Path) -> Path:
    """CSV event log: ordinal, normalized time, parent slots, offspring slot, mass."""
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["ordinal", "time", "left", "right", "offspring_index", "offspring_mass"])
    times = traj.normalized_times()
    for k, e in enumerate(traj.events):
        writer.writerow([k, repr(float(times[k])), e.left, e.right,
                         traj.offspring_index(k), repr(float(e.offspring.mass))])
    path.write_text(buf.getvalue())
    return path


def write_criterion_report(report: gelation.CriterionReport, path: str | Path) -> Path:
    path = Path(path)
    payload = {
        "partial_sums": [s if math.isfinite(s) else None for s in report.partial_sums],
        "verdict": report.verdict,
        "parameters": report.parameters,
    }
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return path


# -- command line -----------------------------------------------------------------------

def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="coagulab",
        description="Run a cluster-coagulation scenario and emit replica tables.")
    parser.add_argument("--config", required=True, help="scenario JSON path")
    parser.add_argument("--seed-override", type=int, default=None,
                        help="replace the scenario master seed")
    parser.add_argument("--replicas", type=int, default=None,
                        help="replace the scenario replica count")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--format", choices=["csv", "json"], default="csv")
    parser.add_argument("--threads", type=int, default=None,
                        help=f"worker processes (default ${THREADS_ENV_VAR} or 1)")
    args = parser.parse_args(argv)

    try:
        result = run_scenario(args.config, threads=args.threads,
                              seed_override=args.seed_override,
                              replicas_override=args.replicas)
        paths = emit(result, args.format, args.out)
    except ConfigError as exc:
        parser.exit(2, f"config error: {exc}\n")
    for n, entry in result.aggregates.items():
        taus = entry.get("tau_psi_delta", {})
        print(f"N={n}: replicas={entry['replicas']} "
              f"tau_psi_delta mean={taus.get('mean', 'n/a')} none={taus.get('none_count')}")
    for path in paths:
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
