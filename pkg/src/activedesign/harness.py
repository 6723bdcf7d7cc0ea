"""Experiment harness: instance files, sweep configs, outputs, reports.

The file formats are deliberately plain.  An instance file is whitespace
separated numbers with ``#`` comments:

    d K
    <K rows of d covariate components>
    <K variances sigma_k^2>
    [<K proxies kappa_k^2>]        optional
    [<d components of beta>]       optional

When only one optional row is present it is told apart by length; for
square instances (K = d) that is ambiguous and the row is read as the
proxies, so write both rows to pin beta.

A sweep config is a JSON object with keys ``instance``, ``policies``,
``budgets`` and optionally ``seeds`` (count or explicit list, default
25), ``checkpoints`` ({"ratio": r}, default 1.2), ``estimation_count``,
and ``output`` (directory, default "results").  Outputs are one trace
file per episode (columns t, regret, loss_gap, p_min), one summary per
policy (T, mean_regret, stderr, n_seeds), and a slope table; identical
configs produce byte-identical files.  ``ACTIVE_DESIGN_THREADS`` caps
how many episodes run concurrently.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import CovariateSet, DesignProblem, NoiseSpec, SimplexWeights
from .environment import (
    NOISE_MODELS,
    make_env,
    make_hard_instance,
    make_random_instance,
    noise_proxy,
)
from .estimation import halving_sample_count, variance_radius
from .policies import POLICY_NAMES, RegretTrace, make_policy, run_episode
from .solver import reference_optimum

logger = logging.getLogger(__name__)


class InstanceFormatError(ValueError):
    """Malformed instance file; message carries the offending line number."""


class ConfigError(ValueError):
    """Malformed sweep configuration; message names the offending key."""


# --------------------------------------------------------------------
# instance files


def _parse_floats(tokens: list[str], lineno: int) -> list[float]:
    out = []
    for tok in tokens:
        try:
            out.append(float(tok))
        except ValueError:
            raise InstanceFormatError(f"line {lineno}: {tok!r} is not a number") from None
    return out


def load_instance(path) -> DesignProblem:
    """Read a design problem from a text instance file."""
    path = Path(path)
    rows: list[tuple[int, list[str]]] = []
    try:
        text = path.read_text()
    except OSError as exc:
        raise InstanceFormatError(f"cannot read {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        body = raw.split("#", 1)[0].strip()
        if body:
            rows.append((lineno, body.split()))

    if not rows:
        raise InstanceFormatError(f"{path}: empty instance file")
    lineno, header = rows[0]
    if len(header) != 2:
        raise InstanceFormatError(f"line {lineno}: header must be 'd K'")
    try:
        d, k = int(header[0]), int(header[1])
    except ValueError:
        raise InstanceFormatError(f"line {lineno}: header must be two integers") from None
    if d < 1 or k < 1:
        raise InstanceFormatError(f"line {lineno}: dimensions must be positive")

    body_rows = rows[1:]
    if len(body_rows) < k + 1:
        raise InstanceFormatError(
            f"{path}: expected {k} covariate rows plus a variance row, found {len(body_rows)}"
        )
    cols = np.empty((d, k))
    for arm in range(k):
        lineno, tokens = body_rows[arm]
        if len(tokens) != d:
            raise InstanceFormatError(
                f"line {lineno}: covariate row has {len(tokens)} entries, expected {d}"
            )
        cols[:, arm] = _parse_floats(tokens, lineno)
        norm = float(np.linalg.norm(cols[:, arm]))
        if norm > 0.0 and abs(norm - 1.0) > 1e-6:
            logger.warning("line %d: covariate %d has norm %.6g, renormalizing", lineno, arm, norm)

    lineno, tokens = body_rows[k]
    if len(tokens) != k:
        raise InstanceFormatError(
            f"line {lineno}: variance row has {len(tokens)} entries, expected {k}"
        )
    sigma2 = np.array(_parse_floats(tokens, lineno))

    kappa2 = None
    beta = None
    extras = body_rows[k + 1 :]
    if len(extras) > 2:
        raise InstanceFormatError(f"line {extras[2][0]}: unexpected trailing data")
    if len(extras) == 2:
        ln1, t1 = extras[0]
        ln2, t2 = extras[1]
        if len(t1) != k:
            raise InstanceFormatError(f"line {ln1}: proxy row has {len(t1)} entries, expected {k}")
        if len(t2) != d:
            raise InstanceFormatError(f"line {ln2}: beta row has {len(t2)} entries, expected {d}")
        kappa2 = np.array(_parse_floats(t1, ln1))
        beta = np.array(_parse_floats(t2, ln2))
    elif len(extras) == 1:
        ln, tokens = extras[0]
        if len(tokens) == k:
            kappa2 = np.array(_parse_floats(tokens, ln))
        elif len(tokens) == d:
            beta = np.array(_parse_floats(tokens, ln))
        else:
            raise InstanceFormatError(
                f"line {ln}: optional row has {len(tokens)} entries, expected {k} or {d}"
            )

    if kappa2 is None:
        kappa2 = sigma2.copy()
    try:
        return DesignProblem(CovariateSet(cols), NoiseSpec(sigma2, kappa2), beta=beta)
    except ValueError as exc:
        raise InstanceFormatError(f"{path}: {exc}") from None


def write_instance(problem: DesignProblem, path) -> None:
    """Write an instance file that ``load_instance`` reads back exactly."""
    lines = ["# active sampling design instance"]
    lines.append(f"{problem.dimension} {problem.n_arms}")
    for arm in range(problem.n_arms):
        lines.append(" ".join(repr(float(v)) for v in problem.covariates.columns[:, arm]))
    lines.append(" ".join(repr(float(v)) for v in problem.noise.sigma2))
    lines.append(" ".join(repr(float(v)) for v in problem.noise.kappa2))
    if problem.beta is not None:
        lines.append(" ".join(repr(float(v)) for v in problem.beta))
    Path(path).write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    instance: dict
    policies: tuple
    budgets: tuple
    seeds: tuple
    checkpoint_ratio: float = 1.2
    estimation_count: int | None = None
    output: str | None = "results"

    @staticmethod
    def from_dict(raw: dict) -> "ExperimentConfig":
        known = {
            "instance",
            "policies",
            "budgets",
            "seeds",
            "checkpoints",
            "estimation_count",
            "output",
        }
        for key in raw:
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
        for key in ("instance", "policies", "budgets"):
            if key not in raw:
                raise ConfigError(f"missing config key {key!r}")

        instance = raw["instance"]
        if not isinstance(instance, dict):
            raise ConfigError("'instance' must be an object")

        policies = []
        seen = set()
        for entry in raw["policies"]:
            if isinstance(entry, str):
                name, options = entry, {}
            elif isinstance(entry, dict) and "name" in entry:
                name = entry["name"]
                options = {k: v for k, v in entry.items() if k != "name"}
            else:
                raise ConfigError(f"'policies' entry {entry!r} needs a name")
            if name not in POLICY_NAMES:
                raise ConfigError(f"unknown policy {name!r}; expected one of {POLICY_NAMES}")
            if name in seen:
                raise ConfigError(f"policy {name!r} listed twice")
            seen.add(name)
            policies.append((name, options))
        if not policies:
            raise ConfigError("'policies' must not be empty")

        budgets = tuple(int(t) for t in raw["budgets"])
        if not budgets or any(t < 1 for t in budgets):
            raise ConfigError("'budgets' must be positive integers")

        seeds_raw = raw.get("seeds", 25)
        if isinstance(seeds_raw, int):
            if seeds_raw < 1:
                raise ConfigError("'seeds' count must be positive")
            seeds = tuple(range(seeds_raw))
        else:
            seeds = tuple(int(s) for s in seeds_raw)
            if len(set(seeds)) != len(seeds):
                raise ConfigError("'seeds' must be distinct")

        ratio = 1.2
        if "checkpoints" in raw:
            cp = raw["checkpoints"]
            if not isinstance(cp, dict) or set(cp) - {"ratio"}:
                raise ConfigError("'checkpoints' must be an object with key 'ratio'")
            ratio = float(cp.get("ratio", 1.2))
            if ratio <= 1.0:
                raise ConfigError("'checkpoints.ratio' must exceed 1")

        n0 = raw.get("estimation_count")
        if n0 is not None:
            n0 = int(n0)
            if n0 < 2:
                raise ConfigError("'estimation_count' must be at least 2")

        return ExperimentConfig(
            instance=instance,
            policies=tuple(policies),
            budgets=budgets,
            seeds=seeds,
            checkpoint_ratio=ratio,
            estimation_count=n0,
            output=raw.get("output", "results"),
        )


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return ExperimentConfig.from_dict(raw)


def build_problem(instance: dict) -> tuple[DesignProblem, str]:
    """Materialize (problem, noise model) from a config's instance object."""
    model = instance.get("noise", "gaussian")
    if model not in NOISE_MODELS:
        raise ConfigError(f"unknown noise model {model!r}; expected one of {NOISE_MODELS}")
    keys = set(instance) - {"noise"}

    if "file" in instance:
        if keys - {"file"}:
            raise ConfigError("instance with 'file' takes no other keys")
        return load_instance(instance["file"]), model

    if "generator" in instance:
        kind = instance["generator"]
        if kind == "hard":
            if keys - {"generator", "delta"}:
                raise ConfigError("hard instance takes only 'delta'")
            return make_hard_instance(float(instance.get("delta", 1.0)), model), model
        if kind == "random":
            allowed = {"generator", "d", "K", "seed", "sigma2_range", "canonical"}
            if keys - allowed:
                raise ConfigError(f"random instance keys must be in {sorted(allowed)}")
            return (
                make_random_instance(
                    int(instance.get("d", 3)),
                    int(instance.get("K", instance.get("d", 3))),
                    int(instance.get("seed", 0)),
                    tuple(instance.get("sigma2_range", (0.5, 2.0))),
                    model,
                    bool(instance.get("canonical", False)),
                ),
                model,
            )
        raise ConfigError(f"unknown generator {kind!r}; expected 'random' or 'hard'")

    if "covariates" in instance:
        allowed = {"covariates", "variances", "kappa2", "beta"}
        if keys - allowed:
            raise ConfigError(f"inline instance keys must be in {sorted(allowed)}")
        if "variances" not in instance:
            raise ConfigError("inline instance needs 'variances'")
        cols = np.asarray(instance["covariates"], dtype=np.float64).T
        sigma2 = np.asarray(instance["variances"], dtype=np.float64)
        kappa2 = (
            np.asarray(instance["kappa2"], dtype=np.float64)
            if "kappa2" in instance
            else noise_proxy(model, sigma2)
        )
        beta = np.asarray(instance["beta"], dtype=np.float64) if "beta" in instance else None
        return DesignProblem(CovariateSet(cols), NoiseSpec(sigma2, kappa2), beta=beta), model

    raise ConfigError("instance needs one of 'file', 'generator', or 'covariates'")


# --------------------------------------------------------------------
# sweep


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r_squared: float
    n_points: int


def fit_slope(budgets, regrets) -> SlopeFit:
    """Least-squares slope of log10(regret) against log10(T).

    Nonpositive regret values cannot be placed on the log scale and are
    dropped with a warning; fewer than three usable points is an error.
    """
    ts = np.asarray(budgets, dtype=np.float64)
    rs = np.asarray(regrets, dtype=np.float64)
    if ts.shape != rs.shape:
        raise ValueError("budgets and regrets must align")
    keep = rs > 0.0
    if not np.all(keep):
        logger.warning("dropping %d nonpositive regret point(s) from slope fit", int((~keep).sum()))
    ts, rs = ts[keep], rs[keep]
    if ts.size < 3:
        raise ValueError("need at least three positive points to fit a slope")
    lx, ly = np.log10(ts), np.log10(rs)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    total = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / total if total > 0.0 else 1.0
    return SlopeFit(float(slope), float(intercept), r2, int(ts.size))


@dataclass
class SweepResult:
    traces: dict
    summaries: dict
    slopes: dict
    failures: list
    output_dir: Path | None


def _episode_task(args) -> tuple:
    problem, model, name, options, horizon, seed, ratio, n0, reference = args
    env = make_env(problem, seed, model)
    trace = run_episode(
        name,
        env,
        horizon,
        checkpoint_ratio=ratio,
        estimation_count=n0,
        options=options,
        reference=reference,
    )
    return name, horizon, seed, trace


def _thread_cap() -> int:
    raw = os.environ.get("ACTIVE_DESIGN_THREADS", "")
    if raw:
        try:
            cap = int(raw)
        except ValueError:
            raise ConfigError(f"ACTIVE_DESIGN_THREADS={raw!r} is not an integer") from None
        if cap < 1:
            raise ConfigError("ACTIVE_DESIGN_THREADS must be positive")
        return cap
    return os.cpu_count() or 1


def run_sweep(config: ExperimentConfig, quiet: bool = False, fmt: str = "csv") -> SweepResult:
    """Run every (policy, budget, seed) episode and write the result files.

    Episodes are independent; up to ``ACTIVE_DESIGN_THREADS`` of them run
    in parallel worker processes.  Failures are collected rather than
    fatal so a bad seed cannot sink a long sweep; callers decide how to
    surface them.
    """
    if fmt not in ("csv", "json"):
        raise ConfigError(f"unknown output format {fmt!r}")
    problem, model = build_problem(config.instance)
    reference = reference_optimum(problem)

    # fail fast on unusable policy options before spending episode time
    probe_rng = np.random.default_rng(0)
    for name, options in config.policies:
        try:
            make_policy(name, problem, probe_rng, max(config.budgets), dict(options))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"policy {name!r} options rejected: {exc}") from None

    jobs = [
        (problem, model, name, options, horizon, seed, config.checkpoint_ratio,
         config.estimation_count, reference)
        for name, options in config.policies
        for horizon in config.budgets
        for seed in config.seeds
    ]

    traces: dict = {}
    failures: list = []
    workers = min(_thread_cap(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_episode_task, job) for job in jobs]
            for job, fut in zip(jobs, futures):
                try:
                    name, horizon, seed, trace = fut.result()
                    traces[(name, horizon, seed)] = trace
                except Exception as exc:
                    failures.append((job[2], job[4], job[5], f"{type(exc).__name__}: {exc}"))
    else:
        for job in jobs:
            try:
                name, horizon, seed, trace = _episode_task(job)
                traces[(name, horizon, seed)] = trace
            except Exception as exc:
                failures.append((job[2], job[4], job[5], f"{type(exc).__name__}: {exc}"))

    summaries: dict = {}
    slopes: dict = {}
    for name, _ in config.policies:
        rows = []
        for horizon in config.budgets:
            finals = [
                traces[(name, horizon, s)].final_regret
                for s in config.seeds
                if (name, horizon, s) in traces
            ]
            if not finals:
                continue
            arr = np.array(finals)
            stderr = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
            rows.append((horizon, float(arr.mean()), stderr, arr.size))
        summaries[name] = rows

        fit_rows = list(rows)
        if fit_rows:
            # drop the smallest budget when its episodes were still warm:
            # fewer than 2 n0 samples on some arm leaves the variance
            # estimates dominated by the estimation phase
            smallest = min(fit_rows, key=lambda r: r[0])[0]
            warm = [
                min(traces[(name, smallest, s)].final_counts)
                < 2 * max(traces[(name, smallest, s)].estimation_count, 1)
                for s in config.seeds
                if (name, smallest, s) in traces
            ]
            if any(warm) and len(fit_rows) > 3:
                logger.warning("excluding warm budget T=%d from %s slope fit", smallest, name)
                fit_rows = [r for r in fit_rows if r[0] != smallest]
        try:
            slopes[name] = fit_slope([r[0] for r in fit_rows], [r[1] for r in fit_rows])
        except ValueError as exc:
            logger.warning("no slope for %s: %s", name, exc)
            slopes[name] = None

        if not quiet:
            spent = sum(
                traces[(name, h, s)].elapsed
                for h in config.budgets
                for s in config.seeds
                if (name, h, s) in traces
            )
            fit = slopes[name]
            line = f"policy {name}: {len(rows)} budgets, wall {spent:.1f}s"
            if fit is not None:
                line += f", slope {fit.slope:+.3f} (r2 {fit.r_squared:.3f})"
            print(line, file=sys.stderr)

    out_dir = None
    if config.output is not None:
        out_dir = Path(config.output)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_outputs(out_dir, config, traces, summaries, slopes, failures, fmt)

    return SweepResult(traces, summaries, slopes, failures, out_dir)


# --------------------------------------------------------------------
# output files


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path: Path, header: list[str], rows: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def trace_rows(trace: RegretTrace) -> list:
    return [[row.t, _fmt(row.regret), _fmt(row.loss_gap), _fmt(row.p_min)] for row in trace.rows]


def _write_outputs(out_dir, config, traces, summaries, slopes, failures, fmt) -> None:
    ext = fmt
    for (name, horizon, seed), trace in sorted(traces.items()):
        path = out_dir / f"trace_{name}_T{horizon}_seed{seed}.{ext}"
        if fmt == "csv":
            _write_csv(path, ["t", "regret", "loss_gap", "p_min"], trace_rows(trace))
        else:
            payload = {
                "policy": name,
                "horizon": horizon,
                "seed": seed,
                "rows": [
                    {"t": r.t, "regret": r.regret, "loss_gap": r.loss_gap, "p_min": r.p_min}
                    for r in trace.rows
                ],
            }
            path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")

    for name, rows in sorted(summaries.items()):
        path = out_dir / f"summary_{name}.{ext}"
        if fmt == "csv":
            _write_csv(
                path,
                ["T", "mean_regret", "stderr", "n_seeds"],
                [[t, _fmt(m), _fmt(se), n] for (t, m, se, n) in rows],
            )
        else:
            payload = [
                {"T": t, "mean_regret": m, "stderr": se, "n_seeds": n} for (t, m, se, n) in rows
            ]
            path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")

    path = out_dir / f"slopes.{ext}"
    slope_items = sorted((name, fit) for name, fit in slopes.items() if fit is not None)
    if fmt == "csv":
        _write_csv(
            path,
            ["policy", "slope", "intercept", "r_squared", "n_points"],
            [
                [name, _fmt(f.slope), _fmt(f.intercept), _fmt(f.r_squared), f.n_points]
                for name, f in slope_items
            ],
        )
    else:
        payload = {
            name: {
                "slope": f.slope,
                "intercept": f.intercept,
                "r_squared": f.r_squared,
                "n_points": f.n_points,
            }
            for name, f in slope_items
        }
        path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")

    if failures:
        _write_csv(
            out_dir / "failures.csv",
            ["policy", "T", "seed", "error"],
            [[name, t, seed, msg] for name, t, seed, msg in sorted(failures)],
        )


# --------------------------------------------------------------------
# concentration verification


def verify_concentration(
    trials: int = 1000,
    pairs: tuple = ((50, 0.05), (200, 0.01)),
    horizon: int = 100,
    sigma2: float = 1.0,
    noise: str = "gaussian",
    seed: int = 0,
) -> list[dict]:
    """Monte Carlo check of the variance deviation radius and halving count.

    For each (n, delta) pair, draws ``trials`` batches of n noise samples
    and measures how often the population variance estimate misses the
    truth by more than the radius; the rate must stay below delta (plus
    binomial noise).  The halving row does the same for the sample count
    that promises a factor-two estimate with probability 1 - 1/T^2.
    """
    if noise not in NOISE_MODELS:
        raise ConfigError(f"unknown noise model {noise!r}")
    kappa2 = float(noise_proxy(noise, np.array([sigma2]))[0])
    rng = np.random.default_rng(seed)

    def draw(n: int) -> np.ndarray:
        if noise == "gaussian":
            return math.sqrt(sigma2) * rng.standard_normal((trials, n))
        if noise == "uniform":
            a = math.sqrt(3.0 * sigma2)
            return rng.uniform(-a, a, (trials, n))
        return math.sqrt(sigma2) * (2.0 * rng.integers(0, 2, (trials, n)) - 1.0)

    rows = []
    for n, delta in pairs:
        samples = draw(int(n))
        var_hat = samples.var(axis=1)  # population convention
        radius = variance_radius(int(n), kappa2, float(delta))
        rate = float(np.mean(np.abs(var_hat - sigma2) > radius))
        rows.append(
            {
                "kind": "radius",
                "n": int(n),
                "delta": float(delta),
                "trials": trials,
                "violation_rate": rate,
                "bound": float(delta),
                "binom_se": math.sqrt(float(delta) * (1.0 - float(delta)) / trials),
            }
        )

    n_half = halving_sample_count(kappa2, sigma2, horizon)
    samples = draw(n_half)
    var_hat = samples.var(axis=1)
    bound = 1.0 / horizon**2
    rate = float(np.mean(np.abs(var_hat - sigma2) > sigma2 / 2.0))
    rows.append(
        {
            "kind": "halving",
            "n": n_half,
            "delta": bound,
            "trials": trials,
            "violation_rate": rate,
            "bound": bound,
            "binom_se": math.sqrt(bound * (1.0 - bound) / trials),
        }
    )
    return rows


def write_concentration_report(rows: list[dict], path, fmt: str = "csv") -> None:
    path = Path(path)
    if fmt == "csv":
        header = ["kind", "n", "delta", "trials", "violation_rate", "bound", "binom_se"]
        _write_csv(
            path,
            header,
            [
                [
                    r["kind"],
                    r["n"],
                    _fmt(r["delta"]),
                    r["trials"],
                    _fmt(r["violation_rate"]),
                    _fmt(r["bound"]),
                    _fmt(r["binom_se"]),
                ]
                for r in rows
            ],
        )
    else:
        path.write_text(json.dumps(rows, indent=1, sort_keys=True) + "\n")
