"""Experiment orchestration: configuration, replications, metrics and diagnostics.

An experiment is described by one JSON document::

    {
      "problem":     {"synthetic": {"n": 1000, "d": 10, "seed": 7}, "sigma2": 0.1, "tau": 1.0},
      "algorithm":   {"name": "3p-spider", "k_out": 15, "k_in": 32, "b": 32,
                      "gamma": "star", "m_schedule": 32},
      "replication": {"runs": 25, "base_seed": 0},
      "output":      {"dir": "out"}
    }

Unknown keys are rejected. Missing keys take the defaults in
:data:`DEFAULTS`; the fully resolved document is written next to the outputs
(``config.json``) and re-runs to identical results. Command-line flags
override file values.

Quantiles use the nearest-rank definition: for ``N`` sorted values the
``q``-quantile is the value of rank ``ceil(q N)`` (no interpolation).
"""
import copy
import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import jsonschema
import numpy as np

from .baselines import OnlineConfig, run_full_prox_gradient, run_prox_online_em
from .core import (RunConfig, control_variate_telescoping_check, counters_at,
                   gamma_star, run_3p_spider, theorem1_rhs)
from .exceptions import ConfigError
from .logistic import (Dataset, ModelParams, generate_synthetic, load_dataset,
                       make_oracles)
from .oracles import (MinibatchSampler, ZeroNoise, estimate_cv, eta_replicates,
                      mean_field)
from .prox import weighted_prox

METRICS_COLUMNS = ["run_id", "t", "k", "inner_count", "delta_hat", "delta_exact",
                   "sq_norm", "N_P", "N_A", "N_MC", "wall_ms"]

_int = {"type": "integer"}
_pos_int = {"type": "integer", "minimum": 1}
_pos_num = {"type": "number", "exclusiveMinimum": 0}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["problem", "algorithm"],
    "properties": {
        "problem": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dataset": {"type": ["string", "null"]},
                "synthetic": {
                    "type": ["object", "null"],
                    "additionalProperties": False,
                    "required": ["n", "d"],
                    "properties": {
                        "n": _pos_int, "d": _pos_int, "seed": _int,
                        "theta_norm": {"type": "number", "minimum": 0},
                        "x_scale": _pos_num,
                    },
                },
                "d": {"type": ["integer", "null"], "minimum": 1},
                "sigma2": _pos_num,
                "tau": _pos_num,
                "nodes": {"type": "integer", "minimum": 16},
            },
        },
        "algorithm": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": ["3p-spider", "prox-online-em", "full-prox-gradient"]},
                "k_out": _pos_int,
                "k_in": {"type": "integer", "minimum": 0},
                "b": _pos_int,
                "gamma": {"oneOf": [_pos_num, {"const": "star"}]},
                "gamma_t0": {"type": "number", "minimum": 0},
                "m_schedule": {"oneOf": [
                    _pos_int,
                    {"type": "array", "minItems": 1,
                     "items": {"type": "array", "minItems": 2, "maxItems": 2,
                               "items": _pos_int}},
                ]},
                "refresh": {"oneOf": [{"const": "full"}, _pos_int]},
                "sampling": {"enum": ["with_replacement", "without_replacement"]},
                "oracle": {"enum": ["mc", "exact"]},
                "init": {"oneOf": [{"const": "default"},
                                   {"type": "array", "items": {"type": "number"}}]},
                "lipschitz_aggregation": {"enum": ["max", "rms"]},
                "T": _pos_int,
                "m": _pos_int,
                "decay": {"enum": ["constant", "inverse"]},
                "tol": {"type": "number", "minimum": 0},
            },
        },
        "replication": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"runs": _pos_int, "base_seed": _int},
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "exact_delta": {"type": "boolean"},
                "exact_delta_stride": {"type": "integer", "minimum": 0},
                "wall_clock": {"type": "boolean"},
            },
        },
    },
}

DEFAULTS = {
    "problem": {"dataset": None, "synthetic": None, "d": None, "sigma2": 0.1, "tau": 1.0,
                "nodes": 64},
    "algorithm": {"k_out": 20, "k_in": 16, "b": 16, "gamma": "star", "gamma_t0": 0.0,
                  "m_schedule": 16, "refresh": "full", "sampling": "with_replacement",
                  "oracle": "mc", "init": "default", "lipschitz_aggregation": "max",
                  "T": 100, "m": 16, "decay": "constant", "tol": 0.0},
    "replication": {"runs": 1, "base_seed": 0},
    "output": {"dir": "out", "exact_delta": False, "exact_delta_stride": 0,
               "wall_clock": False},
}
SYNTHETIC_DEFAULTS = {"seed": 0, "theta_norm": 1.0, "x_scale": 1.0}


def fmt(x):
    """Fixed float format for CSV output (17 significant digits)."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def nearest_rank(values, q):
    """Nearest-rank ``q``-quantile (``0 < q <= 1``) of a sequence."""
    v = sorted(values)
    if not v:
        raise ValueError("no values")
    rank = max(1, math.ceil(q * len(v) - 1e-12))
    return v[rank - 1]


# ----------------------------------------------------------------------------
# Configuration
# ----------------------------------------------------------------------------


def resolve_config(doc, overrides=None):
    """Validate ``doc``, apply ``overrides`` and fill defaults.

    ``overrides`` may contain ``seed`` (replication base seed) and ``out``
    (output directory). Raises :class:`ConfigError` on any violation.
    """
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {path}: {exc.message}") from None
    cfg = copy.deepcopy(DEFAULTS)
    for section, values in doc.items():
        cfg[section].update(copy.deepcopy(values))
    prob = cfg["problem"]
    if (prob["dataset"] is None) == (prob["synthetic"] is None):
        raise ConfigError("problem needs exactly one of 'dataset' or 'synthetic'")
    if prob["synthetic"] is not None:
        prob["synthetic"] = {**SYNTHETIC_DEFAULTS, **prob["synthetic"]}
    overrides = overrides or {}
    if overrides.get("seed") is not None:
        cfg["replication"]["base_seed"] = int(overrides["seed"])
    if overrides.get("out") is not None:
        cfg["output"]["dir"] = str(overrides["out"])
    return cfg


def load_config(path, overrides=None):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return resolve_config(doc, overrides)


@dataclass
class Problem:
    dataset: Dataset
    params: ModelParams
    oracle: object
    precond: object
    reg: object
    lipschitz: object
    theta_star: object = None

    @property
    def n(self):
        return self.dataset.n

    @property
    def d(self):
        return self.dataset.d


def build_problem(problem_cfg):
    p = problem_cfg
    params = ModelParams(p["sigma2"], p["tau"])
    theta_star = None
    if p.get("dataset"):
        dataset = load_dataset(p["dataset"])
    else:
        syn = {**SYNTHETIC_DEFAULTS, **p["synthetic"]}
        rng = np.random.default_rng(syn["seed"])
        dataset, theta_star = generate_synthetic(syn["n"], syn["d"], p["sigma2"], rng,
                                                 theta_norm=syn["theta_norm"],
                                                 x_scale=syn["x_scale"])
    if p.get("d") is not None and p["d"] != dataset.d:
        raise ConfigError(f"dataset has d = {dataset.d} but the config expects d = {p['d']}")
    oracle = make_oracles(dataset, params, nodes=p.get("nodes", 64))
    return Problem(dataset, params, oracle, oracle.preconditioner(), oracle.regularizer(),
                   oracle.lipschitz(), theta_star)


# ----------------------------------------------------------------------------
# Replications
# ----------------------------------------------------------------------------


def _init(alg, problem):
    if alg["init"] == "default":
        return None
    init = np.asarray(alg["init"], dtype=float)
    if init.shape != (problem.d,):
        raise ConfigError(f"init has {init.size} entries, problem dimension is {problem.d}")
    return init


def run_one(cfg, problem, seed):
    alg = cfg["algorithm"]
    out = cfg["output"]
    oracle = problem.oracle
    if alg["oracle"] == "exact":
        oracle = ZeroNoise(oracle)
    problem.lipschitz.aggregation = alg["lipschitz_aggregation"]
    name = alg["name"]
    if name == "3p-spider":
        rc = RunConfig(
            k_out=alg["k_out"], k_in=alg["k_in"], b=alg["b"], gamma=alg["gamma"],
            gamma_t0=alg["gamma_t0"], m_schedule=alg["m_schedule"],
            refresh=None if alg["refresh"] == "full" else int(alg["refresh"]),
            sampling=alg["sampling"], seed=seed, init=_init(alg, problem),
            exact_delta=out["exact_delta"], exact_delta_stride=out["exact_delta_stride"])
        return run_3p_spider(rc, oracle, problem.precond, problem.reg, problem.lipschitz)
    if name == "prox-online-em":
        gamma = alg["gamma"]
        if gamma == "star":
            raise ConfigError("prox-online-em needs a numeric gamma")
        oc = OnlineConfig(T=alg["T"], b=alg["b"], gamma=gamma, m=alg["m"], seed=seed,
                          decay=alg["decay"], sampling=alg["sampling"],
                          init=_init(alg, problem))
        return run_prox_online_em(oc, oracle, problem.precond, problem.reg)
    gamma = 1.0 if alg["gamma"] == "star" else alg["gamma"]
    return run_full_prox_gradient(alg["T"], gamma, oracle, problem.precond, problem.reg,
                                  init=_init(alg, problem), tol=alg["tol"],
                                  objective=problem.oracle.objective)


def run_replications(cfg, problem=None, threads=1):
    """Run ``runs`` replications with seeds ``base_seed + 1 .. base_seed + runs``.

    Returns a list of ``(run_id, trajectory)`` sorted by run id.
    """
    if problem is None:
        problem = build_problem(cfg["problem"])
    base = cfg["replication"]["base_seed"]
    ids = list(range(1, cfg["replication"]["runs"] + 1))
    if threads > 1 and len(ids) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trajs = list(pool.map(lambda r: run_one(cfg, problem, base + r), ids))
    else:
        trajs = [run_one(cfg, problem, base + r) for r in ids]
    return list(zip(ids, trajs))


def metrics_rows(run_id, traj, wall_clock=False):
    inner = traj.cumulative_inner if traj.k_in > 0 else traj.t
    sq = traj.sq_norms
    for r in range(len(traj.t)):
        yield [run_id, int(traj.t[r]), int(traj.k[r]), int(inner[r]), traj.delta_hat[r],
               traj.delta_exact[r], sq[r], *(int(c) for c in traj.counters[r]),
               traj.wall_ms[r] if wall_clock else None]


def write_metrics(path, results, wall_clock=False):
    rows = []
    for run_id, traj in results:
        rows.extend(metrics_rows(run_id, traj, wall_clock))
    rows.sort(key=lambda row: (row[0], row[1], row[2]))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_COLUMNS)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def quantile_table(results, qs=(0.25, 0.5, 0.75)):
    """Per-``(t, k)`` nearest-rank quantiles of Delta_hat and ||S_hat||^2 across runs."""
    first = results[0][1]
    table = []
    for r in range(len(first.t)):
        dh = [float(tr.delta_hat[r]) for _, tr in results]
        sq = [float(tr.sq_norms[r]) for _, tr in results]
        inner = first.cumulative_inner[r] if first.k_in > 0 else first.t[r]
        row = {"t": int(first.t[r]), "k": int(first.k[r]), "inner_count": int(inner)}
        for q in qs:
            row[f"delta_hat_q{int(round(q * 100))}"] = nearest_rank(dh, q)
        for q in qs:
            row[f"sq_norm_q{int(round(q * 100))}"] = nearest_rank(sq, q)
        table.append(row)
    return table


def write_quantiles(path, table):
    cols = list(table[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in table:
            w.writerow([fmt(row[c]) for c in cols])


def stop_time_estimates(results):
    """Stop-time draws and the Monte Carlo estimate of E[Delta_hat_{tau,K}]."""
    draws, vals, exact = [], [], []
    for run_id, traj in results:
        if traj.stop_time is None:
            continue
        r = traj.at_stop_time()
        draws.append({"run_id": run_id, "tau": traj.stop_time[0], "K": traj.stop_time[1]})
        vals.append(float(traj.delta_hat[r]))
        if not math.isnan(traj.delta_exact[r]):
            exact.append(float(traj.delta_exact[r]))

    def mean_se(x):
        if not x:
            return None, None
        a = np.asarray(x)
        se = float(a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else None
        return float(a.mean()), se

    m, se = mean_se(vals)
    out = {"stop_times": draws, "delta_hat_at_stop_mean": m, "delta_hat_at_stop_se": se}
    if exact:
        out["delta_at_stop_mean"], out["delta_at_stop_se"] = mean_se(exact)
    return out


def cli_run(cfg, threads=1):
    """Execute the experiment described by a resolved config; returns the summary."""
    problem = build_problem(cfg["problem"])
    results = run_replications(cfg, problem, threads)
    out_dir = cfg["output"]["dir"]
    os.makedirs(out_dir, exist_ok=True)
    write_metrics(os.path.join(out_dir, "metrics.csv"), results, cfg["output"]["wall_clock"])
    table = quantile_table(results)
    write_quantiles(os.path.join(out_dir, "quantiles.csv"), table)
    first = results[0][1]
    summary = {
        "algorithm": cfg["algorithm"]["name"],
        "runs": len(results),
        "n": problem.n, "d": problem.d,
        "gamma": first.info.get("gamma"),
        "final_counters": {"N_P": int(first.counters[-1, 0]), "N_A": int(first.counters[-1, 1]),
                           "N_MC": int(first.counters[-1, 2])},
        "quantile_definition": "nearest-rank",
    }
    summary.update(stop_time_estimates(results))
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


# ----------------------------------------------------------------------------
# Matched-budget comparison
# ----------------------------------------------------------------------------


def epoch_budget_quantiles(spider_runs, online_runs, qs=(0.5, 0.75)):
    """Per-epoch Delta_hat quantiles of 3P-SPIDER and Prox-Online-EM at matched N_A.

    For epoch ``t`` the 3P-SPIDER sample pools ``Delta_hat_{t,k}``, ``k = 1..k_in``,
    over runs; the Prox-Online-EM sample pools the iterations whose cumulative
    ``N_A`` falls in the same budget window as epoch ``t``.
    Returns a list of dicts, one per epoch.
    """
    first = spider_runs[0]
    k_in = first.k_in
    ends = first.counters[first.k == k_in, 1]
    starts = np.concatenate([[0], ends[:-1]])
    rows = []
    for t, (lo, hi) in enumerate(zip(starts, ends), start=1):
        sp = np.concatenate([tr.delta_hat[(tr.t == t) & (tr.k > 0)] for tr in spider_runs])
        oe = np.concatenate([tr.delta_hat[(tr.counters[:, 1] > lo) & (tr.counters[:, 1] <= hi)]
                             for tr in online_runs])
        row = {"t": t, "budget": (int(lo), int(hi)), "online_count": int(oe.size)}
        for q in qs:
            row[f"spider_q{int(q * 100)}"] = nearest_rank(sp, q)
            row[f"online_q{int(q * 100)}"] = nearest_rank(oe, q) if oe.size else math.nan
        rows.append(row)
    return rows


# ----------------------------------------------------------------------------
# Diagnostics
# ----------------------------------------------------------------------------


@dataclass
class Check:
    name: str
    status: str
    detail: str

    def line(self):
        return f"{self.status:5s} {self.name}: {self.detail}"


def random_feasible_states(reg, dim, count, rng, scale=1.0):
    """Points of dom(g): Gaussian draws pulled radially inside an ellipsoid."""
    out = []
    for _ in range(count):
        s = scale * rng.standard_normal(dim)
        if reg.is_indicator and hasattr(reg, "radial_projection"):
            s = reg.radial_projection(s) * rng.uniform(0.1, 1.0)
        out.append(s)
    return out


def projected_gradient_prox(B, Omega, radius, s, steps=100_000, tol=1e-15):
    """Brute-force ``argmin_{x^T Omega x <= radius} (x - s)^T B (x - s) / 2``.

    Projected gradient in the Omega-metric, where the projection is a radial
    rescaling. Stops early once an iteration no longer moves the point.
    """
    M = np.linalg.solve(Omega, B)
    step = 1.0 / np.max(np.real(np.linalg.eigvals(M)))
    x = s.copy()
    for _ in range(steps):
        y = x - step * (M @ (x - s))
        q = y @ Omega @ y
        if q > radius:
            y = y * math.sqrt(radius / q)
        if np.max(np.abs(y - x)) <= tol * max(1.0, np.max(np.abs(x))):
            return y
        x = y
    return x


def diagnose(oracle, precond, reg, lipschitz=None, objective=None, *, seed=0, reps=2000,
             run_config=None, theorem_runs=20, fd_points=5):
    """Run the diagnostic suite and return a list of :class:`Check`.

    Checks needing a capability the oracle lacks are reported as ``SKIP``.
    """
    rng = np.random.default_rng(seed)
    q = oracle.dim
    checks = []
    noiseless = isinstance(oracle, ZeroNoise)
    states = random_feasible_states(reg, q, 2, rng)
    s_prev = states[0]
    s_curr = weighted_prox(precond.matrix(s_prev), 0.0, reg, s_prev + 0.05 * rng.standard_normal(q))

    # 1-2: perturbation law
    if not (oracle.has_exact and oracle.has_mc):
        checks.append(Check("eta unbiasedness", "SKIP", "needs exact and Monte Carlo evaluators"))
        checks.append(Check("eta variance scaling", "SKIP", "needs exact and Monte Carlo evaluators"))
    elif noiseless:
        checks.append(Check("eta unbiasedness", "PASS", "exact oracle: eta is identically 0"))
        checks.append(Check("eta variance scaling", "PASS", "exact oracle: eta is identically 0"))
    else:
        eta = eta_replicates(oracle, MinibatchSampler(oracle.n, 2), s_curr, s_prev, 8, reps, rng)
        mean = eta.mean(axis=0)
        se = eta.std(axis=0, ddof=1) / math.sqrt(reps)
        ok = bool(np.all(np.abs(mean) <= 4 * se))
        checks.append(Check("eta unbiasedness", "PASS" if ok else "FAIL",
                            f"max |mean|/SE = {np.max(np.abs(mean) / se):.2f} (limit 4)"))
        if oracle.has_variance:
            cv = estimate_cv(oracle, [s_curr, s_prev])
            worst, slopes = 0.0, []
            ms = (4, 16, 64)
            for b in (1, 4, 16):
                e2 = []
                for m in ms:
                    eta = eta_replicates(oracle, MinibatchSampler(oracle.n, b), s_curr, s_prev,
                                         m, reps, rng)
                    v = float(np.mean(np.sum(eta**2, axis=1)))
                    e2.append(v)
                    worst = max(worst, v / (cv / (b * m) * (1 + 3 / math.sqrt(reps))))
                slopes.append(np.polyfit(np.log(ms), np.log(e2), 1)[0])
            ok = worst <= 1.0 and all(abs(sl + 1) <= 0.1 for sl in slopes)
            checks.append(Check("eta variance scaling", "PASS" if ok else "FAIL",
                                f"max E|eta|^2/(C_v/(bm)) = {worst:.3f}; slopes "
                                + ", ".join(f"{sl:.3f}" for sl in slopes)))
        else:
            checks.append(Check("eta variance scaling", "SKIP", "needs a variance evaluator"))

    # 3: gradient identity
    if objective is None or not oracle.has_exact:
        checks.append(Check("gradient identity", "SKIP", "needs an objective and exact evaluator"))
    else:
        worst = 0.0
        for s in random_feasible_states(reg, q, fd_points, rng):
            fd = finite_difference_gradient(objective, s)
            g = -precond.matrix(s) @ mean_field(oracle, s)
            worst = max(worst, float(np.linalg.norm(fd - g) / np.linalg.norm(g)))
        checks.append(Check("gradient identity", "PASS" if worst <= 1e-4 else "FAIL",
                            f"max relative error {worst:.2e} (limit 1e-4)"))

    # 4: prox against brute force
    if hasattr(reg, "Omega"):
        worst = 0.0
        for _ in range(5):
            s = rng.standard_normal(q)
            s = s * math.sqrt(reg.radius / reg.quad(s)) * rng.uniform(1.2, 4.0)
            B = precond.matrix(s)
            brute = projected_gradient_prox(B, reg.Omega, reg.radius, s)
            worst = max(worst, float(np.abs(weighted_prox(B, 1.0, reg, s) - brute).max()))
        checks.append(Check("prox brute-force equivalence", "PASS" if worst <= 1e-6 else "FAIL",
                            f"max deviation {worst:.2e} (limit 1e-6)"))
    else:
        checks.append(Check("prox brute-force equivalence", "SKIP", "regularizer has no ellipsoid"))

    # 5-6: audit of a short run
    rc = run_config or RunConfig(k_out=3, k_in=4, b=min(4, oracle.n), gamma="star",
                                 m_schedule=8, seed=seed)
    if rc.gamma == "star" and lipschitz is None:
        rc = RunConfig(**{**rc.__dict__, "gamma": 0.1})
    if not oracle.has_mc:
        checks.append(Check("telescoping audit", "SKIP", "needs a Monte Carlo evaluator"))
        checks.append(Check("counter identities", "SKIP", "needs a Monte Carlo evaluator"))
        traj = None
    else:
        traj = run_3p_spider(rc, oracle, precond, reg, lipschitz)
        res = control_variate_telescoping_check(traj, oracle)
        checks.append(Check("telescoping audit", "PASS" if res <= 1e-10 else "FAIL",
                            f"max residual {res:.2e} (limit 1e-10)"))
        ok = rc.refresh is None and all(
            tuple(traj.counters[traj.index(t, k)])
            == counters_at(t, k, rc.k_in, rc.b, oracle.n, rc.m_schedule)
            for t in range(1, rc.k_out + 1) for k in range(rc.k_in + 1))
        final = tuple(int(c) for c in traj.counters[-1])
        checks.append(Check("counter identities", "PASS" if ok else "FAIL",
                            f"final (N_P, N_A, N_MC) = {final}"))

    # 7: Theorem-1 empirical bound
    checks.append(theorem_check(oracle, precond, reg, lipschitz, objective, rc, theorem_runs,
                                seed))
    return checks


def finite_difference_gradient(f, s, step=1e-5):
    """Central differences with one Richardson extrapolation step."""
    s = np.asarray(s, dtype=float)
    g1 = np.empty_like(s)
    g2 = np.empty_like(s)
    for j in range(s.size):
        e = np.zeros_like(s)
        e[j] = step
        g1[j] = (f(s + e) - f(s - e)) / (2 * step)
        g2[j] = (f(s + 2 * e) - f(s - 2 * e)) / (4 * step)
    return (4 * g1 - g2) / 3


def surrogate_minimum(oracle, precond, reg, objective, gamma=None, iterations=10_000,
                      init=None):
    """Long deterministic prox-gradient run; returns ``(min value, minimizer, last Delta_hat)``."""
    if gamma is None:
        gamma = 1.0
    traj = run_full_prox_gradient(iterations, gamma, oracle, precond, reg, init=init,
                                  tol=1e-30, objective=objective)
    return traj.info["objective"], traj.final_state, float(traj.delta_hat[-1])


def theorem_check(oracle, precond, reg, lipschitz, objective, rc, runs, seed):
    name = "theorem-1 empirical bound"
    if lipschitz is None or objective is None or not oracle.has_exact:
        return Check(name, "SKIP", "needs Lipschitz data, an objective and an exact evaluator")
    if not rc.theorem_compatible or rc.k_in < 1:
        return Check(name, "SKIP", "run settings violate the theorem hypotheses")
    est = theorem_estimates(oracle, precond, reg, lipschitz, objective, rc, runs, seed)
    ok = est["step_ok"] and est["delta_ok"]
    return Check(name, "PASS" if ok else "FAIL",
                 f"E step = {est['step_mean']:.3g} +- {est['step_se']:.2g} <= {est['bound_step']:.3g}; "
                 f"E Delta = {est['delta_mean']:.3g} +- {est['delta_se']:.2g} <= "
                 f"{est['bound_delta']:.3g} [{est['reading']}]")


def theorem_estimates(oracle, precond, reg, lipschitz, objective, rc, runs, seed,
                      cv_states=None):
    """Monte Carlo estimates of both Theorem-1 expectations next to their bounds.

    ``runs`` independent runs (seeds ``seed + 1 ..``), each contributing the
    values at its own stop time. ``C_v`` is estimated over the visited states,
    extra random feasible states and ``cv_states``.
    """
    rng = np.random.default_rng(seed)
    init = None if rc.init is None else rc.init
    base = {**rc.__dict__, "gamma": "star", "exact_delta": True}
    steps, deltas, visited = [], [], []
    for r in range(1, runs + 1):
        cfg = RunConfig(**{**base, "seed": seed + r})
        traj = run_3p_spider(cfg, oracle, precond, reg, lipschitz)
        i = traj.at_stop_time()
        steps.append(float(traj.delta_hat[i]))
        deltas.append(float(traj.delta_exact[i]))
        visited.append(traj.states[i])
        visited.append(traj.final_state)
    states = visited + random_feasible_states(reg, oracle.dim, 10, rng)
    if cv_states is not None:
        states += list(cv_states)
    cv = estimate_cv(oracle, states) if oracle.has_variance else 0.0
    s0 = traj.epoch_start[0] if init is None else np.asarray(init, dtype=float)
    w_min, _, _ = surrogate_minimum(oracle, precond, reg, objective, init=s0)
    gap = max(0.0, objective(s0) + reg.value(s0) - w_min)
    bounds = theorem1_rhs(rc.k_out, rc.k_in, rc.b, rc.m_schedule, precond.v_min, precond.v_max,
                          lipschitz.L_Wdot, lipschitz.L, cv, gap)
    steps, deltas = np.asarray(steps), np.asarray(deltas)
    out = {
        "C_v": cv, "W_g_gap": gap,
        "gamma_star": gamma_star(precond.v_min, precond.v_max, lipschitz.L_Wdot, lipschitz.L,
                                 rc.k_in, rc.b),
        "step_mean": float(steps.mean()),
        "step_se": float(steps.std(ddof=1) / math.sqrt(runs)) if runs > 1 else 0.0,
        "delta_mean": float(deltas.mean()),
        "delta_se": float(deltas.std(ddof=1) / math.sqrt(runs)) if runs > 1 else 0.0,
        "bound_step": bounds.bound_step, "bound_delta": bounds.bound_delta,
        "reading": bounds.reading,
    }
    out["step_ok"] = out["step_mean"] <= out["bound_step"] + 2 * out["step_se"]
    out["delta_ok"] = out["delta_mean"] <= out["bound_delta"] + 2 * out["delta_se"]
    return out


def cli_diagnose(cfg, reps=2000, theorem_runs=20):
    """Diagnostics for the problem of a resolved config; returns the checks."""
    problem = build_problem(cfg["problem"])
    alg = cfg["algorithm"]
    oracle = problem.oracle
    if alg["oracle"] == "exact":
        oracle = ZeroNoise(oracle)
    seed = cfg["replication"]["base_seed"]
    rc = None
    if alg["name"] == "3p-spider":
        rc = RunConfig(k_out=min(alg["k_out"], 5), k_in=alg["k_in"], b=alg["b"], gamma="star",
                       m_schedule=alg["m_schedule"], seed=seed, sampling=alg["sampling"],
                       init=_init(alg, problem))
    return diagnose(oracle, problem.precond, problem.reg, problem.lipschitz,
                    problem.oracle.objective, seed=seed, reps=reps, run_config=rc,
                    theorem_runs=theorem_runs)
