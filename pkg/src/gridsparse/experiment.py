"""Monte-Carlo sweeps over attack density with CSV emission.

One experiment = one system, one mode, one k/N grid.  Every grid point
runs `realizations` independent draws; each draw owns a derived random
stream, so realization order never matters and reruns are byte-stable.

The solvers take SolverConfig verbatim, but the raw Jacobians put
lambda_max around 1e4 and a fixed penalty rho=1 would need 1e5+
iterations on the l1 solves.  The harness therefore derives rho per
solver family: 0.1*lambda for lasso/consensus-type solves,
0.1*||H||_F^2/D for the per-column strategic constructions, and the
configured rho for the sharing solver (which wants the opposite
scaling) and for selective solves on projector-conditioned systems.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, fields, asdict

import numpy as np

from .errors import ConfigError, GridSparseError
from .grid_model import BUNDLED_SYSTEMS, build_dc_jacobian, load_case
from .admm import SolverConfig, InnerSolverConfig
from .attacks import (AttackSpec, build_projection, collective_sparse_attack,
                      distributed_sparse_attack, random_sparse_attack,
                      strategic_lasso_attack, strategic_selective_attack,
                      targeted_lasso_attack, targeted_selective_attack)
from .estimation import (ClusterPartition, collaborative_state_estimate,
                         distributed_state_estimate)
from .detection import (confusion, construction_probabilities, detect,
                        metrics, residuals, tau_threshold)

MODES = (
    "tla",
    "tsa",
    "sla",
    "ssa",
    "random_attack_detect_distributed",
    "random_attack_detect_collaborative",
    "distributed_attack",
    "collective_attack",
)

#: constructions are scored against the reference; detection modes run the
#: full estimate-then-flag pipeline.
CONSTRUCTION_MODES = ("tla", "tsa", "sla", "ssa",
                      "distributed_attack", "collective_attack")

DEFAULT_GRID = tuple(round(0.1 * i, 1) for i in range(1, 10))

#: multiplier applied to the per-solve penalty to get rho for
#: lasso/consensus solves; measured to keep iteration counts in the
#: hundreds where rho=1 stalls on raw Jacobians.
RHO_LAMBDA_FACTOR = 0.1
#: the strategic lasso per-column solves run at this fraction of the
#: average squared column norm of H; the selective ones use the full
#: column scale (the nonconvex iteration stalls below it).
RHO_COLUMN_FACTOR = 0.1


def _prime_divisors(n: int) -> tuple[int, ...]:
    out = []
    m = n
    p = 2
    while p * p <= m:
        if m % p == 0:
            out.append(p)
            while m % p == 0:
                m //= p
        p += 1
    if m > 1:
        out.append(m)
    return tuple(out)


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat, file-loadable description of one sweep."""

    system: str
    mode: str
    k_over_N_grid: tuple[float, ...] = DEFAULT_GRID
    realizations: int = 100
    C: float = 0.5
    rho: float = 1.0
    eps_abs: float = 1e-4
    eps_rel: float = 1e-2
    max_iter: int = 10000
    seed: int = 0
    G_policy: str | int = "prime_divisor_random"
    noise_sigma: float = 5.0
    psi: float = 1.0
    targeted_fraction: float = 0.25
    case_path: str | None = None

    def __post_init__(self):
        if self.system != "custom" and self.system not in BUNDLED_SYSTEMS:
            raise ConfigError("unknown system {!r}; expected one of {} or "
                              "'custom'".format(self.system,
                                                sorted(BUNDLED_SYSTEMS)))
        if self.system == "custom" and not self.case_path:
            raise ConfigError("system 'custom' needs case_path")
        if self.mode not in MODES:
            raise ConfigError("unknown mode {!r}".format(self.mode))
        grid = tuple(float(v) for v in self.k_over_N_grid)
        if not grid:
            raise ConfigError("k_over_N_grid must not be empty")
        if any(not 0.0 < v <= 1.0 for v in grid):
            raise ConfigError("k/N values must lie in (0, 1]")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("k_over_N_grid must be strictly increasing")
        object.__setattr__(self, "k_over_N_grid", grid)
        if self.realizations < 1:
            raise ConfigError("realizations must be >= 1")
        if self.C <= 0:
            raise ConfigError("C must be positive")
        if self.rho <= 0 or self.eps_abs <= 0 or self.eps_rel <= 0:
            raise ConfigError("rho and tolerances must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if isinstance(self.G_policy, bool) or (
                not isinstance(self.G_policy, (int, str))):
            raise ConfigError("G_policy must be 'one', "
                              "'prime_divisor_random' or an integer")
        if isinstance(self.G_policy, str) and self.G_policy not in (
                "one", "prime_divisor_random"):
            raise ConfigError("unknown G_policy {!r}".format(self.G_policy))
        if isinstance(self.G_policy, int) and self.G_policy < 1:
            raise ConfigError("fixed G must be >= 1")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be nonnegative")
        if self.mode.startswith("random_attack_detect") and self.noise_sigma == 0:
            raise ConfigError("detection modes need noise_sigma > 0 "
                              "(tau scales with the noise level)")
        if self.psi < 0:
            raise ConfigError("psi must be nonnegative")
        if not 0.0 < self.targeted_fraction <= 1.0:
            raise ConfigError("targeted_fraction must lie in (0, 1]")

    @classmethod
    def from_mapping(cls, mapping) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise ConfigError("unknown config keys: {}".format(
                ", ".join(unknown)))
        kwargs = dict(mapping)
        if "k_over_N_grid" in kwargs:
            kwargs["k_over_N_grid"] = tuple(kwargs["k_over_N_grid"])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path, "rb") as fh:
            raw = fh.read()
        text = raw.decode("utf-8")
        name = str(path)
        if name.endswith(".json") or text.lstrip().startswith("{"):
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError("bad JSON config {}: {}".format(path, exc))
        else:
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            try:
                data = tomllib.loads(text)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError("bad TOML config {}: {}".format(path, exc))
        if not isinstance(data, dict):
            raise ConfigError("config root must be a table/object")
        return cls.from_mapping(data)

    def canonical_json(self) -> str:
        data = asdict(self)
        data["k_over_N_grid"] = list(self.k_over_N_grid)
        return json.dumps(data, sort_keys=True)


@dataclass(frozen=True)
class MetricRow:
    k_over_N: float
    G: int
    metric: str
    mean: float
    std: float
    n: int


@dataclass(frozen=True)
class ExperimentResult:
    config: ExperimentConfig
    rows: tuple[MetricRow, ...]
    config_hash: str

    def __post_init__(self):
        keys = [(r.k_over_N, r.G, r.metric) for r in self.rows]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (k_over_N, G, metric) row")


def lambda_max(h, v) -> float:
    """Critical penalty: the smallest lambda with an all-zero solution."""
    h = np.asarray(h, dtype=float)
    v = np.asarray(v, dtype=float).ravel()
    if h.ndim != 2 or h.shape[0] != v.size:
        raise ValueError("need H with one row per entry of v")
    return float(np.abs(h.T @ v).max())


def choose_clusters(n: int, policy, rng) -> int:
    """Cluster count under the configured policy.

    prime_divisor_random draws uniformly from the prime divisors of n,
    falling back to {1, n} when n itself is prime and to 1 when n = 1.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if policy == "one":
        return 1
    if isinstance(policy, int) and not isinstance(policy, bool):
        if not 1 <= policy <= n:
            raise ValueError("fixed G must lie in [1, {}]".format(n))
        return policy
    if policy != "prime_divisor_random":
        raise ValueError("unknown G policy {!r}".format(policy))
    primes = _prime_divisors(n)
    if n == 1:
        return 1
    if primes == (n,):
        primes = (1, n)
    gen = np.random.default_rng(rng) if not isinstance(
        rng, np.random.Generator) else rng
    return int(primes[gen.integers(len(primes))])


def partition_indices(n: int, G: int, axis: str = "rows") -> ClusterPartition:
    """Contiguous blocks, remainder spread over the first blocks."""
    if not 1 <= G <= n:
        raise ValueError("G must lie in [1, {}]".format(n))
    base, extra = divmod(n, G)
    groups = []
    start = 0
    for i in range(G):
        size = base + (1 if i < extra else 0)
        groups.append(tuple(range(start, start + size)))
        start += size
    return ClusterPartition(axis=axis, groups=tuple(groups))


# ---------------------------------------------------------------------------
# per-mode pipelines


def _solver_config(config: ExperimentConfig, lam: float,
                   rho: float | None = None) -> SolverConfig:
    if rho is None:
        rho = RHO_LAMBDA_FACTOR * lam if lam > 0 else config.rho
    return SolverConfig(lam=lam, rho=rho, eps_abs=config.eps_abs,
                        eps_rel=config.eps_rel, max_iter=config.max_iter)


def _reference_attack(h, kn: float, sigma: float, rng):
    n, d = h.shape
    x = rng.standard_normal(d)
    noise = rng.normal(0.0, sigma, n) if sigma > 0 else np.zeros(n)
    z = h @ x + noise
    k = int(round(kn * n))
    ref = random_sparse_attack(n, k, float(z.mean()), float(z.var()), rng)
    return x, z, ref


def _targeted_inputs(h, a_ref, fraction: float):
    c_ref, *_ = np.linalg.lstsq(h, a_ref, rcond=None)
    d = h.shape[1]
    m = max(1, int(round(fraction * d)))
    picked = np.argsort(np.abs(c_ref))[-m:]
    return {int(i): float(c_ref[i]) for i in picked}


def _construction_realization(model, config: ExperimentConfig, kn: float,
                              rng) -> dict[str, float]:
    h = model.jacobian
    n, d = h.shape
    _, z, ref = _reference_attack(h, kn, config.noise_sigma, rng)
    mode = config.mode
    rho_cols = float((h ** 2).sum()) / d

    if mode in ("tla", "tsa"):
        targeted = _targeted_inputs(h, ref.a, config.targeted_fraction)
        if mode == "tla":
            pair = build_projection(h, targeted)
            lam = config.C * lambda_max(pair.complement, pair.target_image)
            att = targeted_lasso_attack(h, AttackSpec(targeted_values=targeted),
                                        _solver_config(config, lam))
        else:
            spec = AttackSpec(targeted_values=targeted, k=int(round(kn * n)))
            att = targeted_selective_attack(
                h, spec, _solver_config(config, 0.0, rho=config.rho))
        out_vec = att.a
    elif mode in ("sla", "ssa"):
        spec = AttackSpec(attacked_meters=tuple(
            int(i) for i in np.flatnonzero(np.abs(ref.a) > 0)),
            k=int(round(kn * n)), psi=config.psi)
        if mode == "sla":
            cfg = _solver_config(config, 0.0,
                                 rho=RHO_COLUMN_FACTOR * rho_cols)
            att = strategic_lasso_attack(h, spec, cfg, lambda_scale=config.C)
        else:
            # the nonconvex selective solves want the full column scale;
            # anything smaller stalls on over-constrained secure sets
            att = strategic_selective_attack(
                h, spec, _solver_config(config, 0.0, rho=rho_cols))
        out_vec = att.a
    else:
        raise ValueError("not a centralized construction mode: " + mode)

    probs = construction_probabilities([out_vec], [ref.a])
    out = {}
    if probs.p_nonzero is not None:
        out["p_nonzero"] = probs.p_nonzero
    if probs.p_zero is not None:
        out["p_zero"] = probs.p_zero
    return out


def _detection_realization(model, config: ExperimentConfig, kn: float,
                           G: int, tau: float, rng) -> dict[str, float]:
    h = model.jacobian
    n, d = h.shape
    _, z, ref = _reference_attack(h, kn, config.noise_sigma, rng)
    z_attacked = z + ref.a
    lam = config.C * lambda_max(h, z_attacked)
    if config.mode == "random_attack_detect_distributed":
        part = partition_indices(n, G, axis="rows")
        est = distributed_state_estimate(model, z_attacked, part,
                                         _solver_config(config, lam),
                                         lambda_scale=None)
    else:
        # the sharing solver wants the configured rho, not the
        # lambda-scaled one (opposite sensitivity to the penalty scale)
        part = partition_indices(d, G, axis="columns")
        est = collaborative_state_estimate(model, z_attacked, part,
                                           _solver_config(config, lam,
                                                          rho=config.rho),
                                           lambda_scale=None)
    per, _ = residuals(model, z_attacked, est.x_hat)
    counts = confusion(detect(per, tau), np.flatnonzero(np.abs(ref.a) > 0))
    bundle = metrics(counts)
    out = {}
    for name in ("precision", "recall", "accuracy"):
        value = getattr(bundle, name)
        if value is not None:
            out[name] = value
    return out


def _group_attack_realization(model, config: ExperimentConfig, kn: float,
                              G: int, rng) -> dict[str, float]:
    h = model.jacobian
    n, d = h.shape
    _, z, ref = _reference_attack(h, kn, config.noise_sigma, rng)
    lam_attack = config.C * lambda_max(h, ref.a)
    if config.mode == "distributed_attack":
        part = partition_indices(n, G, axis="rows")
        att = distributed_sparse_attack(h, ref.a, part,
                                        _solver_config(config, lam_attack))
    else:
        part = partition_indices(d, G, axis="columns")
        att = collective_sparse_attack(
            h, ref.a, part,
            _solver_config(config, lam_attack, rho=config.rho),
            InnerSolverConfig())
    z_attacked = z + att.a
    lam_est = config.C * lambda_max(h, z_attacked)
    cfg_est = _solver_config(config, lam_est)
    if config.mode == "distributed_attack":
        est = distributed_state_estimate(model, z_attacked,
                                         partition_indices(n, G, axis="rows"),
                                         cfg_est, lambda_scale=None)
    else:
        est = collaborative_state_estimate(
            model, z_attacked, partition_indices(d, G, axis="columns"),
            _solver_config(config, lam_est, rho=config.rho),
            lambda_scale=None)
    fitted_gap = z_attacked - h @ est.x_hat
    probs = construction_probabilities([att.a], [ref.a])
    out = {"error": float(fitted_gap @ fitted_gap)}
    if probs.p_nonzero is not None:
        out["p_nonzero"] = probs.p_nonzero
    if probs.p_zero is not None:
        out["p_zero"] = probs.p_zero
    return out


def _cluster_domain_size(mode: str, shape) -> int:
    n, d = shape
    if mode in ("random_attack_detect_collaborative", "collective_attack"):
        return d
    return n


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    source = config.case_path if config.system == "custom" else config.system
    model_sigma = config.noise_sigma if config.noise_sigma > 0 else 0.01
    model = build_dc_jacobian(load_case(source), noise_sigma=model_sigma)
    h = model.jacobian

    needs_tau = config.mode.startswith("random_attack_detect")
    tau = tau_threshold(model, noise_sigma=config.noise_sigma) if needs_tau else None
    clustered = needs_tau or config.mode in ("distributed_attack",
                                             "collective_attack")
    domain = _cluster_domain_size(config.mode, h.shape)

    rows: list[MetricRow] = []
    for gi, kn in enumerate(config.k_over_N_grid):
        # metric -> G -> values; centralized constructions report G=1
        values: dict[str, dict[int, list[float]]] = {}
        try:
            for r in range(config.realizations):
                rng = np.random.default_rng([config.seed, gi, r])
                if clustered:
                    G = choose_clusters(domain, config.G_policy, rng)
                else:
                    G = 1
                if needs_tau:
                    sample = _detection_realization(model, config, kn, G,
                                                    tau, rng)
                elif config.mode in ("distributed_attack",
                                     "collective_attack"):
                    sample = _group_attack_realization(model, config, kn,
                                                       G, rng)
                else:
                    sample = _construction_realization(model, config, kn,
                                                       rng)
                for name, value in sample.items():
                    values.setdefault(name, {}).setdefault(G, []).append(
                        float(value))
        except (GridSparseError, ValueError, ArithmeticError,
                np.linalg.LinAlgError):
            rows.append(MetricRow(k_over_N=kn, G=0, metric="failure",
                                  mean=1.0, std=0.0, n=0))
            continue
        for name in sorted(values):
            for G in sorted(values[name]):
                # sorted reduce so realization order can never leak into
                # the float sums
                vals = sorted(values[name][G])
                arr = np.asarray(vals, dtype=float)
                rows.append(MetricRow(k_over_N=kn, G=G, metric=name,
                                      mean=float(arr.mean()),
                                      std=float(arr.std()),
                                      n=arr.size))
    digest = hashlib.sha256(config.canonical_json().encode()).hexdigest()
    return ExperimentResult(config=config, rows=tuple(rows),
                            config_hash=digest[:16])


def emit_csv(result: ExperimentResult, path=None) -> str:
    """Render rows as CSV; write to path when given, always return text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("system", "mode", "G", "k_over_N", "metric",
                     "mean", "std", "n", "seed"))
    cfg = result.config
    for row in result.rows:
        writer.writerow((cfg.system, cfg.mode, row.G, repr(row.k_over_N),
                         row.metric, repr(row.mean), repr(row.std), row.n,
                         cfg.seed))
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text
