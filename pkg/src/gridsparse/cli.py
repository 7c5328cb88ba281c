"""Command line front end.

Exit codes: 0 success, 1 validation problem, 2 a single-shot solve did
not converge, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .errors import GridSparseError
from .grid_model import build_dc_jacobian, load_case, structure_report
from .admm import SolverConfig, InnerSolverConfig
from .attacks import (AttackSpec, build_projection, collective_sparse_attack,
                      distributed_sparse_attack, strategic_lasso_attack,
                      strategic_selective_attack, targeted_lasso_attack,
                      targeted_selective_attack)
from .estimation import (collaborative_state_estimate,
                         distributed_state_estimate, wls_estimate)
from .detection import run_detection
from .experiment import (ExperimentConfig, choose_clusters, lambda_max,
                         partition_indices, run_experiment, emit_csv,
                         RHO_LAMBDA_FACTOR, RHO_COLUMN_FACTOR)

ATTACK_KINDS = ("tla", "tsa", "sla", "ssa", "distributed", "collective")

_DEFAULTS = ExperimentConfig(system="ieee57", mode="tla")


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; 2 means non-convergence here
    def error(self, message):
        self.exit(1, "{}: error: {}\n".format(self.prog, message))


def _build_parser() -> _Parser:
    parser = _Parser(prog="gridsparse",
                     description="Sparse attacks on DC state estimation "
                                 "and estimators that survive them.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_grid = sub.add_parser("grid", parents=[], help="case inspection")
    grid_sub = p_grid.add_subparsers(dest="grid_command", required=True)
    p_info = grid_sub.add_parser("info", help="measurement model summary")
    p_info.add_argument("case", help="bundled name (ieee57), .m or .json path")
    p_info.add_argument("--json", action="store_true", dest="as_json")

    p_att = sub.add_parser("attack", help="construct one attack vector")
    p_att.add_argument("kind", choices=ATTACK_KINDS)
    p_att.add_argument("--case", required=True)
    group = p_att.add_mutually_exclusive_group()
    group.add_argument("--k", type=int, help="attacked meter count")
    group.add_argument("--kn", type=float, help="attacked fraction of N")
    p_att.add_argument("--psi", type=float, default=1.0,
                       help="minimum injection magnitude (strategic kinds)")
    p_att.add_argument("--G", type=int, help="cluster count "
                       "(distributed/collective; default: prime-divisor draw)")
    p_att.add_argument("--seed", type=int, default=0)
    p_att.add_argument("--out", help="write JSON here instead of stdout")

    p_est = sub.add_parser("estimate", help="state estimation on a snapshot")
    p_est.add_argument("method", choices=("wls", "distributed",
                                          "collaborative"))
    p_est.add_argument("--case", required=True)
    p_est.add_argument("--z", required=True, help="JSON measurement vector")
    p_est.add_argument("--G", type=int, help="cluster count "
                       "(default: prime-divisor draw)")
    p_est.add_argument("--seed", type=int, default=0)
    p_est.add_argument("--out", help="write JSON here instead of stdout")

    p_det = sub.add_parser("detect", help="residual test on an estimate")
    p_det.add_argument("--case", required=True)
    p_det.add_argument("--z", required=True, help="JSON measurement vector")
    p_det.add_argument("--xhat", required=True, help="JSON state vector")
    p_det.add_argument("--sigma", type=float, default=0.01,
                       help="noise level for the threshold")
    p_det.add_argument("--out", help="write JSON here instead of stdout")

    p_exp = sub.add_parser("experiment", help="run a configured sweep")
    p_exp.add_argument("--config", required=True, help="TOML or JSON file")
    p_exp.add_argument("--out", required=True, help="CSV output path")
    p_exp.add_argument("--plots", help="also render PNG figures into "
                       "this directory")
    return parser


def _load_model(case: str):
    try:
        return build_dc_jacobian(load_case(case))
    except FileNotFoundError:
        raise GridSparseError(
            "unknown case {!r}: not a bundled name and no such file".format(
                case))


def _load_vector(path, key) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if isinstance(data, dict):
        if key not in data:
            raise GridSparseError("{} has no {!r} entry".format(path, key))
        data = data[key]
    vec = np.asarray(data, dtype=float).ravel()
    if vec.size == 0:
        raise GridSparseError("{} holds an empty vector".format(path))
    return vec


def _emit(text: str, out_path) -> None:
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _cmd_grid_info(args) -> int:
    model = _load_model(args.case)
    rep = structure_report(model)
    if args.as_json:
        print(json.dumps({
            "n_measurements": rep.n_measurements,
            "n_states": rep.n_states,
            "rank": rep.rank,
            "zero_fraction": rep.zero_fraction,
        }, indent=2))
    else:
        print("case {}: N={} measurements, D={} states, rank {}, "
              "{:.2f}% zeros".format(args.case, rep.n_measurements,
                                     rep.n_states, rep.rank,
                                     100.0 * rep.zero_fraction))
    return 0


def _attack_k(args, n: int) -> int:
    if args.k is not None:
        k = args.k
    elif args.kn is not None:
        if not 0.0 < args.kn <= 1.0:
            raise GridSparseError("--kn must lie in (0, 1]")
        k = int(round(args.kn * n))
    else:
        k = max(1, int(round(0.2 * n)))
    if not 0 <= k <= n:
        raise GridSparseError("k must lie in [0, {}]".format(n))
    return k


def _cmd_attack(args) -> int:
    from .attacks import random_sparse_attack

    model = _load_model(args.case)
    h = model.jacobian
    n, d = h.shape
    rng = np.random.default_rng(args.seed)
    k = _attack_k(args, n)

    x = rng.standard_normal(d)
    z = h @ x + rng.normal(0.0, _DEFAULTS.noise_sigma, n)
    ref = random_sparse_attack(n, k, float(z.mean()), float(z.var()), rng)
    base = SolverConfig(lam=0.0, rho=_DEFAULTS.rho,
                        eps_abs=_DEFAULTS.eps_abs, eps_rel=_DEFAULTS.eps_rel,
                        max_iter=_DEFAULTS.max_iter)

    def scaled(lam, rho=None):
        if rho is None:
            rho = RHO_LAMBDA_FACTOR * lam if lam > 0 else base.rho
        return SolverConfig(lam=lam, rho=rho, eps_abs=base.eps_abs,
                            eps_rel=base.eps_rel, max_iter=base.max_iter)

    if args.kind in ("tla", "tsa"):
        c_ref, *_ = np.linalg.lstsq(h, ref.a, rcond=None)
        m = max(1, int(round(_DEFAULTS.targeted_fraction * d)))
        targeted = {int(i): float(c_ref[i])
                    for i in np.argsort(np.abs(c_ref))[-m:]}
        if args.kind == "tla":
            pair = build_projection(h, targeted)
            lam = _DEFAULTS.C * lambda_max(pair.complement, pair.target_image)
            att = targeted_lasso_attack(
                h, AttackSpec(targeted_values=targeted), scaled(lam))
        else:
            att = targeted_selective_attack(
                h, AttackSpec(targeted_values=targeted, k=k), base)
    elif args.kind in ("sla", "ssa"):
        spec = AttackSpec(attacked_meters=tuple(
            int(i) for i in np.flatnonzero(np.abs(ref.a) > 0)),
            k=k, psi=args.psi)
        rho_cols = float((h ** 2).sum()) / d
        if args.kind == "sla":
            att = strategic_lasso_attack(
                h, spec, scaled(0.0, rho=RHO_COLUMN_FACTOR * rho_cols),
                lambda_scale=_DEFAULTS.C)
        else:
            att = strategic_selective_attack(h, spec, scaled(0.0,
                                                             rho=rho_cols))
    else:
        domain = n if args.kind == "distributed" else d
        G = args.G if args.G is not None else choose_clusters(
            domain, "prime_divisor_random", rng)
        lam = _DEFAULTS.C * lambda_max(h, ref.a)
        if args.kind == "distributed":
            part = partition_indices(n, G, axis="rows")
            att = distributed_sparse_attack(h, ref.a, part,
                                            scaled(lam))
        else:
            part = partition_indices(d, G, axis="columns")
            att = collective_sparse_attack(h, ref.a, part,
                                           scaled(lam, rho=base.rho),
                                           InnerSolverConfig())

    _emit(att.to_json(), args.out)
    return 0 if att.converged else 2


def _cmd_estimate(args) -> int:
    model = _load_model(args.case)
    h = model.jacobian
    n, d = h.shape
    z = _load_vector(args.z, "z")
    if args.method == "wls":
        est = wls_estimate(model, z)
    else:
        rng = np.random.default_rng(args.seed)
        lam = _DEFAULTS.C * lambda_max(h, z)
        if args.method == "distributed":
            G = args.G if args.G is not None else choose_clusters(
                n, "prime_divisor_random", rng)
            cfg = SolverConfig(
                lam=lam, rho=RHO_LAMBDA_FACTOR * lam if lam > 0 else 1.0,
                eps_abs=_DEFAULTS.eps_abs, eps_rel=_DEFAULTS.eps_rel,
                max_iter=_DEFAULTS.max_iter)
            est = distributed_state_estimate(
                model, z, partition_indices(n, G, axis="rows"), cfg,
                lambda_scale=None)
        else:
            G = args.G if args.G is not None else choose_clusters(
                d, "prime_divisor_random", rng)
            cfg = SolverConfig(lam=lam, rho=_DEFAULTS.rho,
                               eps_abs=_DEFAULTS.eps_abs,
                               eps_rel=_DEFAULTS.eps_rel,
                               max_iter=_DEFAULTS.max_iter)
            est = collaborative_state_estimate(
                model, z, partition_indices(d, G, axis="columns"), cfg,
                lambda_scale=None)
    _emit(est.to_json(), args.out)
    return 0 if est.converged else 2


def _cmd_detect(args) -> int:
    try:
        model = build_dc_jacobian(load_case(args.case),
                                  noise_sigma=args.sigma if args.sigma > 0
                                  else 0.01)
    except FileNotFoundError:
        raise GridSparseError(
            "unknown case {!r}: not a bundled name and no such file".format(
                args.case))
    z = _load_vector(args.z, "z")
    x_hat = _load_vector(args.xhat, "x_hat")
    result = run_detection(model, z, x_hat, noise_sigma=args.sigma)
    _emit(result.to_json(), args.out)
    return 0


def _cmd_experiment(args) -> int:
    config = ExperimentConfig.from_file(args.config)
    result = run_experiment(config)
    emit_csv(result, args.out)
    if args.plots:
        from .report import render_figures
        render_figures(result, args.plots)
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "grid":
            return _cmd_grid_info(args)
        if args.command == "attack":
            return _cmd_attack(args)
        if args.command == "estimate":
            return _cmd_estimate(args)
        if args.command == "detect":
            return _cmd_detect(args)
        return _cmd_experiment(args)
    except GridSparseError as exc:
        print("error: {}".format(exc), file=sys.stderr)
        return 1
    except ValueError as exc:
        print("error: {}".format(exc), file=sys.stderr)
        return 1
    except OSError as exc:
        print("i/o error: {}".format(exc), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
