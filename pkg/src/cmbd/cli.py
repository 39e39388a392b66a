"""Command-line front end: generate ensembles, acquire measurements, recover,
certify grids, and run experiment configs.

Exit codes: 0 success, 2 precondition violation, 3 solver non-convergence,
4 certification failure.  Every run echoes its resolved configuration; all
numeric file I/O uses 17-significant-digit decimal.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import (
    AmbiguityError,
    BudgetExceededError,
    ConditioningError,
    DomainError,
    PreconditionError,
)
from .experiments import load_config, run_phase_transition
from .recovery import (
    bdc,
    build_cross_relation,
    exhaustive_search,
    nb_omp,
    nonsparse_eigen,
    pairwise_source_recovery,
    result_to_json,
    tpi,
)
from .sampling import (
    FMT,
    FrequencyGrid,
    SosKernel,
    VandermondeOperator,
    ZGrid,
    acquire_via_kernel,
    certify_full_spark,
    consecutive_universal_grid,
    measure_fourier,
    read_measurements,
    write_measurements,
    z_grid,
)
from .signals import (
    ChannelEnsemble,
    ComplexSequence,
    ExplicitSamples,
    FourierGaussianMixture,
    LinearComplexitySource,
    SparseFilterSpec,
    align_up_to_shift_scale,
    coprimeness_check,
    random_dense_filter,
    random_sparse_filter,
    realize_source,
)

EXIT_OK = 0
EXIT_PRECONDITION = 2
EXIT_NO_CONVERGENCE = 3
EXIT_CERTIFICATION = 4


def _echo(config: dict) -> None:
    print("resolved config: " + json.dumps(config, sort_keys=True, default=str))


# ---------------------------------------------------------------------------
# Ensemble JSON round-trip
# ---------------------------------------------------------------------------


def _complex_list(values) -> list:
    return [[float(v.real), float(v.imag)] for v in np.asarray(values, dtype=complex)]


def ensemble_to_dict(ens: ChannelEnsemble) -> dict:
    src = ens.source
    if isinstance(src, ExplicitSamples):
        source = {"model": "explicit", "length": src.length, "values": _complex_list(src.values)}
    elif isinstance(src, LinearComplexitySource):
        source = {
            "model": "linear_complexity",
            "length": src.length,
            "coefficients": _complex_list(src.coefficients),
            "roots": _complex_list(src.roots),
        }
    elif isinstance(src, FourierGaussianMixture):
        source = {
            "model": "gaussian_mixture",
            "grid_length": src.grid_length,
            "components": [list(c) for c in src.components],
        }
    else:
        raise PreconditionError("unknown source model")
    return {
        "source": source,
        "period": ens.period,
        "filters": [
            {
                "sparsity": f.sparsity,
                "m_x": f.m_x,
                "support": list(f.support),
                "amplitudes": _complex_list(f.amplitudes),
            }
            for f in ens.filters
        ],
    }


def ensemble_from_dict(doc: dict) -> ChannelEnsemble:
    src = doc["source"]
    if src["model"] == "explicit":
        source = ExplicitSamples(np.asarray([complex(a, b) for a, b in src["values"]]), src["length"])
    elif src["model"] == "linear_complexity":
        source = LinearComplexitySource(
            np.asarray([complex(a, b) for a, b in src["coefficients"]]),
            np.asarray([complex(a, b) for a, b in src["roots"]]),
            src["length"],
        )
    elif src["model"] == "gaussian_mixture":
        source = FourierGaussianMixture(
            tuple(tuple(c) for c in src["components"]), src["grid_length"]
        )
    else:
        raise PreconditionError(f"unknown source model '{src['model']}'")
    filters = tuple(
        SparseFilterSpec(
            f["sparsity"],
            f["m_x"],
            tuple(f["support"]),
            np.asarray([complex(a, b) for a, b in f["amplitudes"]]),
        )
        for f in doc["filters"]
    )
    return ChannelEnsemble(source, filters, doc.get("period"))


def write_ensemble(ens: ChannelEnsemble, path) -> None:
    Path(path).write_text(json.dumps(ensemble_to_dict(ens), indent=2, sort_keys=True) + "\n")


def read_ensemble(path) -> ChannelEnsemble:
    return ensemble_from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.source == "gaussians":
        if args.M is None:
            raise PreconditionError("--source gaussians requires --M (circular period)")
        source = FourierGaussianMixture(
            ((4.0, args.M / 2.0, 0.001), (1.0, 2.0 * args.M / 3.0, 0.01)), args.M
        )
        period = args.M
    elif args.source == "linear-complexity":
        if args.Ms is None:
            raise PreconditionError("--source linear-complexity requires --Ms")
        lc = args.Lc or 1
        coeffs = (rng.standard_normal(lc) + 1j * rng.standard_normal(lc)) / math.sqrt(2)
        roots = np.exp(2j * math.pi * rng.uniform(size=lc))
        source = LinearComplexitySource(coeffs, roots, args.Ms)
        period = args.M if args.circular else None
    elif args.source == "random":
        if args.Ms is None:
            raise PreconditionError("--source random requires --Ms")
        samples = (rng.standard_normal(args.Ms) + 1j * rng.standard_normal(args.Ms)) / math.sqrt(2)
        source = ExplicitSamples(samples, args.Ms)
        period = args.M if args.circular else None
    else:
        raise PreconditionError(f"unknown source '{args.source}'")

    filters = []
    for _ in range(args.N):
        if args.L >= args.Mx and args.dense:
            filters.append(random_dense_filter(args.Mx, rng))
        else:
            filters.append(random_sparse_filter(args.L, args.Mx, rng, args.complex_amplitudes))
    if args.coprime:
        tries = 0
        while not coprimeness_check(
            filters[0].to_sequence(), filters[1].to_sequence()
        ).coprime:
            filters[0] = random_sparse_filter(args.L, args.Mx, rng, args.complex_amplitudes)
            filters[1] = random_sparse_filter(args.L, args.Mx, rng, args.complex_amplitudes)
            tries += 1
            if tries > 256:
                raise PreconditionError("coprime resampling budget exceeded")
    ens = ChannelEnsemble(source, tuple(filters), period)
    write_ensemble(ens, args.out)
    _echo({**{k: v for k, v in vars(args).items() if k != "func"}, "command": "gen"})
    print(f"wrote ensemble with {ens.n_channels} channels to {args.out}")
    return EXIT_OK


def _grid_from_args(args, ens: ChannelEnsemble):
    n = ens.n_channels
    if args.z0 is not None:
        pks = tuple(int(p) for p in args.pk.split(","))
        grid = ZGrid(complex(*args.z0), (pks,) * n, args.bar_m or max(pks) + 1)
        op = z_grid(grid.z0, pks, min(len(pks), grid.bar_m))
        cert = certify_full_spark(op, budget=args.budget)
        if cert.full_spark:
            grid = ZGrid(grid.z0, grid.per_channel_sets, grid.bar_m, certified=True)
        return grid, cert
    if ens.period is not None:
        bar_m = ens.period
    else:
        bar_m = args.bar_m or max(
            2 * ens.max_filter_len - 1, ens.source_length, args.start + args.K - 1
        )
    grid = consecutive_universal_grid(args.K, bar_m, channels=n, start=args.start)
    return grid, None


def cmd_measure(args) -> int:
    ens = read_ensemble(args.ensemble)
    grid, cert = _grid_from_args(args, ens)
    if not grid.certified and not args.allow_uncertified:
        status = cert.status if cert is not None else "uncertified"
        print(f"grid not certified universal ({status}); pass --allow-uncertified to proceed")
        return EXIT_CERTIFICATION

    if args.via_kernel:
        if ens.period is not None:
            raise PreconditionError("--via-kernel applies to linear-convolution ensembles")
        if not isinstance(grid, FrequencyGrid):
            raise PreconditionError("--via-kernel requires a Fourier grid")
        outputs = ens.outputs()
        m_sig = max(y.stop for y in outputs)
        ks = grid.per_channel_sets[0]
        m_h = args.Mh or (m_sig + len(ks) - 1)
        kernel = SosKernel(ks, grid.omega0, m_h)
        per_channel = tuple(
            acquire_via_kernel(y, kernel, signal_length=m_sig) for y in outputs
        )
        from .sampling import MeasurementSet

        mset = MeasurementSet(grid, per_channel)
    else:
        mset = measure_fourier(ens, grid, a4_tol=args.a4_tol)
        if not mset.a4_ok:
            print(f"warning: source magnitude at or below {args.a4_tol} at "
                  f"{len(mset.a4_violations)} sample(s)")
    write_measurements(mset, args.out)
    _echo({**{k: v for k, v in vars(args).items() if k != "func"}, "command": "measure"})
    print(f"wrote {sum(len(v) for v in mset.per_channel)} measurements to {args.out}")
    return EXIT_OK


def cmd_recover(args) -> int:
    mset = read_measurements(args.measurements)
    rng = np.random.default_rng(args.seed)
    if args.solver == "nb-omp":
        if args.truth is None:
            raise PreconditionError("nb-omp needs --truth to supply the known source")
        ens = read_ensemble(args.truth)
        realization = realize_source(ens.source)
        ks = mset.grid.per_channel_sets[0]
        if realization.spectrum is not None and ens.period is not None:
            s_vals = realization.spectrum[np.asarray(ks) % ens.period]
        else:
            from .signals import dtft_at

            s_vals = dtft_at(realization.time, mset.grid.omega0, ks)
        result = nb_omp(mset, s_vals, args.L, args.Mx)
    elif args.solver == "bdc":
        result = bdc(mset, args.L, args.Mx, max_iter=args.max_iter, tol=args.tol)
    elif args.solver == "tpi":
        sys_ = build_cross_relation(mset, args.Mx)
        result = tpi(sys_, args.L, max_iter=args.max_iter, tol=args.tol)
    elif args.solver == "exhaustive":
        sys_ = build_cross_relation(mset, args.Mx)
        search = exhaustive_search(sys_, args.L, budget=args.budget)
        from .recovery import RecoveryResult

        if not search.solutions:
            result = RecoveryResult(filters=[], converged=False,
                                    diagnostics={"reason": "no_solutions"})
        else:
            gamma = search.solutions[0].gamma
            result = RecoveryResult(
                filters=[ComplexSequence(gamma[: args.Mx]), ComplexSequence(gamma[args.Mx :])],
                converged=search.unique_up_to_ambiguity,
                diagnostics={
                    "unique_up_to_ambiguity": search.unique_up_to_ambiguity,
                    "solutions": len(search.solutions),
                },
            )
    elif args.solver == "eigen":
        sys_ = build_cross_relation(mset, args.Mx)
        result = nonsparse_eigen(sys_)
        if not result.diagnostics.get("unique", True):
            result.converged = False
            result.diagnostics["reason"] = "non_unique_eigengap"
    elif args.solver == "pairwise":
        if args.Ms is None:
            raise PreconditionError("pairwise recovery requires --Ms")
        result = pairwise_source_recovery(
            mset, args.L, args.Mx, args.Ms, solver=args.pair_solver, rng=rng
        )
    else:
        raise PreconditionError(f"unknown solver '{args.solver}'")

    if args.out:
        Path(args.out).write_text(result_to_json(result) + "\n")
    _echo({**{k: v for k, v in vars(args).items() if k != "func"}, "command": "recover"})

    if args.truth is not None and result.filters:
        ens = read_ensemble(args.truth)
        truth = [f.to_sequence() for f in ens.filters[: len(result.filters)]]
        al = align_up_to_shift_scale(
            truth, result.filters, (-(args.Mx - 1), args.Mx - 1)
        )
        print(f"aligned error: {al.error_db:.2f} dB (shift {al.shift}, "
              f"scale {al.alpha.real:.6g}{al.alpha.imag:+.6g}j)")
    print(f"converged: {result.converged} after {result.iterations} iteration(s)")
    return EXIT_OK if result.converged else EXIT_NO_CONVERGENCE


def cmd_experiment(args) -> int:
    cfg = load_config(args.config)
    _echo({"command": "experiment", "config": asdict(cfg)})
    grid, outcomes = run_phase_transition(cfg, out_dir=args.out_dir)
    for ci, rate in enumerate(grid.success_rates):
        cell = dict(grid.cells[ci])
        print(f"cell {ci} {cell}: success rate {rate:.3f} over {grid.trial_counts[ci]} trials")
    print(f"wrote trials.csv, grid.csv, meta.json to {args.out_dir}")
    return EXIT_OK


def cmd_certify(args) -> int:
    if args.z0 is not None:
        pks = tuple(int(p) for p in args.pk.split(","))
        op = z_grid(complex(*args.z0), pks, args.columns or len(pks))
        label = f"z-grid z0={complex(*args.z0)} pks={pks}"
    else:
        if args.ks:
            ks = tuple(int(k) for k in args.ks.split(","))
        else:
            ks = tuple(range(args.start, args.start + args.K))
        bar_m = args.bar_m or max(ks) + 1
        omega0 = args.omega0 or 2.0 * math.pi / bar_m
        generators = np.exp(-1j * omega0 * np.asarray(ks))
        op = VandermondeOperator(generators, args.columns or bar_m)
        label = f"Fourier grid omega0={omega0:.6g} ks={ks}"
    cert = certify_full_spark(op, budget=args.budget)
    _echo({**{k: v for k, v in vars(args).items() if k != "func"}, "command": "certify"})
    print(f"{label}: status={cert.status}, submatrices checked={cert.submatrices_checked}")
    if cert.status == "full_spark":
        return EXIT_OK
    if cert.witness is not None:
        print(f"witness columns: {cert.witness}")
    return EXIT_CERTIFICATION


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _complex_pair(text: str):
    parts = [float(p) for p in text.split(",")]
    if len(parts) == 1:
        return (parts[0], 0.0)
    if len(parts) == 2:
        return (parts[0], parts[1])
    raise argparse.ArgumentTypeError("expected re[,im]")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cmbd",
                                description="compressive multichannel blind deconvolution")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a channel ensemble")
    g.add_argument("--L", type=int, required=True, help="filter sparsity")
    g.add_argument("--Mx", type=int, required=True, help="filter support bound")
    g.add_argument("--N", type=int, default=2, help="channel count")
    g.add_argument("--source", choices=("gaussians", "linear-complexity", "random"),
                   default="gaussians")
    g.add_argument("--M", type=int, default=None, help="circular period / spectral grid length")
    g.add_argument("--Ms", type=int, default=None, help="source length (time-domain models)")
    g.add_argument("--Lc", type=int, default=None, help="linear complexity")
    g.add_argument("--circular", action="store_true", help="circular convolution mode")
    g.add_argument("--dense", action="store_true", help="full-support filters when L >= Mx")
    g.add_argument("--complex-amplitudes", action="store_true")
    g.add_argument("--coprime", action="store_true", help="resample until channels 1,2 coprime")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    m = sub.add_parser("measure", help="acquire spectral measurements of an ensemble")
    m.add_argument("--ensemble", required=True)
    m.add_argument("--K", type=int, default=8, help="measurements per channel")
    m.add_argument("--start", type=int, default=1, help="first index of the consecutive set")
    m.add_argument("--bar-m", dest="bar_m", type=int, default=None, help="alias bound override")
    m.add_argument("--via-kernel", action="store_true",
                   help="route through the sum-of-sincs time-domain kernel")
    m.add_argument("--Mh", type=int, default=None, help="kernel length override")
    m.add_argument("--z0", type=_complex_pair, default=None, help="z-grid base point re[,im]")
    m.add_argument("--pk", default=None, help="comma-separated z-grid exponents")
    m.add_argument("--allow-uncertified", action="store_true")
    m.add_argument("--a4-tol", dest="a4_tol", type=float, default=1e-9)
    m.add_argument("--budget", type=int, default=2_000_000)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_measure)

    r = sub.add_parser("recover", help="run a recovery solver on measurements")
    r.add_argument("--measurements", required=True)
    r.add_argument("--solver", required=True,
                   choices=("nb-omp", "bdc", "tpi", "exhaustive", "eigen", "pairwise"))
    r.add_argument("--L", type=int, required=True)
    r.add_argument("--Mx", type=int, required=True)
    r.add_argument("--Ms", type=int, default=None)
    r.add_argument("--pair-solver", default="tpi", choices=("tpi", "bdc", "exhaustive"))
    r.add_argument("--truth", default=None, help="ensemble JSON for aligned-error report")
    r.add_argument("--max-iter", dest="max_iter", type=int, default=1000)
    r.add_argument("--tol", type=float, default=1e-3)
    r.add_argument("--budget", type=int, default=2_000_000)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_recover)

    e = sub.add_parser("experiment", help="run an experiment config")
    e.add_argument("--config", required=True)
    e.add_argument("--out-dir", dest="out_dir", required=True)
    e.set_defaults(func=cmd_experiment)

    c = sub.add_parser("certify", help="certify a sampling operator as full spark")
    c.add_argument("--K", type=int, default=4)
    c.add_argument("--start", type=int, default=1)
    c.add_argument("--ks", default=None, help="explicit comma-separated index set")
    c.add_argument("--bar-m", dest="bar_m", type=int, default=None)
    c.add_argument("--omega0", type=float, default=None)
    c.add_argument("--columns", type=int, default=None)
    c.add_argument("--z0", type=_complex_pair, default=None)
    c.add_argument("--pk", default=None)
    c.add_argument("--budget", type=int, default=2_000_000)
    c.set_defaults(func=cmd_certify)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (PreconditionError, DomainError, BudgetExceededError) as exc:
        print(f"precondition violation: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except (ConditioningError, AmbiguityError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
