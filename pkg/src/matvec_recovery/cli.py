"""Command-line harness: single recoveries, experiment tables and witnesses."""

from __future__ import annotations

import argparse
import csv
import io
import sys
import time

import numpy as np
from scipy.sparse.linalg import LinearOperator

from . import basic_recovery as br
from . import hodlr, hss, lowrank
from .errors import RecoveryError
from .oracle import NoiseSpec, form_oracle, with_noise
from .structured import apply_form, apply_form_transpose, form_dim, load_form, random_form, rng_for

CSV_FIELDS = [
    "structure", "N", "k", "p", "seed", "mode", "noise_eps",
    "queries_A", "queries_AT", "rel_err_spectral", "lsq_residual", "wall_ms",
]

STRUCTURES = {
    # name: (generator kind, default mode, allowed modes)
    "diagonal": ("diagonal", "", ("",)),
    "block_diagonal": ("block_diagonal", "", ("",)),
    "tridiagonal": ("tridiagonal", "recursive", ("recursive", "comb")),
    "symmetric_tridiagonal": ("tridiagonal", "", ("",)),
    "circulant": ("circulant", "randomized", ("randomized", "deterministic")),
    "toeplitz": ("toeplitz", "randomized", ("randomized", "deterministic")),
    "hankel": ("hankel", "", ("",)),
    "toeplitz_like": ("displacement", "", ("",)),
    "lowrank": ("lowrank", "rsvd", ("rsvd", "nystrom")),
    "hss": ("hss", "cap", ("cap", "ceiling")),
    "hodlr": ("hodlr", "general", ("general", "generic")),
}

SYMMETRIC_ONLY = {"symmetric_tridiagonal"}


def _operator(form):
    N = form_dim(form)
    return LinearOperator(
        (N, N),
        matvec=lambda x: apply_form(form, x),
        rmatvec=lambda x: apply_form_transpose(form, x),
        dtype=float,
    )


def _difference(a, b):
    N = form_dim(a)
    return LinearOperator(
        (N, N),
        matvec=lambda x: apply_form(a, x) - apply_form(b, x),
        rmatvec=lambda x: apply_form_transpose(a, x) - apply_form_transpose(b, x),
        dtype=float,
    )


def spectral_errors(truth, recovered, seed=0, iters=20):
    """``(relative, absolute)`` spectral errors by the power method."""
    from .numerics import spectral_norm_estimate

    N = form_dim(truth)
    d = spectral_norm_estimate(_difference(truth, recovered), N, iters, seed)
    a = spectral_norm_estimate(_operator(truth), N, iters, seed)
    rel = 0.0 if d == 0.0 else (d / a if a > 0 else float("inf"))
    return rel, d


def _recover(structure, oracle, k, p, seed, mode, symmetric):
    """Dispatch to a recovery routine; returns ``(form, lsq_residual)``."""
    if structure == "diagonal":
        return br.recover_diagonal(oracle), None
    if structure == "block_diagonal":
        return br.recover_block_diagonal(oracle, k), None
    if structure == "tridiagonal":
        return br.recover_tridiagonal(oracle, mode), None
    if structure == "symmetric_tridiagonal":
        return br.recover_symmetric_tridiagonal(oracle), None
    if structure == "circulant":
        return br.recover_circulant(oracle, mode, seed), None
    if structure == "toeplitz":
        return br.recover_toeplitz(oracle, mode, seed), None
    if structure == "hankel":
        return br.recover_hankel(oracle, seed), None
    if structure == "toeplitz_like":
        return br.recover_toeplitz_like(oracle, p, seed), None
    if structure == "lowrank":
        cfg = lowrank.SketchConfig(k, p, seed)
        if mode == "nystrom":
            return lowrank.nystrom_recover_symmetric(oracle, cfg), None
        return lowrank.rsvd_recover(oracle, cfg), None
    if structure == "hss":
        cfg = hss.HssConfig(k, p=p, seed=seed, query_rule=mode)
        form, info = hss.recover_hss(oracle, cfg, symmetric=symmetric, return_info=True)
        return form, info["residual"]
    if structure == "hodlr":
        if mode == "generic":
            return hodlr.recover_hodlr_generic_rank1(oracle, p, seed), None
        form = hodlr.recover_hodlr_general(oracle, k, p, seed, symmetric=symmetric)
        return form, form.meta.get("pass3_residual")
    raise RecoveryError(f"unknown structure {structure!r}")


def _embedded(form, truth_dim):
    """Dense original block of a padded HODLR recovery."""
    if getattr(form, "kind", "") == "hodlr" and form.N != truth_dim:
        from .structured import DenseForm

        return DenseForm(hodlr.unpad(form))
    return form


def run_recovery(structure, N, k=1, p=5, seed=0, mode=None, noise_eps=0.0, symmetric=False,
                 decay=None, form=None, iters=20):
    """Generate (or take) an instance, recover it and measure the result.

    Returns a dict keyed by :data:`CSV_FIELDS` plus ``abs_err_spectral``.
    """
    if structure not in STRUCTURES:
        raise RecoveryError(f"unknown structure {structure!r}; choose from {sorted(STRUCTURES)}")
    kind, default_mode, modes = STRUCTURES[structure]
    mode = default_mode if mode is None else mode
    if mode not in modes:
        raise RecoveryError(f"mode {mode!r} not valid for {structure}; choose from {modes}")
    if structure in SYMMETRIC_ONLY or (structure == "lowrank" and mode == "nystrom") or mode == "generic":
        symmetric = True
    if form is None:
        form = random_form(kind, N, k, seed, symmetric=symmetric, decay=decay)
    N = form_dim(form)
    oracle = form_oracle(form)
    if noise_eps:
        oracle = with_noise(oracle, NoiseSpec(noise_eps, seed))
    t0 = time.perf_counter()
    rec, resid = _recover(structure, oracle, k, p, seed, mode, symmetric)
    wall = (time.perf_counter() - t0) * 1e3
    rec = _embedded(rec, N)
    rel, ab = spectral_errors(form, rec, seed=seed, iters=iters)
    m, n = oracle.ledger.as_tuple()
    return {
        "structure": structure, "N": N, "k": k, "p": p, "seed": seed, "mode": mode,
        "noise_eps": noise_eps, "queries_A": m, "queries_AT": n,
        "rel_err_spectral": rel, "lsq_residual": "" if resid is None else resid,
        "wall_ms": round(wall, 3), "abs_err_spectral": ab, "form": rec, "truth": form,
    }


def _write_rows(rows, fields, out):
    buf = io.StringIO() if out is None else None
    fh = buf if out is None else open(out, "w", newline="", encoding="utf-8")
    try:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)
    finally:
        if out is not None:
            fh.close()
    if buf is not None:
        sys.stdout.write(buf.getvalue())


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_recover(args):
    form = load_form(args.load) if args.load else None
    row = run_recovery(args.structure, args.n, args.rank, args.oversample, args.seed, args.mode,
                       args.noise, args.symmetric, args.decay, form=form)
    _write_rows([row], CSV_FIELDS, args.out)
    return 0


def _grid(lo, hi):
    out, N = [], lo
    while N <= hi:
        out.append(N)
        N *= 2
    return out


def _mean_rows(cells, fields_mean):
    """Average each cell's seed rows; cells are ``(key, rows)`` in sorted order."""
    out = []
    for _, rows in cells:
        row = dict(rows[0])
        for f in fields_mean:
            vals = [float(r[f]) for r in rows if r[f] != ""]
            mean = float(np.mean(vals)) if vals else ""
            # query counts that do not vary over seeds stay integers
            row[f] = int(mean) if vals and f.startswith("queries") and mean.is_integer() else mean
        row["seed"] = ";".join(str(r["seed"]) for r in rows)
        out.append(row)
    return out


def _sweep(specs, seeds):
    cells = []
    for key, kwargs in specs:
        rows = [run_recovery(seed=s, **kwargs) for s in seeds]
        cells.append((key, rows))
    return cells


def cmd_table(args):
    seeds = [int(s) for s in args.seeds.split(",")]
    exp = args.experiment
    cap = args.max_n
    p = args.oversample
    fields = list(CSV_FIELDS)
    specs = []
    if exp == "queries":
        ks = [int(x) for x in args.ranks.split(",")]
        for k in ks:
            for N in _grid(32, cap):
                specs.append(((k, N, 0), dict(structure="hss", N=N, k=k, p=p, symmetric=True)))
                specs.append(((k, N, 1), dict(structure="hss", N=N, k=k, p=p, symmetric=False)))
                specs.append(((k, N, 2), dict(structure="hodlr", N=N, k=k, p=p, symmetric=True)))
        fields = ["structure", "N", "k", "p", "mode", "symmetric", "queries_A", "queries_AT"]
    elif exp == "hss_error":
        for k in [int(x) for x in args.ranks.split(",")]:
            for N in _grid(32, cap):
                specs.append(((k, N), dict(structure="hss", N=N, k=k, p=p, symmetric=True)))
    elif exp == "hodlr_error":
        for N in _grid(64, cap):
            specs.append(((N,), dict(structure="hodlr", N=N, k=1, p=p, mode="generic")))
    elif exp == "noise":
        for N in _grid(32, min(cap, 1024)):
            for st in ("hss", "hodlr"):
                specs.append(((st, N), dict(structure=st, N=N, k=1, p=p, symmetric=True, noise_eps=args.eps)))
        fields = fields + ["abs_err_spectral", "eps_sqrt_n"]
    elif exp == "numrank":
        for N in [n for n in (2048, 4096) if n <= cap] or [cap]:
            for st in ("hss", "hodlr"):
                specs.append(((st, N), dict(structure=st, N=N, k=args.rank, p=p, symmetric=True,
                                            decay=args.decay)))
    elif exp == "scaling":
        rows = scaling_rows(_grid(1024, max(cap, 1024)) if args.scaling_max is None
                            else _grid(1024, args.scaling_max), seeds[0])
        _write_rows(rows, ["N", "unknowns", "equations", "solve_ms", "rel_residual"], args.out)
        slope = scaling_slope(rows)
        print(f"# log-log slope {slope:.3f}", file=sys.stderr)
        return 0
    cells = _sweep(specs, seeds)
    rows = _mean_rows(cells, ["queries_A", "queries_AT", "rel_err_spectral", "abs_err_spectral", "wall_ms"])
    for r in rows:
        r["symmetric"] = bool(r["truth"].symmetric) if hasattr(r["truth"], "symmetric") else ""
        if r["noise_eps"]:
            r["eps_sqrt_n"] = r["noise_eps"] * np.sqrt(r["N"])
    _write_rows(rows, fields, args.out)
    return 0


def scaling_rows(Ns, seed=0):
    """Wall time of the sparse solve for symmetric rank-1 HSS systems."""
    rows = []
    for N in Ns:
        form = random_form("hss", N, 1, seed, symmetric=True)
        oracle = form_oracle(form)
        cfg = hss.HssConfig(1, seed=seed)
        U, V = hss.recover_top_factors(oracle, cfg, symmetric=True)
        layout = hss.full_hss_layout(N, form.leaves.shape[1], U, V, symmetric=True)
        s = hss.system_query_count(N, 1, True, cfg.query_rule)
        X = rng_for(seed, 301).standard_normal((N, s))
        Y = apply_form(form, X)
        h = N // 2
        Y[h:] -= U @ (V.T @ X[:h])
        Y[:h] -= V @ (U.T @ X[h:])
        system = hss.assemble_hss_system(layout, X, Y)
        t0 = time.perf_counter()
        _, res = hss.solve_hss_system(system)
        rows.append({"N": N, "unknowns": system.shape[1], "equations": system.shape[0],
                     "solve_ms": (time.perf_counter() - t0) * 1e3,
                     "rel_residual": res / np.linalg.norm(system.rhs)})
    return rows


def scaling_slope(rows):
    x = np.log([r["N"] for r in rows])
    y = np.log([r["solve_ms"] for r in rows])
    return float(np.polyfit(x, y, 1)[0]) if len(rows) > 1 else float("nan")


def witness_instance(lemma, N, seed, k=None, k1=None, k2=None, probes="random", identity=False):
    """Build a witness and its four certificates.

    Returns ``(A, B, certificates)`` where certificates maps a name to
    ``(passed, detail)``.
    """
    rng = rng_for(seed, 701)
    if lemma == "lowrank":
        k = 2 if k is None else k
        k1 = k - 1 if k1 is None else k1
        k2 = k1 if k2 is None else k2
        if not (min(k1, k2) < k and max(k1, k2) < N):
            raise RecoveryError(f"lowrank witness needs min(k1, k2) < k and max(k1, k2) < N "
                                f"(got k={k}, k1={k1}, k2={k2}, N={N})")
        A = rng.standard_normal((N, k)) @ rng.standard_normal((k, N))
        X = np.linalg.qr(rng.standard_normal((N, k1)))[0][:, :k1]
        W = np.linalg.qr(rng.standard_normal((N, k2)))[0][:, :k2]
        B = lowrank.witness_lowrank(X, W, A, k)
    else:
        k1 = N - 1 if k1 is None else k1
        if k1 > N - 1:
            raise RecoveryError(f"at most N-1={N - 1} probe vectors")
        if lemma == "symmetric":
            A = np.eye(N) if identity else (lambda M: M + M.T)(rng.standard_normal((N, N)))
        elif lemma == "orthogonal":
            A = np.eye(N) if identity else np.linalg.qr(rng.standard_normal((N, N)))[0]
        else:
            raise RecoveryError(f"unknown lemma {lemma!r}")
        X = np.eye(N)[:, :k1] if probes == "canonical" else rng.standard_normal((N, k1))
        W = np.zeros((N, 0))
        B = lowrank.witness_symmetric(A, X) if lemma == "symmetric" else lowrank.witness_orthogonal(A, X)
    scale = max(np.linalg.norm(A), 1.0)
    fwd = np.linalg.norm(B @ X - A @ X) if X.size else 0.0
    adj = np.linalg.norm(B.T @ W - A.T @ W) if W.size else 0.0
    certs = {"product match": (fwd <= 1e-11 * scale and adj <= 1e-11 * scale,
                               f"|BX-AX|={fwd:.2e} |B^TW-A^TW|={adj:.2e}")}
    s = np.linalg.svd(B, compute_uv=False)
    if lemma == "lowrank":
        ok = k >= N or s[k] <= 1e-11 * s[0]
        certs["rank bound"] = (ok, f"sigma_{k + 1}/sigma_1={s[k] / s[0] if k < N else 0.0:.2e}")
    else:
        certs["rank bound"] = (True, "no rank constraint")
    dist = np.linalg.norm(B - A)
    certs["distinct"] = (dist >= 1e-6 * scale, f"|B-A|_F={dist:.3e}")
    if lemma == "symmetric":
        e = np.linalg.norm(B - B.T)
        certs["structure"] = (e <= 1e-12 * scale, f"|B-B^T|={e:.2e}")
    elif lemma == "orthogonal":
        e = np.linalg.norm(B.T @ B - np.eye(N))
        certs["structure"] = (e <= 1e-11, f"|B^TB-I|={e:.2e}")
    else:
        certs["structure"] = (True, "low rank (see rank bound)")
    return A, B, certs


def cmd_witness(args):
    A, B, certs = witness_instance(args.lemma, args.n, args.seed, args.rank, args.k1, args.k2,
                                   args.probes, args.identity)
    if args.n <= 8:
        with np.printoptions(precision=4, suppress=True):
            print("B =")
            print(B)
    ok = True
    for name, (passed, detail) in certs.items():
        print(f"{name:14s} {'PASS' if passed else 'FAIL'}  {detail}")
        ok &= bool(passed)
    return 0 if ok else 1


def build_parser():
    ap = argparse.ArgumentParser(prog="matvec-recovery", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("recover", help="recover one random (or loaded) instance")
    r.add_argument("--structure", required=True, choices=sorted(STRUCTURES))
    r.add_argument("--n", type=int, default=64)
    r.add_argument("--rank", type=int, default=1)
    r.add_argument("--oversample", type=int, default=5)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--mode", default=None)
    r.add_argument("--symmetric", action="store_true")
    r.add_argument("--noise", type=float, default=0.0, help="per-entry noise scale epsilon")
    r.add_argument("--decay", type=float, default=None)
    r.add_argument("--load", default=None, help="serialized form (.npz)")
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_recover)

    t = sub.add_parser("table", help="run an experiment sweep")
    t.add_argument("experiment", choices=["queries", "hss_error", "hodlr_error", "noise", "numrank", "scaling"])
    t.add_argument("--max-n", type=int, default=4096)
    t.add_argument("--scaling-max", type=int, default=None)
    t.add_argument("--seeds", default="0")
    t.add_argument("--ranks", default="1")
    t.add_argument("--rank", type=int, default=10)
    t.add_argument("--decay", type=float, default=0.05)
    t.add_argument("--eps", type=float, default=1e-5)
    t.add_argument("--oversample", type=int, default=5)
    t.add_argument("--out", default=None)
    t.set_defaults(func=cmd_table)

    w = sub.add_parser("witness", help="non-uniqueness certificate")
    w.add_argument("--lemma", choices=["lowrank", "symmetric", "orthogonal"], required=True)
    w.add_argument("--n", type=int, default=8)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--rank", type=int, default=None)
    w.add_argument("--k1", type=int, default=None)
    w.add_argument("--k2", type=int, default=None)
    w.add_argument("--probes", choices=["random", "canonical"], default="random")
    w.add_argument("--identity", action="store_true", help="use A = I")
    w.set_defaults(func=cmd_witness)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (RecoveryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
