"""Command line front end.

Subcommands map onto the library layers: validate / diagnostics inspect a
model file, curves / pca / density are deterministic analytics, and smile /
atm / simulate run the Monte Carlo engine.  CSV output carries a provenance
header (package version, model hash, seed) and full-precision numbers;
table output rounds the way the reference tables do.

Exit codes: 0 success, 1 invalid or non-stationary model (or a numerical
failure downstream), 2 usage or parse errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys

import numpy as np

from . import __version__, forward, linalg, mc, model, moments, pricing, scalar


class UsageError(Exception):
    """Bad command line input (missing file, malformed grid/vector)."""


# ---------------------------------------------------------------------------
# small parsing / formatting helpers


def _load_params(spec):
    path = spec
    if not os.path.exists(path):
        if os.path.exists(spec + ".json"):
            path = spec + ".json"
        else:
            try:
                return model.load_fixture(spec)
            except (FileNotFoundError, KeyError):
                raise UsageError(f"model '{spec}' is neither a file nor a "
                                 "bundled fixture")
    try:
        return model.load_model(path)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot parse model file {path}: {exc}")


def _model_hash(params):
    payload = {
        "lambda": np.asarray(params.lam, dtype=float).tolist(),
        "b": np.asarray(params.b, dtype=float).tolist(),
        "alpha": float(params.alpha),
        "beta": np.asarray(params.beta, dtype=float).tolist(),
        "gamma": np.asarray(params.gamma_mat, dtype=float).tolist(),
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _provenance(models, seed):
    lines = [f"# qhr {__version__}"]
    for p in models:
        label = p.label or "model"
        lines.append(f"# model {label} hash {_model_hash(p)}")
    lines.append(f"# seed {seed if seed is not None else '-'}")
    return lines


def _parse_vector(text):
    try:
        return np.array([float(tok) for tok in text.split(",")], dtype=float)
    except ValueError:
        raise UsageError(f"cannot parse vector '{text}'")


def _parse_values(text):
    """Comma list, 'a:b:n' (linear) or 'geom:a:b:n'."""
    text = text.strip()
    try:
        if text.startswith("geom:"):
            a, b, n = text[5:].split(":")
            return np.geomspace(float(a), float(b), int(n))
        if ":" in text:
            a, b, n = text.split(":")
            return np.linspace(float(a), float(b), int(n))
        return np.array([float(tok) for tok in text.split(",")])
    except (ValueError, TypeError):
        raise UsageError(f"cannot parse grid '{text}'")


def _parse_keyed_grid(text):
    """'T=0.25,0.5;L=-0.2:0.2:9;eps=0.01' -> dict of arrays/floats."""
    out = {}
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise UsageError(f"grid part '{part}' has no key= prefix")
        key, val = part.split("=", 1)
        key = key.strip()
        if key == "eps":
            try:
                out[key] = float(val)
            except ValueError:
                raise UsageError(f"cannot parse eps '{val}'")
        else:
            out[key] = _parse_values(val)
    return out


def _emit(lines, out):
    text = "\n".join(lines) + "\n"
    if out:
        out_dir = os.path.dirname(out)
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _table(headers, rows):
    widths = [len(h) for h in headers]
    for row in rows:
        for j, cell in enumerate(row):
            widths[j] = max(widths[j], len(cell))
    lines = ["  ".join(h.ljust(widths[j]) for j, h in enumerate(headers))]
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[j])
                               for j, cell in enumerate(row)))
    return lines


def _g(x):
    return f"{float(x):.17g}"


def _fmt_eigs(values):
    """Human-readable eigenvalue list; conjugate pairs printed once."""
    parts = []
    skip = set()
    vals = list(values)
    for i, v in enumerate(vals):
        if i in skip:
            continue
        if abs(v.imag) < 5e-3:
            parts.append(f"{v.real:.2f}")
            continue
        for j in range(i + 1, len(vals)):
            if j not in skip and abs(vals[j] - v.conjugate()) < 1e-9:
                skip.add(j)
                break
        parts.append(f"{v.real:.2f}±{abs(v.imag):.2f}j")
    return ", ".join(parts)


def _resolve_y0(text):
    if text is None:
        return None
    if text.strip() == "stationary":
        return mc.StationaryInit()
    return _parse_vector(text)


# ---------------------------------------------------------------------------
# subcommands


def cmd_validate(args):
    params = _load_params(args.model)
    failures = set(model.validate(params))
    clauses = [
        "alpha must be positive",
        "gamma must be symmetric",
        "lambda eigenvalues must be real",
        "lambda eigenvalues must be positive",
        "bordered matrix not psd",
    ]
    label = params.label or args.model
    print(f"model {label} ({_model_hash(params)})")
    for clause in clauses:
        state = "FAIL" if clause in failures else "PASS"
        print(f"  {state}  {clause}")
    if failures:
        print("result: INVALID")
        return 1
    sys_ = moments.build_moment_system(params)
    kt, suff = moments.check_stability_sufficient(params)
    lam_bar = sys_.ops.lambda_k[1]
    b_bar = np.kron(params.b, params.b)
    kappa = float(np.asarray(params.gamma_mat).reshape(-1, order="F")
                  @ np.linalg.solve(lam_bar, b_bar))
    print(f"  kappa       = {kappa:.4f}")
    print(f"  kappa_tilde = {kt:.4f}  "
          f"({'PASS' if suff else 'FAIL'}: sufficient condition < 2/3)")
    for k in (2, 3, 4):
        print(f"  min Re eig moment block {k}: "
              f"{sys_.block_eig_min[k - 2]:+.4f}")
    state = "PASS" if sys_.stable else "FAIL"
    print(f"  {state}  stationarity (moment blocks 2-4 stable)")
    if not sys_.stable:
        print("result: NOT STATIONARY")
        return 1
    print("result: OK")
    return 0


def cmd_diagnostics(args):
    rows_csv = []
    rows_scalar = []
    rows_multi = []
    eig_rows = []
    models = []
    failed = False
    for spec in args.model:
        params = _load_params(spec)
        models.append(params)
        label = params.label or spec
        try:
            diag = model.diagnostics(params)
        except (moments.NotStationaryError, linalg.UnstableError) as exc:
            print(f"{label}: {exc}", file=sys.stderr)
            failed = True
            continue
        sys_ = moments.build_moment_system(params)
        eig2 = linalg.eigenvalues(sys_.a_blocks[(2, 2)])
        eig_rows.append((label, eig2))
        if params.p == 1:
            rows_scalar.append([
                label,
                f"{diag.mu2:.2f}",
                f"{100.0 * diag.sigma_min:.2f}",
                f"{float(diag.y_min[0]):.2f}",
                f"{100.0 * diag.sigma_infty:.2f}",
                f"{diag.kurt_infty:.2f}",
            ])
        else:
            ymin = "(" + ", ".join(f"{v:.4f}" for v in diag.y_min) + ")"
            rows_multi.append([
                label,
                f"{diag.mu2:.2f}", f"{diag.mu3:.2f}", f"{diag.mu4:.2f}",
                f"{diag.kappa:.2f}", f"{diag.kappa_tilde:.2f}",
                ymin,
                f"{100.0 * diag.sigma_min:.2f}",
                f"{100.0 * diag.sigma_infty:.2f}",
                f"{diag.kurt_infty:.2f}",
            ])
        ymin_full = ";".join(_g(v) for v in diag.y_min)
        eig_full = ";".join(f"{v.real:.17g}{v.imag:+.17g}j" for v in eig2)
        rows_csv.append(",".join([
            label, _g(diag.mu2), _g(diag.mu3), _g(diag.mu4), _g(diag.kappa),
            _g(diag.kappa_tilde), _g(diag.sigma_min), _g(diag.sigma_infty),
            _g(diag.kurt_infty), ymin_full, eig_full,
        ]))
    if args.format == "csv":
        lines = _provenance(models, args.seed)
        lines.append("label,mu2,mu3,mu4,kappa,kappa_tilde,sigma_min,"
                     "sigma_infty,kurt_infty,y_min,eig_block2")
        lines.extend(rows_csv)
        _emit(lines, args.out)
    else:
        lines = []
        if rows_scalar:
            lines.extend(_table(
                ["model", "2*lambda-gamma", "sigma_min %", "y_min",
                 "sqrt(v_infty) %", "Kurt_infty"], rows_scalar))
        if rows_multi:
            if lines:
                lines.append("")
            lines.extend(_table(
                ["model", "mu_2", "mu_3", "mu_4", "kappa", "kappa_tilde",
                 "y_min", "sigma_min %", "sqrt(v_infty) %", "Kurt_infty"],
                rows_multi))
        if eig_rows:
            lines.append("")
            lines.extend(_table(
                ["model", "eig(second-moment block)"],
                [[lab, _fmt_eigs(e)] for lab, e in eig_rows]))
        _emit(lines, args.out)
    return 1 if failed else 0


def cmd_curves(args):
    params = _load_params(args.model)
    sys_ = moments.build_moment_system(params)
    grid = (forward.default_grid() if args.grid is None
            else _parse_values(args.grid))
    y0_list = [_parse_vector(t) for t in (args.y0 or [])]
    for y0 in y0_list:
        if y0.size != params.p:
            raise UsageError(f"y0 has {y0.size} entries, model has "
                             f"{params.p} factors")
    moments.stationary_summary(sys_, params)  # raises when not stationary
    header = ["t"]
    header += [f"vol_y0_{i + 1}" for i in range(len(y0_list))]
    header += ["vol_forward", "vol_min"]
    lines = _provenance([params], args.seed)
    lines.append(",".join(header))
    etas = [moments.EtaState.from_y(y0) for y0 in y0_list]
    for s in grid:
        v0, vmin = forward.forward_min_envelope(sys_, float(s))
        row = [_g(s)]
        for eta in etas:
            v = forward.forward_variance(sys_, eta, float(s))
            row.append(_g(math.sqrt(max(v, 0.0))))
        row.append(_g(math.sqrt(max(v0, 0.0))))
        row.append(_g(math.sqrt(max(vmin, 0.0))))
        lines.append(",".join(row))
    _emit(lines, args.out)
    return 0


def cmd_pca(args):
    params = _load_params(args.model)
    sys_ = moments.build_moment_system(params)
    omega = moments.omega(sys_)
    dec = forward.pca(sys_, omega)
    grid = (forward.default_grid() if args.grid is None
            else _parse_values(args.grid))
    body = forward.pca_curves_csv(dec, np.asarray(grid, dtype=float))
    lines = _provenance([params], args.seed) + body.splitlines()
    _emit(lines, args.out)
    return 0


def cmd_density(args):
    params = _load_params(args.model)
    if params.p != 1:
        raise UsageError("density requires a one-factor model")
    sp = scalar.ScalarParams.from_model_params(params)
    pp = scalar.PearsonIV(sp)
    if args.grid is not None:
        ys = _parse_values(args.grid)
    else:
        ys = np.linspace(pp.ppf(1e-4), pp.ppf(1.0 - 1e-4), 401)
    student = abs(sp.beta) < 1e-14 and not pp.gaussian
    header = "y,pdf,cdf" + (",student_t_pdf" if student else "")
    lines = _provenance([params], args.seed)
    lines.append(header)
    pdf = pp.pdf(ys)
    cdf = pp.cdf(ys)
    if student:
        from scipy import stats
        ref = stats.t.pdf(ys / pp.student_scale,
                          pp.student_df) / pp.student_scale
    for i, y in enumerate(ys):
        row = [_g(y), _g(pdf[i]), _g(cdf[i])]
        if student:
            row.append(_g(ref[i]))
        lines.append(",".join(row))
    _emit(lines, args.out)
    return 0


def _mc_config(args, horizon):
    return mc.McConfig(n_paths=args.paths, horizon=horizon, seed=args.seed,
                       steps_per_year=args.steps_per_year)


def cmd_smile(args):
    params = _load_params(args.model)
    keyed = _parse_keyed_grid(args.grid) if args.grid else {}
    mats = keyed.get("T", np.array([0.25, 0.5, 1.0, 2.0]))
    ells = keyed.get("L", np.linspace(-0.4, 0.4, 17))
    grid = pricing.OptionGrid(maturities=tuple(mats),
                              log_moneyness=tuple(ells))
    cfg = _mc_config(args, float(np.max(mats)))
    surf = pricing.price_options(params, _resolve_y0(args.y0), grid, cfg)
    surf = pricing.with_implied_vols(surf)
    if args.format == "table":
        headers = ["log-moneyness"] + [f"T={t:.4g}" for t in surf.maturities]
        rows = []
        for j in range(surf.ell.shape[1]):
            row = [f"{surf.ell[0, j]:+.3f}"]
            for i in range(surf.maturities.size):
                v = surf.ivol[i, j]
                row.append("-" if np.isnan(v) else f"{100.0 * v:.2f}")
            rows.append(row)
        _emit(_table(headers, rows), args.out)
        return 0
    lines = _provenance([params], args.seed)
    for i, t in enumerate(surf.maturities):
        lines.append(f"# forward T={_g(t)} mean={_g(surf.forward_mean[i])} "
                     f"se={_g(surf.forward_se[i])}")
    lines.append("maturity,log_moneyness,call,call_se,put,put_se,ivol")
    for i in range(surf.maturities.size):
        for j in range(surf.ell.shape[1]):
            lines.append(",".join([
                _g(surf.maturities[i]), _g(surf.ell[i, j]),
                _g(surf.call_price[i, j]), _g(surf.call_se[i, j]),
                _g(surf.put_price[i, j]), _g(surf.put_se[i, j]),
                _g(surf.ivol[i, j]),
            ]))
    _emit(lines, args.out)
    return 0


def cmd_atm(args):
    params = _load_params(args.model)
    keyed = _parse_keyed_grid(args.grid) if args.grid else {}
    mats = keyed.get("T", np.array([1.0 / 12.0, 0.25, 0.5, 1.0, 1.5, 2.0]))
    eps = keyed.get("eps", 0.01)
    grid = pricing.OptionGrid(maturities=tuple(mats),
                              log_moneyness=(-eps, 0.0, eps))
    cfg = _mc_config(args, float(np.max(mats)))
    surf = pricing.price_options(params, _resolve_y0(args.y0), grid, cfg)
    atm_vol, atm_skew = pricing.atm_term_structures(surf, eps=eps)
    lines = _provenance([params], args.seed)
    lines.append(f"# eps {_g(eps)}")
    lines.append("maturity,atm_vol,atm_skew")
    for i, t in enumerate(surf.maturities):
        lines.append(f"{_g(t)},{_g(atm_vol[i])},{_g(atm_skew[i])}")
    _emit(lines, args.out)
    return 0


def cmd_simulate(args):
    params = _load_params(args.model)
    probes = _parse_values(args.grid) if args.grid else np.array([1.0])
    horizon = float(np.max(probes))
    cfg = mc.McConfig(n_paths=args.paths, horizon=horizon, seed=args.seed,
                      steps_per_year=args.steps_per_year,
                      y0=_resolve_y0(args.y0))
    batch = mc.simulate(params, cfg, probes=list(probes))
    lines = _provenance([params], args.seed)
    lines.append(f"# paths {batch.n_paths} steps_per_year "
                 f"{args.steps_per_year} floored_steps {batch.floored_steps}")
    ycols = ",".join(f"mean_y{i + 1}" for i in range(params.p))
    lines.append("t,mean_x,se_x,mean_exp_x,se_exp_x,mean_sigma2,"
                 f"se_sigma2,{ycols}")
    for i, t in enumerate(batch.times):
        mx, sx = batch.mean_se(batch.x[i])
        me, se_e = batch.mean_se(np.exp(batch.x[i]))
        ms, ss = batch.mean_se(batch.sigma2(i))
        ymeans = batch.y[i].mean(axis=0)
        row = [_g(t), _g(mx), _g(sx), _g(me), _g(se_e), _g(ms), _g(ss)]
        row += [_g(v) for v in ymeans]
        lines.append(",".join(row))
    _emit(lines, args.out)
    return 0


# ---------------------------------------------------------------------------
# wiring


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="qhr",
        description="Path-dependent volatility model toolkit: validation, "
                    "stationary diagnostics, forward-variance analytics and "
                    "Monte Carlo pricing.")
    parser.add_argument("--version", action="version",
                        version=f"qhr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, multi_model=False, multi_y0=False):
        if multi_model:
            p.add_argument("--model", nargs="+", required=True,
                           help="model file(s) or bundled fixture name(s)")
        else:
            p.add_argument("--model", required=True,
                           help="model file or bundled fixture name")
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--seed", type=int, default=12345)
        p.add_argument("--paths", type=int, default=100_000)
        p.add_argument("--steps-per-year", type=int, default=250)
        if multi_y0:
            p.add_argument("--y0", action="append",
                           help="initial factor vector, comma separated; "
                                "repeatable")
        else:
            p.add_argument("--y0",
                           help="initial factor vector (comma separated) or "
                                "'stationary'")
        p.add_argument("--grid", help="grid spec: comma list, a:b:n, "
                                      "geom:a:b:n, or key=... parts")
        p.add_argument("--format", choices=("csv", "table"), default=None)

    for name, fn, kw in (
            ("validate", cmd_validate, {}),
            ("diagnostics", cmd_diagnostics, {"multi_model": True}),
            ("curves", cmd_curves, {"multi_y0": True}),
            ("pca", cmd_pca, {}),
            ("density", cmd_density, {}),
            ("smile", cmd_smile, {}),
            ("atm", cmd_atm, {}),
            ("simulate", cmd_simulate, {}),
    ):
        p = sub.add_parser(name)
        common(p, **kw)
        p.set_defaults(func=fn)
    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    if args.format is None:
        args.format = "table" if args.command in ("validate",
                                                  "diagnostics") else "csv"
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (model.ConstraintViolationError,
            model.ComplexEigenvaluesError,
            model.RepeatedEigenvalueAcrossBlocksError,
            model.SingularTransformError,
            moments.NotStationaryError,
            moments.SingularAError,
            moments.WindowOrderError,
            forward.NonConvexSliceError,
            pricing.OutOfBoundsError,
            pricing.MissingNodesError,
            linalg.NotPsdError,
            linalg.UnstableError,
            linalg.DimensionCapError,
            mc.ConfigInvalidError,
            ValueError, ArithmeticError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
