"""Command line driver: basis, resonance, normal-form, simulate, report."""
import argparse
import csv
import datetime
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict

import numpy as np

from . import __version__
from .config import ConfigError, load, parse_g, validate

EXIT_FAIL, EXIT_ERROR = 1, 2
PROVENANCE = ["seed", "config_hash"]


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, obj):
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True, default=_jsonable)
        f.write("\n")
    os.replace(tmp, path)


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not serializable: {type(x)}")


def _check(value, ok, threshold=None):
    return {"pass": bool(ok), "value": value, "threshold": threshold}


class Run:
    """Collects outputs and checks; writes the manifest at the end."""

    def __init__(self, command, cfg, out, timestamp):
        self.command, self.cfg, self.out, self.timestamp = command, cfg, out, timestamp
        self.outputs, self.checks, self.results, self.inputs = [], {}, {}, {}
        self.t0 = time.time()
        self.started = datetime.datetime.now(datetime.timezone.utc).isoformat()
        os.makedirs(out, exist_ok=True)

    @property
    def config_hash(self):
        return hashlib.sha256(json.dumps(self.cfg, sort_keys=True).encode()).hexdigest()

    def path(self, name):
        self.outputs.append(name)
        return os.path.join(self.out, name)

    def stamp(self):
        """Append seed and config hash columns to every CSV output."""
        tag = [str(self.cfg.get("seed")), self.config_hash[:16]]
        for name in self.outputs:
            if not name.endswith(".csv"):
                continue
            path = os.path.join(self.out, name)
            with open(path, newline="") as f:
                rows = list(csv.reader(f))
            if rows and rows[0][-len(PROVENANCE):] == PROVENANCE:
                continue
            with open(path + ".tmp", "w", newline="") as f:
                wr = csv.writer(f, lineterminator="\n")
                wr.writerow(rows[0] + PROVENANCE)
                wr.writerows(r + tag for r in rows[1:])
            os.replace(path + ".tmp", path)

    def finish(self):
        self.stamp()
        man = {
            "toolkit": "kgsphere", "version": __version__, "command": self.command,
            "config": self.cfg,
            "config_hash": self.config_hash,
            "inputs": self.inputs,
            "outputs": {n: _sha256(os.path.join(self.out, n)) for n in self.outputs},
            "checks": self.checks, "results": self.results,
        }
        if self.timestamp:
            man["started"] = self.started
            man["wall_clock_s"] = time.time() - self.t0
        _write_json(os.path.join(self.out, "manifest.json"), man)
        return 0 if all(c["pass"] for c in self.checks.values()) else EXIT_FAIL


def cmd_basis(cfg, run, threads=1):
    from .basis import sample_family, estimate_bound_check
    fam = sample_family(cfg["M"], cfg["seed"])
    fam.save(run.path("basis.json"))
    lo, hi = cfg["degree_range"] or [max(1, cfg["M"] // 2), cfg["M"]]
    g = parse_g(cfg["g"])
    rep = estimate_bound_check(fam, cfg["p"], (lo, hi), cfg["n_samples"], cfg["seed"],
                               g_poly=g, anchor_max=cfg["anchor_max"], n_workers=threads)
    rep.to_csv(run.path("bound_report.csv"))
    run.results.update(decay_exponent=rep.decay_exponent, max_statistic=rep.max_statistic,
                       quantiles=rep.quantiles, n_samples=int(rep.integrals.size))
    run.checks["decay_exponent_finite"] = _check(rep.decay_exponent, np.isfinite(rep.decay_exponent))
    run.checks["statistic_finite"] = _check(rep.max_statistic, np.isfinite(rep.max_statistic))
    if cfg["decay_window"]:
        a, b = cfg["decay_window"]
        run.checks["decay_exponent_window"] = _check(rep.decay_exponent, a <= rep.decay_exponent <= b, [a, b])


def cmd_resonance(cfg, run, threads=1):
    from .resonance import nonresonance_scan
    rep = nonresonance_scan(cfg["mu"], cfg["r"], cfg["M"], cfg["N"], cfg["max_enum"],
                            cfg["n_samples"], cfg["seed"])
    rep.to_csv(run.path("scan.csv"))
    run.results.update(min_abs_omega=rep.min_abs_omega, gamma_fit=rep.gamma_fit,
                       alpha_fit=rep.alpha_fit, n_tuples=rep.n_tuples, sampled=rep.sampled)
    run.checks["min_abs_omega_positive"] = _check(rep.min_abs_omega, rep.min_abs_omega > 0)


def cmd_normal_form(cfg, run, threads=1):
    from .basis import sample_family, reference_family
    from .birkhoff import NormalFormConfig, normal_form, verify_commutation, remainder_probe
    from .dynamics import discretized_hamiltonian
    from .poly import HomogeneousPolynomial, h_norm
    nfc = NormalFormConfig(p=cfg["p"], r=cfg["r"], N=cfg["N"], M=cfg["M"], mu=cfg["mu"],
                           tol=cfg["tol"], delta_min=cfg["delta_min"], allow_large=cfg["allow_large"])
    if cfg["zero"]:
        P = HomogeneousPolynomial.zero(cfg["M"], cfg["p"])
    else:
        fam = sample_family(cfg["M"], cfg["seed"]) if cfg["basis"] == "haar" else reference_family(cfg["M"])
        P = discretized_hamiltonian(cfg["M"], cfg["mu"], cfg["p"], fam, parse_g(cfg["g"]))
    res = normal_form(P, nfc)
    with open(run.path("normal_form.json"), "w") as f:
        f.write(res.dumps())
    comm = verify_commutation(res)
    qn = max([h_norm(Q) for Q in res.parts.values()] + [0.0])
    run.results.update(commutation=comm, eps2=res.eps2 if np.isfinite(res.eps2) else None,
                       n_generators=len(res.generators), diagnostics=res.diagnostics)
    run.checks["commutation"] = _check(comm, comm <= 1e-12 * max(qn, 1e-300) or comm == 0, 1e-12)
    if cfg["probe"] and not cfg["zero"]:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg["seed"], spawn_key=(7,)))
        n = (cfg["M"] + 1) ** 2
        u0 = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        expo, scales, rho = remainder_probe(res, P, u0, n_scales=cfg["n_scales"])
        with open(run.path("remainder.csv"), "w", newline="") as f:
            wr = csv.writer(f, lineterminator="\n")
            wr.writerow(["scale", "rho"])
            for s, r in zip(scales, rho):
                wr.writerow([repr(float(s)), repr(float(r))])
        need = cfg["r"] + cfg["p"] - 0.25
        run.results["remainder_exponent"] = expo
        run.checks["remainder_exponent"] = _check(expo, expo >= need, need)


def _fit_slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def cmd_simulate(cfg, run, threads=1):
    from .dynamics import SimulationConfig, simulate, phase_shadow, shadow_envelope, super_actions
    eps_list = cfg["eps"] if isinstance(cfg["eps"], list) else [cfg["eps"]]
    g = parse_g(cfg["g"])
    drifts = []
    for eps in eps_list:
        T = 1.0 / eps if cfg["horizon"] == "inverse_eps" else cfg["T"]
        sc = SimulationConfig(M=cfg["M"], mu=cfg["mu"], p=cfg["p"], g=g, eps=eps, dt=cfg["dt"], T=T,
                              stride=cfg["stride"], seed=cfg["seed"], decay=cfg["decay"],
                              L_obs=cfg["L_obs"])
        tag = f"eps{eps:g}"
        ckpt = os.path.join(run.out, f"checkpoint_{tag}.bin") if cfg["checkpoint_every"] else None
        ser = simulate(sc, checkpoint=ckpt, checkpoint_every=cfg["checkpoint_every"],
                       resume=cfg["resume"])
        ser.to_csv(run.path(f"series_{tag}.csv"))
        d = ser.drift(cfg["drift_L"])
        drifts.append(d)
        res = {"drift": d, "relative_energy_drift": ser.relative_energy_drift(),
               "apriori_violations": ser.apriori_violations, "T": T}
        if cfg["shadow_s"] is not None:
            w, dev = phase_shadow(ser.u_final, ser.u0, cfg["shadow_s"])
            direct, interp = shadow_envelope(super_actions(ser.u_final), super_actions(ser.u0),
                                             cfg["shadow_s"])
            jerr = float(np.max(np.abs(super_actions(w) - super_actions(ser.u0))))
            res.update(shadow_deviation=dev, shadow_envelope=direct, shadow_envelope_interp=interp,
                       shadow_J_error=jerr)
            run.checks[f"shadow_{tag}"] = _check(dev, dev <= interp * (1 + 1e-12) and jerr <= 1e-12, interp)
        run.results[tag] = res
        run.checks[f"apriori_{tag}"] = _check(ser.apriori_violations, ser.apriori_violations == 0, 0)
        if cfg["max_drift"] is not None:
            run.checks[f"drift_{tag}"] = _check(d, d <= cfg["max_drift"], cfg["max_drift"])
    if len(eps_list) >= 2:
        expo = _fit_slope(eps_list, drifts)
        _write_json(run.path("ladder_fit.json"), {"eps": eps_list, "drift": drifts,
                                                  "drift_L": cfg["drift_L"], "exponent": expo})
        run.results["drift_exponent"] = expo
        if cfg["drift_exponent_min"] is not None:
            run.checks["drift_exponent"] = _check(expo, expo >= cfg["drift_exponent_min"],
                                                  cfg["drift_exponent_min"])


def _read_csv(path):
    """Header and numeric body, provenance columns dropped."""
    with open(path) as f:
        rows = list(csv.reader(f))
    head = rows[0]
    if head[-len(PROVENANCE):] == PROVENANCE:
        head, rows = head[:-len(PROVENANCE)], [r[:-len(PROVENANCE)] for r in rows]
    body = np.array(rows[1:], dtype=float) if len(rows) > 1 else np.zeros((0, len(head)))
    return head, body


def _refit(man, folder):
    """Recompute fitted quantities from emitted CSV files."""
    out = {}
    if man["command"] == "simulate" and "drift_exponent" in man["results"]:
        cfg = man["config"]
        eps_list = cfg["eps"]
        L = cfg["drift_L"]
        drifts = []
        for eps in eps_list:
            head, data = _read_csv(os.path.join(folder, f"series_eps{eps:g}.csv"))
            J = data[:, 3:3 + L + 1]
            drifts.append(float(np.max(np.abs(J - J[0]))))
        out["drift_exponent"] = _fit_slope(eps_list, drifts)
    if man["command"] == "basis":
        from .basis import fit_decay
        head, data = _read_csv(os.path.join(folder, "bound_report.csv"))
        out["decay_exponent"] = fit_decay(data[:, 1].astype(int), data[:, head.index("integral")])
    return out


def cmd_report(paths, out):
    if not paths:
        raise ConfigError("report needs at least one run directory or manifest")
    runs, ok = [], True
    for p in paths:
        man_path = os.path.join(p, "manifest.json") if os.path.isdir(p) else p
        with open(man_path) as f:
            man = json.load(f)
        folder = os.path.dirname(man_path)
        refit = _refit(man, folder)
        checks = dict(man.get("checks", {}))
        for key, val in refit.items():
            ref = man["results"].get(key)
            same = ref is not None and abs(val - ref) <= 1e-9 * max(1.0, abs(ref))
            checks[f"refit_{key}"] = _check(val, same, ref)
        for name, c in checks.items():
            ok &= bool(c["pass"])
        runs.append({"path": man_path, "command": man["command"], "checks": checks,
                     "results": man.get("results", {})})
    agg = {"runs": runs, "all_pass": ok,
           "n_checks": sum(len(r["checks"]) for r in runs),
           "n_failed": sum(not c["pass"] for r in runs for c in r["checks"].values())}
    if out:
        os.makedirs(out, exist_ok=True)
        _write_json(os.path.join(out, "report.json"), agg)
    json.dump(agg, sys.stdout, indent=2, sort_keys=True, default=_jsonable)
    sys.stdout.write("\n")
    return 0 if ok else EXIT_FAIL


COMMANDS = {"basis": cmd_basis, "resonance": cmd_resonance, "normal-form": cmd_normal_form,
            "simulate": cmd_simulate}


def build_parser():
    ap = argparse.ArgumentParser(prog="kgsphere", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in list(COMMANDS) + ["report"]:
        sp = sub.add_parser(name)
        sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", metavar="DIR", default=None)
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--no-timestamp", action="store_true")
        if name == "report":
            sp.add_argument("paths", nargs="*")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.paths, args.out)
        cfg = load(args.config, args.command) if args.config else validate(args.command, {})
        if args.seed is not None:
            cfg["seed"] = args.seed
        out = args.out or os.path.join("runs", args.command)
        run = Run(args.command, cfg, out, not args.no_timestamp)
        if args.config:
            run.inputs[os.path.basename(args.config)] = _sha256(args.config)
        COMMANDS[args.command](cfg, run, max(1, args.threads))
        return run.finish()
    except (ConfigError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
