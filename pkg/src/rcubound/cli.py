"""Command-line front end.

    rcubound bound CONFIG
    rcubound tradeoff CONFIG --ebn0 1,2,4,8 [--radii 0,1,2]
    rcubound ebno-curve CONFIG --eka 25,50 --scheme theorem1
    rcubound simulate CONFIG [--log trials.csv]

CONFIG is one JSON document with sections system, activity, decoder,
qpolicy, solver and sim.  Exit codes: 0 ok, 2 config error, 3 resource cap,
4 solver bracket exhausted.  RCU_SEED overrides every seed in the config.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time

from . import __version__

EXIT_OK, EXIT_CONFIG, EXIT_CAP, EXIT_BRACKET = 0, 2, 3, 4
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

DEFAULTS = {
    "system": {"ebn0_db": None, "P": None, "pprime_ratio": None},
    "activity": {"tail_threshold": 1e-9, "K_l": None, "K_u": None},
    "decoder": {"estimator": "ml", "radius": 0, "xi_candidates": "true_ka", "fa_weight": "tprime",
                "collision_bound": False},
    "qpolicy": {"enabled": True, "t_values": [1], "ka_max": 50, "samples": 20000, "enum_cap": 10000,
                "seed": 2024},
    "solver": {"target": 0.1, "radii": [0, 1, 2], "L_values": [1], "slot_index_coding": False,
               "bracket": [-1.0, 4.0], "tol_db": 0.01},
    "sim": {"trials": 500, "subset_cap": 2_000_000, "seed": 2024, "fixed_codebook": False,
            "pprime_ratio": 0.9, "compare_bound": False},
}
REQUIRED = {"system": ("n", "k"), "activity": ("kind",)}


class CliConfigError(Exception):
    pass


def _need(section: dict, name: str):
    if section.get(name) is None:
        raise CliConfigError(f"missing field: {name}")
    return section[name]


def effective_config(raw: dict) -> dict:
    """Defaults filled in, required fields checked, RCU_SEED applied."""
    if not isinstance(raw, dict):
        raise CliConfigError("config must be a JSON object")
    cfg = {}
    for sec, defaults in DEFAULTS.items():
        given = raw.get(sec, {}) or {}
        if not isinstance(given, dict):
            raise CliConfigError(f"section {sec} must be an object")
        cfg[sec] = {**defaults, **given}
    for sec, names in REQUIRED.items():
        for name in names:
            _need(cfg[sec], name)
    kind = cfg["activity"]["kind"]
    need = {"poisson": "mean", "fixed": "value", "explicit": "table"}.get(kind)
    if need is None:
        raise CliConfigError(f"activity.kind must be poisson, fixed or explicit, not {kind!r}")
    _need(cfg["activity"], need)
    seed = os.environ.get("RCU_SEED")
    if seed is not None:
        try:
            s = int(seed)
        except ValueError:
            raise CliConfigError("RCU_SEED must be an integer")
        cfg["qpolicy"]["seed"] = s
        cfg["sim"]["seed"] = s
    return cfg


# ---------------------------------------------------------------------------
# builders (engine imported lazily so --threads takes effect before numpy loads)


def _engine():
    from . import bounds, extensions, model, oracle_sim, solver
    return bounds, extensions, model, oracle_sim, solver


def _activity(cfg, mean_override=None):
    _, _, model, _, _ = _engine()
    a = cfg["activity"]
    kind = a["kind"]
    if mean_override is not None:
        kind_obj = model.ActivityKind.poisson(mean_override)
    elif kind == "poisson":
        kind_obj = model.ActivityKind.poisson(float(a["mean"]))
    elif kind == "fixed":
        kind_obj = model.ActivityKind.fixed(int(a["value"]))
    else:
        kind_obj = model.ActivityKind.explicit({int(k): float(v) for k, v in dict(a["table"]).items()})
    if a["K_l"] is not None and a["K_u"] is not None and mean_override is None:
        return model.ActivityModel(kind_obj, int(a["K_l"]), int(a["K_u"]), 0.0)
    return model.truncate_activity(kind_obj, float(a["tail_threshold"]))


def _policy(cfg, radius=None):
    _, _, model, _, _ = _engine()
    d = cfg["decoder"]
    return model.DecoderPolicy(d["estimator"], int(d["radius"] if radius is None else radius), d["xi_candidates"],
                               d["fa_weight"], bool(d["collision_bound"]))


def _qpolicy(cfg):
    bounds = _engine()[0]
    q = cfg["qpolicy"]
    return bounds.QPolicy(bool(q["enabled"]), tuple(int(t) for t in q["t_values"]), int(q["ka_max"]),
                          int(q["samples"]), int(q["enum_cap"]), int(q["seed"]))


def _power(cfg, ebn0_db=None):
    _, _, model, _, _ = _engine()
    s = cfg["system"]
    n, k = int(s["n"]), float(s["k"])
    if ebn0_db is not None:
        return model.SystemConfig.power_from_ebn0(ebn0_db, n, k)
    if s["ebn0_db"] is not None:
        return model.SystemConfig.power_from_ebn0(float(s["ebn0_db"]), n, k)
    if s["P"] is not None:
        return float(s["P"])
    raise CliConfigError("missing field: ebn0_db")


def _evaluate(cfg, activity, policy, ebn0_db=None):
    """(BoundResult, ratio); P'/P is optimised unless the config fixes it."""
    bounds, _, model, _, _ = _engine()
    s = cfg["system"]
    n, k = int(s["n"]), float(s["k"])
    P = _power(cfg, ebn0_db)
    ratio = s["pprime_ratio"]
    q = _qpolicy(cfg)
    if ratio is not None:
        res = bounds.assemble_bound(model.SystemConfig(n, k, P, float(ratio) * P), activity, policy, q)
        return res, float(ratio)
    res, best, _ = bounds.optimize_pprime(model.SystemConfig(n, k, P, 0.9 * P), activity, policy, q)
    return res, best


def _floor(cfg, activity, policy):
    _, extensions, model, _, _ = _engine()
    if policy.estimator not in ("ml", "energy"):
        return None
    s = cfg["system"]
    sc = model.SystemConfig(int(s["n"]), float(s["k"]), 1.0, 0.5)
    return extensions.error_floor(sc, activity, policy)


# ---------------------------------------------------------------------------
# commands


def manifest(command, cfg, args, seconds):
    return {"tool": "rcubound", "version": __version__, "command": command, "config": cfg,
            "seed": {"qpolicy": cfg["qpolicy"]["seed"], "sim": cfg["sim"]["seed"]},
            "threads": args.threads, "seconds": seconds}


def cmd_bound(cfg, args, out):
    t0 = time.perf_counter()
    activity, policy = _activity(cfg), _policy(cfg)
    res, ratio = _evaluate(cfg, activity, policy)
    result = res.as_dict()
    result["pprime_ratio"] = ratio
    fl = _floor(cfg, activity, policy)
    if fl is not None:
        result["floor"] = fl.as_dict()
    json.dump({"manifest": manifest("bound", cfg, args, time.perf_counter() - t0), "result": result},
              out, indent=2, sort_keys=True, default=float)
    out.write("\n")
    return EXIT_OK


def _write_csv(rows, header, out):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in sorted(rows, key=lambda r: tuple(r[:2])):
        w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    out.write(buf.getvalue())


def cmd_tradeoff(cfg, args, out):
    t0 = time.perf_counter()
    activity = _activity(cfg)
    radii = _ints(args.radii) if args.radii else [int(cfg["decoder"]["radius"])]
    rows = []
    for r in radii:
        policy = _policy(cfg, r)
        fl = _floor(cfg, activity, policy)
        for db in _floats(args.ebn0):
            res, _ = _evaluate(cfg, activity, policy, db)
            rows.append([db, r, res.eps_md, res.eps_fa,
                         fl.eps_md_floor if fl else float("nan"), fl.eps_fa_floor if fl else float("nan")])
    _write_csv(rows, ["ebn0_db", "radius", "eps_md", "eps_fa", "floor_md", "floor_fa"], out)
    _echo_manifest("tradeoff", cfg, args, t0)
    return EXIT_OK


def cmd_ebno_curve(cfg, args, out):
    _, _, _, _, solver = _engine()
    t0 = time.perf_counter()
    s, sol = cfg["system"], cfg["solver"]
    rows = []
    status = EXIT_OK
    for eka in _floats(args.eka):
        req = solver.SolveRequest(
            activity=_activity(cfg, mean_override=eka), n=int(s["n"]), k=float(s["k"]),
            target=float(sol["target"]), scheme=args.scheme, estimator=cfg["decoder"]["estimator"],
            radii=tuple(int(r) for r in sol["radii"]), L_values=tuple(int(L) for L in sol["L_values"]),
            slot_index_coding=bool(sol["slot_index_coding"]), xi_candidates=cfg["decoder"]["xi_candidates"],
            bracket=tuple(float(b) for b in sol["bracket"]), tol_db=float(sol["tol_db"]), q_policy=_qpolicy(cfg))
        try:
            r = solver.required_ebn0(req)
        except solver.BracketExhausted as exc:
            print(f"bracket exhausted at E[K_a]={eka}: {exc} (best {exc.best['ebn0_db']:.3f} dB, "
                  f"score {exc.best['score']:.4g})", file=sys.stderr)
            status = EXIT_BRACKET
            continue
        rows.append([eka, args.scheme, r.ebn0_db, r.ratio, r.radius, r.L, r.eps_md, r.eps_fa])
    _write_csv(rows, ["e_ka", "scheme", "ebn0_db", "pprime_ratio", "radius", "L", "eps_md", "eps_fa"], out)
    _echo_manifest("ebno-curve", cfg, args, t0)
    return status


def cmd_simulate(cfg, args, out):
    bounds, _, model, oracle_sim, _ = _engine()
    t0 = time.perf_counter()
    s, sim = cfg["system"], cfg["sim"]
    n, k = int(s["n"]), int(s["k"])
    P = _power(cfg)
    ratio = float(sim["pprime_ratio"])
    activity, policy = _activity(cfg), _policy(cfg)
    sc = oracle_sim.SimConfig(n, k, P, ratio * P, activity, policy, int(sim["trials"]), int(sim["subset_cap"]),
                              int(sim["seed"]), bool(sim["fixed_codebook"]), keep_log=bool(args.log))
    outcome = oracle_sim.run_sim(sc)
    result = {"sim": outcome.as_dict()}
    if sim["compare_bound"]:
        b = bounds.assemble_bound(model.SystemConfig(n, k, P, ratio * P), activity, policy, _qpolicy(cfg))
        result["bound"] = b.as_dict()
        result["dominates"] = {
            "md": bool(outcome.p_md_hat <= b.eps_md + 3 * outcome.sigma_md),
            "fa": bool(outcome.p_fa_hat <= b.eps_fa + 3 * outcome.sigma_fa),
        }
    if args.log:
        with open(args.log, "w", newline="") as fh:
            w = csv.DictWriter(fh, ["trial", "K_a", "K_a_hat", "list_size", "mds", "fas"], lineterminator="\n")
            w.writeheader()
            w.writerows(outcome.log)
    json.dump({"manifest": manifest("simulate", cfg, args, time.perf_counter() - t0), "result": result},
              out, indent=2, sort_keys=True, default=float)
    out.write("\n")
    return EXIT_OK


def _echo_manifest(command, cfg, args, t0):
    json.dump(manifest(command, cfg, args, time.perf_counter() - t0), sys.stderr, sort_keys=True, default=float)
    sys.stderr.write("\n")


def _floats(text):
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise CliConfigError(f"bad number list: {text!r}")


def _ints(text):
    try:
        return [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise CliConfigError(f"bad integer list: {text!r}")


COMMANDS = {"bound": cmd_bound, "tradeoff": cmd_tradeoff, "ebno-curve": cmd_ebno_curve, "simulate": cmd_simulate}


def build_parser():
    p = argparse.ArgumentParser(prog="rcubound", description="MD/FA achievability bounds for unsourced random access")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="cap on BLAS worker threads")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", help="JSON config file")
        sp.add_argument("--out", help="write the result here instead of stdout")
        if name == "tradeoff":
            sp.add_argument("--ebn0", required=True, help="comma-separated Eb/N0 values in dB")
            sp.add_argument("--radii", help="comma-separated decoding radii (default: decoder.radius)")
        if name == "ebno-curve":
            sp.add_argument("--eka", required=True, help="comma-separated E[K_a] values")
            sp.add_argument("--scheme", default="theorem1", choices=("theorem1", "known_ka", "sampr"))
        if name == "simulate":
            sp.add_argument("--log", help="per-trial CSV log path")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("--threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    for var in THREAD_VARS:
        os.environ.setdefault(var, str(args.threads))
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _, _, model, oracle_sim, _ = _engine()
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        cfg = effective_config(raw)
        return COMMANDS[args.command](cfg, args, out)
    except (CliConfigError, model.ConfigError) as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except oracle_sim.ResourceCapExceeded as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CAP
    finally:
        if args.out:
            out.close()


if __name__ == "__main__":
    sys.exit(main())
