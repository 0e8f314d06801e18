"""Command-line entry point.

Exit codes: 0 success, 1 budget exhausted (partial output), 2 input error,
3 unsatisfiable calibration.

Every command takes ``--config FILE`` (JSON, snake_case keys matching the
flags); explicit flags win. Commands that write an output file also write
``<output>.meta.json`` holding the resolved config, which can be passed back
as ``--config`` to replay the run.
"""

import argparse
import csv
import json
import logging
import math
import os
import sys

import numpy as np

from . import accountant, embio, metrics
from .calibrate import (CSV_COLUMNS, CalibrationError, calibrate_k, calibrate_q,
                        min_epsilon_over_kq, sweep, write_csv)
from .index import IndexInputError, build_index, load_index
from .ledger import (BudgetExhausted, BudgetTarget, LedgerError, ledger_open,
                     read_ledger_header)
from .mechanism import (InsufficientNeighbors, MechanismError, PrivacyParams,
                        leakage_probe, private_retrieve)

log = logging.getLogger("dprdm")

EXIT_OK, EXIT_BUDGET, EXIT_INPUT, EXIT_UNSAT = 0, 1, 2, 3
SLOT_BITS = 16


class InputError(Exception):
    pass


# ---------------------------------------------------------------- config

def _resolve(args, defaults):
    """Merge defaults < config file < explicit flags."""
    cfg = dict(defaults)
    if getattr(args, "config", None):
        with open(args.config) as fh:
            loaded = json.load(fh)
        cfg.update(loaded.get("config", loaded))
    for key, val in vars(args).items():
        if key in ("config", "func", "command") or val is None:
            continue
        cfg[key] = val
    missing = [k for k, v in cfg.items() if v is _REQUIRED]
    if missing:
        raise InputError("missing required option(s): "
                         + ", ".join("--" + m.replace("_", "-") for m in missing))
    return cfg


_REQUIRED = object()


def _write_meta(output, command, cfg, **extra):
    meta = {"command": command, "config": cfg}
    meta.update(extra)
    with open(str(output) + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def _floats(text):
    if isinstance(text, list):
        return [float(x) for x in text]
    return [float(x) for x in str(text).split(",") if x.strip()]


# ---------------------------------------------------------------- commands

def cmd_build_index(args):
    cfg = _resolve(args, {"input": _REQUIRED, "output": _REQUIRED})
    try:
        idx = build_index(cfg["input"])
    except embio.EmbeddingFormatError as exc:
        raise InputError(str(exc)) from exc
    except IndexInputError as exc:
        raise InputError(f"{cfg['input']}: {exc}") from exc
    idx.save(cfg["output"])
    _write_meta(cfg["output"], "build-index", cfg)
    print(f"count={idx.count} dim={idx.dim}")
    return EXIT_OK


def _load_params(source):
    if isinstance(source, dict):
        return PrivacyParams.from_dict(source)
    if os.path.exists(source):
        with open(source) as fh:
            return PrivacyParams.from_dict(json.load(fh))
    return PrivacyParams.from_dict(json.loads(source))


def _open_ledger(cfg, params):
    path = cfg["ledger"]
    if cfg.get("target_eps") is not None:
        target = BudgetTarget(cfg["target_eps"], cfg["delta"], cfg["t"])
    elif os.path.exists(path):
        target, _ = read_ledger_header(path)
    else:
        raise InputError("a new ledger needs --target-eps, --delta and --t")
    return ledger_open(path, target, params)


def cmd_retrieve(args):
    cfg = _resolve(args, {
        "private_index": _REQUIRED, "public_index": None, "queries": _REQUIRED,
        "params": _REQUIRED, "ledger": _REQUIRED, "seed": 0, "output": _REQUIRED,
        "json": False, "target_eps": None, "delta": 1e-6, "t": None,
    })
    try:
        params = _load_params(cfg["params"])
        priv = load_index(cfg["private_index"])
        pub = load_index(cfg["public_index"]) if cfg["public_index"] else None
        qids, qvecs = embio.read_embeddings(cfg["queries"])
        ledger = _open_ledger(cfg, params)
    except (OSError, ValueError, LedgerError) as exc:
        raise InputError(str(exc)) from exc

    served, skipped = [], []
    status = EXIT_OK
    for ordinal, (qid, qv) in enumerate(zip(qids, qvecs)):
        try:
            out = private_retrieve(priv, pub, qv, params, cfg["seed"], ledger, ordinal)
        except BudgetExhausted:
            status = EXIT_BUDGET
            break
        except InsufficientNeighbors as exc:
            log.warning("query %s skipped: %s", qid, exc)
            skipped.append(int(qid))
            continue
        except (IndexInputError, MechanismError) as exc:
            raise InputError(f"query {qid}: {exc}") from exc
        served.append((ordinal, int(qid), out))

    _write_conditioning(cfg["output"], served, cfg["json"])
    _write_meta(cfg["output"], "retrieve", cfg, params=params.to_dict(),
                served=len(served), skipped=skipped, charged=ledger.charged)
    if status == EXIT_BUDGET:
        print(f"budget exhausted after {len(served)}")
    else:
        print(f"served={len(served)} skipped={len(skipped)}")
    return status


def _write_conditioning(path, served, as_json):
    if as_json:
        with open(path, "w") as fh:
            for ordinal, qid, out in served:
                fh.write(json.dumps({
                    "ordinal": ordinal, "query_id": qid, "seed": out.noise_seed,
                    "z": out.z.tolist(), "interpolated": out.interpolated.tolist(),
                }) + "\n")
        return
    # record id = ordinal << 16 | slot; slot 0 is z, slots 1..k the rows of e
    ids, vecs = [], []
    for ordinal, _, out in served:
        ids.append(ordinal << SLOT_BITS)
        vecs.append(out.z)
        for j, row in enumerate(out.interpolated, 1):
            ids.append((ordinal << SLOT_BITS) | j)
            vecs.append(row)
    dim = len(served[0][2].z) if served else 1
    embio.write_embeddings(path, ids, np.asarray(vecs).reshape(-1, dim))


def cmd_calibrate(args):
    cfg = _resolve(args, {
        "target_eps": _REQUIRED, "delta": _REQUIRED, "t": _REQUIRED, "sigma": _REQUIRED,
        "fix_q": None, "fix_k": None, "k_max": 10000, "tol": 1e-3, "output": None,
    })
    if (cfg["fix_q"] is None) == (cfg["fix_k"] is None):
        raise InputError("give exactly one of --fix-q / --fix-k")
    target = BudgetTarget(cfg["target_eps"], cfg["delta"], cfg["t"])
    try:
        if cfg["fix_q"] is not None:
            q = float(cfg["fix_q"])
            k = calibrate_k(target, cfg["sigma"], q, cfg["k_max"])
        else:
            k = int(cfg["fix_k"])
            q = calibrate_q(target, cfg["sigma"], k, cfg["tol"])
    except CalibrationError as exc:
        print(json.dumps({"error": str(exc), "best_epsilon": exc.best_epsilon}))
        return EXIT_UNSAT
    params = PrivacyParams(k, q, cfg["sigma"], 1.0)
    curve = accountant.mechanism_rdp(params)
    g = accountant.to_approx_dp(accountant.compose(curve, target.t), target.delta)
    result = {
        "k": k, "q": q, "sigma": cfg["sigma"], "t": target.t, "delta": target.delta,
        "epsilon": g.epsilon, "alpha_star": g.best_order, "conversion": g.conversion,
        "curve": curve.to_dict(),
    }
    print(json.dumps(result))
    if cfg["output"]:
        with open(cfg["output"], "w") as fh:
            json.dump(result, fh, indent=2)
        _write_meta(cfg["output"], "calibrate", cfg)
    return EXIT_OK


def cmd_simulate(args):
    cfg = _resolve(args, {
        "n_list": _REQUIRED, "r_list": _REQUIRED, "sigma": 0.1, "t": 1000,
        "delta": "1/n", "output": _REQUIRED,
    })
    rows = []
    for n in _floats(cfg["n_list"]):
        delta = 1.0 / n if str(cfg["delta"]) == "1/n" else float(cfg["delta"])
        for r in _floats(cfg["r_list"]):
            try:
                pt = min_epsilon_over_kq(int(n), r, cfg["sigma"], int(cfg["t"]), delta)
                rows.append(pt.row())
            except CalibrationError:
                rows.append({"n": int(n), "r": r, "k": "", "q": "", "sigma": cfg["sigma"],
                             "t": int(cfg["t"]), "delta": delta, "alpha_star": "",
                             "epsilon": math.inf})
    write_csv(cfg["output"], rows)
    _write_meta(cfg["output"], "simulate", cfg,
                note="delta=1/n follows the per-dataset convention unless --delta is given")
    print(f"wrote {len(rows)} rows to {cfg['output']}")
    return EXIT_OK


def cmd_sweep(args):
    cfg = _resolve(args, {
        "k_list": _REQUIRED, "q_list": _REQUIRED, "sigma_list": _REQUIRED,
        "t_list": _REQUIRED, "delta": 1e-8, "output": _REQUIRED,
    })
    rows = sweep([int(k) for k in _floats(cfg["k_list"])], _floats(cfg["q_list"]),
                 _floats(cfg["sigma_list"]), [int(t) for t in _floats(cfg["t_list"])],
                 float(cfg["delta"]))
    write_csv(cfg["output"], rows)
    _write_meta(cfg["output"], "sweep", cfg)
    print(f"wrote {len(rows)} rows to {cfg['output']}")
    return EXIT_OK


def cmd_metrics(args):
    cfg = _resolve(args, {"real": _REQUIRED, "fake": _REQUIRED, "k": 5, "output": None})
    try:
        _, real = embio.read_embeddings(cfg["real"])
        _, fake = embio.read_embeddings(cfg["fake"])
        rep = metrics.report(np.asarray(real, dtype=np.float64),
                             np.asarray(fake, dtype=np.float64), int(cfg["k"]))
    except (OSError, ValueError) as exc:
        raise InputError(str(exc)) from exc
    print(json.dumps(rep))
    if cfg["output"]:
        with open(cfg["output"], "w") as fh:
            json.dump(rep, fh, indent=2)
        _write_meta(cfg["output"], "metrics", cfg)
    return EXIT_OK


DEFAULT_ATTACK_GRID = [
    {"k": k, "q": 1.0, "sigma": s, "lambda": 1.0}
    for k in (1, 2, 4, 6, 8, 16) for s in (0.0, 0.1)
]


def adversarial_index(target, n_blanks, perturb=0.0, seed=0):
    """One target record (id 0) plus ``n_blanks`` fillers orthogonal to it.

    With ``perturb=0`` every filler is the same "blank" embedding.
    """
    target = np.asarray(target, dtype=np.float64)
    target = target / np.linalg.norm(target)
    rng = np.random.default_rng([seed, 1])
    blank = rng.standard_normal(target.size)
    blank -= (blank @ target) * target
    blank /= np.linalg.norm(blank)
    fill = np.tile(blank, (n_blanks, 1))
    if perturb > 0:
        fill += perturb * rng.standard_normal(fill.shape)
        fill -= np.outer(fill @ target, target)
    ids = list(range(n_blanks + 1))
    priv = build_index(ids, np.vstack([target, fill]))
    pub = build_index(ids[1:], fill)
    return priv, pub


def cmd_attack_demo(args):
    cfg = _resolve(args, {
        "target": None, "dim": 64, "blanks": 100, "perturb": 0.0, "params_grid": None,
        "trials": 1000, "seed": 0, "output": _REQUIRED,
    })
    if cfg["target"]:
        _, tv = embio.read_embeddings(cfg["target"])
        target = np.asarray(tv[0], dtype=np.float64)
    else:
        target = np.random.default_rng(cfg["seed"]).standard_normal(int(cfg["dim"]))
    grid = DEFAULT_ATTACK_GRID
    if cfg["params_grid"]:
        with open(cfg["params_grid"]) as fh:
            grid = json.load(fh)
    priv, pub = adversarial_index(target, int(cfg["blanks"]), float(cfg["perturb"]), cfg["seed"])
    query = priv.vector(0).astype(np.float64)
    rows = []
    for entry in grid:
        params = PrivacyParams.from_dict(entry)
        trials = 1 if params.sigma == 0 and params.q == 1 else int(cfg["trials"])
        rep = leakage_probe(priv, 0, query, params, trials, public_index=pub, seed=cfg["seed"])
        rows.append({**params.to_dict(), "trials": trials, "mean_cosine": rep.mean_cosine,
                     "max_cosine": rep.max_cosine, "hit_rate": rep.hit_rate})
    with open(cfg["output"], "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    _write_meta(cfg["output"], "attack-demo", cfg, grid=grid)
    for r in rows:
        print(f"k={r['k']:<3} q={r['q']:<6g} sigma={r['sigma']:<5g} lambda={r['lambda']:<4g} "
              f"mean_cos={r['mean_cosine']:.4f} max_cos={r['max_cosine']:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="dprdm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config")
        sp.set_defaults(func=func)
        return sp

    sp = add("build-index", cmd_build_index, "normalize embeddings into a binary index")
    sp.add_argument("--input")
    sp.add_argument("--output")

    sp = add("retrieve", cmd_retrieve, "serve private retrieval queries under a ledger")
    sp.add_argument("--private-index")
    sp.add_argument("--public-index")
    sp.add_argument("--queries")
    sp.add_argument("--params", help="JSON file or inline JSON with k, q, sigma, lambda")
    sp.add_argument("--ledger")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--output")
    sp.add_argument("--json", action="store_true", default=None)
    sp.add_argument("--target-eps", type=float)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--t", type=int)

    sp = add("calibrate", cmd_calibrate, "find k (fixed q) or q (fixed k) for a budget")
    sp.add_argument("--target-eps", type=float)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--t", type=int)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--fix-q", type=float)
    sp.add_argument("--fix-k", type=int)
    sp.add_argument("--k-max", type=int)
    sp.add_argument("--tol", type=float)
    sp.add_argument("--output")

    sp = add("simulate", cmd_simulate, "minimum epsilon over (k, q) for an (n, r) grid")
    sp.add_argument("--n-list")
    sp.add_argument("--r-list")
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--t", type=int)
    sp.add_argument("--delta", help='a number, or "1/n" (default)')
    sp.add_argument("--output")

    sp = add("sweep", cmd_sweep, "epsilon over a (k, q, sigma, T) grid")
    sp.add_argument("--k-list")
    sp.add_argument("--q-list")
    sp.add_argument("--sigma-list")
    sp.add_argument("--t-list")
    sp.add_argument("--delta", type=float)
    sp.add_argument("--output")

    sp = add("metrics", cmd_metrics, "density and coverage report")
    sp.add_argument("--real")
    sp.add_argument("--fake")
    sp.add_argument("--k", type=int)
    sp.add_argument("--output")

    sp = add("attack-demo", cmd_attack_demo, "adversarial retrieval-dataset leakage sweep")
    sp.add_argument("--target")
    sp.add_argument("--dim", type=int)
    sp.add_argument("--blanks", type=int)
    sp.add_argument("--perturb", type=float)
    sp.add_argument("--params-grid")
    sp.add_argument("--trials", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--output")
    return p


def main(argv=None):
    logging.basicConfig(level=os.environ.get("DPRDM_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, embio.EmbeddingFormatError, metrics.MetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
