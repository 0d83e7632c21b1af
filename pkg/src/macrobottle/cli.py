"""Command-line surface: generation, training sweeps, inspection, direction.

Every command is reproducible from its inputs, config and seed, all of which
are embedded in the emitted reports. Exit codes: 0 success, 2 usage error,
3 data error, 4 numerical failure, 5 no informative pair to analyze.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import anm, cae, dataio, datagen, metrics
from .errors import DataError, MacrobottleError, NumericalError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_NO_PAIRS = 5

SEED_ENV_VAR = "MACROBOTTLE_SEED"


def _fallback_seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get(SEED_ENV_VAR)
    return int(env) if env else 0


def _fmt(v) -> str:
    if v is None:
        return "n/a"
    return f"{v:.3f}"


# ---------------------------------------------------------------------------
# gen


def cmd_gen(args) -> int:
    seed = _fallback_seed(args.seed)
    out = Path(args.out)
    if args.scenario == "main":
        pair = datagen.gen_main_synthetic(args.n, seed)
    else:
        pair = datagen.gen_asymmetric(args.n, seed)
    out.mkdir(parents=True, exist_ok=True)
    dataio.save_pair(out, pair)
    dataio.save_ground_truth(out / "ground_truth.csv", pair.ground_truth, pair.split)
    layout = dataio.GridLayout(datagen.IMAGE_SIDE, datagen.IMAGE_SIDE)
    layout.save(out / "layout.json")
    with open(out / "gen.json", "w", encoding="utf-8") as fh:
        json.dump({"scenario": args.scenario, "n": args.n, "seed": seed}, fh, indent=2)

    if args.verify:
        lat = pair.ground_truth.latents
        if args.scenario == "main":
            noi = pair.ground_truth.noises
            ok = (np.array_equal(lat["x1"], lat["c1"] + noi["n_x1"])
                  and np.array_equal(lat["y1"], lat["c1"] ** 3 + noi["n_y1"])
                  and np.array_equal(lat["y2"], np.tanh(lat["x2"]) + noi["n_y2"]))
        else:
            ok = np.array_equal(lat["y1"], lat["x1"] ** 2)
        if not ok:
            raise NumericalError("structural-equation verification failed")
        print("structural equations verified")
    print(f"wrote {pair.n} samples to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _load_dataset(data_dir: Path, seed: int) -> datagen.DatasetPair:
    pair = dataio.load_pair_csv(data_dir / "X.csv", data_dir / "Y.csv")
    pair.split = datagen.assign_splits(pair.n, seed)
    return pair


def _train_metrics(model: cae.CaeModel, history: cae.TrainHistory,
                   pair: datagen.DatasetPair) -> tuple[dict, list]:
    pair = model.standardized_view(pair)
    te = pair.rows(datagen.TEST)
    final = cae.evaluate_model(model, pair.x[te], pair.y[te])
    mask_x = metrics.informative_mask(np.array(final["kl_x"]), model.config.kl_threshold)
    mask_y = metrics.informative_mask(np.array(final["kl_y"]), model.config.kl_threshold)
    table = metrics.pair_table(model, mask_x, mask_y, pair.x[te], pair.y[te])
    final["epochs_run"] = history.epochs_run
    final["early_stopped"] = history.early_stopped
    final.pop("val_loss", None)
    rows = [vars(r) for r in table.pairs]
    rows += [{"index": i, "unpaired_side": "x"} for i in table.unpaired_x]
    rows += [{"index": i, "unpaired_side": "y"} for i in table.unpaired_y]
    return final, rows


def _run_cell(x_path: str, y_path: str, config_dict: dict, cell_dir: str) -> dict:
    """Worker for one sweep cell; returns the report metrics for the summary."""
    config = cae.CaeConfig.from_dict(config_dict)
    cell = Path(cell_dir)
    cell.mkdir(parents=True, exist_ok=True)
    pair = dataio.load_pair_csv(x_path, y_path)
    pair.split = datagen.assign_splits(pair.n, config.seed)
    t0 = time.monotonic()
    try:
        model, history = cae.train_cae(pair, config)
    except NumericalError as err:
        with open(cell / "error.txt", "w", encoding="utf-8") as fh:
            fh.write(str(err))
        return {"beta": config.beta, "gamma": config.gamma, "failed": str(err)}
    final, table_rows = _train_metrics(model, history, pair)
    model.save(cell / "checkpoint")
    report = dataio.RunReport(
        seed=config.seed, config=config.to_dict(), metrics=final,
        timing_seconds=time.monotonic() - t0,
        loss_history=history.terms, pair_table=table_rows)
    dataio.save_report(cell / "report.json", report)
    return {"beta": config.beta, "gamma": config.gamma, **final}


def _summary_table(results: list[dict]) -> str:
    betas = sorted({r["beta"] for r in results}, reverse=True)
    gammas = sorted({r["gamma"] for r in results}, reverse=True)
    by_cell = {(r["beta"], r["gamma"]): r for r in results}
    width = 34
    lines = ["".ljust(12) + "".join(f"beta={b}".ljust(width) for b in betas)]
    for g in gammas:
        cells = []
        for b in betas:
            r = by_cell.get((b, g))
            if r is None:
                cells.append("-".ljust(width))
            elif "failed" in r:
                cells.append("FAILED".ljust(width))
            else:
                cells.append((f"|X|={r['informative_x']},|Y|={r['informative_y']} "
                              f"EV={_fmt(r['ev_y_from_x'])}/{_fmt(r['ev_x_from_y'])} "
                              f"xEV={_fmt(r['cross_ev_y_from_x'])}/"
                              f"{_fmt(r['cross_ev_x_from_y'])}").ljust(width))
        lines.append(f"gamma={g}".ljust(12) + "".join(cells))
    return "\n".join(lines)


def cmd_train(args) -> int:
    data_dir = Path(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            base = json.load(fh)
    if args.seed is not None or SEED_ENV_VAR in os.environ:
        base["seed"] = _fallback_seed(args.seed)
    if args.epochs is not None:
        base["epochs"] = args.epochs

    if args.sweep:
        with open(args.sweep, encoding="utf-8") as fh:
            sweep = json.load(fh)
        cells = sweep["cells"]
        if not cells:
            raise DataError("sweep needs at least one cell")
        if len({(c["beta"], c["gamma"]) for c in cells}) != len(cells):
            raise DataError("sweep cells must be unique")
        base.update(sweep.get("base", {}))
    else:
        cells = [{"beta": base.get("beta", 0.01), "gamma": base.get("gamma", 1.0)}]

    jobs = []
    for i, cell in enumerate(cells):
        cfg = dict(base)
        cfg["beta"] = cell["beta"]
        cfg["gamma"] = cell["gamma"]
        cfg["seed"] = cfg.get("seed", 0) + i  # independent seeds per cell
        cell_dir = out / f"cell_b{cell['beta']}_g{cell['gamma']}"
        jobs.append((str(data_dir / "X.csv"), str(data_dir / "Y.csv"), cfg,
                     str(cell_dir)))

    if args.parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            results = list(pool.map(_run_cell, *zip(*jobs)))
    else:
        results = [_run_cell(*job) for job in jobs]

    table = _summary_table(results)
    print(table)
    with open(out / "summary.txt", "w", encoding="utf-8") as fh:
        fh.write(table + "\n")
    header = ["beta", "gamma", "informative_x", "informative_y",
              "ev_y_from_x", "ev_x_from_y", "cross_ev_y_from_x", "cross_ev_x_from_y"]
    rows = []
    for r in results:
        if "failed" in r:
            continue
        rows.append([r["beta"], r["gamma"], r["informative_x"], r["informative_y"],
                     r["ev_y_from_x"], r["ev_x_from_y"],
                     r["cross_ev_y_from_x"] if r["cross_ev_y_from_x"] is not None else np.nan,
                     r["cross_ev_x_from_y"] if r["cross_ev_x_from_y"] is not None else np.nan])
    if rows:
        m = np.array(rows, dtype=np.float64)
        m = np.nan_to_num(m, nan=-999.0)  # CSV matrices must be finite
        dataio.save_matrix_csv(out / "summary.csv", m, header)
    failed = [r for r in results if "failed" in r]
    if failed:
        print(f"{len(failed)} cell(s) failed; see error.txt in their directories")
    return EXIT_OK


# ---------------------------------------------------------------------------
# direction


def _informative_pairs(model: cae.CaeModel, pair: datagen.DatasetPair):
    va = pair.rows(datagen.VAL)
    mask_x, mask_y = model.informative_masks(pair.x[va], pair.y[va])
    paired = np.flatnonzero(mask_x.flags & mask_y.flags)
    return paired, mask_x, mask_y


def cmd_direction(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = cae.CaeModel.load(args.checkpoint)
    pair = model.standardized_view(_load_dataset(Path(args.data), model.config.seed))
    paired, mask_x, mask_y = _informative_pairs(model, pair)
    if len(paired) == 0:
        print("no informative macrovariable pair detected; nothing to analyze")
        return EXIT_NO_PAIRS
    if args.pairs != "all":
        want = int(args.pairs)
        if want not in paired:
            print(f"pair {want} is not an informative pair (have {list(paired)})")
            return EXIT_NO_PAIRS
        paired = np.array([want])

    anm_config = anm.AnmConfig(seed=_fallback_seed(args.seed))
    if args.anm_config:
        with open(args.anm_config, encoding="utf-8") as fh:
            anm_config = anm.AnmConfig(**{**vars(anm_config), **json.load(fh)})

    mu_x = model.net_x.encode_mean(pair.x)
    mu_y = model.net_y.encode_mean(pair.y)
    verdicts = []
    for idx in paired:
        verdict = anm.direction_verdict(mu_x[:, idx], mu_y[:, idx], anm_config,
                                        pair_index=int(idx), keep_artifacts=True)
        dataio.emit_residual_scatter(out / f"scatter_pair{idx}.csv",
                                     verdict.artifacts)
        verdicts.append(verdict)
        print(f"pair {idx}: {verdict.decision}   "
              f"raw fwd {verdict.raw_fwd.statistic:.3f}/{verdict.raw_fwd.threshold:.3f} "
              f"rev {verdict.raw_rev.statistic:.3f}/{verdict.raw_rev.threshold:.3f}   "
              f"transformed fwd {verdict.fwd.statistic:.3f}/{verdict.fwd.threshold:.3f} "
              f"rev {verdict.rev.statistic:.3f}/{verdict.rev.threshold:.3f}   "
              f"disparity {verdict.disparity:.2f}")

    report = dataio.RunReport(
        seed=anm_config.seed,
        config={"anm": vars(anm_config), "checkpoint": str(args.checkpoint)},
        metrics={"informative_x": mask_x.count, "informative_y": mask_y.count,
                 "ev_y_from_x": None, "ev_x_from_y": None,
                 "cross_ev_y_from_x": None, "cross_ev_x_from_y": None,
                 "kl_x": mask_x.kl.tolist(), "kl_y": mask_y.kl.tolist(),
                 "epochs_run": 0, "early_stopped": False},
        verdicts=[v.to_dict() for v in verdicts])
    dataio.save_report(out / "direction_report.json", report)
    return EXIT_OK


# ---------------------------------------------------------------------------
# inspect


def cmd_inspect(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = cae.CaeModel.load(args.checkpoint)
    pair = model.standardized_view(_load_dataset(Path(args.data), model.config.seed))
    if args.layout:
        layout = dataio.GridLayout.load(args.layout)
    else:
        layout = dataio.GridLayout(datagen.IMAGE_SIDE, datagen.IMAGE_SIDE)

    te = pair.rows(datagen.TEST)
    final = cae.evaluate_model(model, pair.x[te], pair.y[te])
    mask_x = metrics.informative_mask(np.array(final["kl_x"]), model.config.kl_threshold)
    mask_y = metrics.informative_mask(np.array(final["kl_y"]), model.config.kl_threshold)
    table = metrics.pair_table(model, mask_x, mask_y, pair.x[te], pair.y[te])

    k = args.k if args.k else max(1, pair.n // 50)
    for side, mask in (("x", mask_x), ("y", mask_y)):
        for neuron in mask.indices:
            dataio.emit_anomaly_grid(
                out / f"anomaly_{side}_n{neuron}_high.csv",
                out / f"anomaly_{side}_n{neuron}_low.csv",
                model, pair, layout, int(neuron), k, side, informative=True)

    final["epochs_run"] = 0
    final["early_stopped"] = False
    final.pop("val_loss", None)
    rows = [vars(r) for r in table.pairs]
    rows += [{"index": i, "unpaired_side": "x"} for i in table.unpaired_x]
    rows += [{"index": i, "unpaired_side": "y"} for i in table.unpaired_y]
    report = dataio.RunReport(seed=model.config.seed, config=model.config.to_dict(),
                              metrics=final, pair_table=rows)
    dataio.save_report(out / "inspect_report.json", report)

    print(f"informative neurons: X {list(mask_x.indices)}  Y {list(mask_y.indices)}")
    print(f"paired: {[r.index for r in table.pairs]}  "
          f"unpaired X {table.unpaired_x}  unpaired Y {table.unpaired_y}")
    for r in table.pairs:
        print(f"pair {r.index}: cross-EV {r.cross_ev_y_from_x:.3f}/"
              f"{r.cross_ev_x_from_y:.3f}  a={r.a_x_to_y:.3f}/{r.a_y_to_x:.3f}")
    print(f"anomaly grids written to {out} (k={k})")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="macrobottle",
        description="Discover causal macrovariables in paired datasets and "
                    "test pairwise causal direction.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic paired dataset")
    p.add_argument("--scenario", choices=("main", "asymmetric"), default="main")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=None,
                   help=f"defaults to ${SEED_ENV_VAR} or 0")
    p.add_argument("--out", required=True)
    p.add_argument("--verify", action="store_true",
                   help="re-check the structural equations after writing")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train one model or a beta/gamma sweep")
    p.add_argument("--data", required=True, help="directory with X.csv and Y.csv")
    p.add_argument("--config", help="JSON file mirroring CaeConfig fields")
    p.add_argument("--sweep", help='JSON file: {"cells": [{"beta": ..., "gamma": ...}]}')
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--parallel", type=int, default=1,
                   help="run sweep cells in this many worker processes")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("direction", help="infer causal direction per macrovariable pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--pairs", default="all", help='"all" or one pair index')
    p.add_argument("--anm-config", help="JSON file mirroring AnmConfig fields")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_direction)

    p = sub.add_parser("inspect", help="report neuron divergences, pairs, anomaly grids")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--layout", help="layout.json; defaults to the 8x8 synthetic grid")
    p.add_argument("--k", type=int, default=None, help="top/bottom sample count")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except MacrobottleError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
