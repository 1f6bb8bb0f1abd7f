"""Command-line entry point wiring datasets, training, evaluation, sweeps.

Every command reads one merged configuration (file plus flag overrides),
writes it back into the output directory, and keeps all numeric output
free of timestamps so a rerun with the same settings reproduces the same
bytes.  Exit codes: 0 success, 2 configuration error, 3 I/O error,
4 numeric abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import autodiff as ad
from . import gat as gat_mod
from .baselines import associate_ga_subsinr, associate_oracle, associate_rsrp
from .config import RunConfig, load_config, write_config
from .errors import (
    BudgetExceededError,
    ConfigError,
    ContractError,
    ShapeError,
    TrainingDiverged,
)
from .evaluate import (
    evaluate_policy,
    export_heatmaps,
    gain_percent,
    sweep_bandwidth,
    sweep_lambda,
    write_sweep_csv,
)
from .scenario import (
    FeatureStats,
    build_graph,
    from_record,
    generate_scenario,
    normalize_features,
    read_jsonl,
    to_record,
    write_jsonl,
)
from .training import LossConfig, Sample, split_and_normalize, train, write_history

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

# sweep evaluation scenarios draw seeds from a range disjoint from training
EVAL_SEED_OFFSET = 1_000_000


def _generate_records(cfg: RunConfig) -> list:
    digest = cfg.digest()
    records = []
    for i in range(cfg.train.dataset_size):
        s = generate_scenario(cfg.scenario, cfg.seed + i)
        g = build_graph(s, cfg.scenario.gamma_th_db)
        records.append(to_record(s, g, config_digest=digest))
    return records


def cmd_gen(cfg: RunConfig) -> int:
    os.makedirs(cfg.out_dir, exist_ok=True)
    records = _generate_records(cfg)
    dataset_path = os.path.join(cfg.out_dir, "dataset.jsonl")
    write_jsonl(dataset_path, records)
    manifest_cfg = cfg.to_dict()
    manifest_cfg.pop("out_dir", None)  # placement, not data
    manifest = {
        "config": manifest_cfg,
        "config_digest": cfg.digest(),
        "seed": cfg.seed,
        "count": len(records),
    }
    with open(os.path.join(cfg.out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    write_config(cfg, os.path.join(cfg.out_dir, "config.json"))
    print(f"wrote {len(records)} records to {dataset_path}")
    return EXIT_OK


def _load_pairs(dataset_path, cfg: RunConfig) -> list:
    records = read_jsonl(dataset_path)
    return [Sample(*from_record(rec, cfg.scenario)) for rec in records]


def _train_to_dir(cfg: RunConfig, pairs, out_dir, checkpoint=None):
    """Split, train (optionally resuming), and persist the run artifacts.

    Resuming continues the epoch count from the checkpoint; best-model
    tracking restarts from the resume point.
    """
    train_s, test_s, stats = split_and_normalize(
        pairs, cfg.train.split_fraction, cfg.seed
    )
    model = None
    adam = None
    start_epoch = 0
    prior_history = []
    if checkpoint:
        model, leftover = gat_mod.load_checkpoint(checkpoint)
        missing = {"adam", "epoch"} - set(leftover)
        if missing:
            raise ConfigError(
                f"checkpoint {checkpoint} is not resumable: missing "
                f"{', '.join(sorted(missing))}"
            )
        adam = ad.AdamState.from_dict(leftover["adam"])
        start_epoch = int(leftover["epoch"])
        prior_history = [tuple(row) for row in leftover.get("history", [])]
    res = train(
        [p.graph for p in train_s],
        cfg.train,
        cfg.loss,
        cfg.power,
        seed=cfg.seed,
        gat_cfg=cfg.gat,
        test=[p.graph for p in test_s],
        model=model,
        adam_state=adam,
        start_epoch=start_epoch,
    )
    full_history = prior_history + res.history
    os.makedirs(out_dir, exist_ok=True)
    write_history(os.path.join(out_dir, "history.csv"), full_history)
    common = {"config_digest": cfg.digest(), "norm_stats": stats.to_dict()}
    gat_mod.save_checkpoint(
        os.path.join(out_dir, "checkpoint_last.json"),
        res.model,
        {
            **common,
            "epoch": cfg.train.epochs,
            "adam": res.adam_state.to_dict(),
            "history": [list(row) for row in full_history],
        },
    )
    gat_mod.save_checkpoint(
        os.path.join(out_dir, "checkpoint_best.json"),
        res.best_model,
        {**common, "epoch": res.best_epoch},
    )
    write_config(cfg, os.path.join(out_dir, "config.json"))
    return res


def cmd_train(cfg: RunConfig, dataset_path, checkpoint) -> int:
    pairs = _load_pairs(dataset_path, cfg)
    res = _train_to_dir(cfg, pairs, cfg.out_dir, checkpoint=checkpoint)
    print(
        f"trained to epoch {cfg.train.epochs}; best epoch {res.best_epoch}; "
        f"outputs in {cfg.out_dir}"
    )
    return EXIT_OK


def _checkpoint_stats(leftover, path) -> FeatureStats:
    if "norm_stats" not in leftover:
        raise ConfigError(f"checkpoint {path} lacks normalization statistics")
    return FeatureStats.from_dict(leftover["norm_stats"])


def cmd_eval(cfg: RunConfig, dataset_path, checkpoint) -> int:
    model, leftover = gat_mod.load_checkpoint(checkpoint)
    stats = _checkpoint_stats(leftover, checkpoint)
    pairs = _load_pairs(dataset_path, cfg)
    if not pairs:
        raise ConfigError(f"dataset {dataset_path} is empty")
    demand = cfg.eval_demand_mbps()
    agg = cfg.eval.subsinr_agg
    k = pairs[0].scenario.n_ues
    n = pairs[0].scenario.n_cells
    with_oracle = n**k <= cfg.eval.oracle_budget

    header = ["seed", "gnn_power_w", "rsrp_power_w", "subsinr_power_w"]
    if with_oracle:
        header += ["oracle_power_w", "oracle_feasible"]
    header += [
        "gain_vs_rsrp_pct",
        "gain_vs_subsinr_pct",
        "gnn_switch_off",
        "gnn_gbr_ok",
    ]
    lines = [",".join(header)]
    sums = {name: 0.0 for name in header[1:]}
    first_reports = None
    for sample in pairs:
        s = sample.scenario
        graph = normalize_features(sample.graph, stats)
        gnn = evaluate_policy(
            gat_mod.harden(gat_mod.forward(graph, model)),
            s, cfg.power, demand, policy_name="gnn",
        )
        rsrp = evaluate_policy(
            associate_rsrp(s), s, cfg.power, demand, policy_name="rsrp"
        )
        sub = evaluate_policy(
            associate_ga_subsinr(s, agg=agg), s, cfg.power, demand,
            policy_name="ga_subsinr",
        )
        row = {
            "gnn_power_w": gnn.total_power_w,
            "rsrp_power_w": rsrp.total_power_w,
            "subsinr_power_w": sub.total_power_w,
        }
        reports = [gnn, rsrp, sub]
        if with_oracle:
            oracle = associate_oracle(s, cfg.power, budget=cfg.eval.oracle_budget)
            orep = evaluate_policy(
                oracle.association, s, cfg.power, demand, policy_name="oracle"
            )
            row["oracle_power_w"] = orep.total_power_w
            row["oracle_feasible"] = int(oracle.feasible)
            reports.append(orep)
        row["gain_vs_rsrp_pct"] = gain_percent(
            row["gnn_power_w"], row["rsrp_power_w"]
        )
        row["gain_vs_subsinr_pct"] = gain_percent(
            row["gnn_power_w"], row["subsinr_power_w"]
        )
        row["gnn_switch_off"] = gnn.switched_off_count
        row["gnn_gbr_ok"] = int(gnn.gbr_satisfied)
        cells = [str(s.seed)]
        for name in header[1:]:
            value = row[name]
            cells.append(repr(value) if isinstance(value, float) else str(value))
            sums[name] += value
        lines.append(",".join(cells))
        if first_reports is None:
            first_reports = (s, reports)

    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "eval.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    summary = {"n_instances": len(pairs)}
    for name in header[1:]:
        summary[f"mean_{name}"] = sums[name] / len(pairs)
    with open(
        os.path.join(cfg.out_dir, "eval_summary.json"), "w", encoding="utf-8"
    ) as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    export_heatmaps(first_reports[0], first_reports[1], cfg.out_dir)
    write_config(cfg, os.path.join(cfg.out_dir, "config.json"))
    print(
        f"evaluated {len(pairs)} instances; mean gnn power "
        f"{summary['mean_gnn_power_w']:.3f} W; outputs in {cfg.out_dir}"
    )
    return EXIT_OK


def _parse_grid(text: str) -> dict:
    """Parse 'key=1,2;other=0.5,1' into {key: [values]}."""
    grid = {}
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ConfigError(f"grid part {part!r} is not key=v1,v2,...")
        key, _, tail = part.partition("=")
        values = []
        for tok in tail.split(","):
            tok = tok.strip()
            if not tok:
                raise ConfigError(f"grid key {key!r} has an empty value")
            try:
                values.append(int(tok))
            except ValueError:
                try:
                    values.append(float(tok))
                except ValueError:
                    raise ConfigError(
                        f"grid value {tok!r} for key {key!r} is not a number"
                    ) from None
        grid[key.strip()] = values
    if not grid:
        raise ConfigError("empty grid")
    return grid


def _max_workers(n_points: int) -> int:
    env = os.environ.get("NESUA_THREADS", "").strip()
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise ConfigError(f"NESUA_THREADS must be an integer, got {env!r}") from None
        if cap < 1:
            raise ConfigError(f"NESUA_THREADS must be >= 1, got {cap}")
    else:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_points))


def _train_bandwidth_point(payload) -> None:
    """Sweep worker: generate and train one bandwidth configuration."""
    cfg_dict, w, sub_dir = payload
    cfg = RunConfig.from_dict(cfg_dict)
    cfg = dataclasses.replace(
        cfg, scenario=dataclasses.replace(cfg.scenario, bandwidth_mhz=w)
    )
    os.makedirs(sub_dir, exist_ok=True)
    records = _generate_records(cfg)
    write_jsonl(os.path.join(sub_dir, "dataset.jsonl"), records)
    pairs = [Sample(*from_record(rec, cfg.scenario)) for rec in records]
    _train_to_dir(cfg, pairs, sub_dir)
    with open(os.path.join(sub_dir, "DONE"), "w", encoding="utf-8") as fh:
        fh.write("ok\n")


def _train_lambda_point(payload) -> None:
    """Sweep worker: train one regularizer ratio on the shared dataset."""
    cfg_dict, ratio, dataset_path, sub_dir = payload
    cfg = RunConfig.from_dict(cfg_dict)
    lam1 = cfg.loss.lambda1
    cfg = dataclasses.replace(
        cfg, loss=LossConfig(lambda1=lam1, lambda2=ratio * lam1)
    )
    os.makedirs(sub_dir, exist_ok=True)
    pairs = [
        Sample(*from_record(rec, cfg.scenario)) for rec in read_jsonl(dataset_path)
    ]
    _train_to_dir(cfg, pairs, sub_dir)
    with open(os.path.join(sub_dir, "DONE"), "w", encoding="utf-8") as fh:
        fh.write("ok\n")


def _run_workers(worker, payloads, sub_dirs):
    """Run sweep workers, skipping sub-runs that already finished."""
    todo = [
        (payload, sub)
        for payload, sub in zip(payloads, sub_dirs)
        if not os.path.exists(os.path.join(sub, "DONE"))
    ]
    if not todo:
        return
    workers = _max_workers(len(todo))
    if workers == 1:
        for payload, _ in todo:
            worker(payload)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        list(pool.map(worker, [payload for payload, _ in todo]))


def _load_point_model(sub_dir):
    path = os.path.join(sub_dir, "checkpoint_best.json")
    model, leftover = gat_mod.load_checkpoint(path)
    return model, _checkpoint_stats(leftover, path)


def _eval_samples(cfg: RunConfig, stats: FeatureStats) -> list:
    samples = []
    for j in range(cfg.eval.n_instances):
        s = generate_scenario(cfg.scenario, cfg.seed + EVAL_SEED_OFFSET + j)
        g = build_graph(s, cfg.scenario.gamma_th_db)
        samples.append(Sample(s, normalize_features(g, stats)))
    return samples


def cmd_sweep(cfg: RunConfig, kind: str, grid_text: str) -> int:
    grid = _parse_grid(grid_text)
    os.makedirs(cfg.out_dir, exist_ok=True)
    write_config(cfg, os.path.join(cfg.out_dir, "config.json"))
    demand = cfg.eval_demand_mbps()
    agg = cfg.eval.subsinr_agg

    if kind == "bandwidth":
        if set(grid) != {"w", "k"}:
            raise ConfigError(
                f"bandwidth sweep grid needs keys w and k, got {sorted(grid)}"
            )
        ws, ks = grid["w"], grid["k"]
        sub_dirs = [os.path.join(cfg.out_dir, f"w{w!r}") for w in ws]
        payloads = [
            (cfg.to_dict(), w, sub) for w, sub in zip(ws, sub_dirs)
        ]
        _run_workers(_train_bandwidth_point, payloads, sub_dirs)
        models = {}
        test_sets = {}
        for w, sub in zip(ws, sub_dirs):
            model, stats = _load_point_model(sub)
            models[w] = model
            for k in ks:
                point_cfg = dataclasses.replace(
                    cfg,
                    scenario=dataclasses.replace(
                        cfg.scenario, bandwidth_mhz=w, n_ues=k
                    ),
                )
                test_sets[(w, k)] = _eval_samples(point_cfg, stats)
        result = sweep_bandwidth(
            models, test_sets, ks, ws, cfg.power, agg=agg, demand_mbps=demand
        )
    elif kind == "lambda":
        if set(grid) != {"ratio"}:
            raise ConfigError(
                f"lambda sweep grid needs key ratio, got {sorted(grid)}"
            )
        ratios = grid["ratio"]
        dataset_path = os.path.join(cfg.out_dir, "dataset.jsonl")
        if not os.path.exists(dataset_path):
            write_jsonl(dataset_path, _generate_records(cfg))
        sub_dirs = [os.path.join(cfg.out_dir, f"ratio{r!r}") for r in ratios]
        payloads = [
            (cfg.to_dict(), r, dataset_path, sub)
            for r, sub in zip(ratios, sub_dirs)
        ]
        _run_workers(_train_lambda_point, payloads, sub_dirs)
        models = {}
        shared_samples = None
        for ratio, sub in zip(ratios, sub_dirs):
            model, stats = _load_point_model(sub)
            models[ratio] = model
            if shared_samples is None:
                # all ratios share the dataset, split, and normalization
                pairs = _load_pairs(dataset_path, cfg)
                _, test_s, _ = split_and_normalize(
                    pairs, cfg.train.split_fraction, cfg.seed
                )
                shared_samples = test_s
        result = sweep_lambda(
            models, shared_samples, ratios, cfg.power, agg=agg, demand_mbps=demand
        )
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown sweep kind {kind!r}")

    path = write_sweep_csv(result, cfg.out_dir)
    print(f"sweep table written to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nesua",
        description=(
            "Energy-aware user association: dataset generation, attention-"
            "model training, policy evaluation, and comparison sweeps."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument(
            "--config", default=None,
            help="JSON run file; every omitted key takes its default",
        )
        sp.add_argument("--seed", type=int, default=None, help="override config seed")
        sp.add_argument("--out", default=None, help="override config out_dir")

    gen = sub.add_parser("gen", help="generate and serialize a scenario dataset")
    common(gen)

    trn = sub.add_parser("train", help="train a model on a generated dataset")
    common(trn)
    trn.add_argument("--dataset", required=True, help="dataset.jsonl from gen")
    trn.add_argument(
        "--checkpoint", default=None,
        help="resume from a checkpoint_last.json written by train",
    )

    ev = sub.add_parser("eval", help="score policies on a dataset")
    common(ev)
    ev.add_argument("--dataset", required=True, help="dataset.jsonl from gen")
    ev.add_argument("--checkpoint", required=True, help="trained checkpoint")

    sw = sub.add_parser("sweep", help="train and compare across a grid")
    common(sw)
    sw.add_argument("kind", choices=("bandwidth", "lambda"))
    sw.add_argument(
        "--grid", required=True,
        help="bandwidth: 'w=20,40,80;k=20,50'; lambda: 'ratio=0,0.5,1,2,4'",
    )
    return parser


def _merged_config(args) -> RunConfig:
    data = load_config(args.config) if args.config else {}
    cfg = RunConfig.from_dict(data)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = dataclasses.replace(cfg, out_dir=args.out)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _merged_config(args)
        if args.command == "gen":
            return cmd_gen(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.dataset, args.checkpoint)
        if args.command == "eval":
            return cmd_eval(cfg, args.dataset, args.checkpoint)
        return cmd_sweep(cfg, args.kind, args.grid)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (
        ContractError,
        ShapeError,
        BudgetExceededError,
        TrainingDiverged,
        FloatingPointError,
    ) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
