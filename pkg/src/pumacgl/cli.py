"""Command-line experiment runner.

    pumacgl gen       --config cfg.json --seed 0 --out graph.json
    pumacgl split     --config cfg.json --seed 0 --out stream.json
    pumacgl condense  --config cfg.json --seed 0 --task 2 --bank puma --out entry.json
    pumacgl run       --config cfg.json --out runs/
    pumacgl report    --runs runs/ --out report/

Exit codes: 0 success, 2 configuration or input error, 3 runtime error.
"""

import argparse
import itertools
import json
import logging
import shutil
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import ConfigError, ExperimentConfig, build_stream, config_from_dict, load_dataset, seeded
from .graph import save_graph
from .memory import MemoryBank, load_bank, save_bank, save_entry
from .metrics import PerformanceMatrix, render_report, summarize
from .nn import params_from_dict, save_params
from .serialize import FORMAT_VERSION, FormatError, digest, file_digest, read_json, write_json
from .stream import save_stream
from .trainer import BANK_CHOICES, MODES, ContinualState, build_entry, run_continual, task_budget

log = logging.getLogger("pumacgl")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

# ablation axes a config's "grid" may sweep; values are lists
GRID_AXES = {
    "tim": ("train", "tim"),
    "retrain": ("train", "retrain"),
    "pseudo_label": ("condense", "pseudo_label"),
    "activation": ("condense", "activation"),
    "encoder_dim": ("condense", "encoder_dim"),
    "label_alloc": ("condense", "label_alloc"),
    "budget_ratio": (None, "budget_ratio"),
}


def load_config(args) -> tuple:
    """The effective config (file plus flag overrides) and its ablation grid."""
    doc = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {args.config} not found")
        except ValueError as exc:
            raise ConfigError(f"config file {args.config}: {exc}")
    grid = doc.pop("grid", {}) if isinstance(doc, dict) else {}
    cfg = config_from_dict(doc)
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seeds"] = (args.seed,)
    if getattr(args, "bank", None):
        over["banks"] = (args.bank,)
    if getattr(args, "mode", None):
        over["modes"] = (args.mode.replace("-", "_"),)
    if getattr(args, "budget_ratio", None) is not None:
        over["budget_ratio"] = args.budget_ratio
    if getattr(args, "out", None) and args.command == "run":
        over["out"] = args.out
    try:
        cfg = replace(cfg, **over)
    except ValueError as exc:
        raise ConfigError(str(exc))
    bad = set(grid) - set(GRID_AXES)
    if bad:
        raise ConfigError(f"unknown grid axes {sorted(bad)}; choose from {sorted(GRID_AXES)}")
    if any(not isinstance(v, list) or not v for v in grid.values()):
        raise ConfigError("grid axes must be non-empty lists")
    return cfg, grid


def expand_grid(cfg: ExperimentConfig, grid: dict):
    """Yield (suffix, config) for every point of the ablation grid."""
    axes = sorted(grid)
    for values in itertools.product(*(grid[a] for a in axes)):
        c = cfg
        for axis, v in zip(axes, values):
            section, name = GRID_AXES[axis]
            try:
                if section is None:
                    c = replace(c, **{name: v})
                else:
                    c = replace(c, **{section: replace(getattr(c, section), **{name: v})})
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"grid {axis}={v!r}: {exc}")
        yield "".join(f"-{a}={v}" for a, v in zip(axes, values)), c


# -- subcommands --------------------------------------------------------------

def cmd_gen(args):
    cfg, _ = load_config(args)
    if "sbm" not in cfg.dataset:
        raise ConfigError("gen needs an 'sbm' dataset section")
    g = load_dataset(cfg, cfg.seeds[0])
    save_graph(g, args.out)
    print(f"wrote {g.num_nodes} nodes, {g.num_edges} edges to {args.out}")


def cmd_split(args):
    cfg, _ = load_config(args)
    seed = cfg.seeds[0]
    stream = build_stream(cfg, seed)
    save_stream(stream, args.out, {"dataset": cfg.dataset, "stream": cfg.to_dict()["stream"], "seed": seed})
    print(f"wrote {len(stream)} tasks to {args.out}")


def cmd_condense(args):
    cfg, _ = load_config(args)
    seed = cfg.seeds[0]
    kind = cfg.banks[0]
    if kind in ("finetune", "joint"):
        raise ConfigError(f"bank kind {kind!r} keeps no replay entries")
    stream = build_stream(cfg, seed)
    if not 0 <= args.task < len(stream):
        raise ConfigError(f"task {args.task} outside 0..{len(stream) - 1}")
    bank = load_bank(args.bank_dir) if args.bank_dir else MemoryBank()
    if len(bank) != args.task:
        raise ConfigError(f"bank holds {len(bank)} entries; condensing task {args.task} needs exactly {args.task}")
    tcfg, ccfg = seeded(cfg, seed)
    entry = build_entry(kind, stream[args.task], bank, task_budget(stream, cfg.budget_ratio, args.task),
                        ccfg, tcfg, cfg.edge_keep_ratio)
    save_entry(entry, args.out)
    print(f"wrote {entry.budget}-node replay entry for task {args.task} to {args.out}")


def _cell_dir(root, kind, mode, seed, suffix):
    return Path(root) / f"{kind}{suffix}" / mode / f"seed{seed}"


def _checkpoint(run_dir, state, k):
    ck = run_dir / "checkpoints" / f"task_{k:03d}"
    save_params(state.params, ck / "model.json", classes=state.classes)
    if len(state.bank):
        save_bank(state.bank, ck / "bank")
    write_json(ck / "progress.json", {
        "task": k,
        "bank_kind": state.bank.kind,
        "matrices": {m: M.to_lists() for m, M in state.matrices.items()},
        "loss_curves": state.loss_curves,
    })


def _resume(run_dir, K):
    cks = sorted((run_dir / "checkpoints").glob("task_*/progress.json"))
    if not cks:
        return None
    ck = cks[-1].parent
    prog = read_json(ck / "progress.json")
    model = read_json(ck / "model.json")
    state = ContinualState(
        params=params_from_dict(model),
        bank=load_bank(ck / "bank") if (ck / "bank").exists() else MemoryBank(),
        classes=list(model["classes"]),
        loss_curves=[list(c) for c in prog["loss_curves"]],
        matrices={m: PerformanceMatrix.from_lists(rows, K) for m, rows in prog["matrices"].items()},
    )
    log.info("resuming %s after task %d", run_dir, prog["task"])
    return state


def run_cell(cfg: ExperimentConfig, kind, mode, seed, run_dir: Path, force=False):
    """Run one (bank kind, mode, seed) cell into ``run_dir``; returns False if it was already complete."""
    tcfg, ccfg = seeded(cfg, seed)
    effective = replace(cfg, banks=(kind,), modes=(mode,), seeds=(seed,), train=tcfg, condense=ccfg)
    manifest = {
        "format_version": FORMAT_VERSION,
        "package_version": __version__,
        "bank": kind,
        "mode": mode,
        "seed": seed,
        "config": effective.to_dict(),
        "config_digest": digest({k: v for k, v in effective.to_dict().items() if k != "out"}),
    }
    man_path = run_dir / "manifest.json"
    if run_dir.exists() and not force:
        if man_path.exists():
            old = read_json(man_path)
            if old.get("config_digest") != manifest["config_digest"]:
                raise ConfigError(f"{run_dir} holds a run with a different config; use --force")
            if (run_dir / "result.json").exists():
                log.info("%s complete, skipping", run_dir)
                return False
    elif force and run_dir.exists():
        shutil.rmtree(run_dir)

    stream = build_stream(cfg, seed)
    write_json(man_path, manifest)
    state = _resume(run_dir, len(stream)) if not force else None
    state, M = run_continual(stream, kind, tcfg, ccfg, cfg.budget_ratio, mode, state,
                             on_task_end=lambda st, k: _checkpoint(run_dir, st, k),
                             edge_keep_ratio=cfg.edge_keep_ratio)
    if kind not in ("finetune", "joint"):
        save_bank(state.bank, run_dir / "bank")
    save_params(state.params, run_dir / "model.json", classes=state.classes)
    s = summarize(M)
    with open(run_dir / "matrix.csv", "w") as fh:
        for i in range(M.K):
            fh.write(",".join(repr(float(x)) if j <= i else "" for j, x in enumerate(M.values[i])) + "\n")
    write_json(run_dir / "result.json", {
        "bank": kind, "mode": mode, "seed": seed,
        "matrix": M.to_lists(), "ap": s["ap"], "map": s["map"], "bwt": s["bwt"],
        "loss_curves": state.loss_curves,
        "bank_sha256": {p.name: file_digest(p) for p in sorted((run_dir / "bank").glob("*.json"))}
        if (run_dir / "bank").exists() else {},
    })
    return True


def cmd_run(args):
    cfg, grid = load_config(args)
    out = Path(cfg.out)
    cells = []
    for suffix, c in expand_grid(cfg, grid):
        for kind in c.banks:
            for mode in c.modes:
                for seed in c.seeds:
                    cells.append((c, kind, mode, seed, _cell_dir(out, kind, mode, seed, suffix), suffix))
    done = 0
    for c, kind, mode, seed, d, suffix in cells:
        log.info("cell %s %s seed %d%s", kind, mode, seed, suffix)
        done += run_cell(c, kind, mode, seed, d, args.force)
    runs = collect_runs(out)
    render_report(runs, out / "report")
    print(f"{len(cells)} cells ({done} executed); report in {out / 'report'}")


def collect_runs(root):
    runs = []
    for res in sorted(Path(root).glob("**/result.json")):
        r = read_json(res)
        d = res.parent
        rel = d.relative_to(root)
        K = len(r["matrix"])
        man = read_json(d / "manifest.json") if (d / "manifest.json").exists() else {}
        runs.append({
            "name": "__".join(rel.parts),
            "group": "/".join(rel.parts[:-1]),
            "seed": r["seed"],
            "matrix": PerformanceMatrix.from_lists(r["matrix"], K),
            "config": man.get("config", {}),
            "loss_curves": r.get("loss_curves", []),
        })
    return runs


def cmd_report(args):
    runs = collect_runs(args.runs)
    if not runs:
        raise ConfigError(f"no completed runs under {args.runs}")
    out = render_report(runs, args.out)
    print((out / "table.txt").read_text(), end="")


def build_parser():
    p = argparse.ArgumentParser(prog="pumacgl", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="experiment config JSON")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=out_required)

    common(sub.add_parser("gen", help="write an SBM graph file"))
    common(sub.add_parser("split", help="write a stream manifest"))
    sp = sub.add_parser("condense", help="build one replay entry for one task")
    common(sp)
    sp.add_argument("--task", type=int, required=True)
    sp.add_argument("--bank", choices=BANK_CHOICES)
    sp.add_argument("--bank-dir", help="bank archive holding the entries of earlier tasks")
    sp.add_argument("--budget-ratio", type=float)
    sp = sub.add_parser("run", help="run every (bank x seed x mode) cell")
    common(sp, out_required=False)
    sp.add_argument("--bank", choices=BANK_CHOICES)
    sp.add_argument("--mode", choices=[m.replace("_", "-") for m in MODES])
    sp.add_argument("--budget-ratio", type=float)
    sp.add_argument("--force", action="store_true")
    sp = sub.add_parser("report", help="aggregate completed runs")
    sp.add_argument("--runs", required=True)
    sp.add_argument("--out", required=True)
    return p


COMMANDS = {"gen": cmd_gen, "split": cmd_split, "condense": cmd_condense, "run": cmd_run, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ConfigError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, FloatingPointError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
