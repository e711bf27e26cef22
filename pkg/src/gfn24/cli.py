"""Command-line entry point: ``python -m gfn24 <command> ...``.

Commands
--------
enumerate       list every canonical solution of one puzzle
build-dataset   write the four stratified splits for one target
train           train a policy on a dataset's train splits
eval            run a decode grid over one test split
run             dataset -> train -> transfer evaluation -> reports, from a JSON config
report          re-render the text tables / plot data from a report.json

Exit codes: 0 success, 1 stage failure (stage name on stderr), 2 an
unsolvable puzzle for ``enumerate``, 64 usage error.

``run`` is incremental.  Each artifact embeds ``input_hash``, a digest of
the config section that produced it together with the sha256 of every
upstream artifact it consumed.  A stage is skipped only if all of its
outputs exist and carry the expected hash; anything else is rebuilt, so
artifacts from different configs are never combined.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .dataset import (
    DEFAULT_SIZES,
    TRAIN_SPLITS,
    build_dataset,
    by_split,
    config_hash,
    dataset_config,
    dataset_filename,
    read_dataset,
    write_dataset,
)
from .decoding import DecodeConfig, default_grid, extended_grid
from .eval_harness import (
    ATTEMPTS,
    load_report,
    plot_series,
    render_transfer,
    report_records,
    run_grid,
    transfer_experiment,
)
from .game_env import DEFAULT_MAX_OPERAND, Puzzle
from .oracle import enumerate_solutions
from .policy import load_checkpoint, save_checkpoint
from .trainer import TrainConfig, train

EXIT_OK, EXIT_FAIL, EXIT_UNSOLVABLE, EXIT_USAGE = 0, 1, 2, 64
logger = logging.getLogger("gfn24")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _sha_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# -- experiment config -------------------------------------------------------------------


def _grid_from(grid) -> list[DecodeConfig]:
    if grid in (None, "default"):
        return default_grid()
    if grid == "extended":
        return extended_grid()
    if isinstance(grid, dict):
        temps = grid.get("temperatures", [0.3, 0.7, 1.1])
        return [DecodeConfig.from_dict({**s, "temperature": t}) for t in temps for s in grid["strategies"]]
    return [DecodeConfig.from_dict(d) for d in grid]


@dataclass
class ExperimentConfig:
    target_train: int = 24
    target_eval: list[int] = field(default_factory=lambda: [42])
    operand_range: tuple[int, int] = (1, DEFAULT_MAX_OPERAND)
    dataset_seed: int = 0
    sizes: dict = field(default_factory=lambda: dict(DEFAULT_SIZES))
    train: TrainConfig = field(default_factory=TrainConfig)
    grid: list[DecodeConfig] = field(default_factory=default_grid)
    eval_seed: int = 0
    attempts: int = ATTEMPTS
    out_dir: Path = Path("runs/default")

    KEYS = ("target_train", "target_eval", "operand_range", "dataset_seed", "sizes", "train", "grid",
            "eval_seed", "attempts", "out_dir")

    def __post_init__(self):
        if not self.grid:
            raise UsageError("grid must be nonempty")
        if not self.target_eval:
            raise UsageError("target_eval must list at least one target")
        if self.target_train in self.target_eval:
            raise UsageError("target_eval must differ from target_train")
        lo, hi = self.operand_range
        if not 1 <= lo <= hi:
            raise UsageError(f"bad operand_range {self.operand_range}")

    @classmethod
    def load(cls, path, seed: int | None = None) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        unknown = set(raw) - set(cls.KEYS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        try:
            train_cfg = TrainConfig.from_dict(raw.get("train", {}))
            grid = _grid_from(raw.get("grid"))
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad config: {exc}") from None
        cfg = cls(
            target_train=int(raw.get("target_train", 24)),
            target_eval=[int(t) for t in raw.get("target_eval", [42])],
            operand_range=tuple(raw.get("operand_range", (1, DEFAULT_MAX_OPERAND))),
            dataset_seed=int(raw.get("dataset_seed", 0)),
            sizes={**DEFAULT_SIZES, **raw.get("sizes", {})},
            train=train_cfg,
            grid=grid,
            eval_seed=int(raw.get("eval_seed", 0)),
            attempts=int(raw.get("attempts", ATTEMPTS)),
            out_dir=(path.parent / raw.get("out_dir", "runs/default")),
        )
        if seed is not None:
            cfg.dataset_seed = cfg.eval_seed = seed
            cfg.train = TrainConfig.from_dict({**cfg.train.to_dict(), "seed": seed})
        return cfg


# -- stages ------------------------------------------------------------------------------


class StageFailed(Exception):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {cause}")


def _read_json_meta(path: Path, kind: str) -> dict | None:
    try:
        if kind == "jsonl":
            return json.loads(path.read_text().splitlines()[0]).get("meta")
        if kind == "json":
            return json.loads(path.read_text()).get("meta")
        first = path.read_text().splitlines()[0]
        prefix = "# input_hash: "
        return {"input_hash": first[len(prefix):]} if first.startswith(prefix) else None
    except (OSError, IndexError, ValueError, AttributeError):
        return None


def _fresh(paths: dict[Path, str], want: str) -> bool:
    for path, kind in paths.items():
        meta = _read_json_meta(path, kind)
        if not meta or meta.get("input_hash") != want:
            return False
    return True


def stage_dataset(cfg: ExperimentConfig, target: int) -> tuple[Path, str, bool]:
    """Returns (path, sha256, rebuilt)."""
    dcfg = dataset_config(target, cfg.dataset_seed, cfg.sizes, cfg.operand_range)
    want = _digest({"stage": "dataset", **dcfg})
    path = cfg.out_dir / "datasets" / dataset_filename(target, cfg.dataset_seed)
    if _fresh({path: "jsonl"}, want):
        return path, _sha_file(path), False
    path.parent.mkdir(parents=True, exist_ok=True)
    records = build_dataset(target, cfg.dataset_seed, cfg.sizes, tuple(cfg.operand_range))
    sha = write_dataset(path, records, {**dcfg, "config_hash": config_hash(dcfg), "input_hash": want})
    return path, sha, True


def train_meta(train_cfg: TrainConfig, target: int, dataset_sha: str) -> dict:
    return {
        "train_config": train_cfg.to_dict(),
        "train_config_hash": train_cfg.digest(),
        "train_targets": [target],
        "dataset_sha256": dataset_sha,
    }


def stage_train(cfg: ExperimentConfig, dataset: Path, dataset_sha: str) -> tuple[Path, str, bool]:
    meta = train_meta(cfg.train, cfg.target_train, dataset_sha)
    want = _digest({"stage": "train", **meta})
    ckpt, log_path = cfg.out_dir / "checkpoint.json", cfg.out_dir / "train_log.jsonl"
    if _fresh({ckpt: "json", log_path: "jsonl"}, want):
        return ckpt, _sha_file(ckpt), False
    records, _ = read_dataset(dataset)
    splits = by_split(records)
    model, log = train(cfg.train, [r for s in TRAIN_SPLITS for r in splits[s]])
    sha = save_checkpoint(model, ckpt, {**meta, "input_hash": want})
    log_path.write_text("\n".join([json.dumps({"meta": {"input_hash": want}}, sort_keys=True)] + log.lines()) + "\n")
    return ckpt, sha, True


def _plot_csv(rows, input_hash: str) -> str:
    buf = io.StringIO()
    buf.write(f"# input_hash: {input_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["series", "temperature", "sr"])
    for series, t, sr in rows:
        w.writerow([series, f"{t:g}", f"{sr:.4f}"])
    return buf.getvalue()


def render_outputs(reps_in, outs: dict, input_hash: str) -> tuple[str, str]:
    """``report.txt`` and ``plot_data.csv`` text for one in-distribution set and its transfer targets."""
    txt = [f"# input_hash: {input_hash}", ""]
    rows = plot_series(reps_in, {})
    for target in sorted(outs):
        txt.append(render_transfer(reps_in, outs[target]))
        rows += plot_series({}, outs[target])
    return "\n".join(txt), _plot_csv(rows, input_hash)


def stage_report(cfg: ExperimentConfig, ckpt: Path, ckpt_sha: str, datasets: dict[int, tuple[Path, str]]) -> bool:
    want = _digest({
        "stage": "report",
        "checkpoint_sha256": ckpt_sha,
        "datasets": {str(t): sha for t, (_, sha) in sorted(datasets.items())},
        "grid": [c.to_dict() for c in cfg.grid],
        "eval_seed": cfg.eval_seed,
        "attempts": cfg.attempts,
        "target_train": cfg.target_train,
    })
    outs = {cfg.out_dir / "report.json": "json", cfg.out_dir / "report.txt": "txt", cfg.out_dir / "plot_data.csv": "txt"}
    if _fresh(outs, want):
        return False
    loaded = load_checkpoint(ckpt)
    in_records, _ = read_dataset(datasets[cfg.target_train][0])
    meta = {"dataset_sha256": {str(t): sha for t, (_, sha) in sorted(datasets.items())}}
    reps_in, by_target = {}, {}
    for target in cfg.target_eval:
        out_records, _ = read_dataset(datasets[target][0])
        reps_in, by_target[target] = transfer_experiment(
            loaded, in_records, out_records, cfg.grid, cfg.eval_seed,
            expected_train_target=cfg.target_train, attempts=cfg.attempts, metadata=meta)
    records = report_records(reps_in, {}) + [
        r for t in sorted(by_target) for r in report_records(reps_in, by_target[t]) if r["role"] == "transfer"
    ]
    doc = {"meta": {"input_hash": want, "checkpoint_sha256": ckpt_sha, "eval_seed": cfg.eval_seed, **meta},
           "records": records}
    (cfg.out_dir / "report.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    txt, plot = render_outputs(reps_in, by_target, want)
    (cfg.out_dir / "report.txt").write_text(txt)
    (cfg.out_dir / "plot_data.csv").write_text(plot)
    return True


def run_experiment(cfg: ExperimentConfig) -> dict[str, bool]:
    """Run all stages; returns ``{stage: rebuilt}``.  Raises :class:`StageFailed`."""
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    done: dict[str, bool] = {}
    datasets = {}
    for target in [cfg.target_train, *cfg.target_eval]:
        try:
            path, sha, rebuilt = stage_dataset(cfg, target)
        except Exception as exc:
            raise StageFailed(f"dataset-{target}", exc) from exc
        datasets[target] = (path, sha)
        done[f"dataset-{target}"] = rebuilt
    try:
        ckpt, ckpt_sha, done["train"] = stage_train(cfg, *datasets[cfg.target_train])
    except Exception as exc:
        raise StageFailed("train", exc) from exc
    try:
        done["report"] = stage_report(cfg, ckpt, ckpt_sha, datasets)
    except Exception as exc:
        raise StageFailed("report", exc) from exc
    return done


# -- commands ----------------------------------------------------------------------------


def cmd_enumerate(args) -> int:
    puzzle = Puzzle(tuple(args.numbers), args.target)
    sols = enumerate_solutions(puzzle)
    if args.json:
        print(sols.to_json())
    else:
        print(f"Input: {' '.join(map(str, args.numbers))}  target {args.target}")
        print(f"count: {sols.count}")
        for i, rendered in enumerate(sols.to_record()["solutions"], 1):
            print(f"--- solution {i}")
            print(rendered)
    return EXIT_OK if sols.count else EXIT_UNSOLVABLE


def cmd_build_dataset(args) -> int:
    sizes = {"train_easy": args.train_easy, "train_hard": args.train_hard, "test": args.test}
    dcfg = dataset_config(args.target, args.seed, sizes, tuple(args.range))
    records = build_dataset(args.target, args.seed, sizes, tuple(args.range))
    out = Path(args.out) if args.out else Path(dataset_filename(args.target, args.seed))
    out.parent.mkdir(parents=True, exist_ok=True)
    sha = write_dataset(out, records, {**dcfg, "config_hash": config_hash(dcfg)})
    print(f"{out}  {len(records)} records  sha256 {sha}")
    return EXIT_OK


def cmd_train(args) -> int:
    base = json.loads(Path(args.train_config).read_text()) if args.train_config else {}
    for name in ("steps", "seed", "batch_size", "hidden"):
        if getattr(args, name) is not None:
            base[name] = getattr(args, name)
    train_cfg = TrainConfig.from_dict(base)
    records, meta = read_dataset(args.dataset)
    targets = sorted({r.puzzle.target for r in records})
    if len(targets) != 1:
        raise UsageError(f"dataset mixes targets {targets}")
    splits = by_split(records)
    model, log = train(train_cfg, [r for s in TRAIN_SPLITS for r in splits[s]])
    sha = save_checkpoint(model, args.out, train_meta(train_cfg, targets[0], _sha_file(Path(args.dataset))))
    if args.log:
        Path(args.log).write_text("\n".join(log.lines()) + "\n")
    print(f"{args.out}  sha256 {sha}  log_z {model.log_z:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    records, _ = read_dataset(args.dataset)
    chosen = [r for r in records if r.split == args.split]
    if not chosen:
        raise UsageError(f"no records in split {args.split!r}")
    grid = _grid_from(args.grid)
    rep = run_grid(model, chosen, grid, args.seed, args.attempts, model_label="trained", split=args.split,
                   metadata={"checkpoint_sha256": _sha_file(Path(args.checkpoint))})
    text = json.dumps(rep.to_dict(), sort_keys=True, indent=1) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    for c in rep.cells:
        ratio = "–" if c.tc_over_sr is None else f"{c.tc_over_sr:.2f}"
        print(f"{c.config.key:<18} SR {c.sr:.2f}  TC {c.tc_mean:.2f}  TC/SR {ratio}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config, seed=args.seed)
    try:
        done = run_experiment(cfg)
    except StageFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    for stage, rebuilt in done.items():
        print(f"{stage:<12} {'built' if rebuilt else 'up to date'}")
    print(f"artifacts in {cfg.out_dir}")
    return EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        path = path / "report.json"
    try:
        text = path.read_text()
    except OSError as exc:
        raise UsageError(str(exc)) from None
    reps_in, outs, meta = load_report(text)
    txt, plot = render_outputs(reps_in, outs, meta.get("input_hash", ""))
    print(txt, end="")
    if args.plot:
        Path(args.plot).write_text(plot)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gfn24", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("enumerate", help="list canonical solutions of a puzzle")
    e.add_argument("numbers", type=int, nargs=4)
    e.add_argument("--target", type=int, default=24)
    e.add_argument("--json", action="store_true")
    e.set_defaults(func=cmd_enumerate)

    d = sub.add_parser("build-dataset", help="write stratified splits for one target")
    d.add_argument("--target", type=int, default=24)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--range", type=int, nargs=2, default=[1, DEFAULT_MAX_OPERAND], metavar=("LO", "HI"))
    d.add_argument("--train-easy", type=int, default=DEFAULT_SIZES["train_easy"])
    d.add_argument("--train-hard", type=int, default=DEFAULT_SIZES["train_hard"])
    d.add_argument("--test", type=int, default=DEFAULT_SIZES["test"])
    d.add_argument("--out")
    d.set_defaults(func=cmd_build_dataset)

    t = sub.add_parser("train", help="train on a dataset's train splits")
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--train-config", help="JSON file with TrainConfig fields")
    t.add_argument("--steps", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--hidden", type=int)
    t.add_argument("--log", help="write the JSON-lines training log here")
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("eval", help="run a decode grid on one test split")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--dataset", required=True)
    v.add_argument("--split", default="test_lowdiv")
    v.add_argument("--grid", choices=("default", "extended"), default="default")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--attempts", type=int, default=ATTEMPTS)
    v.add_argument("--out")
    v.set_defaults(func=cmd_eval)

    r = sub.add_parser("run", help="full pipeline from a JSON experiment config")
    r.add_argument("config")
    r.add_argument("--seed", type=int, help="override dataset, training and evaluation seeds")
    r.set_defaults(func=cmd_run)

    o = sub.add_parser("report", help="re-render tables from report.json")
    o.add_argument("path", help="report.json or a run directory")
    o.add_argument("--plot", help="also write plot data CSV here")
    o.set_defaults(func=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"gfn24: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"gfn24 {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE if args.command == "enumerate" else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
