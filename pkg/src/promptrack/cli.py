"""Command-line entry point: ``promptrack synth|train|track|eval|ablate``.

Every command reads an optional sectioned config file (``--config``) and
``--set section.key=value`` overrides, which win. Exit codes: 0 success,
1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, load_config
from .data import SUITES, generate_synthetic, load_dataset, make_suites, write_suite
from .evalkit import (SequenceError, Thresholds, attribute_report, build_report, read_attribute_file, read_run_info,
                      render_radar, run_ope, write_run_info)
from .network import Network
from .pipeline import Tracker
from .training import run_training

log = logging.getLogger("promptrack")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

# sections that define the network; a checkpoint fixes them
ARCH_SECTIONS = ("encoder", "model")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _flag(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return value == "on"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="sectioned key-value config file")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="config override (repeatable, wins over --config)")
    common.add_argument("-v", "--verbose", action="store_true")

    data_src = argparse.ArgumentParser(add_help=False)
    g = data_src.add_mutually_exclusive_group()
    g.add_argument("--dataset", help="dataset root on disk")
    g.add_argument("--suite", choices=SUITES, help="synthetic suite generated from the config seed")
    data_src.add_argument("--layout", default="otb", choices=("otb", "lasot", "got10k"))

    p = _Parser(prog="promptrack", description="Promptable visual object tracking at desk scale.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="write synthetic suites to disk")
    s.add_argument("--out", required=True)
    s.add_argument("--suites", default=",".join(SUITES), help="comma-separated suite names")

    t = sub.add_parser("train", parents=[common], help="train one or both stages")
    t.add_argument("--out", required=True, help="directory for checkpoints and the loss log")
    t.add_argument("--stage", choices=("1", "2", "both"), default="both")
    t.add_argument("--init", help="stage-1 checkpoint (required for --stage 2)")
    t.add_argument("--dataset", help="training sequences on disk (default: synthetic plain split)")
    t.add_argument("--layout", default="otb", choices=("otb", "lasot", "got10k"))

    k = sub.add_parser("track", parents=[common, data_src], help="write raw tracking results")
    k.add_argument("--checkpoint", required=True)
    k.add_argument("--out", required=True)
    k.add_argument("--prompt", type=_flag, default=None, metavar="on|off")
    k.add_argument("--tpr", type=_flag, default=None, metavar="on|off")

    e = sub.add_parser("eval", parents=[common, data_src], help="score result files or a checkpoint")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--results", nargs="+", help="result directories written by 'track'")
    src.add_argument("--checkpoint")
    e.add_argument("--attributes", help="file of 'sequence: tag, tag' lines")
    e.add_argument("--allow-mixed", action="store_true", help="aggregate results with differing config hashes")
    e.add_argument("--out", help="directory for report files")

    a = sub.add_parser("ablate", parents=[common, data_src], help="baseline plus the three prompting variants")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--baseline", help="checkpoint without trained prompting (default: stage1.ckpt beside --checkpoint)")
    a.add_argument("--out", help="write the table here as well as to stdout")
    return p


# --------------------------------------------------------------------------
# helpers


def _config(args, base: RunConfig | None = None) -> RunConfig:
    if base is None:
        return load_config(args.config, args.set)
    # checkpoint-backed commands: the stored config is the base, architecture keys are fixed
    file_cfg = load_config(args.config) if args.config else None
    cfg = base
    default = RunConfig().to_dict()
    if file_cfg is not None:
        for section, values in file_cfg.to_dict().items():
            for key, value in values.items():
                if value != default[section][key]:
                    _set_runtime(cfg, f"{section}.{key}", _text(value))
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        key, value = item.split("=", 1)
        _set_runtime(cfg, key.strip(), value)
    return cfg


def _set_runtime(cfg: RunConfig, key: str, value: str) -> None:
    """Apply an override; architecture keys may only restate the checkpoint's value."""
    section = key.split(".", 1)[0]
    if section not in ARCH_SECTIONS:
        cfg.set(key, value)
        return
    probe = RunConfig()
    probe.set(key, value)
    name = key.split(".", 1)[1]
    if getattr(getattr(probe, section), name) != getattr(getattr(cfg, section), name):
        raise ConfigError(f"{key} is fixed by the checkpoint")


def _text(v) -> str:
    return ("true" if v else "false") if isinstance(v, bool) else str(v)


def _load_net(path: str) -> tuple[Network, dict]:
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    return Network.load(path)


def _dataset(args, cfg: RunConfig):
    if getattr(args, "dataset", None):
        ds = load_dataset(args.dataset, args.layout)
        for err in ds.errors:
            log.warning("skipped %s: %s", err.name, err.message)
        return list(ds)
    suite = getattr(args, "suite", None) or "plain"
    d = cfg.data
    specs = make_suites(d.suite_seed, d.sequences_per_suite, d.frames, d.canvas, kinds=(suite,))[suite]
    return [generate_synthetic(s) for s in specs]


def _track(net: Network, cfg: RunConfig, dataset, use_prompt=None, use_tpr=None, out=None):
    tracker = Tracker(net, cfg, use_prompt, use_tpr)
    outcome = run_ope(tracker, dataset, Thresholds.from_config(cfg.eval), cfg.config_hash(), out)
    if out is not None:
        write_run_info(out, cfg.config_hash(), variant=tracker.name,
                       errors={e.name: e.message for e in outcome.errors})
    return tracker.name, outcome


# --------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    cfg = _config(args)
    kinds = [k.strip() for k in args.suites.split(",") if k.strip()]
    unknown = [k for k in kinds if k not in SUITES]
    if unknown:
        raise UsageError(f"unknown suite(s): {', '.join(unknown)}")
    d = cfg.data
    suites = make_suites(d.suite_seed, d.sequences_per_suite, d.frames, d.canvas, kinds=kinds)
    for kind, specs in suites.items():
        root = write_suite(specs, Path(args.out) / kind)
        print(f"{kind}: {len(specs)} sequences -> {root}")
        for s in specs:
            print(f"  {s.name} frames={s.length} distractors={len(s.distractors)} occlusions={len(s.occlusions)}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    stages = {"1": (1,), "2": (2,), "both": (1, 2)}[args.stage]
    net = None
    if args.init:
        net, meta = _load_net(args.init)
        if meta.get("config_hash") != cfg.config_hash():
            log.warning("config differs from the initial checkpoint; architecture is taken from the checkpoint")
            arch = net.cfg
            for section in ARCH_SECTIONS:
                setattr(cfg, section, getattr(arch, section))
            net.cfg = cfg
    elif 2 in stages and 1 not in stages:
        raise UsageError("stage 2 needs a stage-1 checkpoint: pass --init")
    seqs = None
    if args.dataset:
        seqs = list(load_dataset(args.dataset, args.layout))
    net, records = run_training(cfg, seqs, stages, net, args.out)
    final = records[-1]["loss"] if records else float("nan")
    print(f"trained stages {','.join(map(str, stages))}: {len(records)} steps, final loss {final:.4f}")
    print(f"config_hash = {cfg.config_hash()}")
    print(f"checkpoint = {Path(args.out) / f'stage{stages[-1]}.ckpt'}")
    return EXIT_OK


def cmd_track(args) -> int:
    net, _ = _load_net(args.checkpoint)
    cfg = _config(args, net.cfg)
    # the variant flags become config values so they are covered by the hash
    if args.prompt is not None:
        cfg.track.use_prompt = args.prompt
    if args.tpr is not None:
        cfg.track.use_tpr = args.tpr
    name, outcome = _track(net, cfg, _dataset(args, cfg), out=args.out)
    print(f"variant = {name}")
    print(f"config_hash = {cfg.config_hash()}")
    print(f"sequences = {len(outcome.results)}")
    for err in outcome.errors:
        print(f"error {err.name}: {err.message}")
    return EXIT_OK


def _results_hash(dirs: list[str], allow_mixed: bool) -> str:
    hashes = {}
    for d in dirs:
        info = read_run_info(d)
        hashes[d] = info.get("config_hash", "")
    distinct = sorted(set(hashes.values()))
    if len(distinct) > 1 and not allow_mixed:
        detail = ", ".join(f"{d}={h or '?'}" for d, h in hashes.items())
        raise UsageError(f"result directories have different config hashes ({detail}); pass --allow-mixed")
    return distinct[0] if len(distinct) == 1 else "mixed:" + "+".join(h or "?" for h in distinct)


def cmd_eval(args) -> int:
    if args.checkpoint:
        net, _ = _load_net(args.checkpoint)
        cfg = _config(args, net.cfg)
        dataset = _dataset(args, cfg)
        _, outcome = _track(net, cfg, dataset)
        results, chash, errors = outcome.results, cfg.config_hash(), outcome.errors
    else:
        cfg = _config(args)
        dataset = _dataset(args, cfg)
        chash = _results_hash(args.results, args.allow_mixed)
        results, errors = [], []
        th = Thresholds.from_config(cfg.eval)
        remaining = list(dataset)
        for d in args.results:
            here = [seq for seq in remaining if (Path(d) / f"{seq.name}.txt").is_file()]
            outcome = run_ope(d, here, th, chash)
            results += outcome.results
            errors += outcome.errors
            remaining = [seq for seq in remaining if seq not in here]
        errors += [SequenceError(seq.name, "no result file") for seq in remaining]
    th = Thresholds.from_config(cfg.eval)
    report = build_report(results, th, chash)
    text = report.to_text()
    print(text, end="")
    for err in errors:
        print(f"error {err.name}: {err.message}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(text)
        (out / "curves.json").write_text(json.dumps(report.curves))
    if args.attributes:
        tags = read_attribute_file(args.attributes)
        rep = attribute_report(results, tags, th, config_hash=chash)
        print(rep.to_table(), end="")
        if args.out:
            (Path(args.out) / "attributes.tsv").write_text(rep.to_table())
            render_radar(rep, Path(args.out) / "attributes.png")
    return EXIT_OK


def cmd_ablate(args) -> int:
    net, _ = _load_net(args.checkpoint)
    cfg = _config(args, net.cfg)
    base_path = args.baseline or str(Path(args.checkpoint).with_name("stage1.ckpt"))
    if not Path(base_path).is_file():
        raise UsageError(f"baseline checkpoint not found: {base_path}; pass --baseline")
    base_net, _ = Network.load(base_path)
    dataset = _dataset(args, cfg)
    rows = [("baseline",) + _scores(_track(base_net, cfg, dataset, False, False)[1])]
    for prompt, tpr in ((False, False), (True, False), (True, True)):
        name, outcome = _track(net, cfg, dataset, prompt, tpr)
        rows.append((name,) + _scores(outcome))
    lines = [f"# config_hash = {cfg.config_hash()}", "variant\tsuccess_auc\tprecision_auc"]
    lines += [f"{n}\t{s:.4f}\t{p:.4f}" for n, s, p in rows]
    table = "\n".join(lines) + "\n"
    print(table, end="")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(table)
    return EXIT_OK


def _scores(outcome) -> tuple[float, float]:
    return outcome.report.success_auc, outcome.report.precision_auc


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "track": cmd_track, "eval": cmd_eval, "ablate": cmd_ablate}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, RuntimeError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
