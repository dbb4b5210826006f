"""Command-line entry point.

Exit codes: 0 success, 1 validation failure, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from pathlib import Path

from . import __version__
from .codebook import (
    DEFAULT_K,
    DEFAULT_SUBSET_FRACTION,
    Codebook,
    CodebookError,
    EmbeddingDir,
    MissingEmbeddingError,
    SubsetTooSmallError,
    build_codebook,
)
from .judge import KINDS, MissingFieldError, build_requests, write_requests
from .manifest import ManifestError, load_manifest, summarize
from .metrics import (
    DEFAULT_GATE_THRESHOLD,
    AliasTable,
    corpus_rouge_l,
    corpus_wer,
    corpus_weighted_f1,
    group_by_task,
    load_eval_pairs,
    quality_gate,
)
from .runplan import LrScheduleConfig, epoch_steps, lr_at
from .sampler import BatchPlan, ConfigError, PlanError, Regime, RegimeConfig, load_config, make_plan
from .validate import validate_plan

OK, INVALID_INPUT, RUNTIME_ERROR = 0, 1, 2


class CommandFailed(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def _dump_json(payload, out: str | None) -> None:
    text = json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load_manifest(path: str):
    if not Path(path).is_file():
        raise CommandFailed(RUNTIME_ERROR, f"manifest not found: {path}")
    try:
        return load_manifest(path)
    except ManifestError as exc:
        raise CommandFailed(INVALID_INPUT, f"invalid manifest: {exc}") from None


def _load_codebook(path: str | None, regime: Regime):
    if path is None:
        if regime in (Regime.ADS, Regime.HYBRID):
            raise CommandFailed(
                RUNTIME_ERROR,
                f"the {regime.value} regime samples by cluster and needs --codebook "
                f"(create one with `taskmix build-codebook`)",
            )
        return None
    if not Path(path).is_file():
        raise CommandFailed(RUNTIME_ERROR, f"codebook not found: {path}")
    try:
        return Codebook.load(path)
    except CodebookError as exc:
        raise CommandFailed(RUNTIME_ERROR, f"unreadable codebook: {exc}") from None


def _resolve_config(args) -> RegimeConfig:
    if not Path(args.config).is_file():
        raise CommandFailed(RUNTIME_ERROR, f"config not found: {args.config}")
    try:
        base = load_config(args.config).to_dict()
        overrides = {
            "seed": args.seed,
            "batch_size": args.batch_size,
            "regime": args.regime,
            "switch_step": args.switch_step,
            "replay_fraction": args.replay_fraction,
            "total_steps": args.total_steps,
        }
        base.update({k: v for k, v in overrides.items() if v is not None})
        if Regime.parse(base["regime"]) is not Regime.HYBRID and args.switch_step is None:
            base["switch_step"] = None
        return RegimeConfig.from_dict(base)
    except (ConfigError, TypeError) as exc:
        raise CommandFailed(INVALID_INPUT, f"invalid config: {exc}") from None


# ----------------------------------------------------------------- commands


def cmd_build_codebook(args) -> int:
    manifest = _load_manifest(args.manifest)
    if not Path(args.embeddings).is_dir():
        raise CommandFailed(RUNTIME_ERROR, f"embeddings directory not found: {args.embeddings}")
    try:
        codebook = build_codebook(
            manifest, EmbeddingDir(args.embeddings), k=args.k, subset_fraction=args.subset_fraction, seed=args.seed
        )
    except MissingEmbeddingError as exc:
        raise CommandFailed(RUNTIME_ERROR, str(exc)) from None
    except SubsetTooSmallError as exc:
        raise CommandFailed(INVALID_INPUT, str(exc)) from None
    except (CodebookError, ValueError) as exc:
        raise CommandFailed(INVALID_INPUT, str(exc)) from None
    codebook.save(args.out)
    _say(
        f"codebook: K={codebook.k} d={codebook.dim} subset={codebook.fit_size} "
        f"iterations={codebook.iterations} inertia={codebook.inertia:.6g} seed={codebook.seed} -> {args.out}"
    )
    return OK


def cmd_plan_batches(args) -> int:
    config = _resolve_config(args)
    manifest = _load_manifest(args.manifest)
    codebook = _load_codebook(args.codebook, config.regime)
    try:
        plan = make_plan(manifest, config, codebook)
    except (ConfigError, PlanError) as exc:
        raise CommandFailed(INVALID_INPUT, str(exc)) from None
    if args.emit_lr:
        try:
            lr_config = LrScheduleConfig(
                epoch1_steps=epoch_steps(len(manifest), config.batch_size), total_steps=config.total_steps
            )
        except ValueError as exc:
            raise CommandFailed(INVALID_INPUT, f"cannot build learning-rate schedule: {exc}") from None
        plan = plan.with_lr(lambda step: lr_at(step, lr_config))
        plan.header["emit_lr"] = True
    plan.save(args.out)

    per_task = Counter(it.task.value for b in plan for it in b.items)
    stages = Counter((b.regime.value, b.stage) for b in plan)
    _say(f"plan: regime={config.regime.value} steps={len(plan)} batch_size={config.batch_size} seed={config.seed} -> {args.out}")
    for task, n in sorted(per_task.items()):
        _say(f"  {task}: {n} items")
    for (regime, stage), n in stages.items():
        _say(f"  {regime}{'/' + stage if stage else ''}: {n} batches")
    return OK


def cmd_validate_plan(args) -> int:
    config = _resolve_config(args)
    manifest = _load_manifest(args.manifest)
    codebook = _load_codebook(args.codebook, config.regime) if args.codebook else None
    if not Path(args.plan).is_file():
        raise CommandFailed(RUNTIME_ERROR, f"plan not found: {args.plan}")
    try:
        plan = BatchPlan.load(args.plan)
    except PlanError as exc:
        raise CommandFailed(INVALID_INPUT, str(exc)) from None
    violations = validate_plan(plan, manifest, config, codebook)
    if violations:
        _say(f"INVALID: {violations[0]}")
        if len(violations) > 1:
            _say(f"  ({len(violations) - 1} further violation(s))")
        return INVALID_INPUT
    _say(f"OK: {len(plan)} batches satisfy every {config.regime.value} invariant")
    return OK


def cmd_eval(args) -> int:
    try:
        pairs = load_eval_pairs(args.pairs)
    except FileNotFoundError:
        raise CommandFailed(RUNTIME_ERROR, f"pairs file not found: {args.pairs}") from None
    except ValueError as exc:
        raise CommandFailed(INVALID_INPUT, str(exc)) from None
    try:
        table = AliasTable.load(args.alias_table) if args.alias_table else None
    except FileNotFoundError:
        raise CommandFailed(RUNTIME_ERROR, f"alias table not found: {args.alias_table}") from None
    except ValueError as exc:
        raise CommandFailed(INVALID_INPUT, f"bad alias table: {exc}") from None
    reports = {}
    try:
        for task, group in sorted(group_by_task(pairs).items(), key=lambda kv: kv[0].value):
            if args.metric == "wer":
                rep = corpus_wer(group, lowercase=not args.keep_case, strip_punct=args.strip_punct)
            elif args.metric == "f1":
                rep = corpus_weighted_f1(group, table)
            else:
                rep = corpus_rouge_l(group, lowercase=not args.keep_case)
            reports[task.value] = rep
    except ValueError as exc:
        raise CommandFailed(INVALID_INPUT, str(exc)) from None
    payload = {
        "metric": args.metric,
        "provenance": {"tool": "taskmix", "version": __version__, "pairs": len(pairs)},
        "reports": {t: r.to_dict() for t, r in reports.items()},
    }
    _dump_json(payload, args.out)
    if args.detail:
        with Path(args.detail).open("w", encoding="utf-8") as f:
            for task, rep in reports.items():
                for item in rep.items:
                    f.write(json.dumps({"task": task, **item}, ensure_ascii=False) + "\n")
    for task, rep in reports.items():
        _say(f"{args.metric} [{task}] = {rep.score:.6f} over {len(rep.items)} pairs")
    return OK


def cmd_stats(args) -> int:
    manifest = _load_manifest(args.manifest)
    _dump_json(summarize(manifest), args.out)
    return OK


def cmd_emit_judge_requests(args) -> int:
    records = []
    try:
        with Path(args.pairs).open("r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                if line.strip():
                    records.append(json.loads(line))
    except FileNotFoundError:
        raise CommandFailed(RUNTIME_ERROR, f"pairs file not found: {args.pairs}") from None
    except json.JSONDecodeError as exc:
        raise CommandFailed(INVALID_INPUT, f"{args.pairs}:{line_no}: malformed JSON ({exc.msg})") from None
    try:
        requests = build_requests(records, args.kind)
    except MissingFieldError as exc:
        raise CommandFailed(INVALID_INPUT, str(exc)) from None
    write_requests(requests, args.out)
    _say(f"wrote {len(requests)} {args.kind} judge request(s) -> {args.out}")
    return OK


def cmd_quality_gate(args) -> int:
    groups: dict[str, list] = {}
    try:
        with Path(args.candidates).open("r", encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    rec = json.loads(line)
                    groups.setdefault(str(rec.get("group", "")), []).append((str(rec["id"]), float(rec["wer"])))
        selected = quality_gate(groups, args.threshold)
    except FileNotFoundError:
        raise CommandFailed(RUNTIME_ERROR, f"candidates file not found: {args.candidates}") from None
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise CommandFailed(INVALID_INPUT, f"bad candidates file: {exc}") from None
    _dump_json({"threshold": args.threshold, "selected": selected}, args.out)
    _say(f"selected {len(selected)} of {len(groups)} group(s) at WER < {args.threshold:g}")
    return OK


# ------------------------------------------------------------------- parser


def _config_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="regime config (JSON)")
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--total-steps", type=int)
    p.add_argument("--regime", choices=[r.value for r in Regime], type=str.upper)
    p.add_argument("--switch-step", type=int)
    p.add_argument("--replay-fraction", type=float, help="TPC replay share (config default 0.2)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taskmix", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"taskmix {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-codebook", help="fit the K-means codebook and assign every sample")
    p.add_argument("--manifest", required=True)
    p.add_argument("--embeddings", required=True, help="directory holding embedding files")
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("--subset-fraction", type=float, default=DEFAULT_SUBSET_FRACTION)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_codebook)

    p = sub.add_parser("plan-batches", help="write a batch plan for one regime")
    p.add_argument("--manifest", required=True)
    _config_overrides(p)
    p.add_argument("--codebook")
    p.add_argument("--emit-lr", action="store_true", help="append the learning rate to each batch")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plan_batches)

    p = sub.add_parser("validate-plan", help="re-check a plan against the sampler invariants")
    p.add_argument("--plan", required=True)
    p.add_argument("--manifest", required=True)
    _config_overrides(p)
    p.add_argument("--codebook")
    p.set_defaults(func=cmd_validate_plan)

    p = sub.add_parser("eval", help="score hypothesis/reference pairs")
    p.add_argument("metric", choices=("wer", "f1", "rouge"))
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", help="report path (default: stdout)")
    p.add_argument("--detail", help="optional per-item JSONL output")
    p.add_argument("--keep-case", action="store_true", help="do not lowercase before scoring")
    p.add_argument("--strip-punct", action="store_true", help="treat punctuation as whitespace (WER)")
    p.add_argument("--alias-table", help="label alias table overriding the shipped one (f1)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="per-task counts, hours and label histograms")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="output path (default: stdout)")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("emit-judge-requests", help="write LLM-judge request payloads")
    p.add_argument("--pairs", required=True)
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_emit_judge_requests)

    p = sub.add_parser("quality-gate", help="keep one synthesized candidate per group under a WER threshold")
    p.add_argument("--candidates", required=True, help="JSONL with id, wer and optional group")
    p.add_argument("--threshold", type=float, default=DEFAULT_GATE_THRESHOLD)
    p.add_argument("--out", help="output path (default: stdout)")
    p.set_defaults(func=cmd_quality_gate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CommandFailed as exc:
        _say(f"error: {exc}")
        return exc.code
    except OSError as exc:
        _say(f"error: {exc}")
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
