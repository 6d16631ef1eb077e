"""``agp`` command line: train, eval, budget, synth."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import AppConfig, ConfigError, load_config, load_world_spec
from .dataset import (
    DatasetBundle,
    DatasetError,
    InfeasibleSpecError,
    generate_synthetic_world,
    load_bundle,
    sample_split,
)
from .gateway import Gateway, GatewayError, HttpBackend, expected_calls
from .mock import MockBackend, MockWorldState
from .optimizer import RunDir, RunState, TrainingAborted, evaluate_run, train
from .profile import MissingTemplateError, PromptStore, seed_prompt

log = logging.getLogger("agp")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_GATEWAY = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def build_bundle(cfg: AppConfig) -> DatasetBundle:
    try:
        if cfg.data.synthetic:
            bundle = generate_synthetic_world(cfg.world)
        else:
            bundle = load_bundle(cfg.resolve(cfg.data.users), cfg.resolve(cfg.data.rankings))
        return sample_split(
            bundle, cfg.data.n_train, cfg.data.n_eval, cfg.data.split_seed, cfg.data.allow_overlap
        )
    except FileNotFoundError as exc:
        raise CliError(f"data file not found: {exc}", EXIT_DATA) from None
    except DatasetError as exc:
        raise CliError(f"data error: {exc}", EXIT_DATA) from None


def build_gateway(cfg: AppConfig) -> Gateway:
    b = cfg.backend
    if b.kind == "mock":
        backend = MockBackend(MockWorldState(spec=cfg.world))
    else:
        import os

        base_url = b.base_url or os.environ.get("AGP_BASE_URL", "")
        if not base_url:
            raise CliError("http backend needs base_url or $AGP_BASE_URL", EXIT_CONFIG)
        try:
            backend = HttpBackend(base_url, b.model, api_key_env=b.api_key_env)
        except GatewayError as exc:
            raise CliError(str(exc), EXIT_GATEWAY) from None
    return Gateway(backend, max_retries=b.max_retries, rpm=b.rpm or None)


def _apply_overrides(cfg: AppConfig, args: argparse.Namespace) -> AppConfig:
    t = cfg.train
    mapping = {
        "batch_size": "batch_size",
        "history_len": "history_len",
        "max_epochs": "max_epochs",
        "patience": "patience",
        "seed": "seed",
        "parallelism": "parallelism",
    }
    for arg, attr in mapping.items():
        v = getattr(args, arg, None)
        if v is not None:
            setattr(t, attr, v)
    if getattr(args, "no_summarization", False):
        t.summarization_enabled = False
    if getattr(args, "no_pbf", False):
        t.pbf_enabled = False
    if getattr(args, "backend", None):
        cfg.backend.kind = args.backend
    if getattr(args, "n_train", None) is not None:
        cfg.data.n_train = args.n_train
    if getattr(args, "n_eval", None) is not None:
        cfg.data.n_eval = args.n_eval
    if getattr(args, "run_dir", None):
        cfg.run_dir = args.run_dir
    return cfg


def _load(args) -> AppConfig:
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        cfg.validate()
    except ConfigError as exc:
        raise CliError(f"config error: {exc}", EXIT_CONFIG) from None
    return cfg


def cmd_train(args) -> int:
    cfg = _load(args)
    if not cfg.run_dir:
        raise CliError("no run directory (use --run-dir or [run] dir)", EXIT_CONFIG)
    run_dir = Path(cfg.run_dir)
    state = None
    if args.resume:
        if not (run_dir / "run.json").exists():
            raise CliError(f"nothing to resume in {run_dir}", EXIT_CONFIG)
        state = RunDir(run_dir).load_state()
    elif run_dir.exists() and any(run_dir.iterdir()):
        raise CliError(f"run directory {run_dir} is not empty (use --resume)", EXIT_CONFIG)
    try:
        seed = seed_prompt(cfg.seed_prompt)
    except MissingTemplateError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    bundle = build_bundle(cfg)
    gateway = build_gateway(cfg)
    if bundle.train and cfg.train.batch_size > len(bundle.train):
        raise CliError(f"batch_size exceeds {len(bundle.train)} train users", EXIT_CONFIG)

    print(f"{'epoch':>5}  {'train N@10':>10}  {'valid N@10':>10}  {'valid pos':>9}")

    def on_epoch(epoch, tr, va):
        print(f"{epoch:>5}  {tr['ndcg@10']:>10.4f}  {va['ndcg@10']:>10.4f}  {va['avg_pos']:>9.3f}")

    RunDir(run_dir)
    (run_dir / "split.json").write_text(
        json.dumps({"train": list(bundle.train), "eval": list(bundle.eval)}, indent=1), encoding="utf-8"
    )
    try:
        state = train(bundle, cfg.train, gateway, run_dir=run_dir, seed=seed, state=state, on_epoch=on_epoch)
    except TrainingAborted as exc:
        raise CliError(f"gateway failure, state saved to {run_dir} (resume with --resume): {exc}", EXIT_GATEWAY) from None
    except GatewayError as exc:
        raise CliError(f"gateway failure: {exc}", EXIT_GATEWAY) from None
    print(f"stopped: {state.stop_reason}")
    print(f"best prompt: v{state.best_version} (validation N@10 {state.best_score:.4f})")
    print(f"calls: {gateway.ledger.total} total, "
          f"{gateway.ledger.count(scope_prefix='train/')} training-stage")
    print(f"run directory: {run_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load(args)
    bundle = build_bundle(cfg)
    prompt = None
    if args.mode == "agp":
        if not cfg.run_dir:
            raise CliError("agp mode needs --run-dir with prompt checkpoints", EXIT_CONFIG)
        store = PromptStore(Path(cfg.run_dir) / "prompts")
        versions = store.versions()
        if not versions:
            raise CliError(f"no prompt checkpoints under {store.dir}", EXIT_DATA)
        version = args.prompt_version
        if version is None:
            state_path = Path(cfg.run_dir) / "run.json"
            if state_path.exists():
                version = RunState.from_json(state_path.read_text(encoding="utf-8")).best_version
            else:
                version = versions[-1]
        try:
            prompt = store.load(version)
        except MissingTemplateError as exc:
            raise CliError(str(exc), EXIT_DATA) from None
    gateway = None if args.mode == "base" else build_gateway(cfg)
    try:
        outcome = evaluate_run(
            bundle, prompt, args.mode, gateway,
            history_len=cfg.train.history_len, k=cfg.train.k, parallelism=cfg.train.parallelism,
        )
    except GatewayError as exc:
        raise CliError(f"gateway failure: {exc}", EXIT_GATEWAY) from None
    except ValueError as exc:
        raise CliError(str(exc), EXIT_DATA) from None
    out = Path(args.out) if args.out else Path(cfg.run_dir or ".") / f"eval_{args.mode}"
    out.mkdir(parents=True, exist_ok=True)
    rep = outcome.report
    (out / "report.csv").write_text(rep.to_csv(), encoding="utf-8")
    (out / "summary.txt").write_text(rep.summary() + "\n", encoding="utf-8")
    (out / "reranked.jsonl").write_text(
        "".join(rr.to_json() + "\n" for rr in outcome.reranked), encoding="utf-8"
    )
    calls = gateway.ledger.total if gateway else 0
    print(rep.summary())
    print(f"gateway calls: {calls}")
    print(f"mean N@10 = {rep.mean_ndcg_at_k:.4f}")
    return EXIT_OK


def cmd_budget(args) -> int:
    if args.batch_size < 1 or args.n_train < 1 or args.epochs < 1:
        raise CliError("--batch-size, --n-train and --epochs must be positive", EXIT_CONFIG)
    est = expected_calls(args.batch_size, args.n_train)
    note = " (approximate: batch size does not divide n_train)" if est.approximate else ""
    print(f"batch_size={args.batch_size} n_train={args.n_train} batches/epoch={est.n_batches}{note}")
    print(f"{'epoch':>5}  {'calls':>8}  {'cumulative':>10}")
    for e in range(1, args.epochs + 1):
        print(f"{e:>5}  {est.per_epoch:>8}  {est.per_epoch * e:>10}")
    print(f"total: {est.per_epoch * args.epochs}")
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        spec = load_world_spec(args.spec)
        if args.seed is not None:
            spec = replace(spec, seed=args.seed)
    except ConfigError as exc:
        raise CliError(f"config error: {exc}", EXIT_CONFIG) from None
    except InfeasibleSpecError as exc:
        raise CliError(f"infeasible spec: {exc}", EXIT_DATA) from None
    try:
        bundle = generate_synthetic_world(spec)
    except InfeasibleSpecError as exc:
        raise CliError(f"infeasible spec: {exc}", EXIT_DATA) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bundle.save(out / "users.jsonl", out / "rankings.jsonl")
    print(f"wrote {len(bundle.users)} users to {out / 'users.jsonl'} and {out / 'rankings.jsonl'}")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="agp", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", "-c", help="INI config file")
        sp.add_argument("--run-dir")
        sp.add_argument("--backend", choices=("mock", "http"))
        sp.add_argument("--n-train", type=int)
        sp.add_argument("--n-eval", type=int)
        sp.add_argument("--history-len", type=int)
        sp.add_argument("--parallelism", type=int)

    t = sub.add_parser("train", help="optimize the profile prompt")
    common(t)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--max-epochs", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--no-summarization", action="store_true")
    t.add_argument("--no-pbf", action="store_true", help="metric-only feedback")
    t.add_argument("--resume", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a prompt or baseline on the eval split")
    common(e)
    e.add_argument("--mode", choices=("agp", "dir", "cot", "base"), default="agp")
    e.add_argument("--prompt-version", type=int)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("budget", help="expected API calls for a training run")
    b.add_argument("--batch-size", type=int, required=True)
    b.add_argument("--n-train", type=int, default=100)
    b.add_argument("--epochs", type=int, default=1)
    b.set_defaults(func=cmd_budget)

    s = sub.add_parser("synth", help="write a synthetic users/rankings pair")
    s.add_argument("--spec", required=True, help="INI file with a [world] section")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except CliError as exc:
        print(f"agp: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
