"""
Command-line surface of the engine.

    longformer pattern render|count   band pattern geometry
    longformer bench                  kernel time/memory scaling
    longformer train-charlm           staged char-LM / MLM training
    longformer eval-bpc               sliding-window bits per character
    longformer extend-pos             copy-tile the position table
    longformer train-led              encoder-decoder copy task
    longformer generate               beam search from an LED checkpoint
    longformer grad-check             finite-difference gradient check
    longformer serve                  HTTP service

Results go to stdout (JSON, or raw bytes for `generate`), logs to stderr and
the log file. Exit status: 0 ok, 1 usage, 2 data, 3 numerical failure.
"""

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path
from typing import List, Optional, Sequence

# worker pinning has to happen before numpy is imported anywhere
from config_factory import CONF, pin_threads

pin_threads(CONF.threads)

from pydantic import BaseModel, ValidationError  # noqa: E402

from app_logger import get_logger, setup_logging  # noqa: E402
from logging_wrapper import apply_decorator_to_module  # noqa: E402
from longformer_engine.band_pattern import PatternConfig, describe, receptive_field, render_pattern  # noqa: E402
from longformer_engine.bench import count_memory, time_scaling, write_scaling_csv  # noqa: E402
from longformer_engine.checkpoint import load_checkpoint, save_checkpoint  # noqa: E402
from longformer_engine.config import (  # noqa: E402
    CharLmTrainConfig,
    GradCheckConfig,
    LedTrainConfig,
    load_json,
)
from longformer_engine.corpus import load_corpus  # noqa: E402
from longformer_engine.embed_init import FreezeMode, apply_freeze, extend_model_positions, trainable_count  # noqa: E402
from longformer_engine.errors import ConfigError, EngineError, GradCheckError, UsageError  # noqa: E402
from longformer_engine.evaluation import EvalProtocol, eval_bpc_sliding  # noqa: E402
from longformer_engine.model import beam_search, build_model, count_parameters, ids_to_bytes, source_ids  # noqa: E402
from longformer_engine.schedule import schedule_from_spec  # noqa: E402
from longformer_engine.training import TrainOptions, run_grad_check, run_staged_training, train_led  # noqa: E402

logger = get_logger(__name__)

MODES = {"bidir": "bidirectional", "bidirectional": "bidirectional", "causal": "causal"}
SPLITS = ("all", "train", "dev", "test")


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit status 1"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(UsageError.exit_code, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> List[int]:
    if not text:
        return []
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _emit(payload) -> None:
    if isinstance(payload, BaseModel):
        print(payload.model_dump_json(indent=2))
    else:
        print(json.dumps(payload, indent=2))


def _half_window(args: argparse.Namespace) -> int:
    if args.half_window is not None:
        return args.half_window
    if args.window % 2:
        raise ConfigError(f"--window must be even, got {args.window}")
    return args.window // 2


def _pattern_from_args(args: argparse.Namespace) -> PatternConfig:
    try:
        return PatternConfig(
            n=args.n,
            half_window=_half_window(args),
            dilation=args.dilation,
            mode=MODES[args.mode],
            global_positions=tuple(args.global_positions),
        )
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


# ------------------------------------------------------------------ handlers
def cmd_pattern_render(args: argparse.Namespace) -> int:
    cfg = _pattern_from_args(args)
    render_pattern(cfg, args.out, csv_only=args.csv_only)
    summary = describe(cfg)
    summary["out"] = str(args.out) if args.out else None
    _emit(summary)
    return 0


def cmd_pattern_count(args: argparse.Namespace) -> int:
    cfg = _pattern_from_args(args)
    summary = describe(cfg)
    field = receptive_field([(cfg.half_window, cfg.dilation)] * args.layers, cfg.mode)
    summary["receptive_field"] = field.model_dump()
    _emit(summary)
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    h = _half_window(args)
    mode = MODES[args.mode]
    if args.memory_only:
        accounts = [
            {"n": n, "half_window": h, **asdict(count_memory(impl, n, h, mode))}
            for impl in args.impl
            for n in args.n
        ]
        _emit(accounts)
        return 0
    reports = [
        time_scaling(impl, args.n, h, repeats=args.repeats, mode=mode, seed=args.seed, dtype=CONF.dtype)
        for impl in args.impl
    ]
    if args.out:
        write_scaling_csv(reports, args.out)
    _emit([report.model_dump() for report in reports])
    return 0


def cmd_train_charlm(args: argparse.Namespace) -> int:
    cfg = load_json(args.config, CharLmTrainConfig)
    seed = CONF.resolve_seed(cfg.seed)
    corpus = load_corpus(args.corpus)
    if args.init_ckpt:
        m = load_checkpoint(args.init_ckpt)
        if args.freeze:
            apply_freeze(m, args.freeze)
    else:
        m = build_model(cfg.model, seed)
    schedule = schedule_from_spec(cfg.schedule)
    metrics_csv = args.metrics_csv or cfg.metrics_csv
    opts = TrainOptions(
        seed=seed,
        log_every=cfg.log_every,
        optimizer=cfg.optimizer,
        mask_prob=cfg.mask_prob,
        metrics_csv=Path(metrics_csv) if metrics_csv else None,
    )
    logger.info(
        f"Training {m.cfg.architecture}: {count_parameters(m.cfg)} parameters, "
        f"{len(schedule)} phases on {len(corpus.train())} training bytes"
    )
    history = run_staged_training(m, corpus.train(), schedule, opts)
    save_checkpoint(m, args.out)
    _emit({
        "architecture": m.cfg.architecture,
        "phases": len(schedule),
        "steps": len(history),
        "final_loss_nats": history.rows[-1].loss_nats if len(history) else None,
        "final_bpc": history.rows[-1].bpc if len(history) else None,
        "checkpoint": str(args.out),
    })
    return 0


def cmd_eval_bpc(args: argparse.Namespace) -> int:
    m = load_checkpoint(args.ckpt)
    if m.cfg.architecture != "charlm":
        raise UsageError(f"eval-bpc needs a charlm checkpoint, got {m.cfg.architecture}")
    corpus = load_corpus(args.corpus)
    data = corpus.data if args.split == "all" else getattr(corpus, args.split)()
    try:
        proto = EvalProtocol(eval_len=args.eval_len, step=args.step)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    _emit(eval_bpc_sliding(m, data, proto))
    return 0


def cmd_extend_pos(args: argparse.Namespace) -> int:
    m = load_checkpoint(args.ckpt)
    before = m.cfg.max_positions
    extend_model_positions(m, args.target_len)
    masks = apply_freeze(m, args.freeze)
    save_checkpoint(m, args.out)
    _emit({
        "max_positions_before": before,
        "max_positions": m.cfg.max_positions,
        "freeze": args.freeze,
        "trainable_parameters": trainable_count(masks),
        "checkpoint": str(args.out),
    })
    return 0


def cmd_train_led(args: argparse.Namespace) -> int:
    cfg = load_json(args.config, LedTrainConfig)
    cfg = cfg.model_copy(update={"seed": CONF.resolve_seed(cfg.seed)})
    m = build_model(cfg.model, cfg.seed)
    report, _ = train_led(m, cfg, Path(args.metrics_csv) if args.metrics_csv else None)
    save_checkpoint(m, args.out)
    _emit(report)
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    m = load_checkpoint(args.ckpt)
    try:
        text = Path(args.input).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read input '{args.input}': {exc}") from exc
    tokens = beam_search(m, source_ids(text), args.beam, args.max_len, args.length_penalty)
    sys.stdout.buffer.write(ids_to_bytes(tokens))
    sys.stdout.buffer.flush()
    return 0


def cmd_grad_check(args: argparse.Namespace) -> int:
    cfg = load_json(args.config, GradCheckConfig)
    error = run_grad_check(cfg)
    _emit({"target": cfg.target, "samples": cfg.samples, "max_relative_error": error, "tolerance": args.tolerance})
    if error > args.tolerance:
        raise GradCheckError(f"max relative error {error:.3e} exceeds tolerance {args.tolerance:.1e}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    from uvicorn.config import Config
    from uvicorn.server import Server

    from app_logger import setup_uvicorn_logging
    from fastapi_app import app

    logger.info(f"Starting FastAPI app on {args.host}:{args.port}")
    config = Config(app, host=args.host, port=args.port, log_level="info", access_log=True)
    server = Server(config)
    setup_uvicorn_logging()
    server.run()
    return 0


# -------------------------------------------------------------------- parser
def _add_pattern_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, required=True, help="sequence length")
    window = p.add_mutually_exclusive_group()
    window.add_argument("--window", type=int, default=0, help="full window w (even), w = 2 * half window")
    window.add_argument("--half-window", type=int, default=None, help="tokens attended on each side")
    p.add_argument("--dilation", type=int, default=1)
    p.add_argument("--global", dest="global_positions", type=_int_list, default=[], help="comma-separated positions")
    p.add_argument("--mode", choices=sorted(MODES), default="bidir")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="longformer", description="Sliding-window attention engine")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ... (default LF_LOG_LEVEL or INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    pattern = sub.add_parser("pattern", help="band pattern geometry")
    pattern_sub = pattern.add_subparsers(dest="pattern_command", required=True)
    render = pattern_sub.add_parser("render", help="write the 0/1 pattern as .pgm or .csv")
    _add_pattern_args(render)
    render.add_argument("--out", type=Path, default=None)
    render.add_argument("--csv-only", action="store_true", help="stream rows to CSV, no size guard")
    render.set_defaults(handler=cmd_pattern_render)
    count = pattern_sub.add_parser("count", help="nonzero count and receptive field")
    _add_pattern_args(count)
    count.add_argument("--layers", type=int, default=1, help="stack depth for the receptive field")
    count.set_defaults(handler=cmd_pattern_count)

    bench = sub.add_parser("bench", help="time and memory scaling of the band kernels")
    bench.add_argument("--impl", type=lambda s: [part for part in s.split(",") if part], default=["loop", "chunk", "dense"],
                       help="comma-separated subset of loop,chunk,dense")
    bench.add_argument("--n", type=_int_list, required=True, help="comma-separated ascending sequence lengths")
    window = bench.add_mutually_exclusive_group()
    window.add_argument("--window", type=int, default=512)
    window.add_argument("--half-window", type=int, default=None)
    bench.add_argument("--mode", choices=sorted(MODES), default="bidir")
    bench.add_argument("--repeats", type=int, default=5)
    bench.add_argument("--seed", type=int, default=CONF.resolve_seed(0))
    bench.add_argument("--memory-only", action="store_true", help="closed-form element counts, no timing")
    bench.add_argument("--out", type=Path, default=None, help="CSV report")
    bench.set_defaults(handler=cmd_bench)

    train = sub.add_parser("train-charlm", help="staged char-LM / MLM training")
    train.add_argument("--config", type=Path, required=True)
    train.add_argument("--corpus", type=Path, required=True)
    train.add_argument("--out", type=Path, required=True)
    train.add_argument("--init-ckpt", type=Path, default=None, help="continue from a checkpoint instead of a fresh model")
    train.add_argument("--freeze", choices=[m.value for m in FreezeMode], default=None)
    train.add_argument("--metrics-csv", default=None)
    train.set_defaults(handler=cmd_train_charlm)

    evaluate = sub.add_parser("eval-bpc", help="sliding-window BPC of a char-LM checkpoint")
    evaluate.add_argument("--ckpt", type=Path, required=True)
    evaluate.add_argument("--corpus", type=Path, required=True)
    evaluate.add_argument("--eval-len", type=int, required=True)
    evaluate.add_argument("--step", type=int, required=True)
    evaluate.add_argument("--split", choices=SPLITS, default="test")
    evaluate.set_defaults(handler=cmd_eval_bpc)

    extend = sub.add_parser("extend-pos", help="copy-tile the position table to a longer length")
    extend.add_argument("--ckpt", type=Path, required=True)
    extend.add_argument("--target-len", type=int, required=True)
    extend.add_argument("--out", type=Path, required=True)
    extend.add_argument("--freeze", choices=[m.value for m in FreezeMode], default=FreezeMode.ALL_TRAINABLE.value)
    extend.set_defaults(handler=cmd_extend_pos)

    led = sub.add_parser("train-led", help="encoder-decoder copy task")
    led.add_argument("--config", type=Path, required=True)
    led.add_argument("--out", type=Path, required=True)
    led.add_argument("--metrics-csv", default=None)
    led.set_defaults(handler=cmd_train_led)

    generate = sub.add_parser("generate", help="beam search from an LED checkpoint")
    generate.add_argument("--ckpt", type=Path, required=True)
    generate.add_argument("--input", type=Path, required=True)
    generate.add_argument("--beam", type=int, default=4)
    generate.add_argument("--max-len", type=int, default=64)
    generate.add_argument("--length-penalty", type=float, default=1.0)
    generate.set_defaults(handler=cmd_generate)

    grad = sub.add_parser("grad-check", help="analytic vs finite-difference gradients")
    grad.add_argument("--config", type=Path, required=True)
    grad.add_argument("--tolerance", type=float, default=1e-4)
    grad.set_defaults(handler=cmd_grad_check)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default=CONF.host)
    serve.add_argument("--port", type=int, default=CONF.port)
    serve.set_defaults(handler=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.log_level:
        setup_logging(log_level=args.log_level, force_reset=True)
    try:
        return args.handler(args)
    except EngineError as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


# Apply the decorator to all command handlers in this module
apply_decorator_to_module(logger)(__name__)


if __name__ == "__main__":
    sys.exit(main())
