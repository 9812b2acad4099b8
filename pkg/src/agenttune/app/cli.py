import argparse
import json
import logging
import os
import shutil
import sys
from datetime import datetime
from pathlib import Path
from typing import Optional

from pydantic import ValidationError

from agenttune.core.memory import MemoryStore
from agenttune.core.orchestrator import REPORT_FILE, replay_session, resume_session, run_session
from agenttune.errors import (
    AdapterNotFound,
    BackendNotFound,
    DegenerateBaseline,
    InvalidConfig,
    SessionStateError,
    TranscriptMismatch,
)
from agenttune.models.memory import MemoryDocument
from agenttune.models.session import SessionConfig, SessionReport

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_SETUP = 3

OVERRIDES = {
    "backend": "backend",
    "seed": "seed",
    "token_budget": "token_budget",
    "time_budget": "time_budget_s",
    "max_iters": "max_iterations",
    "branching": "branching",
    "top_k": "top_k",
    "ltm": "ltm_path",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agenttune", description="LLM-agent configuration tuner for storage systems.")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run or resume a tuning session")
    source = run.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", help="session config JSON")
    source.add_argument("--resume", metavar="SESSION_DIR", help="resume an interrupted session")
    run.add_argument("--backend", choices=["http", "greedy-mock", "scripted"])
    run.add_argument("--seed", type=int)
    run.add_argument("--token-budget", type=int)
    run.add_argument("--time-budget", type=float)
    run.add_argument("--max-iters", type=int)
    run.add_argument("--branching", type=int)
    run.add_argument("--top-k", type=int)
    run.add_argument("--ltm", help="shared long-term memory document")
    run.add_argument("--session-dir", help="where session state is written")

    report = sub.add_parser("report", help="print a stored session report")
    report.add_argument("session_dir")

    memory = sub.add_parser("memory", help="inspect or move the long-term memory document")
    memory.add_argument("action", choices=["list", "export", "import"])
    memory.add_argument("file", nargs="?", help="destination for export, source for import")
    memory.add_argument("--ltm", default=os.getenv("AGENTTUNE_LTM", "ltm.json"))

    replay = sub.add_parser("replay", help="re-run a recorded session from its transcript")
    replay.add_argument("session_dir")
    replay.add_argument("--verify", action="store_true", help="exit nonzero when the reports differ")
    return parser


def load_config(path: str, overrides: dict) -> SessionConfig:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError("session config must be a JSON object")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return SessionConfig.model_validate(data)


def default_session_dir(config_path: str, seed: int) -> Path:
    root = Path(os.getenv("AGENTTUNE_SESSIONS_DIR", "sessions"))
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    return root / f"{Path(config_path).stem}-seed{seed}-{stamp}"


def print_report(report: SessionReport) -> None:
    print(f"{'iter':>4}  {'best':>12}  {'tokens':>9}  {'errors':>6}")
    for row in report.per_iteration:
        print(f"{row.iteration:>4}  {row.best_so_far:>12.4f}  {row.cumulative_tokens:>9}  {row.error_count:>6}")
    print(f"stop: {report.stop_reason}; baseline {report.baseline:.4f}, best {report.best_value:.4f}")
    print(f"MPG={report.mpg:.4f} TC95={report.tc95} TE={report.te:.4f} TWER={report.twer:.4f}")


# --- 1. SUBCOMMANDS ---
def cmd_run(args: argparse.Namespace) -> int:
    if args.resume:
        report = resume_session(args.resume)
        session_dir = Path(args.resume)
    else:
        overrides = {field: getattr(args, flag) for flag, field in OVERRIDES.items()}
        try:
            config = load_config(args.config, overrides)
        except (OSError, ValueError, ValidationError) as e:
            logger.error(f"cannot load session config {args.config}: {e}")
            return EXIT_CONFIG
        session_dir = Path(args.session_dir) if args.session_dir else default_session_dir(args.config, config.seed)
        report = run_session(config, session_dir)
    print_report(report)
    print(f"session directory: {session_dir}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    path = Path(args.session_dir) / REPORT_FILE
    try:
        report = SessionReport.model_validate_json(path.read_bytes())
    except (OSError, ValidationError) as e:
        logger.error(f"cannot read {path}: {e}")
        return EXIT_CONFIG
    print_report(report)
    return EXIT_OK


def cmd_memory(args: argparse.Namespace) -> int:
    ltm = Path(args.ltm)
    try:
        if args.action == "list":
            insights = MemoryStore.load_document(ltm)
            print(f"{'id':<10}  {'tier':<4}  {'conf':>6}  text")
            for insight in insights:
                print(f"{insight.id:<10}  {insight.tier:<4}  {insight.confidence:>6.3f}  {insight.text}")
            return EXIT_OK
        if not args.file:
            logger.error(f"memory {args.action} needs a file argument")
            return EXIT_CONFIG
        source, destination = (ltm, Path(args.file)) if args.action == "export" else (Path(args.file), ltm)
        MemoryDocument.model_validate_json(source.read_bytes())
        destination.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(source, destination)
    except (OSError, ValidationError, SessionStateError) as e:
        logger.error(f"memory {args.action} failed: {e}")
        return EXIT_CONFIG
    print(f"{args.action}ed {source} -> {destination}")
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    try:
        stored, replayed = replay_session(args.session_dir)
    except TranscriptMismatch as e:
        logger.error(f"replay diverged from the transcript: {e}")
        return EXIT_VERIFY_FAILED
    print_report(replayed)
    same = stored.model_dump_json() == replayed.model_dump_json()
    print("replay matches stored report" if same else "replay DIFFERS from stored report")
    if args.verify and not same:
        return EXIT_VERIFY_FAILED
    return EXIT_OK


COMMANDS = {"run": cmd_run, "report": cmd_report, "memory": cmd_memory, "replay": cmd_replay}


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    try:
        return COMMANDS[args.command](args)
    except (InvalidConfig, SessionStateError) as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_CONFIG
    except (AdapterNotFound, BackendNotFound, DegenerateBaseline, TranscriptMismatch) as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_SETUP


if __name__ == "__main__":
    sys.exit(main())
