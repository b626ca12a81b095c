"""Command line: ``mrnav run`` for batch evaluation, ``mrnav make-corpus`` for the synthetic scenes."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import load_settings
from .planners import POLICIES
from .prompt import MODES
from .runner import load_corpus, load_episodes, run_batch

log = logging.getLogger("mrnav")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mrnav", description="Multi-robot frontier navigation on grid scenes.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an episode batch and write results")
    run.add_argument("--scenes", required=True, type=Path, help="directory of scene JSON files")
    run.add_argument("--episodes", required=True, type=Path, help="episode list (JSON lines)")
    run.add_argument("--planner", required=True, choices=POLICIES)
    run.add_argument("--vlm", default="mock-greedy", help="live | mock-greedy | scripted:<file>")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", required=True, type=Path)
    run.add_argument("--lambda", dest="lam", type=float, default=None, help="cost-utility distance weight")
    run.add_argument("--robots", type=int, default=None, help="override robots per episode")
    run.add_argument("--prompt-mode", choices=MODES, default=None)
    run.add_argument("--render-trajectory", action="store_true", help="write a PNG plot per episode")
    run.add_argument("--config", type=Path, default=None, help="key = value settings file")
    run.add_argument("--workers", type=int, default=1, help="episodes run in parallel")
    run.add_argument("--limit", type=int, default=None, help="only the first N episodes")

    mk = sub.add_parser("make-corpus", help="write the synthetic scene corpus")
    mk.add_argument("--out", required=True, type=Path)
    mk.add_argument("--scenes", type=int, default=10)
    mk.add_argument("--per-scene", type=int, default=5)
    mk.add_argument("--seed", type=int, default=2024)
    return p


def _run(args) -> int:
    settings = load_settings(args.config, lam=args.lam, prompt_mode=args.prompt_mode)
    scenes = load_corpus(args.scenes)
    episodes = load_episodes(args.episodes)
    if args.limit is not None:
        episodes = episodes[: args.limit]
    if args.robots is not None:
        episodes = [dataclasses.replace(e, n_robots=args.robots) for e in episodes]
    log.info("%d episodes on %d scenes, planner %s", len(episodes), len(scenes), args.planner)
    report = run_batch(
        scenes,
        episodes,
        args.planner,
        args.seed,
        settings,
        args.vlm,
        args.out,
        args.render_trajectory,
        args.workers,
    )
    print(json.dumps(report.summary(), indent=2, sort_keys=True))
    return 0


def _make_corpus(args) -> int:
    from .corpus import write_corpus

    write_corpus(args.out, args.scenes, args.per_scene, seed=args.seed)
    print(f"wrote {args.scenes} scenes to {args.out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            return _run(args)
        return _make_corpus(args)
    except (OSError, ValueError, KeyError) as e:
        print(f"mrnav: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
