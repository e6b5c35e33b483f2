"""her2-sidecar entry point.

Usage:
    her2-sidecar --roles tumor,stain,segment --rule
    her2-sidecar --roles segment --checkpoint model.pt
"""

from __future__ import annotations

import argparse
import sys

from .serve import ROLES, RuleModel, serve


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="her2-sidecar",
        description="Inference sidecar speaking newline-delimited JSON on stdio",
    )
    parser.add_argument(
        "--roles",
        default=",".join(ROLES),
        help="comma-separated subset of tumor,stain,segment (default: all)",
    )
    group = parser.add_mutually_exclusive_group()
    group.add_argument(
        "--rule", action="store_true", help="serve the documented rule model (default)"
    )
    group.add_argument("--checkpoint", help="serve a TorchScript checkpoint")
    args = parser.parse_args(argv)

    roles = tuple(r.strip() for r in args.roles.split(",") if r.strip())
    unknown = [r for r in roles if r not in ROLES]
    if unknown or not roles:
        print(f"unknown roles: {unknown or 'none given'}", file=sys.stderr)
        return 2

    if args.checkpoint:
        from .checkpoint import CheckpointModel

        try:
            model = CheckpointModel(args.checkpoint)
        except Exception as exc:
            print(f"cannot load checkpoint: {exc}", file=sys.stderr)
            return 2
    else:
        model = RuleModel()
    return serve(model, roles)


if __name__ == "__main__":
    sys.exit(main())
