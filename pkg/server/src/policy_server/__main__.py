"""Run the policy server: python -m policy_server [--port 8040] ..."""
from __future__ import annotations

import argparse

import uvicorn

from .app import ServerConfig, create_app


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="policy-server")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8040)
    parser.add_argument("--model-id", default="tiny-char-lm")
    parser.add_argument("--max-tokens", type=int, default=256)
    parser.add_argument("--max-context", type=int, default=2048)
    parser.add_argument("--inference-only", action="store_true")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    config = ServerConfig(
        model_id=args.model_id,
        max_tokens=args.max_tokens,
        port=args.port,
        max_context=args.max_context,
        inference_only=args.inference_only,
        seed=args.seed,
    )
    uvicorn.run(create_app(config), host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
