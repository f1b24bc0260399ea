"""Bridge launcher: pick a model and a transport, then serve until EOF."""

from __future__ import annotations

import argparse
import sys

from .server import BridgeConfig, serve, stdio_stream, tcp_stream


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swd-bridge",
        description="Serve masked-LM logits to the decoding engine",
    )
    parser.add_argument("--model", required=True,
                        help="stub:K for the deterministic stub, hf:<id> for a masked LM")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--mask-token-id", type=int, default=None)
    parser.add_argument("--max-length", type=int, default=4096)
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--stdio", action="store_true", help="serve over stdin/stdout")
    group.add_argument("--port", type=int, help="listen for one TCP connection")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config = BridgeConfig(
        model_id=args.model,
        device=args.device,
        mask_token_id=args.mask_token_id,
        max_length=args.max_length,
    )
    try:
        stream = stdio_stream() if args.stdio else tcp_stream(args.port)
        serve(config, stream)
    except (ValueError, RuntimeError) as exc:
        print(f"swd-bridge: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130
    return 0


if __name__ == "__main__":
    sys.exit(main())
