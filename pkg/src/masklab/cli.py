"""Thin command-line client for the masklab service.

By default the service runs in-process (ASGI transport); pass --server to
talk to a remote instance instead. All files are written client-side with
byte-stable serialization, so repeated runs are byte-identical.

Exit codes: 0 success, 2 configuration error, 3 runtime numerical failure.
"""

from __future__ import annotations

import argparse
import base64
import sys
from pathlib import Path

import httpx

from .runner import canonical_json

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=600.0)
    import warnings

    with warnings.catch_warnings():
        # starlette warns about the httpx major version; the sync TestClient
        # transport is all we need here
        warnings.simplefilter("ignore")
        from starlette.testclient import TestClient

    from .service import app

    return TestClient(app, raise_server_exceptions=False)


class CommandFailed(Exception):
    def __init__(self, exit_code: int, message: str):
        self.exit_code = exit_code
        super().__init__(message)


def _post(client: httpx.Client, path: str, payload: dict) -> dict:
    resp = client.post(path, json=payload)
    if resp.status_code != 200:
        try:
            body = resp.json()
        except ValueError:
            body = {}
        kind = body.get("kind", "internal")
        message = body.get("message", resp.text)
        code = EXIT_CONFIG if kind == "config" else EXIT_NUMERIC
        raise CommandFailed(code, f"{kind} error: {message}")
    return resp.json()


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CommandFailed(EXIT_CONFIG, f"cannot read {path}: {exc}") from exc


def _read_checkpoint_b64(path: str) -> str:
    try:
        return base64.b64encode(Path(path).read_bytes()).decode("ascii")
    except OSError as exc:
        raise CommandFailed(EXIT_CONFIG, f"cannot read {path}: {exc}") from exc


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(client, args):
    body = _post(client, "/train", {"config_text": _read_text(args.config)})
    out = _out_dir(args)
    (out / "checkpoint.bin").write_bytes(base64.b64decode(body["checkpoint_b64"]))
    (out / "loss_trace.csv").write_text(body["trace_csv"], encoding="utf-8")
    print(f"checkpoint: {out / 'checkpoint.bin'}")
    print(f"train accuracy: {body['train_accuracy']:.4f}")
    print(f"test accuracy: {body['test_accuracy']:.4f}")
    return EXIT_OK


def cmd_attack(client, args):
    body = _post(client, "/attack", {
        "config_text": _read_text(args.config),
        "checkpoint_b64": _read_checkpoint_b64(args.checkpoint),
        "threads": args.threads,
    })
    out = _out_dir(args)
    for entry in body["reports"]:
        stem = f"attack_{entry['name']}_eps{entry['eps']:g}"
        (out / f"{stem}.json").write_text(canonical_json(entry["report"]),
                                          encoding="utf-8")
        (out / f"{stem}.csv").write_text(entry["records_csv"], encoding="utf-8")
        rep = entry["report"]
        print(f"{entry['name']}: clean={rep['clean_accuracy']:.4f} "
              f"robust={rep['robust_accuracy']:.4f} "
              f"success={rep['attack_success_rate']:.4f}")
    return EXIT_OK


def cmd_diagnose(client, args):
    body = _post(client, "/diagnose", {
        "config_text": _read_text(args.config),
        "checkpoint_b64": _read_checkpoint_b64(args.checkpoint),
        "threads": args.threads,
    })
    out = _out_dir(args)
    (out / "checklist.json").write_text(canonical_json(body["report"]),
                                        encoding="utf-8")
    print(body["summary"])
    return EXIT_OK


def cmd_sweep(client, args):
    if not args.lo < args.hi:
        raise CommandFailed(EXIT_CONFIG, "sweep: --lo must be < --hi")
    if args.n < 2:
        raise CommandFailed(EXIT_CONFIG, "sweep: --n must be >= 2")
    body = _post(client, "/sweep", {
        "c": args.c, "decimals": args.decimals,
        "lo": args.lo, "hi": args.hi, "n": args.n,
    })
    if args.output:
        Path(args.output).write_text(body["csv"], encoding="utf-8")
    else:
        sys.stdout.write(body["csv"])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="masklab",
        description="Preprocessor-defense robustness lab: train, attack, diagnose.",
    )
    parser.add_argument("--server", default=None,
                        help="base URL of a running service (default: in-process)")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for attacks/diagnostics")
    parser.add_argument("--out-dir", default="out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="run the configured attacks on a checkpoint")
    p.add_argument("config")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("diagnose", help="run the gradient-masking checklist")
    p.add_argument("config")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("sweep", help="emit the smoothed-rounding value/gradient sweep")
    p.add_argument("--c", type=float, default=0.01)
    p.add_argument("--decimals", type=int, default=0)
    p.add_argument("--lo", type=float, default=0.0)
    p.add_argument("--hi", type=float, default=0.3)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with _client(args.server) as client:
            return args.func(client, args)
    except CommandFailed as exc:
        print(str(exc), file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
