"""Batch front door: parse a config, call the service, write result files.

The CLI is a thin client of the HTTP service. By default it talks to an
in-process instance of the app, so batch runs need no separate server;
``--server URL`` targets a running instance instead (start one with
``mdspde serve``). Results and a manifest (config hash, seed, versions) land
in the output directory; exit code 0 on success, 2 on hypothesis failure,
1 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys

import numpy as np

from . import __version__
from .config import config_hash, load_config
from .errors import ConfigError

USAGE_EXIT = 1
HYPOTHESIS_EXIT = 2

_SUBCOMMANDS = (
    "validate",
    "simulate",
    "average",
    "invariant",
    "psi2",
    "rate",
    "controls",
    "occupation",
    "estimate",
    "asymptote",
    "serve",
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(USAGE_EXIT)


def _parse_kv(text: str) -> dict:
    out = {}
    if not text:
        return out
    for piece in text.split(","):
        if "=" not in piece:
            raise ConfigError(f"expected key=value, got {piece!r}")
        key, value = piece.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_psi(text: str) -> dict:
    """--psi linear:mode=1,slope=1[,dt=1e-4]"""
    family, _, rest = text.partition(":")
    if family != "linear":
        raise ConfigError(f"unknown path family {family!r} (supported: linear)")
    kv = _parse_kv(rest)
    spec = {"family": "linear", "mode": int(kv.pop("mode", 1)), "slope": float(kv.pop("slope", 1.0))}
    if "dt" in kv:
        spec["dt"] = float(kv.pop("dt"))
    if kv:
        raise ConfigError(f"unknown path parameters {sorted(kv)}")
    return spec


def parse_event(text: str) -> dict:
    """--event terminal_mode:1,0.6 | terminal_norm:0.5 | sup_norm:0.5"""
    kind, _, rest = text.partition(":")
    if not rest:
        raise ConfigError("event needs parameters, e.g. terminal_mode:1,0.6")
    parts = rest.split(",")
    if kind == "terminal_mode":
        if len(parts) != 2:
            raise ConfigError("terminal_mode takes mode,r")
        return {"kind": kind, "mode": int(parts[0]), "r": float(parts[1])}
    if kind in ("terminal_norm", "sup_norm"):
        if len(parts) != 1:
            raise ConfigError(f"{kind} takes a single level r")
        return {"kind": kind, "r": float(parts[0])}
    raise ConfigError(f"unknown event kind {kind!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mdspde", description=__doc__)
    parser.add_argument("--version", action="version", version=f"mdspde {__version__}")
    sub = parser.add_subparsers(dest="command")

    def add(name, **kwargs):
        p = sub.add_parser(name, **kwargs)
        if name != "serve":
            p.add_argument("--config", required=True, help="path to the run config file")
            p.add_argument("--server", default=None, help="service URL (default: in-process)")
            p.add_argument("--output", default=None, help="output directory override")
            p.add_argument("--regime", default=None, choices=["R1", "R2"], help="regime override")
            p.add_argument("--seed", type=int, default=None, help="seed override")
            p.add_argument("--workers", type=int, default=os.cpu_count(), help="worker count")
        return p

    add("validate", help="check structural conditions and print the report")
    p = add("simulate", help="simulate one slow-fast trajectory")
    p.add_argument("--noise-off", action="store_true")
    p.add_argument("--store-stride", type=int, default=1)
    p.add_argument("--with-eta", action="store_true")
    add("average", help="solve the averaged dynamics")
    p = add("invariant", help="sample the frozen-process invariant measure")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--dt", type=float, default=None)
    p = add("psi2", help="derivative-operator matrix on the Galerkin basis")
    p.add_argument("--m", type=int, default=8)
    p.add_argument("--mc-paths", type=int, default=4)
    p.add_argument("--t-max", type=float, default=None)
    p.add_argument("--dt", type=float, default=1e-3)
    p = add("rate", help="rate functional of a parametric path")
    p.add_argument("--psi", required=True, help="e.g. linear:mode=1,slope=1")
    p = add("controls", help="optimal feedback controls and their cost")
    p.add_argument("--psi", required=True)
    p = add("occupation", help="occupation measure and decoupling test")
    p.add_argument("--modes-checked", type=int, default=4)
    p.add_argument("--delta-occ", type=float, default=None)
    p.add_argument("--store-stride", type=int, default=1)
    p = add("estimate", help="rare-event probability estimation")
    p.add_argument("--event", required=True, help="e.g. terminal_mode:1,0.6")
    p.add_argument("--method", choices=["plain", "is"], default="plain")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--psi", default=None)
    p = add("asymptote", help="rate-function asymptote for an event")
    p.add_argument("--event", required=True)
    p.add_argument("--dt", type=float, default=1e-4)
    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def _client(server):
    if server:
        import httpx

        return httpx.Client(base_url=server, timeout=None)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DeprecationWarning)
        from fastapi.testclient import TestClient

    from .service.app import app

    return TestClient(app)


def _config_payload(args) -> dict:
    cfg = load_config(args.config)
    payload = cfg.model_dump()
    if args.regime:
        payload["regime"]["regime"] = args.regime
    if args.seed is not None:
        payload["run"]["seed"] = args.seed
    if args.output:
        payload["output"]["directory"] = args.output
    return payload


def _write_outputs(args, command: str, config_payload: dict, body: dict, extra: dict) -> str:
    from .service.schemas import RunConfig

    cfg = RunConfig(**config_payload)
    out_dir = cfg.output.directory
    os.makedirs(out_dir, exist_ok=True)
    for name, content in body.get("files", {}).items():
        with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
            fh.write(content)
    manifest = {
        "command": command,
        "config_sha256": config_hash(cfg),
        "config": config_payload,
        "parameters": extra,
        "versions": {
            "mdspde": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return out_dir


def _dispatch(args) -> int:
    command = args.command
    config_payload = _config_payload(args)
    body = {"config": config_payload}
    extra = {}
    if command == "simulate":
        extra = {"noise_off": args.noise_off, "store_stride": args.store_stride, "with_eta": args.with_eta}
    elif command == "invariant":
        extra = {"count": args.count}
        if args.dt is not None:
            extra["dt"] = args.dt
    elif command == "psi2":
        extra = {"m": args.m, "mc_paths": args.mc_paths, "t_max": args.t_max, "dt": args.dt}
    elif command in ("rate", "controls"):
        extra = {"psi": parse_psi(args.psi)}
    elif command == "occupation":
        extra = {"modes_checked": args.modes_checked, "store_stride": args.store_stride}
        if args.delta_occ is not None:
            extra["delta_occ"] = args.delta_occ
    elif command == "estimate":
        extra = {"event": parse_event(args.event), "method": args.method, "n": args.n}
        if args.psi:
            extra["psi"] = parse_psi(args.psi)
    elif command == "asymptote":
        extra = {"event": parse_event(args.event), "dt": args.dt}
    body.update(extra)

    client = _client(args.server)
    try:
        resp = client.post(f"/{command}", json=body)
    finally:
        if hasattr(client, "close"):
            client.close()
    if resp.status_code == 409:
        detail = resp.json()
        print(json.dumps(detail, sort_keys=True, indent=2))
        print("hypothesis failure", file=sys.stderr)
        return HYPOTHESIS_EXIT
    if resp.status_code != 200:
        print(f"error {resp.status_code}: {resp.text}", file=sys.stderr)
        return USAGE_EXIT
    payload = resp.json()
    out_dir = _write_outputs(args, command, config_payload, payload, extra)
    summary = {k: v for k, v in payload.items() if k != "files"}
    print(json.dumps(summary, sort_keys=True, indent=2))
    if command == "validate" and not payload.get("overall_pass", False):
        return HYPOTHESIS_EXIT
    print(f"results written to {out_dir}", file=sys.stderr)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return USAGE_EXIT
    if args.command == "serve":
        import uvicorn

        from .service.app import app

        uvicorn.run(app, host=args.host, port=args.port)
        return 0
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT


if __name__ == "__main__":
    sys.exit(main())
