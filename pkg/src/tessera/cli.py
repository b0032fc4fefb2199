"""``tessera`` command line: a thin client of the HTTP API.

Without ``--url`` the API runs in-process against ``--device-dir``; with
it, requests go to a ``tessera serve`` instance and that server's device
directory applies.

Exit codes: 0 success, 1 an attack scenario was not defended, 2 usage or
request errors, 3 service unreachable, otherwise the ``exit_code`` of the
raised error class (see ``tessera.errors``).
"""

from __future__ import annotations

import argparse
import base64
import json
import sys
import warnings
from pathlib import Path

import httpx

from .profiles import BUILTIN


class ApiError(Exception):
    def __init__(self, exit_code: int, message: str):
        super().__init__(message)
        self.exit_code = exit_code


class Client:
    def __init__(self, url: str | None = None, device_dir: str = "device", timeout: float = 600.0):
        if url:
            self._http = httpx.Client(base_url=url, timeout=timeout)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

            from .service import ServiceState, create_app

            self._http = TestClient(create_app(ServiceState(device_dir)))

    def call(self, method: str, path: str, body: dict | None = None):
        try:
            resp = self._http.request(method, path, json=body)
        except httpx.TransportError as exc:
            raise ApiError(3, f"cannot reach service: {exc}") from exc
        if resp.status_code >= 400:
            try:
                doc = resp.json()
            except ValueError:
                raise ApiError(2, f"HTTP {resp.status_code}: {resp.text}") from None
            if "exit_code" in doc:
                raise ApiError(doc["exit_code"], f"{doc['error']}: {doc['detail']}")
            raise ApiError(2, f"HTTP {resp.status_code}: {doc.get('detail', doc)}")
        return resp.json()


def _b64file(path: str) -> str:
    return base64.b64encode(Path(path).read_bytes()).decode()


def _profile_ref(spec: str):
    if spec.lower() in BUILTIN:
        return spec.lower()
    return json.loads(Path(spec).read_text())


def _emit(args, doc, text: str | None = None) -> None:
    if args.json or text is None:
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        print(text)


def cmd_keygen(client: Client, args) -> int:
    doc = client.call("POST", "/keygen", {"bits": args.bits, "overwrite": args.force})
    if args.out:
        Path(args.out).write_text(doc["public_pem"])
    _emit(args, doc, f"fused RSA-{doc['bits']} device identity\n{doc['public_pem'].rstrip()}")
    return 0


def cmd_pack(client: Client, args) -> int:
    if args.device_pub:
        pub = Path(args.device_pub).read_text()
    else:
        pub = client.call("GET", "/device/public")["public_pem"]
    doc = client.call("POST", "/pack", {
        "plaintext_b64": _b64file(args.input),
        "device_pub_pem": pub,
        "app_cert_b64": _b64file(args.app_cert),
        "base_addr": args.base_addr,
        "fixed_counter": args.insecure_demo,
        "insecure_demo": args.insecure_demo,
    })
    out = Path(args.out or Path(args.input).with_suffix(".tsra"))
    out.write_bytes(base64.b64decode(doc["image_b64"]))
    h = doc["header"]
    _emit(args, {"out": str(out), "header": h},
          f"wrote {out}: {h['plaintext_len']} bytes -> {h['ciphertext_lines']} lines at {h['base_addr']:#x}")
    return 0


def cmd_inspect(client: Client, args) -> int:
    h = client.call("POST", "/inspect", {"image_b64": _b64file(args.image)})
    text = "\n".join(f"{k:18} {v}" for k, v in h.items() if k != "blob")
    text += "\n" + "\n".join(f"blob.{k:13} {v}" for k, v in h["blob"].items())
    _emit(args, h, text)
    return 0


def cmd_simulate(client: Client, args) -> int:
    if args.mode == "jitter":
        seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [args.seed]
        doc = client.call("POST", "/simulate/jitter", {
            "profile": _profile_ref(args.profile), "seeds": seeds, "n_requests": args.n,
            "sigma_ks_frac": args.sigma_ks, "sigma_dram_frac": args.sigma_dram,
        })
        if args.out:
            Path(args.out).write_text(doc["csv"])
        _emit(args, doc["stats"], doc["csv"].rstrip())
        return 0
    if not args.image or not args.app_cert:
        raise ApiError(2, "simulate stream needs IMAGE and --app-cert")
    doc = client.call("POST", "/simulate/stream", {
        "image_b64": _b64file(args.image), "app_cert_b64": _b64file(args.app_cert),
        "profile": _profile_ref(args.profile), "tile_bytes": args.tile_bytes,
        "preempt_after_lines": args.preempt_after,
    })
    if args.out:
        with open(args.out, "w") as fh:
            for rec in doc["trace"]:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    text = (f"{doc['profile']}: {doc['tiles']} tiles, {doc['lines_processed']} lines, "
            f"{doc['bytes_fetched']} bytes fetched, output sha256 {doc['output_sha256']}")
    if doc["preempt"]:
        text += f"\npreempted: {doc['preempt']}"
    _emit(args, doc, text)
    return 0 if not doc["errors"] else 2


def cmd_attack(client: Client, args) -> int:
    doc = client.call("POST", "/attack", {"scenario": args.scenario, "seed": args.seed,
                                          "profile": _profile_ref(args.profile)})
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    lines = []
    for v in doc["verdicts"]:
        tag = "control " if v["control"] else "defended"
        state = "defended" if v["defended"] else "BREACHED"
        lines.append(f"{v['scenario']:18} {tag}  {state}")
    lines.append("all defended" if doc["ok"] else "UNDEFENDED SCENARIO")
    _emit(args, doc, "\n".join(lines))
    return 0 if doc["ok"] else 1


def cmd_model(client: Client, args) -> int:
    body = {"profile": _profile_ref(args.profile)}
    if args.schedule:
        body["schedule"] = json.loads(Path(args.schedule).read_text())
    doc = client.call("POST", "/model", body)
    if args.out:
        from .perf import rows_to_csv

        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for name, rows in doc["tables"].items():
            (out / f"{name}.csv").write_text(rows_to_csv(rows))
            if args.json:
                (out / f"{name}.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    text = (f"{doc['profile']}: direct {doc['direct_pct']}%  tessera {doc['tessera_pct']}%  "
            f"slack {doc['slack_ns']} ns  preempt {doc['preempt_us']} us  "
            f"FIFO(100 ns) {doc['fifo_high_water_bytes']} B")
    _emit(args, doc, text)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceState, create_app

    uvicorn.run(create_app(ServiceState(args.device_dir)), host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tessera", description=__doc__.splitlines()[0])
    p.add_argument("--url", help="talk to a running service instead of an in-process one")
    p.add_argument("--device-dir", default="device", help="simulated device store (default: ./device)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, profile_default="xavier"):
        sp.add_argument("--profile", default=profile_default, help="i9 | xavier | orin | path to profile JSON")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out")
        sp.add_argument("--json", action="store_true")

    sp = sub.add_parser("keygen", help="fuse a device identity keypair")
    sp.add_argument("--bits", type=int, choices=(2048, 4096), default=2048)
    sp.add_argument("--force", action="store_true", help="replace an existing identity")
    common(sp)
    sp.set_defaults(func=cmd_keygen)

    sp = sub.add_parser("pack", help="encrypt a flat weight file into a TSRA image")
    sp.add_argument("input")
    sp.add_argument("--app-cert", required=True)
    sp.add_argument("--device-pub", help="device public key PEM (default: ask the service)")
    sp.add_argument("--base-addr", type=lambda s: int(s, 0), default=0x8000_0000)
    sp.add_argument("--insecure-demo", action="store_true", help="fixed-counter image for the leak demo")
    common(sp)
    sp.set_defaults(func=cmd_pack)

    sp = sub.add_parser("inspect", help="decode an image header")
    sp.add_argument("image")
    common(sp)
    sp.set_defaults(func=cmd_inspect)

    sp = sub.add_parser("simulate", help="jitter study or functional ICE streaming")
    sp.add_argument("mode", choices=("jitter", "stream"))
    sp.add_argument("image", nargs="?")
    sp.add_argument("--app-cert")
    sp.add_argument("--tile-bytes", type=int, default=4096)
    sp.add_argument("--preempt-after", type=int, help="preempt after N issued lines, then resume")
    sp.add_argument("--n", type=int, default=100_000)
    sp.add_argument("--sigma-ks", type=float, default=0.1)
    sp.add_argument("--sigma-dram", type=float, default=0.2)
    sp.add_argument("--seeds", help="comma-separated seed sweep (overrides --seed)")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("attack", help="run attack scenarios")
    sp.add_argument("scenario", nargs="?", default="all")
    common(sp)
    sp.set_defaults(func=cmd_attack)

    sp = sub.add_parser("model", help="analytical tables")
    sp.add_argument("--schedule", help="tile schedule JSON")
    common(sp, profile_default="i9")
    sp.set_defaults(func=cmd_model)

    sp = sub.add_parser("serve", help="run the HTTP service")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)
    sp.set_defaults(func=None)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        return cmd_serve(args)
    try:
        return args.func(Client(args.url, args.device_dir), args)
    except ApiError as exc:
        print(f"tessera: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"tessera: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
