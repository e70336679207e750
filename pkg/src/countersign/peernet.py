"""Ledger peers over HTTP: the peer daemon and the client handle.

A peer process wraps the same LocalPeer logic used in dev mode and exposes
endorse/commit/chain over the wire; the service's ledger talks to it through
RemotePeer. A peer only ever signs entries that extend its own replica, so
the service cannot make a majority of honest peers endorse a rewritten
history.
"""

from __future__ import annotations

import base64
import json
import os
from pathlib import Path

import httpx
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .canonical import Reader, u32
from .errors import CmsError, SchemaViolation, ServiceUnreachable
from .identity import Keystore, public_key
from .ledger import LocalPeer, decode_entry, encode_entry, export_entries


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _unb64(value: str) -> bytes:
    return base64.b64decode(value)


class RemotePeer:
    """Client handle implementing the PeerHandle protocol over HTTP."""

    def __init__(self, base_url: str, timeout: float = 10.0):
        self._client = httpx.Client(base_url=base_url.rstrip("/"), timeout=timeout)
        try:
            info = self._client.get("/peer/info").json()
        except httpx.HTTPError as exc:
            raise ServiceUnreachable(f"peer {base_url} unreachable: {exc}") from exc
        self.peer_id: str = info["peer_id"]
        self.pubkey: bytes = _unb64(info["pubkey_b64"])

    def endorse(self, seq, prev_hash, event_bytes, author_id, author_sig):
        try:
            response = self._client.post("/peer/endorse", json={
                "seq": seq,
                "prev_hash_b64": _b64(prev_hash),
                "event_b64": _b64(event_bytes),
                "author_id": author_id,
                "author_sig_b64": _b64(author_sig),
            })
        except httpx.HTTPError:
            return None
        if response.status_code != 200:
            return None
        signature = response.json().get("signature_b64")
        return _unb64(signature) if signature else None

    def commit(self, entry) -> bool:
        try:
            response = self._client.post("/peer/commit", json={
                "entry_b64": _b64(encode_entry(entry)),
            })
        except httpx.HTTPError:
            return False
        return response.status_code == 200 and response.json().get("ok", False)


# -- peer daemon ---------------------------------------------------------------------

def load_peer_config(path: str | Path) -> dict:
    doc = json.loads(Path(path).read_text())
    required = {"peer_id", "keystore", "appender_pubkey_b64", "peers"}
    missing = required - set(doc)
    if missing:
        raise SchemaViolation(f"peer config missing keys: {sorted(missing)}")
    return doc


def build_local_peer(config: dict, config_dir: Path) -> tuple[LocalPeer, Path | None]:
    keystore = Keystore.load((config_dir / config["keystore"]).resolve())
    peer_keys = {pid: _unb64(pub) for pid, pub in config["peers"].items()}
    own_pub = public_key(keystore.primary_seed)
    if peer_keys.get(config["peer_id"]) != own_pub:
        raise SchemaViolation("peer keystore does not match the configured pubkey")
    appender = {"cms": _unb64(config["appender_pubkey_b64"])}
    peer = LocalPeer(config["peer_id"], keystore.primary_seed, peer_keys, appender)
    chain_path = None
    if config.get("chain_path"):
        chain_path = (config_dir / config["chain_path"]).resolve()
        if chain_path.exists():
            data = chain_path.read_bytes()
            reader = Reader(data)
            while reader.remaining():
                peer.commit(decode_entry(reader.blob()))
    return peer, chain_path


def create_peer_app(peer: LocalPeer, chain_path: Path | None = None) -> FastAPI:
    app = FastAPI(title=f"countersign-peer-{peer.peer_id}",
                  docs_url=None, redoc_url=None)

    @app.exception_handler(CmsError)
    async def cms_error_handler(request: Request, exc: CmsError):
        return JSONResponse(status_code=exc.http_status, content=exc.to_wire())

    @app.get("/peer/info")
    async def info():
        return {
            "peer_id": peer.peer_id,
            "pubkey_b64": _b64(public_key(peer._seed)),
            "height": len(peer.chain),
        }

    @app.post("/peer/endorse")
    async def endorse(request: Request):
        doc = await request.json()
        signature = peer.endorse(
            int(doc["seq"]),
            _unb64(doc["prev_hash_b64"]),
            _unb64(doc["event_b64"]),
            doc["author_id"],
            _unb64(doc["author_sig_b64"]),
        )
        if signature is None:
            return JSONResponse(status_code=409,
                                content={"code": 0, "error": "Refused",
                                         "message": "entry does not extend this head"})
        return {"signature_b64": _b64(signature)}

    @app.post("/peer/commit")
    async def commit(request: Request):
        doc = await request.json()
        entry = decode_entry(_unb64(doc["entry_b64"]))
        accepted = peer.commit(entry)
        if accepted and chain_path is not None:
            raw = encode_entry(entry)
            with chain_path.open("ab") as fh:
                fh.write(u32(len(raw)) + raw)
        return {"ok": accepted, "height": len(peer.chain)}

    @app.get("/peer/chain")
    async def chain():
        return {"export_b64": _b64(export_entries(peer.chain))}

    return app


def main(argv=None) -> int:
    import argparse

    import uvicorn

    parser = argparse.ArgumentParser(prog="countersign-peer")
    parser.add_argument("--config", required=True, help="peer config JSON")
    parser.add_argument("--listen", default=os.environ.get("PEER_LISTEN_ADDR",
                                                           "127.0.0.1:9101"))
    args = parser.parse_args(argv)
    config_path = Path(args.config).resolve()
    config = load_peer_config(config_path)
    peer, chain_path = build_local_peer(config, config_path.parent)
    host, _, port = args.listen.rpartition(":")
    uvicorn.run(create_peer_app(peer, chain_path), host=host or "127.0.0.1",
                port=int(port), log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
