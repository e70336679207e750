"""The network-facing CMS process: HTTP + JSON over the engine.

Every mutating call maps 1:1 to an engine command and therefore to at least
one ledger event. Authentication is a bearer session minted against a
signed server nonce; second-channel endpoints live under /v1/second and are
authenticated by the second-channel signature itself, never by a session a
compromised primary device could hold.
"""

from __future__ import annotations

import asyncio
import base64
import os
import threading
from pathlib import Path

import anyio
from fastapi import FastAPI, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from . import signing
from .errors import (
    AuthRequired,
    CmsError,
    InvalidFilter,
    InvalidSignature,
    SchemaViolation,
    SessionExpired,
    ValidationError,
)
from .events import event_to_json
from .identity import Channel, Keystore, Role
from .ledger import LedgerEntry, LocalPeer
from .node import CmsNode, make_dev_peers
from .policy import load_policies
from .workflow import ConfigProposal, Verdict, WorkflowState, payload_digest

SESSION_TTL_MS = 3600 * 1000
MAX_WAIT_MS = 30_000


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _unb64(value, field: str) -> bytes:
    if not isinstance(value, str):
        raise SchemaViolation(f"{field} must be base64")
    try:
        return base64.b64decode(value, validate=True)
    except Exception:
        raise SchemaViolation(f"{field} is not valid base64") from None


def state_to_json(state: WorkflowState) -> dict:
    return {
        "proposal_id": state.proposal_id,
        "status": state.status.value,
        "round": state.round,
        "step_index": state.step_index,
        "active_reviewers": sorted(state.active_reviewers),
        "excluded_devices": sorted(state.excluded_devices),
        "override_flag": state.override_flag,
    }


def entry_to_json(entry: LedgerEntry) -> dict:
    return {
        "seq": entry.seq,
        "prev_hash_b64": _b64(entry.prev_hash),
        "entry_hash_b64": _b64(entry.entry_hash),
        "author_sig_b64": _b64(entry.author_sig),
        "endorsements": [
            {"peer": peer, "signature_b64": _b64(sig)}
            for peer, sig in entry.endorsements
        ],
        "event": event_to_json(entry.event),
    }


class SessionManager:
    """Single-use login nonces and expiring bearer tokens."""

    def __init__(self, node: CmsNode):
        self._node = node
        self._nonces: dict[str, bytes] = {}
        self._sessions: dict[str, tuple[str, int]] = {}
        self._lock = threading.Lock()

    def issue_nonce(self, actor_id: str) -> bytes:
        self._node.store.registry.get(actor_id)  # UnknownActor if absent
        nonce = self._node.rng.token(32)
        with self._lock:
            self._nonces[actor_id] = nonce
        return nonce

    def login(self, actor_id: str, nonce: bytes, signature: bytes) -> dict:
        with self._lock:
            expected = self._nonces.pop(actor_id, None)
        if expected is None or expected != nonce:
            raise InvalidSignature("login nonce unknown or already used")
        if not self._node.store.registry.verify(
                actor_id, Channel.PRIMARY, signing.login_message(nonce), signature):
            raise InvalidSignature("login signature does not verify")
        token = self._node.rng.token(32).hex()
        expires_at = self._node.clock.now_ms() + SESSION_TTL_MS
        with self._lock:
            self._sessions[token] = (actor_id, expires_at)
        return {"token": token, "actor_id": actor_id, "expires_at_ms": expires_at}

    def authenticate(self, request: Request) -> str:
        header = request.headers.get("authorization", "")
        if not header.lower().startswith("bearer "):
            raise AuthRequired("missing bearer token")
        token = header[7:].strip()
        with self._lock:
            session = self._sessions.get(token)
        if session is None:
            raise AuthRequired("unknown session token")
        actor_id, expires_at = session
        if self._node.clock.now_ms() >= expires_at:
            with self._lock:
                self._sessions.pop(token, None)
            raise SessionExpired("session expired; log in again")
        return actor_id


def create_app(node: CmsNode) -> FastAPI:
    from fastapi.middleware.cors import CORSMiddleware

    app = FastAPI(title="countersign", docs_url=None, redoc_url=None)
    # The review console is served as static files from a different origin;
    # authentication is bearer tokens and signatures, not cookies, so a
    # permissive dev CORS policy does not widen the trust model.
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    sessions = SessionManager(node)
    app.state.node = node
    app.state.sessions = sessions

    @app.exception_handler(CmsError)
    async def cms_error_handler(request: Request, exc: CmsError):
        return JSONResponse(status_code=exc.http_status, content=exc.to_wire())

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        wire = SchemaViolation(str(exc.errors()[:3])).to_wire()
        return JSONResponse(status_code=400, content=wire)

    def require_actor(request: Request, expected: str | None = None) -> str:
        actor_id = sessions.authenticate(request)
        if expected is not None and actor_id != expected:
            raise AuthRequired(f"session belongs to {actor_id}, not {expected}")
        return actor_id

    async def body_of(request: Request) -> dict:
        try:
            doc = await request.json()
        except Exception:
            raise SchemaViolation("request body must be JSON") from None
        if not isinstance(doc, dict):
            raise SchemaViolation("request body must be a JSON object")
        return doc

    async def run(command, *args):
        # Engine commands may block on peer round-trips; keep them off the loop.
        return await anyio.to_thread.run_sync(lambda: command(*args))

    # -- registration and auth ---------------------------------------------------

    @app.post("/v1/actors", status_code=201)
    async def register_actor(request: Request):
        doc = await body_of(request)
        role = _parse_role(doc.get("role", ""))
        second = doc.get("second_channel_pubkey_b64")
        actor = await run(
            node.register_actor,
            doc.get("actor_id", ""),
            role,
            _unb64(doc.get("primary_pubkey_b64"), "primary_pubkey_b64"),
            _unb64(second, "second_channel_pubkey_b64") if second else None,
            _unb64(doc.get("signature_b64"), "signature_b64"),
        )
        return {"actor_id": actor.actor_id, "role": actor.role.value}

    @app.post("/v1/auth/nonce")
    async def auth_nonce(request: Request):
        doc = await body_of(request)
        nonce = sessions.issue_nonce(doc.get("actor_id", ""))
        return {"nonce_b64": _b64(nonce)}

    @app.post("/v1/auth/login")
    async def auth_login(request: Request):
        doc = await body_of(request)
        return sessions.login(
            doc.get("actor_id", ""),
            _unb64(doc.get("nonce_b64"), "nonce_b64"),
            _unb64(doc.get("signature_b64"), "signature_b64"),
        )

    # -- proposals ----------------------------------------------------------------

    @app.post("/v1/proposals", status_code=201)
    async def post_proposal(request: Request):
        doc = await body_of(request)
        proposer = doc.get("proposer", "")
        require_actor(request, proposer)
        target = doc.get("target") or {}
        if not isinstance(target, dict) or len(target) != 1:
            raise SchemaViolation("target must be {\"device\": id} or {\"group\": id}")
        target_kind, target_id = next(iter(target.items()))
        payload = _unb64(doc.get("payload_b64"), "payload_b64")
        digest = _unb64(doc.get("payload_digest_b64"), "payload_digest_b64")
        if digest != payload_digest(payload):
            raise SchemaViolation("payload_digest_b64 does not match the payload")
        proposal = ConfigProposal(
            proposal_id=doc.get("proposal_id", ""),
            target_kind=target_kind,
            target=target_id,
            payload=payload,
            proposer=proposer,
            note=doc.get("note", ""),
            created_at=int(doc.get("created_at_ms", 0)),
        )
        state = await run(node.propose, proposal,
                          _unb64(doc.get("signature_b64"), "signature_b64"))
        return state_to_json(state)

    @app.get("/v1/proposals")
    async def list_proposals(request: Request):
        require_actor(request)
        await run(node.tick)
        return {"proposals": [
            _proposal_json(node, pid) for pid in sorted(node.store.proposals)
        ]}

    @app.get("/v1/proposals/{proposal_id}")
    async def get_proposal(proposal_id: str, request: Request):
        require_actor(request)
        await run(node.tick)
        return _proposal_json(node, proposal_id)

    @app.post("/v1/proposals/{proposal_id}/reviews")
    async def post_review(proposal_id: str, request: Request):
        doc = await body_of(request)
        reviewer = doc.get("reviewer", "")
        require_actor(request, reviewer)
        state = await run(
            node.submit_review,
            proposal_id,
            int(doc.get("round", 0)),
            reviewer,
            _parse_verdict(doc.get("verdict", "")),
            doc.get("commit_message", ""),
            _parse_channel(doc.get("channel", "primary")),
            _unb64(doc.get("signature_b64"), "signature_b64"),
        )
        return state_to_json(state)

    @app.get("/v1/proposals/{proposal_id}/audit")
    async def get_audit(proposal_id: str, request: Request):
        require_actor(request)
        entries = node.audit(proposal_id)
        report = node.verify_report()
        return {
            "proposal_id": proposal_id,
            "entries": [entry_to_json(e) for e in entries],
            "verification": {
                "ok": report.ok,
                "failed_seq": report.failed_seq,
                "failure": report.failure,
            },
        }

    @app.post("/v1/proposals/{proposal_id}/override")
    async def post_override(proposal_id: str, request: Request):
        doc = await body_of(request)
        admin = doc.get("admin", "")
        require_actor(request, admin)
        state = await run(
            node.emergency_override, proposal_id, admin,
            doc.get("justification", ""),
            _unb64(doc.get("signature_b64"), "signature_b64"))
        return state_to_json(state)

    # -- rounds ----------------------------------------------------------------------

    def _round_ref(round_id: str) -> tuple[str, int]:
        proposal_id, sep, round_no = round_id.rpartition(":")
        if not sep or not round_no.isdigit():
            raise SchemaViolation("round id must look like <proposal_id>:<round>")
        return proposal_id, int(round_no)

    @app.post("/v1/rounds/{round_id}/chat")
    async def post_chat(round_id: str, request: Request):
        doc = await body_of(request)
        author = doc.get("author", "")
        require_actor(request, author)
        proposal_id, round_no = _round_ref(round_id)
        await run(node.post_chat, proposal_id, round_no, author,
                  doc.get("text", ""),
                  _unb64(doc.get("signature_b64"), "signature_b64"))
        return {"accepted": True}

    @app.post("/v1/rounds/{round_id}/group-decision")
    async def post_group_decision(round_id: str, request: Request):
        doc = await body_of(request)
        reviewer = doc.get("reviewer", "")
        require_actor(request, reviewer)
        proposal_id, round_no = _round_ref(round_id)
        token = doc.get("attestation_token_b64")
        state = await run(
            node.commit_group_decision, proposal_id, round_no, reviewer,
            _parse_verdict(doc.get("verdict", "")),
            _unb64(token, "attestation_token_b64") if token else None,
            _unb64(doc.get("signature_b64"), "signature_b64"))
        return state_to_json(state)

    # -- second channel ----------------------------------------------------------------
    # Deliberately session-free: the second-channel signature is the authenticator,
    # so a compromised primary device holding a session cannot answer.

    @app.get("/v1/second/challenges")
    async def list_challenges(request: Request, reviewer: str | None = None):
        await run(node.tick)
        return {"challenges": [
            {
                "challenge_id": c.challenge_id,
                "proposal_id": c.proposal_id,
                "round": c.round,
                "reviewer": c.reviewer,
                "questioned_round": c.questioned_round,
                "questioned_verdict": c.questioned_verdict.value,
                "nonce_b64": _b64(c.nonce),
            }
            for c in node.open_challenges(reviewer)
        ]}

    @app.post("/v1/second/challenges/{challenge_id}/response")
    async def post_challenge_response(challenge_id: str, request: Request):
        doc = await body_of(request)
        state = await run(
            node.respond_challenge, challenge_id, doc.get("answer", ""),
            _unb64(doc.get("signature_b64"), "signature_b64"))
        return state_to_json(state)

    # -- devices --------------------------------------------------------------------------

    @app.get("/v1/devices/{device_id}/configs")
    async def device_configs(device_id: str, request: Request,
                             status: str = Query(default="authorized")):
        require_actor(request)
        if status != "authorized":
            raise InvalidFilter("only status=authorized is supported")
        await run(node.tick)
        proposals = node.authorized_for_device(device_id)
        return {
            "proposals": [_proposal_json(node, p.proposal_id) for p in proposals],
            "ledger_export_b64": _b64(node.ledger.export()),
        }

    @app.post("/v1/devices/{device_id}/ack")
    async def device_ack(device_id: str, request: Request):
        doc = await body_of(request)
        require_actor(request, device_id)
        state = await run(
            node.acknowledge_pull, doc.get("proposal_id", ""), device_id,
            _unb64(doc.get("signature_b64"), "signature_b64"))
        return state_to_json(state)

    # -- event stream -----------------------------------------------------------------------

    @app.get("/v1/events")
    async def get_events(request: Request, from_seq: int = 0, wait_ms: int = 0):
        require_actor(request)
        if from_seq < 0:
            raise InvalidFilter("from_seq must be >= 0")
        wait_ms = max(0, min(int(wait_ms), MAX_WAIT_MS))
        waited = 0.0
        while True:
            entries = node.ledger.entries()[from_seq:]
            if entries or waited * 1000 >= wait_ms:
                return {
                    "entries": [entry_to_json(e) for e in entries],
                    "next_seq": from_seq + len(entries),
                }
            await asyncio.sleep(0.05)
            waited += 0.05

    return app


def _parse_role(value: str) -> Role:
    try:
        return Role(value)
    except ValueError:
        raise SchemaViolation(f"unknown role {value!r}") from None


def _parse_verdict(value: str) -> Verdict:
    try:
        return Verdict(value)
    except ValueError:
        raise SchemaViolation(f"verdict must be Approve or Reject, not {value!r}") from None


def _parse_channel(value: str) -> Channel:
    try:
        return Channel(value)
    except ValueError:
        raise SchemaViolation(f"channel must be primary or second, not {value!r}") from None


def _proposal_json(node: CmsNode, proposal_id: str) -> dict:
    record = node.store.record(proposal_id)
    proposal = record.proposal
    state = record.state
    doc = {
        "proposal_id": proposal.proposal_id,
        "target": {proposal.target_kind: proposal.target},
        "payload_b64": _b64(proposal.payload),
        "payload_digest_b64": _b64(proposal.digest),
        "proposer": proposal.proposer,
        "note": proposal.note,
        "created_at_ms": proposal.created_at,
        "state": state_to_json(state),
        "round_info": None,
    }
    current = record.rounds.get(state.round)
    if current is not None:
        token = node.store.meeting_tokens.get((proposal_id, state.round))
        doc["round_info"] = {
            "round": current.round,
            "step_kind": current.step_kind,
            "outcome": current.outcome.value,
            "deadline_ms": current.deadline,
            "meeting_token_hex": token.hex() if token else None,
        }
    return doc


# -- process entry point -----------------------------------------------------------

def build_node_from_env(env=os.environ) -> CmsNode:
    """Assemble a node from CMS_* variables; in-process peers when CMS_PEERS
    is unset, remote peer processes otherwise."""
    policy_file = env.get("CMS_POLICY_FILE")
    if not policy_file:
        raise ValidationError("CMS_POLICY_FILE must point at a policy file")
    policies = load_policies(Path(policy_file).read_bytes())

    ledger_dir = env.get("CMS_LEDGER_DIR")
    persist_path = None
    system_keystore = None
    if ledger_dir:
        directory = Path(ledger_dir)
        directory.mkdir(parents=True, exist_ok=True)
        persist_path = directory / "ledger.bin"
        keys_path = directory / "system.keys"
        if keys_path.exists():
            system_keystore = Keystore.load(keys_path)
        else:
            system_keystore = Keystore.generate()
            system_keystore.save(keys_path)
    if env.get("CMS_SYSTEM_KEYSTORE"):
        system_keystore = Keystore.load(env["CMS_SYSTEM_KEYSTORE"])
    if system_keystore is None:
        system_keystore = Keystore.generate()

    peers_env = env.get("CMS_PEERS", "").strip()
    appender_pub = system_keystore.key_record("cms").primary_pubkey
    if peers_env:
        from .peernet import RemotePeer
        peers = [RemotePeer(url.strip()) for url in peers_env.split(",") if url.strip()]
        peer_keys = {peer.peer_id: peer.pubkey for peer in peers}
    else:
        # Dev mode: in-process peers. Their seeds persist next to the ledger
        # so endorsements from earlier runs still verify after a restart.
        import json as _json
        seeds = None
        if ledger_dir:
            peers_path = Path(ledger_dir) / "peers.json"
            if peers_path.exists():
                seeds = {k: bytes.fromhex(v)
                         for k, v in _json.loads(peers_path.read_text()).items()}
            else:
                seeds = {f"peer{i + 1}": os.urandom(32) for i in range(4)}
                peers_path.write_text(_json.dumps(
                    {k: v.hex() for k, v in seeds.items()}, indent=0))
        from .clock import OsRandom
        peers, peer_keys = make_dev_peers(OsRandom(), appender_pubkey=appender_pub,
                                          seeds=seeds)

    preexisting = persist_path.read_bytes() if persist_path and persist_path.exists() else b""
    node = CmsNode(
        policies, peers, peer_keys, system_keystore,
        persist_path=persist_path,
        register_system=not preexisting,
    )
    if preexisting:
        node.adopt(preexisting)
        for peer in peers:
            if isinstance(peer, LocalPeer):
                for entry in node.ledger.entries():
                    peer.commit(entry)
    return node


def main(argv=None) -> int:
    import uvicorn

    listen = os.environ.get("CMS_LISTEN_ADDR", "127.0.0.1:8440")
    host, _, port = listen.rpartition(":")
    node = build_node_from_env()
    uvicorn.run(create_app(node), host=host or "127.0.0.1", port=int(port),
                log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
