"""HTTP client for the CMS service, shared by the CLI and the device agent.

Signs operation payloads locally with the caller's keystore; secret keys
never leave the process. Wire errors are rehydrated into the same exception
types the engine raises, keyed by their stable numeric code.
"""

from __future__ import annotations

import base64

import httpx

from . import errors, signing
from .identity import Channel, Keystore, Role


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def unb64(data: str) -> bytes:
    return base64.b64decode(data)


class ServiceClient:
    def __init__(self, base_url: str = "", transport: httpx.BaseTransport | None = None,
                 timeout: float = 30.0, client: httpx.Client | None = None):
        self._client = client or httpx.Client(
            base_url=base_url.rstrip("/"), transport=transport, timeout=timeout)
        self._token: str | None = None

    def close(self) -> None:
        self._client.close()

    # -- low-level ---------------------------------------------------------------

    def _request(self, method: str, path: str, json_body=None, params=None,
                 authenticated: bool = True) -> dict:
        headers = {}
        if authenticated and self._token:
            headers["Authorization"] = f"Bearer {self._token}"
        try:
            response = self._client.request(
                method, path, json=json_body, params=params, headers=headers)
        except httpx.HTTPError as exc:
            raise errors.ServiceUnreachable(str(exc)) from exc
        if response.status_code >= 400:
            try:
                doc = response.json()
                raise errors.from_code(int(doc["code"]), doc.get("message", ""))
            except (KeyError, ValueError, TypeError):
                raise errors.ServiceUnreachable(
                    f"HTTP {response.status_code}: {response.text[:200]}") from None
        return response.json()

    def get(self, path: str, params=None) -> dict:
        return self._request("GET", path, params=params)

    def post(self, path: str, json_body=None, authenticated: bool = True) -> dict:
        return self._request("POST", path, json_body=json_body,
                             authenticated=authenticated)

    # -- auth -------------------------------------------------------------------

    def login(self, actor_id: str, keystore: Keystore) -> dict:
        nonce_doc = self.post("/v1/auth/nonce", {"actor_id": actor_id},
                              authenticated=False)
        nonce = unb64(nonce_doc["nonce_b64"])
        signature = keystore.sign(Channel.PRIMARY, signing.login_message(nonce))
        doc = self.post("/v1/auth/login", {
            "actor_id": actor_id,
            "nonce_b64": b64(nonce),
            "signature_b64": b64(signature),
        }, authenticated=False)
        self._token = doc["token"]
        return doc

    def register_actor(self, actor_id: str, role: Role, keystore: Keystore) -> dict:
        keys = keystore.key_record(actor_id)
        message = signing.registration_message(
            actor_id, role.value, keys.primary_pubkey, keys.second_channel_pubkey)
        return self.post("/v1/actors", {
            "actor_id": actor_id,
            "role": role.value,
            "primary_pubkey_b64": b64(keys.primary_pubkey),
            "second_channel_pubkey_b64": (
                b64(keys.second_channel_pubkey) if keys.second_channel_pubkey else None),
            "signature_b64": b64(keystore.sign(Channel.PRIMARY, message)),
        }, authenticated=False)

    # -- operations ----------------------------------------------------------------

    def propose(self, actor_id: str, keystore: Keystore, proposal_id: str,
                target_kind: str, target: str, payload: bytes, note: str,
                created_at: int) -> dict:
        import hashlib
        digest = hashlib.sha256(payload).digest()
        message = signing.proposal_message(
            proposal_id, target_kind, target, digest, actor_id, note, created_at)
        return self.post("/v1/proposals", {
            "proposal_id": proposal_id,
            "target": {target_kind: target},
            "payload_b64": b64(payload),
            "payload_digest_b64": b64(digest),
            "proposer": actor_id,
            "note": note,
            "created_at_ms": created_at,
            "signature_b64": b64(keystore.sign(Channel.PRIMARY, message)),
        })

    def get_proposal(self, proposal_id: str) -> dict:
        return self.get(f"/v1/proposals/{proposal_id}")

    def list_proposals(self) -> dict:
        return self.get("/v1/proposals")

    def submit_review(self, actor_id: str, keystore: Keystore, proposal_id: str,
                      round_no: int, verdict: str, commit_message: str,
                      channel: Channel = Channel.PRIMARY) -> dict:
        message = signing.review_message(
            proposal_id, round_no, actor_id, verdict, commit_message, channel.value)
        return self.post(f"/v1/proposals/{proposal_id}/reviews", {
            "round": round_no,
            "reviewer": actor_id,
            "verdict": verdict,
            "commit_message": commit_message,
            "channel": channel.value,
            "signature_b64": b64(keystore.sign(channel, message)),
        })

    def audit(self, proposal_id: str) -> dict:
        return self.get(f"/v1/proposals/{proposal_id}/audit")

    def post_chat(self, actor_id: str, keystore: Keystore, proposal_id: str,
                  round_no: int, text: str) -> dict:
        message = signing.chat_message(proposal_id, round_no, actor_id, text)
        return self.post(f"/v1/rounds/{proposal_id}:{round_no}/chat", {
            "author": actor_id,
            "text": text,
            "signature_b64": b64(keystore.sign(Channel.PRIMARY, message)),
        })

    def group_decision(self, actor_id: str, keystore: Keystore, proposal_id: str,
                       round_no: int, verdict: str,
                       attestation_token: bytes | None = None) -> dict:
        message = signing.group_decision_message(
            proposal_id, round_no, actor_id, verdict, attestation_token)
        return self.post(f"/v1/rounds/{proposal_id}:{round_no}/group-decision", {
            "reviewer": actor_id,
            "verdict": verdict,
            "attestation_token_b64": b64(attestation_token) if attestation_token else None,
            "signature_b64": b64(keystore.sign(Channel.PRIMARY, message)),
        })

    def open_challenges(self, reviewer: str) -> dict:
        return self._request("GET", "/v1/second/challenges",
                             params={"reviewer": reviewer}, authenticated=False)

    def respond_challenge(self, keystore: Keystore, challenge_id: str,
                          nonce: bytes, answer: str) -> dict:
        message = signing.challenge_response_message(challenge_id, nonce, answer)
        return self.post(f"/v1/second/challenges/{challenge_id}/response", {
            "answer": answer,
            "signature_b64": b64(keystore.sign(Channel.SECOND, message)),
        }, authenticated=False)

    def device_configs(self, device_id: str) -> dict:
        return self.get(f"/v1/devices/{device_id}/configs",
                        params={"status": "authorized"})

    def acknowledge(self, device_id: str, keystore: Keystore, proposal_id: str) -> dict:
        message = signing.ack_message(proposal_id, device_id)
        return self.post(f"/v1/devices/{device_id}/ack", {
            "proposal_id": proposal_id,
            "signature_b64": b64(keystore.sign(Channel.PRIMARY, message)),
        })

    def override(self, actor_id: str, keystore: Keystore, proposal_id: str,
                 justification: str) -> dict:
        message = signing.override_message(proposal_id, actor_id, justification)
        return self.post(f"/v1/proposals/{proposal_id}/override", {
            "admin": actor_id,
            "justification": justification,
            "signature_b64": b64(keystore.sign(Channel.PRIMARY, message)),
        })

    def events(self, from_seq: int = 0, wait_ms: int = 0) -> dict:
        return self.get("/v1/events", params={"from_seq": from_seq,
                                              "wait_ms": wait_ms})
