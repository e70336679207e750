from __future__ import annotations

import base64
import json

import pytest
from fastapi.testclient import TestClient

from countersign.client import ServiceClient
from countersign.clock import LogicalClock, SeededRandom
from countersign.errors import (
    AuthRequired,
    ExcludedDevice,
    InvalidSignature,
    NoPolicyForTarget,
    SessionExpired,
)
from countersign.identity import Channel, Keystore, Role
from countersign.node import CmsNode
from countersign.policy import load_policies
from countersign.service import SESSION_TTL_MS, build_node_from_env, create_app

from helpers import HttpActor, policy_doc


@pytest.fixture()
def rig():
    clock = LogicalClock()
    rng = SeededRandom(99)
    doc = policy_doc(reviewers=("alice", "bob", "carol", "dave"),
                     strategy=[("BB2", 60000), ("BB1", 60000)], device="d1")
    node = CmsNode.dev(load_policies(json.dumps(doc)), clock=clock, rng=rng)
    app = create_app(node)

    def make_client():
        return ServiceClient(client=TestClient(app))

    class Rig:
        pass

    rig = Rig()
    rig.node, rig.clock, rig.rng, rig.app, rig.make_client = node, clock, rng, app, make_client
    rig.petra = HttpActor(make_client, "petra", Role.PROPOSER, rng)
    rig.alice = HttpActor(make_client, "alice", Role.REVIEWER, rng)
    rig.bob = HttpActor(make_client, "bob", Role.REVIEWER, rng)
    rig.carol = HttpActor(make_client, "carol", Role.REVIEWER, rng)
    rig.dave = HttpActor(make_client, "dave", Role.REVIEWER, rng)
    return rig


def test_login_flow_and_replayed_nonce(rig):
    client = rig.make_client()
    doc = client.post("/v1/auth/nonce", {"actor_id": "alice"}, authenticated=False)
    nonce = base64.b64decode(doc["nonce_b64"])
    from countersign import signing
    sig = rig.alice.keystore.sign(Channel.PRIMARY, signing.login_message(nonce))
    login = client.post("/v1/auth/login", {
        "actor_id": "alice",
        "nonce_b64": doc["nonce_b64"],
        "signature_b64": base64.b64encode(sig).decode(),
    }, authenticated=False)
    assert login["expires_at_ms"] == rig.clock.now_ms() + SESSION_TTL_MS
    # nonces are single use
    with pytest.raises(InvalidSignature):
        client.post("/v1/auth/login", {
            "actor_id": "alice",
            "nonce_b64": doc["nonce_b64"],
            "signature_b64": base64.b64encode(sig).decode(),
        }, authenticated=False)


def test_expired_session_rejected(rig):
    rig.petra.propose("p0", "device", "d1")
    rig.clock.advance(SESSION_TTL_MS + 1)
    with pytest.raises(SessionExpired):
        rig.petra.client.get_proposal("p0")


def test_propose_and_state_roundtrip(rig):
    state = rig.petra.propose("p1", "device", "d1", payload=b"cfg-1")
    assert state["status"] == "UnderReview"
    assert state["active_reviewers"] == ["alice", "bob", "carol", "dave"]
    doc = rig.petra.client.get_proposal("p1")
    assert doc["payload_b64"] == base64.b64encode(b"cfg-1").decode()
    assert doc["state"]["status"] == "UnderReview"


def test_error_codes_are_stable(rig):
    with pytest.raises(NoPolicyForTarget) as err:
        rig.petra.propose("p1", "device", "ghost-device")
    assert err.value.code == 1010
    resp = TestClient(rig.app).post("/v1/proposals", json={})
    assert resp.status_code == 401
    assert resp.json()["code"] == AuthRequired.code


def test_full_review_flow_over_http(rig):
    rig.petra.propose("p1", "device", "d1")
    rig.alice.review("p1", 0, "Approve", "fine by me")
    rig.bob.review("p1", 0, "Reject", "wrong checksum")
    rig.carol.review("p1", 0, "Reject", "do not ship")
    state = rig.dave.review("p1", 0, "Approve")
    assert state["status"] == "Conflict"
    assert state["round"] == 1

    challenges = rig.make_client().open_challenges("carol")["challenges"]
    assert len(challenges) == 1
    for actor in (rig.alice, rig.bob, rig.dave):
        own = rig.make_client().open_challenges(actor.actor_id)["challenges"][0]
        actor.respond_challenge(own, "confirm")
    state = rig.carol.respond_challenge(challenges[0], "deny")
    assert state["excluded_devices"] == ["carol"]
    assert state["round"] == 2  # still mixed -> BB1 follows

    with pytest.raises(ExcludedDevice):
        rig.carol.review("p1", 2, "Approve")

    rig.bob.review("p1", 2, "Approve", "checksum was fine after all")
    final = rig.petra.client.get_proposal("p1")
    assert final["state"]["status"] == "Authorized"


def test_audit_matches_ledger_filter(rig):
    rig.petra.propose("p1", "device", "d1")
    rig.alice.review("p1", 0, "Approve")
    audit = rig.petra.client.audit("p1")
    assert audit["verification"]["ok"] is True
    expected = rig.node.ledger.get_entries(proposal_id="p1")
    assert [e["seq"] for e in audit["entries"]] == [e.seq for e in expected]


def test_events_replay_resume_and_agreement(rig):
    rig.petra.propose("p1", "device", "d1")
    rig.alice.review("p1", 0, "Approve")
    client_a, client_b = rig.make_client(), rig.make_client()
    for client in (client_a, client_b):
        client.login("petra", rig.petra.keystore)
    full = client_a.events(from_seq=0)
    assert full["next_seq"] == len(rig.node.ledger)
    assert [e["seq"] for e in full["entries"]] == list(range(full["next_seq"]))
    resumed = client_a.events(from_seq=full["next_seq"] - 3)
    assert [e["seq"] for e in resumed["entries"]] == \
        list(range(full["next_seq"] - 3, full["next_seq"]))
    # two subscribers see identical sequences
    assert client_a.events(from_seq=0) == client_b.events(from_seq=0)


def test_repeated_reads_identical(rig):
    rig.petra.propose("p1", "device", "d1")
    first = rig.petra.client.get_proposal("p1")
    second = rig.petra.client.get_proposal("p1")
    assert first == second


def test_unauthenticated_mutation_leaves_ledger_unchanged(rig):
    before = len(rig.node.ledger)
    raw = TestClient(rig.app)
    body = {"proposal_id": "px", "target": {"device": "d1"},
            "payload_b64": "eA==", "payload_digest_b64": "eA==",
            "proposer": "petra", "note": "", "created_at_ms": 0,
            "signature_b64": "eA=="}
    assert raw.post("/v1/proposals", json=body).status_code == 401
    assert raw.post("/v1/proposals/p1/reviews", json={}).status_code == 401
    assert raw.post("/v1/devices/d1/ack", json={}).status_code == 401
    assert raw.post("/v1/proposals/p1/override", json={}).status_code == 401
    assert len(rig.node.ledger) == before


def test_session_actor_must_match_payload_actor(rig):
    rig.petra.propose("p1", "device", "d1")
    from countersign import signing
    message = signing.review_message("p1", 0, "alice", "Approve", "", "primary")
    forged = {
        "round": 0, "reviewer": "alice", "verdict": "Approve",
        "commit_message": "", "channel": "primary",
        "signature_b64": base64.b64encode(
            rig.bob.keystore.sign(Channel.PRIMARY, message)).decode(),
    }
    with pytest.raises(AuthRequired):
        rig.bob.client.post("/v1/proposals/p1/reviews", forged)


def test_forged_second_channel_response_rejected_and_no_ledger_change(rig):
    rig.petra.propose("p1", "device", "d1")
    rig.alice.review("p1", 0, "Approve")
    rig.bob.review("p1", 0, "Reject")
    rig.carol.review("p1", 0, "Reject")
    rig.dave.review("p1", 0, "Approve")
    challenge = rig.make_client().open_challenges("carol")["challenges"][0]
    before = len(rig.node.ledger)
    with pytest.raises(InvalidSignature):
        rig.make_client().post(
            f"/v1/second/challenges/{challenge['challenge_id']}/response",
            {"answer": "deny",
             "signature_b64": base64.b64encode(b"\x00" * 64).decode()},
            authenticated=False)
    assert len(rig.node.ledger) == before


def test_device_configs_and_ack(rig, tmp_path):
    agent = HttpActor(rig.make_client, "d1", Role.DEVICE_AGENT, rig.rng)
    rig.petra.propose("p1", "device", "d1", payload=b"cfg-payload")
    for actor in (rig.alice, rig.bob, rig.carol, rig.dave):
        actor.review("p1", 0, "Approve")
    configs = agent.client.device_configs("d1")
    assert [p["proposal_id"] for p in configs["proposals"]] == ["p1"]
    from countersign.ledger import read_export, verify_chain
    entries = read_export(base64.b64decode(configs["ledger_export_b64"]))
    assert verify_chain(entries, rig.node.peer_keys).ok
    state = agent.ack("p1")
    assert state["status"] == "Deployed"
    assert agent.client.device_configs("d1")["proposals"] == []


def test_restart_replay_reconstructs_states(tmp_path):
    policy_path = tmp_path / "policies.json"
    policy_path.write_text(json.dumps(policy_doc(reviewers=("alice", "bob"))))
    env = {"CMS_POLICY_FILE": str(policy_path), "CMS_LEDGER_DIR": str(tmp_path)}

    node = build_node_from_env(env)
    app = create_app(node)
    rng = SeededRandom(5)

    def make_client():
        return ServiceClient(client=TestClient(app))

    petra = HttpActor(make_client, "petra", Role.PROPOSER, rng)
    alice = HttpActor(make_client, "alice", Role.REVIEWER, rng)
    bob = HttpActor(make_client, "bob", Role.REVIEWER, rng)
    petra.propose("p1", "device", "d1")
    alice.review("p1", 0, "Approve")
    bob.review("p1", 0, "Approve")
    states = {pid: record.state for pid, record in node.store.proposals.items()}

    reborn = build_node_from_env(env)
    assert len(reborn.ledger) == len(node.ledger)
    for pid, state in states.items():
        assert reborn.store.proposals[pid].state == state
    # the reborn node can keep appending to the same chain
    agent_keys = Keystore.generate()
    record = agent_keys.key_record("d1")
    from countersign import signing
    message = signing.registration_message("d1", Role.DEVICE_AGENT.value,
                                           record.primary_pubkey, None)
    reborn.register_actor("d1", Role.DEVICE_AGENT, record.primary_pubkey, None,
                          agent_keys.sign(Channel.PRIMARY, message))
    assert len(reborn.ledger) == len(node.ledger) + 1


def test_events_long_poll_times_out_empty(rig):
    import time as _time

    client = rig.make_client()
    client.login("petra", rig.petra.keystore)
    tail = len(rig.node.ledger)
    started = _time.monotonic()
    doc = client.events(from_seq=tail, wait_ms=300)
    elapsed = _time.monotonic() - started
    assert doc["entries"] == []
    assert doc["next_seq"] == tail
    assert elapsed < 5  # returns promptly after the wait window
