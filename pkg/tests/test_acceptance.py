"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line with its runtime against the stated budget.

Run with `pytest -s tests/test_acceptance.py -v` to see the lines live.
"""

from __future__ import annotations

import base64
import itertools
import json
import random
import socket
import subprocess
import sys
import time
from contextlib import contextmanager
from pathlib import Path

from countersign.cli import render_audit_report
from countersign.events import EventKind
from countersign.ledger import (
    export_entries,
    read_export,
    resolve_fork,
    verify_chain,
)
from countersign.scenarios import builtin_scenarios, compare, run_scenario
from countersign.service import entry_to_json
from countersign.workflow import ProposalStatus, rebuild

from helpers import ADMIN, Harness


@contextmanager
def criterion(name: str, budget_s: float):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"FAIL  {name}  ({time.perf_counter() - start:.2f}s)")
        raise
    elapsed = time.perf_counter() - start
    if elapsed >= budget_s:
        print(f"FAIL  {name}  ({elapsed:.2f}s > budget {budget_s}s)")
        raise AssertionError(f"{name}: {elapsed:.2f}s exceeds budget {budget_s}s")
    print(f"PASS  {name}  ({elapsed:.2f}s, budget {budget_s}s)")


def _scenario(name: str):
    for scenario in builtin_scenarios():
        if scenario.name == name:
            return scenario
    raise KeyError(name)


def test_unanimity_oracle_exhaustive():
    # All verdict vectors for k=2,3,4 match the brute-force unanimity rule.
    # One device per vector (via a shared group policy) so no cleanup between
    # sweeps is needed; auto-advance off so the Conflict result is observable.
    import json as _json

    from countersign.clock import LogicalClock, SeededRandom
    from countersign.node import CmsNode
    from countersign.policy import load_policies
    from countersign.scenarios import Participant
    from countersign.identity import Role
    from countersign.workflow import ConfigProposal, Verdict

    with criterion("unanimity-oracle", 1.0):
        names = ("r1", "r2", "r3", "r4")
        for k in (2, 3, 4):
            reviewers = names[:k]
            vectors = list(itertools.product((Verdict.APPROVE, Verdict.REJECT),
                                             repeat=k))
            devices = [f"d-{i}" for i in range(len(vectors))]
            doc = {
                "groups": [{"group_id": "fleet", "members": devices}],
                "policies": [{
                    "policy_id": "fleet-policy",
                    "selector": {"group": "fleet"},
                    "reviewers": list(reviewers),
                    "min_active_reviewers": 2,
                    "reviewer_pool": [],
                    "strategy": [],
                }],
            }
            rng = SeededRandom(k)
            node = CmsNode.dev(load_policies(_json.dumps(doc)), peer_count=1,
                               clock=LogicalClock(), rng=rng, auto_advance=False)
            petra = Participant.create(node, "petra", Role.PROPOSER, rng)
            cast = {r: Participant.create(node, r, Role.REVIEWER, rng)
                    for r in reviewers}
            for i, vector in enumerate(vectors):
                pid = f"u-{k}-{i}"
                petra.propose(ConfigProposal(pid, "device", devices[i],
                                             b"cfg", "petra"))
                for reviewer, verdict in zip(reviewers, vector):
                    state = cast[reviewer].review(pid, 0, verdict)
                if all(v == Verdict.APPROVE for v in vector):
                    expected = ProposalStatus.AUTHORIZED
                elif all(v == Verdict.REJECT for v in vector):
                    expected = ProposalStatus.REJECTED
                else:
                    expected = ProposalStatus.CONFLICT
                assert state.status == expected, (vector, state.status)


def test_claim1_reject_invalid_configurations():
    # Mediation rejects the invalid configuration the majority would approve.
    with criterion("claim1-reject-invalid", 5.0):
        scenario = _scenario("s01-careful-minority")
        result = run_scenario(scenario)
        row = compare(scenario)
        assert result.final_status == ProposalStatus.REJECTED
        assert row.majority_status == ProposalStatus.AUTHORIZED
        assert row.mediated_correct is True
        assert row.majority_correct is False


def test_claim2_accept_valid_under_attack():
    # The compromised device is excluded via the second channel and the
    # valid configuration is still authorized.
    with criterion("claim2-accept-valid-under-attack", 5.0):
        scenario = _scenario("s02-compromised-device")
        result = run_scenario(scenario)
        assert result.final_status == ProposalStatus.AUTHORIZED
        assert "carol" in result.excluded_devices


def test_strategy_exhaustion_rejects_after_three_rounds():
    # [BB1, BB2] with persistent disagreement: round 0 + 2 mediation rounds.
    with criterion("strategy-exhaustion", 5.0):
        scenario = _scenario("s03-stubborn-adversary")
        result = run_scenario(scenario)
        assert result.final_status == ProposalStatus.REJECTED
        assert result.rounds_used == 3
        closed = [e for e in result.entries
                  if e.event.kind == EventKind.ROUND_CLOSED]
        assert len(closed) == 2  # exactly two mediation rounds ran


def test_tamper_evidence_100_trials():
    # 50 committed entries over 4 peers; any single flipped byte on one peer
    # is detected and the honest 3-peer prefix wins the fork resolution.
    with criterion("tamper-evidence", 10.0):
        h = Harness(reviewers=("alice", "bob"), seed=50)
        agent = None
        i = 0
        while len(h.node.ledger) < 50:
            pid = f"fill-{i}"
            h.propose(pid)
            h.review("alice", "Approve", pid=pid)
            h.review("bob", "Approve", pid=pid)
            i += 1
        honest = h.node.ledger.entries()[:50]
        peer_keys = h.node.peer_keys
        rng = random.Random(4242)
        detected = 0
        for trial in range(100):
            index = rng.randrange(len(honest))
            raw = bytearray(export_entries([honest[index]]))
            offset = rng.randrange(4, len(raw))  # skip the outer length prefix
            raw[offset] ^= 1 << rng.randrange(8)
            try:
                tampered_entry = read_export(bytes(raw))[0]
            except Exception:
                detected += 1  # no longer parses: detected
                continue
            tampered_view = list(honest)
            tampered_view[index] = tampered_entry
            chain_bad = not verify_chain(tampered_view, peer_keys).ok
            canonical = resolve_fork(
                [tampered_view, list(honest), list(honest), list(honest)])
            assert canonical == honest  # the honest 3-peer prefix wins
            outvoted = tampered_view != honest
            if chain_bad or outvoted:
                detected += 1
        assert detected == 100, f"only {detected}/100 mutations detected"


def test_fail_closed_agent_1000_corruptions(tmp_path):
    # 1000 randomized corruptions of server responses: the apply hook must
    # never run.
    from test_agent import _rig, _authorize, corrupt_response

    with criterion("fail-closed-agent", 30.0):
        node, actors, agent, log = _rig(tmp_path, seed=60)
        _authorize(actors)
        honest = base64.b64decode(
            agent.client.device_configs("d1")["ledger_export_b64"])
        rng = random.Random(31337)
        failures = 0
        for _ in range(1000):
            response = corrupt_response(honest, rng)
            agent._fetch = lambda doc=response: doc
            try:
                proposal = agent.poll_and_verify()
                assert proposal is None
            except Exception:
                failures += 1
        assert failures > 0  # corruptions are in fact being rejected, not ignored
        assert not log.exists() or log.read_text() == ""


def test_replay_determinism_every_scenario():
    # Replaying the exported ledger reconstructs every proposal's workflow
    # state field by field, for every shipped scenario.
    for scenario in builtin_scenarios():
        with criterion(f"replay-determinism[{scenario.name}]", 5.0):
            result = run_scenario(scenario)
            entries = read_export(result.export)
            assert entries == result.entries
            replayed = rebuild([entry.event for entry in entries])
            live = result.node.store
            assert set(replayed.proposals) == set(live.proposals)
            for pid, record in live.proposals.items():
                got = replayed.proposals[pid].state
                want = record.state
                assert got.proposal_id == want.proposal_id
                assert got.status == want.status
                assert got.round == want.round
                assert got.step_index == want.step_index
                assert got.active_reviewers == want.active_reviewers
                assert got.excluded_devices == want.excluded_devices
                assert got.override_flag == want.override_flag


def test_emergency_override_accountability():
    # Exactly one EmergencyOverride event, non-empty justification, and the
    # audit report flags it.
    with criterion("override-accountability", 5.0):
        h = Harness(strategy=[("BB1", 60000)])
        h.propose()
        h.review("alice", "Approve")
        h.review("bob", "Reject")
        h.review("carol", "Approve")
        state = h[ADMIN].override("p1", "incident 4711: restore uplink now")
        assert state.override_flag is True
        overrides = h.node.ledger.get_entries(kind=EventKind.EMERGENCY_OVERRIDE)
        assert len(overrides) == 1
        assert overrides[0].event.body["justification"].strip()
        audit = {
            "proposal_id": "p1",
            "entries": [entry_to_json(e) for e in h.node.audit("p1")],
            "verification": {"ok": True, "failed_seq": None, "failure": None},
        }
        lines = render_audit_report(audit)
        flagged = [line for line in lines if "EMERGENCY OVERRIDE" in line]
        assert flagged, "audit report does not flag the override"
        assert any("incident 4711" in line for line in flagged)


# -- end-to-end over sockets ----------------------------------------------------------


def _free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def _wait_http(url: str, timeout_s: float = 15.0) -> None:
    import httpx

    deadline = time.time() + timeout_s
    while time.time() < deadline:
        try:
            httpx.get(url, timeout=1.0)
            return
        except Exception:
            time.sleep(0.15)
    raise TimeoutError(f"{url} did not come up")


def _cli(workdir: Path, actor: str, *argv: str) -> dict:
    result = subprocess.run(
        [sys.executable, "-m", "countersign.cli",
         "--keystore", str(workdir / f"{actor}.keys"), "--actor", actor,
         "--json", *argv],
        capture_output=True, text=True, timeout=30,
        env=ENV_BASE,
    )
    assert result.returncode == 0, (argv, result.stdout, result.stderr)
    return json.loads(result.stdout)


ENV_BASE: dict = {}


def test_end_to_end_over_sockets(tmp_path):
    import os

    from countersign.identity import Keystore, public_key

    global ENV_BASE
    with criterion("end-to-end-sockets", 60.0):
        service_port = _free_port()
        service_url = f"http://127.0.0.1:{service_port}"
        ENV_BASE = {**os.environ, "CMS_URL": service_url}

        # system + peer key material
        system = Keystore.generate()
        system.save(tmp_path / "system.keys")
        peer_seeds = {f"peer{i+1}": Keystore.generate().primary_seed
                      for i in range(4)}
        peer_pubs = {pid: public_key(seed) for pid, seed in peer_seeds.items()}
        appender_b64 = base64.b64encode(
            system.key_record("cms").primary_pubkey).decode()
        peer_ports = {pid: _free_port() for pid in peer_seeds}
        for pid, seed in peer_seeds.items():
            Keystore(primary_seed=seed).save(tmp_path / f"{pid}.keys")
            (tmp_path / f"{pid}.json").write_text(json.dumps({
                "peer_id": pid,
                "keystore": f"{pid}.keys",
                "appender_pubkey_b64": appender_b64,
                "peers": {p: base64.b64encode(k).decode()
                          for p, k in peer_pubs.items()},
            }))

        policy_file = tmp_path / "policies.json"
        policy_file.write_text(json.dumps({
            "groups": [],
            "policies": [
                {
                    "policy_id": "fw-edge-1-policy",
                    "selector": {"device": "fw-edge-1"},
                    "reviewers": ["alice", "bob", "carol"],
                    "min_active_reviewers": 2,
                    "reviewer_pool": [],
                    "strategy": [{"kind": "BB1", "timeout_ms": 600000},
                                 {"kind": "BB2", "timeout_ms": 600000}],
                },
                {
                    "policy_id": "idp-core-policy",
                    "selector": {"device": "idp-core"},
                    "reviewers": ["alice", "bob", "carol"],
                    "min_active_reviewers": 2,
                    "reviewer_pool": [],
                    "strategy": [{"kind": "BB2", "timeout_ms": 600000}],
                },
            ],
        }))

        processes = []
        try:
            for pid, port in peer_ports.items():
                processes.append(subprocess.Popen(
                    [sys.executable, "-m", "countersign.peernet",
                     "--config", str(tmp_path / f"{pid}.json"),
                     "--listen", f"127.0.0.1:{port}"],
                    stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL))
            for port in peer_ports.values():
                _wait_http(f"http://127.0.0.1:{port}/peer/info")

            env = {
                **os.environ,
                "CMS_LISTEN_ADDR": f"127.0.0.1:{service_port}",
                "CMS_POLICY_FILE": str(policy_file),
                "CMS_SYSTEM_KEYSTORE": str(tmp_path / "system.keys"),
                "CMS_PEERS": ",".join(f"http://127.0.0.1:{p}"
                                      for p in peer_ports.values()),
            }
            processes.append(subprocess.Popen(
                [sys.executable, "-m", "countersign.service"],
                env=env, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL))
            _wait_http(f"{service_url}/v1/second/challenges")

            # key material + registration for every human and the device
            roster = [("petra", "proposer", []), ("alice", "reviewer", ["--second"]),
                      ("bob", "reviewer", ["--second"]),
                      ("carol", "reviewer", ["--second"]),
                      ("idp-core", "device_agent", [])]
            for actor, role, extra in roster:
                subprocess.run(
                    [sys.executable, "-m", "countersign.cli", "keygen",
                     "--out", str(tmp_path / f"{actor}.keys"), *extra],
                    check=True, capture_output=True, env=ENV_BASE)
                _cli(tmp_path, actor, "register", "--role", role)

            # --- S1 over sockets: careful minority rejects the backdoor
            payload1 = tmp_path / "fw.cfg"
            payload1.write_bytes(
                b"interface wan0\n  allow 0.0.0.0/0 -> 10.0.0.3:4422\n")
            _cli(tmp_path, "petra", "propose", "--target", "fw-edge-1",
                 "--file", str(payload1), "--note", "open maintenance path",
                 "--id", "s1-sock")
            _cli(tmp_path, "alice", "review", "--proposal", "s1-sock",
                 "--verdict", "reject", "--message", "backdoor in line 3")
            _cli(tmp_path, "bob", "review", "--proposal", "s1-sock",
                 "--verdict", "approve")
            doc = _cli(tmp_path, "carol", "review", "--proposal", "s1-sock",
                       "--verdict", "approve")
            assert doc["state"]["status"] == "Conflict"
            _cli(tmp_path, "bob", "confirm", "--proposal", "s1-sock",
                 "--verdict", "reject", "--message", "alice is right")
            doc = _cli(tmp_path, "carol", "confirm", "--proposal", "s1-sock",
                       "--verdict", "reject")
            s1_socket_status = doc["state"]["status"]

            # --- S2 over sockets: compromised device is excluded via 2nd channel
            payload2 = tmp_path / "idp.cfg"
            payload2.write_bytes(b"tls_min_version = 1.3\nsession_timeout = 900\n")
            _cli(tmp_path, "petra", "propose", "--target", "idp-core",
                 "--file", str(payload2), "--note", "harden tls", "--id", "s2-sock")
            _cli(tmp_path, "alice", "review", "--proposal", "s2-sock",
                 "--verdict", "approve")
            _cli(tmp_path, "bob", "review", "--proposal", "s2-sock",
                 "--verdict", "approve")
            _cli(tmp_path, "carol", "review", "--proposal", "s2-sock",
                 "--verdict", "reject", "--message", "do not ship")
            for confirmer in ("alice", "bob"):
                challenges = _cli(tmp_path, confirmer, "challenges")["challenges"]
                _cli(tmp_path, confirmer, "second-confirm",
                     "--challenge", challenges[0]["challenge_id"],
                     "--answer", "confirm")
            challenges = _cli(tmp_path, "carol", "challenges")["challenges"]
            doc = _cli(tmp_path, "carol", "second-confirm",
                       "--challenge", challenges[0]["challenge_id"],
                       "--answer", "deny")
            s2_socket_status = doc["state"]["status"]
            assert doc["state"]["excluded_devices"] == ["carol"]

            # --- device agent pulls, verifies, applies, acks
            hook = tmp_path / "hook.sh"
            hook.write_text(f"#!/bin/sh\necho \"$1\" >> {tmp_path}/hook.log\nexit 0\n")
            hook.chmod(0o755)
            agent_config = tmp_path / "agent.json"
            agent_config.write_text(json.dumps({
                "device_id": "idp-core",
                "keystore": "idp-core.keys",
                "service_url": service_url,
                "peer_pubkeys": {p: base64.b64encode(k).decode()
                                 for p, k in peer_pubs.items()},
                "appender_pubkey_b64": appender_b64,
                "target_path": "current.cfg",
                "hook_path": "hook.sh",
                "poll_interval_ms": 200,
            }))
            result = subprocess.run(
                [sys.executable, "-m", "countersign.agent",
                 "--config", str(agent_config), "--once"],
                capture_output=True, text=True, timeout=30)
            assert result.returncode == 0, result.stderr
            assert "applied" in result.stdout
            assert (tmp_path / "current.cfg").read_bytes() == payload2.read_bytes()

            final = _cli(tmp_path, "petra", "status", "--proposal", "s2-sock")
            assert final["state"]["status"] == "Deployed"

            # identical MPA outcomes to the in-process scenario runs
            s1_inproc = run_scenario(_scenario("s01-careful-minority"))
            s2_inproc = run_scenario(_scenario("s02-compromised-device"))
            assert s1_socket_status == s1_inproc.final_status.value
            assert s2_socket_status == s2_inproc.final_status.value

            # audit over sockets verifies end to end
            audit = _cli(tmp_path, "petra", "audit", "--proposal", "s2-sock")
            assert audit["verification"]["ok"] is True
        finally:
            for process in processes:
                process.terminate()
            for process in processes:
                try:
                    process.wait(timeout=5)
                except subprocess.TimeoutExpired:
                    process.kill()
