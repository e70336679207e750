"""Shared builders for engine-level tests."""

from __future__ import annotations

import json

from countersign.clock import LogicalClock, SeededRandom
from countersign.identity import Channel, Keystore, Role
from countersign.node import CmsNode
from countersign.policy import load_policies
from countersign.scenarios import Participant
from countersign.workflow import ConfigProposal, Verdict

DEVICE = "d1"
PROPOSER = "petra"
ADMIN = "root"


def policy_doc(reviewers=("alice", "bob", "carol"), strategy=(), pool=(),
               floor=2, device=DEVICE, groups=(), policy_id="pol-1"):
    steps = []
    for step in strategy:
        kind, timeout = step[0], step[1]
        params = {"count": step[2]} if len(step) > 2 else {}
        steps.append({"kind": kind, "timeout_ms": timeout, "params": params})
    return {
        "groups": list(groups),
        "policies": [{
            "policy_id": policy_id,
            "selector": {"device": device},
            "reviewers": list(reviewers),
            "min_active_reviewers": floor,
            "reviewer_pool": list(pool),
            "strategy": steps,
        }],
    }


class Harness:
    """A dev node plus registered participants, driven synchronously."""

    def __init__(self, strategy=(), reviewers=("alice", "bob", "carol"),
                 pool=(), floor=2, device=DEVICE, groups=(), seed=42,
                 auto_advance=True, doc=None):
        self.clock = LogicalClock()
        self.rng = SeededRandom(seed)
        doc = doc or policy_doc(reviewers, strategy, pool, floor, device, groups)
        self.policies = load_policies(json.dumps(doc))
        self.node = CmsNode.dev(self.policies, clock=self.clock, rng=self.rng,
                                auto_advance=auto_advance)
        self.device = device
        self.actors: dict[str, Participant] = {}
        self.add_actor(PROPOSER, Role.PROPOSER)
        self.add_actor(ADMIN, Role.ADMIN)
        for reviewer in (*reviewers, *pool):
            self.add_actor(reviewer, Role.REVIEWER)

    def add_actor(self, actor_id: str, role: Role) -> Participant:
        participant = Participant.create(self.node, actor_id, role, self.rng)
        self.actors[actor_id] = participant
        return participant

    def __getitem__(self, actor_id: str) -> Participant:
        return self.actors[actor_id]

    def propose(self, pid="p1", target=None, target_kind="device",
                payload=b"cfg-payload", note="change", proposer=PROPOSER):
        proposal = ConfigProposal(
            proposal_id=pid,
            target_kind=target_kind,
            target=target or self.device,
            payload=payload,
            proposer=proposer,
            note=note,
            created_at=self.clock.now_ms(),
        )
        return self.actors[proposer].propose(proposal)

    def review(self, who: str, verdict, message="", pid="p1", round_no=None,
               channel=Channel.PRIMARY):
        if isinstance(verdict, str):
            verdict = Verdict(verdict)
        if round_no is None:
            round_no = self.node.state(pid).round
        return self.actors[who].review(pid, round_no, verdict, message, channel)

    def state(self, pid="p1"):
        return self.node.state(pid)

    def open_round(self, pid="p1"):
        return self.node.store.record(pid).open_round

    def expire_round(self, pid="p1"):
        current = self.open_round(pid)
        assert current is not None
        self.clock.set(current.deadline + 1)
        self.node.tick()


class HttpActor:
    """One actor driving the service over HTTP with a local keystore."""

    def __init__(self, make_client, actor_id: str, role: Role, rng):
        self.actor_id = actor_id
        second = role == Role.REVIEWER
        self.keystore = Keystore(primary_seed=rng.token(32),
                                 second_seed=rng.token(32) if second else None)
        self.client = make_client()
        self.client.register_actor(actor_id, role, self.keystore)
        self.client.login(actor_id, self.keystore)

    def propose(self, pid, target_kind, target, payload=b"cfg", note="change",
                created_at=0):
        return self.client.propose(self.actor_id, self.keystore, pid,
                                   target_kind, target, payload, note, created_at)

    def review(self, pid, round_no, verdict, message="", channel=Channel.PRIMARY):
        return self.client.submit_review(self.actor_id, self.keystore, pid,
                                         round_no, verdict, message, channel)

    def respond_challenge(self, challenge: dict, answer: str):
        import base64
        return self.client.respond_challenge(
            self.keystore, challenge["challenge_id"],
            base64.b64decode(challenge["nonce_b64"]), answer)

    def ack(self, pid):
        return self.client.acknowledge(self.actor_id, self.keystore, pid)

    def override(self, pid, justification):
        return self.client.override(self.actor_id, self.keystore, pid, justification)
