"""Command-line client: propose, review, confirm, mediate, audit, deploy.

One subcommand per user-facing operation. Human output is line-oriented;
--json switches every subcommand to exactly one machine-readable JSON
document on stdout. Exit codes: 0 success, 1 protocol error (the stable
numeric code is echoed), 2 usage error.
"""

from __future__ import annotations

import argparse
import base64
import json
import os
import sys
import time

from .client import ServiceClient
from .errors import CmsError
from .identity import Keystore, Role


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="countersign",
        description="multi-party authorization for device configurations",
    )
    parser.add_argument("--url", default=os.environ.get("CMS_URL", "http://127.0.0.1:8440"),
                        help="service base URL (env CMS_URL)")
    parser.add_argument("--keystore", default=os.environ.get("CMS_KEYSTORE"),
                        help="path to the actor's keystore file (env CMS_KEYSTORE)")
    parser.add_argument("--actor", default=os.environ.get("CMS_ACTOR"),
                        help="acting identity (env CMS_ACTOR)")
    parser.add_argument("--json", action="store_true", dest="machine",
                        help="machine-readable output: one JSON document")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="create a keystore file")
    p.add_argument("--out", required=True)
    p.add_argument("--second", action="store_true",
                   help="include a second-channel key (reviewers)")

    p = sub.add_parser("register", help="register this actor with the service")
    p.add_argument("--role", required=True,
                   choices=[r.value for r in Role if r != Role.PEER])

    p = sub.add_parser("propose", help="submit a configuration proposal")
    p.add_argument("--target", help="target device id")
    p.add_argument("--group", help="target group id")
    p.add_argument("--file", required=True, help="configuration payload file")
    p.add_argument("--note", default="", help="commit message for reviewers")
    p.add_argument("--id", dest="proposal_id", help="proposal id (default: derived)")

    p = sub.add_parser("review", help="submit a review verdict")
    p.add_argument("--proposal", required=True)
    p.add_argument("--verdict", required=True, choices=["approve", "reject"])
    p.add_argument("--message", default="", help="commit message")
    p.add_argument("--round", type=int, default=None,
                   help="round number (default: current)")

    p = sub.add_parser("confirm", help="re-submit a verdict in a confirmation round")
    p.add_argument("--proposal", required=True)
    p.add_argument("--verdict", required=True, choices=["approve", "reject"])
    p.add_argument("--message", default="")

    p = sub.add_parser("second-confirm",
                       help="answer a second-channel challenge (second device)")
    p.add_argument("--challenge", required=True)
    p.add_argument("--answer", required=True, choices=["confirm", "deny"])

    p = sub.add_parser("challenges", help="list open second-channel challenges")

    p = sub.add_parser("chat", help="post to the open chat-mediation round")
    p.add_argument("--proposal", required=True)
    p.add_argument("--text", required=True)

    p = sub.add_parser("group-decide", help="commit the group's decision")
    p.add_argument("--proposal", required=True)
    p.add_argument("--verdict", required=True, choices=["approve", "reject"])
    p.add_argument("--token", help="meeting token (hex, in-person rounds)")

    p = sub.add_parser("attest-meeting", help="print the open round's meeting token")
    p.add_argument("--proposal", required=True)

    p = sub.add_parser("override", help="emergency-override a proposal (admins)")
    p.add_argument("--proposal", required=True)
    p.add_argument("--justification", required=True)

    p = sub.add_parser("audit", help="render the audit report for a proposal")
    p.add_argument("--proposal", required=True)

    p = sub.add_parser("status", help="show a proposal's workflow state")
    p.add_argument("--proposal", required=True)

    p = sub.add_parser("devices", help="list authorized configurations for a device")
    p.add_argument("--device", required=True)

    p = sub.add_parser("events", help="read the committed event stream")
    p.add_argument("--from-seq", type=int, default=0)
    p.add_argument("--follow", action="store_true")
    p.add_argument("--wait-ms", type=int, default=25000)

    p = sub.add_parser("simulate", help="run reviewer-behavior scenarios")
    p.add_argument("--scenario", action="append", default=[],
                   help="scenario file (repeatable)")
    p.add_argument("--builtin", action="store_true", help="run the shipped corpus")
    p.add_argument("--report", help="write the comparison report JSON here")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("serve", help="run the CMS service (env CMS_*)")

    p = sub.add_parser("peer", help="run a ledger peer")
    p.add_argument("--config", required=True)
    p.add_argument("--listen", default="127.0.0.1:9101")

    p = sub.add_parser("agent", help="run the device agent")
    p.add_argument("--config", required=True)
    p.add_argument("--once", action="store_true")
    p.add_argument("--max-polls", type=int, default=None)

    return parser


class Cli:
    def __init__(self, args):
        self.args = args
        self.machine = args.machine
        self._client = None
        self._keystore = None

    def emit(self, doc: dict, human_lines=None) -> None:
        if self.machine:
            print(json.dumps(doc, indent=2, sort_keys=True))
        elif human_lines:
            for line in human_lines:
                print(line)
        else:
            print(json.dumps(doc, indent=2, sort_keys=True))

    @property
    def keystore(self) -> Keystore:
        if self._keystore is None:
            if not self.args.keystore:
                raise UsageHint("--keystore (or CMS_KEYSTORE) is required")
            self._keystore = Keystore.load(self.args.keystore)
        return self._keystore

    @property
    def actor(self) -> str:
        if not self.args.actor:
            raise UsageHint("--actor (or CMS_ACTOR) is required")
        return self.args.actor

    def client(self, login: bool = True) -> ServiceClient:
        if self._client is None:
            self._client = ServiceClient(self.args.url)
            if login:
                self._client.login(self.actor, self.keystore)
        return self._client


class UsageHint(Exception):
    """Missing context that argparse cannot know about (keystore, actor)."""


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cli = Cli(args)
    try:
        handler = COMMANDS[args.command]
        return handler(cli) or 0
    except UsageHint as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except CmsError as exc:
        if cli.machine:
            print(json.dumps(exc.to_wire(), sort_keys=True))
        else:
            print(f"error {exc.code} {type(exc).__name__}: {exc.message}",
                  file=sys.stderr)
        return 1


# -- handlers -------------------------------------------------------------------


def cmd_keygen(cli: Cli) -> int:
    keystore = Keystore.generate(with_second_channel=cli.args.second)
    keystore.save(cli.args.out)
    record = keystore.key_record(cli.args.actor or "")
    doc = {
        "keystore": cli.args.out,
        "primary_pubkey_b64": _b64(record.primary_pubkey),
        "second_channel_pubkey_b64": (
            _b64(record.second_channel_pubkey)
            if record.second_channel_pubkey else None),
    }
    cli.emit(doc, [
        f"wrote {cli.args.out}",
        f"primary pubkey:        {doc['primary_pubkey_b64']}",
        f"second-channel pubkey: {doc['second_channel_pubkey_b64'] or '-'}",
    ])
    return 0


def cmd_register(cli: Cli) -> int:
    client = cli.client(login=False)
    doc = client.register_actor(cli.actor, Role(cli.args.role), cli.keystore)
    cli.emit(doc, [f"registered {doc['actor_id']} as {doc['role']}"])
    return 0


def cmd_propose(cli: Cli) -> int:
    if bool(cli.args.target) == bool(cli.args.group):
        raise UsageHint("exactly one of --target or --group is required")
    with open(cli.args.file, "rb") as fh:
        payload = fh.read()
    target_kind = "device" if cli.args.target else "group"
    target = cli.args.target or cli.args.group
    proposal_id = cli.args.proposal_id or f"{target}-{int(time.time() * 1000)}"
    state = cli.client().propose(
        cli.actor, cli.keystore, proposal_id, target_kind, target,
        payload, cli.args.note, int(time.time() * 1000))
    cli.emit({"proposal_id": proposal_id, "state": state},
             [proposal_id, f"status: {state['status']}"])
    return 0


def _current_round(cli: Cli, proposal_id: str) -> int:
    return cli.client().get_proposal(proposal_id)["state"]["round"]


def cmd_review(cli: Cli) -> int:
    round_no = cli.args.round
    if round_no is None:
        round_no = _current_round(cli, cli.args.proposal)
    state = cli.client().submit_review(
        cli.actor, cli.keystore, cli.args.proposal, round_no,
        cli.args.verdict.capitalize(), cli.args.message)
    cli.emit({"state": state}, [f"recorded; status: {state['status']}"])
    return 0


def cmd_confirm(cli: Cli) -> int:
    round_no = _current_round(cli, cli.args.proposal)
    state = cli.client().submit_review(
        cli.actor, cli.keystore, cli.args.proposal, round_no,
        cli.args.verdict.capitalize(), cli.args.message)
    cli.emit({"state": state},
             [f"confirmation recorded; status: {state['status']}"])
    return 0


def cmd_second_confirm(cli: Cli) -> int:
    client = ServiceClient(cli.args.url)
    listing = client.open_challenges(cli.actor)["challenges"]
    match = [c for c in listing if c["challenge_id"] == cli.args.challenge]
    if not match:
        from .errors import UnknownChallenge
        raise UnknownChallenge(f"no open challenge {cli.args.challenge!r}")
    nonce = base64.b64decode(match[0]["nonce_b64"])
    state = client.respond_challenge(cli.keystore, cli.args.challenge, nonce,
                                     cli.args.answer)
    cli.emit({"state": state}, [f"answer recorded; status: {state['status']}"])
    return 0


def cmd_challenges(cli: Cli) -> int:
    client = ServiceClient(cli.args.url)
    doc = client.open_challenges(cli.actor)
    lines = [
        f"{c['challenge_id']}  round {c['round']}  questions "
        f"{c['questioned_verdict']} from round {c['questioned_round']}"
        for c in doc["challenges"]
    ] or ["no open challenges"]
    cli.emit(doc, lines)
    return 0


def cmd_chat(cli: Cli) -> int:
    round_no = _current_round(cli, cli.args.proposal)
    doc = cli.client().post_chat(cli.actor, cli.keystore, cli.args.proposal,
                                 round_no, cli.args.text)
    cli.emit(doc, ["posted"])
    return 0


def cmd_group_decide(cli: Cli) -> int:
    round_no = _current_round(cli, cli.args.proposal)
    token = bytes.fromhex(cli.args.token) if cli.args.token else None
    state = cli.client().group_decision(
        cli.actor, cli.keystore, cli.args.proposal, round_no,
        cli.args.verdict.capitalize(), token)
    cli.emit({"state": state}, [f"committed; status: {state['status']}"])
    return 0


def cmd_attest_meeting(cli: Cli) -> int:
    doc = cli.client().get_proposal(cli.args.proposal)
    info = doc.get("round_info") or {}
    token = info.get("meeting_token_hex")
    if not token:
        from .errors import NotBB5Round
        raise NotBB5Round("no in-person mediation round is open")
    cli.emit({"meeting_token_hex": token}, [token])
    return 0


def cmd_override(cli: Cli) -> int:
    state = cli.client().override(cli.actor, cli.keystore, cli.args.proposal,
                                  cli.args.justification)
    cli.emit({"state": state},
             [f"override recorded; status: {state['status']}"])
    return 0


def cmd_status(cli: Cli) -> int:
    doc = cli.client().get_proposal(cli.args.proposal)
    state = doc["state"]
    lines = [
        f"{doc['proposal_id']}: {state['status']} (round {state['round']})",
        f"reviewers: {', '.join(state['active_reviewers'])}",
    ]
    if state["excluded_devices"]:
        lines.append(f"excluded devices: {', '.join(state['excluded_devices'])}")
    if doc.get("round_info"):
        info = doc["round_info"]
        lines.append(f"open round {info['round']}: {info['step_kind']}"
                     f" (deadline {info['deadline_ms']})")
    cli.emit(doc, lines)
    return 0


_EVENT_SUMMARIES = {
    "Proposed": lambda b: f"{b['target_kind']}={b['target']} note={b['note']!r}",
    "ReviewCommitted": lambda b: f"{b['reviewer']} {b['verdict']} {b['commit_message']!r} via {b['channel']}",
    "StatusChanged": lambda b: f"{b['old_status']} -> {b['new_status']}",
    "RoundOpened": lambda b: f"round {b['round']} {b['step_kind']} (step {b['step_index']})",
    "RoundClosed": lambda b: f"round {b['round']} {b['outcome']} {b['verdict']}",
    "ConfirmationRequested": lambda b: f"{b['reviewer']} shown peers' commit messages",
    "ChallengeIssued": lambda b: f"{b['challenge_id']} questions {b['questioned_verdict']}",
    "ChallengeAnswered": lambda b: f"{b['challenge_id']}: {b['answer']}",
    "ReviewerAdded": lambda b: f"{b['reviewer']} (round {b['round']})",
    "ReviewerExcluded": lambda b: f"{b['reviewer']}: {b['reason']}",
    "ChatMessage": lambda b: f"{b['author']}: {b['text']!r}",
    "GroupDecisionCommitted": lambda b: f"{b['reviewer']} commits {b['verdict']}",
    "MeetingAttested": lambda b: "meeting token issued",
    "PullAcknowledged": lambda b: f"pulled by {b['device']}",
    "EmergencyOverride": lambda b: f"by {b['admin']}: {b['justification']!r}",
}


def render_audit_report(audit: dict) -> list[str]:
    verification = audit["verification"]
    if verification["ok"]:
        banner = "LEDGER VERIFICATION: OK"
    else:
        banner = (f"LEDGER VERIFICATION: TAMPERED at seq "
                  f"{verification['failed_seq']} ({verification['failure']})")
    lines = [banner, f"audit trail for {audit['proposal_id']}:"]
    overrides = []
    for entry in audit["entries"]:
        event = entry["event"]
        kind = event["kind"]
        summary = _EVENT_SUMMARIES.get(kind, lambda b: "")(event["body"])
        marker = "!!! " if kind == "EmergencyOverride" else "    "
        lines.append(f"{marker}[{entry['seq']:4d}] {kind:24s} {event['actor']:12s} {summary}")
        if kind == "EmergencyOverride":
            overrides.append(event["body"])
    for body in overrides:
        lines.append(f"!!! EMERGENCY OVERRIDE by {body['admin']}: {body['justification']!r}")
    return lines


def cmd_audit(cli: Cli) -> int:
    audit = cli.client().audit(cli.args.proposal)
    overrides = [e["event"]["body"] for e in audit["entries"]
                 if e["event"]["kind"] == "EmergencyOverride"]
    audit["override_events"] = overrides
    cli.emit(audit, render_audit_report(audit))
    return 0


def cmd_devices(cli: Cli) -> int:
    doc = cli.client().device_configs(cli.args.device)
    lines = [
        f"{p['proposal_id']}  digest={p['payload_digest_b64']}  note={p['note']!r}"
        for p in doc["proposals"]
    ] or ["no authorized configurations"]
    doc.pop("ledger_export_b64", None)  # bulky; agents fetch it via the API
    cli.emit(doc, lines)
    return 0


def cmd_events(cli: Cli) -> int:
    client = cli.client()
    from_seq = cli.args.from_seq
    while True:
        doc = client.events(from_seq=from_seq,
                            wait_ms=cli.args.wait_ms if cli.args.follow else 0)
        if cli.machine and not cli.args.follow:
            cli.emit(doc)
            return 0
        for entry in doc["entries"]:
            event = entry["event"]
            summary = _EVENT_SUMMARIES.get(event["kind"], lambda b: "")(event["body"])
            line = (f"[{entry['seq']:4d}] {event['kind']:24s} "
                    f"{event['actor']:12s} {summary}")
            print(json.dumps(entry, sort_keys=True) if cli.machine else line)
        from_seq = doc["next_seq"]
        if not cli.args.follow:
            return 0


def cmd_simulate(cli: Cli) -> int:
    from .scenarios import builtin_scenarios, compare, load_scenario_file, run_scenario

    scenarios = [load_scenario_file(path) for path in cli.args.scenario]
    if cli.args.builtin or not scenarios:
        scenarios.extend(builtin_scenarios())
    rows = []
    for scenario in scenarios:
        result = run_scenario(scenario, seed=cli.args.seed)
        row = compare(scenario, seed=cli.args.seed)
        rows.append({
            "scenario": scenario.name,
            "validity": scenario.validity,
            "final_status": result.final_status.value,
            "expected_final_status": scenario.expected_final_status,
            "rounds_used": result.rounds_used,
            "excluded_devices": sorted(result.excluded_devices),
            "majority_status": row.majority_status.value,
            "mediated_correct": row.mediated_correct,
            "majority_correct": row.majority_correct,
        })
    report = {
        "rows": rows,
        "mediated_correct": sum(r["mediated_correct"] for r in rows),
        "majority_correct": sum(r["majority_correct"] for r in rows),
        "total": len(rows),
    }
    if cli.args.report:
        with open(cli.args.report, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
    header = (f"{'scenario':28s} {'truth':8s} {'mediated':10s} "
              f"{'majority':10s} {'med?':5s} {'maj?':5s} rounds")
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(
            f"{row['scenario']:28s} {row['validity']:8s} {row['final_status']:10s} "
            f"{row['majority_status']:10s} {str(row['mediated_correct']):5s} "
            f"{str(row['majority_correct']):5s} {row['rounds_used']}")
    lines.append(f"mediation correct on {report['mediated_correct']}/{report['total']}, "
                 f"majority voting on {report['majority_correct']}/{report['total']}")
    cli.emit(report, lines)
    return 0


def cmd_serve(cli: Cli) -> int:
    from .service import main as serve_main
    return serve_main()


def cmd_peer(cli: Cli) -> int:
    from .peernet import main as peer_main
    return peer_main(["--config", cli.args.config, "--listen", cli.args.listen])


def cmd_agent(cli: Cli) -> int:
    from .agent import main as agent_main
    argv = ["--config", cli.args.config]
    if cli.args.once:
        argv.append("--once")
    if cli.args.max_polls is not None:
        argv.extend(["--max-polls", str(cli.args.max_polls)])
    return agent_main(argv)


COMMANDS = {
    "keygen": cmd_keygen,
    "register": cmd_register,
    "propose": cmd_propose,
    "review": cmd_review,
    "confirm": cmd_confirm,
    "second-confirm": cmd_second_confirm,
    "challenges": cmd_challenges,
    "chat": cmd_chat,
    "group-decide": cmd_group_decide,
    "attest-meeting": cmd_attest_meeting,
    "override": cmd_override,
    "audit": cmd_audit,
    "status": cmd_status,
    "devices": cmd_devices,
    "events": cmd_events,
    "simulate": cmd_simulate,
    "serve": cmd_serve,
    "peer": cmd_peer,
    "agent": cmd_agent,
}


if __name__ == "__main__":
    raise SystemExit(main())
