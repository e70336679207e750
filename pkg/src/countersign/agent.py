"""Managed-device daemon: pull, verify, apply, acknowledge.

The agent trusts nothing the service says on its own. Every poll it takes
the full ledger export, checks the hash chain and the endorsement quorum
against peer keys pinned at enrollment, re-derives proposal states by
replay, and re-hashes the payload. Only a configuration that survives every
check reaches the apply hook; any failure means no action at all.
"""

from __future__ import annotations

import base64
import hashlib
import json
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import signing
from .client import ServiceClient
from .errors import HookFailed, SchemaViolation, ServiceUnreachable, VerificationFailed
from .events import EventKind, encode_event
from .identity import Keystore, verify_with_key
from .ledger import read_export, verify_chain
from .workflow import ConfigProposal, ProposalStatus, rebuild


@dataclass
class AgentConfig:
    device_id: str
    keystore_path: Path
    service_url: str
    peer_pubkeys: dict[str, bytes]
    appender_pubkey: bytes
    target_path: Path
    hook_path: Path
    poll_interval_ms: int = 5000
    group_ids: tuple[str, ...] = ()

    @classmethod
    def load(cls, path: str | Path) -> "AgentConfig":
        base = Path(path).resolve().parent
        doc = json.loads(Path(path).read_text())
        required = {"device_id", "keystore", "service_url", "peer_pubkeys",
                    "appender_pubkey_b64", "target_path", "hook_path"}
        missing = required - set(doc)
        if missing:
            raise SchemaViolation(f"agent config missing keys: {sorted(missing)}")
        interval = int(doc.get("poll_interval_ms", 5000))
        if interval <= 0:
            raise SchemaViolation("poll_interval_ms must be positive")
        return cls(
            device_id=doc["device_id"],
            keystore_path=(base / doc["keystore"]).resolve(),
            service_url=doc["service_url"],
            peer_pubkeys={pid: base64.b64decode(pub)
                          for pid, pub in doc["peer_pubkeys"].items()},
            appender_pubkey=base64.b64decode(doc["appender_pubkey_b64"]),
            target_path=(base / doc["target_path"]).resolve(),
            hook_path=(base / doc["hook_path"]).resolve(),
            poll_interval_ms=interval,
            group_ids=tuple(doc.get("group_ids", ())),
        )


@dataclass
class AgentState:
    last_applied: tuple[str, bytes] | None = None
    applied_ids: set[str] = field(default_factory=set)


class DeviceAgent:
    def __init__(self, config: AgentConfig, client: ServiceClient | None = None,
                 fetcher=None):
        self.config = config
        self.keystore = Keystore.load(config.keystore_path)
        self.client = client or ServiceClient(config.service_url)
        self._fetch = fetcher or (lambda: self.client.device_configs(config.device_id))
        self.state = AgentState()

    def login(self) -> None:
        self.client.login(self.config.device_id, self.keystore)

    # -- verification ------------------------------------------------------------

    def poll_and_verify(self) -> ConfigProposal | None:
        """Newest authorized configuration for this device that survives
        chain, quorum, status, targeting, and digest checks."""
        response = self._fetch()
        export_b64 = response.get("ledger_export_b64") if isinstance(response, dict) else None
        if not isinstance(export_b64, str):
            raise VerificationFailed("response carries no ledger export")
        try:
            export = base64.b64decode(export_b64, validate=True)
            entries = read_export(export)
        except Exception as exc:
            raise VerificationFailed(f"ledger export unreadable: {exc}") from None
        report = verify_chain(entries, self.config.peer_pubkeys)
        if not report.ok:
            raise VerificationFailed(
                f"chain verification failed: {report.failure} at seq {report.failed_seq}")
        # Author signatures are not covered by the entry hash, so check them
        # against the pinned appender key; nothing unverified reaches the hook.
        for entry in entries:
            message = signing.event_author_message(encode_event(entry.event))
            if not verify_with_key(self.config.appender_pubkey, message,
                                   entry.author_sig):
                raise VerificationFailed(f"bad author signature at seq {entry.seq}")
        try:
            store = rebuild([entry.event for entry in entries])
        except Exception as exc:
            raise VerificationFailed(f"event replay failed: {exc}") from None

        for entry in reversed(entries):
            event = entry.event
            if event.kind != EventKind.STATUS_CHANGED:
                continue
            if event.body["new_status"] != ProposalStatus.AUTHORIZED.value:
                continue
            record = store.proposals.get(event.proposal_id)
            if record is None or record.state.status != ProposalStatus.AUTHORIZED:
                continue
            if record.proposal.proposal_id in self.state.applied_ids:
                continue
            if not self._targets_me(record.proposal):
                continue
            digest = hashlib.sha256(record.proposal.payload).digest()
            proposed = [e for e in entries
                        if e.event.kind == EventKind.PROPOSED
                        and e.event.proposal_id == record.proposal.proposal_id]
            if not proposed or proposed[0].event.body["payload_digest"] != digest:
                raise VerificationFailed(
                    f"payload digest mismatch for {record.proposal.proposal_id}")
            return record.proposal
        return None

    def _targets_me(self, proposal: ConfigProposal) -> bool:
        if proposal.target_kind == "device":
            return proposal.target == self.config.device_id
        return proposal.target in self.config.group_ids

    # -- deployment ---------------------------------------------------------------

    def apply_config(self, proposal: ConfigProposal) -> None:
        """Write atomically, then hand off to the apply hook."""
        target = self.config.target_path
        tmp = target.with_suffix(target.suffix + ".tmp")
        tmp.write_bytes(proposal.payload)
        tmp.replace(target)
        result = subprocess.run(
            [str(self.config.hook_path), str(target)],
            capture_output=True, timeout=60,
        )
        if result.returncode != 0:
            raise HookFailed(
                f"apply hook exited {result.returncode}: "
                f"{result.stderr.decode(errors='replace')[:200]}")
        self.state.last_applied = (proposal.proposal_id, proposal.digest)
        self.state.applied_ids.add(proposal.proposal_id)

    def send_ack(self, proposal_id: str, attempts: int = 4,
                 backoff_s: float = 0.25) -> dict:
        last_error = None
        for attempt in range(attempts):
            try:
                return self.client.acknowledge(self.config.device_id, self.keystore,
                                               proposal_id)
            except ServiceUnreachable as exc:
                last_error = exc
                time.sleep(backoff_s * (2 ** attempt))
        raise ServiceUnreachable(f"ack failed after {attempts} attempts: {last_error}")

    def poll_once(self) -> bool:
        """One poll cycle; True when a configuration was applied and acked."""
        proposal = self.poll_and_verify()
        if proposal is None:
            return False
        self.apply_config(proposal)
        self.send_ack(proposal.proposal_id)
        return True

    def run(self, max_polls: int | None = None) -> None:
        polls = 0
        while max_polls is None or polls < max_polls:
            polls += 1
            try:
                self.poll_once()
            except (VerificationFailed, ServiceUnreachable, HookFailed):
                pass  # fail closed; try again next interval
            time.sleep(self.config.poll_interval_ms / 1000)


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(prog="countersign-agent")
    parser.add_argument("--config", required=True, help="agent config JSON")
    parser.add_argument("--once", action="store_true",
                        help="poll a single time and exit")
    parser.add_argument("--max-polls", type=int, default=None)
    args = parser.parse_args(argv)
    agent = DeviceAgent(AgentConfig.load(args.config))
    agent.login()
    if args.once:
        applied = agent.poll_once()
        print("applied" if applied else "nothing to apply")
        return 0
    agent.run(max_polls=args.max_polls)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
