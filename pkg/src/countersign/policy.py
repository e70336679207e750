"""Per-device and per-group authorization policies.

A policy names the reviewers whose unanimous approval authorizes a
configuration, a floor below which no round may conclude, a pool of
stand-by reviewers, and the ordered mediation strategy that runs when the
initial review ends in conflict. Policies are immutable once loaded; a
reload swaps the whole set atomically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

from .errors import DuplicateSelector, NoPolicyForTarget, ParseError, ValidationError


class StepKind(str, Enum):
    """Mediation building blocks, cheapest first.

    BB1 asks reviewers to reconsider with each other's commit messages,
    BB2 confirms decisions over a second channel, BB3 brings in stand-by
    reviewers, BB4 mediates over chat, BB5 requires an in-person meeting.
    """

    BB1 = "BB1"
    BB2 = "BB2"
    BB3 = "BB3"
    BB4 = "BB4"
    BB5 = "BB5"


class Exhausted:
    """Sentinel: the strategy has no step at the requested index."""

    def __repr__(self):
        return "Exhausted"


EXHAUSTED = Exhausted()


@dataclass(frozen=True)
class MediationStep:
    kind: StepKind
    timeout_ms: int
    add_count: int = 0  # BB3 only: stand-by reviewers to pull in


@dataclass(frozen=True)
class DeviceGroup:
    group_id: str
    members: frozenset[str]


@dataclass(frozen=True)
class Policy:
    policy_id: str
    selector_kind: str  # "device" | "group"
    selector: str
    reviewers: tuple[str, ...]
    min_active_reviewers: int = 2
    reviewer_pool: tuple[str, ...] = ()
    strategy: tuple[MediationStep, ...] = ()


@dataclass(frozen=True)
class PolicySet:
    policies: tuple[Policy, ...] = ()
    groups: tuple[DeviceGroup, ...] = ()
    _by_selector: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        for policy in self.policies:
            self._by_selector[(policy.selector_kind, policy.selector)] = policy

    def groups_of(self, device_id: str) -> list[DeviceGroup]:
        return [g for g in self.groups if device_id in g.members]

    def resolve(self, target: str) -> Policy:
        """Device policy wins over group policy; among group policies the
        lexicographically smallest policy_id wins."""
        direct = self._by_selector.get(("device", target))
        if direct is not None:
            return direct
        candidates = [
            self._by_selector[("group", g.group_id)]
            for g in self.groups_of(target)
            if ("group", g.group_id) in self._by_selector
        ]
        if not candidates:
            # The target may itself be a group id.
            grouped = self._by_selector.get(("group", target))
            if grouped is not None:
                return grouped
            raise NoPolicyForTarget(f"no policy matches {target!r}")
        return min(candidates, key=lambda p: p.policy_id)


def next_mediation_step(policy: Policy, step_index: int) -> MediationStep | Exhausted:
    if step_index < 0:
        raise ValidationError("step_index must be >= 0")
    if step_index < len(policy.strategy):
        return policy.strategy[step_index]
    return EXHAUSTED


# -- policy file (canonical JSON) ------------------------------------------------

def load_policies(document: bytes | str) -> PolicySet:
    """Parse and validate a policy file; every invariant violation is listed."""
    if isinstance(document, bytes):
        try:
            document = document.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"policy file is not UTF-8: {exc}") from None
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ParseError(f"policy file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ParseError("policy file must be a JSON object")

    problems: list[str] = []
    groups: list[DeviceGroup] = []
    seen_groups: set[str] = set()
    for i, raw in enumerate(doc.get("groups", [])):
        if not isinstance(raw, dict) or not raw.get("group_id"):
            problems.append(f"groups[{i}]: needs group_id")
            continue
        gid = raw["group_id"]
        members = raw.get("members") or []
        if gid in seen_groups:
            problems.append(f"group {gid}: duplicate group_id")
        seen_groups.add(gid)
        if not members:
            problems.append(f"group {gid}: members must be non-empty")
        groups.append(DeviceGroup(group_id=gid, members=frozenset(members)))

    policies: list[Policy] = []
    selectors: set[tuple[str, str]] = set()
    for i, raw in enumerate(doc.get("policies", [])):
        policy, errors, selector = _parse_policy(raw, i, seen_groups)
        problems.extend(errors)
        if selector is not None:
            if selector in selectors:
                raise DuplicateSelector(f"two policies select {selector[0]} {selector[1]!r}")
            selectors.add(selector)
        if policy is not None:
            policies.append(policy)

    if problems:
        raise ValidationError(problems)
    return PolicySet(policies=tuple(policies), groups=tuple(groups))


def _parse_policy(raw, index: int, known_groups: set[str]):
    errors: list[str] = []
    if not isinstance(raw, dict):
        return None, [f"policies[{index}]: must be an object"], None
    pid = raw.get("policy_id") or ""
    label = pid or f"policies[{index}]"
    if not pid:
        errors.append(f"{label}: needs policy_id")

    selector = raw.get("selector") or {}
    selector_kind = selector_id = None
    if isinstance(selector, dict) and len(selector) == 1:
        selector_kind, selector_id = next(iter(selector.items()))
    if selector_kind not in ("device", "group") or not selector_id:
        errors.append(f"{label}: selector must be {{\"device\": id}} or {{\"group\": id}}")
        selector_kind = selector_id = None
    elif selector_kind == "group" and selector_id not in known_groups:
        errors.append(f"{label}: selector group {selector_id!r} is not defined")

    reviewers = tuple(raw.get("reviewers") or ())
    if len(reviewers) < 2:
        errors.append(f"{label}: needs at least 2 reviewers")
    if len(set(reviewers)) != len(reviewers):
        errors.append(f"{label}: duplicate reviewer ids")

    floor = raw.get("min_active_reviewers", 2)
    if not isinstance(floor, int) or floor < 2:
        errors.append(f"{label}: min_active_reviewers must be an integer >= 2")
    elif reviewers and floor > len(reviewers):
        errors.append(f"{label}: min_active_reviewers exceeds reviewer count")

    pool = tuple(raw.get("reviewer_pool") or ())
    if set(pool) & set(reviewers):
        errors.append(f"{label}: reviewer_pool must be disjoint from reviewers")
    if len(set(pool)) != len(pool):
        errors.append(f"{label}: duplicate ids in reviewer_pool")

    steps: list[MediationStep] = []
    for j, step_raw in enumerate(raw.get("strategy") or ()):
        step, step_errors = _parse_step(step_raw, f"{label}.strategy[{j}]", len(pool))
        errors.extend(step_errors)
        if step is not None:
            steps.append(step)

    if errors or selector_kind is None:
        return None, errors, (selector_kind, selector_id) if selector_kind else None
    policy = Policy(
        policy_id=pid,
        selector_kind=selector_kind,
        selector=selector_id,
        reviewers=reviewers,
        min_active_reviewers=floor,
        reviewer_pool=pool,
        strategy=tuple(steps),
    )
    return policy, errors, (selector_kind, selector_id)


def _parse_step(raw, label: str, pool_size: int):
    errors = []
    if not isinstance(raw, dict):
        return None, [f"{label}: must be an object"]
    try:
        kind = StepKind(raw.get("kind"))
    except ValueError:
        return None, [f"{label}: kind must be one of {[k.value for k in StepKind]}"]
    timeout = raw.get("timeout_ms")
    if not isinstance(timeout, int) or timeout <= 0:
        errors.append(f"{label}: timeout_ms must be a positive integer")
        timeout = 1
    params = raw.get("params") or {}
    add_count = params.get("count", 0)
    if kind == StepKind.BB3:
        if not isinstance(add_count, int) or not 1 <= add_count <= max(pool_size, 0):
            errors.append(f"{label}: BB3 count must be within 1..{pool_size} (pool size)")
            add_count = 0
    elif add_count:
        errors.append(f"{label}: params.count only applies to BB3")
    if errors:
        return None, errors
    return MediationStep(kind=kind, timeout_ms=timeout, add_count=add_count), errors


def dump_policies(policy_set: PolicySet) -> bytes:
    """Canonical JSON encoding; load(dump(x)) == x."""
    doc = {
        "groups": [
            {"group_id": g.group_id, "members": sorted(g.members)}
            for g in policy_set.groups
        ],
        "policies": [
            {
                "policy_id": p.policy_id,
                "selector": {p.selector_kind: p.selector},
                "reviewers": list(p.reviewers),
                "min_active_reviewers": p.min_active_reviewers,
                "reviewer_pool": list(p.reviewer_pool),
                "strategy": [
                    {
                        "kind": s.kind.value,
                        "timeout_ms": s.timeout_ms,
                        "params": {"count": s.add_count} if s.kind == StepKind.BB3 else {},
                    }
                    for s in p.strategy
                ],
            }
            for p in policy_set.policies
        ],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
