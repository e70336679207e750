from __future__ import annotations

import json

import pytest

from countersign.errors import ScriptIncomplete, ValidationError
from countersign.events import EventKind
from countersign.scenarios import (
    builtin_scenarios,
    compare,
    load_scenario,
    majority_vote_baseline,
    run_scenario,
)
from countersign.workflow import ProposalStatus


def _by_name(name: str):
    for scenario in builtin_scenarios():
        if scenario.name == name:
            return scenario
    raise KeyError(name)


def test_corpus_size_and_labels():
    corpus = builtin_scenarios()
    assert len(corpus) >= 8
    assert all(s.validity in ("Valid", "Invalid") for s in corpus)
    assert all(s.notes for s in corpus)


def test_every_scenario_matches_expectations():
    for scenario in builtin_scenarios():
        result = run_scenario(scenario)
        assert result.final_status.value == scenario.expected_final_status, scenario.name
        baseline = majority_vote_baseline(scenario)
        assert baseline.value == scenario.expected_majority_vote_status, scenario.name


def test_careful_minority_row():
    row = compare(_by_name("s01-careful-minority"))
    assert row.mediated_correct is True
    assert row.majority_correct is False


def test_compromised_device_run():
    scenario = _by_name("s02-compromised-device")
    result = run_scenario(scenario)
    assert result.final_status == ProposalStatus.AUTHORIZED
    assert result.excluded_devices == {"carol"}
    row = compare(scenario)
    assert row.mediated_correct and row.majority_correct


def test_stubborn_adversary_identifiable():
    scenario = _by_name("s03-stubborn-adversary")
    result = run_scenario(scenario)
    assert result.final_status == ProposalStatus.REJECTED
    assert result.rounds_used == 3
    approvals = [
        e for e in result.entries
        if e.event.kind == EventKind.REVIEW_COMMITTED
        and e.event.body["reviewer"] == "mallory"
        and e.event.body["verdict"] == "Approve"
    ]
    assert len(approvals) >= 2  # the audit trail pins repeated approvals on mallory


def test_all_adversarial_documents_assumption():
    row = compare(_by_name("s07-all-adversarial"))
    assert row.mediated_correct is False
    assert row.majority_correct is False


def test_mediation_never_worse_and_strictly_better_twice():
    rows = [compare(s) for s in builtin_scenarios()]
    assert all(row.mediated_correct >= row.majority_correct for row in rows)
    strictly_better = [r for r in rows if r.mediated_correct and not r.majority_correct]
    assert len(strictly_better) >= 2


def test_unanimous_round0_baseline_equals_mediation():
    for name in ("s04-unanimous-approve", "s05-unanimous-reject"):
        scenario = _by_name(name)
        assert majority_vote_baseline(scenario).value == \
            run_scenario(scenario).final_status.value


def test_runs_are_byte_identical():
    for name in ("s01-careful-minority", "s02-compromised-device",
                 "s10-floor-and-pool"):
        scenario = _by_name(name)
        assert run_scenario(scenario).export == run_scenario(scenario).export


def test_script_incomplete_detected():
    scenario = _by_name("s01-careful-minority")
    behaviors = dict(scenario.behaviors)
    del behaviors["carol"]
    broken = type(scenario)(**{**scenario.__dict__, "behaviors": behaviors})
    with pytest.raises(ScriptIncomplete):
        run_scenario(broken)


def test_scenario_document_validation():
    with pytest.raises(ValidationError):
        load_scenario(json.dumps({"name": "x"}))
    good = {
        "name": "t", "validity": "Sideways", "proposer": "p",
        "target": {"device": "d1"}, "payload_text": "x",
        "policy": {"groups": [], "policies": [{
            "policy_id": "P", "selector": {"device": "d1"},
            "reviewers": ["a", "b"], "strategy": []}]},
        "behaviors": {"a": {"initial": "Approve"}, "b": {"initial": "Approve"}},
        "expected_final_status": "Authorized",
        "expected_majority_vote_status": "Authorized",
    }
    with pytest.raises(ValidationError):
        load_scenario(json.dumps(good))
    good["validity"] = "Valid"
    assert load_scenario(json.dumps(good)).name == "t"
