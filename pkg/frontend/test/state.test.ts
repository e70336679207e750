import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import {
  emptyModel, foldEntries, openChallengesFor, pendingFor,
} from "../src/state.js";
import type { EntryDoc } from "../src/types.js";

function load(name: string): { entries: EntryDoc[]; proposal_id: string } {
  return JSON.parse(
    readFileSync(new URL(`../fixtures/${name}`, import.meta.url), "utf-8"));
}

const s1 = load("s1_events.json");
const s2 = load("s2_events.json");

describe("model fold over the s1 stream", () => {
  it("reconstructs the final state", () => {
    const model = foldEntries(emptyModel(), s1.entries);
    const proposal = model.proposals.get(s1.proposal_id)!;
    expect(proposal.status).toBe("Rejected");
    expect(proposal.round).toBe(1);
    expect([...proposal.activeReviewers].sort()).toEqual(["alice", "bob", "carol"]);
    expect(proposal.rounds.get(1)!.stepKind).toBe("BB1");
    expect(proposal.rounds.get(1)!.outcome).toBe("Consensus");
    expect(proposal.rounds.get(1)!.verdict).toBe("Reject");
  });

  it("records all six verdicts in ledger order", () => {
    const model = foldEntries(emptyModel(), s1.entries);
    const proposal = model.proposals.get(s1.proposal_id)!;
    // 3 initial verdicts + 3 confirmation-round submissions
    expect(proposal.reviews.length).toBe(6);
    expect(proposal.reviews.filter((r) => r.round === 0).length).toBe(3);
    const seqs = proposal.reviews.map((r) => r.seq);
    expect(seqs).toEqual([...seqs].sort((a, b) => a - b));
  });

  it("rejects gaps in the stream", () => {
    const model = foldEntries(emptyModel(), s1.entries.slice(0, 3));
    expect(() => foldEntries(model, s1.entries.slice(4))).toThrow(/gap/);
  });

  it("queues pending reviewers and clears them after they speak", () => {
    // prefix of the stream up to (not including) bob's round-0 verdict
    const bobReviewSeq = s1.entries.find((e) =>
      e.event.kind === "ReviewCommitted" && e.event.body.reviewer === "bob")!.seq;
    const before = foldEntries(emptyModel(), s1.entries.slice(0, bobReviewSeq));
    expect(pendingFor(before, "bob").map((p) => p.id)).toEqual([s1.proposal_id]);
    const after = foldEntries(emptyModel(), s1.entries.slice(0, bobReviewSeq + 1));
    expect(pendingFor(after, "bob")).toEqual([]);
  });

  it("re-queues reviewers for a confirmation round they have not entered", () => {
    const roundOpened = s1.entries.find((e) => e.event.kind === "RoundOpened")!.seq;
    const model = foldEntries(emptyModel(), s1.entries.slice(0, roundOpened + 4));
    // the BB1 round is open and bob has no round-1 decision yet
    expect(pendingFor(model, "bob").map((p) => p.id)).toEqual([s1.proposal_id]);
  });

  it("never lists terminal proposals", () => {
    const model = foldEntries(emptyModel(), s1.entries);
    for (const reviewer of ["alice", "bob", "carol"]) {
      expect(pendingFor(model, reviewer)).toEqual([]);
    }
  });
});

describe("model fold over the s2 stream (second channel)", () => {
  it("tracks challenges, voiding, and exclusion", () => {
    const model = foldEntries(emptyModel(), s2.entries);
    const proposal = model.proposals.get(s2.proposal_id)!;
    expect(proposal.status).toBe("Authorized");
    expect([...proposal.excludedDevices]).toEqual(["carol"]);
    const voided = proposal.reviews.filter((r) => r.voided);
    expect(voided.length).toBe(1);
    expect(voided[0].reviewer).toBe("carol");
    // all challenges answered, nothing left open
    for (const reviewer of ["alice", "bob", "carol"]) {
      expect(openChallengesFor(model, reviewer)).toEqual([]);
    }
  });

  it("shows the open challenge to its reviewer mid-stream", () => {
    const issued = s2.entries.filter((e) => e.event.kind === "ChallengeIssued");
    expect(issued.length).toBe(3);
    const model = foldEntries(
      emptyModel(), s2.entries.slice(0, issued[issued.length - 1].seq + 1));
    const open = openChallengesFor(model, "carol");
    expect(open.length).toBe(1);
    expect(open[0].questionedVerdict).toBe("Reject");
    expect(openChallengesFor(model, "someone-else")).toEqual([]);
  });
});
