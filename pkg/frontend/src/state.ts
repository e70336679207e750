// The view model is a pure fold over committed ledger entries served by
// /v1/events. Nothing here invents state: replaying the same entries
// always rebuilds the identical model, which is what makes page reloads
// and live updates indistinguishable.

import { b64ToBytes, bytesToHex, type EntryDoc, type Status, type Verdict } from "./types.js";

export interface ReviewRecord {
  seq: number;
  round: number;
  reviewer: string;
  verdict: Verdict;
  commitMessage: string;
  channel: string;
  voided: boolean;
}

export interface PeerMessage {
  reviewer: string;
  verdict: Verdict;
  commit_message: string;
}

export interface RoundModel {
  round: number;
  stepKind: string;
  stepIndex: number;
  openedAt: number;
  deadline: number;
  outcome: string; // "Open" until a RoundClosed event arrives
  verdict: Verdict | null;
  shownMessages: Map<string, PeerMessage[]>; // reviewer -> peers' messages (BB1)
  chat: { seq: number; author: string; text: string }[];
  commitments: Map<string, Verdict>;
  meetingTokenHex: string | null;
}

export interface ChallengeModel {
  challengeId: string;
  proposalId: string;
  round: number;
  reviewer: string;
  questionedRound: number;
  questionedVerdict: Verdict;
  nonceB64: string;
  answer: string | null;
}

export interface TimelineItem {
  seq: number;
  timestampMs: number;
  kind: string;
  actor: string;
  summary: string;
  emphasis: boolean; // emergency overrides render loud
}

export interface ProposalModel {
  id: string;
  targetKind: string;
  target: string;
  payloadDigestB64: string;
  proposer: string;
  note: string;
  createdSeq: number;
  status: Status;
  round: number;
  activeReviewers: Set<string>;
  excludedDevices: Set<string>;
  overrideFlag: boolean;
  reviews: ReviewRecord[];
  rounds: Map<number, RoundModel>;
  overrides: { admin: string; justification: string }[];
  timeline: TimelineItem[];
}

export interface Model {
  nextSeq: number;
  actors: Map<string, string>; // actor id -> role
  proposals: Map<string, ProposalModel>;
  challenges: Map<string, ChallengeModel>;
}

export function emptyModel(): Model {
  return { nextSeq: 0, actors: new Map(), proposals: new Map(), challenges: new Map() };
}

export function foldEntries(model: Model, entries: EntryDoc[]): Model {
  for (const entry of entries) applyEntry(model, entry);
  return model;
}

function proposalOf(model: Model, id: string | null): ProposalModel {
  const proposal = id ? model.proposals.get(id) : undefined;
  if (!proposal) throw new Error(`event references unknown proposal ${id}`);
  return proposal;
}

export function applyEntry(model: Model, entry: EntryDoc): void {
  if (entry.seq !== model.nextSeq) {
    throw new Error(`event gap: expected seq ${model.nextSeq}, got ${entry.seq}`);
  }
  model.nextSeq = entry.seq + 1;
  const event = entry.event;
  const body = event.body as Record<string, any>;
  const item: TimelineItem = {
    seq: entry.seq,
    timestampMs: event.timestamp_ms,
    kind: event.kind,
    actor: event.actor,
    summary: "",
    emphasis: event.kind === "EmergencyOverride",
  };

  switch (event.kind) {
    case "ActorRegistered": {
      model.actors.set(body.actor_id, body.role);
      return; // no proposal timeline
    }
    case "Proposed": {
      const proposal: ProposalModel = {
        id: body.proposal_id,
        targetKind: body.target_kind,
        target: body.target,
        payloadDigestB64: body.payload_digest,
        proposer: body.proposer,
        note: body.note,
        createdSeq: entry.seq,
        status: "Proposed",
        round: 0,
        activeReviewers: new Set(),
        excludedDevices: new Set(),
        overrideFlag: false,
        reviews: [],
        rounds: new Map(),
        overrides: [],
        timeline: [],
      };
      model.proposals.set(proposal.id, proposal);
      item.summary = `${body.target_kind} ${body.target}: ${body.note}`;
      proposal.timeline.push(item);
      return;
    }
    case "ReviewerAdded": {
      const proposal = proposalOf(model, event.proposal_id);
      proposal.activeReviewers.add(body.reviewer);
      item.summary = `${body.reviewer} joins the review (round ${body.round})`;
      proposal.timeline.push(item);
      return;
    }
    case "StatusChanged": {
      const proposal = proposalOf(model, event.proposal_id);
      proposal.status = body.new_status as Status;
      item.summary = `${body.old_status} -> ${body.new_status}`;
      proposal.timeline.push(item);
      return;
    }
    case "ReviewCommitted": {
      const proposal = proposalOf(model, event.proposal_id);
      proposal.reviews.push({
        seq: entry.seq,
        round: body.round,
        reviewer: body.reviewer,
        verdict: body.verdict as Verdict,
        commitMessage: body.commit_message,
        channel: body.channel,
        voided: false,
      });
      item.summary = `${body.reviewer}: ${body.verdict} "${body.commit_message}"`;
      proposal.timeline.push(item);
      return;
    }
    case "RoundOpened": {
      const proposal = proposalOf(model, event.proposal_id);
      proposal.round = body.round;
      proposal.rounds.set(body.round, {
        round: body.round,
        stepKind: body.step_kind,
        stepIndex: body.step_index,
        openedAt: body.opened_at,
        deadline: body.deadline,
        outcome: "Open",
        verdict: null,
        shownMessages: new Map(),
        chat: [],
        commitments: new Map(),
        meetingTokenHex: null,
      });
      item.summary = `round ${body.round}: ${body.step_kind}`;
      proposal.timeline.push(item);
      return;
    }
    case "RoundClosed": {
      const proposal = proposalOf(model, event.proposal_id);
      const round = proposal.rounds.get(body.round);
      if (round) {
        round.outcome = body.outcome;
        round.verdict = body.verdict ? (body.verdict as Verdict) : null;
      }
      item.summary = `round ${body.round} closed: ${body.outcome} ${body.verdict ?? ""}`;
      proposal.timeline.push(item);
      return;
    }
    case "ConfirmationRequested": {
      const proposal = proposalOf(model, event.proposal_id);
      const round = proposal.rounds.get(body.round);
      if (round) {
        round.shownMessages.set(body.reviewer,
          JSON.parse(body.peer_messages) as PeerMessage[]);
      }
      item.summary = `${body.reviewer} asked to confirm`;
      proposal.timeline.push(item);
      return;
    }
    case "ChallengeIssued": {
      const proposal = proposalOf(model, event.proposal_id);
      model.challenges.set(body.challenge_id, {
        challengeId: body.challenge_id,
        proposalId: event.proposal_id as string,
        round: body.round,
        reviewer: body.reviewer,
        questionedRound: body.questioned_round,
        questionedVerdict: body.questioned_verdict as Verdict,
        nonceB64: body.nonce,
        answer: null,
      });
      item.summary = `2nd-channel confirmation requested from ${body.reviewer}`;
      proposal.timeline.push(item);
      return;
    }
    case "ChallengeAnswered": {
      const proposal = proposalOf(model, event.proposal_id);
      const challenge = model.challenges.get(body.challenge_id);
      if (challenge) challenge.answer = body.answer;
      if (body.answer === "deny" || body.answer === "timeout") {
        // void the questioned decision, newest matching first
        const questioned = challenge?.questionedRound;
        for (let i = proposal.reviews.length - 1; i >= 0; i--) {
          const review = proposal.reviews[i];
          if (review.reviewer === event.actor || review.reviewer === challenge?.reviewer) {
            if (review.round === questioned && !review.voided) {
              review.voided = true;
              break;
            }
          }
        }
      }
      item.summary = `${body.reviewer} answered: ${body.answer}`;
      proposal.timeline.push(item);
      return;
    }
    case "ReviewerExcluded": {
      const proposal = proposalOf(model, event.proposal_id);
      proposal.excludedDevices.add(body.reviewer);
      item.summary = `${body.reviewer} excluded: ${body.reason}`;
      proposal.timeline.push(item);
      return;
    }
    case "ChatMessage": {
      const proposal = proposalOf(model, event.proposal_id);
      const round = proposal.rounds.get(body.round);
      if (round) round.chat.push({ seq: entry.seq, author: body.author, text: body.text });
      item.summary = `${body.author}: ${body.text}`;
      proposal.timeline.push(item);
      return;
    }
    case "GroupDecisionCommitted": {
      const proposal = proposalOf(model, event.proposal_id);
      const round = proposal.rounds.get(body.round);
      if (round) round.commitments.set(body.reviewer, body.verdict as Verdict);
      item.summary = `${body.reviewer} commits the group decision: ${body.verdict}`;
      proposal.timeline.push(item);
      return;
    }
    case "MeetingAttested": {
      const proposal = proposalOf(model, event.proposal_id);
      const round = proposal.rounds.get(body.round);
      if (round) round.meetingTokenHex = hexOfB64(body.token);
      item.summary = "meeting token issued";
      proposal.timeline.push(item);
      return;
    }
    case "PullAcknowledged": {
      const proposal = proposalOf(model, event.proposal_id);
      item.summary = `pulled by ${body.device}`;
      proposal.timeline.push(item);
      return;
    }
    case "EmergencyOverride": {
      const proposal = proposalOf(model, event.proposal_id);
      proposal.overrideFlag = true;
      proposal.overrides.push({ admin: body.admin, justification: body.justification });
      item.summary = `EMERGENCY OVERRIDE by ${body.admin}: "${body.justification}"`;
      proposal.timeline.push(item);
      return;
    }
    default:
      throw new Error(`unknown event kind ${event.kind}`);
  }
}

function hexOfB64(b64: string): string {
  return bytesToHex(b64ToBytes(b64));
}

// -- selectors -------------------------------------------------------------

const TERMINAL: Status[] = ["Authorized", "Rejected", "Deployed"];

export function isTerminal(status: Status): boolean {
  return TERMINAL.includes(status);
}

/** Latest non-voided decision per reviewer up to now (effective verdicts). */
export function effectiveReviews(proposal: ProposalModel): Map<string, ReviewRecord> {
  const effective = new Map<string, ReviewRecord>();
  for (const review of proposal.reviews) {
    if (!review.voided) effective.set(review.reviewer, review);
  }
  return effective;
}

/** Rounds that currently accept plain review decisions. */
function acceptsDecisions(proposal: ProposalModel): boolean {
  if (proposal.status === "UnderReview") return true;
  if (proposal.status !== "Conflict") return false;
  const round = proposal.rounds.get(proposal.round);
  return !!round && round.outcome === "Open" &&
    (round.stepKind === "BB1" || round.stepKind === "BB3");
}

/** Proposals where this reviewer's current-round verdict is missing, newest first. */
export function pendingFor(model: Model, reviewer: string): ProposalModel[] {
  const pending: ProposalModel[] = [];
  for (const proposal of model.proposals.values()) {
    if (!proposal.activeReviewers.has(reviewer)) continue;
    if (proposal.excludedDevices.has(reviewer)) continue;
    if (isTerminal(proposal.status)) continue;
    if (!acceptsDecisions(proposal)) continue;
    const spoke = proposal.reviews.some(
      (r) => r.reviewer === reviewer && r.round === proposal.round && !r.voided);
    if (!spoke) pending.push(proposal);
  }
  return pending.sort((a, b) => b.createdSeq - a.createdSeq);
}

export function openChallengesFor(model: Model, reviewer: string): ChallengeModel[] {
  const open: ChallengeModel[] = [];
  for (const challenge of model.challenges.values()) {
    if (challenge.reviewer !== reviewer || challenge.answer !== null) continue;
    const proposal = model.proposals.get(challenge.proposalId);
    if (!proposal || proposal.round !== challenge.round) continue;
    const round = proposal.rounds.get(challenge.round);
    if (round && round.outcome === "Open") open.push(challenge);
  }
  return open.sort((a, b) => a.challengeId.localeCompare(b.challengeId));
}
