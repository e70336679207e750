// Pure HTML renderers over the view model. No DOM access here, so panels
// are testable headlessly and rebuilding after a reload produces the
// byte-identical markup.

import type { Model, ProposalModel, RoundModel } from "./state.js";
import { effectiveReviews, openChallengesFor, pendingFor } from "./state.js";

export function esc(value: unknown): string {
  return String(value)
    .replaceAll("&", "&amp;").replaceAll("<", "&lt;").replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

export function statusBadge(status: string): string {
  return `<span class="badge badge-${status.toLowerCase()}">${esc(status)}</span>`;
}

export function renderQueue(model: Model, viewer: string): string {
  const role = model.actors.get(viewer);
  if (role !== "reviewer") {
    return `<p class="notice">Signed in as ${esc(viewer)} (${esc(role ?? "unknown role")});` +
      ` only reviewers have a review queue.</p>`;
  }
  const pending = pendingFor(model, viewer);
  if (pending.length === 0) return `<p class="notice">No reviews waiting.</p>`;
  const cards = pending.map((p) => `
  <div class="card" data-proposal="${esc(p.id)}">
    <h3>${esc(p.id)}</h3>
    <p>${esc(p.targetKind)} <strong>${esc(p.target)}</strong>
       &middot; digest <code>${esc(p.payloadDigestB64)}</code></p>
    <p class="note">proposer ${esc(p.proposer)}: ${esc(p.note)}</p>
    <p>round ${p.round} ${statusBadge(p.status)}</p>
  </div>`);
  return `<div class="queue">${cards.join("")}</div>`;
}

export function renderVerdicts(proposal: ProposalModel): string {
  const rows = proposal.reviews.map((review) => `
    <tr class="${review.voided ? "voided" : ""}">
      <td>${review.round}</td>
      <td>${esc(review.reviewer)}</td>
      <td>${esc(review.verdict)}</td>
      <td>${esc(review.commitMessage)}</td>
      <td>${esc(review.channel)}${review.voided ? " (voided)" : ""}</td>
    </tr>`);
  return `<table class="verdicts">
    <tr><th>round</th><th>reviewer</th><th>verdict</th><th>commit message</th><th>channel</th></tr>
    ${rows.join("")}
  </table>`;
}

function renderRound(round: RoundModel, viewer: string, nowMs: number): string {
  const remaining = Math.max(0, round.deadline - nowMs);
  const parts = [`<div class="round" data-round="${round.round}">`,
    `<h4>round ${round.round}: ${esc(round.stepKind)} ` +
    `<span class="deadline">${round.outcome === "Open"
      ? `${Math.ceil(remaining / 1000)}s left` : esc(round.outcome)}</span></h4>`];
  const shown = round.shownMessages.get(viewer);
  if (shown && shown.length) {
    const items = shown.map((m) =>
      `<li><strong>${esc(m.reviewer)}</strong> [${esc(m.verdict)}]: ` +
      `${esc(m.commit_message)}</li>`);
    parts.push(`<div class="peer-messages"><p>Other reviewers said:</p>` +
      `<ul>${items.join("")}</ul></div>`);
  }
  if (round.chat.length) {
    const lines = round.chat.map((c) =>
      `<li data-seq="${c.seq}"><strong>${esc(c.author)}</strong>: ${esc(c.text)}</li>`);
    parts.push(`<ol class="chat">${lines.join("")}</ol>`);
  }
  if (round.commitments.size) {
    const rows = [...round.commitments.entries()].sort().map(
      ([reviewer, verdict]) => `<li>${esc(reviewer)} commits ${esc(verdict)}</li>`);
    parts.push(`<ul class="commitments">${rows.join("")}</ul>`);
  }
  if (round.meetingTokenHex) {
    parts.push(`<p class="token">meeting token: <code>${round.meetingTokenHex}</code></p>`);
  }
  parts.push("</div>");
  return parts.join("\n");
}

export function renderProposalPanel(
  model: Model, proposalId: string, viewer: string, nowMs: number,
): string {
  const proposal = model.proposals.get(proposalId);
  if (!proposal) return `<p class="notice">Unknown proposal ${esc(proposalId)}.</p>`;
  const rounds = [...proposal.rounds.values()].sort((a, b) => a.round - b.round)
    .map((round) => renderRound(round, viewer, nowMs));
  const effective = effectiveReviews(proposal);
  const missing = [...proposal.activeReviewers]
    .filter((r) => !proposal.excludedDevices.has(r) && !effective.has(r)).sort();
  const overrideBanner = proposal.overrides.map((o) =>
    `<p class="override-banner">EMERGENCY OVERRIDE by ${esc(o.admin)}: ` +
    `${esc(o.justification)}</p>`);
  return `<section class="panel" data-proposal="${esc(proposalId)}">
  <h2>${esc(proposalId)} ${statusBadge(proposal.status)}${
    proposal.overrideFlag ? ' <span class="flag">override</span>' : ""}</h2>
  ${overrideBanner.join("")}
  <p>${esc(proposal.targetKind)} <strong>${esc(proposal.target)}</strong>
     &middot; proposed by ${esc(proposal.proposer)} &middot; ${esc(proposal.note)}</p>
  ${proposal.excludedDevices.size
    ? `<p class="excluded">excluded devices: ${esc([...proposal.excludedDevices].sort().join(", "))}</p>`
    : ""}
  ${missing.length ? `<p class="missing">waiting on: ${esc(missing.join(", "))}</p>` : ""}
  ${renderVerdicts(proposal)}
  ${rounds.join("\n")}
</section>`;
}

export function renderChallengeInbox(model: Model, viewer: string): string {
  const open = openChallengesFor(model, viewer);
  if (!open.length) return `<p class="notice">No confirmation requests.</p>`;
  const cards = open.map((c) => `
  <div class="card challenge" data-challenge="${esc(c.challengeId)}">
    <p>Did you really submit <strong>${esc(c.questionedVerdict)}</strong>
       on <strong>${esc(c.proposalId)}</strong> (round ${c.questionedRound})?</p>
    <p class="hint">Answer from your second device; denying voids the decision
       and excludes the device that sent it.</p>
  </div>`);
  return `<div class="challenges">${cards.join("")}</div>`;
}

export function renderTimeline(model: Model, proposalId: string): string {
  const proposal = model.proposals.get(proposalId);
  if (!proposal) return "";
  const rows = proposal.timeline.map((item) =>
    `<li class="${item.emphasis ? "override" : ""}" data-seq="${item.seq}">` +
    `<code>[${item.seq}]</code> ${esc(item.kind)} &middot; ${esc(item.actor)}` +
    ` &middot; ${esc(item.summary)}</li>`);
  return `<ol class="timeline">${rows.join("")}</ol>`;
}
