// Browser bootstrap: one event-stream consumer per tab feeding the pure
// model + renderers. Panels change only when committed entries arrive;
// there is no optimistic state.

import { ApiError, Client } from "./client.js";
import { emptyModel, foldEntries, type Model } from "./state.js";
import {
  renderChallengeInbox, renderProposalPanel, renderQueue, renderTimeline,
} from "./render.js";
import { keypairFromSeed, type Keypair } from "./signing.js";
import { hexToBytes, type EntryDoc } from "./types.js";

const POLL_WAIT_MS = 25_000;

interface Session {
  actorId: string;
  primary: Keypair;
  second: Keypair | null;
}

let model: Model = emptyModel();
let client = new Client("");
let session: Session | null = null;
let selectedProposal: string | null = null;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function flash(text: string, isError = false): void {
  const banner = el<HTMLElement>("flash");
  banner.textContent = text;
  banner.className = isError ? "flash error" : "flash";
  if (text) setTimeout(() => { banner.textContent = ""; }, 6000);
}

function redraw(): void {
  if (!session) return;
  el("queue").innerHTML = renderQueue(model, session.actorId);
  el("challenges").innerHTML = renderChallengeInbox(model, session.actorId);
  if (selectedProposal) {
    el("panel").innerHTML =
      renderProposalPanel(model, selectedProposal, session.actorId, Date.now());
    el("timeline").innerHTML = renderTimeline(model, selectedProposal);
  }
  for (const card of document.querySelectorAll<HTMLElement>(".card[data-proposal]")) {
    card.onclick = () => {
      selectedProposal = card.dataset.proposal ?? null;
      redraw();
    };
  }
  for (const card of document.querySelectorAll<HTMLElement>(".card[data-challenge]")) {
    card.onclick = () => answerChallenge(card.dataset.challenge ?? "");
  }
}

async function pump(): Promise<void> {
  // Resume-from-seq long poll: the single ordered source of truth.
  for (;;) {
    try {
      const page = await client.events(model.nextSeq, POLL_WAIT_MS);
      if (page.entries.length) {
        foldEntries(model, page.entries as EntryDoc[]);
        redraw();
      }
    } catch (error) {
      if (error instanceof ApiError && error.wire.code === 1051) {
        flash("session expired; sign in again", true);
        return;
      }
      await new Promise((resolve) => setTimeout(resolve, 1000));
    }
  }
}

async function signIn(): Promise<void> {
  const actorId = el<HTMLInputElement>("actor").value.trim();
  const primaryHex = el<HTMLInputElement>("primary-seed").value.trim();
  try {
    const primary = keypairFromSeed(hexToBytes(primaryHex));
    client = new Client(el<HTMLInputElement>("service-url").value.trim());
    await client.login(actorId, primary);
    session = { actorId, primary, second: null };
    sessionStorage.setItem("countersign.actor", actorId);
    sessionStorage.setItem("countersign.primary", primaryHex);
    el("login").hidden = true;
    el("console").hidden = false;
    model = emptyModel();
    redraw();
    void pump();
  } catch (error) {
    flash(String(error), true);
  }
}

async function submitVerdict(verdict: "Approve" | "Reject"): Promise<void> {
  if (!session || !selectedProposal) return;
  const proposal = model.proposals.get(selectedProposal);
  if (!proposal) return;
  const message = el<HTMLInputElement>("commit-message").value;
  try {
    await client.submitReview(session.actorId, session.primary,
      selectedProposal, proposal.round, verdict, message);
    el<HTMLInputElement>("commit-message").value = "";
    flash("verdict submitted; waiting for the ledger");
  } catch (error) {
    flash(String(error), true); // RoundClosed and friends, rendered inline
  }
}

async function sendChat(): Promise<void> {
  if (!session || !selectedProposal) return;
  const proposal = model.proposals.get(selectedProposal);
  const text = el<HTMLInputElement>("chat-text").value;
  if (!proposal || !text) return;
  try {
    await client.postChat(session.actorId, session.primary,
      selectedProposal, proposal.round, text);
    el<HTMLInputElement>("chat-text").value = "";
  } catch (error) {
    flash(String(error), true);
  }
}

async function commitGroup(verdict: "Approve" | "Reject"): Promise<void> {
  if (!session || !selectedProposal) return;
  const proposal = model.proposals.get(selectedProposal);
  if (!proposal) return;
  const round = proposal.rounds.get(proposal.round);
  const tokenHex = round?.stepKind === "BB5"
    ? el<HTMLInputElement>("meeting-token").value.trim() : null;
  try {
    await client.commitGroupDecision(session.actorId, session.primary,
      selectedProposal, proposal.round, verdict, tokenHex || null);
    flash("group decision committed");
  } catch (error) {
    flash(String(error), true);
  }
}

async function answerChallenge(challengeId: string): Promise<void> {
  if (!session) return;
  // The second-channel key is unlocked separately, modeling the distinct
  // channel; prefer the dedicated second.html page on a second device.
  if (!session.second) {
    const hex = prompt("second-channel seed (hex) — ideally use your second device");
    if (!hex) return;
    try {
      session.second = keypairFromSeed(hexToBytes(hex.trim()));
    } catch (error) {
      flash(String(error), true);
      return;
    }
  }
  const answer = confirm(
    "Did you really submit this decision? OK = confirm, Cancel = deny")
    ? "confirm" : "deny";
  try {
    const open = await client.openChallenges(session.actorId);
    const challenge = open.find((c) => c.challenge_id === challengeId);
    if (!challenge) throw new Error("challenge is no longer open");
    await client.respondChallenge(session.second, challenge, answer);
    flash(`challenge answered: ${answer}`);
  } catch (error) {
    flash(String(error), true);
  }
}

export function start(): void {
  el("sign-in").onclick = () => void signIn();
  el("approve").onclick = () => void submitVerdict("Approve");
  el("reject").onclick = () => void submitVerdict("Reject");
  el("chat-send").onclick = () => void sendChat();
  el("group-approve").onclick = () => void commitGroup("Approve");
  el("group-reject").onclick = () => void commitGroup("Reject");
  el<HTMLInputElement>("actor").value =
    sessionStorage.getItem("countersign.actor") ?? "";
  el<HTMLInputElement>("primary-seed").value =
    sessionStorage.getItem("countersign.primary") ?? "";
}

if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", start);
}
