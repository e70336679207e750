// Minimal second-channel page: runs on the reviewer's second device with
// only the second-channel key. No session, no primary key, no queue; it
// can do exactly one thing: confirm or deny recorded decisions.

import { Client } from "./client.js";
import { keypairFromSeed } from "./signing.js";
import { hexToBytes, type ChallengeDoc } from "./types.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function esc(value: unknown): string {
  return String(value).replaceAll("&", "&amp;").replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;");
}

async function refresh(): Promise<void> {
  const reviewer = el<HTMLInputElement>("reviewer").value.trim();
  const client = new Client(el<HTMLInputElement>("service-url").value.trim());
  const challenges = await client.openChallenges(reviewer);
  const list = el("inbox");
  if (!challenges.length) {
    list.innerHTML = "<p>No open confirmation requests.</p>";
    return;
  }
  list.innerHTML = challenges.map((c) => `
    <div class="card">
      <p><strong>${esc(c.proposal_id)}</strong>, round ${c.questioned_round}:
         your device recorded <strong>${esc(c.questioned_verdict)}</strong>.</p>
      <button data-id="${esc(c.challenge_id)}" data-answer="confirm">That was me</button>
      <button data-id="${esc(c.challenge_id)}" data-answer="deny">Not me — deny</button>
    </div>`).join("");
  for (const button of list.querySelectorAll<HTMLButtonElement>("button")) {
    button.onclick = () => void answer(
      client, challenges,
      button.dataset.id ?? "", button.dataset.answer as "confirm" | "deny");
  }
}

async function answer(
  client: Client, challenges: ChallengeDoc[],
  challengeId: string, reply: "confirm" | "deny",
): Promise<void> {
  const status = el("status");
  try {
    const second = keypairFromSeed(
      hexToBytes(el<HTMLInputElement>("second-seed").value.trim()));
    const challenge = challenges.find((c) => c.challenge_id === challengeId);
    if (!challenge) throw new Error("challenge no longer open");
    await client.respondChallenge(second, challenge, reply);
    status.textContent = `answered: ${reply}`;
    await refresh();
  } catch (error) {
    status.textContent = String(error);
  }
}

if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", () => {
    el("refresh").onclick = () => void refresh();
  });
}
