// Thin fetch client for the /v1 API. Every mutation is signed locally with
// the keys held in this browser session; the server never sees a secret.

import * as signing from "./signing.js";
import type { Keypair } from "./signing.js";
import {
  b64ToBytes, bytesToB64,
  type ChallengeDoc, type EventsPage, type SessionInfo, type StateDoc,
  type WireError,
} from "./types.js";

export class ApiError extends Error {
  constructor(public wire: WireError) {
    super(`${wire.code} ${wire.error}: ${wire.message}`);
  }
}

export class Client {
  private token: string | null = null;

  constructor(private baseUrl: string = "") {}

  private async request(method: string, path: string, body?: unknown,
                        authenticated = true): Promise<any> {
    const headers: Record<string, string> = { "content-type": "application/json" };
    if (authenticated && this.token) headers.authorization = `Bearer ${this.token}`;
    const response = await fetch(this.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const doc = await response.json();
    if (!response.ok) throw new ApiError(doc as WireError);
    return doc;
  }

  async login(actorId: string, primary: Keypair): Promise<SessionInfo> {
    const nonceDoc = await this.request("POST", "/v1/auth/nonce",
      { actor_id: actorId }, false);
    const nonce = b64ToBytes(nonceDoc.nonce_b64);
    const signature = signing.sign(signing.loginMessage(nonce), primary);
    const session: SessionInfo = await this.request("POST", "/v1/auth/login", {
      actor_id: actorId,
      nonce_b64: nonceDoc.nonce_b64,
      signature_b64: bytesToB64(signature),
    }, false);
    this.token = session.token;
    return session;
  }

  async events(fromSeq: number, waitMs: number): Promise<EventsPage> {
    return this.request("GET",
      `/v1/events?from_seq=${fromSeq}&wait_ms=${waitMs}`);
  }

  async submitReview(
    actorId: string, primary: Keypair, proposalId: string, round: number,
    verdict: string, commitMessage: string,
  ): Promise<StateDoc> {
    const message = signing.reviewMessage(
      proposalId, round, actorId, verdict, commitMessage, "primary");
    return this.request("POST", `/v1/proposals/${proposalId}/reviews`, {
      round,
      reviewer: actorId,
      verdict,
      commit_message: commitMessage,
      channel: "primary",
      signature_b64: bytesToB64(signing.sign(message, primary)),
    });
  }

  async postChat(
    actorId: string, primary: Keypair, proposalId: string, round: number,
    text: string,
  ): Promise<void> {
    const message = signing.chatMessage(proposalId, round, actorId, text);
    await this.request("POST", `/v1/rounds/${proposalId}:${round}/chat`, {
      author: actorId,
      text,
      signature_b64: bytesToB64(signing.sign(message, primary)),
    });
  }

  async commitGroupDecision(
    actorId: string, primary: Keypair, proposalId: string, round: number,
    verdict: string, tokenHex: string | null,
  ): Promise<StateDoc> {
    const token = tokenHex ? hexBytes(tokenHex) : null;
    const message = signing.groupDecisionMessage(
      proposalId, round, actorId, verdict, token);
    return this.request("POST",
      `/v1/rounds/${proposalId}:${round}/group-decision`, {
        reviewer: actorId,
        verdict,
        attestation_token_b64: token ? bytesToB64(token) : null,
        signature_b64: bytesToB64(signing.sign(message, primary)),
      });
  }

  async openChallenges(reviewer: string): Promise<ChallengeDoc[]> {
    const doc = await this.request(
      "GET", `/v1/second/challenges?reviewer=${encodeURIComponent(reviewer)}`,
      undefined, false);
    return doc.challenges;
  }

  /** Second-channel answer; signed with the separately unlocked second key. */
  async respondChallenge(
    second: Keypair, challenge: ChallengeDoc, answer: "confirm" | "deny",
  ): Promise<StateDoc> {
    const message = signing.challengeResponseMessage(
      challenge.challenge_id, b64ToBytes(challenge.nonce_b64), answer);
    return this.request("POST",
      `/v1/second/challenges/${challenge.challenge_id}/response`, {
        answer,
        signature_b64: bytesToB64(signing.sign(message, second)),
      }, false);
  }
}

function hexBytes(hex: string): Uint8Array {
  const out = new Uint8Array(hex.length / 2);
  for (let i = 0; i < out.length; i++) {
    out[i] = parseInt(hex.substring(2 * i, 2 * i + 2), 16);
  }
  return out;
}
