// Domain-separated signed messages, byte-identical to the service's
// builders (see docs/protocol.md). Secret seeds never leave this module's
// callers; signing happens locally.

import nacl from "./nacl.js";
import { concat, fixed, optional, text, u64, blob } from "./canonical.js";

const encoder = new TextEncoder();

const DOMAIN_REGISTER = encoder.encode("countersign/register/v1\n");
const DOMAIN_PROPOSAL = encoder.encode("countersign/proposal/v1\n");
const DOMAIN_REVIEW = encoder.encode("countersign/review/v1\n");
const DOMAIN_CHALLENGE = encoder.encode("countersign/challenge/v1\n");
const DOMAIN_CHAT = encoder.encode("countersign/chat/v1\n");
const DOMAIN_GROUP = encoder.encode("countersign/group-decision/v1\n");
const DOMAIN_LOGIN = encoder.encode("countersign/login/v1\n");

export interface Keypair {
  publicKey: Uint8Array;
  secretKey: Uint8Array;
}

export function keypairFromSeed(seed: Uint8Array): Keypair {
  return nacl.sign.keyPair.fromSeed(fixed(seed, 32));
}

export function sign(message: Uint8Array, keypair: Keypair): Uint8Array {
  return nacl.sign.detached(message, keypair.secretKey);
}

export function verify(
  message: Uint8Array, signature: Uint8Array, publicKey: Uint8Array,
): boolean {
  return nacl.sign.detached.verify(message, signature, publicKey);
}

export function registrationMessage(
  actorId: string, role: string,
  primaryPub: Uint8Array, secondPub: Uint8Array | null,
): Uint8Array {
  return concat(
    DOMAIN_REGISTER, text(actorId), text(role),
    fixed(primaryPub, 32), optional(secondPub, (v) => fixed(v, 32)),
  );
}

export function proposalMessage(
  proposalId: string, targetKind: string, target: string,
  payloadDigest: Uint8Array, proposer: string, note: string, createdAt: number,
): Uint8Array {
  return concat(
    DOMAIN_PROPOSAL, text(proposalId), text(targetKind), text(target),
    fixed(payloadDigest, 32), text(proposer), text(note), u64(createdAt),
  );
}

export function reviewMessage(
  proposalId: string, round: number, reviewer: string,
  verdict: string, commitMessage: string, channel: string,
): Uint8Array {
  return concat(
    DOMAIN_REVIEW, text(proposalId), u64(round), text(reviewer),
    text(verdict), text(commitMessage), text(channel),
  );
}

export function challengeResponseMessage(
  challengeId: string, nonce: Uint8Array, answer: string,
): Uint8Array {
  return concat(DOMAIN_CHALLENGE, text(challengeId), fixed(nonce, 16), text(answer));
}

export function chatMessage(
  proposalId: string, round: number, author: string, body: string,
): Uint8Array {
  return concat(DOMAIN_CHAT, text(proposalId), u64(round), text(author), text(body));
}

export function groupDecisionMessage(
  proposalId: string, round: number, reviewer: string,
  verdict: string, attestationToken: Uint8Array | null,
): Uint8Array {
  return concat(
    DOMAIN_GROUP, text(proposalId), u64(round), text(reviewer), text(verdict),
    optional(attestationToken, (v) => fixed(v, 16)),
  );
}

export function loginMessage(nonce: Uint8Array): Uint8Array {
  return concat(DOMAIN_LOGIN, blob(nonce));
}
