// Wire types for the /v1 API. Field names match the service exactly.

export type Verdict = "Approve" | "Reject";
export type Status =
  | "Proposed" | "UnderReview" | "Conflict"
  | "Authorized" | "Rejected" | "Deployed";

export interface EventDoc {
  kind: string;
  proposal_id: string | null;
  actor: string;
  timestamp_ms: number;
  body: Record<string, unknown>;
}

export interface EntryDoc {
  seq: number;
  prev_hash_b64: string;
  entry_hash_b64: string;
  author_sig_b64: string;
  endorsements: { peer: string; signature_b64: string }[];
  event: EventDoc;
}

export interface EventsPage {
  entries: EntryDoc[];
  next_seq: number;
}

export interface StateDoc {
  proposal_id: string;
  status: Status;
  round: number;
  step_index: number;
  active_reviewers: string[];
  excluded_devices: string[];
  override_flag: boolean;
}

export interface SessionInfo {
  token: string;
  actor_id: string;
  expires_at_ms: number;
}

export interface ChallengeDoc {
  challenge_id: string;
  proposal_id: string;
  round: number;
  reviewer: string;
  questioned_round: number;
  questioned_verdict: Verdict;
  nonce_b64: string;
}

export interface WireError {
  code: number;
  error: string;
  message: string;
}

const B64_ALPHABET =
  "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
const B64_LOOKUP = new Map([...B64_ALPHABET].map((c, i) => [c, i]));

export function b64ToBytes(b64: string): Uint8Array {
  const clean = b64.replace(/=+$/, "");
  const out = new Uint8Array(Math.floor(clean.length * 3 / 4));
  let buffer = 0, bits = 0, offset = 0;
  for (const char of clean) {
    const value = B64_LOOKUP.get(char);
    if (value === undefined) throw new Error(`invalid base64 character ${char}`);
    buffer = (buffer << 6) | value;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out[offset++] = (buffer >> bits) & 0xff;
    }
  }
  return out;
}

export function bytesToB64(bytes: Uint8Array): string {
  let out = "";
  for (let i = 0; i < bytes.length; i += 3) {
    const chunk = [bytes[i], bytes[i + 1], bytes[i + 2]];
    const triple = (chunk[0] << 16) | ((chunk[1] ?? 0) << 8) | (chunk[2] ?? 0);
    out += B64_ALPHABET[(triple >> 18) & 63];
    out += B64_ALPHABET[(triple >> 12) & 63];
    out += chunk[1] === undefined ? "=" : B64_ALPHABET[(triple >> 6) & 63];
    out += chunk[2] === undefined ? "=" : B64_ALPHABET[triple & 63];
  }
  return out;
}

export function hexToBytes(hex: string): Uint8Array {
  const out = new Uint8Array(hex.length / 2);
  for (let i = 0; i < out.length; i++) {
    out[i] = parseInt(hex.substring(2 * i, 2 * i + 2), 16);
  }
  return out;
}

export function bytesToHex(bytes: Uint8Array): string {
  return Array.from(bytes, (b) => b.toString(16).padStart(2, "0")).join("");
}
