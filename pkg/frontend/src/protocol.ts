/**
 * Wire protocol shared with the negotiation gateway.
 *
 * Messages are JSON objects {type, session_id, seq, ...}; the server assigns
 * a strictly increasing seq to every message it records. The phase table in
 * phase_actions.json is a copy of the gateway's protocol/phase_actions.json
 * fixture; a test asserts the two stay identical.
 */
import phaseActions from "./phase_actions.json";

export type HumanMessageType = "utterance" | "offer" | "accept" | "reject" | "quit";
export type MessageType = HumanMessageType | "outcome" | "error";

export type PhaseKey =
  | "open"
  | "offer_pending_own"
  | "offer_pending_opponent"
  | "terminal";

export interface WireMessage {
  type: MessageType;
  session_id: string;
  seq: number;
  text?: string;
  price?: number;
  agreed?: boolean;
  ended_by?: string;
  detail?: string;
}

/** Message bodies the client sends; the server adds session_id and seq. */
export type OutboundMessage =
  | { type: "utterance"; text: string }
  | { type: "offer"; price: number }
  | { type: "accept" }
  | { type: "reject" }
  | { type: "quit" };

export interface ScenarioSummary {
  id: string;
  category: string;
  title: string;
  description: string;
  listing_price: number;
}

export interface SessionCreated {
  session_id: string;
  messages: WireMessage[];
  phase: PhaseKey;
  legal: HumanMessageType[];
}

export interface MessageResponse {
  messages: WireMessage[];
  phase: PhaseKey;
  legal: HumanMessageType[];
}

export interface Rating {
  human_likeness: number;
  language: number;
  pricing: number;
}

export const PHASE_ACTIONS: Record<PhaseKey, HumanMessageType[]> =
  phaseActions as Record<PhaseKey, HumanMessageType[]>;

export function legalActions(phase: PhaseKey): HumanMessageType[] {
  return PHASE_ACTIONS[phase];
}

export function isLegal(phase: PhaseKey, type: HumanMessageType): boolean {
  return legalActions(phase).includes(type);
}
