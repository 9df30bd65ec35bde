/**
 * Pure view-state for one chat session.
 *
 * The message list is append-only and kept sorted by the server-assigned seq;
 * out-of-order arrivals are inserted in place and duplicates (optimistic
 * local echoes reconciled against server records) are dropped. Controls are
 * derived from the phase via the shared legality table, so the client never
 * enables an action the gateway would reject.
 */
import {
  HumanMessageType,
  OutboundMessage,
  PhaseKey,
  Rating,
  ScenarioSummary,
  WireMessage,
  isLegal,
  legalActions,
} from "./protocol";

export type Speaker = "human" | "agent" | "system";

export interface ChatEntry {
  message: WireMessage;
  from: Speaker;
}

export interface ChatViewState {
  scenario: ScenarioSummary | null;
  sessionId: string | null;
  humanRole: "buyer" | "seller";
  entries: ChatEntry[]; // sorted by seq, append-only
  phase: PhaseKey;
  pendingOffer: number | null;
  outcome: { agreed: boolean; price: number | null; endedBy: string } | null;
  composerText: string;
  offerText: string;
  lastError: string | null;
  ratingSubmitted: Rating | null;
}

export function initialState(humanRole: "buyer" | "seller"): ChatViewState {
  return {
    scenario: null,
    sessionId: null,
    humanRole,
    entries: [],
    phase: "open",
    pendingOffer: null,
    outcome: null,
    composerText: "",
    offerText: "",
    lastError: null,
    ratingSubmitted: null,
  };
}

function speakerFor(message: WireMessage, direction: "in" | "out"): Speaker {
  if (message.type === "outcome" || message.type === "error") return "system";
  return direction === "in" ? "human" : "agent";
}

/** Insert one message in seq order; duplicates by seq are dropped. */
export function insertMessage(
  state: ChatViewState,
  message: WireMessage,
  direction: "in" | "out",
): ChatViewState {
  if (state.entries.some((e) => e.message.seq === message.seq)) {
    return state;
  }
  const entry: ChatEntry = { message, from: speakerFor(message, direction) };
  const entries = [...state.entries];
  let at = entries.length;
  while (at > 0 && entries[at - 1].message.seq > message.seq) at -= 1;
  entries.splice(at, 0, entry);

  let next: ChatViewState = { ...state, entries };
  if (message.type === "offer" && typeof message.price === "number") {
    next = { ...next, pendingOffer: message.price };
  } else if (message.type === "outcome") {
    next = {
      ...next,
      phase: "terminal",
      pendingOffer: null,
      outcome: {
        agreed: message.agreed ?? false,
        price: message.price ?? null,
        endedBy: message.ended_by ?? "",
      },
    };
  } else if (message.type === "error") {
    next = { ...next, lastError: message.detail ?? "rejected by server" };
  }
  return next;
}

export function maxSeq(state: ChatViewState): number {
  const last = state.entries[state.entries.length - 1];
  return last ? last.message.seq : 0;
}

/** Apply a gateway response (agent replies + authoritative phase). */
export function applyServerMessages(
  state: ChatViewState,
  messages: WireMessage[],
  phase: PhaseKey,
): ChatViewState {
  let next = state;
  for (const message of messages) {
    next = insertMessage(next, message, "out");
  }
  return { ...next, phase };
}

/**
 * Optimistically record a message the human just sent. Seqs are dense and the
 * gateway records the inbound message before any reply, so the echo's seq is
 * exactly maxSeq + 1; replies then reconcile by seq.
 */
export function echoLocal(
  state: ChatViewState,
  outbound: OutboundMessage,
): ChatViewState {
  const message: WireMessage = {
    ...outbound,
    session_id: state.sessionId ?? "",
    seq: maxSeq(state) + 1,
  };
  const next = insertMessage({ ...state, lastError: null }, message, "in");
  if (outbound.type === "utterance") return { ...next, composerText: "" };
  if (outbound.type === "offer") return { ...next, offerText: "" };
  return next;
}

export function canSend(state: ChatViewState, type: HumanMessageType): boolean {
  return isLegal(state.phase, type);
}

export function enabledControls(state: ChatViewState): HumanMessageType[] {
  return legalActions(state.phase);
}

/** Client-side offer validation: a positive finite number. */
export function parseOfferPrice(text: string): number | null {
  const trimmed = text.trim().replace(/^\$/, "");
  if (!/^\d+(\.\d+)?$/.test(trimmed)) return null;
  const value = Number(trimmed);
  return Number.isFinite(value) && value > 0 ? value : null;
}

export function showRatingForm(state: ChatViewState): boolean {
  return state.phase === "terminal" && state.ratingSubmitted === null;
}

export function isValidRating(rating: Rating): boolean {
  return [rating.human_likeness, rating.language, rating.pricing].every(
    (v) => Number.isInteger(v) && v >= 1 && v <= 5,
  );
}

/**
 * Conversational transcript as rendered: one line per negotiation message in
 * seq order. Errors are inline notices, not part of the transcript.
 */
export function renderTranscript(state: ChatViewState): string[] {
  return state.entries
    .filter((e) => e.message.type !== "error")
    .map((e) => {
      const m = e.message;
      switch (m.type) {
        case "utterance":
          return `${m.seq} ${e.from}: ${m.text ?? ""}`;
        case "offer":
          return `${m.seq} ${e.from} offers $${m.price}`;
        case "accept":
        case "reject":
        case "quit":
          return `${m.seq} ${e.from} ${m.type}s`;
        case "outcome":
          return m.agreed
            ? `${m.seq} deal at $${m.price}`
            : `${m.seq} no deal (${m.ended_by})`;
        default:
          return `${m.seq} ${m.type}`;
      }
    });
}
