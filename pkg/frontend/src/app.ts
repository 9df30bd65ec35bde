/**
 * Headless controller: owns the view state, talks to the gateway, and
 * notifies a render callback after every change. The DOM layer (ui.ts) and
 * the tests drive the same controller.
 */
import { GatewayClient } from "./client";
import { OutboundMessage, Rating } from "./protocol";
import {
  ChatViewState,
  applyServerMessages,
  canSend,
  echoLocal,
  initialState,
  isValidRating,
  parseOfferPrice,
} from "./state";

export class ChatApp {
  state: ChatViewState;
  private readonly listeners: Array<(state: ChatViewState) => void> = [];

  constructor(private readonly client: GatewayClient) {
    this.state = initialState("buyer");
  }

  onChange(listener: (state: ChatViewState) => void): void {
    this.listeners.push(listener);
  }

  private update(next: ChatViewState): void {
    this.state = next;
    for (const listener of this.listeners) listener(next);
  }

  async start(scenarioId: string, humanRole: "buyer" | "seller"): Promise<void> {
    const scenario = await this.client.fetchScenario(scenarioId);
    const created = await this.client.createSession(scenarioId, humanRole);
    let state: ChatViewState = {
      ...initialState(humanRole),
      scenario,
      sessionId: created.session_id,
    };
    state = applyServerMessages(state, created.messages, created.phase);
    this.update(state);
  }

  private async send(outbound: OutboundMessage): Promise<void> {
    const sessionId = this.state.sessionId;
    if (sessionId === null || !canSend(this.state, outbound.type)) return;
    this.update(echoLocal(this.state, outbound));
    const response = await this.client.sendMessage(sessionId, outbound);
    this.update(
      applyServerMessages(this.state, response.messages, response.phase),
    );
  }

  setComposerText(text: string): void {
    this.update({ ...this.state, composerText: text });
  }

  setOfferText(text: string): void {
    this.update({ ...this.state, offerText: text });
  }

  async sendUtterance(): Promise<void> {
    const text = this.state.composerText.trim();
    if (!text) return;
    await this.send({ type: "utterance", text });
  }

  async sendOffer(): Promise<void> {
    const price = parseOfferPrice(this.state.offerText);
    if (price === null) {
      this.update({ ...this.state, lastError: "offer price must be a positive number" });
      return;
    }
    await this.send({ type: "offer", price });
  }

  async accept(): Promise<void> {
    await this.send({ type: "accept" });
  }

  async reject(): Promise<void> {
    await this.send({ type: "reject" });
  }

  async quit(): Promise<void> {
    await this.send({ type: "quit" });
  }

  async submitRating(rating: Rating): Promise<void> {
    const sessionId = this.state.sessionId;
    if (sessionId === null || this.state.phase !== "terminal") return;
    if (!isValidRating(rating)) {
      this.update({ ...this.state, lastError: "ratings are integers 1..5" });
      return;
    }
    await this.client.submitRating(sessionId, rating);
    this.update({ ...this.state, ratingSubmitted: rating, lastError: null });
  }
}
