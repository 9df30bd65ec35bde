import { describe, expect, it } from "vitest";

import { ChatApp } from "../src/app";
import { GatewayClient } from "../src/client";
import { PHASE_ACTIONS } from "../src/protocol";
import {
  ChatViewState,
  enabledControls,
  initialState,
  insertMessage,
  renderTranscript,
} from "../src/state";
import { FakeGateway, makeScenario } from "./fake_gateway";

function appWithGateway(replies: string[]): { app: ChatApp; gateway: FakeGateway } {
  const scenario = makeScenario();
  const gateway = new FakeGateway(new Map([[scenario.id, scenario]]), replies);
  return { app: new ChatApp(new GatewayClient(gateway)), gateway };
}

/** Rebuild a view state purely from the gateway's persisted log. */
function stateFromLog(gateway: FakeGateway, sessionId: string): ChatViewState {
  let state = { ...initialState("buyer"), sessionId };
  for (const record of gateway.log) {
    if (record.kind === "message" && record.session_id === sessionId) {
      state = insertMessage(state, record.message!, record.direction!);
    }
  }
  return state;
}

describe("scripted end-to-end session", () => {
  it("runs scenario load, three exchanges, offer, accept, rating", async () => {
    const { app, gateway } = appWithGateway([
      "yes it is available",
      "it is in great condition",
      "i could consider that",
    ]);

    await app.start("sc1", "buyer");
    expect(app.state.scenario?.title).toBe("sturdy commuter bike");
    expect(app.state.scenario?.listing_price).toBe(200);
    expect(app.state.phase).toBe("open");

    const prompts = ["hi is the bike available ?", "what condition is it in ?", "would you take 170 ?"];
    for (const prompt of prompts) {
      app.setComposerText(prompt);
      await app.sendUtterance();
      // mask parity with the shared fixture at every step
      expect(enabledControls(app.state)).toEqual(PHASE_ACTIONS[app.state.phase]);
    }
    expect(app.state.entries).toHaveLength(6); // 3 exchanges

    app.setOfferText("170");
    await app.sendOffer();

    expect(app.state.phase).toBe("terminal");
    expect(app.state.outcome).toEqual({ agreed: true, price: 170, endedBy: "agreed" });
    expect(enabledControls(app.state)).toEqual([]);

    await app.submitRating({ human_likeness: 4, language: 5, pricing: 3 });
    expect(app.state.ratingSubmitted).toEqual({ human_likeness: 4, language: 5, pricing: 3 });
    expect(gateway.log.at(-1)).toMatchObject({
      kind: "rating",
      rating: { human_likeness: 4, language: 5, pricing: 3 },
    });

    // the rendered transcript equals the persisted log, message for message
    const sessionId = app.state.sessionId!;
    const replayed = stateFromLog(gateway, sessionId);
    expect(renderTranscript(app.state)).toEqual(renderTranscript(replayed));
    expect(app.state.entries.map((e) => [e.message.seq, e.message.type, e.from]))
      .toEqual(replayed.entries.map((e) => [e.message.seq, e.message.type, e.from]));
  });

  it("shows the agent's opener first when the human sells", async () => {
    const { app } = appWithGateway([]);
    await app.start("sc1", "seller");
    expect(app.state.entries[0].from).toBe("agent");
    expect(app.state.entries[0].message.type).toBe("utterance");
  });

  it("never sends an action the gateway would reject", async () => {
    const { app, gateway } = appWithGateway(["sure"]);
    await app.start("sc1", "buyer");
    // accept is illegal in the open phase: the client refuses to send it
    await app.accept();
    expect(gateway.log.filter((r) => r.kind === "message")).toHaveLength(0);
    expect(enabledControls(app.state)).not.toContain("accept");
  });

  it("renders a server error inline and keeps the composer text", async () => {
    const { app, gateway } = appWithGateway(["sure"]);
    await app.start("sc1", "buyer");
    app.setComposerText("precious draft");
    // bypass the client-side mask to exercise the server-side rejection
    const sessionId = app.state.sessionId!;
    const response = (await gateway.post(`/sessions/${sessionId}/messages`, {
      type: "accept",
    })) as { messages: { type: string }[]; phase: string };
    expect(response.messages[0].type).toBe("error");
    expect(response.phase).toBe("open");
    expect(app.state.composerText).toBe("precious draft");
  });

  it("blocks malformed offers client-side", async () => {
    const { app, gateway } = appWithGateway([]);
    await app.start("sc1", "buyer");
    app.setOfferText("not a number");
    await app.sendOffer();
    expect(app.state.lastError).toMatch(/positive number/);
    expect(gateway.log.filter((r) => r.kind === "message")).toHaveLength(0);
  });

  it("rejects out-of-range ratings without recording them", async () => {
    const { app, gateway } = appWithGateway([]);
    await app.start("sc1", "buyer");
    await app.quit();
    expect(app.state.phase).toBe("terminal");
    await app.submitRating({ human_likeness: 6, language: 1, pricing: 1 });
    expect(app.state.ratingSubmitted).toBeNull();
    expect(app.state.lastError).toMatch(/1\.\.5/);
    expect(gateway.log.some((r) => r.kind === "rating")).toBe(false);
  });
});
