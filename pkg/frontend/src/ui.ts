/** DOM rendering for the chat view; all state lives in the controller. */
import { ChatApp } from "./app";
import { HumanMessageType } from "./protocol";
import { ChatViewState, enabledControls, renderTranscript, showRatingForm } from "./state";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function mount(root: HTMLElement, app: ChatApp): void {
  const scenarioPanel = el("section", "scenario");
  const transcript = el("ul", "transcript");
  const errorBox = el("p", "error");
  const outcomeBanner = el("p", "outcome");

  const composer = el("input", "composer") as HTMLInputElement;
  composer.placeholder = "say something";
  composer.addEventListener("input", () => app.setComposerText(composer.value));
  composer.addEventListener("keydown", (event) => {
    if (event.key === "Enter") void app.sendUtterance();
  });

  const offerInput = el("input", "offer-price") as HTMLInputElement;
  offerInput.placeholder = "$";
  offerInput.addEventListener("input", () => app.setOfferText(offerInput.value));

  const buttons: Partial<Record<HumanMessageType, HTMLButtonElement>> = {};
  const actions: Array<[HumanMessageType, string, () => Promise<void>]> = [
    ["utterance", "Send", () => app.sendUtterance()],
    ["offer", "Offer", () => app.sendOffer()],
    ["accept", "Accept", () => app.accept()],
    ["reject", "Reject", () => app.reject()],
    ["quit", "Quit", () => quitWithConfirm(app)],
  ];
  const controls = el("div", "controls");
  for (const [type, label, handler] of actions) {
    const button = el("button", `act-${type}`, label);
    button.addEventListener("click", () => void handler());
    buttons[type] = button;
    controls.append(button);
  }

  const ratingForm = el("form", "rating");
  const ratingInputs: HTMLInputElement[] = [];
  for (const name of ["human_likeness", "language", "pricing"]) {
    const input = el("input") as HTMLInputElement;
    input.type = "number";
    input.min = "1";
    input.max = "5";
    input.name = name;
    ratingInputs.push(input);
    const label = el("label", undefined, name.replace("_", " "));
    label.append(input);
    ratingForm.append(label);
  }
  const ratingSubmit = el("button", undefined, "Rate this negotiation");
  ratingForm.append(ratingSubmit);
  ratingForm.addEventListener("submit", (event) => {
    event.preventDefault();
    const [human_likeness, language, pricing] = ratingInputs.map((i) =>
      Number(i.value),
    );
    void app.submitRating({ human_likeness, language, pricing });
  });

  root.append(scenarioPanel, transcript, outcomeBanner, errorBox,
    composer, offerInput, controls, ratingForm);

  app.onChange((state) => render(state));
  render(app.state);

  function render(state: ChatViewState): void {
    scenarioPanel.replaceChildren();
    if (state.scenario) {
      scenarioPanel.append(
        el("h2", undefined, state.scenario.title),
        el("p", "category", state.scenario.category),
        el("p", "description", state.scenario.description),
        el("p", "listing", `listed at $${state.scenario.listing_price}`),
      );
    }

    transcript.replaceChildren(
      ...renderTranscript(state).map((line) => el("li", undefined, line)),
    );

    const legal = new Set(enabledControls(state));
    for (const [type, button] of Object.entries(buttons)) {
      button.disabled = !legal.has(type as HumanMessageType);
    }
    composer.disabled = !legal.has("utterance");
    offerInput.disabled = !legal.has("offer");
    if (composer.value !== state.composerText) composer.value = state.composerText;
    if (offerInput.value !== state.offerText) offerInput.value = state.offerText;

    errorBox.textContent = state.lastError ?? "";
    outcomeBanner.textContent = state.outcome
      ? state.outcome.agreed
        ? `Deal at $${state.outcome.price}`
        : `No deal (${state.outcome.endedBy})`
      : "";

    ratingForm.style.display = showRatingForm(state) ? "" : "none";
    if (state.ratingSubmitted) {
      outcomeBanner.textContent += " — thanks for rating!";
    }
  }
}

async function quitWithConfirm(app: ChatApp): Promise<void> {
  if (window.confirm("Walk away from this negotiation?")) {
    await app.quit();
  }
}
