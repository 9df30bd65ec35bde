/** Entry point: read scenario/role from the query string and mount the app. */
import { ChatApp } from "./app";
import { GatewayClient, fetchTransport, withRetry } from "./client";
import { mount } from "./ui";

const params = new URLSearchParams(window.location.search);
const scenarioId = params.get("scenario") ?? "";
const role = params.get("role") === "seller" ? "seller" : "buyer";
const gateway = params.get("gateway") ?? "";

const app = new ChatApp(new GatewayClient(fetchTransport(gateway)));
const root = document.getElementById("app");
if (root === null) throw new Error("missing #app container");
mount(root, app);

withRetry(() => app.start(scenarioId, role)).catch((error) => {
  const notice = document.createElement("p");
  notice.className = "error";
  notice.textContent = `could not reach the gateway: ${String(error)}`;
  root.append(notice);
});
