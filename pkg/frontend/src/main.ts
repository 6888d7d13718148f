/** Browser entry: pick a case, start a session, mount the view. */

import { ServiceClient } from "./api.js";
import { SessionView } from "./session-view.js";

const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("service") ?? "http://127.0.0.1:8420";
const client = new ServiceClient(baseUrl);

async function boot(): Promise<void> {
  const app = document.getElementById("app");
  if (!app) throw new Error("missing #app container");

  const picker = document.createElement("div");
  picker.className = "case-picker";
  app.append(picker);

  let cases;
  try {
    cases = await client.listCases();
  } catch (error) {
    const banner = document.createElement("div");
    banner.className = "error-banner";
    banner.textContent = `service unreachable at ${baseUrl}: ${error}`;
    app.prepend(banner);
    return;
  }

  const select = document.createElement("select");
  for (const c of cases) {
    const option = document.createElement("option");
    option.value = c.case_id;
    option.textContent = `${c.case_id} (${c.n_reports} reports)`;
    select.append(option);
  }
  const taskSelect = document.createElement("select");
  for (const task of ["bhc", "di"]) {
    const option = document.createElement("option");
    option.value = task;
    option.textContent = task;
    taskSelect.append(option);
  }
  const startButton = document.createElement("button");
  startButton.textContent = "Start session";
  picker.append(select, taskSelect, startButton);

  startButton.addEventListener("click", async () => {
    startButton.disabled = true;
    const info = await client.createSession({
      case_id: select.value,
      c: "topics",
      g: "none",
      task: taskSelect.value,
      mode: "interactive",
    });
    const view = new SessionView(document, app, client, info.session_id);
    await view.start();
  });
}

void boot();
