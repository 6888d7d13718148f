/**
 * End-to-end session workflow against the real service process (scripted
 * LLM transport): create a session, watch six cards stream in order, edit
 * the first heading, accept everything, and compare the rendered document
 * with GET /sessions/{id}/document.
 */

import { ChildProcess, spawn } from "node:child_process";
import { fileURLToPath } from "node:url";
import { Window } from "happy-dom";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ServiceClient } from "../src/api.js";
import { SessionView } from "../src/session-view.js";

const SERVICE_SCRIPT = fileURLToPath(
  new URL("../scripts/mock_service.py", import.meta.url),
);
const PORT = 20000 + Math.floor(Math.random() * 20000);
const BASE = `http://127.0.0.1:${PORT}`;

let service: ChildProcess;

async function waitFor(
  predicate: () => boolean | Promise<boolean>,
  what: string,
  timeoutMs = 20_000,
): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if (await predicate()) return;
    await new Promise((resolve) => setTimeout(resolve, 25));
  }
  throw new Error(`timed out waiting for ${what}`);
}

beforeAll(async () => {
  service = spawn("python3", [SERVICE_SCRIPT, "--port", String(PORT), "--segments", "2"], {
    stdio: ["ignore", "inherit", "inherit"],
  });
  await waitFor(async () => {
    try {
      const response = await fetch(`${BASE}/cases`);
      return response.ok;
    } catch {
      return false;
    }
  }, "mock service readiness");
});

afterAll(() => {
  service?.kill();
});

describe("interactive session in the browser view", () => {
  it("streams six cards, supports edit-then-accept, and shows the final document", async () => {
    const window = new Window();
    const document = window.document as unknown as Document;
    const container = document.createElement("div") as HTMLElement;
    document.body.append(container);

    const client = new ServiceClient(BASE);
    const cases = await client.listCases();
    expect(cases.length).toBeGreaterThan(0);

    const info = await client.createSession({
      case_id: cases[0].case_id,
      c: "topics",
      g: "none",
      task: "bhc",
      mode: "interactive",
    });
    const view = new SessionView(document, container, client, info.session_id);
    await view.start();

    const paused = () =>
      view.status === "paused" &&
      view.cards.filter((c) => c.state === "pending").length === 1;

    let pauses = 0;
    const editedHeading = "Clinician-Approved Overview";
    const seenKinds: string[] = [];

    for (let step = 0; step < 6; step++) {
      await waitFor(paused, `pause ${step + 1}`);
      pauses += 1;
      const pendingIndex = view.cards.findIndex((c) => c.state === "pending");
      seenKinds.push(view.cards[pendingIndex].kind);

      // exactly one enabled textarea, belonging to the pending card
      const textareas = Array.from(
        container.querySelectorAll("textarea"),
      ) as HTMLTextAreaElement[];
      expect(textareas.filter((t) => !t.disabled)).toHaveLength(1);
      expect(textareas.findIndex((t) => !t.disabled)).toBe(pendingIndex);

      if (step === 0) {
        textareas[pendingIndex].value = editedHeading; // edit the heading
      }
      const buttons = Array.from(
        container.querySelectorAll("button.accept"),
      ) as HTMLButtonElement[];
      buttons[pendingIndex].click();
      await waitFor(
        () => view.cards[pendingIndex]?.state === "verified",
        `verification of card ${pendingIndex + 1}`,
      );
    }

    expect(pauses).toBe(6);
    expect(seenKinds).toEqual(["topic", "question", "span", "topic", "question", "span"]);

    await waitFor(() => view.status === "completed", "session completion");
    await waitFor(() => view.documentText !== null, "final document render");

    // the edit landed: card one and the final segmentation carry it
    expect(view.cards[0].text).toBe(editedHeading);
    const cardOrder = view.cards.map((c) => c.kind);
    expect(cardOrder).toEqual(["topic", "question", "span", "topic", "question", "span"]);
    expect(view.cards.every((c) => c.state === "verified")).toBe(true);

    // the span card streamed under the edited heading (card order preserved)
    expect(view.cards[2].kind).toBe("span");
    expect(view.cards[2].text.length).toBeGreaterThan(0);

    // rendered document equals the service's document resource exactly
    const served = await client.getDocument(info.session_id);
    expect(view.documentText).toBe(served.document);
    const finalText = container.querySelector(".final-text") as HTMLElement;
    expect(finalText.textContent).toBe(served.document);
    const headers = Array.from(container.querySelectorAll(".final-heading")).map(
      (h) => h.textContent,
    );
    expect(headers[0]).toBe(editedHeading);
    expect(headers).toHaveLength(2);

    view.stop();
  });

  it("rejects cleanly when the service is unreachable", async () => {
    const dead = new ServiceClient("http://127.0.0.1:1");
    await expect(dead.listCases()).rejects.toThrow();
  });

  it("surfaces action rejection (409) inline while generating", async () => {
    const window = new Window();
    const document = window.document as unknown as Document;
    const container = document.createElement("div") as HTMLElement;
    document.body.append(container);

    const client = new ServiceClient(BASE);
    const cases = await client.listCases();
    const info = await client.createSession({
      case_id: cases[0].case_id,
      mode: "autonomous",
    });
    const view = new SessionView(document, container, client, info.session_id);
    await view.start();
    await waitFor(() => view.status === "completed", "autonomous completion");

    await view.acceptPending(); // no pending card: no-op, no crash
    const rejected = await client
      .postAction(info.session_id, "accept")
      .then(() => false)
      .catch(() => true);
    expect(rejected).toBe(true);
    view.stop();
  });
});
