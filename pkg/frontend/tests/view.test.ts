/** View-model/DOM unit tests driven by synthetic wire events. */

import { Window } from "happy-dom";
import { beforeEach, describe, expect, it } from "vitest";

import { ActionRejected, ServiceClient, WireEvent } from "../src/api.js";
import { SessionView } from "../src/session-view.js";

interface StubCall {
  action: string;
  text?: string;
}

function makeStubClient(overrides: Partial<Record<string, unknown>> = {}) {
  const calls: StubCall[] = [];
  const client = {
    getSession: async () => ({
      session_id: "s1",
      status: "generating",
      mode: "interactive",
      task: "bhc",
      verified_count: 0,
      pending: null,
      case_id: "c1",
    }),
    getCase: async () => ({
      case_id: "c1",
      discharge_summary: "HPI: stable",
      radiology_reports: ["CXR: clear"],
      target_bhc: "x",
      target_di: "y",
    }),
    postAction: async (_: string, action: string, text?: string) => {
      calls.push({ action, text });
      return {};
    },
    getDocument: async () => ({
      document: "First block. Second block.",
      segmentation: {
        segments: [
          { heading: "H1", question: "Q1?", span: "First block." },
          { heading: "H2", question: "Q2?", span: "Second block." },
        ],
      },
    }),
    streamEvents: async () => undefined,
    ...overrides,
  };
  return { client: client as unknown as ServiceClient, calls };
}

function setup(overrides: Partial<Record<string, unknown>> = {}) {
  const window = new Window();
  const document = window.document as unknown as Document;
  const container = document.createElement("div") as HTMLElement;
  document.body.append(container);
  const { client, calls } = makeStubClient(overrides);
  const view = new SessionView(document, container, client, "s1");
  return { view, container, calls, document };
}

function feed(view: SessionView, events: Partial<WireEvent>[]) {
  let seq = view.lastSeq;
  for (const event of events) {
    seq += 1;
    view.handleEvent({ seq, ...event } as WireEvent);
  }
}

const FIRST_TOPIC: Partial<WireEvent>[] = [
  { type: "status", status: "generating" },
  { type: "element", kind: "TopicStarted" },
  { type: "element", kind: "TopicText", payload: "A" },
  { type: "element", kind: "TopicText", payload: "d" },
  { type: "element", kind: "TopicDone", payload: "Admission" },
  { type: "status", status: "paused" },
];

describe("card lifecycle", () => {
  it("streams text incrementally into a card", () => {
    const { view } = setup();
    feed(view, FIRST_TOPIC.slice(0, 4));
    expect(view.cards).toHaveLength(1);
    expect(view.cards[0]).toMatchObject({ kind: "topic", text: "Ad", state: "streaming" });
  });

  it("card becomes pending with enabled controls at pause", () => {
    const { view, container } = setup();
    feed(view, FIRST_TOPIC);
    expect(view.cards[0]).toMatchObject({ text: "Admission", state: "pending" });
    const textarea = container.querySelector("textarea") as HTMLTextAreaElement;
    expect(textarea.disabled).toBe(false);
    const accept = container.querySelector("button.accept") as HTMLButtonElement;
    expect(accept.disabled).toBe(false);
  });

  it("exactly one pending card while paused", () => {
    const { view } = setup();
    feed(view, FIRST_TOPIC);
    feed(view, [
      { type: "action", action: "accept" },
      { type: "status", status: "generating" },
      { type: "element", kind: "QuestionStarted" },
      { type: "element", kind: "QuestionText", payload: "Why?" },
      { type: "element", kind: "QuestionDone", payload: "Why?" },
      { type: "status", status: "paused" },
    ]);
    const pending = view.cards.filter((c) => c.state === "pending");
    expect(pending).toHaveLength(1);
    expect(pending[0].kind).toBe("question");
    expect(view.cards[0].state).toBe("verified");
  });

  it("verified cards are read-only", () => {
    const { view, container } = setup();
    feed(view, FIRST_TOPIC);
    feed(view, [{ type: "action", action: "accept" }]);
    const textarea = container.querySelector("textarea") as HTMLTextAreaElement;
    expect(textarea.disabled).toBe(true);
  });

  it("server-confirmed edit replaces the card text", () => {
    const { view } = setup();
    feed(view, FIRST_TOPIC);
    feed(view, [{ type: "action", action: "edit", text: "Arrival Overview" }]);
    expect(view.cards[0]).toMatchObject({ text: "Arrival Overview", state: "verified" });
  });

  it("regenerate resets the same card on the next Started", () => {
    const { view } = setup();
    feed(view, FIRST_TOPIC);
    feed(view, [
      { type: "action", action: "regenerate" },
      { type: "status", status: "generating" },
      { type: "element", kind: "TopicStarted" },
      { type: "element", kind: "TopicText", payload: "Fresh" },
      { type: "element", kind: "TopicDone", payload: "Fresh" },
      { type: "status", status: "paused" },
    ]);
    expect(view.cards).toHaveLength(1);
    expect(view.cards[0]).toMatchObject({ text: "Fresh", state: "pending" });
  });

  it("no optimistic update: posting an action does not change cards", async () => {
    const { view, calls } = setup();
    feed(view, FIRST_TOPIC);
    await view.acceptPending();
    expect(calls).toEqual([{ action: "accept", text: undefined }]);
    expect(view.cards[0].state).toBe("pending"); // unchanged until the event arrives
  });
});

describe("status banner and errors", () => {
  it("renders status transitions", () => {
    const { view, container } = setup();
    feed(view, [{ type: "status", status: "paused" }]);
    const banner = container.querySelector(".status-banner") as HTMLElement;
    expect(banner.getAttribute("data-status")).toBe("paused");
    expect(banner.textContent).toContain("paused");
  });

  it("action rejection surfaces inline and keeps state", async () => {
    const { view, container } = setup({
      postAction: async () => {
        throw new ActionRejected(409, "cannot accept while generating");
      },
    });
    feed(view, FIRST_TOPIC);
    await view.acceptPending();
    const error = container.querySelector(".error-banner") as HTMLElement;
    expect(error.hidden).toBe(false);
    expect(error.textContent).toContain("409");
    expect(view.cards[0].state).toBe("pending");
  });

  it("failed status shows the cause", () => {
    const { view, container } = setup();
    feed(view, [{ type: "status", status: "failed", cause: "endpoint burst into flames" }]);
    const banner = container.querySelector(".status-banner") as HTMLElement;
    expect(banner.textContent).toContain("endpoint burst into flames");
  });
});

describe("final document", () => {
  it("renders headings and joined text on DocumentDone", async () => {
    const { view, container } = setup();
    feed(view, FIRST_TOPIC);
    feed(view, [
      { type: "action", action: "accept" },
      { type: "element", kind: "DocumentDone" },
      { type: "status", status: "completed" },
    ]);
    await new Promise((resolve) => setTimeout(resolve, 10));
    const final = container.querySelector(".final-document") as HTMLElement;
    expect(final.hidden).toBe(false);
    const headings = Array.from(final.querySelectorAll(".final-heading")).map(
      (h) => h.textContent,
    );
    expect(headings).toEqual(["H1", "H2"]);
    expect(final.querySelector(".final-text")?.textContent).toBe(
      "First block. Second block.",
    );
    expect(view.documentText).toBe("First block. Second block.");
  });
});

describe("context panes", () => {
  it("shows summary and radiology reports", async () => {
    const { view, container } = setup();
    await view.start();
    const panes = container.querySelectorAll(".pane");
    expect(panes.length).toBe(2);
    expect(panes[0].textContent).toContain("HPI: stable");
    expect(panes[1].textContent).toContain("CXR: clear");
    view.stop();
  });
});
