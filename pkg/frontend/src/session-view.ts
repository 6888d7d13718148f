/**
 * Block-wise session view: element cards stream in, pause for verification,
 * and assemble into the final document.
 *
 * The view is strictly server-driven: nothing advances optimistically. User
 * actions POST to the service and take visible effect only when the
 * corresponding action/status/element events arrive back over the event
 * stream, so the display always reflects true model state.
 */

import {
  ActionRejected,
  CaseDetail,
  DocumentView,
  ElementKind,
  ServiceClient,
  SessionStatus,
  WireEvent,
} from "./api.js";

export type CardState = "streaming" | "pending" | "verified";

export interface CardModel {
  kind: ElementKind;
  text: string;
  state: CardState;
}

const RECONNECT_DELAY_MS = 300;

function elementKindOf(eventKind: string): ElementKind | null {
  for (const kind of ["topic", "question", "span"] as ElementKind[]) {
    if (eventKind.toLowerCase().startsWith(kind)) return kind;
  }
  return null;
}

export class SessionView {
  readonly cards: CardModel[] = [];
  status: SessionStatus = "generating";
  statusCause = "";
  documentText: string | null = null;
  lastSeq = 0;
  connectionState: "connected" | "reconnecting" | "closed" = "closed";

  private mode = "interactive";
  private root: HTMLElement;
  private cardsEl: HTMLElement;
  private bannerEl: HTMLElement;
  private errorEl: HTMLElement;
  private contextEl: HTMLElement;
  private finalEl: HTMLElement;
  private abort = new AbortController();

  constructor(
    private doc: Document,
    container: HTMLElement,
    private client: ServiceClient,
    private sessionId: string,
  ) {
    this.root = this.el("div", "session-root");
    this.bannerEl = this.el("div", "status-banner");
    this.errorEl = this.el("div", "error-banner");
    this.errorEl.hidden = true;
    this.contextEl = this.el("div", "context-panes");
    this.cardsEl = this.el("div", "cards");
    this.finalEl = this.el("div", "final-document");
    this.finalEl.hidden = true;
    this.root.append(this.bannerEl, this.errorEl, this.contextEl, this.cardsEl, this.finalEl);
    container.append(this.root);
    this.renderBanner();
  }

  private el(tag: string, className: string): HTMLElement {
    const node = this.doc.createElement(tag) as HTMLElement;
    node.className = className;
    return node;
  }

  /** Connect to the session: context panes, then the event stream loop. */
  async start(): Promise<void> {
    const info = await this.client.getSession(this.sessionId);
    this.mode = info.mode;
    this.status = info.status;
    this.renderBanner();
    try {
      const detail = await this.client.getCase(info.case_id);
      this.renderContext(detail);
    } catch {
      // context panes are informative only; the session still works
    }
    void this.streamLoop();
  }

  stop(): void {
    this.abort.abort();
    this.connectionState = "closed";
  }

  /** Event-stream consumption with resume-from-last-event reconnects. */
  private async streamLoop(): Promise<void> {
    this.connectionState = "connected";
    while (!this.abort.signal.aborted) {
      try {
        await this.client.streamEvents(
          this.sessionId,
          this.lastSeq,
          (event) => this.handleEvent(event),
          this.abort.signal,
        );
        // graceful close: server ends the stream at a terminal status
        this.connectionState = "closed";
        return;
      } catch (error) {
        if (this.abort.signal.aborted) return;
        this.connectionState = "reconnecting";
        this.renderBanner();
        await new Promise((resolve) => setTimeout(resolve, RECONNECT_DELAY_MS));
      }
    }
  }

  /** Apply one server-confirmed event; exported for unit tests. */
  handleEvent(event: WireEvent): void {
    if (typeof event.seq === "number" && event.seq > this.lastSeq) {
      this.lastSeq = event.seq;
    }
    if (event.type === "element" && event.kind) {
      this.handleElementEvent(event.kind, event.payload ?? "");
    } else if (event.type === "status" && event.status) {
      this.status = event.status;
      this.statusCause = event.cause ?? "";
      if (this.status === "paused") this.markSinglePending();
      this.renderCards();
      this.renderBanner();
    } else if (event.type === "action" && event.action) {
      this.applyConfirmedAction(event.action, event.text);
      this.renderCards();
    }
  }

  private handleElementEvent(kind: string, payload: string): void {
    if (kind === "DocumentDone") {
      void this.loadFinalDocument();
      return;
    }
    const element = elementKindOf(kind);
    if (!element) return;
    if (kind.endsWith("Started")) {
      const last = this.cards[this.cards.length - 1];
      if (last && last.state !== "verified" && last.kind === element) {
        // regeneration: the same element streams again into its card
        last.text = "";
        last.state = "streaming";
      } else {
        this.cards.push({ kind: element, text: "", state: "streaming" });
      }
    } else if (kind.endsWith("Text")) {
      const card = this.cards[this.cards.length - 1];
      if (card && card.state === "streaming") card.text += payload;
    } else if (kind.endsWith("Done")) {
      const card = this.cards[this.cards.length - 1];
      if (card && card.state === "streaming") {
        card.text = payload;
        card.state = this.mode === "interactive" ? "pending" : "verified";
      }
    }
    this.renderCards();
  }

  private applyConfirmedAction(action: string, text?: string): void {
    const pending = this.cards.find((c) => c.state === "pending");
    if (!pending) return;
    if (action === "accept") {
      pending.state = "verified";
    } else if (action === "edit") {
      pending.text = text ?? pending.text;
      pending.state = "verified";
    }
    // regenerate keeps the card; the next Started event resets it
  }

  private markSinglePending(): void {
    let seen = false;
    for (let i = this.cards.length - 1; i >= 0; i--) {
      const card = this.cards[i];
      if (card.state === "verified") continue;
      if (!seen) {
        card.state = "pending";
        seen = true;
      } else {
        card.state = "verified";
      }
    }
  }

  private async loadFinalDocument(): Promise<void> {
    try {
      const view: DocumentView = await this.client.getDocument(this.sessionId);
      this.documentText = view.document;
      this.renderFinal(view);
    } catch {
      // completed status may land a beat before finalize is possible; retry once
      await new Promise((resolve) => setTimeout(resolve, 150));
      try {
        const view = await this.client.getDocument(this.sessionId);
        this.documentText = view.document;
        this.renderFinal(view);
      } catch (error) {
        this.showError(String(error));
      }
    }
  }

  // -- user actions -----------------------------------------------------------

  /** Accept the pending card, sending an edit when its textarea changed. */
  async acceptPending(): Promise<void> {
    const index = this.cards.findIndex((c) => c.state === "pending");
    if (index === -1) return;
    const textarea = this.cardsEl.querySelectorAll("textarea")[index] as
      | HTMLTextAreaElement
      | undefined;
    const value = textarea ? textarea.value : this.cards[index].text;
    try {
      if (value !== this.cards[index].text) {
        await this.client.postAction(this.sessionId, "edit", value);
      } else {
        await this.client.postAction(this.sessionId, "accept");
      }
      this.clearError();
    } catch (error) {
      this.surfaceActionError(error);
    }
  }

  async regeneratePending(): Promise<void> {
    try {
      await this.client.postAction(this.sessionId, "regenerate");
      this.clearError();
    } catch (error) {
      this.surfaceActionError(error);
    }
  }

  private surfaceActionError(error: unknown): void {
    if (error instanceof ActionRejected) {
      this.showError(`action rejected (${error.status}): ${error.message}`);
    } else {
      this.showError(String(error));
    }
  }

  showError(message: string): void {
    this.errorEl.textContent = message;
    this.errorEl.hidden = false;
  }

  clearError(): void {
    this.errorEl.textContent = "";
    this.errorEl.hidden = true;
  }

  // -- rendering ---------------------------------------------------------------

  private renderBanner(): void {
    const suffix =
      this.connectionState === "reconnecting" ? " (reconnecting...)" : "";
    this.bannerEl.textContent = `session ${this.status}${
      this.statusCause ? `: ${this.statusCause}` : ""
    }${suffix}`;
    this.bannerEl.setAttribute("data-status", this.status);
  }

  private renderContext(detail: CaseDetail): void {
    this.contextEl.textContent = "";
    const summary = this.el("section", "pane pane-summary");
    const summaryTitle = this.el("h2", "");
    summaryTitle.textContent = "Discharge Summary";
    const summaryBody = this.el("pre", "");
    summaryBody.textContent = detail.discharge_summary;
    summary.append(summaryTitle, summaryBody);
    this.contextEl.append(summary);
    detail.radiology_reports.forEach((report, i) => {
      const pane = this.el("section", "pane pane-report");
      const title = this.el("h2", "");
      title.textContent = `Radiology Report ${i + 1}`;
      const body = this.el("pre", "");
      body.textContent = report;
      pane.append(title, body);
      this.contextEl.append(pane);
    });
  }

  private renderCards(): void {
    this.cardsEl.textContent = "";
    this.cards.forEach((card, index) => {
      const cardEl = this.el("div", `card card-${card.kind}`);
      cardEl.setAttribute("data-kind", card.kind);
      cardEl.setAttribute("data-state", card.state);

      const label = this.el("span", "card-kind");
      label.textContent = card.kind;
      cardEl.append(label);

      const textarea = this.doc.createElement("textarea") as HTMLTextAreaElement;
      textarea.className = "card-text";
      textarea.value = card.text;
      textarea.disabled = !(card.state === "pending" && this.status === "paused");
      cardEl.append(textarea);

      const controls = this.el("div", "card-controls");
      const accept = this.doc.createElement("button") as HTMLButtonElement;
      accept.className = "accept";
      accept.textContent = "Accept";
      const regenerate = this.doc.createElement("button") as HTMLButtonElement;
      regenerate.className = "regenerate";
      regenerate.textContent = "Regenerate";
      const actionable = card.state === "pending" && this.status === "paused";
      accept.disabled = regenerate.disabled = !actionable;
      accept.addEventListener("click", () => void this.acceptPending());
      regenerate.addEventListener("click", () => void this.regeneratePending());
      controls.append(accept, regenerate);
      cardEl.append(controls);

      this.cardsEl.append(cardEl);
      void index;
    });
  }

  private renderFinal(view: DocumentView): void {
    this.finalEl.textContent = "";
    const title = this.el("h2", "");
    title.textContent = "Final Document";
    this.finalEl.append(title);
    for (const segment of view.segmentation.segments) {
      const heading = this.el("h3", "final-heading");
      heading.textContent = segment.heading;
      const body = this.el("p", "final-span");
      body.textContent = segment.span;
      this.finalEl.append(heading, body);
    }
    const joined = this.el("pre", "final-text");
    joined.textContent = view.document;
    this.finalEl.append(joined);
    this.finalEl.hidden = false;
  }
}
