// Annotation session state machine.
//
// Invariants it enforces:
// - exactly one vote is submitted per displayed pair, no matter how many
//   times the annotator clicks or presses a key while a vote is in flight;
// - a vote that fails to reach the service is kept and retried (banner with
//   a retry control, plus an automatic retry timer), never dropped silently;
// - a 409 from the service means the vote already exists, so the session
//   advances without double-counting.
//
// Resuming after a refresh needs no client state: /api/next always returns
// the first unanswered pair for the annotator, and side assignment is a
// deterministic server-side function of (annotator, pair).

import { Choice, PairView, StudyApi, TallyTable, isDone } from "./api.js";

export type SessionView =
  | { kind: "login" }
  | { kind: "loading" }
  | { kind: "pair"; pair: PairView; submitting: boolean }
  | { kind: "offline"; message: string }
  | { kind: "error"; message: string }
  | { kind: "done"; total: number; results: TallyTable | null };

export type Listener = (view: SessionView) => void;
export type Scheduler = (fn: () => void, delayMs: number) => void;

interface PendingVote {
  pairId: string;
  choice: Choice;
}

const RETRY_DELAY_MS = 1500;

export class Session {
  private view: SessionView = { kind: "login" };
  private annotator = "";
  private pending: PendingVote | null = null;
  private readonly listeners: Listener[] = [];

  constructor(
    private readonly api: StudyApi,
    private readonly schedule: Scheduler = (fn, ms) => {
      setTimeout(fn, ms);
    },
  ) {}

  get state(): SessionView {
    return this.view;
  }

  get annotatorId(): string {
    return this.annotator;
  }

  onChange(listener: Listener): void {
    this.listeners.push(listener);
  }

  // Fetches the first unanswered pair; an interrupted session resumes there.
  async login(annotator: string): Promise<void> {
    const id = annotator.trim();
    if (!id) {
      this.setView({ kind: "error", message: "enter a non-empty annotator id" });
      return;
    }
    this.annotator = id;
    this.setView({ kind: "loading" });
    await this.advance();
  }

  // Repeated calls while a vote is in flight are dropped, which is what
  // makes rapid double-clicks store exactly one vote.
  async choose(choice: Choice): Promise<void> {
    if (this.view.kind !== "pair" || this.view.submitting || this.pending) return;
    const pair = this.view.pair;
    this.pending = { pairId: pair.pair_id, choice };
    this.setView({ kind: "pair", pair, submitting: true });
    await this.flush();
  }

  // Manual retry control; also used by the automatic retry timer.
  async retry(): Promise<void> {
    if (this.pending) {
      await this.flush();
    } else if (this.annotator) {
      this.setView({ kind: "loading" });
      await this.advance();
    }
  }

  private async flush(): Promise<void> {
    const pending = this.pending;
    if (!pending) return;
    try {
      await this.api.vote(this.annotator, pending.pairId, pending.choice);
    } catch (error) {
      this.setView({
        kind: "offline",
        message: `vote not delivered (${describe(error)}); it is kept and will be retried`,
      });
      this.schedule(() => void this.retry(), RETRY_DELAY_MS);
      return;
    }
    this.pending = null;
    await this.advance();
  }

  private async advance(): Promise<void> {
    try {
      const next = await this.api.next(this.annotator);
      if (isDone(next)) {
        this.setView({ kind: "done", total: next.total, results: await this.fetchResults() });
      } else {
        this.setView({ kind: "pair", pair: next, submitting: false });
      }
    } catch (error) {
      this.setView({ kind: "offline", message: describe(error) });
      this.schedule(() => void this.retry(), RETRY_DELAY_MS);
    }
  }

  private async fetchResults(): Promise<TallyTable | null> {
    try {
      return await this.api.results();
    } catch {
      return null; // the summary still renders; the raw results link remains
    }
  }

  private setView(view: SessionView): void {
    this.view = view;
    for (const listener of this.listeners) listener(view);
  }
}

function describe(error: unknown): string {
  return error instanceof Error ? error.message : String(error);
}
