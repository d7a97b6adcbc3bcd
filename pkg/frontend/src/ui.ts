// DOM view layer: login form, side-by-side pair view with a progress bar,
// offline/error banners, and the final summary.
//
// The pair view shows both images at equal rendered size on a neutral
// background and never displays method labels or any other signal that
// could distinguish the two methods; labels appear only on the summary
// screen, where they come from /api/results.

import { Choice, TallyTable } from "./api.js";
import { Session, SessionView } from "./session.js";

export interface Mounted {
  render(view: SessionView): void;
  dispose(): void;
}

export function mount(root: HTMLElement, session: Session): Mounted {
  const doc = root.ownerDocument;

  const onKeydown = (event: KeyboardEvent) => {
    if (event.key === "ArrowLeft") void session.choose("left");
    else if (event.key === "ArrowRight") void session.choose("right");
  };
  doc.addEventListener("keydown", onKeydown);

  const render = (view: SessionView): void => {
    switch (view.kind) {
      case "login":
        renderLogin(root, session);
        break;
      case "loading":
        root.innerHTML = `<p class="status">loading...</p>`;
        break;
      case "pair":
        renderPair(root, session, view);
        break;
      case "offline":
        renderBanner(root, session, view.message, "retry");
        break;
      case "error":
        renderBanner(root, session, view.message, "back");
        break;
      case "done":
        renderDone(root, view.total, view.results);
        break;
    }
  };

  session.onChange(render);
  render(session.state);
  return { render, dispose: () => doc.removeEventListener("keydown", onKeydown) };
}

function renderLogin(root: HTMLElement, session: Session): void {
  root.innerHTML = `
    <form class="login">
      <h1>Which looks more realistic?</h1>
      <p>You will see pairs of images. For each pair, click the one that
      looks more realistic (or use the left/right arrow keys).</p>
      <label>annotator id
        <input name="annotator" autocomplete="off" autofocus>
      </label>
      <button type="submit">start</button>
    </form>`;
  const form = root.querySelector("form") as HTMLFormElement;
  const input = root.querySelector("input") as HTMLInputElement;
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    void session.login(input.value);
  });
}

function renderPair(
  root: HTMLElement,
  session: Session,
  view: Extract<SessionView, { kind: "pair" }>,
): void {
  const { pair, submitting } = view;
  const percent = Math.round(((pair.index - 1) / pair.total) * 100);
  const disabled = submitting ? "disabled" : "";
  root.innerHTML = `
    <header class="progress">
      <span class="count">${pair.index} / ${pair.total}</span>
      <div class="bar"><div class="fill" style="width: ${percent}%"></div></div>
    </header>
    <main class="pair">
      <button class="side" data-choice="left" ${disabled}>
        <img src="${escapeHtml(pair.left_url)}" alt="left image">
      </button>
      <button class="side" data-choice="right" ${disabled}>
        <img src="${escapeHtml(pair.right_url)}" alt="right image">
      </button>
    </main>
    <p class="hint">click the more realistic image, or press the left/right arrow key</p>`;
  for (const button of root.querySelectorAll<HTMLButtonElement>("button.side")) {
    button.addEventListener("click", () => {
      void session.choose(button.dataset.choice as Choice);
    });
  }
}

function renderBanner(
  root: HTMLElement,
  session: Session,
  message: string,
  action: "retry" | "back",
): void {
  root.innerHTML = `
    <div class="banner">
      <p>${escapeHtml(message)}</p>
      <button class="retry">${action === "retry" ? "retry now" : "back"}</button>
    </div>`;
  const button = root.querySelector("button.retry") as HTMLButtonElement;
  button.addEventListener("click", () => {
    if (action === "retry") void session.retry();
    else renderLogin(root, session);
  });
}

function renderDone(root: HTMLElement, total: number, results: TallyTable | null): void {
  root.innerHTML = `
    <section class="summary">
      <h1>All done</h1>
      <p>You answered all ${total} pairs. Thank you!</p>
      ${results ? resultsTable(results) : ""}
      <p><a href="/api/results">raw results</a></p>
    </section>`;
}

function resultsTable(results: TallyTable): string {
  const overall =
    results.overall_percent_a === null || results.overall_percent_b === null
      ? ""
      : `
      <tr>
        <td>overall</td>
        <td>${results.overall_percent_a.toFixed(2)}%</td>
        <td>${results.overall_percent_b.toFixed(2)}%</td>
      </tr>`;
  const rows = Object.entries(results.per_annotator)
    .map(
      ([annotator, tally]) => `
      <tr>
        <td>${escapeHtml(annotator)}</td>
        <td>${tally.votes_a}</td>
        <td>${tally.votes_b}</td>
      </tr>`,
    )
    .join("");
  return `
    <table class="results">
      <thead>
        <tr>
          <th></th>
          <th>${escapeHtml(results.method_a)}</th>
          <th>${escapeHtml(results.method_b)}</th>
        </tr>
      </thead>
      <tbody>${overall}${rows}</tbody>
    </table>`;
}

function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}
