// Entry point: wire the session to the page and resume after a refresh.
//
// The annotator id is kept in localStorage so a reload logs straight back
// in; the service then serves the first unanswered pair, and side
// assignments are deterministic per (annotator, pair), so a refresh never
// changes which image is on which side.

import { StudyApi } from "./api.js";
import { Session } from "./session.js";
import { mount } from "./ui.js";

const STORAGE_KEY = "study-annotator-id";

const session = new Session(new StudyApi());
const root = document.getElementById("app");
if (!(root instanceof HTMLElement)) {
  throw new Error("missing #app container");
}
mount(root, session);

session.onChange(() => {
  if (session.annotatorId) {
    window.localStorage.setItem(STORAGE_KEY, session.annotatorId);
  }
});

const saved = window.localStorage.getItem(STORAGE_KEY);
if (saved) {
  void session.login(saved);
}
