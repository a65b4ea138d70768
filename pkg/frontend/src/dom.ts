/**
 * DOM rendering for the console.  Everything here is a projection of the
 * store state; no decisions are made in this module.
 */

import { STAGE_ORDER, stageReached } from "./compare.js";
import {
  canSendFeedback,
  currentPairs,
  feedbackDisabledReason,
  promptsRemaining,
  type ConsoleState,
  type ConsoleStore,
} from "./store.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className = "",
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) {
    node.className = className;
  }
  if (text) {
    node.textContent = text;
  }
  return node;
}

/** Turn cached PNG bytes into an object URL, remembering it per key. */
const objectUrls = new Map<string, string>();

function imageUrl(key: string, bytes: Uint8Array | undefined): string | null {
  if (bytes === undefined) {
    return null;
  }
  const existing = objectUrls.get(key);
  if (existing !== undefined) {
    return existing;
  }
  const copy = new Uint8Array(bytes);
  const url = URL.createObjectURL(new Blob([copy.buffer], { type: "image/png" }));
  objectUrls.set(key, url);
  return url;
}

function renderForm(store: ConsoleStore, state: ConsoleState): HTMLElement {
  const section = el("section", "panel create-panel");
  section.appendChild(el("h2", "", "New design"));
  const form = el("form");
  const label = el("input") as HTMLInputElement;
  label.type = "text";
  label.id = "design-label";
  label.placeholder = "e.g. a small turtle robot";
  label.disabled = state.phase === "creating" || state.phase === "running";
  const file = el("input") as HTMLInputElement;
  file.type = "file";
  file.id = "design-reference";
  file.accept = "image/png,image/jpeg";
  const submit = el("button", "", "Start design") as HTMLButtonElement;
  submit.type = "submit";
  submit.disabled = label.disabled;
  form.append(label, file, submit);
  if (state.formError !== null) {
    form.appendChild(el("p", "form-error", state.formError));
  }
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const picked = file.files && file.files[0];
    if (!picked) {
      void store.startDesign(label.value);
      return;
    }
    const reader = new FileReader();
    reader.onload = () => {
      const dataUrl = String(reader.result);
      const referenceB64 = dataUrl.slice(dataUrl.indexOf(",") + 1);
      void store.startDesign(label.value, { referenceB64 });
    };
    reader.readAsDataURL(picked);
  });
  section.appendChild(form);
  return section;
}

function renderStatus(state: ConsoleState): HTMLElement {
  const section = el("section", "panel status-panel");
  const session = state.session;
  if (session === null) {
    section.appendChild(el("p", "muted", "No session yet."));
    return section;
  }
  const chips = el("div", "stage-chips");
  for (const stage of STAGE_ORDER) {
    const reached = stageReached(session.stage, stage);
    chips.appendChild(el("span", reached ? "chip reached" : "chip", stage));
  }
  section.appendChild(chips);
  const remaining = promptsRemaining(state);
  const budget = el("p", "budget-indicator");
  budget.id = "budget-indicator";
  budget.textContent = `Feedback prompts left: ${remaining ?? "?"}`;
  section.appendChild(budget);
  if (session.busy) {
    section.appendChild(el("p", "muted", "Pipeline running..."));
  }
  if (session.locked) {
    section.appendChild(el("p", "muted", "Session finalized and locked."));
  }
  if (session.error !== null) {
    section.appendChild(
      el("p", "form-error", `${session.error.code}: ${session.error.message}`),
    );
  }
  return section;
}

function renderComparison(state: ConsoleState): HTMLElement {
  const section = el("section", "panel compare-panel");
  const session = state.session;
  section.appendChild(el("h2", "", "Snapshot comparison"));
  if (session === null || state.selected === null) {
    section.appendChild(el("p", "muted", "Renders appear once the first build lands."));
    return section;
  }
  const heading = state.selected > 0
    ? `Snapshot ${state.selected - 1} (previous) vs snapshot ${state.selected} (current)`
    : `Snapshot ${state.selected}`;
  section.appendChild(el("p", "muted", heading));
  const grid = el("div", "compare-grid");
  for (const pair of currentPairs(state)) {
    const row = el("div", "compare-row");
    row.appendChild(el("span", "view-name", pair.view));
    for (const key of [pair.previousUrl, pair.currentUrl]) {
      const cell = el("div", "compare-cell");
      if (key !== null) {
        const url = imageUrl(key, state.renders.get(key));
        if (url !== null) {
          const img = el("img") as HTMLImageElement;
          img.src = url;
          img.alt = `${pair.view} view`;
          cell.appendChild(img);
        } else {
          cell.appendChild(el("span", "muted", "loading"));
        }
      }
      row.appendChild(cell);
    }
    grid.appendChild(row);
  }
  section.appendChild(grid);
  return section;
}

function renderHistory(store: ConsoleStore, state: ConsoleState): HTMLElement {
  const section = el("section", "panel history-panel");
  section.appendChild(el("h2", "", "History"));
  const session = state.session;
  if (session === null || session.snapshot_count === 0) {
    section.appendChild(el("p", "muted", "No snapshots yet."));
    return section;
  }
  const list = el("div", "history-list");
  for (let index = 0; index < session.snapshot_count; index += 1) {
    const button = el(
      "button",
      index === state.selected ? "history-item selected" : "history-item",
      `Snapshot ${index}`,
    ) as HTMLButtonElement;
    button.type = "button";
    button.addEventListener("click", () => void store.selectSnapshot(index));
    list.appendChild(button);
  }
  section.appendChild(list);
  const download = el("button", "download-button", "Download model.xml") as HTMLButtonElement;
  download.type = "button";
  download.addEventListener("click", async () => {
    const model = await store.downloadModel();
    if (model === null) {
      return;
    }
    const copy = new Uint8Array(model.bytes);
    const url = URL.createObjectURL(new Blob([copy.buffer], { type: "application/xml" }));
    const anchor = el("a") as HTMLAnchorElement;
    anchor.href = url;
    anchor.download = model.filename;
    anchor.click();
    URL.revokeObjectURL(url);
  });
  section.appendChild(download);
  return section;
}

function renderFeedback(store: ConsoleStore, state: ConsoleState): HTMLElement {
  const section = el("section", "panel feedback-panel");
  section.appendChild(el("h2", "", "Feedback"));
  const box = el("textarea") as HTMLTextAreaElement;
  box.id = "feedback-text";
  box.placeholder = "Describe one change, e.g. make the legs shorter.";
  const reason = feedbackDisabledReason(state);
  box.disabled = reason !== null;
  const send = el("button", "", "Send feedback") as HTMLButtonElement;
  send.type = "button";
  send.disabled = !canSendFeedback(state);
  send.addEventListener("click", () => {
    void store.sendFeedback(box.value).then((outcome) => {
      if (outcome.sent && outcome.status === "applied") {
        box.value = "";
      }
    });
  });
  const finalize = el("button", "", "Finalize") as HTMLButtonElement;
  finalize.type = "button";
  finalize.disabled =
    state.session === null || state.session.busy || state.inFlight ||
    state.session.error !== null || !stageReached(state.session.stage, "VisualRefined");
  finalize.addEventListener("click", () => void store.finalizeDesign());
  section.append(box, send, finalize);
  if (reason !== null && state.session !== null) {
    section.appendChild(el("p", "muted disabled-reason", `Feedback disabled: ${reason}.`));
  }
  if (state.toast !== null) {
    section.appendChild(el("p", "toast", state.toast));
  }
  return section;
}

/** Rebuild the page from the current state. */
export function renderApp(root: HTMLElement, store: ConsoleStore, state: ConsoleState): void {
  const focused = document.activeElement;
  const keepLabel = focused !== null && focused.id === "design-label"
    ? (focused as HTMLInputElement).value
    : null;
  const keepFeedback = focused !== null && focused.id === "feedback-text"
    ? (focused as HTMLTextAreaElement).value
    : null;

  root.replaceChildren();
  if (state.banner !== null) {
    const banner = el("div", "banner");
    banner.appendChild(el("span", "", state.banner));
    const retry = el("button", "", "Dismiss") as HTMLButtonElement;
    retry.type = "button";
    retry.addEventListener("click", () => store.dismissBanner());
    banner.appendChild(retry);
    root.appendChild(banner);
  }
  root.appendChild(renderForm(store, state));
  root.appendChild(renderStatus(state));
  root.appendChild(renderComparison(state));
  root.appendChild(renderHistory(store, state));
  root.appendChild(renderFeedback(store, state));

  if (keepLabel !== null) {
    const label = document.getElementById("design-label") as HTMLInputElement | null;
    if (label !== null) {
      label.value = keepLabel;
      label.focus();
    }
  }
  if (keepFeedback !== null) {
    const box = document.getElementById("feedback-text") as HTMLTextAreaElement | null;
    if (box !== null) {
      box.value = keepFeedback;
      box.focus();
    }
  }
}
