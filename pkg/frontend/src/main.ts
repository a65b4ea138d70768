/**
 * Console bootstrap: wire the store to the page and render on change.
 */

import { ConsoleApi } from "./api.js";
import { renderApp } from "./dom.js";
import { ConsoleStore } from "./store.js";

const root = document.getElementById("app");
if (root === null) {
  throw new Error("missing #app mount point");
}

const api = new ConsoleApi("");
const store = new ConsoleStore(api);

store.subscribe((state) => renderApp(root, store, state));
renderApp(root, store, store.state);
