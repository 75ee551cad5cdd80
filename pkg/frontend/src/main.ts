// Browser shell: wires the state machine to the DOM via event delegation.
// Base URL comes from ?api=... or window.CHANGELENS_BASE_URL, defaulting to
// the serving origin.

import { ConsoleApi } from "./api.js";
import { renderApp } from "./render.js";
import { ReviewQueue } from "./state.js";

declare global {
  interface Window {
    CHANGELENS_BASE_URL?: string;
  }
}

function baseUrl(): string {
  const fromQuery = new URLSearchParams(window.location.search).get("api");
  return fromQuery ?? window.CHANGELENS_BASE_URL ?? window.location.origin;
}

export function boot(root: HTMLElement): ReviewQueue {
  const queue = new ReviewQueue(new ConsoleApi(baseUrl()));

  const redraw = () => {
    root.innerHTML = renderApp(queue.state);
  };

  root.addEventListener("click", (event) => {
    const target = (event.target as HTMLElement).closest<HTMLElement>("[data-action], .case-row");
    if (!target) return;
    const run = async () => {
      if (target.classList.contains("case-row")) {
        await queue.open(target.dataset.caseId ?? "");
      } else if (target.dataset.action === "refresh" || target.dataset.action === "retry") {
        await queue.refresh();
      } else if (target.dataset.action === "filter") {
        queue.setFilter((target.dataset.filter ?? "all") as never);
      } else if (target.dataset.action === "verdict") {
        await queue.submitVerdict(
          target.dataset.report ?? "",
          (target.dataset.label ?? "Good") as "Good" | "Bad",
        );
      }
      redraw();
    };
    void run();
  });

  void queue.refresh().then(redraw);
  return queue;
}

if (typeof document !== "undefined") {
  const root = document.getElementById("app");
  if (root) boot(root);
}
