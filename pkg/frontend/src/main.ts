// Bootstrap: reader signs in, works through the blinded case list, and sees
// the final report after closure.

import { ApiClient } from "./api.js";
import { SessionController } from "./controller.js";
import { StudyView } from "./view.js";

function bootstrap() {
  const rootEl = document.getElementById("app");
  if (!rootEl) throw new Error("#app container missing");

  const api = new ApiClient("");
  let controller: SessionController;
  const view = new StudyView(rootEl, {
    onVerdict: (verdict) => {
      controller.submit(verdict).catch((err) => view.renderError(String(err), false));
    },
  });

  controller = new SessionController(api, {
    onCase: (c) => view.renderCase(c, controller.answered, controller.total),
    onFinished: (state) => {
      view.renderFinished(state.answered, state.total);
      const btn = document.getElementById("show-report");
      if (btn) {
        btn.onclick = () => controller.closeAndReport().catch((e) => view.renderError(String(e), false));
      }
    },
    onReport: (report) => view.renderReport(report),
    onError: (message, retryable) => view.renderError(message, retryable),
  });

  const form = document.getElementById("signin-form") as HTMLFormElement | null;
  if (form) {
    form.onsubmit = (e) => {
      e.preventDefault();
      const readerId = (document.getElementById("reader-id") as HTMLInputElement).value || "reader";
      const level = (document.getElementById("reader-level") as HTMLSelectElement).value;
      form.style.display = "none";
      controller.start(readerId, level).catch((err) => view.renderError(String(err), false));
    };
  }
}

document.addEventListener("DOMContentLoaded", bootstrap);
