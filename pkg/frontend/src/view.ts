// DOM layer: slice viewer with position arrows and window/level control,
// verdict buttons with keyboard shortcuts, progress, and the final report.

import { CaseView, SessionReport, Verdict } from "./api.js";
import { formatMetric, sessionReportRows } from "./report.js";

const VIEWS = ["axial", "coronal", "sagittal"] as const;

export interface ViewCallbacks {
  onVerdict: (verdict: Verdict) => void;
}

export class StudyView {
  private root: HTMLElement;
  private callbacks: ViewCallbacks;
  private buttonsEnabled = false;
  private level = 0.5;
  private width = 1.0;

  constructor(root: HTMLElement, callbacks: ViewCallbacks) {
    this.root = root;
    this.callbacks = callbacks;
    document.addEventListener("keydown", (e) => {
      if (!this.buttonsEnabled) return;
      if (e.key === "r" || e.key === "R") this.pick("real");
      if (e.key === "s" || e.key === "S") this.pick("synthetic");
    });
  }

  private pick(verdict: Verdict) {
    if (!this.buttonsEnabled) return;
    this.setButtonsEnabled(false);
    this.callbacks.onVerdict(verdict);
  }

  setButtonsEnabled(enabled: boolean) {
    this.buttonsEnabled = enabled;
    for (const id of ["verdict-real", "verdict-synthetic"]) {
      const btn = this.root.querySelector<HTMLButtonElement>(`#${id}`);
      if (btn) btn.disabled = !enabled;
    }
  }

  renderCase(view: CaseView, answered: number, total: number) {
    const filter = `contrast(${this.width}) brightness(${1 + (0.5 - this.level)})`;
    const panels = VIEWS.map((name) => {
      const pos = view.position[name] ?? [0.5, 0.5];
      return `
        <figure class="slice" data-view="${name}">
          <img src="${view.slices[name]}" alt="${name} slice" style="filter: ${filter}" />
          <span class="arrow" style="top: ${(pos[0] * 100).toFixed(1)}%; left: ${(pos[1] * 100).toFixed(1)}%">&#10148;</span>
          <figcaption>${name}</figcaption>
        </figure>`;
    }).join("");
    this.root.innerHTML = `
      <section id="case-panel" data-case-id="${view.case_id}">
        <header>
          <span id="case-type">${view.type_tag}</span>
          <span id="progress" data-answered="${answered}" data-total="${total}">${answered} / ${total}</span>
        </header>
        <div class="slices">${panels}</div>
        <div class="wl-controls">
          <label>window <input id="wl-width" type="range" min="0.5" max="2" step="0.1" value="${this.width}" /></label>
          <label>level <input id="wl-level" type="range" min="0" max="1" step="0.05" value="${this.level}" /></label>
        </div>
        <div class="verdicts">
          <button id="verdict-real">Real (R)</button>
          <button id="verdict-synthetic">Synthetic (S)</button>
        </div>
      </section>`;
    this.root.querySelector<HTMLButtonElement>("#verdict-real")!.onclick = () => this.pick("real");
    this.root.querySelector<HTMLButtonElement>("#verdict-synthetic")!.onclick = () => this.pick("synthetic");
    // a slice that fails to load gets a visible retry control
    this.root.querySelectorAll<HTMLImageElement>(".slice img").forEach((img) => {
      img.onerror = () => {
        const figure = img.parentElement!;
        if (figure.querySelector(".retry")) return;
        const retry = document.createElement("button");
        retry.className = "retry";
        retry.textContent = "retry image";
        retry.onclick = () => {
          retry.remove();
          const src = img.src;
          img.src = "";
          img.src = src;
        };
        figure.appendChild(retry);
      };
    });
    const widthInput = this.root.querySelector<HTMLInputElement>("#wl-width")!;
    const levelInput = this.root.querySelector<HTMLInputElement>("#wl-level")!;
    widthInput.oninput = () => {
      this.width = Number(widthInput.value);
      this.applyWindowLevel();
    };
    levelInput.oninput = () => {
      this.level = Number(levelInput.value);
      this.applyWindowLevel();
    };
    this.setButtonsEnabled(true);
  }

  private applyWindowLevel() {
    const filter = `contrast(${this.width}) brightness(${1 + (0.5 - this.level)})`;
    this.root.querySelectorAll<HTMLImageElement>(".slice img").forEach((img) => {
      img.style.filter = filter;
    });
  }

  renderError(message: string, retryable: boolean) {
    const note = document.createElement("div");
    note.className = "error-note";
    note.textContent = retryable ? `retrying: ${message}` : `error: ${message}`;
    this.root.appendChild(note);
  }

  renderFinished(answered: number, total: number) {
    this.root.innerHTML = `
      <section id="finished-panel">
        <p>Session complete: ${answered} of ${total} cases answered.</p>
        <button id="show-report">Close session &amp; show report</button>
      </section>`;
  }

  renderReport(report: SessionReport) {
    const rows = sessionReportRows(report)
      .map(
        (r) => `
        <tr data-group="${r.group}">
          <td>${r.group}</td><td>${r.tp}</td><td>${r.tn}</td><td>${r.fp}</td><td>${r.fn}</td>
          <td>${formatMetric(r.sensitivity)}</td><td>${formatMetric(r.specificity)}</td>
          <td>${formatMetric(r.accuracy)}</td><td>${r.unanswered}</td>
        </tr>`,
      )
      .join("");
    this.root.innerHTML = `
      <section id="report-panel">
        <h2>Reader performance</h2>
        <table id="report-table">
          <thead>
            <tr><th>group</th><th>tp</th><th>tn</th><th>fp</th><th>fn</th>
                <th>sensitivity</th><th>specificity</th><th>accuracy</th><th>unanswered</th></tr>
          </thead>
          <tbody>${rows}</tbody>
        </table>
      </section>`;
  }
}
