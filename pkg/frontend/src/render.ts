// Pure HTML-string renderers; the browser shell assigns them to innerHTML.
// Every displayed number comes straight from an API field.

import type { CaseRow, ReportView } from "./types.js";
import type { ConsoleState } from "./state.js";
import { applyFilter } from "./state.js";

export function escapeHtml(value: string): string {
  return value
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

function when(epochSeconds: number): string {
  return new Date(epochSeconds * 1000).toISOString().replace("T", " ").slice(0, 19);
}

export function renderBanner(banner: string | null): string {
  if (!banner) return "";
  return `<div class="banner error" role="alert">${escapeHtml(banner)} ` +
    `<button data-action="retry">retry</button></div>`;
}

export function renderQueue(state: ConsoleState): string {
  const rows = applyFilter(state.rows, state.filter);
  if (rows.length === 0) {
    return `<p class="empty-state">No cases match the current filter.</p>`;
  }
  const body = rows
    .map((row: CaseRow) => {
      const selected = state.selected?.case_id === row.case_id ? " selected" : "";
      return (
        `<tr class="case-row${selected}" data-case-id="${escapeHtml(row.case_id)}">` +
        `<td class="mono">${escapeHtml(row.case_id)}</td>` +
        `<td>${escapeHtml(row.service)}</td>` +
        `<td><span class="status status-${row.status.toLowerCase()}">${row.status}</span></td>` +
        `<td><span class="admission admission-${row.admission}">${row.admission}</span></td>` +
        `<td class="mono">${when(row.submitted_at)}</td>` +
        `</tr>`
      );
    })
    .join("");
  return (
    `<table class="queue"><thead><tr>` +
    `<th>case</th><th>service</th><th>status</th><th>admission</th><th>submitted</th>` +
    `</tr></thead><tbody>${body}</tbody></table>`
  );
}

function scoreBand(score: number): string {
  if (score >= 0.6) return "high";
  if (score >= 0.3) return "mid";
  return "low";
}

export function renderScoreBars(view: ReportView): string {
  const score = view.cot_score;
  if (!score) {
    return `<p class="gate-skipped">Reasoning gate skipped: no historical reference was available.</p>`;
  }
  const bars = Object.entries(score.per_section)
    .map(([kind, value]) => {
      const weight = view.cot_weights[kind] ?? 0;
      const contribution = weight * value;
      const width = Math.round(value * 100);
      return (
        `<div class="score-row" data-kind="${escapeHtml(kind)}">` +
        `<span class="score-label">${escapeHtml(kind)}</span>` +
        `<span class="score-track"><span class="score-bar band-${scoreBand(value)}" ` +
        `style="width:${width}%" title="contribution ${contribution.toFixed(3)}"></span></span>` +
        `<span class="score-value mono">${value.toFixed(3)}</span>` +
        `<span class="score-contrib mono">w=${weight.toFixed(2)} w*s=${contribution.toFixed(3)}</span>` +
        `</div>`
      );
    })
    .join("");
  const gate = score.passed
    ? `<span class="gate passed">gate passed</span>`
    : `<span class="gate failed">gate failed</span>`;
  const missing = score.missing_sections.length
    ? `<p class="missing">missing sections: ${score.missing_sections.map(escapeHtml).join(", ")}</p>`
    : "";
  return (
    `<div class="score-bars">${bars}</div>` +
    `<p class="aggregate">aggregate <strong class="mono">${score.aggregate.toFixed(3)}</strong> ${gate}</p>` +
    missing
  );
}

export function renderReportView(view: ReportView): string {
  const report = view.report;
  const verdict = report.ecd_verdict
    ? `<span class="verdict erroneous">erroneous</span>`
    : `<span class="verdict normal">normal</span>`;
  const fault = report.fault_class
    ? escapeHtml(report.fault_class.detail ? `${report.fault_class.kind} (${report.fault_class.detail})` : report.fault_class.kind)
    : "n/a";
  const ranking = report.root_cause_ranking.length
    ? `<ol class="ranking">` +
      report.root_cause_ranking
        .map(
          (c) =>
            `<li><strong>${escapeHtml(c.candidate)}</strong>` +
            (c.rationale ? ` <span class="rationale">${escapeHtml(c.rationale)}</span>` : "") +
            `</li>`,
        )
        .join("") +
      `</ol>`
    : `<p class="none">no root-cause ranking</p>`;
  const cot = report.cot.length
    ? report.cot
        .map(
          (section) =>
            `<section class="cot-section" data-kind="${escapeHtml(section.kind)}">` +
            `<h4>${escapeHtml(section.kind)}</h4><p>${escapeHtml(section.text)}</p></section>`,
        )
        .join("")
    : `<p class="none">no reasoning sections (answers-only run)</p>`;
  const provenance = view.retrieved_ids.length
    ? `<ul class="provenance">` +
      view.retrieved_ids.map((id) => `<li class="mono">${escapeHtml(id)}</li>`).join("") +
      `</ul>`
    : `<p class="none">no historical cases informed this prompt</p>`;
  const feedback = view.feedback
    ? `<span class="label label-${view.feedback.label.toLowerCase()}">${view.feedback.label}</span>` +
      (view.feedback.judge ? ` by ${escapeHtml(view.feedback.judge)}` : "")
    : `<span class="label none">unreviewed</span>`;
  const action = view.recommended_action
    ? `<p class="recommended">recommended action: ${escapeHtml(view.recommended_action)}</p>`
    : "";
  return (
    `<article class="report" data-case-id="${escapeHtml(view.case_id)}">` +
    `<header><h2 class="mono">${escapeHtml(view.case_id)}</h2>` +
    `<p>verdict ${verdict} (confidence ${report.ecd_confidence.toFixed(2)}) ` +
    `&middot; fault class <strong>${fault}</strong></p>` +
    `<p>admission: <span class="admission admission-${view.admission.state}">` +
    `${view.admission.state}</span> <span class="reason">${escapeHtml(view.admission.reason)}</span></p>` +
    `<p>feedback: ${feedback}</p>${action}</header>` +
    `<h3>Root causes</h3>${ranking}` +
    `<h3>Reasoning</h3>${cot}` +
    `<h3>Reasoning score</h3>${renderScoreBars(view)}` +
    `<h3>Retrieval provenance</h3>${provenance}` +
    `<footer class="verdict-controls">` +
    `<button data-action="verdict" data-label="Good" data-report="${escapeHtml(view.case_id)}">Mark Good</button>` +
    `<button data-action="verdict" data-label="Bad" data-report="${escapeHtml(view.case_id)}">Mark Bad</button>` +
    `</footer></article>`
  );
}

export function renderApp(state: ConsoleState): string {
  return (
    renderBanner(state.banner) +
    `<div class="layout"><section class="queue-pane">` +
    `<div class="filters">` +
    ["all", "review", "gated", "admitted"]
      .map(
        (f) =>
          `<button data-action="filter" data-filter="${f}"` +
          (state.filter === f ? ` class="active"` : "") +
          `>${f}</button>`,
      )
      .join("") +
    `<button data-action="refresh">refresh</button></div>` +
    renderQueue(state) +
    `</section><section class="detail-pane">` +
    (state.selected ? renderReportView(state.selected) : `<p class="empty-state">Select a case.</p>`) +
    `</section></div>`
  );
}
