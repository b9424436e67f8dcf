/** Prediction panel: raw tokens (reflect highlighted, probability shading,
 * click-to-steer), the service's post-processed answer rendered verbatim,
 * and the optional label row with per-position match flags. */

import { SteerResponse } from "./api.js";
import { REFLECT, splitTokens } from "./tokens.js";

export interface PanelCallbacks {
  onInsertReflect: (position: number) => void;
}

function probabilityShade(logProb: number): string {
  const p = Math.exp(logProb);
  const hue = Math.round(120 * Math.max(0, Math.min(1, p)));
  return `hsl(${hue}, 70%, 85%)`;
}

function tokenChip(
  doc: Document,
  token: string,
  logProb: number | undefined,
): HTMLElement {
  const chip = doc.createElement("span");
  chip.className = token === REFLECT ? "token reflect" : "token";
  chip.textContent = token;
  if (logProb !== undefined) {
    chip.style.backgroundColor = probabilityShade(logProb);
    chip.title = `p = ${Math.exp(logProb).toFixed(3)}`;
  }
  return chip;
}

export function renderMassBadge(doc: Document, response: SteerResponse): HTMLElement {
  const badge = doc.createElement("span");
  const delta = response.mass.delta;
  badge.className = Math.abs(delta) < 0.05 ? "mass-badge ok" : "mass-badge off";
  badge.textContent = `Δm ${delta >= 0 ? "+" : ""}${delta.toFixed(4)} Da`;
  badge.title = `predicted ${response.mass.predicted.toFixed(4)} vs precursor ${response.mass.precursor.toFixed(4)}`;
  return badge;
}

export function renderPanel(
  doc: Document,
  response: SteerResponse,
  callbacks: PanelCallbacks,
): HTMLElement {
  const panel = doc.createElement("div");
  panel.className = "prediction-panel";

  const rawRow = doc.createElement("div");
  rawRow.className = "row raw";
  rawRow.append(rowLabel(doc, "Raw prediction"));
  response.raw_tokens.forEach((token, i) => {
    const chip = tokenChip(doc, token, response.log_probs[i]);
    rawRow.append(chip);
    if (token !== "$") {
      // clicking the gap after token i inserts <reflect> there
      const gap = doc.createElement("button");
      gap.className = "insert-reflect";
      gap.dataset.position = String(i + 1);
      gap.textContent = "+";
      gap.title = `insert ${REFLECT} after token ${i + 1}`;
      gap.addEventListener("click", () => callbacks.onInsertReflect(i + 1));
      rawRow.append(gap);
    }
  });

  const answerRow = doc.createElement("div");
  answerRow.className = "row answer";
  answerRow.append(rowLabel(doc, "Post-processed"));
  // render the service's answer exactly as sent; never re-strip client-side
  const matches = response.matches;
  splitTokens(response.answer).forEach((token, i) => {
    const chip = tokenChip(doc, token, undefined);
    if (matches !== undefined) {
      chip.classList.add(matches[i] ? "match" : "mismatch");
    }
    answerRow.append(chip);
  });
  answerRow.append(renderMassBadge(doc, response));

  panel.append(rawRow, answerRow);

  if (response.label !== undefined) {
    const labelRow = doc.createElement("div");
    labelRow.className = "row label";
    labelRow.append(rowLabel(doc, "Ground truth"));
    for (const token of splitTokens(response.label)) {
      labelRow.append(tokenChip(doc, token, undefined));
    }
    panel.append(labelRow);
  }
  return panel;
}

function rowLabel(doc: Document, text: string): HTMLElement {
  const el = doc.createElement("span");
  el.className = "row-label";
  el.textContent = text;
  return el;
}
