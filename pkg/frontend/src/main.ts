/** Workbench bootstrap: dataset browser on the left, prediction panel and
 * intervention history on the right. */

import { SteerClient, SteerResponse } from "./api.js";
import { renderPanel } from "./panel.js";
import { renderSpectrumPlot } from "./plot.js";
import { SteerSession, HistoryEntry } from "./session.js";
import { diffTokens, splitTokens } from "./tokens.js";

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

export class Workbench {
  private session: SteerSession | null = null;
  private client: SteerClient;

  constructor(
    private readonly doc: Document,
    private readonly root: HTMLElement,
    baseUrl: string,
  ) {
    this.client = new SteerClient(baseUrl);
  }

  async start(): Promise<void> {
    const info = await this.client.info();
    const header = el(this.doc, "header");
    header.append(
      el(this.doc, "h1", "", "Reflection steering workbench"),
      el(
        this.doc,
        "p",
        "meta",
        `model d=${info.model_config.d} L=${info.model_config.layers}, ` +
          `checkpoint ${info.checkpoint_digest.slice(0, 12)}, ${info.dataset_size} spectra`,
      ),
    );
    const layout = el(this.doc, "div", "layout");
    const sidebar = el(this.doc, "nav", "dataset");
    const content = el(this.doc, "main", "content");
    layout.append(sidebar, content);
    this.root.replaceChildren(header, layout);

    const entries = await this.client.dataset();
    for (const entry of entries) {
      const button = el(this.doc, "button", "psm", entry.id);
      button.append(
        el(this.doc, "span", "psm-meta", ` ${entry.peaks} peaks, ${entry.precursor_charge}+`),
      );
      button.addEventListener("click", () => void this.open(entry.id, content));
      sidebar.append(button);
    }
  }

  private async open(psmId: string, content: HTMLElement): Promise<void> {
    this.session = new SteerSession(this.client, psmId);
    const psm = await this.client.datasetPsm(psmId);
    const response = await this.session.predict();
    content.replaceChildren(
      el(this.doc, "h2", "", psmId),
      renderSpectrumPlot(this.doc, psm.peaks),
    );
    const panelHost = el(this.doc, "div", "panel-host");
    const historyHost = el(this.doc, "div", "history-host");
    content.append(panelHost, historyHost);
    this.showResponse(response, panelHost, historyHost);
  }

  private showResponse(
    response: SteerResponse,
    panelHost: HTMLElement,
    historyHost: HTMLElement,
  ): void {
    const session = this.session;
    if (session === null) return;
    panelHost.replaceChildren(
      renderPanel(this.doc, response, {
        onInsertReflect: (position) => {
          session
            .insertReflectAt(position)
            .then((next) => this.showResponse(next, panelHost, historyHost))
            .catch((err) => this.showError(err, panelHost));
        },
      }),
    );
    historyHost.replaceChildren(this.renderHistory(historyHost, panelHost));
  }

  private renderHistory(historyHost: HTMLElement, panelHost: HTMLElement): HTMLElement {
    const session = this.session;
    const list = el(this.doc, "ol", "history");
    if (session === null) return list;
    session.history.forEach((entry: HistoryEntry, index: number) => {
      const item = el(this.doc, "li");
      item.append(el(this.doc, "code", "prefix", entry.prefix));
      item.append(el(this.doc, "span", "", ` → ${entry.response.answer}`));
      if (index > 0) {
        const prev = session.history[index - 1];
        const diff = diffTokens(
          splitTokens(prev.response.answer),
          splitTokens(entry.response.answer),
        );
        item.append(
          el(this.doc, "span", "diff", diff.length === 0 ? " (no change)" : ` (${diff.length} tokens changed)`),
        );
      }
      const replay = el(this.doc, "button", "replay", "replay");
      replay.addEventListener("click", () => {
        void session.replay(index).then((again) => {
          const stable = JSON.stringify(again) === JSON.stringify(entry.response);
          item.append(el(this.doc, "span", stable ? "ok" : "warn", stable ? " ✓ reproducible" : " ! drifted"));
        });
      });
      item.append(replay);
      list.append(item);
    });
    return list;
  }

  private showError(err: unknown, host: HTMLElement): void {
    host.prepend(el(this.doc, "p", "error", String(err)));
  }
}

export function mount(doc: Document, rootId = "app"): Workbench {
  const root = doc.getElementById(rootId);
  if (root === null) {
    throw new Error(`no #${rootId} element`);
  }
  const params = new URLSearchParams(doc.defaultView?.location.search ?? "");
  const baseUrl = params.get("service") ?? "http://127.0.0.1:8000";
  const workbench = new Workbench(doc, root, baseUrl);
  void workbench.start();
  return workbench;
}
