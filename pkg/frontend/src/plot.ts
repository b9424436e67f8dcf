/** Read-only stick plot of a spectrum (m/z vs intensity) as inline SVG. */

const SVG_NS = "http://www.w3.org/2000/svg";

export interface PlotOptions {
  width?: number;
  height?: number;
  padding?: number;
}

export function renderSpectrumPlot(
  doc: Document,
  peaks: [number, number][],
  options: PlotOptions = {},
): SVGSVGElement {
  const { width = 640, height = 180, padding = 24 } = options;
  const svg = doc.createElementNS(SVG_NS, "svg") as SVGSVGElement;
  svg.setAttribute("viewBox", `0 0 ${width} ${height}`);
  svg.setAttribute("class", "spectrum-plot");
  if (peaks.length === 0) {
    return svg;
  }
  const mzMin = Math.min(...peaks.map((p) => p[0]));
  const mzMax = Math.max(...peaks.map((p) => p[0]));
  const iMax = Math.max(...peaks.map((p) => p[1]));
  const span = mzMax - mzMin || 1;
  const axis = doc.createElementNS(SVG_NS, "line");
  axis.setAttribute("x1", String(padding));
  axis.setAttribute("x2", String(width - padding));
  axis.setAttribute("y1", String(height - padding));
  axis.setAttribute("y2", String(height - padding));
  axis.setAttribute("class", "axis");
  svg.append(axis);
  for (const [mz, intensity] of peaks) {
    const x = padding + ((mz - mzMin) / span) * (width - 2 * padding);
    const h = (intensity / iMax) * (height - 2 * padding);
    const stick = doc.createElementNS(SVG_NS, "line");
    stick.setAttribute("x1", x.toFixed(2));
    stick.setAttribute("x2", x.toFixed(2));
    stick.setAttribute("y1", String(height - padding));
    stick.setAttribute("y2", (height - padding - h).toFixed(2));
    stick.setAttribute("class", "peak");
    const title = doc.createElementNS(SVG_NS, "title");
    title.textContent = `m/z ${mz.toFixed(4)}, intensity ${intensity.toFixed(4)}`;
    stick.append(title);
    svg.append(stick);
  }
  return svg;
}
