/**
 * Browser entry point.  Builds the page around a Session and repaints on
 * every state change.
 *
 * Configuration comes from query parameters:
 *   ?server=http://host:port   base URL (default: the page's own origin)
 *   &table=name                table to join (default: demo)
 *   &author=name               author for edits and comments
 *   &projector=1               read-only presentation mode
 */

import { Session } from "./session.js";
import { OverlayInputs, drawGrid, viewModel } from "./render.js";

const CELL_PX = 34;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, cls?: string, text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (cls !== undefined) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

function fmtSeconds(s: number): string {
  return s >= 120 ? `${Math.round(s / 60)} min` : `${Math.round(s)} s`;
}

async function main(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const server = params.get("server") ?? window.location.origin;
  const table = params.get("table") ?? "demo";
  const author = params.get("author") ?? `guest-${Math.floor(Math.random() * 10000)}`;
  const projector = params.get("projector") === "1";

  const root = document.getElementById("app")!;
  root.textContent = `joining table ${table}...`;

  const session = new Session({
    server, table, author, projector,
    onChange: () => scheduleRender(),
  });
  try {
    await session.start();
  } catch (err) {
    root.textContent = `cannot join ${table} at ${server}: ${err instanceof Error ? err.message : err}`;
    return;
  }

  const spec = session.spec;
  root.textContent = "";

  // --- static structure ---------------------------------------------------

  const banner = el("div", "banner");
  const stage = el("div", "stage");
  const canvas = el("canvas");
  canvas.width = spec.ncols * CELL_PX;
  canvas.height = spec.nrows * CELL_PX;
  stage.appendChild(canvas);
  const side = el("div", "side");
  const controls = el("div", "controls");
  const commentPane = el("div", "comments");
  const debugPane = el("pre", "debug");
  side.append(controls, commentPane, debugPane);
  root.append(banner, stage, side);

  // brush palette
  const palette = el("div", "palette");
  if (!projector) {
    for (const entry of spec.registry) {
      const b = el("button", "swatch", entry.name);
      b.style.borderColor = `rgb(${entry.color.join(",")})`;
      b.addEventListener("click", () => session.setBrush(entry.id));
      palette.appendChild(b);
    }
    controls.appendChild(palette);
  }

  // scrub controls
  const scrubRow = el("div", "row");
  const scrubSlider = el("input") as HTMLInputElement;
  scrubSlider.type = "range";
  scrubSlider.min = "1";
  const liveBtn = el("button", undefined, "live");
  const scrubLabel = el("span", "mono");
  scrubRow.append(scrubSlider, liveBtn, scrubLabel);
  controls.appendChild(scrubRow);
  scrubSlider.addEventListener("input", () => {
    void session.scrub(Number(scrubSlider.value));
  });
  liveBtn.addEventListener("click", () => session.backToLive());

  // sun controls
  const sunRow = el("div", "row");
  const azSlider = el("input") as HTMLInputElement;
  azSlider.type = "range";
  azSlider.min = "0";
  azSlider.max = "359";
  azSlider.value = String(session.sun.azimuth_deg);
  const elSlider = el("input") as HTMLInputElement;
  elSlider.type = "range";
  elSlider.min = "1";
  elSlider.max = "90";
  elSlider.value = String(session.sun.elevation_deg);
  const sunLabel = el("span", "mono");
  const applySun = (): void =>
    session.setSun(Number(azSlider.value), Number(elSlider.value));
  azSlider.addEventListener("input", applySun);
  elSlider.addEventListener("input", applySun);
  sunRow.append(el("span", undefined, "sun"), azSlider, elSlider, sunLabel);
  controls.appendChild(sunRow);

  // overlay toggles
  const overlayRow = el("div", "row");
  for (const name of ["shadow", "access", "heatmap"] as const) {
    const label = el("label");
    const box = el("input") as HTMLInputElement;
    box.type = "checkbox";
    box.addEventListener("change", () => session.toggleOverlay(name));
    label.append(box, document.createTextNode(name));
    overlayRow.appendChild(label);
  }
  // shadows come from the in-page computation, not a worker layer
  overlayRow.appendChild(el("span", "hint", "shadows: local"));
  controls.appendChild(overlayRow);

  // comment form
  let commentTarget: { col: number; row: number } | null = null;
  const form = el("div", "row");
  const commentInput = el("input") as HTMLInputElement;
  commentInput.type = "text";
  commentInput.placeholder = "comment on the selected cell";
  const commentBtn = el("button", undefined, "post");
  const commentError = el("span", "error");
  form.append(commentInput, commentBtn, commentError);
  if (!projector) controls.appendChild(form);
  commentBtn.addEventListener("click", () => {
    if (commentTarget === null) {
      commentError.textContent = "click a cell first";
      return;
    }
    void session
      .postComment(commentInput.value, commentTarget.col, commentTarget.row)
      .then((res) => {
        commentError.textContent = res.ok ? "" : res.error ?? "";
        if (res.ok) commentInput.value = "";
      });
  });

  // painting and cell selection
  canvas.addEventListener("pointerdown", (pe) => {
    const rect = canvas.getBoundingClientRect();
    const col = Math.floor((pe.clientX - rect.left) / CELL_PX);
    const row = Math.floor((pe.clientY - rect.top) / CELL_PX);
    commentTarget = { col, row };
    if (pe.shiftKey || projector) return;
    void session.paintCell(col, row);
  });

  // --- repaint loop -------------------------------------------------------

  const ctx = canvas.getContext("2d")!;
  let renderQueued = false;
  function scheduleRender(): void {
    if (renderQueued) return;
    renderQueued = true;
    requestAnimationFrame(() => {
      renderQueued = false;
      render();
    });
  }

  function render(): void {
    banner.textContent = session.banner ?? "";
    banner.style.display = session.banner === null ? "none" : "block";

    const overlays: OverlayInputs = {};
    if (session.overlays.shadow) overlays.shadow = session.viewShadowMask();
    if (session.overlays.access) {
      const layer = session.layers.get("access_park") ?? session.layers.get("access_road");
      if (layer !== undefined && layer.kind === "scalar_grid") {
        overlays.access = layer.values as number[];
      }
    }
    if (session.overlays.heatmap) overlays.heatmap = session.heatmapCounts;
    drawGrid(ctx, spec, viewModel(spec, session.viewGrid(), overlays), CELL_PX);

    const head = session.replica.version;
    scrubSlider.max = String(Math.max(head, 1));
    if (session.live) scrubSlider.value = String(Math.max(head, 1));
    scrubLabel.textContent = session.live
      ? `live @ v${head}`
      : `v${session.viewVersion()} of ${head} (read-only)`;
    sunLabel.textContent =
      `az ${session.sun.azimuth_deg}° el ${session.sun.elevation_deg}°`;

    commentPane.textContent = "";
    for (const rc of session.rankedComments().slice(0, 30)) {
      const rowEl = el("div", "comment");
      const a = rc.comment.anchor;
      const anchorText = a.col !== undefined ? `(${a.col},${a.row})` : `(${a.lat},${a.lon})`;
      rowEl.appendChild(
        el("span", undefined, `${anchorText} ${rc.comment.author}: ${rc.comment.text}`),
      );
      const likeBtn = el("button", "like", `♥ ${rc.like_count}`);
      likeBtn.addEventListener("click", () => void session.like(rc.comment.id));
      rowEl.appendChild(likeBtn);
      commentPane.appendChild(rowEl);
    }

    const d = session.debug();
    debugPane.textContent = [
      `table    ${table}`,
      `mode     ${d.mode}${projector ? " (projector)" : ""}`,
      `version  ${d.version}`,
      `hash     ${d.state_hash}`,
      `seq      ${d.last_seq}  gaps ${d.seq_gaps}`,
      `chain    ${d.chain_ok ? "ok" : "BROKEN"}`,
      `pending  ${d.pending}  stream ${d.stream}`,
      session.overlays.access
        ? `access   ${describeAccess(session)}`
        : "",
    ].join("\n");
  }

  function describeAccess(s: Session): string {
    const layer = s.layers.get("access_park") ?? s.layers.get("access_road");
    if (layer === undefined) return "no layer yet";
    const vals = (layer.values as number[]).filter((v) => v >= 0);
    if (vals.length === 0) return "all unreachable";
    const mean = vals.reduce((a, b) => a + b, 0) / vals.length;
    return `${layer.name} v${layer.produced_from_version} mean ${fmtSeconds(mean)}`;
  }

  render();
}

void main();
