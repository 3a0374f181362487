/** DOM wiring for the layout workbench. All logic lives in the imported
 * modules; this file only moves values between them and the page. */

import { ApiClient, ApiRequestError } from "./api.js";
import { Gallery } from "./gallery.js";
import { GraphEditor, GraphValidationError } from "./graph.js";
import { InterpolationPath } from "./interpolate.js";
import { RefineConsole } from "./refine.js";
import { ATTRIBUTES, CLASSES, PREDICATES } from "./vocab.js";

const api = new ApiClient();
const editor = new GraphEditor();
const gallery = new Gallery();
const path = new InterpolationPath();
const consol = new RefineConsole();

let sceneId: string | null = null;
let abort: AbortController | null = null;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function flash(message: string, isError = false): void {
  const bar = el<HTMLDivElement>("status");
  bar.textContent = message;
  bar.className = isError ? "status error" : "status";
}

function describe(err: unknown): string {
  if (err instanceof GraphValidationError) {
    return `${err.message} (${err.field})`;
  }
  if (err instanceof ApiRequestError) {
    const field = err.detail.field ? ` [${err.detail.field}]` : "";
    return `${err.detail.message}${field}`;
  }
  return String(err);
}

// -- graph editor ----------------------------------------------------------

function fillSelect(select: HTMLSelectElement, values: readonly string[]) {
  select.innerHTML = "";
  for (const value of values) {
    const opt = document.createElement("option");
    opt.value = value;
    opt.textContent = value;
    select.appendChild(opt);
  }
}

function renderGraph(): void {
  const list = el<HTMLUListElement>("node-list");
  list.innerHTML = "";
  for (const node of editor.nodes) {
    const item = document.createElement("li");
    const attrs = node.attributes.length
      ? ` (${node.attributes.join(", ")})` : "";
    item.textContent = `#${node.id} ${node.className}${attrs}`;
    const remove = document.createElement("button");
    remove.textContent = "×";
    remove.onclick = () => {
      editor.removeNode(node.id);
      renderGraph();
    };
    item.appendChild(remove);
    list.appendChild(item);
  }
  const edges = el<HTMLUListElement>("edge-list");
  edges.innerHTML = "";
  editor.edges.forEach((edge, index) => {
    const item = document.createElement("li");
    item.textContent = `#${edge.subject} ${edge.predicate} #${edge.object}`;
    const remove = document.createElement("button");
    remove.textContent = "×";
    remove.onclick = () => {
      editor.removeEdge(index);
      renderGraph();
    };
    item.appendChild(remove);
    edges.appendChild(item);
  });
  for (const id of ["edge-subject", "edge-object"]) {
    const select = el<HTMLSelectElement>(id);
    fillSelect(select, editor.nodes.map((n) => String(n.id)));
  }
  sceneId = null; // edits invalidate the submitted scene
}

function wireEditor(): void {
  fillSelect(el("node-class"), CLASSES);
  fillSelect(el("edge-predicate"), PREDICATES);
  const attrBox = el<HTMLDivElement>("node-attrs");
  for (const attr of ATTRIBUTES) {
    const label = document.createElement("label");
    const check = document.createElement("input");
    check.type = "checkbox";
    check.value = attr;
    label.appendChild(check);
    label.appendChild(document.createTextNode(attr));
    attrBox.appendChild(label);
  }
  el<HTMLButtonElement>("add-node").onclick = () => {
    const attrs = [...attrBox.querySelectorAll<HTMLInputElement>("input")]
      .filter((c) => c.checked)
      .map((c) => c.value);
    try {
      editor.addNode(el<HTMLSelectElement>("node-class").value, attrs);
      renderGraph();
      flash("node added");
    } catch (err) {
      flash(describe(err), true);
    }
  };
  el<HTMLButtonElement>("add-edge").onclick = () => {
    try {
      editor.addEdge(
        Number(el<HTMLSelectElement>("edge-subject").value),
        el<HTMLSelectElement>("edge-predicate").value,
        Number(el<HTMLSelectElement>("edge-object").value),
      );
      renderGraph();
      flash("edge added");
    } catch (err) {
      flash(describe(err), true);
    }
  };
}

async function ensureScene(): Promise<string> {
  if (sceneId) return sceneId;
  const { id } = await api.submitScene(editor.toScene());
  sceneId = id;
  return id;
}

// -- gallery ---------------------------------------------------------------

function renderGallery(): void {
  const grid = el<HTMLDivElement>("gallery");
  grid.innerHTML = "";
  for (const card of gallery.cards) {
    const tile = document.createElement("div");
    tile.className = "card";
    const badge = document.createElement("span");
    badge.className = "badge";
    badge.textContent = card.accuracyBadge;
    tile.appendChild(badge);
    tile.onclick = () => openCard(card.index);
    grid.appendChild(tile);
  }
}

async function openCard(index: number): Promise<void> {
  try {
    gallery.select(index);
    const id = await ensureScene();
    const render = await api.render(id, index);
    el<HTMLDivElement>("viewer-svg").innerHTML = render.svg;
    el<HTMLAnchorElement>("viewer-depth").setAttribute("href", render.depth);
    el<HTMLAnchorElement>("viewer-sem").setAttribute("href", render.semantic);
  } catch (err) {
    flash(describe(err), true);
  }
}

function wireGallery(): void {
  el<HTMLButtonElement>("sample").onclick = async () => {
    try {
      const id = await ensureScene();
      const n = Number(el<HTMLInputElement>("sample-n").value) || 4;
      const seed = Number(el<HTMLInputElement>("sample-seed").value) || 0;
      gallery.load(await api.sample(id, n, seed));
      renderGallery();
      flash(`sampled ${gallery.cards.length} layouts (seed ${seed})`);
    } catch (err) {
      flash(describe(err), true);
    }
  };
  el<HTMLButtonElement>("heatmap-toggle").onclick = async () => {
    const overlay = el<HTMLPreElement>("heatmap");
    if (gallery.toggleHeatmap()) {
      try {
        const id = await ensureScene();
        const doc = await api.heatmap(id, 2000, 16);
        overlay.textContent = JSON.stringify(doc.classes, null, 1);
        overlay.hidden = false;
      } catch (err) {
        flash(describe(err), true);
      }
    } else {
      overlay.hidden = true;
    }
  };
}

// -- interpolation ---------------------------------------------------------

function wireInterpolation(): void {
  const slider = el<HTMLInputElement>("interp-t");
  el<HTMLButtonElement>("interpolate").onclick = async () => {
    try {
      const id = await ensureScene();
      path.load(await api.interpolate(
        id,
        Number(el<HTMLInputElement>("interp-seed-a").value) || 0,
        Number(el<HTMLInputElement>("interp-seed-b").value) || 1,
        Number(el<HTMLInputElement>("interp-steps").value) || 8,
      ));
      slider.disabled = false;
      showInterp(Number(slider.value));
    } catch (err) {
      flash(describe(err), true);
    }
  };
  slider.oninput = () => showInterp(Number(slider.value));
}

function showInterp(position: number): void {
  if (!path.loaded) return;
  const { t, layout } = path.at(position);
  el<HTMLDivElement>("interp-info").textContent =
    `t=${t.toFixed(3)} · ${layout.length} objects`;
}

// -- refinement console ----------------------------------------------------

function renderLossChart(): void {
  const chart = el<HTMLCanvasElement>("loss-chart");
  const ctx = chart.getContext("2d");
  if (!ctx) return;
  ctx.clearRect(0, 0, chart.width, chart.height);
  const series = consol.lossSeries;
  if (!series.length) return;
  const max = Math.max(...series.map((p) => p.total));
  ctx.beginPath();
  series.forEach((p, i) => {
    const x = (i / Math.max(series.length - 1, 1)) * chart.width;
    const y = chart.height - (p.total / max) * chart.height;
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.strokeStyle = "#e8b43c";
  ctx.stroke();
}

function wireRefinement(): void {
  el<HTMLButtonElement>("refine-start").onclick = async () => {
    try {
      const id = await ensureScene();
      const render = await api.render(id);
      const { job_id } = await api.startRefine(
        id, render.depth, render.semantic,
        { steps: Number(el<HTMLInputElement>("refine-steps").value) || 60 },
        0,
      );
      consol.start(job_id);
      abort = new AbortController();
      flash(`refinement job ${job_id} started`);
      await api.streamJob(job_id, (line) => {
        consol.feed(line);
        renderLossChart();
      }, abort.signal);
      flash(`refinement ${consol.state}`);
    } catch (err) {
      if (consol.state !== "cancelled") flash(describe(err), true);
    }
  };
  el<HTMLButtonElement>("refine-cancel").onclick = () => {
    consol.cancel();
    abort?.abort();
    renderLossChart(); // the last polled state stays on screen
    flash("refinement cancelled");
  };
}

// -- checkpoints -----------------------------------------------------------

async function wireCheckpoints(): Promise<void> {
  const select = el<HTMLSelectElement>("checkpoint");
  try {
    const doc = await api.checkpoints();
    fillSelect(select, doc.checkpoints.map((c) => c.id));
    if (doc.loaded) select.value = doc.loaded;
  } catch (err) {
    flash(describe(err), true);
  }
  el<HTMLButtonElement>("checkpoint-load").onclick = async () => {
    try {
      await api.loadCheckpoint(select.value);
      flash(`checkpoint ${select.value} loaded`);
    } catch (err) {
      flash(describe(err), true);
    }
  };
}

wireEditor();
wireGallery();
wireInterpolation();
wireRefinement();
void wireCheckpoints();
renderGraph();
