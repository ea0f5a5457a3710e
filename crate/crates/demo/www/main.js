import init, { dag_regions, go24_run, tpe_trace } from "./pkg/fot_demo.js";

const NS = "http://www.w3.org/2000/svg";
const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function el(tag, attrs, parent) {
  const e = document.createElementNS(NS, tag);
  for (const [k, v] of Object.entries(attrs)) e.setAttribute(k, v);
  if (parent) parent.appendChild(e);
  return e;
}

function clear(svg) {
  while (svg.firstChild) svg.removeChild(svg.firstChild);
}

// Regions

let dag = null;

function drawDag(selected) {
  const svg = $("dag");
  clear(svg);
  const w = +svg.getAttribute("width"), h = +svg.getAttribute("height");
  const colW = w / Math.max(dag.layers, 1);
  const perLayer = {};
  for (const n of dag.nodes) perLayer[n.layer] = (perLayer[n.layer] || 0) + 1;
  const pos = {};
  for (const n of dag.nodes) {
    pos[n.id] = { x: colW * (n.layer + 0.5), y: (h / (perLayer[n.layer] + 1)) * (n.slot + 1) };
  }
  const sel = dag.nodes.find((n) => n.id === selected);
  const color = (n) => {
    if (!sel) return "#fff";
    if (n.id === sel.id) return "#ffd166";
    if (sel.ancestors.includes(n.id)) return "#9ecbff";
    if (sel.exclusive.includes(n.id)) return "#b5e48c";
    if (sel.descendants.includes(n.id)) return "#f4a3a3";
    return "#fff";
  };
  for (const [s, t] of dag.edges) {
    el("line", { x1: pos[s].x, y1: pos[s].y, x2: pos[t].x, y2: pos[t].y, stroke: "#999" }, svg);
  }
  for (const n of dag.nodes) {
    const g = el("g", { style: "cursor:pointer" }, svg);
    el("circle", { cx: pos[n.id].x, cy: pos[n.id].y, r: 14, fill: color(n), stroke: "#333" }, g);
    el("text", { x: pos[n.id].x, y: pos[n.id].y + 4, "text-anchor": "middle" }, g).textContent = n.label;
    g.addEventListener("click", () => drawDag(n.id));
  }
}

function newDag() {
  dag = JSON.parse(dag_regions(num("dag-seed"), num("dag-n"), num("dag-p")));
  drawDag(null);
}

// Game of 24

const kindColor = { go24_expand: "#b07aa1", go24_propose: "#4e79a7", go24_value: "#f28e2b", filter_keep_top: "#59a14f", go24_answer: "#e15759" };

function runGo24() {
  const r = JSON.parse(go24_run(num("g-a"), num("g-b"), num("g-c"), num("g-d"), num("g-conc"), num("g-lat")));
  if (r.error) {
    $("g-out").textContent = r.error;
    return;
  }
  $("g-out").textContent =
    `answer: ${r.answer ?? "(none)"}   solvable: ${r.solvable}\n` +
    `ops: ${r.ops}   backend calls: ${r.backend_calls}   cache hits: ${r.cache_hits}   cost: $${r.cost_usd.toFixed(4)}\n` +
    `simulated time: ${r.wall_ms} ms   critical path: ${r.critical_path_ms} ms   one-at-a-time: ${r.sequential_ms} ms`;
  const svg = $("g-timeline");
  clear(svg);
  const w = +svg.getAttribute("width"), h = +svg.getAttribute("height");
  const end = Math.max(1, ...r.timeline.map((t) => t.finish));
  const rows = [...r.timeline].sort((a, b) => a.start - b.start || a.id.localeCompare(b.id));
  const rowH = Math.max(2, (h - 20) / rows.length);
  rows.forEach((t, i) => {
    const x = (t.start / end) * (w - 10) + 5;
    const bw = Math.max(2, ((t.finish - t.start) / end) * (w - 10));
    const rect = el("rect", { x, y: 5 + i * rowH, width: bw, height: Math.max(1, rowH - 1), fill: kindColor[t.kind] || "#bbb" }, svg);
    el("title", {}, rect).textContent = `${t.id} (${t.kind}) ${t.start}-${t.finish} ms${t.cached ? ", cached" : ""}`;
  });
  el("text", { x: w - 5, y: h - 4, "text-anchor": "end" }, svg).textContent = `${end} ms`;
}

// TPE

function runTpe() {
  const seed = num("t-seed"), n = num("t-n");
  const tpe = JSON.parse(tpe_trace(seed, n, true));
  const rnd = JSON.parse(tpe_trace(seed, n, false));
  const svg = $("t-plot");
  clear(svg);
  const w = +svg.getAttribute("width"), h = +svg.getAttribute("height");
  const all = tpe.best.concat(rnd.best).map((v) => Math.log10(Math.max(v, 1e-12)));
  const lo = Math.min(...all), hi = Math.max(...all);
  const px = (i) => 30 + (i / Math.max(n - 1, 1)) * (w - 40);
  const py = (v) => 10 + (1 - (Math.log10(Math.max(v, 1e-12)) - lo) / Math.max(hi - lo, 1e-9)) * (h - 30);
  for (const [series, color, name] of [[tpe.best, "#e15759", "TPE"], [rnd.best, "#4e79a7", "random"]]) {
    const d = series.map((v, i) => `${i ? "L" : "M"}${px(i)},${py(v)}`).join(" ");
    el("path", { d, fill: "none", stroke: color, "stroke-width": 2 }, svg);
    el("text", { x: px(n - 1) - 4, y: py(series[n - 1]) - 6, "text-anchor": "end", fill: color }, svg).textContent = name;
  }
  $("t-out").textContent =
    `TPE best x = ${Number(tpe.best_x).toFixed(4)}, f = ${tpe.best[n - 1].toExponential(2)}\n` +
    `random best x = ${Number(rnd.best_x).toFixed(4)}, f = ${rnd.best[n - 1].toExponential(2)}`;
}

await init();
$("dag-go").addEventListener("click", newDag);
$("g-go").addEventListener("click", runGo24);
$("t-go").addEventListener("click", runTpe);
newDag();
runGo24();
runTpe();
