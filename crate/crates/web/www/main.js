// Built by `wasm-bindgen --target web --out-dir www/pkg`; see the README.
import init, { worked_example, context_decay, fidelity_sweep } from "./pkg/wfa_extract_web.js";

const $ = (id) => document.getElementById(id);

function matrixTable(caption, rows, digits = 3) {
  const t = document.createElement("table");
  t.createCaption().textContent = caption;
  rows.forEach((row, i) => {
    const tr = t.insertRow();
    const th = document.createElement("th");
    th.textContent = `s${i + 1}`;
    tr.appendChild(th);
    for (const x of row) tr.insertCell().textContent = Number.isInteger(x) ? x : x.toFixed(digits);
  });
  return t;
}

function showError(target, e) {
  target.replaceChildren();
  const p = document.createElement("p");
  p.className = "err";
  p.textContent = String(e.message ?? e);
  target.appendChild(p);
}

function slider(id, onChange) {
  const input = $(id);
  const out = $(`${id}-v`);
  const update = () => {
    out.textContent = input.value;
    onChange();
  };
  input.addEventListener("input", update);
  out.textContent = input.value;
}

function drawExample() {
  const target = $("ex-out");
  try {
    const m = JSON.parse(worked_example(+$("ex-beta").value, +$("ex-alpha").value, +$("ex-ratio").value));
    target.replaceChildren(
      matrixTable("counts", m.counts),
      matrixTable("distance", m.distance),
      matrixTable("filled", m.transition),
      matrixTable("enhanced", m.enhanced),
    );
  } catch (e) {
    showError(target, e);
  }
}

function drawDecay() {
  const svg = $("dc-plot");
  const c = JSON.parse(context_decay(+$("dc-alpha").value, +$("dc-len").value));
  const bars = [c.initial, ...c.positions];
  const w = +svg.getAttribute("width");
  const h = +svg.getAttribute("height");
  const pad = 24;
  const bw = (w - 2 * pad) / bars.length;
  const ns = "http://www.w3.org/2000/svg";
  svg.replaceChildren();
  bars.forEach((v, i) => {
    const r = document.createElementNS(ns, "rect");
    const bh = v * (h - 2 * pad);
    r.setAttribute("x", pad + i * bw + 1);
    r.setAttribute("y", h - pad - bh);
    r.setAttribute("width", Math.max(bw - 2, 1));
    r.setAttribute("height", bh);
    r.setAttribute("fill", i === 0 ? "#999" : "#3a6ea5");
    const title = document.createElementNS(ns, "title");
    title.textContent = `${i === 0 ? "initial" : "word " + i}: ${v.toFixed(4)}`;
    r.appendChild(title);
    svg.appendChild(r);
    const label = document.createElementNS(ns, "text");
    label.setAttribute("x", pad + i * bw + bw / 2);
    label.setAttribute("y", h - 6);
    label.setAttribute("text-anchor", "middle");
    label.setAttribute("font-size", "10");
    label.textContent = i;
    svg.appendChild(label);
  });
}

function runSweep() {
  const target = $("sw-out");
  target.textContent = "running…";
  // let the browser paint the message before the synchronous call
  setTimeout(() => {
    try {
      const t0 = performance.now();
      const s = JSON.parse(fidelity_sweep(
        BigInt($("sw-seed").value), +$("sw-k").value, +$("sw-n").value, +$("sw-alpha").value, +$("sw-beta").value,
      ));
      const table = document.createElement("table");
      table.createCaption().textContent = "consistency rate";
      const head = table.insertRow();
      for (const h of ["fill", "no context", `context α=${s.table.alpha}`]) {
        const th = document.createElement("th");
        th.textContent = h;
        head.appendChild(th);
      }
      for (const fill of ["null", "uniform", "empirical"]) {
        const tr = table.insertRow();
        tr.insertCell().textContent = fill;
        for (const context of [false, true]) {
          const cell = s.table.cells.find((c) => c.fill === fill && c.context === context);
          tr.insertCell().textContent = `${(100 * cell.consistency_rate).toFixed(1)}%`;
        }
      }
      const note = document.createElement("p");
      note.textContent = `majority-class baseline ${(100 * s.majority_baseline).toFixed(1)}%, ` +
        `${s.kmeans_iterations} k-means iterations, ${(performance.now() - t0).toFixed(0)} ms`;
      target.replaceChildren(table, note);
    } catch (e) {
      showError(target, e);
    }
  }, 10);
}

await init();
$("status").remove();
for (const id of ["ex-beta", "ex-alpha", "ex-ratio"]) slider(id, drawExample);
for (const id of ["dc-alpha", "dc-len"]) slider(id, drawDecay);
$("sw-run").addEventListener("click", runSweep);
drawExample();
drawDecay();
