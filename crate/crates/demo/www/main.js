import init, { mask_heatmap, schedule_curves, erk_layers } from "./pkg/sparsekit_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function call(info, f) {
  try {
    info.className = "";
    return JSON.parse(f());
  } catch (e) {
    info.className = "err";
    info.textContent = String(e);
    return null;
  }
}

function drawHeatmap() {
  const info = $("hm-info");
  const h = call(info, () =>
    mask_heatmap(num("hm-rows"), num("hm-cols"), num("hm-sparsity"), $("hm-structure").value, num("hm-seed")));
  const canvas = $("hm-canvas");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (!h) return;
  const cell = Math.max(1, Math.floor(Math.min(canvas.width / h.cols, canvas.height / h.rows)));
  for (let i = 0; i < h.rows; i++) {
    for (let j = 0; j < h.cols; j++) {
      const k = i * h.cols + j;
      const shade = Math.round(255 - 200 * h.scores[k]);
      ctx.fillStyle = h.mask[k] ? `rgb(${shade}, ${shade}, 255)` : "#eee";
      ctx.fillRect(j * cell, i * cell, cell - 1, cell - 1);
    }
  }
  const kept = h.mask.reduce((a, b) => a + b, 0);
  info.textContent = `${kept} of ${h.mask.length} kept, sparsity ${h.sparsity.toFixed(4)}`;
}

function drawSchedule() {
  const info = $("sc-info");
  const end = num("sc-end");
  const c = call(info, () => schedule_curves(
    num("sc-begin"), end, num("sc-freq"), num("sc-init"), num("sc-target"), num("sc-power"), Math.round(end * 1.2)));
  const canvas = $("sc-canvas");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (!c) return;
  const last = c.steps[c.steps.length - 1] || 1;
  const x = (s) => 10 + (canvas.width - 20) * s / last;
  const y = (v) => canvas.height - 10 - (canvas.height - 20) * v;

  ctx.strokeStyle = "#ccc";
  for (const s of c.updates) {
    ctx.beginPath();
    ctx.moveTo(x(s), y(0));
    ctx.lineTo(x(s), y(1));
    ctx.stroke();
  }
  const line = (values, color, scale) => {
    ctx.strokeStyle = color;
    ctx.lineWidth = 2;
    ctx.beginPath();
    c.steps.forEach((s, i) => (i ? ctx.lineTo : ctx.moveTo).call(ctx, x(s), y(values[i] * scale)));
    ctx.stroke();
    ctx.lineWidth = 1;
  };
  line(c.sparsity, "#2a5bd7", 1);
  line(c.drop_fraction, "#d7452a", 5);
  info.textContent = `blue: sparsity; red: drop fraction (x5); grey: ${c.updates.length} mask updates`;
}

function drawErk() {
  const info = $("erk-info");
  const layers = call(info, () => erk_layers($("erk-shapes").value, num("erk-target")));
  const table = $("erk-table");
  table.innerHTML = "";
  if (!layers) return;
  const row = (cells, tag = "td") => {
    const tr = document.createElement("tr");
    for (const v of cells) {
      const td = document.createElement(tag);
      td.textContent = v;
      tr.appendChild(td);
    }
    table.appendChild(tr);
  };
  row(["shape", "size", "nonzeros", "sparsity"], "th");
  let size = 0, nz = 0;
  for (const l of layers) {
    row([l.shape.join("x"), l.size, l.nonzeros, l.sparsity.toFixed(4)]);
    size += l.size;
    nz += l.nonzeros;
  }
  row(["total", size, nz, (1 - nz / size).toFixed(4)]);
  info.textContent = "";
}

await init();
for (const [ids, draw] of [
  [["hm-rows", "hm-cols", "hm-sparsity", "hm-structure", "hm-seed"], drawHeatmap],
  [["sc-begin", "sc-end", "sc-freq", "sc-init", "sc-target", "sc-power"], drawSchedule],
  [["erk-shapes", "erk-target"], drawErk],
]) {
  for (const id of ids) $(id).addEventListener("input", draw);
  draw();
}
