// Page logic for the hjbac browser demo. Build the wasm package first
// (see ../build.sh); it lands in ./pkg.

import init, { Demo } from "./pkg/hjbac_demo.js";

const $ = (id) => document.getElementById(id);

let demo = null;
let radius = 1;
let errHistory = []; // [iteration, err_v, err_u]

function newSession() {
  const problem = $("problem").value;
  const seed = BigInt(Math.max(0, Number($("seed").value) | 0));
  try {
    demo = new Demo(problem, seed);
  } catch (e) {
    $("status").textContent = `error: ${e}`;
    return;
  }
  radius = demo.radius();
  errHistory = [];
  recordErrors(demo.train(0));
  drawHeatmaps();
  clearPaths();
  drawCurve();
}

function recordErrors(row) {
  // row = [iteration, err_v, err_u, critic, boundary, actor, truncation]
  errHistory.push([row[0], row[1], row[2]]);
  const fmt = (v) => (Number.isFinite(v) ? v.toPrecision(3) : "—");
  $("status").textContent =
    `iteration ${row[0]}   err_V ${fmt(row[1])}   err_u ${fmt(row[2])}` +
    `   critic ${fmt(row[3])}   actor ${fmt(row[5])}`;
}

// --- trajectory panel -------------------------------------------------------

function clearPaths() {
  const c = $("paths");
  const g = c.getContext("2d");
  g.clearRect(0, 0, c.width, c.height);
  drawDisk(g, c);
}

function drawDisk(g, c) {
  const s = c.width / 2;
  g.strokeStyle = "#7d8aa5";
  g.lineWidth = 1.5;
  g.beginPath();
  g.arc(s, s, s * 0.96, 0, 2 * Math.PI);
  g.stroke();
}

function toPixel(c, x, y) {
  const s = c.width / 2;
  return [s + (x / radius) * s * 0.96, s - (y / radius) * s * 0.96];
}

function simulate() {
  if (!demo) return;
  const stream = demo.simulate_paths(
    $("scheme").value,
    60,
    $("policy").value === "exact",
  );
  const c = $("paths");
  const g = c.getContext("2d");
  g.clearRect(0, 0, c.width, c.height);
  drawDisk(g, c);

  let i = 0;
  while (i < stream.length) {
    const n = stream[i];
    const exit = stream[i + 1] !== 0;
    i += 3;
    g.strokeStyle = exit ? "rgba(200, 60, 40, 0.55)" : "rgba(40, 90, 200, 0.45)";
    g.lineWidth = 1;
    g.beginPath();
    for (let k = 0; k < n; k++) {
      const [px, py] = toPixel(c, stream[i], stream[i + 1]);
      i += 2;
      if (k === 0) g.moveTo(px, py);
      else g.lineTo(px, py);
    }
    g.stroke();
    // Mark the stopping point of exited paths.
    if (exit) {
      const [px, py] = toPixel(c, stream[i - 2], stream[i - 1]);
      g.fillStyle = "rgba(200, 60, 40, 0.9)";
      g.beginPath();
      g.arc(px, py, 2.2, 0, 2 * Math.PI);
      g.fill();
    }
  }
}

// --- heatmap panels ---------------------------------------------------------

function drawHeatmap(canvasId, values, res, lo, hi) {
  const c = $(canvasId);
  const g = c.getContext("2d");
  const img = g.createImageData(res, res);
  const span = hi - lo || 1;
  for (let k = 0; k < res * res; k++) {
    const v = values[k];
    const o = 4 * k;
    if (Number.isNaN(v)) {
      img.data[o + 3] = 0;
      continue;
    }
    const t = Math.min(1, Math.max(0, (v - lo) / span));
    // Blue (low) through white to orange (high).
    const r = t < 0.5 ? 60 + 390 * t : 255;
    const b = t < 0.5 ? 255 : 255 - 360 * (t - 0.5);
    const gg = t < 0.5 ? 110 + 290 * t : 255 - 220 * (t - 0.5);
    img.data[o] = r;
    img.data[o + 1] = gg;
    img.data[o + 2] = b;
    img.data[o + 3] = 255;
  }
  // Paint at native resolution, then scale up smoothly.
  const tmp = document.createElement("canvas");
  tmp.width = res;
  tmp.height = res;
  tmp.getContext("2d").putImageData(img, 0, 0);
  g.clearRect(0, 0, c.width, c.height);
  g.imageSmoothingEnabled = true;
  g.drawImage(tmp, 0, 0, c.width, c.height);
  drawDisk(g, c);
}

function drawHeatmaps() {
  if (!demo) return;
  const res = 96;
  const learned = demo.value_heatmap(res, false);
  const exact = demo.value_heatmap(res, true);
  // Shared color scale from the exact map so the two panels compare.
  let lo = Infinity, hi = -Infinity;
  for (const v of exact) {
    if (!Number.isNaN(v)) { lo = Math.min(lo, v); hi = Math.max(hi, v); }
  }
  drawHeatmap("learned", learned, res, lo, hi);
  drawHeatmap("exact", exact, res, lo, hi);
}

// --- training loop ----------------------------------------------------------

let training = false;

function train() {
  if (!demo || training) return;
  training = true;
  $("train").disabled = true;
  const chunk = 15;
  let done = 0;
  const tick = () => {
    try {
      recordErrors(demo.train(chunk));
    } catch (e) {
      $("status").textContent = `training aborted: ${e}`;
      training = false;
      $("train").disabled = false;
      return;
    }
    done += chunk;
    drawCurve();
    if (done % 60 === 0 || done >= 300) drawHeatmaps();
    if (done < 300) requestAnimationFrame(tick);
    else {
      training = false;
      $("train").disabled = false;
    }
  };
  requestAnimationFrame(tick);
}

// --- error curve ------------------------------------------------------------

function drawCurve() {
  const c = $("curve");
  const g = c.getContext("2d");
  g.clearRect(0, 0, c.width, c.height);
  if (errHistory.length < 2) return;
  const maxIter = Math.max(1, errHistory[errHistory.length - 1][0]);
  const maxErr = Math.max(...errHistory.map((r) => Math.max(r[1], r[2])), 1e-9);
  const px = (it) => 30 + (it / maxIter) * (c.width - 40);
  const py = (e) => c.height - 18 - (e / maxErr) * (c.height - 30);

  g.strokeStyle = "#c7cfdd";
  g.strokeRect(30, 12, c.width - 40, c.height - 30);
  const series = [
    { idx: 1, color: "#c8501e", label: "err_V" },
    { idx: 2, color: "#1e62c8", label: "err_u" },
  ];
  for (const { idx, color, label } of series) {
    g.strokeStyle = color;
    g.lineWidth = 1.5;
    g.beginPath();
    errHistory.forEach((r, k) => {
      if (k === 0) g.moveTo(px(r[0]), py(r[idx]));
      else g.lineTo(px(r[0]), py(r[idx]));
    });
    g.stroke();
    g.fillStyle = color;
    g.fillText(label, c.width - 80, 24 + 14 * idx);
  }
  g.fillStyle = "#5a657a";
  g.fillText(`iterations: 0 … ${maxIter}`, 34, c.height - 4);
  g.fillText(maxErr.toPrecision(2), 2, 16);
}

// --- wiring -----------------------------------------------------------------

await init();
$("reset").addEventListener("click", newSession);
$("simulate").addEventListener("click", simulate);
$("train").addEventListener("click", train);
newSession();
