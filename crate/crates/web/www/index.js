import init, { Phantom, lrocExplorer } from "./pkg/lesion_cad_web.js";

const $ = (id) => document.getElementById(id);
let phantom = null;

function showError(e) {
  $("error").textContent = e ? String(e.message ?? e) : "";
}

function grey(ctx, w, h, values, scale) {
  const img = ctx.createImageData(w, h);
  for (let i = 0; i < w * h; i++) {
    const v = Math.max(0, Math.min(255, Math.round(values[i] * scale)));
    img.data.set([v, v, v, 255], i * 4);
  }
  return img;
}

function paint(canvas, w, h, img, boxes) {
  const off = new OffscreenCanvas(w, h);
  off.getContext("2d").putImageData(img, 0, 0);
  const ctx = canvas.getContext("2d");
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
  const sx = canvas.width / w, sy = canvas.height / h;
  for (const [b, colour, width] of boxes) {
    ctx.strokeStyle = colour;
    ctx.lineWidth = width;
    ctx.strokeRect(b.x0 * sx, b.y0 * sy, (b.x1 - b.x0 + 1) * sx, (b.y1 - b.y0 + 1) * sy);
  }
}

function drawSlice() {
  if (!phantom) return;
  const thr = +$("thr").value;
  $("zV").textContent = $("z").value;
  $("thrV").textContent = thr.toFixed(2);
  let v;
  try {
    v = JSON.parse(phantom.slice(+$("z").value, +$("seq").value, thr));
    showError(null);
  } catch (e) {
    return showError(e);
  }
  const ctx = $("img").getContext("2d");
  const boxes = [
    ...v.truth.map((b) => [b, "#0c0", 1]),
    ...v.boxes.map((b) => [b, b.confidence >= thr ? "#fa0" : "rgba(255,170,0,0.25)", 1]),
  ];
  if (v.fused) boxes.push([v.fused, "#f0f", 2]);
  paint($("img"), v.width, v.height, grey(ctx, v.width, v.height, v.pixels, 255), boxes);
  const vctx = $("votes").getContext("2d");
  const scale = v.max_vote > 0 ? 255 / v.max_vote : 0;
  paint($("votes"), v.width, v.height, grey(vctx, v.width, v.height, v.votes, scale), v.fused ? [[v.fused, "#f0f", 2]] : []);
  $("stats").textContent =
    `${v.class}, slice ${v.z}/${v.depth - 1}: ${v.boxes.length} candidates, ${v.kept} kept, ` +
    (v.fused ? `fused ROI confidence ${v.fused.confidence.toFixed(3)} from ${v.contributors}` : "no fused ROI");
}

function generate() {
  $("noiseV").textContent = (+$("noise").value).toFixed(2);
  try {
    phantom?.free();
    phantom = new Phantom(+$("cls").value, +$("seed").value, +$("noise").value);
    $("z").value = phantom.lesionSlice();
    showError(null);
  } catch (e) {
    phantom = null;
    return showError(e);
  }
  drawSlice();
}

function drawLroc() {
  $("sepV").textContent = (+$("sep").value).toFixed(1);
  $("missV").textContent = (+$("miss").value).toFixed(2);
  let v;
  try {
    v = JSON.parse(lrocExplorer(+$("npos").value, +$("nneg").value, +$("sep").value, +$("miss").value, 7));
    showError(null);
  } catch (e) {
    return showError(e);
  }
  const c = $("lroc"), ctx = c.getContext("2d");
  const W = c.width, H = c.height;
  ctx.clearRect(0, 0, W, H);
  ctx.strokeStyle = "#ccc";
  ctx.beginPath(); ctx.moveTo(0, H); ctx.lineTo(W, 0); ctx.stroke();
  ctx.strokeStyle = "#c00";
  ctx.setLineDash([4, 4]);
  ctx.beginPath(); ctx.moveTo(0, H * (1 - v.max_sensitivity)); ctx.lineTo(W, H * (1 - v.max_sensitivity)); ctx.stroke();
  ctx.setLineDash([]);
  ctx.strokeStyle = "#06c";
  ctx.lineWidth = 2;
  ctx.beginPath();
  v.points.forEach(([f, t], i) => (i ? ctx.lineTo(f * W, H * (1 - t)) : ctx.moveTo(f * W, H * (1 - t))));
  ctx.stroke();
  ctx.lineWidth = 1;
  $("lrocStats").textContent =
    `area ${v.area.toFixed(3)}, ceiling ${v.max_sensitivity.toFixed(3)}, sensitivity at 80% specificity ${v.sens_at_80_spec.toFixed(3)}`;
}

await init();
$("gen").onclick = generate;
for (const id of ["cls", "seed", "noise"]) $(id).onchange = generate;
$("noise").oninput = () => ($("noiseV").textContent = (+$("noise").value).toFixed(2));
for (const id of ["seq", "z", "thr"]) $(id).oninput = drawSlice;
for (const id of ["sep", "miss", "npos", "nneg"]) $(id).oninput = drawLroc;
generate();
drawLroc();
