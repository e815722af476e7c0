import init, { epsilonCurve, localStepsCurves, densityModuli } from "./pkg/lsfgd_web.js";

const SWEEP = [1, 5, 10, 25, 50];
const COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"];

const $ = (id) => document.getElementById(id);
const status = (text) => { $("status").textContent = text; };

function settings() {
  const int = (id) => Math.max(0, Math.floor(Number($(id).value)));
  return {
    qubits: int("qubits"),
    workers: int("workers"),
    localSteps: int("local-steps"),
    rounds: int("rounds"),
    eta: Number($("eta").value),
    shots: int("shots"),
    seed: int("seed"),
  };
}

function timed(label, work) {
  status(`${label}...`);
  // let the status paint before the synchronous run blocks the page
  setTimeout(() => {
    const start = performance.now();
    try {
      const note = work();
      status(`${label}: ${((performance.now() - start) / 1000).toFixed(2)}s${note ? ", " + note : ""}`);
    } catch (e) {
      status(`error: ${e.message ?? e}`);
    }
  }, 10);
}

function drawCurves(curves, labels) {
  const canvas = $("curves");
  const ctx = canvas.getContext("2d");
  const pad = { left: 60, right: 100, top: 15, bottom: 35 };
  const w = canvas.width - pad.left - pad.right;
  const h = canvas.height - pad.top - pad.bottom;
  ctx.clearRect(0, 0, canvas.width, canvas.height);

  const values = curves.flat().filter((v) => Number.isFinite(v) && v > 0);
  if (values.length === 0) return;
  const lo = Math.floor(Math.log10(Math.min(...values)));
  const hi = Math.ceil(Math.log10(Math.max(...values)));
  const top = hi > lo ? hi : lo + 1;
  const rounds = Math.max(...curves.map((c) => c.length)) - 1;
  const x = (t) => pad.left + (w * t) / Math.max(rounds, 1);
  const y = (v) => pad.top + (h * (top - Math.log10(v))) / (top - lo);

  ctx.strokeStyle = "#eee";
  ctx.fillStyle = "#555";
  ctx.font = "11px system-ui";
  for (let e = lo; e <= top; e++) {
    ctx.beginPath();
    ctx.moveTo(pad.left, y(10 ** e));
    ctx.lineTo(pad.left + w, y(10 ** e));
    ctx.stroke();
    ctx.fillText(`1e${e}`, 10, y(10 ** e) + 4);
  }
  ctx.fillText("0", pad.left, pad.top + h + 15);
  ctx.fillText(`${rounds}`, pad.left + w - 15, pad.top + h + 15);
  ctx.fillText("synchronization round", pad.left + w / 2 - 50, pad.top + h + 28);

  curves.forEach((curve, k) => {
    ctx.strokeStyle = COLORS[k % COLORS.length];
    ctx.lineWidth = 2;
    ctx.beginPath();
    let drawing = false;
    curve.forEach((v, t) => {
      if (!(Number.isFinite(v) && v > 0)) { drawing = false; return; }
      if (drawing) ctx.lineTo(x(t), y(v)); else ctx.moveTo(x(t), y(v));
      drawing = true;
    });
    ctx.stroke();
    ctx.fillStyle = ctx.strokeStyle;
    ctx.fillText(labels[k], pad.left + w + 10, pad.top + 15 * (k + 1));
  });
}

function drawMap(id, moduli, d, title) {
  const canvas = $(id);
  const ctx = canvas.getContext("2d");
  const cell = canvas.width / d;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const max = Math.max(...moduli, 1e-12);
  for (let i = 0; i < d; i++) {
    for (let j = 0; j < d; j++) {
      const shade = Math.round(255 * (1 - moduli[i * d + j] / max));
      ctx.fillStyle = `rgb(${shade}, ${shade}, 255)`;
      ctx.fillRect(j * cell, i * cell, cell, cell);
    }
  }
  ctx.fillStyle = "#000";
  ctx.font = "13px system-ui";
  ctx.fillText(title, 6, canvas.height - 8);
}

function run() {
  const s = settings();
  timed("run", () => {
    const eps = Array.from(epsilonCurve(s.qubits, s.workers, s.localSteps, s.rounds, s.eta, s.shots, s.seed));
    drawCurves([eps], [`h = ${s.localSteps}`]);
    const diverged = eps.length < s.rounds + 1 ? "diverged" : "";
    return diverged || `final epsilon ${eps[eps.length - 1].toExponential(2)}`;
  });
}

function sweep() {
  const s = settings();
  timed("sweep", () => {
    const flat = localStepsCurves(s.qubits, s.workers, new Uint32Array(SWEEP), s.rounds, s.eta, s.shots, s.seed);
    const n = s.rounds + 1;
    drawCurves(SWEEP.map((_, k) => Array.from(flat.subarray(k * n, (k + 1) * n))), SWEEP.map((h) => `h = ${h}`));
  });
}

function density() {
  const s = settings();
  timed("reconstruction", () => {
    const flat = densityModuli(s.qubits, s.workers, s.localSteps, s.rounds, s.eta, s.shots, s.seed);
    const d = 2 ** s.qubits;
    drawMap("estimate", Array.from(flat.subarray(0, d * d)), d, "|estimate|");
    drawMap("target", Array.from(flat.subarray(d * d, 2 * d * d)), d, "|GHZ target|");
    return `final epsilon ${flat[2 * d * d].toExponential(2)}`;
  });
}

await init();
$("run").addEventListener("click", run);
$("sweep").addEventListener("click", sweep);
$("density").addEventListener("click", density);
run();
