import init, { plan_planar, smooth_waypoints, score_program } from "./pkg/skillbench_demo.js";

await init();

// Planar RRT: world square [-1, 1]^2 mapped onto the canvas.
const rrt = document.getElementById("rrt");
const rctx = rrt.getContext("2d");
const SCALE = rrt.width / 2;
const toPx = ([x, y]) => [rrt.width / 2 + x * SCALE, rrt.height / 2 - y * SCALE];
const toWorld = (ev) => {
  const r = rrt.getBoundingClientRect();
  return [(ev.clientX - r.left - rrt.width / 2) / SCALE, (rrt.height / 2 - (ev.clientY - r.top)) / SCALE];
};

const scene = { obstacles: [], start: [0.6, 0.4], goal: [0.6, -0.3], result: null };
let dragFrom = null;

function drawArm(ctx, [elbow, tool], color, width) {
  ctx.strokeStyle = color;
  ctx.lineWidth = width;
  ctx.beginPath();
  ctx.moveTo(...toPx([0, 0]));
  ctx.lineTo(...toPx(elbow));
  ctx.lineTo(...toPx(tool));
  ctx.stroke();
}

function drawRrt() {
  rctx.clearRect(0, 0, rrt.width, rrt.height);
  rctx.strokeStyle = "#ddd";
  rctx.beginPath();
  rctx.arc(...toPx([0, 0]), 0.9 * SCALE, 0, 2 * Math.PI);
  rctx.stroke();
  rctx.fillStyle = "#b55";
  for (const o of scene.obstacles) {
    const [x0, y0] = toPx([o.min[0], o.max[1]]);
    const [x1, y1] = toPx([o.max[0], o.min[1]]);
    rctx.fillRect(x0, y0, x1 - x0, y1 - y0);
  }
  const res = scene.result;
  if (res && res.ok) {
    res.arm.forEach((a) => drawArm(rctx, a, "rgba(60,90,200,0.25)", 2));
    rctx.strokeStyle = "#36c";
    rctx.lineWidth = 2;
    rctx.beginPath();
    res.arm.forEach(([, tool], i) => (i ? rctx.lineTo(...toPx(tool)) : rctx.moveTo(...toPx(tool))));
    rctx.stroke();
    drawArm(rctx, res.arm[0], "#333", 4);
  }
  for (const [p, c] of [[scene.start, "#2a2"], [scene.goal, "#c80"]]) {
    rctx.fillStyle = c;
    rctx.beginPath();
    rctx.arc(...toPx(p), 5, 0, 2 * Math.PI);
    rctx.fill();
  }
}

function replan() {
  const seed = Number(document.getElementById("rrt-seed").value) || 0;
  scene.result = JSON.parse(plan_planar(JSON.stringify({ obstacles: scene.obstacles, start: scene.start, goal: scene.goal, seed })));
  document.getElementById("rrt-status").textContent = scene.result.ok
    ? `${scene.result.joints.length} waypoints`
    : `no path: ${scene.result.error}`;
  drawRrt();
}

rrt.addEventListener("mousedown", (ev) => {
  if (ev.shiftKey) dragFrom = toWorld(ev);
});
rrt.addEventListener("mouseup", (ev) => {
  const p = toWorld(ev);
  if (dragFrom) {
    scene.obstacles.push({ min: [Math.min(dragFrom[0], p[0]), Math.min(dragFrom[1], p[1])], max: [Math.max(dragFrom[0], p[0]), Math.max(dragFrom[1], p[1])] });
    dragFrom = null;
  } else if (ev.altKey) {
    scene.start = p;
  } else {
    scene.goal = p;
  }
  replan();
});
document.getElementById("rrt-seed").addEventListener("change", replan);
document.getElementById("rrt-clear").addEventListener("click", () => {
  scene.obstacles = [];
  replan();
});

// Bezier smoothing in canvas pixels.
const sm = document.getElementById("smooth");
const sctx = sm.getContext("2d");
let waypoints = [];

function drawSmooth() {
  sctx.clearRect(0, 0, sm.width, sm.height);
  sctx.fillStyle = "#c80";
  for (const [x, y] of waypoints) sctx.fillRect(x - 4, y - 4, 8, 8);
  if (waypoints.length < 2) return;
  const samples = Number(document.getElementById("smooth-samples").value) || 12;
  const res = JSON.parse(smooth_waypoints(JSON.stringify({ points: waypoints, samples })));
  if (!res.ok) return;
  sctx.strokeStyle = "#36c";
  sctx.lineWidth = 2;
  sctx.beginPath();
  res.path.forEach(([x, y], i) => (i ? sctx.lineTo(x, y) : sctx.moveTo(x, y)));
  sctx.stroke();
  sctx.strokeStyle = "#999";
  sctx.lineWidth = 1;
  for (const [x, y, h] of res.path) {
    sctx.beginPath();
    sctx.moveTo(x, y);
    sctx.lineTo(x + 10 * Math.cos(h), y + 10 * Math.sin(h));
    sctx.stroke();
  }
}

sm.addEventListener("click", (ev) => {
  const r = sm.getBoundingClientRect();
  waypoints.push([ev.clientX - r.left, ev.clientY - r.top]);
  drawSmooth();
});
document.getElementById("smooth-samples").addEventListener("change", drawSmooth);
document.getElementById("smooth-clear").addEventListener("click", () => {
  waypoints = [];
  drawSmooth();
});

// Scoring.
function rescore() {
  const res = JSON.parse(score_program(
    document.getElementById("ref").value,
    document.getElementById("pred").value,
    document.getElementById("weights").value,
  ));
  const out = document.getElementById("score-out");
  if (!res.ok) {
    out.textContent = `error: ${res.error}`;
    return;
  }
  const r = res.report;
  out.textContent = [
    `SR ${r.sr.toFixed(3)}  PR ${r.pr.toFixed(3)}  SPR ${r.spr.toFixed(3)}  PM ${r.pm.toFixed(3)}  total ${r.total.toFixed(3)}`,
    "",
    "extracted:",
    res.extracted,
    "",
    "reference graph:",
    res.reference_graph,
    "prediction graph:",
    res.prediction_graph,
    ...res.diagnostics.map((d) => `skipped [${d.span}]: ${d.reason}`),
  ].join("\n");
}
document.getElementById("score").addEventListener("click", rescore);

replan();
rescore();
