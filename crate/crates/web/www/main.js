import init, { Demo, schedule } from "./pkg/odyssey_web.js";

const $ = (id) => document.getElementById(id);
let demo = null;

function plot(query, neighbors) {
  const c = $("plot");
  const g = c.getContext("2d");
  g.clearRect(0, 0, c.width, c.height);
  const all = [query, ...neighbors.map((n) => n.values)];
  const lo = Math.min(...all.flat());
  const hi = Math.max(...all.flat());
  const colors = ["#000", "#d33", "#36c", "#393", "#c90", "#939"];
  all.forEach((s, i) => {
    g.strokeStyle = colors[i % colors.length];
    g.lineWidth = i === 0 ? 2 : 1;
    g.beginPath();
    s.forEach((v, x) => {
      const px = (x / (s.length - 1)) * (c.width - 10) + 5;
      const py = c.height - 5 - ((v - lo) / (hi - lo || 1)) * (c.height - 10);
      x === 0 ? g.moveTo(px, py) : g.lineTo(px, py);
    });
    g.stroke();
  });
}

function show(id, f) {
  try {
    $(id).textContent = f();
  } catch (e) {
    $(id).textContent = String(e);
  }
}

$("build").onclick = () => {
  $("status").textContent = "indexing…";
  setTimeout(() => {
    try {
      demo?.free();
      demo = new Demo(+$("count").value, +$("length").value, BigInt($("seed").value));
      $("status").textContent = `${demo.len()} series indexed`;
      $("search").disabled = $("run").disabled = false;
    } catch (e) {
      $("status").textContent = String(e);
    }
  });
};

$("search").onclick = () =>
  show("search-out", () => {
    const w = $("window").value;
    const r = JSON.parse(demo.search(BigInt($("qseed").value), +$("noise").value, +$("k").value, w === "" ? undefined : +w));
    plot(r.query, r.neighbors);
    const lines = r.neighbors.map((n, i) => `#${i + 1}  series ${n.id}  distance ${n.distance.toFixed(4)}`);
    const s = r.stats;
    lines.push(`initial BSF ${s.initial_bsf.toFixed(4)}, TH ${s.th}, leaves pruned ${s.leaves_pruned}, series checked ${s.series_checked}`);
    return lines.join("\n");
  });

$("run").onclick = () =>
  show("cluster-out", () => {
    const r = JSON.parse(
      demo.cluster(+$("nodes").value, +$("groups").value, $("scheduler").value, $("stealing").checked, $("sharing").checked, +$("nq").value),
    );
    const lines = [`makespan ${r.makespan} work units, ${r.stored_series} series stored`];
    r.node_query_time.forEach((t, i) => lines.push(`node ${i}: ${r.node_answered[i]} queries, busy ${t}`));
    lines.push(`steal grants ${r.steal_grants}, stolen queues ${r.stolen_queues}`);
    for (const [k, v] of Object.entries(r.messages)) lines.push(`${k} ${v}`);
    return lines.join("\n");
  });

$("plan").onclick = () =>
  show("plan-out", () => {
    const est = new Float64Array($("estimates").value.split(",").map(Number));
    const r = JSON.parse(schedule(est, +$("snodes").value, $("policy").value));
    if (r.kind === "dynamic") return `dispatch order: ${r.order.map((q) => "q" + q).join(", ")}`;
    return r.nodes.map((qs, i) => `node ${i + 1}: ${qs.map((q) => "q" + q).join(", ")}`).join("\n");
  });

await init();
$("status").textContent = "ready";
