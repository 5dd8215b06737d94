import init, { crossover, crossover_rows, partition, ledger } from "./pkg/dispatch_lab_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const fmt = (x, d = 2) => Number(x).toFixed(d);

function table(el, head, rows) {
  el.innerHTML =
    "<tr>" + head.map((h) => `<th>${h}</th>`).join("") + "</tr>" +
    rows.map((r) => "<tr>" + r.map((c) => `<td>${c}</td>`).join("") + "</tr>").join("");
}

function guarded(out, f) {
  return () => {
    try {
      f();
    } catch (e) {
      out.innerHTML = `<span class="err">${e}</span>`;
    }
  };
}

const renderCrossover = guarded($("cx-single"), () => {
  const t = num("cx-overhead");
  const flops = num("cx-tflops") * 1e12;
  const one = JSON.parse(crossover(t, flops, num("cx-din"), num("cx-dout")));
  $("cx-single").textContent =
    `B* = ${fmt(one.b_star_raw)} (reported ${one.b_star}); batch 1 is ${one.regime_at_batch1.replace("_", "-")}`;
  const rows = JSON.parse(crossover_rows(t, flops));
  table($("cx-table"), ["model", "operation", "d_in x d_out", "B* raw", "B*"], rows.map((r) => [
    r.model, r.operation, `${r.result.input.d_in} x ${r.result.input.d_out}`, fmt(r.result.b_star_raw), r.result.b_star,
  ]));
});

const renderPartition = guarded($("pt-verdict"), () => {
  const v = JSON.parse(partition(
    num("pt-ttft"), num("pt-ops"), num("pt-low"), num("pt-high"), num("pt-perop"), num("pt-perturb"),
  ));
  const p = v.partition;
  const range = (r) => `${fmt(r[0])} to ${fmt(r[1])}`;
  table($("pt-table"), ["component", "ms"], [
    ["dispatch", range(p.dispatch_component_ms)],
    ["framework", range(p.framework_component_ms)],
    ["total overhead", fmt(p.total_overhead_ms)],
    ["overlap residual", fmt(p.overlap_residual_ms)],
  ]);
  const s = v.sensitivity;
  const cls = s.dominance_stable ? "ok" : "bad";
  const verdict = s.dominance_stable ? "holds" : "does not hold";
  $("pt-verdict").innerHTML =
    `<span class="${cls}">Overhead dominance ${verdict} at all ${s.valid_points} valid grid points</span>` +
    ` (${s.skipped_points} skipped). Framework range ${range(s.framework_ms_range)} ms.`;
});

const renderLedger = guarded($("lg-savings"), () => {
  const layersText = $("lg-layers").value;
  const v = JSON.parse(ledger($("lg-model").value, layersText === "" ? -1 : Number(layersText)));
  if (layersText === "") $("lg-layers").placeholder = v.config.layers;
  const cats = ["rmsnorm", "matmul", "elementwise", "argmax", "other", "total", "saved_vs_unfused"];
  table($("lg-table"), ["variant", ...cats], v.ledgers.map((l) => [l.variant, ...cats.map((c) => l[c])]));
  const s = v.savings;
  $("lg-savings").textContent =
    `Fusion savings: RMSNorm ${s.rmsnorm} + gate/up/SiLU ${s.mlp_gate_up_silu} + K/V ${s.kv_proj} = ${s.total}; ` +
    `down+residual adds ${s.down_residual}.`;
});

await init();
for (const [section, render] of [["crossover", renderCrossover], ["partition", renderPartition], ["ledger", renderLedger]]) {
  $(section).addEventListener("input", render);
  render();
}
