import init, { readoutStatistics, pumpCurve, odmrSpectrum, defaultModel } from "./pkg/nuclear_readout_wasm.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function showError(e) {
  $("error").textContent = e ? String(e) : "";
}

function axes(ctx, w, h, pad, xmax, ymax, xlabel) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#888";
  ctx.fillStyle = "#444";
  ctx.font = "11px system-ui";
  ctx.beginPath();
  ctx.moveTo(pad, pad / 2);
  ctx.lineTo(pad, h - pad);
  ctx.lineTo(w - pad / 2, h - pad);
  ctx.stroke();
  ctx.fillText(xlabel, w / 2 - 20, h - 8);
  ctx.fillText(ymax.toPrecision(2), 2, pad / 2 + 8);
  ctx.fillText(String(xmax), w - pad, h - pad + 14);
}

function line(ctx, xs, ys, map, colour) {
  ctx.strokeStyle = colour;
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  xs.forEach((x, i) => {
    const [px, py] = map(x, ys[i]);
    if (i === 0) ctx.moveTo(px, py);
    else ctx.lineTo(px, py);
  });
  ctx.stroke();
}

function table(id, rows) {
  $(id).innerHTML = rows.map(([k, v]) => `<tr><td>${k}</td><td>${v}</td></tr>`).join("");
}

const pct = (x) => (100 * x).toFixed(2) + " %";

let baseModel;

function drawReadout() {
  const cycles = num("cycles");
  const model = {
    ...baseModel,
    lambda_bright: baseModel.lambda_bright * num("lb-scale"),
    flip_bd: baseModel.flip_bd * num("flip-scale"),
    flip_db: baseModel.flip_db * num("flip-scale"),
  };
  const req = {
    model,
    cycles,
    classifier: { cutoff: num("cutoff"), herald_cycles: Math.min(num("herald"), cycles) },
  };
  const r = JSON.parse(readoutStatistics(JSON.stringify(req)));
  const canvas = $("hist");
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 30;
  const bins = Math.min(40, Math.max(r.pmf_up.length, r.pmf_dn.length));
  const ymax = Math.max(...r.pmf_up.slice(0, bins), ...r.pmf_dn.slice(0, bins));
  axes(ctx, w, h, pad, bins - 1, ymax, "total photons");
  const bw = (w - 1.5 * pad) / bins;
  const bar = (pmf, offset, colour) => {
    ctx.fillStyle = colour;
    for (let k = 0; k < bins; k++) {
      const v = pmf[k] || 0;
      const bh = (v / ymax) * (h - 1.5 * pad);
      ctx.fillRect(pad + k * bw + offset, h - pad - bh, bw / 2 - 1, bh);
    }
  };
  bar(r.pmf_up, 0, "#d95f02");
  bar(r.pmf_dn, bw / 2, "#1b9e77");
  const cx = pad + (req.classifier.cutoff + 1) * bw;
  ctx.strokeStyle = "#000";
  ctx.setLineDash([4, 3]);
  ctx.beginPath();
  ctx.moveTo(cx, pad / 2);
  ctx.lineTo(cx, h - pad);
  ctx.stroke();
  ctx.setLineDash([]);
  const s = r.stats;
  table("readout-table", [
    ["mean ↑ / ↓", `${s.mean_bright.toFixed(3)} / ${s.mean_dark.toFixed(3)}`],
    ["raw fidelity", pct(1 - (s.raw_misread_bright + s.raw_misread_dark) / 2)],
    ["p(↑|↓), p(↓|↑) raw", `${s.raw_misread_bright.toFixed(4)}, ${s.raw_misread_dark.toFixed(4)}`],
    ["conditional fidelity", pct(1 - (s.conditional_misread_bright + s.conditional_misread_dark) / 2)],
    ["kept ↑ / ↓", `${pct(s.conditional_kept_bright)} / ${pct(s.conditional_kept_dark)}`],
    ["best raw N", `${r.best_raw.cutoff} (${pct(r.best_raw.fidelity)})`],
    ["best conditional N", `${r.best_conditional.cutoff} (${pct(r.best_conditional.fidelity)})`],
    ["readout time", `${(cycles * 4.52).toFixed(0)} µs`],
  ]);
}

function drawPump() {
  const req = {
    optics: {
      populations: { g12: 0, g32: 1, e12: 0, e32: 0, m: 0 },
      rates: {
        pump_a1: 0,
        pump_a2: num("pump-a2"),
        decay_a1: 1e3 / 6.45,
        decay_a2: 1e3 / 10.58,
        isc_e12: 10,
        isc_e32: num("isc"),
        m_to_g12: 9,
        m_to_g32: 1,
      },
      collection_efficiency: 0.003772161,
    },
    duration_us: num("pump-dur"),
    samples: 400,
  };
  const r = JSON.parse(pumpCurve(JSON.stringify(req)));
  const canvas = $("pump");
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 30;
  const tmax = req.duration_us;
  axes(ctx, w, h, pad, tmax, 1, "time (µs)");
  const map = (t, y) => [pad + (t / tmax) * (w - 1.5 * pad), h - pad - y * (h - 1.5 * pad)];
  line(ctx, r.time_us, r.g12, map, "#7570b3");
  line(ctx, r.time_us, r.g32, map, "#d95f02");
  line(ctx, r.time_us, r.excited, map, "#e7298a");
  line(ctx, r.time_us, r.metastable, map, "#66a61e");
  table("pump-table", [
    ["pumped at 1.5 µs", r.pumped_at_1p5_us == null ? "n/a" : pct(r.pumped_at_1p5_us)],
    ["photons per 1.5 µs window", r.photons_per_window.toFixed(4)],
  ]);
}

function drawOdmr() {
  const req = {
    p_up: num("p-up"),
    physical: {
      magnetic_field: 942, hyperfine_splitting: 8, odmr_linewidth_fwhm: num("fwhm"),
      lifetime_a1: 6.45, lifetime_a2: 10.58, electron_t2_star: 0.8, nuclear_t2_star: 9.9,
      pi_pulse_fidelity: 0.967, electron_init_fidelity: 0.99, nuclear_init_fidelity: 0.93,
      zpl_wavelength: 916,
    },
    span: 15,
    step: 0.02,
  };
  const canvas = $("odmr");
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 30;
  let r;
  try {
    r = JSON.parse(odmrSpectrum(JSON.stringify(req)));
  } catch (e) {
    // A single line (p = 0 or 1) has no minor peak.
    ctx.clearRect(0, 0, w, h);
    table("odmr-table", [["peaks", String(e)]]);
    return;
  }
  const ymax = Math.max(...r.contrast);
  axes(ctx, w, h, pad, 15, ymax, "detuning (MHz)");
  const map = (f, y) => [pad + ((f + 15) / 30) * (w - 1.5 * pad), h - pad - (y / ymax) * (h - 1.5 * pad)];
  line(ctx, r.frequency_mhz, r.contrast, map, "#1b9e77");
  const p = r.peaks;
  table("odmr-table", [
    ["major peak", `${p.major.frequency.toFixed(2)} MHz`],
    ["minor peak", `${p.minor.frequency.toFixed(2)} MHz`],
    ["minor / major", p.ratio.toFixed(4)],
    ["separation", `${p.separation.toFixed(3)} MHz`],
  ]);
}

function wire(containerId, draw) {
  const inputs = $(containerId).querySelectorAll("input");
  const update = () => {
    inputs.forEach((i) => (i.nextElementSibling.value = i.value));
    try {
      draw();
      showError(null);
    } catch (e) {
      showError(e);
    }
  };
  inputs.forEach((i) => i.addEventListener("input", update));
  update();
}

await init();
baseModel = JSON.parse(defaultModel());
wire("readout-controls", drawReadout);
wire("pump-controls", drawPump);
wire("odmr-controls", drawOdmr);
