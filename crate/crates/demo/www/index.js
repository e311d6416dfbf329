import init, { normalize, alignPhones, exploreCtc } from "./pkg/childphone_demo.js";

const $ = (id) => document.getElementById(id);

function esc(s) {
  return String(s).replace(/[&<>]/g, (c) => ({ "&": "&amp;", "<": "&lt;", ">": "&gt;" })[c]);
}

function guard(target, f) {
  try {
    target.innerHTML = f();
  } catch (e) {
    target.innerHTML = `<p class="err">${esc(e.message ?? e)}</p>`;
  }
}

function renderNormalize() {
  guard($("norm-out"), () => {
    const phones = JSON.parse(normalize($("ipa").value));
    const rows = phones.map((p) => {
      const diff = p.diff.map((d) => `${d.feature} ${d.input}&rarr;${d.target}`).join(", ");
      return `<tr><td>${esc(p.input)}</td><td>${esc(p.target)}</td><td>${p.distance}</td><td>${esc(diff || "none")}</td></tr>`;
    });
    return `<table><tr><th>input</th><th>target</th><th>distance</th><th>features changed</th></tr>${rows.join("")}</table>`;
  });
}

function renderAlign() {
  guard($("align-out"), () => {
    const a = JSON.parse(alignPhones($("ref").value, $("hyp").value));
    const top = a.ops.map((o) => `<td class="${o.op}">${esc(o.reference ?? "–")}</td>`).join("");
    const bottom = a.ops.map((o) => `<td class="${o.op}">${esc(o.hypothesis ?? "–")}</td>`).join("");
    return `<table><tr><th>ref</th>${top}</tr><tr><th>hyp</th>${bottom}</tr></table>
      <p>N=${a.n} S=${a.substitutions} D=${a.deletions} I=${a.insertions}, PER ${a.per.toFixed(1)}%</p>`;
  });
}

function renderCtc() {
  $("ctx-v").textContent = $("ctx").value;
  $("sharp-v").textContent = $("sharp").value;
  guard($("ctc-out"), () => {
    const v = JSON.parse(
      exploreCtc($("labels").value, +$("start").value, +$("end").value, +$("file").value, +$("ctx").value, +$("sharp").value),
    );
    const head = v.frames.map((f) => `<th class="${f.in_mask ? "" : "out"}">${f.frame}</th>`).join("");
    const argmax = v.frames.map((f) => `<td class="${f.in_mask ? "" : "out"}">${esc(f.argmax)}</td>`).join("");
    const rows = v.columns.map((c, i) => {
      const cells = v.frames.map((f) => {
        if (!f.in_mask) return `<td class="cell out"></td>`;
        const g = Math.round(255 * (1 - f.occupancy[i]));
        return `<td class="cell" title="${f.occupancy[i].toFixed(3)}" style="background: rgb(${g},${g},255)"></td>`;
      });
      return `<tr><th>${esc(c)}</th>${cells.join("")}</tr>`;
    });
    return `<p>window ${v.window_start_ms}&ndash;${v.window_end_ms} ms, mask frames [${v.mask_start}, ${v.mask_end}),
      loss ${v.loss.toFixed(4)}, greedy decode <code>${esc(v.decoded.join(" ") || "(empty)")}</code></p>
      <table><tr><th>frame</th>${head}</tr><tr><th>argmax</th>${argmax}</tr>${rows.join("")}</table>`;
  });
}

await init();
for (const id of ["ipa"]) $(id).addEventListener("input", renderNormalize);
for (const id of ["ref", "hyp"]) $(id).addEventListener("input", renderAlign);
for (const id of ["labels", "start", "end", "file", "ctx", "sharp"]) $(id).addEventListener("input", renderCtc);
renderNormalize();
renderAlign();
renderCtc();
