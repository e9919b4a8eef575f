import init, { hub_sweep, hub_qsd, finite_qsd } from "./pkg/qsd_wasm.js";

const $ = (id) => document.getElementById(id);
const num = (id) => parseFloat($(id).value);
const fmt = (x) => (typeof x === "number" ? x.toPrecision(8) : String(x));

function table(head, rows) {
  const th = head.map((h) => `<th>${h}</th>`).join("");
  const body = rows.map((r) => `<tr>${r.map((c) => `<td>${fmt(c)}</td>`).join("")}</tr>`).join("");
  return `<table><tr>${th}</tr>${body}</table>`;
}

function show(el, text, render) {
  const v = JSON.parse(text);
  if (v.error) {
    el.innerHTML = `<p class="err">${v.error}</p>`;
    return null;
  }
  el.innerHTML = render(v);
  return v;
}

function certificate(c) {
  return `<p>eigen residual ${c.eigen_residual.toExponential(2)}, tail residual ${c.tail_residual.toExponential(2)},
    certificate <b>${c.pass ? "pass" : "fail"}</b></p>`;
}

function plot(rows, e0) {
  const cv = $("sw-plot");
  const g = cv.getContext("2d");
  g.clearRect(0, 0, cv.width, cv.height);
  if (!rows.length) return;
  const xs = rows.map((r) => r.alpha);
  const ys = rows.map((r) => r.e_lambda_cr).concat([e0, 1]);
  const [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  const [y0, y1] = [Math.min(...ys), Math.max(...ys)];
  const px = (x) => 40 + ((x - x0) / (x1 - x0 || 1)) * (cv.width - 60);
  const py = (y) => cv.height - 30 - ((y - y0) / (y1 - y0 || 1)) * (cv.height - 50);
  g.strokeStyle = "#999";
  g.beginPath();
  g.moveTo(px(x0), py(e0));
  g.lineTo(px(x1), py(e0));
  g.stroke();
  g.strokeStyle = "#1559b5";
  g.beginPath();
  rows.forEach((r, i) => (i ? g.lineTo : g.moveTo).call(g, px(r.alpha), py(r.e_lambda_cr)));
  g.stroke();
  g.fillStyle = "#333";
  g.fillText(`e^λ0 = ${e0.toFixed(5)}`, px(x0) + 4, py(e0) - 4);
  g.fillText("α", cv.width - 15, cv.height - 10);
}

await init();

$("sw-run").onclick = () => {
  const v = show($("sw-out"), hub_sweep(num("sw-q"), num("sw-a"), num("sw-b"), parseInt($("sw-n").value, 10)), (v) =>
    table(["α", "e^λcr (numeric)", "closed form", "regime"], v.rows.map((r) => [r.alpha, r.e_lambda_cr, r.closed_form, r.regime])),
  );
  if (v) plot(v.rows, v.e_lambda0);
};

$("hq-run").onclick = () =>
  show($("hq-out"), hub_qsd(num("hq-q"), num("hq-a"), $("hq-mode").value, 8), (v) =>
    `<p>λ = ${fmt(v.lambda)}, TV to closed form ${v.tv_to_oracle.toExponential(2)}</p>` +
    certificate(v.certificate) +
    table(["state", "weight", "closed form"], v.states.map((s, i) => [s, v.weights[i], v.oracle[i]])),
  );

$("fs-run").onclick = () =>
  show($("fs-out"), finite_qsd($("fs-spec").value), (v) =>
    `<p>λ = ${fmt(v.lambda)}, e^λ = ${fmt(Math.exp(v.lambda))}</p>` +
    certificate(v.certificate) +
    table(["state", "weight"], v.states.map((s, i) => [s, v.weights[i]])),
  );
