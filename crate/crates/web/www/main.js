import init, { layout, inspect, auction, compare } from "./pkg/pstrust_web.js";

const $ = (id) => document.getElementById(id);
const palette = ["#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#42d4f4",
  "#f032e6", "#9a6324", "#469990", "#808000", "#000075", "#a9a9a9"];

let current = null;

function call(fn) {
  $("error").textContent = "";
  try {
    return JSON.parse(fn());
  } catch (e) {
    $("error").textContent = String(e.message ?? e);
    return null;
  }
}

function values(form) {
  return Object.fromEntries(new FormData(form).entries());
}

function draw(view) {
  const c = $("arena");
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  const [w, h] = view.arena;
  const sx = (x) => 10 + (x / w) * (c.width - 20);
  const sy = (y) => 10 + (y / h) * (c.height - 20);
  const colour = [];
  view.groups.forEach((g, i) => g.members.forEach((m) => (colour[m] = palette[i % palette.length])));

  ctx.strokeStyle = "#ccc";
  for (const [a, b] of view.edges) {
    ctx.beginPath();
    ctx.moveTo(sx(view.buyers[a].x), sy(view.buyers[a].y));
    ctx.lineTo(sx(view.buyers[b].x), sy(view.buyers[b].y));
    ctx.stroke();
  }
  view.buyers.forEach((b, i) => {
    ctx.fillStyle = colour[i] ?? "#000";
    ctx.beginPath();
    ctx.arc(sx(b.x), sy(b.y), 7, 0, 2 * Math.PI);
    ctx.fill();
    ctx.fillStyle = "#000";
    ctx.font = "10px sans-serif";
    ctx.fillText(`${i}:${b.bid}`, sx(b.x) + 8, sy(b.y) - 6);
  });
}

function show(view) {
  if (!view) return;
  current = view;
  $("instance").value = view.instance;
  draw(view);
  const rows = view.groups.map((g, i) =>
    `<tr><td style="color:${palette[i % palette.length]}">&#9679; ${g.id}</td>` +
    `<td>${g.members.join(", ")}</td><td>${g.bid}</td></tr>`);
  $("groups").innerHTML =
    `<tr><th>group</th><th>buyers</th><th>bid</th></tr>${rows.join("")}` +
    `<tr><th>sellers</th><td colspan="2">${view.sellers.join(", ")}</td></tr>`;
  $("auction-out").textContent = "";
}

function renderAuction(out) {
  const r = out.result;
  const lines = [];
  if (r.winning_sellers.length === 0) {
    lines.push("no trade");
  } else {
    lines.push(`winning sellers  ${r.winning_sellers.join(", ")}  paid ${r.selling_price} each`);
    lines.push(`winning groups   ${r.winning_groups.join(", ")}  charged ${r.buying_group_price} each`);
    lines.push(`winning buyers   ${r.winning_buyers.join(", ")}`);
  }
  lines.push(`matches plaintext oracle: ${out.oracle_match ? "yes" : "NO"}`);
  lines.push("");
  lines.push(`seller order ${out.seller_order.join(" ")}`);
  lines.push(`group order  ${out.group_order.join(" ")}`);
  out.reveals.forEach((v, i) =>
    lines.push(`round ${i + 1}: agent saw seller slot ${v.alpha}, group slot ${v.beta}, comparison ${v.r_max}`));
  lines.push("");
  lines.push(`rounds ${out.rounds}, products ${out.product_calls}, frames ${out.frames}, bytes ${out.bytes}`);
  lines.push("messages seen by the auctioneer:");
  for (const [name, n] of Object.entries(out.messages)) lines.push(`  ${name.padEnd(14)} ${n}`);
  return lines.join("\n");
}

function renderCompare(v, bits) {
  const short = (h) => (h.length > 18 ? `${h.slice(0, 8)}..${h.slice(-8)}` : h);
  const lines = [];
  lines.push(`a bits (msb first): ${v.a_bits.map(short).join(" ")}`);
  lines.push(`b bits (msb first): ${v.b_bits.map(short).join(" ")}`);
  lines.push("");
  lines.push(`min = ${v.min}  (flag ${v.min_flag}: picked ${v.min_flag ? "b" : "a"})`);
  lines.push(`max = ${v.max}  (flag ${v.max_flag}: picked ${v.max_flag ? "b" : "a"})`);
  lines.push(`a + b mod 2^${bits} = ${v.sum}`);
  lines.push("");
  lines.push(`encrypted products per comparison ${v.products_per_comparison}, in total ${v.products_total}`);
  lines.push(`masked operand pairs decrypted by the key holder ${v.masked_pairs_seen}`);
  return lines.join("\n");
}

await init();

$("layout-form").addEventListener("submit", (e) => {
  e.preventDefault();
  const f = values(e.target);
  show(call(() => layout(Number(f.sellers), Number(f.buyers), BigInt(f.seed), Number(f.protection))));
});

$("reload").addEventListener("click", () => show(call(() => inspect($("instance").value))));

$("auction-form").addEventListener("submit", (e) => {
  e.preventDefault();
  if (!current) return;
  const f = values(e.target);
  $("auction-out").textContent = "running...";
  setTimeout(() => {
    const out = call(() => auction($("instance").value, Number(f.key_bits), BigInt(f.seed)));
    $("auction-out").textContent = out ? renderAuction(out) : "";
  }, 0);
});

$("compare-form").addEventListener("submit", (e) => {
  e.preventDefault();
  const f = values(e.target);
  const v = call(() => compare(BigInt(f.a), BigInt(f.b), Number(f.bits), 128, BigInt(f.seed)));
  $("compare-out").textContent = v ? renderCompare(v, f.bits) : "";
});

$("layout-form").requestSubmit();
