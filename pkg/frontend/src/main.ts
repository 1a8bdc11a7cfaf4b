// Browser entry point: challenge display, click capture, verdicts, and
// the polled statistics table.

import { ApiClient } from "./api.js";
import { formatStatsRow } from "./format.js";
import { ClientSession } from "./session.js";

const STATS_POLL_MS = 2000;

const api = new ApiClient();
let session: ClientSession | null = null;
let profile = "v1";

const el = {
  canvas: document.getElementById("captcha") as HTMLCanvasElement,
  prompt: document.getElementById("prompt") as HTMLElement,
  banner: document.getElementById("banner") as HTMLElement,
  undo: document.getElementById("undo") as HTMLButtonElement,
  reset: document.getElementById("reset") as HTMLButtonElement,
  next: document.getElementById("next") as HTMLButtonElement,
  profile: document.getElementById("profile") as HTMLSelectElement,
  scale: document.getElementById("scale") as HTMLSelectElement,
  stats: document.getElementById("stats") as HTMLElement,
};

function banner(text: string, kind: "info" | "ok" | "bad" = "info") {
  el.banner.textContent = text;
  el.banner.className = `banner ${kind}`;
}

function renderPrompt() {
  if (!session) {
    el.prompt.replaceChildren();
    return;
  }
  const nodes = session.prompt.map((glyph, i) => {
    const span = document.createElement("span");
    span.textContent = glyph;
    span.className =
      i < session!.currentIndex ? "glyph done" : i === session!.currentIndex ? "glyph current" : "glyph";
    return span;
  });
  el.prompt.replaceChildren(...nodes);
}

function drawMarkers(ctx: CanvasRenderingContext2D) {
  if (!session) return;
  ctx.fillStyle = "rgba(255, 80, 80, 0.9)";
  ctx.strokeStyle = "white";
  for (const [i, c] of session.clicks.entries()) {
    const x = c.x * session.renderScale;
    const y = c.y * session.renderScale;
    ctx.beginPath();
    ctx.arc(x, y, 9, 0, Math.PI * 2);
    ctx.fill();
    ctx.stroke();
    ctx.fillStyle = "white";
    ctx.font = "11px sans-serif";
    ctx.textAlign = "center";
    ctx.textBaseline = "middle";
    ctx.fillText(String(i + 1), x, y);
    ctx.fillStyle = "rgba(255, 80, 80, 0.9)";
  }
}

let currentImage: HTMLImageElement | null = null;

function redraw() {
  const ctx = el.canvas.getContext("2d");
  if (!ctx || !currentImage || !session) return;
  el.canvas.width = Math.round(session.imageSize * session.renderScale);
  el.canvas.height = el.canvas.width;
  ctx.drawImage(currentImage, 0, 0, el.canvas.width, el.canvas.height);
  drawMarkers(ctx);
}

async function loadChallenge() {
  session = null;
  renderPrompt();
  banner("loading challenge…");
  try {
    const ch = await api.challenge(profile);
    const renderScale = parseFloat(el.scale.value) || 1.0;
    const s = new ClientSession({
      sessionId: ch.session_id,
      prompt: ch.prompt,
      imageSize: ch.image_size,
      renderScale,
      submit: (clicks) => api.verify(ch.session_id, clicks),
    });
    const img = new Image();
    img.onload = () => {
      currentImage = img;
      session = s;
      s.markImagePainted(); // timer starts at paint, not page load
      redraw();
      renderPrompt();
      banner(`click the ${ch.prompt.length} characters in order`);
    };
    img.onerror = () => banner("image failed to load; press New", "bad");
    img.src = ch.image;
  } catch {
    banner("service unavailable; press New to retry", "bad");
  }
}

async function finish() {
  if (!session) return;
  await session.settled();
  renderPrompt();
  if (session.phase === "solved" && session.result) {
    banner(`correct! ${session.result.elapsed_seconds.toFixed(2)} s`, "ok");
  } else if (session.phase === "failed" && session.result) {
    banner(`wrong (${session.result.elapsed_seconds.toFixed(2)} s)`, "bad");
  } else if (session.phase === "error") {
    banner("verification failed (session may have expired); press New", "bad");
  }
  await refreshStats();
  setTimeout(loadChallenge, 1500); // always a fresh image after a verdict
}

el.canvas.addEventListener("click", (ev) => {
  if (!session) return;
  const rect = el.canvas.getBoundingClientRect();
  const status = session.recordClick(ev.clientX - rect.left, ev.clientY - rect.top);
  if (status === "ignored") return;
  redraw();
  renderPrompt();
  if (status === "submitted") void finish();
});

el.undo.addEventListener("click", () => {
  if (session?.undo()) {
    redraw();
    renderPrompt();
  }
});

el.reset.addEventListener("click", () => {
  if (!session || session.phase !== "active") return;
  if (!window.confirm("Abandon this challenge? It will count as a failed attempt.")) return;
  session.abandon();
  void finish();
});

el.next.addEventListener("click", () => void loadChallenge());
el.profile.addEventListener("change", () => {
  profile = el.profile.value;
  void loadChallenge();
});
el.scale.addEventListener("change", () => void loadChallenge());

async function refreshStats() {
  try {
    const stats = await api.stats();
    const rows = Object.entries(stats.profiles).map(
      ([name, s]) =>
        `<tr><td>${name}</td><td>${formatStatsRow(s)}</td><td>${s.n_attempts}</td></tr>`,
    );
    el.stats.innerHTML =
      "<tr><th>CAPTCHA type</th><th>Success rate / Average time</th><th>Attempts</th></tr>" +
      (rows.length ? rows.join("") : `<tr><td colspan="3">no attempts yet</td></tr>`);
  } catch {
    /* keep the last table on transient poll failures */
  }
}

void loadChallenge();
void refreshStats();
setInterval(() => void refreshStats(), STATS_POLL_MS);
