// Studio wiring: keyboard -> gateway, gateway -> view model -> DOM/canvas.
// All game state comes from the server; losing the socket freezes the view.

import { GatewayClient } from "./client.js";
import { actionForKey } from "./keymap.js";
import { ServerMessage } from "./protocol.js";
import { drawGrid } from "./render.js";
import {
  canSaveDemo,
  initialView,
  playbackStep,
  reduce,
  ViewModel,
} from "./viewmodel.js";

let view: ViewModel = initialView();
let client: GatewayClient;
let playbackTimer: number | null = null;

const $ = (id: string) => document.getElementById(id)!;
const canvas = $("grid") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const lossCanvas = $("loss") as HTMLCanvasElement;
const lossCtx = lossCanvas.getContext("2d")!;

function apply(msg: ServerMessage): void {
  view = reduce(view, msg);
  if (msg.type === "eval.frame" && view.playback) {
    // keep pulling at the client's pace while frames remain
    view = playbackStep(view, 1);
  }
  if (msg.type === "eval.started") {
    requestFrames();
  }
  render();
}

function requestFrames(): void {
  if (!view.playback || view.playback.done) return;
  client.send({
    type: "eval.next",
    session_id: view.sessionId,
    eval_id: view.playback.evalId,
    count: 1,
  });
  if (playbackTimer === null) {
    playbackTimer = window.setInterval(() => {
      if (!view.playback || view.playback.done) {
        if (playbackTimer !== null) window.clearInterval(playbackTimer);
        playbackTimer = null;
        return;
      }
      client.send({
        type: "eval.next",
        session_id: view.sessionId,
        eval_id: view.playback.evalId,
        count: 1,
      });
    }, 120);
  }
}

function drawLossCurve(): void {
  lossCtx.clearRect(0, 0, lossCanvas.width, lossCanvas.height);
  const job = view.job;
  if (!job || job.progress.length === 0) return;
  const losses = job.progress.map((p) => p.loss);
  const max = Math.max(...losses, 1e-9);
  lossCtx.strokeStyle = "#3f6fd6";
  lossCtx.beginPath();
  job.progress.forEach((p, i) => {
    const x = (i / Math.max(1, job.progress.length - 1)) * (lossCanvas.width - 8) + 4;
    const y = lossCanvas.height - 6 - (p.loss / max) * (lossCanvas.height - 12);
    if (i === 0) lossCtx.moveTo(x, y);
    else lossCtx.lineTo(x, y);
  });
  lossCtx.stroke();
}

function render(): void {
  if (view.grid) drawGrid(ctx, view.grid);
  $("stage").textContent = view.grid
    ? `stage ${view.grid.stage}/${view.grid.doors.length}`
    : "no session";
  $("reward").textContent = `reward ${view.cumulativeReward}`;
  $("steps").textContent = view.recording
    ? `recording: ${view.stepsRecorded} steps`
    : "";
  const banner = $("banner");
  banner.textContent = view.banner?.text ?? "";
  banner.className = view.banner ? `banner ${view.banner.kind}` : "banner";
  ($("save") as HTMLButtonElement).disabled = !canSaveDemo(view);
  ($("train") as HTMLButtonElement).disabled = view.savedDemos.length === 0;
  const job = view.job;
  $("job").textContent = job
    ? job.done
      ? job.failed
        ? `training failed: ${job.error}`
        : `trained: success ${(100 * (job.successRate ?? 0)).toFixed(0)}%`
      : `training… epoch ${job.progress.at(-1)?.epoch ?? 0}`
    : "";
  drawLossCurve();
  const demos = $("demos");
  demos.textContent = view.savedDemos.length
    ? `saved: ${view.savedDemos.join(", ")}`
    : "";
}

function newEpisode(): void {
  const seed = Math.floor(Math.random() * 2 ** 31);
  if (view.sessionId) {
    client.send({ type: "env.reset", session_id: view.sessionId, seed });
  } else {
    client.send({ type: "session.create", seed, mode: "demo-record" });
  }
}

function boot(): void {
  const url = `${location.protocol === "https:" ? "wss" : "ws"}://${location.host}/ws`;
  client = new GatewayClient(url, apply, () => {
    view = { ...view, banner: { kind: "error", text: "gateway disconnected — view frozen" } };
    render();
  });
  client.ready.then(() => newEpisode());

  document.addEventListener("keydown", (ev) => {
    if (ev.repeat || !view.sessionId || !view.grid) return;
    const action = actionForKey(ev.key);
    if (action === null) return;
    if (view.grid.terminated || view.playback) return;
    ev.preventDefault();
    client.send({ type: "env.step", session_id: view.sessionId, action });
  });

  $("new").addEventListener("click", () => newEpisode());
  $("save").addEventListener("click", () => {
    const name = (($("demo-name") as HTMLInputElement).value || "demo").trim();
    client.send({ type: "demo.save", session_id: view.sessionId, name });
  });
  $("train").addEventListener("click", () => {
    client.send({
      type: "train.start",
      demos: view.savedDemos.map((f) => f.replace(/\.jsonl$/, "")),
      mode: "O+R",
      eval_episodes: 100,
    });
  });
  $("watch").addEventListener("click", () => {
    const seed = Math.floor(Math.random() * 2 ** 31);
    client.send({ type: "eval.start", session_id: view.sessionId, episodes: 3, seed });
  });
  render();
}

boot();
