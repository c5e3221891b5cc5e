// Pure view-model reducer: the entire UI state is a fold over gateway
// messages. No game logic lives here — the grid, stage, rewards and banners
// all come from (or directly mirror) server messages, so a dead gateway
// freezes the view instead of desyncing it.

import {
  EvalFrame,
  PROTOCOL_VERSION,
  RenderState,
  ServerMessage,
} from "./protocol.js";

export interface JobView {
  jobId: string;
  progress: { epoch: number; loss: number }[];
  done: boolean;
  failed: boolean;
  successRate: number | null;
  controller: string | null;
  error: string | null;
}

export interface PlaybackView {
  evalId: string;
  frames: EvalFrame[];
  cursor: number; // index into frames currently shown
  done: boolean;
}

export interface ViewModel {
  sessionId: string | null;
  grid: RenderState | null;
  cumulativeReward: number;
  recording: boolean;
  stepsRecorded: number;
  banner: { kind: "success" | "failure" | "info" | "error"; text: string } | null;
  savedDemos: string[];
  job: JobView | null;
  playback: PlaybackView | null;
  protocolMismatch: boolean;
}

export function initialView(): ViewModel {
  return {
    sessionId: null,
    grid: null,
    cumulativeReward: 0,
    recording: false,
    stepsRecorded: 0,
    banner: null,
    savedDemos: [],
    job: null,
    playback: null,
    protocolMismatch: false,
  };
}

export function reduce(view: ViewModel, msg: ServerMessage): ViewModel {
  switch (msg.type) {
    case "session.created": {
      return {
        ...initialView(),
        sessionId: msg.session_id,
        grid: msg.state,
        recording: msg.mode === "demo-record",
        savedDemos: view.savedDemos,
        protocolMismatch: msg.protocol !== PROTOCOL_VERSION,
        banner:
          msg.protocol !== PROTOCOL_VERSION
            ? {
                kind: "error",
                text: `protocol mismatch: server v${msg.protocol}, client v${PROTOCOL_VERSION}`,
              }
            : null,
      };
    }
    case "env.state": {
      const reward = msg.state.reward ?? 0;
      const fresh = msg.state.t === 0; // only a reset produces t = 0
      const cumulative = fresh ? 0 : view.cumulativeReward + reward;
      let banner = fresh ? null : view.banner;
      if (!fresh && msg.state.terminated) {
        banner =
          reward < 0
            ? {
                kind: "failure" as const,
                text: "wrong move at a door (-1) — episode discarded, reset to retry",
              }
            : msg.state.stage === msg.state.doors.length
              ? { kind: "success" as const, text: `all doors opened (+${cumulative})` }
              : { kind: "info" as const, text: "out of time — episode over" };
      }
      return {
        ...view,
        grid: msg.state,
        cumulativeReward: cumulative,
        stepsRecorded: fresh ? 0 : view.stepsRecorded + 1,
        banner,
      };
    }
    case "demo.saved":
      return {
        ...view,
        savedDemos: [...view.savedDemos, msg.file],
        banner: {
          kind: "info",
          text: `saved ${msg.file} (${msg.n_steps} steps, reward ${msg.total_reward})`,
        },
      };
    case "train.started":
      return {
        ...view,
        job: {
          jobId: msg.job_id,
          progress: [],
          done: false,
          failed: false,
          successRate: null,
          controller: null,
          error: null,
        },
      };
    case "train.progress": {
      if (!view.job || view.job.jobId !== msg.job_id) return view;
      return {
        ...view,
        job: {
          ...view.job,
          progress: [...view.job.progress, { epoch: msg.epoch, loss: msg.loss }],
        },
      };
    }
    case "train.done": {
      if (!view.job || view.job.jobId !== msg.job_id) return view;
      return {
        ...view,
        job: {
          ...view.job,
          done: true,
          failed: msg.status === "failed",
          successRate: msg.success_rate ?? null,
          controller: msg.controller ?? null,
          error: msg.error ?? null,
        },
      };
    }
    case "eval.started":
      return {
        ...view,
        playback: { evalId: msg.eval_id, frames: [], cursor: -1, done: false },
      };
    case "eval.frame": {
      if (!view.playback || view.playback.evalId !== msg.eval_id) return view;
      return {
        ...view,
        playback: { ...view.playback, frames: [...view.playback.frames, msg] },
      };
    }
    case "eval.done": {
      if (!view.playback || view.playback.evalId !== msg.eval_id) return view;
      return { ...view, playback: { ...view.playback, done: true } };
    }
    case "error":
      return { ...view, banner: { kind: "error", text: `${msg.code}: ${msg.detail}` } };
    default:
      return view; // forward compatibility: unknown message types are ignored
  }
}

// Playback stepping is view-side only: it selects which already-received
// frame is displayed, it never simulates.
export function playbackStep(view: ViewModel, delta: number): ViewModel {
  if (!view.playback || view.playback.frames.length === 0) return view;
  const cursor = Math.max(
    0,
    Math.min(view.playback.frames.length - 1, view.playback.cursor + delta),
  );
  const frame = view.playback.frames[cursor];
  return {
    ...view,
    playback: { ...view.playback, cursor },
    grid: frame.state,
  };
}

export function playbackFrame(view: ViewModel): EvalFrame | null {
  if (!view.playback || view.playback.cursor < 0) return null;
  return view.playback.frames[view.playback.cursor] ?? null;
}

export function canSaveDemo(view: ViewModel): boolean {
  return Boolean(
    view.recording &&
      view.grid &&
      view.grid.terminated &&
      view.cumulativeReward === (view.grid ? view.grid.doors.length : 0) &&
      view.banner?.kind === "success",
  );
}
