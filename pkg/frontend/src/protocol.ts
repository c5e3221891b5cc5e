// Wire types for the gateway protocol (version 1). One JSON object per
// WebSocket text frame; unknown fields are ignored by both sides.

export const PROTOCOL_VERSION = 1;

export interface DoorState {
  color: string;
  pos: [number, number];
  open: boolean;
}

export interface RenderState {
  width: number;
  height: number;
  cells: number[][]; // 0 empty, 1 wall, 2 door
  agent: [number, number];
  doors: DoorState[];
  stage: number;
  t: number;
  terminated: boolean;
  min_obs: number[];
  reward?: number;
}

export interface SessionCreated {
  type: "session.created";
  session_id: string;
  protocol: number;
  mode: string;
  state: RenderState;
}

export interface EnvState {
  type: "env.state";
  session_id: string;
  state: RenderState;
}

export interface DemoSaved {
  type: "demo.saved";
  file: string;
  n_steps: number;
  total_reward: number;
}

export interface TrainStarted {
  type: "train.started";
  job_id: string;
  n_demos: number;
}

export interface TrainProgress {
  type: "train.progress";
  job_id: string;
  epoch: number;
  loss: number;
}

export interface TrainDone {
  type: "train.done";
  job_id: string;
  status: "done" | "failed";
  success_rate?: number;
  mean_reward?: number;
  epochs?: number;
  env_steps?: number;
  controller?: string;
  error?: string;
}

export interface EvalStarted {
  type: "eval.started";
  eval_id: string;
  episodes: number;
}

export interface EvalFrame {
  type: "eval.frame";
  eval_id: string;
  episode: number;
  seed: number;
  t: number;
  action: number | null;
  reward: number;
  state: RenderState;
  episode_reward?: number;
}

export interface EvalDone {
  type: "eval.done";
  eval_id: string;
}

export interface WireError {
  type: "error";
  code: string;
  detail: string;
  re?: string;
}

export type ServerMessage =
  | SessionCreated
  | EnvState
  | DemoSaved
  | TrainStarted
  | TrainProgress
  | TrainDone
  | EvalStarted
  | EvalFrame
  | EvalDone
  | WireError;
