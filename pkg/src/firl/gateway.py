"""WebSocket gateway: environment sessions, demo recording, training jobs,
evaluation streaming, and static serving for the browser studio.

The protocol is line-oriented JSON: each WebSocket text frame carries one
message object with a `type` field and an optional client correlation `id`
(echoed back as `re`). Unknown fields are ignored; unknown types produce a
structured error reply, never a dropped connection. See docs/protocol.md
for the full schema; PROTOCOL_VERSION is bumped on breaking changes.

Training jobs run on a worker thread (one in-flight job per server) and
publish progress events through the session's outgoing queue; environment
stepping stays responsive while a job runs.
"""
from __future__ import annotations

import asyncio
import dataclasses
import json
import re
import threading
import uuid
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from starlette.staticfiles import StaticFiles

from . import controller as ctl
from . import demos as dm
from . import gridworld as gw
from . import nnet
from .errors import DemoError, FirlError
from .pool import PolicyPool, load_pool

PROTOCOL_VERSION = 1

_NAME_RE = re.compile(r"^[A-Za-z0-9_.-]{1,64}$")


class GatewayState:
    """Server-wide state shared by every connection."""

    def __init__(self, pool: Optional[PolicyPool], demos_dir: Path, out_dir: Path,
                 task: gw.TaskConfig):
        self.pool = pool
        self.demos_dir = demos_dir
        self.out_dir = out_dir
        self.task = task
        self.sessions: dict[str, Session] = {}
        self.jobs: dict[str, dict] = {}
        self.controllers: dict[str, ctl.ControllerPolicy] = {}
        self.latest_controller: Optional[str] = None
        self.job_lock = threading.Lock()
        self.running_job: Optional[str] = None


class Session:
    def __init__(self, session_id: str, task: gw.TaskConfig, seed: int, mode: str):
        self.session_id = session_id
        self.task = task
        self.mode = mode
        self.env = gw.GridWorld(task)
        self.seed = seed
        self.buffer: list[dm.DemoStep] = []
        self.last_result = self.env.reset(seed)
        self.evals: dict[str, object] = {}

    def reset(self, seed: int):
        self.seed = seed
        self.buffer.clear()
        self.last_result = self.env.reset(seed)
        return self.last_result

    def step(self, action: int):
        prev = self.last_result
        result = self.env.step(action)
        self.buffer.append(dm.DemoStep(
            raw_obs=prev.raw_obs.copy(), min_obs=prev.min_obs.copy(),
            action=int(action), reward=int(result.reward), t=len(self.buffer) + 1))
        self.last_result = result
        return result

    def trajectory(self, source: str) -> dm.Trajectory:
        return dm.Trajectory(steps=list(self.buffer), seed=self.seed,
                             task=self.task, source=source)


def _err(code: str, detail: str, msg_id=None) -> dict:
    out = {"type": "error", "code": code, "detail": detail}
    if msg_id is not None:
        out["re"] = msg_id
    return out


def _eval_frames(agent, task: gw.TaskConfig, episodes: int, seed: int):
    """One frame per environment step (plus a reset frame per episode)."""
    env = gw.GridWorld(task)
    ep_seeds = np.random.SeedSequence(seed).generate_state(episodes, dtype=np.uint64)
    for ep, ep_seed in enumerate(ep_seeds):
        r = env.reset(int(ep_seed))
        total = 0
        yield {"episode": ep, "seed": int(ep_seed), "t": 0, "action": None,
               "reward": 0, "state": gw.render_dict(env.state, r)}
        while not r.terminated:
            a = agent.act(env.state)
            r = env.step(a)
            total += r.reward
            frame = {"episode": ep, "seed": int(ep_seed), "t": env.state.step_count,
                     "action": int(a), "reward": int(r.reward),
                     "state": gw.render_dict(env.state, r)}
            if r.terminated:
                frame["episode_reward"] = int(total)
            yield frame


def create_app(pool_dir=None, demos_dir="demos", static_dir=None, out_dir=None,
               task: Optional[gw.TaskConfig] = None) -> FastAPI:
    demos_path = Path(demos_dir)
    demos_path.mkdir(parents=True, exist_ok=True)
    out_path = Path(out_dir) if out_dir else demos_path.parent / "gateway-out"
    out_path.mkdir(parents=True, exist_ok=True)
    pool = load_pool(pool_dir) if pool_dir else None
    gs = GatewayState(pool, demos_path, out_path, task or gw.TaskConfig())

    app = FastAPI()
    app.state.gateway = gs

    @app.get("/healthz")
    def healthz():
        return {"ok": True, "protocol": PROTOCOL_VERSION,
                "pool": gs.pool.labels if gs.pool else None}

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        loop = asyncio.get_running_loop()
        outbox: asyncio.Queue = asyncio.Queue()

        async def sender():
            while True:
                msg = await outbox.get()
                if msg is None:
                    return
                await ws.send_text(json.dumps(msg))

        send_task = asyncio.create_task(sender())

        def post_threadsafe(msg: dict):
            loop.call_soon_threadsafe(outbox.put_nowait, msg)

        try:
            while True:
                raw = await ws.receive_text()
                for reply in handle_message(gs, raw, post_threadsafe):
                    await outbox.put(reply)
        except WebSocketDisconnect:
            pass
        finally:
            await outbox.put(None)
            await send_task

    if static_dir:
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="studio")
    return app


def handle_message(gs: GatewayState, raw: str, post) -> list[dict]:
    """Dispatch one wire message; returns immediate replies. Deferred events
    (train.progress, train.done) go through `post`."""
    try:
        msg = json.loads(raw)
        if not isinstance(msg, dict):
            raise ValueError("message must be a JSON object")
    except (json.JSONDecodeError, ValueError) as e:
        return [_err("BAD_MESSAGE", f"unparseable message: {e}")]
    msg_id = msg.get("id")
    mtype = msg.get("type")
    try:
        handler = _HANDLERS.get(mtype)
        if handler is None:
            return [_err("UNKNOWN_TYPE", f"unknown message type {mtype!r}", msg_id)]
        replies = handler(gs, msg, post)
        for r in replies:
            if msg_id is not None and "re" not in r:
                r["re"] = msg_id
        return replies
    except _SessionError as e:
        return [_err("UNKNOWN_SESSION", f"no session {e.sid!r}", msg_id)]
    except FirlError as e:
        return [_err(_ERROR_CODES.get(type(e).__name__, "INTERNAL"), str(e), msg_id)]


_ERROR_CODES = {
    "InvalidActionError": "INVALID_ACTION",
    "DemoError": "DEMO_INVALID",
    "ConfigError": "BAD_CONFIG",
    "CheckpointError": "BAD_CHECKPOINT",
    "TrainingError": "TRAINING_FAILED",
}


def _require_session(gs: GatewayState, msg: dict) -> Session:
    sid = msg.get("session_id")
    session = gs.sessions.get(sid)
    if session is None:
        raise _SessionError(sid)
    return session


class _SessionError(Exception):
    def __init__(self, sid):
        self.sid = sid


def _h_session_create(gs: GatewayState, msg: dict, post) -> list[dict]:
    seed = int(msg.get("seed", 0))
    task = gw.TaskConfig.from_dict(msg["task"]) if msg.get("task") else gs.task
    mode = msg.get("mode", "demo-record")
    session = Session(uuid.uuid4().hex[:12], task, seed, mode)
    gs.sessions[session.session_id] = session
    return [{"type": "session.created", "session_id": session.session_id,
             "protocol": PROTOCOL_VERSION, "mode": mode,
             "state": gw.render_dict(session.env.state, session.last_result)}]


def _h_env_step(gs: GatewayState, msg: dict, post) -> list[dict]:
    session = _require_session(gs, msg)
    if session.env.state.terminated:
        return [_err("EPISODE_DONE", "episode over; env.reset to continue")]
    result = session.step(int(msg.get("action", -1)))
    return [{"type": "env.state", "session_id": session.session_id,
             "state": gw.render_dict(session.env.state, result)}]


def _h_env_reset(gs: GatewayState, msg: dict, post) -> list[dict]:
    session = _require_session(gs, msg)
    result = session.reset(int(msg.get("seed", session.seed)))
    return [{"type": "env.state", "session_id": session.session_id,
             "state": gw.render_dict(session.env.state, result)}]


def _h_state_query(gs: GatewayState, msg: dict, post) -> list[dict]:
    session = _require_session(gs, msg)
    return [{"type": "env.state", "session_id": session.session_id,
             "state": gw.render_dict(session.env.state, session.last_result)}]


def _h_demo_save(gs: GatewayState, msg: dict, post) -> list[dict]:
    session = _require_session(gs, msg)
    name = str(msg.get("name", ""))
    if not _NAME_RE.match(name):
        return [_err("BAD_NAME", "demo name must match [A-Za-z0-9_.-]{1,64}")]
    if not session.buffer:
        return [_err("DEMO_EMPTY", "no steps recorded in this session")]
    if any(s.reward < 0 for s in session.buffer):
        return [_err("DEMO_NEGATIVE_REWARD",
                     "episode contains a -1 step; demos must be penalty-free")]
    if not session.env.state.terminated:
        return [_err("DEMO_INCOMPLETE", "episode has not terminated yet")]
    traj = session.trajectory(source="human")
    path = gs.demos_dir / f"{name}.jsonl"
    dm.write_demos(dm.DemoSet([traj]), path)
    try:
        dm.ingest(path)  # full validation incl. bit-exact replay
    except DemoError as e:
        path.unlink(missing_ok=True)
        return [_err("DEMO_INVALID", str(e))]
    return [{"type": "demo.saved", "file": path.name, "n_steps": traj.T,
             "total_reward": traj.total_reward}]


def _h_train_start(gs: GatewayState, msg: dict, post) -> list[dict]:
    if gs.pool is None:
        return [_err("NO_POOL", "gateway started without a policy pool")]
    names = msg.get("demos")
    if not names:
        return [_err("BAD_CONFIG", "train.start needs demos: [names]")]
    trajectories = []
    for name in names:
        path = gs.demos_dir / (name if name.endswith(".jsonl") else f"{name}.jsonl")
        if not path.exists():
            return [_err("DEMO_NOT_FOUND", f"no demo file {path.name}")]
        trajectories.extend(dm.ingest(path).trajectories)
    demo_set = dm.DemoSet(trajectories)
    with gs.job_lock:
        if gs.running_job is not None:
            return [_err("BUSY", f"job {gs.running_job} still running")]
        job_id = uuid.uuid4().hex[:12]
        gs.running_job = job_id
    config = ctl.ControllerConfig(
        mode=msg.get("mode", "O+R"),
        base_weight=float(msg.get("base_weight", 0.05)),
        seed=int(msg.get("seed", 0)))
    job = {"job_id": job_id, "kind": "train-controller", "state": "running",
           "progress": []}
    gs.jobs[job_id] = job
    eval_episodes = int(msg.get("eval_episodes", 100))

    def work():
        def on_epoch(epoch: int, loss: float):
            if epoch % 25 == 0 or epoch == 1:
                row = {"epoch": epoch, "loss": loss}
                job["progress"].append(row)
                post({"type": "train.progress", "job_id": job_id, **row})

        try:
            result = ctl.train_controller(gs.pool, demo_set, config,
                                          on_epoch=on_epoch)
            from .harness import evaluate
            eval_seed = int(msg.get("eval_seed", 9000))
            report = evaluate(ctl.FirlAgent(result.policy, gs.pool, seed=eval_seed),
                              demo_set.task, episodes=eval_episodes, seed=eval_seed)
            ckpt = result.policy.to_checkpoint()
            ckpt_path = gs.out_dir / f"controller_{job_id}.ckpt"
            ckpt.save(ckpt_path)
            gs.controllers[job_id] = result.policy
            gs.latest_controller = job_id
            job["state"] = "done"
            job["final"] = {"success_rate": report.success_rate,
                            "mean_reward": report.mean_reward,
                            "epochs": result.epochs_to_plateau,
                            "env_steps": result.env_steps,
                            "controller": ckpt_path.name}
            post({"type": "train.done", "job_id": job_id, "status": "done",
                  **job["final"]})
        except Exception as e:  # job errors are reported, never crash the server
            job["state"] = "failed"
            job["error"] = str(e)
            post({"type": "train.done", "job_id": job_id, "status": "failed",
                  "error": str(e)})
        finally:
            with gs.job_lock:
                gs.running_job = None

    threading.Thread(target=work, daemon=True).start()
    return [{"type": "train.started", "job_id": job_id, "n_demos": demo_set.N}]


def _h_job_query(gs: GatewayState, msg: dict, post) -> list[dict]:
    job = gs.jobs.get(msg.get("job_id"))
    if job is None:
        return [_err("UNKNOWN_JOB", f"no job {msg.get('job_id')!r}")]
    return [{"type": "job.status", **job}]


def _h_eval_start(gs: GatewayState, msg: dict, post) -> list[dict]:
    session = _require_session(gs, msg)
    if gs.pool is None:
        return [_err("NO_POOL", "gateway started without a policy pool")]
    which = msg.get("controller", "latest")
    job_id = gs.latest_controller if which == "latest" else which
    policy = gs.controllers.get(job_id)
    if policy is None:
        return [_err("NO_CONTROLLER", "no trained controller available yet")]
    episodes = int(msg.get("episodes", 1))
    eval_id = uuid.uuid4().hex[:12]
    stream_seed = int(msg.get("seed", 7000))
    agent = ctl.FirlAgent(policy, gs.pool, seed=stream_seed)
    session.evals[eval_id] = _eval_frames(agent, session.task, episodes, stream_seed)
    return [{"type": "eval.started", "eval_id": eval_id, "episodes": episodes}]


def _h_eval_next(gs: GatewayState, msg: dict, post) -> list[dict]:
    session = _require_session(gs, msg)
    gen = session.evals.get(msg.get("eval_id"))
    if gen is None:
        return [_err("UNKNOWN_EVAL", f"no eval stream {msg.get('eval_id')!r}")]
    out = []
    for _ in range(int(msg.get("count", 1))):
        try:
            frame = next(gen)
        except StopIteration:
            del session.evals[msg["eval_id"]]
            out.append({"type": "eval.done", "eval_id": msg["eval_id"]})
            break
        out.append({"type": "eval.frame", "eval_id": msg["eval_id"], **frame})
    return out


_HANDLERS = {
    "session.create": _h_session_create,
    "env.step": _h_env_step,
    "env.reset": _h_env_reset,
    "state.query": _h_state_query,
    "demo.save": _h_demo_save,
    "train.start": _h_train_start,
    "job.query": _h_job_query,
    "eval.start": _h_eval_start,
    "eval.next": _h_eval_next,
}


def serve(port: int = 8000, pool_dir=None, demos_dir="demos", static_dir=None,
          out_dir=None, task_file=None):
    import uvicorn
    task = gw.TaskConfig.load(task_file) if task_file else None
    app = create_app(pool_dir=pool_dir, demos_dir=demos_dir, static_dir=static_dir,
                     out_dir=out_dir, task=task)
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")
