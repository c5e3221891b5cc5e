"""End-to-end drive of the running product over its real interfaces.

Starts nothing itself: expects `firl serve` already listening on --port.
Mirrors the server's session locally (same seed, same engine) to plan expert
actions, records a demo through the socket, trains a controller, and streams
evaluation frames, verifying replay consistency along the way.
"""
import argparse
import asyncio
import json

import websockets

from firl import demos as dm, gridworld as gw


async def drive(port: int) -> None:
    uri = f"ws://127.0.0.1:{port}/ws"
    async with websockets.connect(uri, ping_interval=None) as ws:
        async def send(**msg):
            await ws.send(json.dumps(msg))
            return json.loads(await ws.recv())

        created = await send(type="session.create", seed=2000)
        assert created["type"] == "session.created", created
        sid = created["session_id"]
        print(f"session {sid}, protocol {created['protocol']}")

        mirror = gw.GridWorld(gw.TaskConfig())
        mirror.reset(2000)
        total = 0
        steps = 0
        while not mirror.state.terminated:
            action = int(dm.expert_action(mirror.state))
            reply = await send(type="env.step", session_id=sid, action=action)
            assert reply["type"] == "env.state", reply
            local = mirror.step(action)
            assert reply["state"]["reward"] == local.reward, "server/local mismatch"
            assert reply["state"]["agent"] == list(mirror.state.agent_pos)
            total += local.reward
            steps += 1
        print(f"episode finished: reward {total} in {steps} steps (mirror consistent)")

        saved = await send(type="demo.save", session_id=sid, name="live_demo")
        assert saved["type"] == "demo.saved", saved
        print(f"saved {saved['file']} ({saved['n_steps']} steps)")

        started = await send(type="train.start", demos=["live_demo"],
                             mode="O+R", eval_episodes=100)
        assert started["type"] == "train.started", started
        print(f"training job {started['job_id']} started")
        while True:
            msg = json.loads(await ws.recv())
            if msg["type"] == "train.progress":
                print(f"  epoch {msg['epoch']:4d} loss {msg['loss']:.4f}")
            elif msg["type"] == "train.done":
                assert msg["status"] == "done", msg
                print(f"trained: success {msg['success_rate']:.0%}, "
                      f"env steps {msg['env_steps']}")
                assert msg["env_steps"] == 0
                assert msg["success_rate"] >= 0.9
                break

        ev = await send(type="eval.start", session_id=sid, episodes=1, seed=99)
        assert ev["type"] == "eval.started", ev
        frames = []
        done = False
        while not done:
            await ws.send(json.dumps({"type": "eval.next", "session_id": sid,
                                      "eval_id": ev["eval_id"], "count": 10}))
            for _ in range(10):
                msg = json.loads(await ws.recv())
                if msg["type"] == "eval.done":
                    done = True
                    break
                frames.append(msg)
        replay = gw.GridWorld(gw.TaskConfig())
        replay.reset(frames[0]["seed"])
        for frame in frames[1:]:
            r = replay.step(frame["action"])
            assert r.reward == frame["reward"]
        print(f"eval stream: {len(frames)} frames, replay-consistent, "
              f"episode reward {frames[-1].get('episode_reward')}")
        print("LIVE DRIVE OK")


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--port", type=int, default=8731)
    asyncio.run(drive(ap.parse_args().port))
