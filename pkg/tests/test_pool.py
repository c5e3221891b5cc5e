import json

import numpy as np
import pytest

from firl import gridworld as gw, nnet, pool
from firl.errors import CheckpointError, ConfigError


def tiny_ckpt(seed=0, label="open-red", input_dim=gw.FEAT_DIM):
    spec = nnet.MlpSpec(input_dim, (8,), gw.N_ACTIONS, head="softmax")
    params = nnet.init_params(spec, np.random.default_rng(seed))
    return nnet.PolicyCheckpoint(spec, params, {"label": label, "seed": seed})


def tiny_pool(k=3):
    names = ["red", "green", "blue", "yellow"][:k]
    entries = tuple(
        pool.SkillEntry(skill_id=i, label=f"open-{c}", checkpoint=tiny_ckpt(i, f"open-{c}"))
        for i, c in enumerate(names))
    return pool.PolicyPool(entries)


def test_propose_actions_shape_and_determinism(default_task):
    p = tiny_pool(3)
    _, r = gw.reset(0, default_task)
    a1 = p.propose_actions(r.raw_obs)
    a2 = p.propose_actions(r.raw_obs)
    assert a1.shape == (3,)
    assert np.array_equal(a1, a2)
    assert all(0 <= a < gw.N_ACTIONS for a in a1)


def test_propose_actions_single_skill(default_task):
    p = pool.PolicyPool((pool.SkillEntry(0, "open-red", tiny_ckpt(0)),))
    _, r = gw.reset(1, default_task)
    a = p.propose_actions(r.raw_obs)
    probs = nnet.forward(p.entries[0].checkpoint.spec, p.entries[0].checkpoint.params,
                         gw.featurize_raw(r.raw_obs))
    assert a.tolist() == [int(probs.argmax())]


def test_duplicated_skill_gives_identical_entries(default_task):
    c = tiny_ckpt(5)
    p = pool.PolicyPool((pool.SkillEntry(0, "a", c), pool.SkillEntry(1, "b", c)))
    _, r = gw.reset(2, default_task)
    a = p.propose_actions(r.raw_obs)
    assert a[0] == a[1]


def test_add_skill_appends_without_touching_existing():
    p = tiny_pool(3)
    before = p.checksums()
    p2 = p.add_skill(tiny_ckpt(9, "open-yellow"), "open-yellow")
    assert p2.k == 4
    assert p.k == 3
    assert p2.checksums()[:3] == before
    assert [e.skill_id for e in p2.entries] == [0, 1, 2, 3]


def test_add_skill_then_propose_length(default_task):
    p = tiny_pool(2).add_skill(tiny_ckpt(3, "open-blue"), "open-blue")
    _, r = gw.reset(0, default_task)
    assert p.propose_actions(r.raw_obs).shape == (3,)


def test_add_skill_rejects_input_dim_mismatch():
    p = tiny_pool(2)
    with pytest.raises(ConfigError):
        p.add_skill(tiny_ckpt(0, input_dim=10), "bad")


def test_pool_requires_contiguous_ids():
    entries = (pool.SkillEntry(0, "a", tiny_ckpt(0)), pool.SkillEntry(2, "b", tiny_ckpt(1)))
    with pytest.raises(ConfigError):
        pool.PolicyPool(entries)


def test_empty_pool_rejected():
    with pytest.raises(ConfigError):
        pool.PolicyPool(())


# ---------------------------------------------------------------------------
# directory round trip

def test_save_load_round_trip(tmp_path, default_task):
    p = tiny_pool(3)
    pool.save_pool(p, tmp_path / "pool")
    loaded = pool.load_pool(tmp_path / "pool")
    assert loaded.k == 3
    assert loaded.labels == p.labels
    assert loaded.checksums() == p.checksums()
    _, r = gw.reset(3, default_task)
    assert np.array_equal(loaded.propose_actions(r.raw_obs), p.propose_actions(r.raw_obs))


def test_manifest_order_beats_file_listing(tmp_path):
    p = tiny_pool(3)
    pool.save_pool(p, tmp_path / "pool")
    # rewrite the manifest with entries listed in reverse; ids still decide order
    mpath = tmp_path / "pool" / pool.MANIFEST_NAME
    manifest = json.loads(mpath.read_text())
    manifest["skills"] = list(reversed(manifest["skills"]))
    mpath.write_text(json.dumps(manifest))
    loaded = pool.load_pool(tmp_path / "pool")
    assert loaded.labels == p.labels


def test_tampered_checkpoint_detected(tmp_path):
    p = tiny_pool(2)
    pool.save_pool(p, tmp_path / "pool")
    target = next((tmp_path / "pool").glob("skill_1_*.ckpt"))
    payload = json.loads(target.read_text())
    blob = bytearray(payload["params_b64"].encode())
    blob[20] = ord("B") if blob[20] != ord("B") else ord("C")
    payload["params_b64"] = blob.decode()
    target.write_text(json.dumps(payload))
    with pytest.raises(CheckpointError) as exc:
        pool.load_pool(tmp_path / "pool")
    assert target.name in str(exc.value)


def test_missing_manifest_entry(tmp_path):
    p = tiny_pool(2)
    pool.save_pool(p, tmp_path / "pool")
    next((tmp_path / "pool").glob("skill_0_*.ckpt")).unlink()
    with pytest.raises(CheckpointError) as exc:
        pool.load_pool(tmp_path / "pool")
    assert "missing" in str(exc.value)


def test_duplicate_skill_id_rejected(tmp_path):
    p = tiny_pool(2)
    pool.save_pool(p, tmp_path / "pool")
    mpath = tmp_path / "pool" / pool.MANIFEST_NAME
    manifest = json.loads(mpath.read_text())
    manifest["skills"][1]["skill_id"] = 0
    mpath.write_text(json.dumps(manifest))
    with pytest.raises(CheckpointError):
        pool.load_pool(tmp_path / "pool")


def test_frozen_checksums_stable_across_operations(tmp_path, default_task):
    p = tiny_pool(3)
    before = p.checksums()
    _, r = gw.reset(0, default_task)
    for seed in range(5):
        _, rr = gw.reset(seed, default_task)
        p.propose_actions(rr.raw_obs)
    p.add_skill(tiny_ckpt(11, "open-yellow"), "open-yellow")
    pool.save_pool(p, tmp_path / "pool")
    pool.load_pool(tmp_path / "pool")
    assert p.checksums() == before
