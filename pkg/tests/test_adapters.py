import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from m4fw.adapters import (PAPER_DIMS, AdapterError, BadMagic, ChecksumMismatch, PackError, PeftConfig, Truncated,
                           VersionMismatch, attach, create_adapter, create_task_adapter, desk_target_dims, detach,
                           head_shape_for, default_config, lora_param_count, load_pack, pack_bytes, parse_pack,
                           peft_param_count, save_pack, tally_trainable, trainable_count, tunable_mask)
from m4fw.cli import sample_payload
from m4fw.model import build_foundation, execute_path

QV = (("Backbone", "query"), ("Backbone", "value"))


def randomized(pack, seed):
    rng = np.random.default_rng(seed)
    pairs = [(rng.normal(0, 0.3, p.A.shape), rng.normal(0, 0.3, p.B.shape)) for p in pack.pairs]
    return pack.with_arrays(pairs, rng.normal(0, 0.3, pack.head.shape))


def run(model, task, payload, adapter=None):
    opts = {"labels": ["car", "dog", "cat"], "max_new_tokens": 4}
    out = execute_path(model, task, payload, options=opts, adapter=adapter)
    return out.scores if out.scores is not None else np.asarray(out.value if out.kind != "text" else out.tokens)


# -- counting -----------------------------------------------------------------------

def test_paper_scale_count():
    cfg = PeftConfig(rank=4, targets=QV)
    n = lora_param_count(cfg, {"Backbone": PAPER_DIMS["Backbone"]})
    assert n == 32 * 2 * 4 * (4096 + 4096) == 2_097_152
    assert round(100 * n / 6.28e9, 4) == 0.0334


def test_desk_rank1_count(desk):
    cfg = PeftConfig(rank=1, targets=QV)
    assert lora_param_count(cfg, desk_target_dims(desk)) == 4 * 2 * 1 * (64 + 64) == 1024
    pack = create_adapter("T1", cfg, desk_target_dims(desk))
    assert trainable_count(pack) == tally_trainable(pack) == 1024


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.sets(st.sampled_from(["Backbone", "IMG_enc", "TXT_enc", "IMU_enc"]), min_size=1),
       st.integers(0, 3))
def test_closed_form_matches_tally(rank, comps, path_mask):
    dims = {"Backbone": (4, 64), "IMG_enc": (2, 64), "TXT_enc": (2, 64), "IMU_enc": (2, 64)}
    targets = tuple((c, r) for c in sorted(comps) for r in ("query", "value"))
    pack = create_adapter("Tx", PeftConfig(rank=rank, targets=targets), dims, (64, 64))
    mask = tunable_mask(path_mask + 1)
    assert trainable_count(pack, mask) == tally_trainable(pack, mask)
    assert trainable_count(pack) == lora_param_count(pack.config, dims) + 64 * 64


def test_other_techniques_accounting_only():
    dims = {"Backbone": (32, 4096)}
    assert peft_param_count(PeftConfig("Prefix", 4, targets=QV), dims) == 32 * 2 * 4 * 4096
    assert peft_param_count(PeftConfig("Prompt", 4, targets=QV), dims) == 4 * 4096
    assert peft_param_count(PeftConfig("BitFit", 4, targets=QV), dims, {"Backbone": 11008}) == 32 * (5 * 4096 + 11008)
    with pytest.raises(AdapterError):
        create_adapter("T1", PeftConfig("Prefix", 4, targets=QV), dims)


def test_ratio_bound_every_task(registry, paper):
    total = sum(s.params for s in paper.specs.values())
    for task in registry.values():
        cfg = default_config(task)
        pack_params = lora_param_count(cfg, PAPER_DIMS) + int(np.prod(head_shape_for(task, 0, paper=True)))
        assert pack_params / total < 1e-3, task.id


def test_config_errors(desk):
    with pytest.raises(AdapterError):
        PeftConfig(rank=0, targets=QV)
    with pytest.raises(AdapterError):
        PeftConfig(targets=())
    with pytest.raises(AdapterError):
        PeftConfig(targets=(("Backbone", "key"),))
    with pytest.raises(AdapterError, match="rank"):
        create_adapter("T1", PeftConfig(rank=64, targets=QV), desk_target_dims(desk))
    with pytest.raises(AdapterError, match="unknown target"):
        create_adapter("T1", PeftConfig(targets=(("GEN_dec", "query"),)), desk_target_dims(desk))


def test_tunable_masks():
    assert tunable_mask(2) == tunable_mask(1)
    m2, m3, m4 = tunable_mask(2), tunable_mask(3), tunable_mask(4)
    assert (m2.backbone, m2.encoder, m2.projection) == (True, False, True)
    assert (m3.backbone, m3.encoder, m3.projection) == (False, True, True)
    assert (m4.backbone, m4.encoder, m4.projection) == (False, False, True)
    with pytest.raises(AdapterError):
        tunable_mask(5)


# -- attach / detach ------------------------------------------------------------------

@pytest.mark.parametrize("tid", ["T1", "T23", "T38", "T44", "T41", "T17"])
def test_zero_init_transparent(desk, registry, tid, rng):
    task = registry[tid]
    payload = {m: sample_payload(m, rng) for m in task.input_modality}
    base = run(desk, task, payload)
    fresh = run(desk, task, payload, create_task_adapter(desk, task))
    assert np.max(np.abs(np.asarray(base, float) - np.asarray(fresh, float)), initial=0.0) <= 1e-12


def test_attach_detach_restores(registry, rng):
    model = build_foundation("desk", 3)
    task = registry["T38"]
    x = sample_payload("imu", rng)
    before = run(model, task, x)
    attach(model, randomized(create_task_adapter(model, task), 1))
    assert not np.array_equal(run(model, task, x), before)
    detach(model, "T38")
    assert np.array_equal(run(model, task, x), before)
    with pytest.raises(AdapterError):
        detach(model, "T38")


def test_isolation(registry, rng):
    model = build_foundation("desk", 4)
    a, b = registry["T38"], registry["T39"]
    attach(model, randomized(create_task_adapter(model, a), 1))
    attach(model, randomized(create_task_adapter(model, b), 2))
    x = sample_payload("imu", rng)
    before = run(model, a, x)
    detach(model, "T39")
    attach(model, randomized(create_task_adapter(model, b), 3))
    assert np.array_equal(run(model, a, x), before)
    assert not np.array_equal(run(model, b, x), before)


def test_attach_errors(registry):
    model = build_foundation("desk", 5)
    task = registry["T1"]
    attach(model, create_task_adapter(model, task))
    with pytest.raises(AdapterError, match="duplicate"):
        attach(model, create_task_adapter(model, task))
    bad = create_adapter("T2", PeftConfig(rank=4, targets=QV), {"Backbone": (4, 32)})
    with pytest.raises(AdapterError, match="dimension mismatch"):
        attach(model, bad)


# -- pack files -----------------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1), st.sampled_from([1, 2, 3, 4]),
       st.floats(0.5, 64, allow_nan=False))
def test_round_trip(rank, seed, path, alpha):
    dims = {"Backbone": (2, 16), "IMU_enc": (1, 16)}
    targets = QV if path in (1, 2) else ((("IMU_enc", "value"),) if path == 3 else ())
    cfg = PeftConfig(rank=rank, alpha=alpha, targets=targets, seed=seed, head_only=path == 4)
    pack = randomized(create_adapter(f"T{path}", cfg, dims, (0, 0) if path == 2 else (16, 16)), seed)
    assert parse_pack(pack_bytes(pack)) == pack
    assert pack_bytes(parse_pack(pack_bytes(pack))) == pack_bytes(pack)


def test_save_load(tmp_path, desk, registry):
    pack = randomized(create_task_adapter(desk, registry["T44"]), 9)
    path = tmp_path / "t44.m4a"
    n = save_pack(pack, path)
    assert n == path.stat().st_size < 2**20
    assert load_pack(path) == pack
    assert not list(tmp_path.glob("*.tmp"))


def test_paper_scale_pack_size(registry):
    task = registry["T5"]  # emoji prediction
    pack = create_adapter(task.id, default_config(task), PAPER_DIMS, head_shape_for(task, 0, paper=True))
    n = len(pack_bytes(pack))
    assert n == pytest.approx(2_097_152 * 4, rel=0.01) and n < 10e6


def corrupt(data, i, value):
    b = bytearray(data)
    b[i] = value
    return bytes(b)


def test_pack_errors(desk, registry):
    data = pack_bytes(create_task_adapter(desk, registry["T38"]))
    with pytest.raises(BadMagic):
        parse_pack(b"XXXX" + data[4:])
    with pytest.raises(Truncated):
        parse_pack(data[:-100])
    with pytest.raises(ChecksumMismatch):
        parse_pack(corrupt(data, len(data) - 50, data[-50] ^ 0xFF))
    payload = struct.pack("<H", 2) + data[6:-4]
    with pytest.raises(VersionMismatch):
        parse_pack(b"M4AD" + payload + struct.pack("<I", zlib.crc32(payload)))
    payload = data[4:-4] + b"\x00\x00"
    with pytest.raises(PackError, match="trailing"):
        parse_pack(b"M4AD" + payload + struct.pack("<I", zlib.crc32(payload)))
    assert all(issubclass(e, PackError) for e in (BadMagic, Truncated, ChecksumMismatch, VersionMismatch))
