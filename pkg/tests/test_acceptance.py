"""The ten acceptance criteria, each timed against its runtime limit.

Every criterion prints one PASS/FAIL line; the lines are also collected into
``RESULTS`` and repeated in the pytest terminal summary.
"""

import base64
import os
import random
import tempfile
import threading
import time
from contextlib import contextmanager
from functools import lru_cache

import numpy as np
import pytest
from _oracles import gradient_check, randomized
from test_tasks import PROMPT_EXAMPLES

from m4fw import cost
from m4fw.adapters import (PAPER_DIMS, PeftConfig, attach, create_adapter, create_task_adapter, desk_target_dims,
                           detach, lora_param_count, pack_bytes, tunable_mask)
from m4fw.cli import sample_payload
from m4fw.model import activation_cost, build_foundation, execute_path
from m4fw.nn import dequantize, quantize
from m4fw.service import FirmwareService, ServiceClient, ServiceServer, encode_input, model_bytes
from m4fw.tasks import registry_by_id, render_prompt
from m4fw.trainer import TrainConfig, evaluate, few_shot_curve, fine_tune, initial_pack, make_dataset

RESULTS: list[str] = []
REG = registry_by_id()


@contextmanager
def criterion(n: int, title: str, limit_s: float):
    t0 = time.perf_counter()
    try:
        yield
        elapsed = time.perf_counter() - t0
        assert elapsed < limit_s, f"runtime {elapsed:.2f}s exceeds {limit_s}s"
    except BaseException as exc:
        line = f"criterion {n:2d} FAIL  {title}: {type(exc).__name__}: {exc}"
        RESULTS.append(line)
        print(line)
        raise
    line = f"criterion {n:2d} PASS  {title} ({elapsed:.2f}s)"
    RESULTS.append(line)
    print(line)


def run_output(model, task, payload, adapter=None):
    opts = {"labels": ["sitting", "walking", "running"], "max_new_tokens": 3}
    out = execute_path(model, task, payload, options=opts, adapter=adapter)
    if out.scores is not None:
        return np.asarray(out.scores)
    return np.asarray(out.tokens if out.kind == "text" else out.value, dtype=float)


@lru_cache(maxsize=None)
def trained_path3(seed: int):
    """T38 adapter trained for 200 steps on the 10-class synthetic set of ``seed``."""
    model = build_foundation("desk", 0)
    data = make_dataset("path3-alignment", seed, 500, classes=10)
    pack, _ = fine_tune(model, REG["T38"], data, config=TrainConfig(steps=200, seed=seed))
    return model, data, pack


def test_criterion_1_lora_arithmetic():
    with criterion(1, "LoRA arithmetic", 1.0):
        cfg = PeftConfig(rank=4, targets=(("Backbone", "query"), ("Backbone", "value")))
        assert PAPER_DIMS["Backbone"][0] == 32
        n = lora_param_count(cfg, {"Backbone": PAPER_DIMS["Backbone"]})
        assert n == 2_097_152
        ratio = 100 * n / 6.28e9
        assert round(ratio, 3) == 0.033 and round(ratio, 2) == 0.03
        assert f"{n / 1e6:.0f}M" == "2M"


def test_criterion_2_whatif():
    with criterion(2, "what-if NPU projection", 1.0):
        rows = cost.whatif_table()
        reported = [r.npu_reported for r in rows]
        assert reported == [0.11, 0.014, 0.32, 0.012, 0.32, 0.013, 0.041]
        for r in rows:
            assert 19.1 <= r.speedup <= 20.0
            assert abs(r.npu_projected - r.npu_reported) <= 0.05 * r.npu_reported, r


def test_criterion_3_storage():
    with criterion(3, "storage scalability", 1.0):
        curve = cost.storage_curve(50, quantize_generators=True)
        assert curve[-1].ts_bytes == 15_200_000_000
        ratio = curve[-1].ts_bytes / curve[-1].fm_bytes
        assert 2.0 <= ratio <= 3.0, ratio
        xs = cost.crossovers(curve)
        assert len(xs) == 1 and 10 <= xs[0] <= 30, xs


def test_criterion_4_memory():
    with criterion(4, "peak memory", 1.0):
        fm = cost.memory_footprint("FM", 50, 12e9, "INT4")
        assert abs(fm.weight_bytes - 7.5e9) <= 0.05 * 7.5e9, fm.weight_bytes
        increment = (fm.weight_bytes - fm.base_bytes) / fm.base_bytes
        assert abs(100 * increment - 2.7) <= 0.5, increment
        assert fm.resident_count == 50 and fm.peak_bytes <= 12e9
        ts = cost.memory_footprint("TS", 50, 12e9)
        assert 18 <= ts.resident_count <= 22, ts.resident_count


def test_criterion_5_census():
    with criterion(5, "operator census", 5.0):
        inv = cost.load_inventories()
        prof = cost.load_profiles()["edgetpu-2023"]
        ts = cost.census(inv["ts_models"], prof)
        m4 = cost.census([inv["m4"]], prof)
        assert (ts.supported, ts.distinct, round(100 * ts.coverage, 1)) == (51, 156, 32.7)
        assert (m4.supported, m4.distinct, round(100 * m4.coverage, 1)) == (25, 39, 64.1)

        model = build_foundation("desk", 0)
        rng = np.random.default_rng(0)
        runs = []
        for tid in ("T1", "T38", "T41", "T44", "T45"):
            task = REG[tid]
            slots = {k: "x" for k in task.prompt.slots} if task.prompt else {}
            runs.append((task, {m: sample_payload(m, rng) for m in task.input_modality},
                         {"labels": ["a", "b"], "max_new_tokens": 1, "slots": slots}))
        counts = []
        for task in REG.values():
            attach(model, create_task_adapter(model, task))
            counts.append(len(cost.graph_operators(model, runs)))
        assert len(counts) == 50 and len(set(counts)) == 1, counts

        cum = cost.cumulative_union(inv["ts_models"])
        assert len(cum) == 50 and all(b > a for a, b in zip(cum, cum[1:]))
        assert cum[-1] > 2 * counts[0] and cum[-1] > 2 * m4.distinct


def test_criterion_6_quantization():
    with criterion(6, "quantization properties", 120.0):
        rng = np.random.default_rng(6)
        for i in range(1000):
            rows, cols = rng.integers(1, 33, size=2)
            w = rng.normal(0, rng.uniform(0.01, 10), size=(rows, cols))
            fmt = "INT8" if i % 2 else "INT4"
            q = quantize(w, fmt)
            err = np.abs(dequantize(q) - w).max(axis=1)
            assert np.all(err <= q.scales / 2 * (1 + 1e-12)), (i, fmt)

        task = REG["T38"]
        drops, drops_enc = [], []
        for seed in range(5):
            model, data, pack = trained_path3(seed)
            fp32 = evaluate(model, task, data, pack)
            drops.append(fp32 - evaluate(model.quantized("INT8"), task, data, pack))
            # the path never touches the backbone, so also quantize the encoders it does use
            enc = model.quantized("INT8", ("Backbone", "IMU_enc", "TXT_enc"))
            drops_enc.append(fp32 - evaluate(enc, task, data, pack))
        assert 100 * np.mean(drops) <= 2.0, drops
        assert 100 * np.mean(drops_enc) <= 2.0, drops_enc


def test_criterion_7_transparency_isolation():
    with criterion(7, "adapter transparency and isolation", 60.0):
        rng = np.random.default_rng(7)
        model = build_foundation("desk", 7)
        for task in REG.values():
            payload = {m: sample_payload(m, rng) for m in task.input_modality}
            if task.prompt is not None and task.prompt.slots:
                continue
            base = run_output(model, task, payload)
            fresh = run_output(model, task, payload, create_task_adapter(model, task))
            assert np.max(np.abs(base - fresh), initial=0.0) <= 1e-12, task.id

        a, b = REG["T38"], REG["T39"]
        x = {"imu": sample_payload("imu", rng)}
        before = run_output(model, a, x)
        attach(model, randomized(create_task_adapter(model, a), 1))
        assert not np.array_equal(run_output(model, a, x), before)
        detach(model, "T38")
        assert np.array_equal(run_output(model, a, x), before)

        attach(model, randomized(create_task_adapter(model, a), 2))
        attach(model, randomized(create_task_adapter(model, b), 3))
        a_out = run_output(model, a, x)
        detach(model, "T39")
        attach(model, randomized(create_task_adapter(model, b), 4))
        assert np.array_equal(run_output(model, a, x), a_out)


def test_criterion_8_training():
    with criterion(8, "training properties", 300.0):
        task = REG["T38"]
        model = build_foundation("desk", 0)
        before = model.weight_hash()
        mask = tunable_mask(task.path)
        targets = (("Backbone", "value"), ("IMU_enc", "value"), ("TXT_enc", "value"))
        pack = create_adapter(task.id, PeftConfig(rank=2, targets=targets), desk_target_dims(model), (64, 64))
        out, _ = fine_tune(model, task, make_dataset("path3-alignment", 0, 60), pack=pack,
                           config=TrainConfig(steps=3))
        assert model.weight_hash() == before
        for old, new in zip(pack.pairs, out.pairs):
            if not mask.allows(old.component):
                assert old == new, old.component

        for tid, kind, modality in (("T38", "path3-alignment", "imu"), ("T44", "path1-caption", "image"),
                                    ("T1", "path2-lm", "imu")):
            t = REG[tid]
            data = make_dataset(kind, 0, 40, modality=modality)
            p = randomized(initial_pack(model, t), 1)
            which = ["head"] if p.head.size else []
            for w in which + [(0, 0), (len(p.pairs) - 1, 1)]:
                assert gradient_check(model, t, data, p, w) < 1e-4, (tid, w)

        accs = []
        for seed in range(5):
            m, data, p = trained_path3(seed)
            accs.append(evaluate(m, task, data, p))
        assert min(accs) >= 0.9, accs

        data = make_dataset("path3-alignment", 0, 1250, classes=10)
        curve = few_shot_curve(model, task, data, [0.01, 0.1, 1.0], TrainConfig(steps=100), seeds=range(2))
        means = [pt.mean for pt in curve]
        assert all(b >= a for a, b in zip(means, means[1:])), means
        assert model.weight_hash() == before


def test_criterion_9_path_accounting(paper):
    with criterion(9, "path accounting", 1.0):
        assert activation_cost(paper, 2, "GEN_dec")[1] == 437.0
        assert activation_cost(paper, 4, "TTS_dec")[1] == 8.58
        assert activation_cost(paper, 3, encoders=("IMG_enc",))[1] == 191.0152


def _client_load(path, k, n_requests, packs, snapshots, failures):
    rng = random.Random(k)
    mine = [tid for i, tid in enumerate(packs) if i % 16 == k]
    ids = list(packs)
    sent = 0
    with ServiceClient(path, timeout=120) as c:
        for tid in mine:
            if sent == n_requests:
                break
            r = c.request("register", id=f"{k}-{sent}", task=tid, pack=base64.b64encode(packs[tid]).decode())
            if r.get("id") != f"{k}-{sent}" or not r["ok"]:
                failures.append((k, sent, r))
            sent += 1
        while sent < n_requests:
            rid = f"{k}-{sent}"
            roll = rng.random()
            if roll < 0.05:
                r = c.send_raw(b"{broken")
                if r.get("id") is not None or r["ok"]:
                    failures.append((k, sent, r))
                sent += 1
                continue
            if roll < 0.65:
                task = REG[rng.choice(ids)]
                slots = {s: "x" for s in task.prompt.slots} if task.prompt else {}
                nprng = np.random.default_rng(sent)
                inputs = [encode_input(m, sample_payload(m, nprng)) for m in task.input_modality]
                r = c.request("invoke", id=rid, task=task.id, input=inputs,
                              options={"labels": ["a", "b"], "slots": slots, "max_new_tokens": 1})
            elif roll < 0.8:
                r = c.request("status", id=rid)
                if r["ok"]:
                    snapshots.append(r["result"])
            elif roll < 0.9:
                r = c.request("list", id=rid)
            else:
                r = c.request("evict", id=rid, task=rng.choice(ids))
            if r.get("id") != rid:
                failures.append((k, sent, r))
            sent += 1
    return sent


def test_criterion_10_service():
    with criterion(10, "service contract", 120.0):
        for tid, slots, expected in PROMPT_EXAMPLES:
            assert render_prompt(REG[tid], slots).encode() == expected.encode()

        model = build_foundation("desk", 0)
        packs = {tid: pack_bytes(create_task_adapter(model, task)) for tid, task in REG.items()}
        budget = model_bytes(model) + 300_000  # room for a handful of packs, so eviction happens
        path = os.path.join(tempfile.mkdtemp(), "m4.sock")
        server = ServiceServer(path, FirmwareService(model, budget=budget))
        server.serve_in_thread()
        svc = server.service
        hash_before = model.weight_hash()
        snapshots, failures, counts = [], [], [0] * 16
        per_client = [1000 // 16 + (1 if k < 1000 % 16 else 0) for k in range(16)]

        def worker(k):
            try:
                counts[k] = _client_load(path, k, per_client[k], packs, snapshots, failures)
            except Exception as exc:  # surfaced through ``failures``
                failures.append((k, "exception", repr(exc)))

        try:
            threads = [threading.Thread(target=worker, args=(k,)) for k in range(16)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            final = svc.status()
        finally:
            server.close()
        assert not failures, failures[:5]
        assert sum(counts) == 1000
        assert final["counters"]["requests"] == 1000
        assert snapshots and all(s["bytes_used"] <= s["budget_bytes"] for s in snapshots + [final])
        assert final["counters"]["evictions"] > 0 and final["counters"]["invocations"] > 0
        assert model.weight_hash() == hash_before
