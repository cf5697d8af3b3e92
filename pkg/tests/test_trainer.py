import json
import math

import numpy as np
import pytest
from _oracles import gradient_check, randomized

from m4fw import metrics
from m4fw.adapters import PeftConfig, create_adapter, desk_target_dims
from m4fw.model import alignment_embedding, build_foundation, label_embeddings
from m4fw.nn.tensor import Tensor
from m4fw.tasks import label_prompts
from m4fw.trainer import (IncompatibleDataset, TrainConfig, eval_loss, evaluate, few_shot_curve, few_shot_order,
                          few_shot_subset, fine_tune, info_nce, initial_pack, make_dataset)


def test_dataset_reproducible_and_split():
    a = make_dataset("path3-alignment", 3, 120)
    b = make_dataset("path3-alignment", 3, 120)
    assert all(np.array_equal(x, y) for x, y in zip(a.payloads, b.payloads))
    assert set(a.train).isdisjoint(a.eval) and len(a.train) + len(a.eval) == 120
    m = json.loads(a.manifest_json())
    assert (m["kind"], m["seed"], m["size"]) == ("path3-alignment", 3, 120)
    assert make_dataset("path2-lm", 1, 10).texts != make_dataset("path2-lm", 2, 10).texts


def test_incompatible_dataset(desk, registry):
    with pytest.raises(IncompatibleDataset):
        fine_tune(desk, registry["T1"], make_dataset("path3-alignment", 0, 50))
    with pytest.raises(IncompatibleDataset):
        fine_tune(desk, registry["T23"], make_dataset("path3-alignment", 0, 50, modality="imu"))
    with pytest.raises(ValueError):
        TrainConfig(temperature=0)
    with pytest.raises(ValueError):
        make_dataset("path5", 0)


def test_zero_steps_returns_fresh_pack(desk, registry):
    task = registry["T38"]
    pack, log = fine_tune(desk, task, make_dataset("path3-alignment", 0, 50), config=TrainConfig(steps=0))
    assert pack == initial_pack(desk, task) and log.rows == []


def test_info_nce_uniform_is_log_n():
    n = 7
    z = Tensor(np.ones((3, 4)) / 2.0)
    y = Tensor(np.ones((n, 4)) / 2.0)
    assert float(info_nce(z, y, [0, 3, 6]).data) == pytest.approx(math.log(n))


def test_log_csv(desk, registry):
    _, log = fine_tune(desk, registry["T38"], make_dataset("path3-alignment", 0, 60), config=TrainConfig(steps=3))
    lines = log.to_csv().splitlines()
    assert lines[0] == "step,loss,metric" and len(lines) == 4


def test_path2_freezing(registry):
    model = build_foundation("desk", 0)
    task = registry["T1"]
    targets = (("Backbone", "query"), ("Backbone", "value"), ("TXT_enc", "query"))
    pack = create_adapter(task.id, PeftConfig(rank=2, targets=targets), desk_target_dims(model))
    before = model.weight_hash()
    out, _ = fine_tune(model, task, make_dataset("path2-lm", 0, 40), pack=pack,
                       config=TrainConfig(steps=3, batch_size=4))
    assert model.weight_hash() == before
    for old, new in zip(pack.pairs, out.pairs):
        if old.component == "TXT_enc":
            assert old == new
    assert any(not np.array_equal(o.B, n.B) for o, n in zip(pack.pairs, out.pairs) if o.component == "Backbone")


def test_path3_freezing(registry):
    model = build_foundation("desk", 0)
    task = registry["T38"]
    targets = (("Backbone", "value"), ("IMU_enc", "value"), ("TXT_enc", "value"))
    pack = create_adapter(task.id, PeftConfig(rank=2, targets=targets), desk_target_dims(model), (64, 64))
    out, _ = fine_tune(model, task, make_dataset("path3-alignment", 0, 60), pack=pack,
                       config=TrainConfig(steps=3))
    for old, new in zip(pack.pairs, out.pairs):
        assert (old == new) == (old.component == "Backbone")
    assert not np.array_equal(pack.head, out.head)


@pytest.mark.parametrize("tid,kind,modality", [("T38", "path3-alignment", "imu"),
                                               ("T44", "path1-caption", "image"),
                                               ("T1", "path2-lm", "imu")])
def test_gradients_match_finite_differences(desk, registry, tid, kind, modality):
    task = registry[tid]
    data = make_dataset(kind, 0, 40, modality=modality)
    pack = randomized(initial_pack(desk, task), 1)
    if pack.head.size:
        assert gradient_check(desk, task, data, pack, "head") < 1e-4
    assert gradient_check(desk, task, data, pack, (0, 0)) < 1e-4
    assert gradient_check(desk, task, data, pack, (len(pack.pairs) - 1, 1)) < 1e-4


def test_alignment_after_training(desk, registry):
    task = registry["T38"]
    data = make_dataset("path3-alignment", 0, 300)
    pack, _ = fine_tune(desk, task, data, config=TrainConfig(steps=60))
    idx = data.eval
    z = alignment_embedding(desk, {"imu": [data.payloads[i] for i in idx]}, adapter=pack).data
    y = label_embeddings(desk, label_prompts(task, data.classes), adapter=pack).data
    sims = z @ y.T
    labels = data.labels[idx]
    rows = np.arange(len(idx))
    matched = sims[rows, labels].mean()
    mismatched = (sims.sum(axis=1) - sims[rows, labels]).mean() / (len(data.classes) - 1)
    assert matched > mismatched


@pytest.mark.parametrize("seed", range(5))
def test_lm_eval_loss_improves(desk, registry, seed):
    task = registry["T1"]
    data = make_dataset("path2-lm", seed, 200)
    start = eval_loss(desk, task, data, initial_pack(desk, task, seed=seed))
    pack, _ = fine_tune(desk, task, data, config=TrainConfig(steps=300, batch_size=4, seed=seed))
    assert eval_loss(desk, task, data, pack) < start


def test_evaluate_metrics(desk, registry):
    data = make_dataset("path1-caption", 0, 20, modality="audio_intent")
    assert evaluate(desk, registry["T32"], data, initial_pack(desk, registry["T32"])) >= 0
    with pytest.raises(metrics.UnsupportedMetric):
        evaluate(desk, registry["T14"], make_dataset("path3-alignment", 0, 20, modality="image"))
    assert 0 <= evaluate(desk, registry["T38"], make_dataset("path3-alignment", 0, 50)) <= 1


def test_few_shot_subsets_nest():
    data = make_dataset("path3-alignment", 0, 1250)
    for seed in range(3):
        subs = [set(few_shot_subset(data, f, seed)) for f in (0.01, 0.05, 0.1, 1.0)]
        assert subs[0] <= subs[1] <= subs[2] <= subs[3] == set(data.train)
        assert len(set(data.labels[list(subs[0])])) == 10
    assert sorted(few_shot_order(data, 0)) == list(data.train)


def test_few_shot_too_small():
    with pytest.raises(ValueError, match="fewer than one per class"):
        few_shot_subset(make_dataset("path3-alignment", 0, 100), 0.01, 0)
    with pytest.raises(ValueError):
        few_shot_subset(make_dataset("path3-alignment", 0, 100), 0.0, 0)


def test_full_fraction_matches_plain_training(desk, registry):
    task = registry["T38"]
    data = make_dataset("path3-alignment", 0, 100)
    cfg = TrainConfig(steps=10, seed=2)
    (pt,) = few_shot_curve(desk, task, data, [1.0], cfg, seeds=[2])
    pack, _ = fine_tune(desk, task, data, config=cfg)
    assert pt.mean == evaluate(desk, task, data, pack)
