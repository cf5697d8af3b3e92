"""Adapter fine-tuning on synthetic desk-scale datasets, evaluation and few-shot curves."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .adapters import (AdapterPack, PeftConfig, create_adapter, default_config, desk_target_dims,
                       head_shape_for, tunable_mask)
from .model import (BOS, EOS, PAD, SEP, FoundationModel, alignment_embedding, backbone_hidden,
                    execute_path, gen_logits, label_embeddings, path1_prefix, text_ids)
from .nn import tensor as T
from .nn.tensor import Tensor
from .tasks import ENCODER_FOR, TaskSpec, label_prompts, render_prompt, validate_task

KINDS = ("path3-alignment", "path2-lm", "path1-caption")
KIND_FOR_PATH = {3: "path3-alignment", 2: "path2-lm", 1: "path1-caption"}

_WORDS = {
    "imu": ("walking", "running", "sitting", "standing", "lying", "cycling", "jumping",
            "climbing", "falling", "driving", "rowing", "skating"),
    "default": ("car", "dog", "cat", "bird", "ship", "plane", "horse", "truck", "frog", "deer",
                "tree", "house"),
}
_SUBJECTS = ("the cat", "a dog", "the bird", "my friend", "the child", "a farmer", "the robot", "her sister")
_VERBS = ("sees", "likes", "finds", "feeds", "draws", "follows")
_OBJECTS = ("the moon", "a red ball", "the river", "an apple", "the old house", "a small boat")
_COLORS = ("red", "blue", "green", "black", "white", "yellow")

_PAYLOAD_SHAPE = {"imu": (6, 16), "image": (3, 16, 16), "audio_intent": (64,),
                  "audio_background": (64,), "video": (1, 3, 16, 16)}


class TrainingError(RuntimeError):
    pass


class IncompatibleDataset(ValueError):
    pass


@dataclass
class SyntheticDataset:
    kind: str
    seed: int
    size: int
    modality: str
    payloads: list
    texts: list  # label word (path3), sentence (path2) or caption (path1)
    labels: np.ndarray  # class index per sample (-1 when unlabelled)
    classes: tuple
    n_train: int

    @property
    def train(self) -> np.ndarray:
        return np.arange(self.n_train)

    @property
    def eval(self) -> np.ndarray:
        return np.arange(self.n_train, self.size)

    def manifest(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "size": self.size, "modality": self.modality,
                "n_train": self.n_train, "n_eval": self.size - self.n_train, "classes": list(self.classes)}

    def manifest_json(self) -> str:
        return json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n"


def make_dataset(kind: str, seed: int = 0, size: int = 500, classes: int = 10, modality: str = "imu",
                 noise: float = 0.6, eval_fraction: float = 0.2) -> SyntheticDataset:
    """Reproducible from (kind, seed, size, ...); the last ``eval_fraction`` of samples form the eval split."""
    if kind not in KINDS:
        raise ValueError(f"unknown dataset kind: {kind}")
    if size < 2:
        raise ValueError("dataset needs at least two samples")
    rng = np.random.default_rng([seed, KINDS.index(kind)])
    n_eval = max(1, int(math.ceil(size * eval_fraction)))
    n_train = size - n_eval
    if kind == "path2-lm":
        texts = [f"{_SUBJECTS[rng.integers(len(_SUBJECTS))]} {_VERBS[rng.integers(len(_VERBS))]} "
                 f"{_OBJECTS[rng.integers(len(_OBJECTS))]}." for _ in range(size)]
        return SyntheticDataset(kind, seed, size, "text", [None] * size, texts,
                                np.full(size, -1), (), n_train)
    words = _WORDS.get(modality, _WORDS["default"])
    if classes > len(words):
        raise ValueError(f"at most {len(words)} classes are available")
    shape = _PAYLOAD_SHAPE[modality]
    protos = rng.normal(0.0, 1.0, size=(classes, *shape))
    labels = np.arange(size) % classes
    rng.shuffle(labels)
    payloads = [protos[c] + noise * rng.normal(0.0, 1.0, size=shape) for c in labels]
    if kind == "path3-alignment":
        texts = [words[c] for c in labels]
    else:
        texts = [f"a {_COLORS[c % len(_COLORS)]} {words[c]}" for c in labels]
    return SyntheticDataset(kind, seed, size, modality, payloads, texts, labels,
                            tuple(words[:classes]), n_train)


def check_compatible(task: TaskSpec, data: SyntheticDataset) -> None:
    violations = validate_task(task)
    if violations:
        raise IncompatibleDataset("; ".join(violations))
    if KIND_FOR_PATH.get(task.path) != data.kind:
        raise IncompatibleDataset(f"{data.kind} data cannot train a Path-{task.path} task")
    if data.kind != "path2-lm" and data.modality not in task.input_modality:
        raise IncompatibleDataset(f"task {task.id} takes {list(task.input_modality)}, dataset is {data.modality}")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 200
    batch_size: int = 16
    lr: float = 0.5
    loss: str | None = None  # None picks InfoNCE for Path-3 and cross-entropy otherwise
    temperature: float = 0.07
    seed: int = 0
    log_every: int = 1

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.loss not in (None, "cross-entropy", "InfoNCE"):
            raise ValueError(f"unknown loss: {self.loss}")


class LiveAdapter:
    """Float64 working copy of a pack; tensors the mask allows carry gradients."""

    def __init__(self, pack: AdapterPack, mask):
        self.pack = pack
        self.mask = mask
        s = pack.config.scaling
        self._lora: dict = {}
        self.pairs = []
        for p in pack.pairs:
            tr = mask.allows(p.component)
            a = Tensor(p.A.astype(np.float64), requires_grad=tr)
            b = Tensor(p.B.astype(np.float64), requires_grad=tr)
            self.pairs.append((a, b))
            self._lora.setdefault((p.component, p.layer), {})[p.role] = (a, b, s)
        self.head = Tensor(pack.head.astype(np.float64), requires_grad=mask.projection) if pack.head.size else None

    def lora(self, component, layer):
        return self._lora.get((component, layer), {})

    def parameters(self) -> list[Tensor]:
        out = [t for ab in self.pairs for t in ab if t.requires_grad]
        if self.head is not None and self.head.requires_grad:
            out.append(self.head)
        return out

    def frozen_digest(self) -> str:
        h = hashlib.sha256()
        for t in [t for ab in self.pairs for t in ab if not t.requires_grad]:
            h.update(t.data.tobytes())
        return h.hexdigest()

    def to_pack(self) -> AdapterPack:
        head = self.head.data if self.head is not None else self.pack.head
        return self.pack.with_arrays([(a.data, b.data) for a, b in self.pairs], head)


def info_nce(z: Tensor, y: Tensor, targets, temperature: float = 0.07) -> Tensor:
    """-log softmax over label similarities: exp(sim(x, y+)/tau) / sum_y exp(sim(x, y)/tau)."""
    sims = T.matmul(z, T.transpose(y))
    return T.cross_entropy(T.scale(sims, 1.0 / temperature), targets)


# -- per-path batch losses --------------------------------------------------------

def _label_prompts(task, data):
    return label_prompts(task, data.classes)


def _lm_rows(task, texts, prompt_ids):
    """Token rows [BOS, prompt, SEP, text, EOS]; targets score only the text and EOS."""
    rows, tgts = [], []
    for t in texts:
        body = list(text_ids(t)) + [EOS]
        ids = [BOS] + prompt_ids + body
        tgt = [-1] * (len(ids) - len(body)) + body
        rows.append(ids[:-1])
        tgts.append(tgt[1:])
    n = max(len(r) for r in rows)
    ids = np.full((len(rows), n), PAD, dtype=np.int64)
    targets = np.full((len(rows), n), -1, dtype=np.int64)
    for i, (r, t) in enumerate(zip(rows, tgts)):
        ids[i, :len(r)] = r
        targets[i, :len(t)] = t
    return ids, targets


def _prompt_ids(task) -> list[int]:
    if task.prompt is None or task.prompt.target != "backbone":
        return []
    slots = {s: s.lower() for s in task.prompt.slots}
    return list(text_ids(render_prompt(task, slots))) + [SEP]


def batch_loss(model, task, data, idx, live, config: TrainConfig):
    """(loss tensor, batch metric) for samples ``idx`` of ``data``."""
    if data.kind == "path3-alignment":
        payloads = {data.modality: [data.payloads[i] for i in idx]}
        z = alignment_embedding(model, payloads, adapter=live)
        y = label_embeddings(model, _label_prompts(task, data), adapter=live)
        targets = data.labels[idx]
        if (config.loss or "InfoNCE") == "InfoNCE":
            loss = info_nce(z, y, targets, config.temperature)
        else:
            loss = T.cross_entropy(T.matmul(z, T.transpose(y)), targets)
        acc = float(np.mean(np.argmax(z.data @ y.data.T, axis=1) == targets))
        return loss, acc
    if data.kind == "path2-lm":
        ids, targets = _lm_rows(task, [data.texts[i] for i in idx], _prompt_ids(task))
        logits = gen_logits(model, backbone_hidden(model, ids, adapter=live))
        loss = T.cross_entropy(logits, targets, ignore_index=-1)
        keep = targets >= 0
        acc = float(np.mean(np.argmax(logits.data, axis=-1)[keep] == targets[keep]))
        return loss, acc
    losses, accs = [], []
    for i in idx:
        loss, acc = _caption_loss(model, task, data, i, live)
        losses.append(loss)
        accs.append(acc)
    total = losses[0]
    for extra in losses[1:]:
        total = T.add(total, extra)
    return T.scale(total, 1.0 / len(losses)), float(np.mean(accs))


def _caption_loss(model, task, data, i, live):
    prompt = render_prompt(task, {}) if task.prompt is not None and not task.prompt.slots else None
    prefix, ids = path1_prefix(model, task, {data.modality: data.payloads[i]}, prompt, adapter=live)
    body = list(text_ids(data.texts[i])) + [EOS]
    full = ids + body
    h = backbone_hidden(model, np.array([full[:-1]]), prefix, adapter=live)
    logits = gen_logits(model, h)
    plen = prefix.shape[-2]
    n = len(full) - 1
    targets = np.full((1, plen + n), -1, dtype=np.int64)
    targets[0, plen + len(ids) - 1:] = body
    loss = T.cross_entropy(logits, targets, ignore_index=-1)
    keep = targets >= 0
    acc = float(np.mean(np.argmax(logits.data, axis=-1)[keep] == targets[keep]))
    return loss, acc


# -- training ---------------------------------------------------------------------

@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)  # (step, loss, metric)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "loss", "metric"])
        for step, loss, metric in self.rows:
            w.writerow([step, f"{loss:.8f}", "" if metric is None else f"{metric:.6f}"])
        return buf.getvalue()

    @property
    def losses(self) -> list[float]:
        return [r[1] for r in self.rows]


def initial_pack(model, task, peft: PeftConfig | None = None, rank: int = 4, seed: int = 0) -> AdapterPack:
    config = peft or default_config(task, rank, seed)
    return create_adapter(task.id, config, desk_target_dims(model), head_shape_for(task, model.dims.dim))


def fine_tune(model: FoundationModel, task: TaskSpec, data: SyntheticDataset, peft: PeftConfig | None = None,
              config: TrainConfig = TrainConfig(), subset=None, pack: AdapterPack | None = None):
    """SGD on the pack tensors the path's tunable mask allows; returns (pack, log)."""
    check_compatible(task, data)
    pack = pack or initial_pack(model, task, peft, seed=config.seed)
    log = TrainingLog()
    if config.steps == 0:
        return pack, log
    mask = tunable_mask(task.path)
    live = LiveAdapter(pack, mask)
    base_hash = model.weight_hash()
    frozen = live.frozen_digest()
    pool = np.asarray(data.train if subset is None else subset)
    if pool.size == 0:
        raise IncompatibleDataset("empty training split")
    rng = np.random.default_rng([config.seed, 17])
    params = live.parameters()
    with model.lock:
        for step in range(config.steps):
            idx = rng.choice(pool, size=min(config.batch_size, pool.size), replace=False)
            loss, metric = batch_loss(model, task, data, idx, live, config)
            for p in params:
                p.grad = None
            loss.backward()
            for p in params:
                if p.grad is not None:
                    p.data = p.data - config.lr * p.grad
            if step % config.log_every == 0 or step == config.steps - 1:
                log.rows.append((step, float(loss.data), metric))
    if model.weight_hash() != base_hash or live.frozen_digest() != frozen:
        raise TrainingError("a frozen parameter changed during training")
    return live.to_pack(), log


# -- evaluation -------------------------------------------------------------------

def eval_loss(model, task, data, pack, idx=None, config: TrainConfig = TrainConfig()) -> float:
    idx = data.eval if idx is None else np.asarray(idx)
    loss, _ = batch_loss(model, task, data, idx, pack, config)
    return float(loss.data)


def predict(model, task, data, pack, idx=None) -> list:
    idx = data.eval if idx is None else np.asarray(idx)
    if data.kind == "path3-alignment":
        z = alignment_embedding(model, {data.modality: [data.payloads[i] for i in idx]}, adapter=pack)
        y = label_embeddings(model, _label_prompts(task, data), adapter=pack)
        return list(np.argmax(z.data @ y.data.T, axis=1))
    if data.kind == "path2-lm":
        ids, targets = _lm_rows(task, [data.texts[i] for i in idx], _prompt_ids(task))
        logits = gen_logits(model, backbone_hidden(model, ids, adapter=pack))
        pred = np.argmax(logits.data, axis=-1)
        return [list(p[t >= 0]) for p, t in zip(pred, targets)]
    outs = []
    for i in idx:
        o = execute_path(model, task, {data.modality: data.payloads[i]}, adapter=pack,
                         options={"max_new_tokens": 16})
        outs.append(o.value)
    return outs


def evaluate(model: FoundationModel, task: TaskSpec, data: SyntheticDataset, pack=None,
             metric: str | None = None, idx=None) -> float:
    """Score the eval split with the task's metric (or ``metric``)."""
    idx = data.eval if idx is None else np.asarray(idx)
    if idx.size == 0:
        raise ValueError("empty evaluation split")
    metric = metric or task.metric
    if metric not in metrics.SUPPORTED:
        raise metrics.UnsupportedMetric(f"metric {metric} is unsupported at desk scale")
    preds = predict(model, task, data, pack, idx)
    if data.kind == "path3-alignment":
        refs = list(data.labels[idx])
    elif data.kind == "path2-lm":
        _, targets = _lm_rows(task, [data.texts[i] for i in idx], _prompt_ids(task))
        refs = [list(t[t >= 0]) for t in targets]
        if metric == "accuracy":
            flat_p = [x for p in preds for x in p]
            flat_r = [x for r in refs for x in r]
            return metrics.accuracy(flat_p, flat_r)
    else:
        refs = [data.texts[i] for i in idx]
    return metrics.score(metric, preds, refs)


# -- few-shot ---------------------------------------------------------------------

def zipf_prior(k: int, s: float = 1.2) -> np.ndarray:
    w = 1.0 / np.arange(1, k + 1) ** s
    return w / w.sum()


def few_shot_order(data: SyntheticDataset, seed: int, s: float = 1.2) -> np.ndarray:
    """Per-seed priority order of train samples; prefixes are nested few-shot subsets.

    One sample of every class leads the order, the rest follow a Zipf(s) class prior.
    """
    rng = np.random.default_rng([seed, 101])
    train = data.train
    k = len(data.classes)
    prior = zipf_prior(k, s)[rng.permutation(k)]
    w = prior[data.labels[train]]
    w = w / w.sum()
    # weighted sampling without replacement via exponential keys
    keys = rng.exponential(size=train.size) / w
    order = train[np.argsort(keys, kind="stable")]
    first = {}
    for i in order:
        first.setdefault(int(data.labels[i]), int(i))
    lead = sorted(first.values(), key=lambda i: list(order).index(i))
    rest = [int(i) for i in order if int(i) not in set(lead)]
    return np.array(lead + rest)


def few_shot_subset(data: SyntheticDataset, fraction: float, seed: int) -> np.ndarray:
    if not 0 < fraction <= 1:
        raise ValueError("fractions must lie in (0, 1]")
    n = int(math.floor(fraction * data.n_train + 1e-9))
    k = len(data.classes)
    if n < k:
        raise ValueError(f"fraction {fraction} yields {n} samples, fewer than one per class ({k})")
    return np.sort(few_shot_order(data, seed)[:n])


@dataclass
class FewShotPoint:
    fraction: float
    mean: float
    per_seed: list


def few_shot_curve(model, task, data, fractions, config: TrainConfig = TrainConfig(), seeds=range(5)):
    """Mean eval metric per fraction over seeds; subsets nest within each seed."""
    fractions = sorted(fractions)
    for f in fractions:
        few_shot_subset(data, f, 0)  # precondition check before any training
    out = []
    for f in fractions:
        vals = []
        for s in seeds:
            subset = few_shot_subset(data, f, s)
            cfg = TrainConfig(config.steps, config.batch_size, config.lr, config.loss,
                              config.temperature, s, config.log_every)
            pack, _ = fine_tune(model, task, data, config=cfg, subset=subset)
            vals.append(evaluate(model, task, data, pack))
        out.append(FewShotPoint(f, float(np.mean(vals)), vals))
    return out
