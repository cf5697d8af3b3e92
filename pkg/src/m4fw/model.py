"""N-1-M foundation model: five encoders, one backbone, three generators, a projection.

Two profiles share the component table.  The desk profile carries small
seeded weights and runs; the paper profile carries only the reference
parameter/format/GFLOP rows and exists for cost accounting.

Forward passes are partial: ``execute_path`` touches only the components of
the task's path, and every traced primitive is attributed to the component
that ran it, so a trace's component set can be checked against the route.
"""

from __future__ import annotations

import contextlib
import hashlib
import json
import threading
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .nn import tensor as T
from .nn.blocks import TransformerBlockSpec, block_forward, init_block
from .nn.quant import fake_quantize
from .nn.tensor import Tensor
from .nn.trace import OpTrace
from .tasks import ENCODER_FOR, TaskSpec, label_prompts, render_prompt, route, validate_task

COMPONENTS = ("IMG_enc", "TXT_enc", "AUD-B_enc", "AUD-I_enc", "IMU_enc",
              "Backbone", "TTS_dec", "IMG_dec", "GEN_dec", "Projection")
ENCODERS = COMPONENTS[:5]
GENERATORS = ("TTS_dec", "IMG_dec", "GEN_dec")
ROLES = ("embedding", "backbone", "generator", "projection")
FORMATS = ("FP32", "FP16", "INT8", "INT4")

PAD, BOS, EOS, SEP = 256, 257, 258, 259
VOCAB = 260

IMAGE_SHAPE = (3, 16, 16)
PATCH = 4
AUDIO_FRAME = 16
IMU_CHANNELS = 6
TTS_SAMPLES_PER_TOKEN = 32


class PathError(ValueError):
    pass


class PayloadError(ValueError):
    pass


@dataclass(frozen=True)
class ComponentSpec:
    name: str
    role: str
    params: int
    format: str
    gflops: float
    architecture: str = ""
    upper_bound: bool = False  # listed as "< 0.01B"; params holds the bound
    derived: bool = False  # computed, not a listed row

    def __post_init__(self):
        if self.name not in COMPONENTS:
            raise ValueError(f"unknown component: {self.name}")
        if self.role not in ROLES:
            raise ValueError(f"unknown role: {self.role}")
        if self.params <= 0:
            raise ValueError("params must be positive")
        if self.format not in FORMATS:
            raise ValueError(f"unknown format: {self.format}")


def load_component_table(source=None) -> dict[str, ComponentSpec]:
    if source is None:
        text = resources.files("m4fw").joinpath("fixtures", "components.json").read_text(encoding="utf-8")
    else:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    specs = {}
    for row in json.loads(text):
        row = {k: v for k, v in row.items() if k not in ("layers", "dim")}
        spec = ComponentSpec(**row)
        specs[spec.name] = spec
    if set(specs) != set(COMPONENTS):
        raise ValueError(f"component table must list exactly {COMPONENTS}")
    return specs


@dataclass(frozen=True)
class DeskDims:
    dim: int = 64
    heads: int = 4
    ffn: int = 256
    enc_layers: int = 2
    backbone_layers: int = 4
    vocab: int = VOCAB
    max_seq: int = 128

    def layers(self, component: str) -> int:
        if component in ENCODERS:
            return self.enc_layers
        if component == "Backbone":
            return self.backbone_layers
        return 0

    def block(self, component: str) -> TransformerBlockSpec:
        kind = "decoder" if component == "Backbone" else "encoder"
        return TransformerBlockSpec(self.dim, self.heads, self.ffn, kind)


# per-token input feature width of each encoder stem
_STEM_IN = {"IMG_enc": 3 * PATCH * PATCH, "AUD-B_enc": AUDIO_FRAME, "AUD-I_enc": AUDIO_FRAME,
            "IMU_enc": IMU_CHANNELS}


def _init_desk(dims: DeskDims, seed: int) -> dict[str, dict]:
    d = dims.dim
    weights: dict[str, dict] = {}
    for i, name in enumerate(COMPONENTS):
        # one stream per component keeps components independent of build order
        rng = np.random.default_rng([seed, i])

        def lin(n_in, n_out):
            return rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out))

        w: dict = {}
        if name in ENCODERS or name == "Backbone":
            if name in ("TXT_enc", "Backbone"):
                w["tok"] = rng.normal(0.0, 1.0, size=(dims.vocab, d))
            else:
                w["stem_w"] = lin(_STEM_IN[name], d)
                w["stem_b"] = np.zeros(d)
            w["pos"] = rng.normal(0.0, 0.1, size=(dims.max_seq, d))
            spec = dims.block(name)
            w["blocks"] = [init_block(spec, rng) for _ in range(dims.layers(name))]
            if name in ENCODERS:
                w["lnf_g"], w["lnf_b"] = np.ones(d), np.zeros(d)
        elif name == "GEN_dec":
            w.update(ln_g=np.ones(d), ln_b=np.zeros(d), w=lin(d, dims.vocab), b=np.zeros(dims.vocab))
        elif name == "TTS_dec":
            w.update(tok=rng.normal(0.0, 1.0, size=(dims.vocab, d)), w=lin(d, 1), b=np.zeros(1))
        elif name == "IMG_dec":
            w.update(stem_w=lin(3 * PATCH * PATCH, d), stem_b=np.zeros(d),
                     w=lin(d, IMAGE_SHAPE[1] * IMAGE_SHAPE[2]), b=np.zeros(IMAGE_SHAPE[1] * IMAGE_SHAPE[2]))
        else:  # Projection: one affine layer
            w.update(w=lin(d, d), b=np.zeros(d))
        weights[name] = w
    return weights


def iter_arrays(weights: dict, prefix: str = ""):
    """Yield (dotted name, array) for every array in a nested component weight dict."""
    for key in sorted(weights):
        val = weights[key]
        name = f"{prefix}{key}"
        if isinstance(val, dict):
            yield from iter_arrays(val, name + ".")
        elif isinstance(val, list):
            for i, item in enumerate(val):
                yield from iter_arrays(item, f"{name}.{i}.")
        else:
            yield name, val


def _freeze(weights: dict) -> None:
    for _, arr in iter_arrays(weights):
        arr.flags.writeable = False


def _map_arrays(weights: dict, fn) -> dict:
    out = {}
    for key, val in weights.items():
        if isinstance(val, dict):
            out[key] = _map_arrays(val, fn)
        elif isinstance(val, list):
            out[key] = [_map_arrays(item, fn) for item in val]
        else:
            out[key] = fn(key, val)
    return out


@dataclass
class FoundationModel:
    profile: str
    specs: dict[str, ComponentSpec]
    weights: dict[str, dict] | None = None
    dims: DeskDims = field(default_factory=DeskDims)
    seed: int = 0
    adapters: dict = field(default_factory=dict)
    lock: threading.RLock = field(default_factory=threading.RLock, repr=False, compare=False)

    @property
    def executable(self) -> bool:
        return self.weights is not None

    def require_desk(self) -> None:
        if not self.executable:
            raise PathError("the paper profile carries no weights and cannot execute")

    def component_names(self) -> tuple[str, ...]:
        return tuple(self.specs)

    def weight_hash(self, components=None) -> str:
        """SHA-256 over the base weights (adapters excluded)."""
        self.require_desk()
        h = hashlib.sha256()
        for comp in sorted(components or self.weights):
            for name, arr in iter_arrays(self.weights[comp]):
                h.update(f"{comp}.{name}:{arr.shape}".encode())
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def desk_param_count(self, component: str) -> int:
        self.require_desk()
        return sum(a.size for _, a in iter_arrays(self.weights[component]))

    def quantized(self, fmt: str, components=("Backbone",)) -> "FoundationModel":
        """A copy whose 2-D weights in ``components`` are round-tripped through ``fmt``.

        Adapters are not carried over.
        """
        self.require_desk()
        unknown = set(components) - set(COMPONENTS)
        if unknown:
            raise ValueError(f"unknown component(s): {sorted(unknown)}")
        new = {}
        for comp, w in self.weights.items():
            if comp in components:
                w = _map_arrays(w, lambda k, a: fake_quantize(a, fmt) if a.ndim == 2 else a.copy())
                _freeze(w)
            new[comp] = w
        return FoundationModel(self.profile, dict(self.specs), new, self.dims, self.seed)


def build_foundation(profile: str = "desk", seed: int = 0, dims: DeskDims | None = None) -> FoundationModel:
    if profile not in ("desk", "paper"):
        raise ValueError(f"unknown profile: {profile}")
    specs = load_component_table()
    if profile == "paper":
        return FoundationModel("paper", specs, None, dims or DeskDims(), seed)
    dims = dims or DeskDims()
    weights = _init_desk(dims, seed)
    for w in weights.values():
        _freeze(w)
    return FoundationModel("desk", specs, weights, dims, seed)


# -- payload preprocessing (raw input -> per-token features, untraced) -------------

def _as_float(payload, what) -> np.ndarray:
    try:
        arr = np.asarray(payload, dtype=np.float64)
    except (TypeError, ValueError):
        raise PayloadError(f"{what} payload must be numeric") from None
    if not np.all(np.isfinite(arr)):
        raise PayloadError(f"{what} payload must be finite")
    return arr


def _patches(img: np.ndarray) -> np.ndarray:
    c, h, w = img.shape
    p = img.reshape(c, h // PATCH, PATCH, w // PATCH, PATCH).transpose(1, 3, 0, 2, 4)
    return p.reshape((h // PATCH) * (w // PATCH), c * PATCH * PATCH)


def text_ids(text) -> np.ndarray:
    if isinstance(text, str):
        text = text.encode("utf-8")
    if not isinstance(text, (bytes, bytearray)):
        raise PayloadError("text payload must be str or bytes")
    return np.frombuffer(bytes(text), dtype=np.uint8).astype(np.int64)


def features(modality: str, payload, max_tokens: int = 128) -> np.ndarray:
    """Raw payload to per-token features (ids for text)."""
    if modality == "text":
        out = text_ids(payload)
    elif modality == "image":
        img = _as_float(payload, "image")
        if img.shape != IMAGE_SHAPE:
            raise PayloadError(f"image payload must have shape {IMAGE_SHAPE}, got {img.shape}")
        out = _patches(img)
    elif modality == "video":
        vid = _as_float(payload, "video")
        if vid.ndim != 4 or vid.shape[1:] != IMAGE_SHAPE or vid.shape[0] < 1:
            raise PayloadError(f"video payload must have shape (frames, {IMAGE_SHAPE})")
        out = np.concatenate([_patches(f) for f in vid])
    elif modality in ("audio_background", "audio_intent"):
        a = _as_float(payload, "audio")
        if a.ndim != 1 or a.size == 0 or a.size % AUDIO_FRAME:
            raise PayloadError(f"audio payload must be 1-D with a multiple of {AUDIO_FRAME} samples")
        out = a.reshape(-1, AUDIO_FRAME)
    elif modality == "imu":
        x = _as_float(payload, "imu")
        if x.ndim != 2 or x.shape[0] != IMU_CHANNELS or x.shape[1] == 0:
            raise PayloadError(f"imu payload must have shape ({IMU_CHANNELS}, T)")
        out = x.T.copy()
    else:
        raise PayloadError(f"unknown modality: {modality}")
    if len(out) == 0:
        raise PayloadError(f"empty {modality} payload")
    if len(out) > max_tokens:
        raise PayloadError(f"{modality} payload has {len(out)} tokens; limit is {max_tokens}")
    return out


# -- traced forward pieces ---------------------------------------------------------

def _scope(trace: OpTrace | None, name: str):
    return trace.component(name) if trace is not None else contextlib.nullcontext()


def _lora(adapter, component: str, layer: int):
    if adapter is None:
        return None
    return adapter.lora(component, layer) or None


def apply_head(x, adapter, trace=None):
    """Adapter projection head: x + x @ H (skipped when the pack carries none)."""
    head = None if adapter is None else adapter.head
    if head is None or np.size(head.data if isinstance(head, Tensor) else head) == 0:
        return T.as_tensor(x)
    return T.add(x, T.matmul(x, head, trace), trace)


def _linear(x, w, b, trace):
    return T.add(T.matmul(x, w, trace), b, trace)


def encode_batch(model: FoundationModel, modality: str, payloads, trace=None, adapter=None):
    """Encode a batch of payloads of one modality.

    Returns (hidden (B, tokens, dim) Tensor, mask (B, tokens) bool).  Text
    payloads of unequal length are padded and masked out of attention.
    """
    model.require_desk()
    if modality not in ENCODER_FOR:
        raise PayloadError(f"unknown modality: {modality}")
    comp = ENCODER_FOR[modality]
    dims = model.dims
    feats = [features(modality, p, dims.max_seq) for p in payloads]
    if not feats:
        raise PayloadError("empty batch")
    n = max(len(f) for f in feats)
    mask = np.zeros((len(feats), n), dtype=bool)
    for i, f in enumerate(feats):
        mask[i, :len(f)] = True
    w = model.weights[comp]
    with _scope(trace, comp):
        if modality == "text":
            ids = np.full((len(feats), n), PAD, dtype=np.int64)
            for i, f in enumerate(feats):
                ids[i, :len(f)] = f
            x = T.embedding(w["tok"], ids, trace)
        else:
            if len({f.shape for f in feats}) != 1:
                raise PayloadError(f"{modality} payloads in one batch must share a shape")
            x = _linear(np.stack(feats), w["stem_w"], w["stem_b"], trace)
        x = T.add(x, w["pos"][:n], trace)
        spec = dims.block(comp)
        km = None if mask.all() else mask
        for i, blk in enumerate(w["blocks"]):
            x = block_forward(spec, blk, x, trace, _lora(adapter, comp, i), km)
        x = T.layer_norm(x, w["lnf_g"], w["lnf_b"], trace=trace)
    return x, mask


def encode(model: FoundationModel, modality: str, payload, trace=None, adapter=None) -> np.ndarray:
    """Embedding sequence (tokens, dim) of one payload."""
    h, _ = encode_batch(model, modality, [payload], trace, adapter)
    return h.data[0]


def pooled_embedding(model, modality, payloads, trace=None, adapter=None) -> Tensor:
    comp = ENCODER_FOR[modality]
    h, mask = encode_batch(model, modality, payloads, trace, adapter)
    with _scope(trace, comp):
        return T.masked_mean(h, mask, trace)


def alignment_embedding(model, payloads: dict, trace=None, adapter=None) -> Tensor:
    """Unit-norm joint payload embedding (B, dim): sum of per-modality pooled embeddings plus head."""
    total = None
    first = None
    for modality in sorted(payloads):
        comp = ENCODER_FOR[modality]
        first = first or comp
        z = pooled_embedding(model, modality, payloads[modality], trace, adapter)
        with _scope(trace, comp):
            total = z if total is None else T.add(total, z, trace)
    with _scope(trace, first):
        total = apply_head(total, adapter, trace)
        return T.l2_normalize(total, trace=trace)


def label_embeddings(model, prompts, trace=None, adapter=None) -> Tensor:
    z = pooled_embedding(model, "text", [p.encode("utf-8") for p in prompts], trace, adapter)
    with _scope(trace, "TXT_enc"):
        return T.l2_normalize(z, trace=trace)


def project(model, x, trace=None, adapter=None) -> Tensor:
    """Projection layer; a Path-1 pack head is a delta on its weight: x @ (W + H) + b."""
    w = model.weights["Projection"]
    with _scope(trace, "Projection"):
        y = _linear(x, w["w"], w["b"], trace)
        head = None if adapter is None else adapter.head
        if head is not None and np.size(head.data if isinstance(head, Tensor) else head):
            y = T.add(y, T.matmul(x, head, trace), trace)
        return y


def backbone_hidden(model, ids, prefix=None, trace=None, adapter=None) -> Tensor:
    """Backbone states for [prefix embeddings; embedded ids]; ids is (B, n)."""
    w = model.weights["Backbone"]
    ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
    with _scope(trace, "Backbone"):
        x = T.embedding(w["tok"], ids, trace)
        if prefix is not None:
            x = T.concat([prefix, x], axis=-2, trace=trace)
        n = x.shape[-2]
        if n > model.dims.max_seq:
            raise PayloadError(f"sequence of {n} tokens exceeds the backbone limit {model.dims.max_seq}")
        x = T.add(x, w["pos"][:n], trace)
        spec = model.dims.block("Backbone")
        for i, blk in enumerate(w["blocks"]):
            x = block_forward(spec, blk, x, trace, _lora(adapter, "Backbone", i))
    return x


def gen_logits(model, hidden, trace=None) -> Tensor:
    w = model.weights["GEN_dec"]
    with _scope(trace, "GEN_dec"):
        h = T.layer_norm(hidden, w["ln_g"], w["ln_b"], trace=trace)
        return _linear(h, w["w"], w["b"], trace)


def greedy_decode(model, ids, prefix=None, max_new_tokens=8, trace=None, adapter=None) -> list[int]:
    ids = list(np.asarray(ids, dtype=np.int64).ravel())
    plen = 0 if prefix is None else prefix.shape[-2]
    out: list[int] = []
    for _ in range(max_new_tokens):
        if plen + len(ids) >= model.dims.max_seq:
            break
        h = backbone_hidden(model, np.array([ids]), prefix, trace, adapter)
        with _scope(trace, "GEN_dec"):
            last = T.slice_rows(h, h.shape[-2] - 1, h.shape[-2], trace)
            nxt = int(T.argmax(gen_logits(model, last, trace), trace).ravel()[0])
        if nxt == EOS:
            break
        out.append(nxt)
        ids.append(nxt)
    return out


def tts_waveform(model, x, trace=None, adapter=None, from_text=True) -> np.ndarray:
    """Sinusoid-coded waveform: each token becomes TTS_SAMPLES_PER_TOKEN samples of one tone."""
    w = model.weights["TTS_dec"]
    with _scope(trace, "TTS_dec"):
        h = T.embedding(w["tok"], x, trace) if from_text else x
        h = apply_head(h, adapter, trace) if from_text else h
        s = T.sigmoid(_linear(h, w["w"], w["b"], trace), trace)
        freq = T.add(T.scale(s, 7.0, trace), 1.0, trace)  # 1..8 cycles per token
        grid = 2 * np.pi * np.arange(TTS_SAMPLES_PER_TOKEN)[None, :] / TTS_SAMPLES_PER_TOKEN
        wave = T.scale(T.sin(T.mul(freq, grid, trace), trace), 0.5, trace)
    return wave.data.reshape(-1)


def img_generate(model, x, trace=None, adapter=None, from_image=False) -> np.ndarray:
    """16x16 image in [-1, 1] from a token sequence (or directly from image patches)."""
    w = model.weights["IMG_dec"]
    with _scope(trace, "IMG_dec"):
        if from_image:
            x = apply_head(_linear(x, w["stem_w"], w["stem_b"], trace), adapter, trace)
        z = T.mean(x, axis=-2, trace=trace)
        img = T.tanh(_linear(z, w["w"], w["b"], trace), trace)
    return img.data.reshape(-1, *IMAGE_SHAPE[1:])[0]


# -- path execution -----------------------------------------------------------------

@dataclass
class TaskOutput:
    task_id: str
    path: int
    kind: str  # "label", "text", "speech", "image"
    value: object
    activated: frozenset
    label_index: int | None = None
    scores: np.ndarray | None = None
    tokens: tuple = ()

    def to_json(self) -> dict:
        val = self.value
        if isinstance(val, np.ndarray):
            val = np.round(val, 8).tolist()
        out = {"task": self.task_id, "path": self.path, "kind": self.kind, "value": val,
               "activated": sorted(self.activated)}
        if self.label_index is not None:
            out["label_index"] = self.label_index
            out["scores"] = np.round(self.scores, 8).tolist()
        return out


def normalize_payload(task: TaskSpec, payload) -> dict:
    """Map a raw payload onto the task's input modalities; checks for mismatches."""
    if isinstance(payload, dict):
        unknown = set(payload) - set(task.input_modality)
        if unknown:
            raise PayloadError(f"payload modality {sorted(unknown)} not accepted by task {task.id} "
                               f"(expects {list(task.input_modality)})")
        return dict(payload)
    non_text = [m for m in task.input_modality if m != "text"]
    if len(task.input_modality) == 1:
        return {task.input_modality[0]: payload}
    if len(non_text) == 1:
        return {non_text[0]: payload}
    raise PayloadError(f"task {task.id} takes several modalities; pass a dict payload")


def _prompt_text(task: TaskSpec, options: dict) -> str | None:
    if task.prompt is None:
        return None
    return render_prompt(task, options.get("slots") or {})


def execute_path(model: FoundationModel, task: TaskSpec, payload, trace: OpTrace | None = None,
                 options: dict | None = None, adapter=None) -> TaskOutput:
    model.require_desk()
    violations = validate_task(task)
    if violations:
        raise PathError("; ".join(violations))
    r = route(task)
    options = dict(options or {})
    if adapter is None:
        adapter = model.adapters.get(task.id)
    inputs = normalize_payload(task, payload)
    max_new = int(options.get("max_new_tokens", 8))

    if task.path == 3:
        labels = options.get("labels")
        if not labels:
            raise PathError("Path-3 classification needs a non-empty 'labels' option")
        payloads = {m: [v] for m, v in inputs.items()}
        missing = [m for m in task.input_modality if m != "text" and m not in payloads]
        if missing:
            raise PayloadError(f"missing payload modality {missing} for task {task.id}")
        z = alignment_embedding(model, payloads, trace, adapter)
        lab = label_embeddings(model, label_prompts(task, labels), trace, adapter)
        with _scope(trace, "TXT_enc"):
            scores = T.matmul(z, T.transpose(lab, trace), trace)
            idx = int(T.argmax(scores, trace)[0])  # np.argmax keeps the lowest index on ties
        return TaskOutput(task.id, 3, "label", str(labels[idx]), r.activation, idx, scores.data[0])

    if task.path == 4:
        gen = r.generator
        (modality, data), = inputs.items()
        if gen == "TTS_dec":
            ids = features("text", data, model.dims.max_seq)
            wave = tts_waveform(model, ids, trace, adapter)
            return TaskOutput(task.id, 4, "speech", wave, r.activation)
        img = img_generate(model, features("image", data)[None], trace, adapter, from_image=True)
        return TaskOutput(task.id, 4, "image", img, r.activation)

    prompt = _prompt_text(task, options)
    if task.path == 2:
        ids = [BOS]
        if prompt:
            ids += list(text_ids(prompt)) + [SEP]
        ids += list(features("text", inputs["text"], model.dims.max_seq)) + [SEP]
        prefix = None
    else:
        prefix, ids = path1_prefix(model, task, inputs, prompt, trace, adapter)
    return _generate(model, task, r, ids, prefix, max_new, trace, adapter)


def path1_prefix(model, task, inputs, prompt, trace=None, adapter=None, batch=1):
    """Projected payload (and text-embedded prompt) prefix plus backbone token ids."""
    non_text = [m for m in task.input_modality if m != "text"]
    missing = [m for m in non_text if m not in inputs]
    if missing:
        raise PayloadError(f"missing payload modality {missing} for task {task.id}")
    parts = []
    for m in non_text:
        h, _ = encode_batch(model, m, [inputs[m]], trace)
        parts.append(h)
    embeds_prompt = task.prompt is not None and task.prompt.target == "text-embedding"
    if embeds_prompt and prompt:
        h, _ = encode_batch(model, "text", [prompt.encode("utf-8")], trace)
        parts.append(h)
    with _scope(trace, "Projection"):
        x = parts[0] if len(parts) == 1 else T.concat(parts, axis=-2, trace=trace)
    prefix = project(model, x, trace, adapter)
    ids = [BOS]
    if prompt and not embeds_prompt:
        ids += list(text_ids(prompt)) + [SEP]
    if "text" in inputs:
        ids += list(features("text", inputs["text"], model.dims.max_seq)) + [SEP]
    return prefix, ids


def _generate(model, task, r, ids, prefix, max_new, trace, adapter) -> TaskOutput:
    if r.generator == "GEN_dec":
        toks = greedy_decode(model, ids, prefix, max_new, trace, adapter)
        text = bytes(t for t in toks if t < 256).decode("utf-8", errors="replace")
        return TaskOutput(task.id, task.path, "text", text, r.activation, tokens=tuple(toks))
    h = backbone_hidden(model, np.array([ids]), prefix, trace, adapter)
    if r.generator == "TTS_dec":
        wave = tts_waveform(model, h.data[0], trace, from_text=False)
        return TaskOutput(task.id, task.path, "speech", wave, r.activation)
    return TaskOutput(task.id, task.path, "image", img_generate(model, h, trace), r.activation)


# -- paper-profile accounting ---------------------------------------------------------

def path_activation(path: int, generator: str | None = None, encoders=("IMG_enc",),
                    text_embedding: bool = False) -> frozenset[str]:
    if path not in (1, 2, 3, 4):
        raise PathError(f"unknown path: {path}")
    if path != 3 and generator not in GENERATORS:
        raise PathError(f"unknown generator: {generator}")
    bad = set(encoders) - set(ENCODERS)
    if bad:
        raise PathError(f"unknown encoder(s): {sorted(bad)}")
    if path == 1:
        act = set(encoders) | {"Projection", "Backbone", generator}
        if text_embedding:
            act.add("TXT_enc")
    elif path == 2:
        act = {"Backbone", generator}
    elif path == 3:
        act = set(encoders) | {"TXT_enc"}
    else:
        act = {generator}
    return frozenset(act)


def cost_of(model: FoundationModel, activation) -> tuple[int, float]:
    params = sum(model.specs[c].params for c in activation)
    gflops = sum(model.specs[c].gflops for c in activation)
    return params, round(gflops, 10)


def activation_cost(model: FoundationModel, path: int, generator: str | None = None,
                    encoders=("IMG_enc",), text_embedding: bool = False) -> tuple[int, float]:
    """(params, GFLOPs) summed over the path's activated components."""
    return cost_of(model, path_activation(path, generator, encoders, text_embedding))
