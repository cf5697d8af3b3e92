"""Low-rank adapter packs: creation, tunable-weight rules, attach/detach and the pack file.

Pack file layout (little-endian)::

    "M4AD" | version u16 | task-id length u16 | task id (UTF-8) | technique u8 | rank u16
    | alpha f32 | target count u16
    | per target: component u8, role u8, d_in u32, d_out u32, A f32[rank*d_in], B f32[d_out*rank]
    | head rows u32 | head cols u32 | head f32[rows*cols] | CRC32 u32

A target entry is one (component, role) pair at one layer; the layer index is
implied by how many entries for the same pair precede it.  The CRC covers
every byte between the magic and the checksum.
"""

from __future__ import annotations

import io
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import COMPONENTS, ENCODERS, FoundationModel

MAGIC = b"M4AD"
FORMAT_VERSION = 1
TECHNIQUES = ("LoRA", "Prefix", "Prompt", "BitFit")
MATRIX_ROLES = ("query", "value")

# assumed paper-scale geometry of the tunable components: (layers, width)
PAPER_DIMS = {
    "Backbone": (32, 4096),
    "IMG_enc": (32, 1280),
    "TXT_enc": (24, 1024),
    "AUD-B_enc": (12, 768),
    "AUD-I_enc": (4, 384),
    "IMU_enc": (6, 512),
}
PAPER_FFN = {"Backbone": 11008}
PAPER_EMBED = 1024  # shared multimodal embedding width
PAPER_GEN_INPUT = {"TTS_dec": 512, "IMG_dec": 768, "GEN_dec": 4096}


class PackError(ValueError):
    pass


class BadMagic(PackError):
    pass


class VersionMismatch(PackError):
    pass


class Truncated(PackError):
    pass


class ChecksumMismatch(PackError):
    pass


class AdapterError(ValueError):
    pass


@dataclass(frozen=True)
class PeftConfig:
    technique: str = "LoRA"
    rank: int = 4
    alpha: float | None = None
    targets: tuple = (("Backbone", "query"), ("Backbone", "value"))
    seed: int = field(default=0, compare=False)  # initialisation only; not stored in pack files
    head_only: bool = False  # a pack with no low-rank targets, only a projection head

    def __post_init__(self):
        if self.technique not in TECHNIQUES:
            raise AdapterError(f"unknown PEFT technique: {self.technique}")
        if self.rank < 1:
            raise AdapterError("rank must be at least 1")
        targets = tuple((str(c), str(r)) for c, r in self.targets)
        object.__setattr__(self, "targets", targets)
        if not targets and not self.head_only:
            raise AdapterError("targets must be non-empty")
        for comp, role in targets:
            if comp not in COMPONENTS:
                raise AdapterError(f"unknown target component: {comp}")
            if role not in MATRIX_ROLES:
                raise AdapterError(f"unknown target role: {role}")
        if len(set(targets)) != len(targets):
            raise AdapterError("duplicate target")
        alpha = float(self.rank if self.alpha is None else self.alpha)
        # stored as f32 in pack files; keep the in-memory value identical
        object.__setattr__(self, "alpha", float(np.float32(alpha)))

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank


@dataclass(frozen=True)
class TunableMask:
    backbone: bool
    encoder: bool
    projection: bool = True

    def allows(self, component: str) -> bool:
        if component == "Backbone":
            return self.backbone
        if component in ENCODERS:
            return self.encoder
        return False


def tunable_mask(path: int) -> TunableMask:
    if path in (1, 2):
        return TunableMask(backbone=True, encoder=False)
    if path == 3:
        return TunableMask(backbone=False, encoder=True)
    if path == 4:
        return TunableMask(backbone=False, encoder=False)
    raise AdapterError(f"unknown path: {path}")


@dataclass(frozen=True, eq=False)
class LoraPair:
    component: str
    role: str
    layer: int
    A: np.ndarray  # (rank, d_in)
    B: np.ndarray  # (d_out, rank)

    def __eq__(self, other):
        return (isinstance(other, LoraPair)
                and (self.component, self.role, self.layer) == (other.component, other.role, other.layer)
                and _same(self.A, other.A) and _same(self.B, other.B))

    __hash__ = None


def _same(a, b) -> bool:
    return a.shape == b.shape and a.dtype == b.dtype and np.array_equal(a, b)


def _ro32(a) -> np.ndarray:
    out = np.array(a, dtype=np.float32)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class AdapterPack:
    task_id: str
    config: PeftConfig
    pairs: tuple
    head: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=np.float32))
    version: int = FORMAT_VERSION

    def __eq__(self, other):
        return (isinstance(other, AdapterPack) and self.task_id == other.task_id
                and self.config == other.config and self.version == other.version
                and len(self.pairs) == len(other.pairs)
                and all(a == b for a, b in zip(self.pairs, other.pairs))
                and _same(self.head, other.head))

    __hash__ = None

    @property
    def trainable_count(self) -> int:
        return trainable_count(self)

    def lora(self, component: str, layer: int) -> dict:
        s = self.config.scaling
        return {p.role: (p.A, p.B, s) for p in self.pairs
                if p.component == component and p.layer == layer}

    def nbytes(self) -> int:
        return len(pack_bytes(self))

    def with_arrays(self, pairs_ab, head) -> "AdapterPack":
        """Same pack geometry with new (A, B) values and head, stored as float32."""
        pairs = tuple(LoraPair(p.component, p.role, p.layer, _ro32(a), _ro32(b))
                      for p, (a, b) in zip(self.pairs, pairs_ab))
        return AdapterPack(self.task_id, self.config, pairs, _ro32(head), self.version)


def desk_target_dims(model: FoundationModel) -> dict[str, tuple[int, int]]:
    return {c: (model.dims.layers(c), model.dims.dim) for c in COMPONENTS if model.dims.layers(c)}


def create_adapter(task_id: str, config: PeftConfig, target_dims: dict,
                   head_shape=(0, 0)) -> AdapterPack:
    """Fresh pack: A ~ U[-0.01, 0.01] seeded by (config seed, task id), B = 0, head = 0.

    ``target_dims`` maps component -> (layers, width); query/value maps are width x width.
    """
    if config.technique != "LoRA":
        raise AdapterError(f"{config.technique} packs are accounted for but not executable")
    rng = np.random.default_rng([config.seed, zlib.crc32(task_id.encode("utf-8"))])
    pairs = []
    for comp, role in config.targets:
        if comp not in target_dims:
            raise AdapterError(f"unknown target: {comp} has no attention layers")
        layers, d = target_dims[comp]
        if config.rank >= d:
            raise AdapterError(f"rank {config.rank} must be below min(d_in, d_out) = {d}")
        for layer in range(layers):
            a = rng.uniform(-0.01, 0.01, size=(config.rank, d))
            pairs.append(LoraPair(comp, role, layer, _ro32(a), _ro32(np.zeros((d, config.rank)))))
    return AdapterPack(task_id, config, tuple(pairs), _ro32(np.zeros(tuple(head_shape))))


def default_config(task, rank: int = 4, seed: int = 0) -> PeftConfig:
    """Targets implied by the task's path: backbone for Paths 1/2, its encoders for Path 3."""
    from .tasks import ENCODER_FOR

    if task.path in (1, 2):
        comps = ["Backbone"]
    elif task.path == 3:
        comps = sorted({ENCODER_FOR[m] for m in task.input_modality} | {"TXT_enc"})
    else:
        return PeftConfig(rank=rank, targets=(), seed=seed, head_only=True)
    return PeftConfig(rank=rank, targets=tuple((c, r) for c in comps for r in MATRIX_ROLES), seed=seed)


def head_shape_for(task, width: int, paper: bool = False) -> tuple[int, int]:
    """Projection-head geometry: Projection delta (Path 1), embedding map (3), generator input (4)."""
    if task.path == 2:
        return (0, 0)
    if not paper:
        return (width, width)
    if task.path == 1:
        return (PAPER_EMBED, PAPER_DIMS["Backbone"][1])
    if task.path == 3:
        return (PAPER_EMBED, PAPER_EMBED)
    from .tasks import GENERATOR_FOR

    w = PAPER_GEN_INPUT[GENERATOR_FOR[task.output_modality]]
    return (w, w)


def create_task_adapter(model: FoundationModel, task, rank: int = 4, seed: int = 0) -> AdapterPack:
    config = default_config(task, rank, seed)
    return create_adapter(task.id, config, desk_target_dims(model), head_shape_for(task, model.dims.dim))


def lora_param_count(config: PeftConfig, target_dims: dict) -> int:
    """Closed form: sum over targets and layers of rank * (d_in + d_out)."""
    total = 0
    for comp, _ in config.targets:
        layers, d = target_dims[comp]
        total += layers * config.rank * (d + d)
    return total


def peft_param_count(config: PeftConfig, target_dims: dict, ffn: dict | None = None) -> int:
    """Trainable parameters per technique (Prefix/Prompt/BitFit are accounting-only).

    Prefix: rank virtual key/value rows per layer; Prompt: rank input embeddings;
    BitFit: every bias vector of each attention/FFN block.
    """
    comps = sorted({c for c, _ in config.targets})
    if config.technique == "LoRA":
        return lora_param_count(config, target_dims)
    if config.technique == "Prefix":
        return sum(target_dims[c][0] * 2 * config.rank * target_dims[c][1] for c in comps)
    if config.technique == "Prompt":
        return sum(config.rank * target_dims[c][1] for c in comps)
    ffn = ffn or {}
    total = 0
    for c in comps:
        layers, d = target_dims[c]
        total += layers * (5 * d + ffn.get(c, 4 * d))
    return total


def trainable_count(pack: AdapterPack, mask: TunableMask | None = None) -> int:
    """Closed-form count; with a mask, only pairs the mask allows are counted."""
    total = 0
    for p in pack.pairs:
        if mask is None or mask.allows(p.component):
            total += pack.config.rank * (p.A.shape[1] + p.B.shape[0])
    return total + int(np.prod(pack.head.shape))


def tally_trainable(pack: AdapterPack, mask: TunableMask | None = None) -> int:
    """Brute-force count over the pack's tensors."""
    arrays = [pack.head]
    for p in pack.pairs:
        if mask is None or mask.allows(p.component):
            arrays += [p.A, p.B]
    return sum(a.size for a in arrays)


# -- attach / detach --------------------------------------------------------------

def check_compatible(model: FoundationModel, pack: AdapterPack) -> None:
    model.require_desk()
    d = model.dims.dim
    r = pack.config.rank
    for p in pack.pairs:
        layers = model.dims.layers(p.component)
        if not layers:
            raise AdapterError(f"unknown target: {p.component} has no attention layers")
        if p.layer >= layers:
            raise AdapterError(f"dimension mismatch: {p.component} has {layers} layers, pack targets layer {p.layer}")
        if p.A.shape != (r, d) or p.B.shape != (d, r):
            raise AdapterError(f"dimension mismatch: {p.component}.{p.role} expects A {(r, d)} and B {(d, r)}, "
                               f"got {p.A.shape} and {p.B.shape}")
    if pack.head.size and pack.head.shape != (d, d):
        raise AdapterError(f"dimension mismatch: projection head must be {(d, d)}, got {pack.head.shape}")


def attach(model: FoundationModel, pack: AdapterPack) -> FoundationModel:
    check_compatible(model, pack)
    with model.lock:
        if pack.task_id in model.adapters:
            raise AdapterError(f"duplicate task id: {pack.task_id}")
        model.adapters[pack.task_id] = pack
    return model


def detach(model: FoundationModel, task_id: str) -> FoundationModel:
    with model.lock:
        if task_id not in model.adapters:
            raise AdapterError(f"no adapter attached for task {task_id}")
        del model.adapters[task_id]
    return model


# -- serialization ------------------------------------------------------------------

_COMP_CODE = {c: i for i, c in enumerate(COMPONENTS)}
_ROLE_CODE = {r: i for i, r in enumerate(MATRIX_ROLES)}
_TECH_CODE = {t: i for i, t in enumerate(TECHNIQUES)}


def pack_bytes(pack: AdapterPack) -> bytes:
    tid = pack.task_id.encode("utf-8")
    if len(tid) > 0xFFFF or len(pack.pairs) > 0xFFFF:
        raise AdapterError("task id or target list too long for the pack format")
    body = io.BytesIO()
    c = pack.config
    body.write(struct.pack("<HH", pack.version, len(tid)))
    body.write(tid)
    body.write(struct.pack("<BHfH", _TECH_CODE[c.technique], c.rank, c.alpha, len(pack.pairs)))
    for p in pack.pairs:
        body.write(struct.pack("<BBII", _COMP_CODE[p.component], _ROLE_CODE[p.role], p.A.shape[1], p.B.shape[0]))
        body.write(np.ascontiguousarray(p.A, dtype="<f4").tobytes())
        body.write(np.ascontiguousarray(p.B, dtype="<f4").tobytes())
    rows, cols = pack.head.shape
    body.write(struct.pack("<II", rows, cols))
    body.write(np.ascontiguousarray(pack.head, dtype="<f4").tobytes())
    payload = body.getvalue()
    return MAGIC + payload + struct.pack("<I", zlib.crc32(payload))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise Truncated(f"pack truncated at byte {len(self.buf)} (needed {self.pos + n})")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float32).reshape(shape)


def parse_pack(data: bytes) -> AdapterPack:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagic("not an adapter pack (bad magic)")
    if len(data) < 8:
        raise Truncated("pack truncated before checksum")
    payload, (crc,) = data[4:-4], struct.unpack("<I", data[-4:])
    r = _Reader(payload)
    version, tid_len = r.unpack("<HH")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"pack version {version}, runtime expects {FORMAT_VERSION}")
    if zlib.crc32(payload) != crc:
        # a short file also fails the checksum; report which it is
        raise Truncated("pack truncated") if _looks_truncated(payload) else ChecksumMismatch("pack checksum mismatch")
    try:
        task_id = r.take(tid_len).decode("utf-8")
    except UnicodeDecodeError:
        raise PackError("task id is not valid UTF-8") from None
    tech, rank, alpha, count = r.unpack("<BHfH")
    if tech >= len(TECHNIQUES):
        raise PackError(f"unknown technique code {tech}")
    pairs, seen = [], {}
    for _ in range(count):
        ci, ri, d_in, d_out = r.unpack("<BBII")
        if ci >= len(COMPONENTS) or ri >= len(MATRIX_ROLES):
            raise PackError("unknown component or role code")
        comp, role = COMPONENTS[ci], MATRIX_ROLES[ri]
        layer = seen.get((comp, role), 0)
        seen[(comp, role)] = layer + 1
        a = r.floats((rank, d_in))
        b = r.floats((d_out, rank))
        pairs.append(LoraPair(comp, role, layer, _ro32(a), _ro32(b)))
    rows, cols = r.unpack("<II")
    head = _ro32(r.floats((rows, cols)))
    if r.pos != len(payload):
        raise PackError(f"{len(payload) - r.pos} bytes of trailing data in pack")
    targets = tuple(dict.fromkeys((p.component, p.role) for p in pairs))
    config = PeftConfig(TECHNIQUES[tech], rank, alpha, targets, head_only=not targets)
    return AdapterPack(task_id, config, tuple(pairs), head, version)


def _looks_truncated(payload: bytes) -> bool:
    """Walk the declared layout; True when it needs more bytes than are present."""
    try:
        r = _Reader(payload)
        _, tid_len = r.unpack("<HH")
        r.take(tid_len)
        _, rank, _, count = r.unpack("<BHfH")
        for _ in range(count):
            _, _, d_in, d_out = r.unpack("<BBII")
            r.take(4 * rank * (d_in + d_out))
        rows, cols = r.unpack("<II")
        r.take(4 * rows * cols)
        return False
    except Truncated:
        return True


def save_pack(pack: AdapterPack, destination) -> int:
    """Write atomically; returns the byte count."""
    data = pack_bytes(pack)
    dest = Path(destination)
    tmp = dest.with_name(dest.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, dest)
    return len(data)


def load_pack(source) -> AdapterPack:
    return parse_pack(Path(source).read_bytes())
