"""Benchmark task registry, path validation, routing and prompt rendering."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

CATEGORIES = ("NLP", "CV", "Audio", "Sensing", "Multimodal")
METRICS = ("accuracy", "F1", "BLEU", "ROUGE1", "WER", "recall", "mAP", "mIoU", "SSIM",
           "MAE", "MSE", "MCD", "FID", "AP", "rank", "CLIP-score")
INPUT_MODALITIES = ("text", "image", "video", "audio_background", "audio_intent", "imu")
OUTPUT_MODALITIES = ("text", "label", "speech", "image")
PROMPT_TARGETS = ("text-embedding", "backbone")

ENCODER_FOR = {
    "image": "IMG_enc",
    "video": "IMG_enc",
    "text": "TXT_enc",
    "audio_background": "AUD-B_enc",
    "audio_intent": "AUD-I_enc",
    "imu": "IMU_enc",
}
GENERATOR_FOR = {"text": "GEN_dec", "label": "GEN_dec", "speech": "TTS_dec", "image": "IMG_dec"}
# raw inputs a generator can take on its own (Path-4)
GENERATOR_INPUT = {"TTS_dec": "text", "IMG_dec": "image"}

_SLOT = re.compile(r"\[([^\[\]]*)\]")
_SLOT_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")

FIELDS = {
    "id", "category", "task", "application", "dataset", "input_modality", "output_modality",
    "path", "prompt", "metric", "baseline_model", "baseline_result", "baseline_result_text",
    "result_device",
}
REQUIRED = FIELDS - {"application", "baseline_result_text", "result_device", "prompt"}


class RegistryError(ValueError):
    pass


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    target: str
    template: str

    def __post_init__(self):
        if self.target not in PROMPT_TARGETS:
            raise RegistryError(f"unknown prompt target: {self.target}")
        for name in _SLOT.findall(self.template):
            if not _SLOT_NAME.match(name):
                raise RegistryError(f"malformed slot [{name}] in template {self.template!r}")
        if self.template.count("[") != self.template.count("]"):
            raise RegistryError(f"unbalanced brackets in template {self.template!r}")

    @property
    def slots(self) -> tuple[str, ...]:
        return tuple(_SLOT.findall(self.template))


@dataclass(frozen=True)
class TaskSpec:
    id: str
    category: str
    task: str
    dataset: str
    input_modality: tuple[str, ...]
    output_modality: str
    path: int
    prompt: PromptTemplate | None
    metric: str
    baseline_model: str
    baseline_result: float
    baseline_result_text: str = ""
    result_device: str = "a100"
    application: str = ""

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        unknown = set(d) - FIELDS
        if unknown:
            raise RegistryError(f"unknown field(s) {sorted(unknown)} in task {d.get('id')!r}")
        missing = REQUIRED - set(d)
        if missing:
            raise RegistryError(f"missing field(s) {sorted(missing)} in task {d.get('id')!r}")
        if d["category"] not in CATEGORIES:
            raise RegistryError(f"unknown category {d['category']!r}")
        if d["metric"] not in METRICS:
            raise RegistryError(f"unknown metric {d['metric']!r} in task {d['id']!r}")
        if d["path"] not in (1, 2, 3, 4):
            raise RegistryError(f"path must be 1..4, got {d['path']!r}")
        inputs = d["input_modality"]
        if isinstance(inputs, str):
            inputs = [inputs]
        prompt = d.get("prompt")
        return cls(
            id=str(d["id"]), category=d["category"], task=d["task"], dataset=d["dataset"],
            input_modality=tuple(inputs), output_modality=d["output_modality"], path=int(d["path"]),
            prompt=None if prompt is None else PromptTemplate(prompt["target"], prompt["template"]),
            metric=d["metric"], baseline_model=d["baseline_model"],
            baseline_result=float(d["baseline_result"]),
            baseline_result_text=d.get("baseline_result_text", ""),
            result_device=d.get("result_device", "a100"), application=d.get("application", ""),
        )

    def to_dict(self) -> dict:
        return {
            "id": self.id, "category": self.category, "task": self.task,
            "application": self.application, "dataset": self.dataset,
            "input_modality": list(self.input_modality), "output_modality": self.output_modality,
            "path": self.path,
            "prompt": None if self.prompt is None else {"target": self.prompt.target,
                                                        "template": self.prompt.template},
            "metric": self.metric, "baseline_model": self.baseline_model,
            "baseline_result": self.baseline_result, "baseline_result_text": self.baseline_result_text,
            "result_device": self.result_device,
        }


def default_registry_path() -> Path:
    return Path(str(resources.files("m4fw").joinpath("fixtures", "registry.json")))


def parse_registry(rows) -> list[TaskSpec]:
    if not isinstance(rows, list):
        raise RegistryError("registry must be a JSON array")
    specs, seen = [], set()
    for row in rows:
        if not isinstance(row, dict):
            raise RegistryError("registry rows must be objects")
        spec = TaskSpec.from_dict(row)
        if spec.id in seen:
            raise RegistryError(f"duplicate task id {spec.id!r}")
        seen.add(spec.id)
        specs.append(spec)
    return specs


def load_registry(source: str | Path | None = None) -> list[TaskSpec]:
    path = default_registry_path() if source is None else Path(source)
    try:
        rows = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise RegistryError(f"malformed registry JSON: {exc}") from None
    return parse_registry(rows)


def registry_by_id(source=None) -> dict[str, TaskSpec]:
    return {t.id: t for t in load_registry(source)}


def validate_task(task: TaskSpec) -> list[str]:
    """Return the list of path/modality violations (empty when the task is consistent)."""
    v = []
    bad_in = [m for m in task.input_modality if m not in INPUT_MODALITIES]
    if bad_in:
        v.append(f"unknown input modality: {', '.join(bad_in)}")
    if not task.input_modality:
        v.append("task has no input modality")
    if task.output_modality not in OUTPUT_MODALITIES:
        v.append(f"unknown output modality: {task.output_modality}")
    if v:
        return v
    inputs = set(task.input_modality)
    if task.path == 1:
        if inputs == {"text"}:
            v.append("Path-1 needs a non-text modality to embed; text-only tasks take Path-2")
    elif task.path == 2:
        if inputs != {"text"}:
            v.append("Path-2 activates only the backbone and generator")
        if task.output_modality == "label":
            v.append("Path-2 classification must be reformulated as text generation")
        if task.prompt is not None and task.prompt.target != "backbone":
            v.append("Path-2 prompts must target the backbone")
    elif task.path == 3:
        if task.output_modality != "label":
            v.append("Path-3 activates only the multimodal embedding and can only classify")
        if task.prompt is None or task.prompt.target != "text-embedding":
            v.append("Path-3 needs a text-embedding prompt for its labels")
    elif task.path == 4:
        gen = GENERATOR_FOR[task.output_modality]
        if len(inputs) != 1 or GENERATOR_INPUT.get(gen) not in inputs:
            v.append("Path-4 activates only a specific generator; multiple components would be needed")
        if task.prompt is not None:
            v.append("Path-4 tasks take no prompt")
    return v


@dataclass(frozen=True)
class Route:
    path: int
    activation: frozenset[str]
    generator: str | None


def route(task: TaskSpec) -> Route:
    """Activation set and generator for a validated task (pure function of the spec)."""
    encoders = {ENCODER_FOR[m] for m in task.input_modality if m != "text"}
    gen = None if task.path == 3 else GENERATOR_FOR[task.output_modality]
    embeds_prompt = task.prompt is not None and task.prompt.target == "text-embedding"
    if task.path == 1:
        act = encoders | {"Projection", "Backbone", gen}
        if embeds_prompt:
            act.add("TXT_enc")
    elif task.path == 2:
        act = {"Backbone", gen}
    elif task.path == 3:
        act = encoders | {"TXT_enc"}
    else:
        act = {gen}
    return Route(task.path, frozenset(act), gen)


def render_prompt(task: TaskSpec | PromptTemplate, values: dict[str, str] | None = None) -> str:
    tpl = task if isinstance(task, PromptTemplate) else task.prompt
    if tpl is None:
        raise PromptError(f"task {getattr(task, 'id', '?')} has no prompt template")
    values = dict(values or {})
    slots = tpl.slots
    unknown = set(values) - set(slots)
    if unknown:
        raise PromptError(f"unknown slot(s): {', '.join(sorted(unknown))}")
    missing = [s for s in slots if s not in values]
    if missing:
        raise PromptError(f"missing slot(s): {', '.join(missing)}")
    return _SLOT.sub(lambda m: str(values[m.group(1)]), tpl.template)


def label_prompts(task: TaskSpec, labels) -> list[str]:
    """Render one text-embedding prompt per class label (single-slot templates)."""
    slots = task.prompt.slots if task.prompt else ()
    if len(slots) != 1:
        return [str(label) for label in labels]
    return [render_prompt(task, {slots[0]: label}) for label in labels]
