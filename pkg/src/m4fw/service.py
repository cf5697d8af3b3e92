"""The foundation model as a local system service.

Apps register adapter packs and invoke tasks over newline-delimited JSON on a
Unix stream socket.  Many connections may be open; each carries one request
at a time.  Inference runs on a single worker thread fed by a FIFO queue, so
invocations against the shared model are strictly serialized.  Adapter
residency is bounded by a byte budget; registration under pressure evicts the
least recently used resident adapter, and a pack that cannot fit even into an
empty budget is registered cold.
"""

from __future__ import annotations

import base64
import binascii
import json
import os
import queue
import socket
import socketserver
import threading
import time
from collections import OrderedDict
from concurrent.futures import Future
from dataclasses import dataclass

import numpy as np

from .adapters import PackError, AdapterError, check_compatible, parse_pack
from .model import FoundationModel, build_foundation, cost_of, execute_path, iter_arrays
from .tasks import TaskSpec, registry_by_id, route

KINDS = ("register", "invoke", "list", "status", "evict")
DEFAULT_HEADROOM = 64 * 2**20


class ServiceError(Exception):
    pass


@dataclass
class Entry:
    task: TaskSpec
    pack: object
    nbytes: int
    resident: bool
    invocations: int = 0


def model_bytes(model: FoundationModel) -> int:
    return sum(a.nbytes for w in model.weights.values() for _, a in iter_arrays(w))


def budget_from_env(default: int) -> int:
    raw = os.environ.get("M4_BUDGET_BYTES")
    if raw is None:
        return default
    try:
        value = int(float(raw))
    except ValueError:
        raise ServiceError(f"M4_BUDGET_BYTES is not a number: {raw!r}") from None
    if value <= 0:
        raise ServiceError("M4_BUDGET_BYTES must be positive")
    return value


def decode_input(item: dict):
    """One wire input -> (modality, payload).  Text is UTF-8; arrays are little-endian float64."""
    if not isinstance(item, dict) or "modality" not in item or "data" not in item:
        raise ServiceError("input needs 'modality' and 'data'")
    try:
        raw = base64.b64decode(item["data"], validate=True)
    except (binascii.Error, TypeError):
        raise ServiceError("input data is not valid base64") from None
    modality = item["modality"]
    if modality == "text":
        return modality, raw
    arr = np.frombuffer(raw, dtype="<f8")
    shape = item.get("shape")
    if shape is not None:
        try:
            arr = arr.reshape([int(s) for s in shape])
        except ValueError:
            raise ServiceError(f"data of {arr.size} values does not fit shape {shape}") from None
    return modality, arr


def encode_input(modality: str, payload) -> dict:
    if modality == "text":
        data = payload.encode("utf-8") if isinstance(payload, str) else bytes(payload)
        return {"modality": "text", "data": base64.b64encode(data).decode("ascii")}
    arr = np.asarray(payload, dtype="<f8")
    return {"modality": modality, "data": base64.b64encode(arr.tobytes()).decode("ascii"),
            "shape": list(arr.shape)}


class FirmwareService:
    def __init__(self, model: FoundationModel | None = None, budget: int | None = None, registry=None,
                 seed: int = 0):
        self.model = model or build_foundation("desk", seed)
        self.model.require_desk()
        self.paper = build_foundation("paper")
        self.registry = registry if registry is not None else registry_by_id()
        self.model_bytes = model_bytes(self.model)
        default = self.model_bytes + DEFAULT_HEADROOM
        self.budget = budget if budget is not None else budget_from_env(default)
        if self.budget < self.model_bytes:
            raise ServiceError(f"budget {self.budget} cannot hold the foundation model ({self.model_bytes} bytes)")
        self.entries: OrderedDict[str, Entry] = OrderedDict()  # LRU order: oldest first
        self.counters = {"invocations": 0, "cold_starts": 0, "rejections": 0, "registrations": 0,
                         "evictions": 0, "requests": 0}
        self.lock = threading.RLock()
        self._jobs: queue.Queue = queue.Queue()
        self._worker = threading.Thread(target=self._run, name="m4-inference", daemon=True)
        self._worker.start()

    # -- bookkeeping --------------------------------------------------------------------

    def resident_bytes(self) -> int:
        return sum(e.nbytes for e in self.entries.values() if e.resident)

    def bytes_used(self) -> int:
        return self.model_bytes + self.resident_bytes()

    def _free(self) -> int:
        return self.budget - self.bytes_used()

    def _make_resident(self, tid: str) -> bool:
        """Evict LRU residents until ``tid`` fits; never evicts when it cannot fit at all."""
        e = self.entries[tid]
        if self.model_bytes + e.nbytes > self.budget:
            return False
        for other_id in list(self.entries):
            if self._free() >= e.nbytes:
                break
            other = self.entries[other_id]
            if other_id != tid and other.resident:
                self._set_cold(other_id)
                self.counters["evictions"] += 1
        self.model.adapters[tid] = e.pack
        e.resident = True
        return True

    def _set_cold(self, tid: str) -> None:
        e = self.entries[tid]
        e.resident = False
        self.model.adapters.pop(tid, None)

    # -- operations ---------------------------------------------------------------------

    def register(self, task_id: str, pack_bytes: bytes, spec: dict | None = None) -> dict:
        try:
            pack = parse_pack(pack_bytes)
        except PackError as exc:
            raise ServiceError(f"malformed pack: {exc}") from None
        if pack.task_id != task_id:
            raise ServiceError(f"pack is for task {pack.task_id!r}, not {task_id!r}")
        try:
            check_compatible(self.model, pack)
        except AdapterError as exc:
            raise ServiceError(f"pack does not fit the model: {exc}") from None
        task = TaskSpec.from_dict(spec) if spec else self.registry.get(task_id)
        if task is None:
            raise ServiceError(f"unknown task: {task_id}")
        with self.lock:
            if task_id in self.entries:
                raise ServiceError(f"duplicate task id: {task_id}")
            self.entries[task_id] = Entry(task, pack, len(pack_bytes), False)
            resident = self._make_resident(task_id)
            self.counters["registrations"] += 1
            return {"task": task_id, "resident": resident, "bytes": len(pack_bytes)}

    def invoke(self, task_id: str, inputs, options: dict | None = None) -> dict:
        with self.lock:
            if task_id not in self.entries:
                raise ServiceError(f"unknown task: {task_id}")
        fut: Future = Future()
        self._jobs.put((fut, task_id, inputs, options or {}))
        return fut.result()

    def _run(self):
        while True:
            job = self._jobs.get()
            if job is None:
                return
            fut, task_id, inputs, options = job
            try:
                fut.set_result(self._execute(task_id, inputs, options))
            except BaseException as exc:  # delivered to the waiting caller
                fut.set_exception(exc)

    def _execute(self, task_id, inputs, options) -> dict:
        with self.lock:
            e = self.entries.get(task_id)
            if e is None:
                raise ServiceError(f"unknown task: {task_id}")
            cold = not e.resident
            if cold:
                self.counters["cold_starts"] += 1
                self._make_resident(task_id)
            self.entries.move_to_end(task_id)
            t0 = time.perf_counter()
            try:
                out = execute_path(self.model, e.task, inputs, options=options, adapter=e.pack)
            except ValueError as exc:
                raise ServiceError(str(exc)) from None
            elapsed = time.perf_counter() - t0
            e.invocations += 1
            self.counters["invocations"] += 1
            params, gflops = cost_of(self.paper, out.activated)
            return {"output": out.to_json(), "cold_start": cold,
                    "cost": {"activated": sorted(out.activated), "gflops": gflops, "params": params,
                             "latency_s": elapsed, "bytes_used": self.bytes_used()}}

    def evict(self, task_id: str) -> dict:
        with self.lock:
            if task_id not in self.entries:
                raise ServiceError(f"unknown task: {task_id}")
            was = self.entries[task_id].resident
            if was:
                self._set_cold(task_id)
                self.counters["evictions"] += 1
            return {"task": task_id, "evicted": was}

    def list_tasks(self) -> dict:
        with self.lock:
            return {"tasks": [{"task": tid, "path": e.task.path, "resident": e.resident, "bytes": e.nbytes,
                               "invocations": e.invocations} for tid, e in self.entries.items()]}

    def status(self) -> dict:
        with self.lock:
            return {"tasks": len(self.entries),
                    "resident": [tid for tid, e in self.entries.items() if e.resident],
                    "model_bytes": self.model_bytes, "bytes_used": self.bytes_used(),
                    "budget_bytes": self.budget, "counters": dict(self.counters)}

    # -- wire dispatch --------------------------------------------------------------------

    def handle(self, msg) -> dict:
        """One request object -> exactly one response object (errors included)."""
        rid = msg.get("id") if isinstance(msg, dict) else None
        with self.lock:
            self.counters["requests"] += 1
        try:
            if not isinstance(msg, dict):
                raise ServiceError("request must be a JSON object")
            kind = msg.get("kind")
            if kind not in KINDS:
                raise ServiceError(f"unknown kind: {kind!r}")
            if kind == "register":
                pack = msg.get("pack")
                if not isinstance(pack, str):
                    raise ServiceError("register needs a base64 'pack'")
                try:
                    raw = base64.b64decode(pack, validate=True)
                except binascii.Error:
                    raise ServiceError("pack is not valid base64") from None
                result = self.register(_need_task(msg), raw, msg.get("spec"))
            elif kind == "invoke":
                items = msg.get("input")
                if items is None:
                    raise ServiceError("invoke needs 'input'")
                items = items if isinstance(items, list) else [items]
                payload = dict(decode_input(i) for i in items)
                result = self.invoke(_need_task(msg), payload, msg.get("options"))
            elif kind == "evict":
                result = self.evict(_need_task(msg))
            elif kind == "list":
                result = self.list_tasks()
            else:
                result = self.status()
            return {"id": rid, "ok": True, "result": result}
        except (ServiceError, ValueError) as exc:
            with self.lock:
                self.counters["rejections"] += 1
            return {"id": rid, "ok": False, "error": str(exc)}
        except Exception as exc:  # a bad request must never take the service down
            with self.lock:
                self.counters["rejections"] += 1
            return {"id": rid, "ok": False, "error": f"internal error: {type(exc).__name__}: {exc}"}

    def handle_line(self, line: bytes | str) -> dict:
        try:
            msg = json.loads(line)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            with self.lock:
                self.counters["requests"] += 1
                self.counters["rejections"] += 1
            return {"id": None, "ok": False, "error": f"malformed frame: {exc}"}
        return self.handle(msg)

    def close(self):
        self._jobs.put(None)
        self._worker.join(timeout=5)


def _need_task(msg) -> str:
    tid = msg.get("task")
    if not isinstance(tid, str) or not tid:
        raise ServiceError("request needs a 'task' id")
    return tid


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        svc: FirmwareService = self.server.service
        for line in self.rfile:
            if not line.strip():
                continue
            resp = svc.handle_line(line)
            self.wfile.write((json.dumps(resp) + "\n").encode("utf-8"))
            self.wfile.flush()


class ServiceServer(socketserver.ThreadingUnixStreamServer):
    daemon_threads = True
    # the default backlog of 5 refuses bursts of simultaneous connects with EAGAIN
    request_queue_size = 128

    def __init__(self, path: str, service: FirmwareService):
        if os.path.exists(path):
            os.unlink(path)
        super().__init__(path, _Handler)
        self.service = service
        self.path = path

    def serve_in_thread(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, name="m4-server", daemon=True)
        t.start()
        return t

    def close(self):
        self.shutdown()
        self.server_close()
        self.service.close()
        if os.path.exists(self.path):
            os.unlink(self.path)


class ServiceClient:
    """Blocking client: one connection, one request in flight."""

    def __init__(self, path: str, timeout: float = 60.0):
        self.sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        self.sock.settimeout(timeout)
        self.sock.connect(path)
        self.rfile = self.sock.makefile("rb")
        self._n = 0

    def send_raw(self, line: bytes) -> dict:
        self.sock.sendall(line.rstrip(b"\n") + b"\n")
        return json.loads(self.rfile.readline())

    def request(self, kind: str, **fields) -> dict:
        self._n += 1
        msg = {"id": fields.pop("id", f"r{self._n}"), "kind": kind, **fields}
        return self.send_raw(json.dumps(msg).encode("utf-8"))

    def close(self):
        self.rfile.close()
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
