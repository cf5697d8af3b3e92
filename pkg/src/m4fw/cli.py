"""Command-line entry point: ``m4fw <verb> [flags]``.

Reports go to ``--out`` (written atomically) or standard output.  ``--plot``
renders a PNG next to the report plus a gnuplot script that redraws it from
the CSV.  Usage errors exit 2; runtime errors exit 1 with one line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import signal
import sys
import tempfile
import threading
import time
from pathlib import Path

import numpy as np

from . import cost, plots
from .adapters import PeftConfig, default_config, load_pack, save_pack
from .model import build_foundation, cost_of, execute_path
from .nn.trace import OpTrace, trace_summary
from .tasks import load_registry, registry_by_id, render_prompt, route, validate_task
from .trainer import KIND_FOR_PATH, TrainConfig, evaluate, fine_tune, initial_pack, make_dataset

VERBS = ("bench", "train", "eval", "serve", "cost-storage", "cost-memory", "whatif", "census", "registry")
FORMATS = ("fp32", "fp16", "int8", "int4")
PAYLOAD_SHAPE = {"imu": (6, 16), "image": (3, 16, 16), "video": (2, 3, 16, 16),
                 "audio_intent": (64,), "audio_background": (64,)}


class UsageError(Exception):
    pass


# -- output helpers ------------------------------------------------------------------

def write_atomic(path: str | Path, data: bytes | str) -> None:
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit(out: str | None, text: str) -> None:
    if out:
        write_atomic(out, text)
    else:
        sys.stdout.write(text)


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def to_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _fmt(x) -> str:
    return "" if x is None else repr(round(float(x), 10))


def emit_plot(args, png: bytes, script: str) -> None:
    stem = Path(args.out).with_suffix("")
    write_atomic(stem.with_suffix(".png"), png)
    write_atomic(stem.with_suffix(".gp"), script)


def sample_payload(modality: str, rng: np.random.Generator):
    if modality == "text":
        return "the quick brown fox jumps over the lazy dog"
    return rng.normal(0.0, 1.0, size=PAYLOAD_SHAPE[modality])


# -- verbs -----------------------------------------------------------------------------

def cmd_bench(args) -> int:
    reg = registry_by_id(args.registry)
    ids = args.tasks.split(",") if args.tasks else list(reg)
    model = build_foundation("desk", args.seed)
    paper = build_foundation("paper")
    rng = np.random.default_rng(args.seed)
    rows = []
    for tid in ids:
        if tid not in reg:
            raise ValueError(f"unknown task: {tid}")
        task = reg[tid]
        payload = {m: sample_payload(m, rng) for m in task.input_modality}
        slots = {k: "x" for k in task.prompt.slots} if task.prompt else {}
        options = {"labels": ["yes", "no", "maybe"], "slots": slots, "max_new_tokens": args.max_new_tokens}
        trace = OpTrace()
        t0 = time.perf_counter()
        out = execute_path(model, task, payload, trace=trace, options=options)
        elapsed = time.perf_counter() - t0
        params, gflops = cost_of(paper, route(task).activation)
        flops, kinds = trace_summary(trace)
        row = [tid, task.path, " ".join(sorted(out.activated)), params, _fmt(gflops), flops, len(kinds)]
        if args.timing:
            row.append(f"{elapsed:.6f}")
        rows.append(row)
    header = ["task", "path", "activated", "paper_params", "paper_gflops", "desk_flops", "desk_op_kinds"]
    if args.timing:
        header.append("desk_latency_s")
    emit(args.out, to_csv(header, rows))
    if args.plot:
        png = plots.bar_png([r[0] for r in rows], {"paper GFLOPs": [float(r[4]) for r in rows]},
                            "GFLOPs", "Activated paper-profile cost per task")
        script = plots.gnuplot_script(Path(args.out).name, Path(args.out).with_suffix(".png").name, 0,
                                      {5: "paper GFLOPs"}, "task", "GFLOPs", "Activated cost per task")
        emit_plot(args, png, script.replace("with linespoints", "with boxes"))
    return 0


def _task_and_data(args):
    reg = registry_by_id(args.registry)
    if args.task not in reg:
        raise ValueError(f"unknown task: {args.task}")
    task = reg[args.task]
    violations = validate_task(task)
    if violations:
        raise ValueError("; ".join(violations))
    kind = KIND_FOR_PATH.get(task.path)
    if kind is None:
        raise ValueError(f"Path-{task.path} tasks have no synthetic training data")
    non_text = [m for m in task.input_modality if m != "text"]
    modality = non_text[0] if non_text else "text"
    data = make_dataset(kind, args.seed, args.dataset_size, args.classes,
                        modality if kind != "path2-lm" else "imu")
    return task, data


def cmd_train(args) -> int:
    task, data = _task_and_data(args)
    model = build_foundation("desk", args.seed)
    base = default_config(task, args.rank, args.seed)
    peft = PeftConfig(base.technique, args.rank, args.alpha, base.targets, args.seed, base.head_only)
    cfg = TrainConfig(steps=args.steps, batch_size=args.batch_size, lr=args.lr, seed=args.seed)
    pack, log = fine_tune(model, task, data, peft, cfg)
    nbytes = save_pack(pack, args.pack)
    summary = {"task": task.id, "path": task.path, "steps": args.steps, "seed": args.seed,
               "pack": str(args.pack), "pack_bytes": nbytes, "dataset": data.manifest(),
               "final_loss": log.losses[-1] if log.rows else None}
    if args.evaluate:
        summary["metric"] = task.metric
        summary["eval"] = evaluate(model, task, data, pack)
    if args.log:
        write_atomic(args.log, log.to_csv())
        if args.plot:
            steps = [r[0] for r in log.rows]
            png = plots.line_png(steps, {"loss": log.losses}, "step", "loss", f"{task.id} training loss")
            log_path = Path(args.log)
            write_atomic(log_path.with_suffix(".png"), png)
            write_atomic(log_path.with_suffix(".gp"),
                         plots.gnuplot_script(log_path.name, log_path.with_suffix(".png").name, 1, {2: "loss"},
                                              "step", "loss", f"{task.id} training loss"))
    elif args.plot:
        raise UsageError("--plot needs --log")
    emit(args.out, to_json(summary))
    return 0


def cmd_eval(args) -> int:
    task, data = _task_and_data(args)
    model = build_foundation("desk", args.seed)
    pack = load_pack(args.pack) if args.pack else initial_pack(model, task, seed=args.seed)
    if pack.task_id != task.id:
        raise ValueError(f"pack is for task {pack.task_id}, not {task.id}")
    metric = args.metric or task.metric
    value = evaluate(model, task, data, pack, metric)
    emit(args.out, to_json({"task": task.id, "metric": metric, "value": value, "seed": args.seed,
                            "n_eval": int(data.eval.size), "pack": args.pack}))
    return 0


def cmd_serve(args) -> int:
    from .service import FirmwareService, ServiceServer

    model = build_foundation("desk", args.seed)
    svc = FirmwareService(model, budget=args.budget, registry=registry_by_id(args.registry))
    server = ServiceServer(args.socket, svc)
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    server.serve_in_thread()
    print(json.dumps({"socket": args.socket, "budget_bytes": svc.budget, "model_bytes": svc.model_bytes}),
          flush=True)
    stop.wait()
    server.close()
    return 0


def cmd_cost_storage(args) -> int:
    ts = cost.ts_sizes(args.ts_calibration) if args.ts_calibration else None
    ad = cost.adapter_bytes(args.adapter_sizes) if args.adapter_sizes else None
    curve = cost.storage_curve(args.tasks, ts, ad, args.format.upper(), args.quantize_generators)
    emit(args.out, to_csv(["n", "ts_bytes", "fm_bytes"], [[p.n, p.ts_bytes, p.fm_bytes] for p in curve]))
    last = curve[-1]
    summary = {"n": last.n, "ts_bytes": last.ts_bytes, "fm_bytes": last.fm_bytes,
               "ratio": round(last.ts_bytes / last.fm_bytes, 6), "crossover": cost.crossover(curve),
               "crossovers": cost.crossovers(curve)}
    if args.summary:
        write_atomic(args.summary, to_json(summary))
    if args.plot:
        xs = [p.n for p in curve]
        png = plots.line_png(xs, {"TS": [p.ts_bytes / 1e9 for p in curve], "FM": [p.fm_bytes / 1e9 for p in curve]},
                             "tasks", "storage (GB)", f"Storage vs task count (FM {args.format.upper()})")
        emit_plot(args, png, plots.gnuplot_script(Path(args.out).name, Path(args.out).with_suffix(".png").name,
                                                  1, {2: "TS", 3: "FM"}, "tasks", "bytes", "Storage vs task count"))
    return 0


def _budget(args) -> float:
    if args.budget is not None:
        return args.budget
    raw = os.environ.get("M4_BUDGET_BYTES")
    return float(raw) if raw else 12e9


def cmd_cost_memory(args) -> int:
    ts = cost.ts_sizes(args.ts_calibration, key="runtime_bytes") if args.ts_calibration else None
    ad = cost.adapter_bytes(args.adapter_sizes) if args.adapter_sizes else None
    budget = _budget(args)
    fm = cost.memory_footprint("FM", args.tasks, budget, args.format.upper(), args.quantize_generators,
                               adapters=ad)
    tsr = cost.memory_footprint("TS", args.tasks, budget, ts=ts)
    no_adapters = fm.base_bytes
    report = {"budget_bytes": budget, "tasks": args.tasks, "FM": fm.to_json(), "TS": tsr.to_json(),
              "fm_adapter_increment": round((fm.weight_bytes - no_adapters) / no_adapters, 6)}
    emit(args.out, to_json(report))
    return 0


def cmd_whatif(args) -> int:
    speedup = args.speedup
    if args.profile:
        if speedup is not None:
            raise UsageError("--speedup and --profile are exclusive")
        profiles = cost.load_profiles(args.profiles)
        if args.profile not in profiles:
            raise ValueError(f"unknown processor profile: {args.profile}")
        speedup = profiles[args.profile].speedup
    rows = cost.whatif_table(args.table, speedup=speedup)
    out_rows = [[r.task, r.path, r.stage, r.unit, _fmt(r.cpu_latency), _fmt(r.speedup), _fmt(r.npu_projected),
                 _fmt(r.npu_reported), _fmt(r.rel_error)] for r in rows]
    emit(args.out, to_csv(["task", "path", "stage", "unit", "cpu_latency", "speedup", "npu_projected",
                           "npu_reported", "rel_error"], out_rows))
    if args.plot:
        labels = [f"{r.task} / {r.stage}" for r in rows]
        png = plots.bar_png(labels, {"projected": [r.npu_projected for r in rows],
                                     "reported": [r.npu_reported or 0.0 for r in rows]},
                            "NPU latency (s or s/token)", "What-if NPU projection")
        script = plots.gnuplot_script(Path(args.out).name, Path(args.out).with_suffix(".png").name, 0,
                                      {7: "projected", 8: "reported"}, "row", "latency", "What-if NPU projection")
        emit_plot(args, png, script)
    return 0


def cmd_census(args) -> int:
    inv = cost.load_inventories(args.inventories)
    profiles = cost.load_profiles(args.profiles)
    if args.profile not in profiles:
        raise ValueError(f"unknown processor profile: {args.profile}")
    prof = profiles[args.profile]
    ts = cost.census(inv["ts_models"], prof)
    m4 = cost.census([inv["m4"]], prof)
    cum = cost.cumulative_union(inv["ts_models"])
    report = {"profile": prof.name,
              "ts": {"distinct": ts.distinct, "supported": ts.supported, "coverage": round(ts.coverage, 6)},
              "m4": {"distinct": m4.distinct, "supported": m4.supported, "coverage": round(m4.coverage, 6)},
              "ts_cumulative_union": cum}
    emit(args.out, to_json(report))
    if args.plot:
        stem = Path(args.out).with_suffix("")
        csv_path = stem.parent / f"{stem.name}_cumulative.csv"
        write_atomic(csv_path, to_csv(["models", "ts_union", "m4"], [[i + 1, c, m4.distinct]
                                                                     for i, c in enumerate(cum)]))
        xs = list(range(1, len(cum) + 1))
        png = plots.line_png(xs, {"TS union": cum, "M4": [m4.distinct] * len(cum)}, "models",
                             "distinct operators", "Operator census")
        emit_plot(args, png, plots.gnuplot_script(csv_path.name, stem.with_suffix(".png").name, 1,
                                                  {2: "TS union", 3: "M4"}, "models", "distinct operators",
                                                  "Operator census"))
    return 0


def cmd_registry(args) -> int:
    tasks = load_registry(args.registry)
    if args.render:
        reg = {t.id: t for t in tasks}
        if args.render not in reg:
            raise ValueError(f"unknown task: {args.render}")
        slots = {}
        for item in args.slot or []:
            key, sep, value = item.partition("=")
            if not sep:
                raise UsageError(f"--slot expects KEY=VALUE, got {item!r}")
            slots[key] = value
        emit(args.out, render_prompt(reg[args.render], slots) + "\n")
        return 0
    bad = {t.id: validate_task(t) for t in tasks}
    bad = {k: v for k, v in bad.items() if v}
    rows = [[t.id, t.category, t.path, " ".join(t.input_modality), t.output_modality, t.metric,
             " ".join(sorted(route(t).activation)), "" if t.prompt is None else t.prompt.template] for t in tasks]
    emit(args.out, to_csv(["id", "category", "path", "inputs", "output", "metric", "activated", "prompt"], rows))
    if args.validate and bad:
        raise ValueError(f"{len(bad)} invalid task(s): " + "; ".join(f"{k}: {v[0]}" for k, v in bad.items()))
    return 0


# -- parser ------------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _format(value: str) -> str:
    v = value.lower()
    if v not in FORMATS:
        raise argparse.ArgumentTypeError(f"format must be one of {', '.join(FORMATS)}")
    return v


def _positive_int(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="m4fw", description="Shared multimodal foundation model: adapters, serving and cost analysis.")
    sub = p.add_subparsers(dest="verb", metavar="verb", parser_class=_Parser)

    def out_flags(sp, plot=True):
        sp.add_argument("--out", help="report file (default: standard output)")
        if plot:
            sp.add_argument("--plot", action="store_true", help="also write <out>.png and a gnuplot script <out>.gp")

    b = sub.add_parser("bench", help="run every task path on the desk model and account paper-profile cost")
    b.add_argument("--tasks", help="comma-separated task ids (default: all)")
    b.add_argument("--registry", help="task registry JSON (default: shipped)")
    b.add_argument("--max-new-tokens", type=int, default=4, help="decode length for text outputs")
    b.add_argument("--timing", action="store_true", help="add wall-clock latency (not reproducible)")
    b.add_argument("--seed", type=int, default=0, help="weights and payload seed")
    out_flags(b)

    for name, helptext in (("train", "fine-tune an adapter pack on synthetic data"),
                           ("eval", "score a pack on the synthetic eval split")):
        t = sub.add_parser(name, help=helptext)
        t.add_argument("--task", required=True, help="task id, e.g. T38")
        t.add_argument("--registry", help="task registry JSON (default: shipped)")
        t.add_argument("--seed", type=int, default=0, help="weights, data and training seed")
        t.add_argument("--dataset-size", type=int, default=500, help="synthetic samples (train + eval)")
        t.add_argument("--classes", type=int, default=10, help="classes for labelled datasets")
        if name == "train":
            t.add_argument("--pack", required=True, help="output adapter pack path")
            t.add_argument("--steps", type=int, default=200, help="SGD steps")
            t.add_argument("--batch-size", type=_positive_int, default=16, help="samples per step")
            t.add_argument("--lr", type=float, default=0.5, help="learning rate")
            t.add_argument("--rank", type=_positive_int, default=4, help="LoRA rank")
            t.add_argument("--alpha", type=float, help="LoRA alpha (default: rank)")
            t.add_argument("--log", help="training log CSV (step,loss,metric)")
            t.add_argument("--evaluate", action="store_true", help="score the eval split after training")
            t.add_argument("--out", help="JSON summary file (default: standard output)")
            t.add_argument("--plot", action="store_true", help="plot the loss curve next to --log")
        else:
            t.add_argument("--pack", help="adapter pack (default: freshly initialised)")
            t.add_argument("--metric", help="override the task's registry metric")
            t.add_argument("--out", help="JSON report file (default: standard output)")

    s = sub.add_parser("serve", help="run the firmware service on a Unix socket")
    s.add_argument("--socket", required=True, help="socket path")
    s.add_argument("--budget", type=int, help="memory budget in bytes (default: M4_BUDGET_BYTES or model + 64 MiB)")
    s.add_argument("--registry", help="task registry JSON (default: shipped)")
    s.add_argument("--seed", type=int, default=0, help="desk weight seed")

    cs = sub.add_parser("cost-storage", help="TS vs FM storage curve as CSV (n,ts_bytes,fm_bytes)")
    cs.add_argument("--tasks", type=_positive_int, default=50, help="largest task count")
    cs.add_argument("--format", type=_format, default="int4", help="backbone format: fp32, fp16, int8, int4")
    cs.add_argument("--quantize-generators", action="store_true", help="store generators at --format too")
    cs.add_argument("--ts-calibration", help="per-task TS model sizes JSON (default: shipped)")
    cs.add_argument("--adapter-sizes", help="per-task adapter sizes JSON (default: shipped)")
    cs.add_argument("--summary", help="JSON summary file (ratio and crossover)")
    out_flags(cs)

    cm = sub.add_parser("cost-memory", help="peak memory and residency of FM and TS deployments (JSON)")
    cm.add_argument("--tasks", type=_positive_int, default=50, help="task count")
    cm.add_argument("--budget", type=float, help="memory budget in bytes (default: M4_BUDGET_BYTES or 12e9)")
    cm.add_argument("--format", type=_format, default="int4", help="backbone format")
    cm.add_argument("--quantize-generators", action="store_true", help="store generators at --format too")
    cm.add_argument("--ts-calibration", help="per-task TS model sizes JSON (default: shipped)")
    cm.add_argument("--adapter-sizes", help="per-task adapter sizes JSON (default: shipped)")
    out_flags(cm, plot=False)

    w = sub.add_parser("whatif", help="project CPU latencies onto an NPU (CSV)")
    w.add_argument("--table", help="latency table JSON (default: shipped)")
    w.add_argument("--speedup", type=float, help="uniform speedup (default: per-row values)")
    w.add_argument("--profile", help="take the speedup from a named processor profile")
    w.add_argument("--profiles", help="processor profiles JSON (default: shipped)")
    out_flags(w)

    c = sub.add_parser("census", help="operator census and accelerator coverage (JSON)")
    c.add_argument("--inventories", help="operator inventories JSON (default: shipped)")
    c.add_argument("--profiles", help="processor profiles JSON (default: shipped)")
    c.add_argument("--profile", default="edgetpu-2023", help="processor profile name")
    out_flags(c)

    r = sub.add_parser("registry", help="list, validate or render prompts of registry tasks")
    r.add_argument("--registry", help="task registry JSON (default: shipped)")
    r.add_argument("--validate", action="store_true", help="fail when any task breaks its path rules")
    r.add_argument("--render", metavar="TASK", help="print the rendered prompt of TASK")
    r.add_argument("--slot", action="append", metavar="KEY=VALUE", help="prompt slot value (repeatable)")
    r.add_argument("--out", help="output file (default: standard output)")
    return p


HANDLERS = {"bench": cmd_bench, "train": cmd_train, "eval": cmd_eval, "serve": cmd_serve,
            "cost-storage": cmd_cost_storage, "cost-memory": cmd_cost_memory, "whatif": cmd_whatif,
            "census": cmd_census, "registry": cmd_registry}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.verb is None:
            parser.print_help(sys.stderr)
            return 2
        if getattr(args, "plot", False) and not getattr(args, "out", None) and args.verb != "train":
            raise UsageError("--plot needs --out")
        return HANDLERS[args.verb](args)
    except UsageError as exc:
        print(f"m4fw: usage error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except KeyboardInterrupt:
        return 1
    except Exception as exc:
        reason = " ".join(str(exc).split())
        print(f"m4fw: error: {type(exc).__name__}: {reason}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
