"""Command-line harness: train, eval, verify, quantize, calibrate, diag.

Runs are fully determined by (config, seed, corpus): corpus splitting, batch
sampling, weight init, and ZO perturbations all derive from named Philox
stream namespaces of the master seed, so repeating a run reproduces every
artifact byte except wall-clock columns.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import os
import re
import struct
import sys
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from . import diagnostics, theory
from .calibration import calibrate_model, capture_activations, rtn_quantize
from .errors import (
    DataError,
    NumericError,
    UsageError,
    VerificationError,
    ZoqlabError,
)
from .model import (
    LINEAR_NAMES,
    LayerAttachment,
    ModelConfig,
    ModelGraph,
    QuantPlan,
    build_model,
    set_lightweight,
)
from .numerics import read_tensor, uniforms_at, write_tensor
from .zo import ZoConfig, zo_step

_CKPT_MAGIC = b"ZQLB-CKP"
_CKPT_VERSION = 1

# stream-id namespaces of the master seed; direction streams occupy
# (step << 32) | i with step < 2^31, so the high bits below cannot collide
_SPLIT_STREAM = 1 << 62
_BATCH_STREAM = 1 << 63  # ORed with the step index

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3
EXIT_VERIFY = 4

TRAIN_HEADER = (
    "step",
    "loss",
    "upd_weights",
    "upd_smoothing",
    "upd_clipping",
    "upd_quant_affine",
    "wall_ms",
    "rng_cursor",
)
CALIB_HEADER = ("layer_id", "loss_before", "loss_after", "delta_loss")


# ---------------------------------------------------------------------------
# Quantization notation
# ---------------------------------------------------------------------------

_QUANT_RE = re.compile(r"^W(\d+)A(\d+)(?:g(\d+))?$")


def parse_quant_notation(text: str) -> tuple[int, int, int | None]:
    """'W4A4' / 'W2A16g128' -> (w_bits, a_bits, group_size)."""
    m = _QUANT_RE.match(text.strip())
    if not m:
        raise UsageError(f"bad quantization notation {text!r} (expected W{{w}}A{{a}}[g{{gs}}])")
    w, a = int(m.group(1)), int(m.group(2))
    g = int(m.group(3)) if m.group(3) else None
    if not 2 <= w <= 16:
        raise UsageError(f"w_bits must be in [2, 16], got {w}")
    if not 2 <= a <= 16:
        raise UsageError(f"a_bits must be in [2, 16], got {a}")
    if g is not None and g < 1:
        raise UsageError(f"group size must be >= 1, got {g}")
    return w, a, g


def format_quant_notation(w_bits: int, a_bits: int, group_size: int | None) -> str:
    out = f"W{w_bits}A{a_bits}"
    if group_size is not None:
        out += f"g{group_size}"
    return out


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    w_bits: int | None = 4
    a_bits: int | None = 4
    group_size: int | None = None
    scheme: str = "asymmetric"
    zo: ZoConfig = field(default_factory=lambda: ZoConfig(steps=2000))
    eval_interval: int = 200
    calib_epochs: int | None = None  # None -> 2 (weight-activation) / 4 (weight-only)
    calib_samples: int = 8
    corpus: str = ""  # empty -> bundled corpus
    checkpoint_dir: str = "runs/checkpoints"
    metrics_dir: str = "runs/metrics"
    seed: int = 0

    def __post_init__(self):
        if self.group_size is not None and self.model.d_model % self.group_size != 0:
            raise UsageError(
                f"group size {self.group_size} does not divide d_model {self.model.d_model}"
            )

    @property
    def mode(self) -> str | None:
        """weight_only / weight_activation / None (full precision)."""
        if self.w_bits is None:
            return None
        return "weight_only" if self.a_bits is None or self.a_bits >= 16 else "weight_activation"

    def quant_plan(self) -> QuantPlan | None:
        if self.w_bits is None:
            return None
        a = None if (self.a_bits is None or self.a_bits >= 16) else self.a_bits
        return QuantPlan(
            w_bits=self.w_bits, a_bits=a, scheme=self.scheme, group_size=self.group_size
        )

    def effective_calib_epochs(self) -> int:
        if self.calib_epochs is not None:
            return self.calib_epochs
        return 2 if self.mode == "weight_activation" else 4

    def to_dict(self) -> dict:
        return {
            "model": {
                "vocab_size": self.model.vocab_size,
                "d_model": self.model.d_model,
                "n_layers": self.model.n_layers,
                "n_heads": self.model.n_heads,
                "context": self.model.context,
            },
            "quant": {
                "w_bits": self.w_bits,
                "a_bits": self.a_bits,
                "group_size": self.group_size,
                "scheme": self.scheme,
            },
            "train": {
                "steps": self.zo.steps,
                "batch_size": self.zo.batch_size,
                "epsilon": self.zo.epsilon,
                "directions": self.zo.directions,
                "lr_weights": self.zo.lr_weights,
                "lr_smoothing": self.zo.lr_smoothing,
                "lr_clipping": self.zo.lr_clipping,
                "lr_quant_affine": self.zo.lr_quant_affine,
                "lr_schedule": self.zo.lr_schedule,
                "train_quant_affine": self.zo.train_quant_affine,
                "eval_interval": self.eval_interval,
            },
            "calib": {"epochs": self.calib_epochs, "samples": self.calib_samples},
            "paths": {
                "corpus": self.corpus,
                "checkpoint_dir": self.checkpoint_dir,
                "metrics_dir": self.metrics_dir,
            },
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        t = d.get("train", {})
        seed = d.get("seed", 0)
        return cls(
            model=ModelConfig(**d.get("model", {})),
            w_bits=d.get("quant", {}).get("w_bits"),
            a_bits=d.get("quant", {}).get("a_bits"),
            group_size=d.get("quant", {}).get("group_size"),
            scheme=d.get("quant", {}).get("scheme", "asymmetric"),
            zo=ZoConfig(
                epsilon=t.get("epsilon", 1e-3),
                directions=t.get("directions", 1),
                steps=t.get("steps", 2000),
                seed=seed,
                lr_weights=t.get("lr_weights", 1e-3),
                lr_smoothing=t.get("lr_smoothing", 5e-6),
                lr_clipping=t.get("lr_clipping", 1e-5),
                lr_quant_affine=t.get("lr_quant_affine", 1e-5),
                lr_schedule=t.get("lr_schedule", "linear_decay"),
                batch_size=t.get("batch_size", 4),
                train_quant_affine=t.get("train_quant_affine", True),
            ),
            eval_interval=t.get("eval_interval", 200),
            calib_epochs=d.get("calib", {}).get("epochs"),
            calib_samples=d.get("calib", {}).get("samples", 8),
            corpus=d.get("paths", {}).get("corpus", ""),
            checkpoint_dir=d.get("paths", {}).get("checkpoint_dir", "runs/checkpoints"),
            metrics_dir=d.get("paths", {}).get("metrics_dir", "runs/metrics"),
            seed=seed,
        )


def load_config_file(path: str) -> RunConfig:
    """Flat key = value sections: [model] [quant] [train] [calib] [paths] [run]."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise DataError(f"cannot read config file {path}")

    def section(name):
        return parser[name] if parser.has_section(name) else {}

    d: dict = {"model": {}, "quant": {}, "train": {}, "calib": {}, "paths": {}}
    for key, cast in (
        ("vocab_size", int),
        ("d_model", int),
        ("n_layers", int),
        ("n_heads", int),
        ("context", int),
    ):
        if key in section("model"):
            d["model"][key] = cast(section("model")[key])
    quant = section("quant")
    if "notation" in quant:
        w, a, g = parse_quant_notation(quant["notation"])
        d["quant"].update({"w_bits": w, "a_bits": a, "group_size": g})
    for key, cast in (("w_bits", int), ("a_bits", int), ("group_size", int), ("scheme", str)):
        if key in quant:
            d["quant"][key] = cast(quant[key])
    train = section("train")
    for key, cast in (
        ("steps", int),
        ("batch_size", int),
        ("directions", int),
        ("eval_interval", int),
        ("epsilon", float),
        ("lr_weights", float),
        ("lr_smoothing", float),
        ("lr_clipping", float),
        ("lr_quant_affine", float),
        ("lr_schedule", str),
    ):
        if key in train:
            d["train"][key] = cast(train[key])
    if "train_quant_affine" in train:
        d["train"]["train_quant_affine"] = train.getboolean("train_quant_affine")
    calib = section("calib")
    if "epochs" in calib:
        d["calib"]["epochs"] = int(calib["epochs"])
    if "samples" in calib:
        d["calib"]["samples"] = int(calib["samples"])
    paths = section("paths")
    for key in ("corpus", "checkpoint_dir", "metrics_dir"):
        if key in paths:
            d["paths"][key] = paths[key]
    if parser.has_section("run") and "seed" in parser["run"]:
        d["seed"] = int(parser["run"]["seed"])
    if d["quant"].get("w_bits") is None and "w_bits" not in d["quant"]:
        d["quant"]["w_bits"] = 4
        d["quant"]["a_bits"] = 4
    return RunConfig.from_dict(d)


# ---------------------------------------------------------------------------
# Corpus ingestion
# ---------------------------------------------------------------------------

def default_corpus_path() -> str:
    return str(resources.files("zoqlab").joinpath("data/corpus.txt"))


def ingest_corpus(path: str, context: int = 128, seed: int = 0):
    """Byte-tokenize a UTF-8 text file into shuffled train/eval chunks (90/10).

    Returns (train, eval) int64 arrays of shape (n, context). The shuffle is
    a seeded Philox permutation, so the split is a pure function of
    (file, context, seed).
    """
    with open(path, "rb") as f:
        data = f.read()
    if not data:
        raise DataError(f"empty corpus file {path}")
    try:
        data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise DataError(f"corpus {path} is not UTF-8 at byte offset {e.start}") from e
    tokens = np.frombuffer(data, dtype=np.uint8).astype(np.int64)
    n_chunks = tokens.shape[0] // context
    if n_chunks < 1:
        raise DataError(
            f"corpus too small: {tokens.shape[0]} bytes yields no chunk of {context}"
        )
    chunks = tokens[: n_chunks * context].reshape(n_chunks, context)
    order = np.argsort(uniforms_at(seed, _SPLIT_STREAM, 0, n_chunks), kind="stable")
    shuffled = chunks[order]
    n_eval = max(1, int(round(0.1 * n_chunks))) if n_chunks >= 2 else 0
    return shuffled[n_eval:], shuffled[:n_eval]


def sample_batch(train, batch_size: int, seed: int, step: int):
    u = uniforms_at(seed, _BATCH_STREAM | step, 0, batch_size)
    idx = np.minimum((u * train.shape[0]).astype(np.int64), train.shape[0] - 1)
    return train[idx]


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def _model_entries(model: ModelGraph):
    """(name, array) pairs in a fixed order; the manifest records the names."""
    yield "embed", model.embed
    yield "pos", model.pos
    for bi, block in enumerate(model.blocks):
        for part in ("ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias"):
            yield f"block{bi}.{part}", getattr(block, part)
        for name in LINEAR_NAMES:
            lin = block.linears[name]
            base = f"block{bi}.{name}"
            yield f"{base}.w", lin.w
            yield f"{base}.b", lin.b
            att = lin.att
            if att.smoothing is not None:
                yield f"{base}.smoothing.scale", att.smoothing.scale
                yield f"{base}.smoothing.shift", att.smoothing.shift
            if att.weight_state is not None:
                for part in ("step", "zero_point", "clip_lo", "clip_hi"):
                    yield f"{base}.state.{part}", getattr(att.weight_state, part)
    yield "ln_f_gain", model.ln_f_gain
    yield "ln_f_bias", model.ln_f_bias


def save_checkpoint(path: str, cfg: RunConfig, model: ModelGraph, step: int) -> None:
    """Atomic single-file checkpoint: manifest plus tensor containers."""
    entries = list(_model_entries(model))
    atts = {}
    for layer_id, lin in model.iter_attachments():
        atts[layer_id] = {
            "trainable": lin.att.trainable,
            "pre_quantized": lin.att.pre_quantized,
            "has_smoothing": lin.att.smoothing is not None,
            "has_state": lin.att.weight_state is not None,
            "quantized": lin.att.weight_spec is not None,
        }
    manifest = {
        "config": cfg.to_dict(),
        "step": step,
        "lightweight": model.lightweight,
        "rng": {"seed": cfg.seed, "next_step": step},
        "attachments": atts,
        "tensors": [name for name, _ in entries],
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    tmp = path + ".tmp"
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    try:
        with open(tmp, "wb") as f:
            f.write(_CKPT_MAGIC)
            f.write(struct.pack("<II", _CKPT_VERSION, 0))
            f.write(struct.pack("<Q", len(blob)))
            f.write(blob)
            for _, arr in entries:
                write_tensor(f, arr)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def load_checkpoint(path: str):
    """Returns (RunConfig, ModelGraph, step). Refuses version mismatches."""
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) != 16 or header[:8] != _CKPT_MAGIC:
            raise DataError(f"{path} is not a checkpoint (bad magic)")
        version, _ = struct.unpack("<II", header[8:])
        if version != _CKPT_VERSION:
            raise DataError(
                f"checkpoint version {version} unsupported (expected {_CKPT_VERSION}); refusing"
            )
        (mlen,) = struct.unpack("<Q", f.read(8))
        manifest = json.loads(f.read(mlen).decode("utf-8"))
        tensors = {name: read_tensor(f) for name in manifest["tensors"]}
    cfg = RunConfig.from_dict(manifest["config"])
    model = build_model(cfg.model, cfg.quant_plan(), cfg.seed)
    model.embed = tensors["embed"]
    model.pos = tensors["pos"]
    model.ln_f_gain = tensors["ln_f_gain"]
    model.ln_f_bias = tensors["ln_f_bias"]
    for bi, block in enumerate(model.blocks):
        for part in ("ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias"):
            setattr(block, part, tensors[f"block{bi}.{part}"])
        for name in LINEAR_NAMES:
            base = f"block{bi}.{name}"
            lin = block.linears[name]
            lin.w = tensors[f"{base}.w"]
            lin.b = tensors[f"{base}.b"]
            meta = manifest["attachments"][base]
            att = lin.att
            if not meta["quantized"]:
                lin.att = LayerAttachment(trainable=meta["trainable"])
                continue
            if meta["has_smoothing"]:
                att.smoothing.scale = tensors[f"{base}.smoothing.scale"]
                att.smoothing.shift = tensors[f"{base}.smoothing.shift"]
            else:
                att.smoothing = None
            if meta["has_state"]:
                for part in ("step", "zero_point", "clip_lo", "clip_hi"):
                    setattr(att.weight_state, part, tensors[f"{base}.state.{part}"])
            att.trainable = meta["trainable"]
            att.pre_quantized = meta["pre_quantized"]
    model.lightweight = manifest.get("lightweight", False)
    return cfg, model, manifest["step"]


# ---------------------------------------------------------------------------
# Metric writers
# ---------------------------------------------------------------------------

def _write_csv(path, header, rows):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def _train_row(report):
    n = report.update_norms
    return (
        report.step,
        repr(report.loss),
        repr(n.get("weights", 0.0)),
        repr(n.get("smoothing", 0.0)),
        repr(n.get("clipping", 0.0)),
        repr(n.get("quant_affine", 0.0)),
        f"{report.wall_ms:.3f}",
        report.rng_cursor,
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _prepare_data(cfg: RunConfig):
    corpus = cfg.corpus or default_corpus_path()
    train, eval_set = ingest_corpus(corpus, cfg.model.context, cfg.seed)
    if train.shape[0] == 0 or eval_set.shape[0] == 0:
        raise DataError(f"corpus {corpus} too small for a train/eval split")
    top = max(int(train.max()), int(eval_set.max()))
    if top >= cfg.model.vocab_size:
        raise DataError(
            f"corpus token {top} exceeds model vocab {cfg.model.vocab_size}; "
            "use an ASCII corpus or raise vocab_size"
        )
    return train, eval_set


def _eval_batch(eval_set, limit: int = 16):
    return eval_set[: min(eval_set.shape[0], limit)]


def _initialize(cfg: RunConfig, train, lightweight: bool):
    """Build + calibrate (or clipping-only init) per the configured mode."""
    model = build_model(cfg.model, cfg.quant_plan(), cfg.seed)
    calib_rows = []
    captures = None
    if cfg.quant_plan() is not None:
        sample = train[: cfg.calib_samples]
        captures = capture_activations(model, sample)
        calib_rows = calibrate_model(model, captures, cfg.effective_calib_epochs())
    if lightweight:
        set_lightweight(model)
    return model, captures, calib_rows


def cmd_train(cfg: RunConfig, lightweight: bool = False, resume: str | None = None) -> int:
    train, eval_set = _prepare_data(cfg)
    if resume is not None:
        cfg_loaded, model, start_step = load_checkpoint(resume)
        cfg = replace(
            cfg_loaded,
            zo=replace(cfg_loaded.zo, steps=cfg.zo.steps),
            metrics_dir=cfg.metrics_dir,
            checkpoint_dir=cfg.checkpoint_dir,
            corpus=cfg.corpus,
        )
        captures = capture_activations(model, train[: cfg.calib_samples])
        calib_rows = []
    else:
        model, captures, calib_rows = _initialize(cfg, train, lightweight)
        start_step = 0
    if calib_rows:
        _write_csv(
            os.path.join(cfg.metrics_dir, "calibration.csv"),
            CALIB_HEADER,
            [
                (r["layer_id"], repr(r["loss_before"]), repr(r["loss_after"]), repr(r["delta_loss"]))
                for r in calib_rows
            ],
        )
    probe = dict(list(captures.captures.items())[:4]) if captures is not None else None
    eval_batch = _eval_batch(eval_set)
    records = [diagnostics.track(model, eval_batch, probe, step=start_step, cfg=cfg.zo)]
    print(f"step {start_step}: eval ppl {records[-1].eval_ppl:.4f}")
    train_rows = []
    for step in range(start_step, cfg.zo.steps):
        batch = sample_batch(train, cfg.zo.batch_size, cfg.seed, step)
        report = zo_step(model, batch, cfg.zo, step)
        train_rows.append(_train_row(report))
        if cfg.eval_interval > 0 and (step + 1) % cfg.eval_interval == 0:
            records.append(
                diagnostics.track(
                    model, eval_batch, probe, step=step + 1, train_loss=report.loss, cfg=cfg.zo
                )
            )
            print(
                f"step {step + 1}: train loss {report.loss:.4f} "
                f"eval ppl {records[-1].eval_ppl:.4f}"
            )
    if cfg.zo.steps > start_step and records[-1].step != cfg.zo.steps:
        records.append(
            diagnostics.track(model, eval_batch, probe, step=cfg.zo.steps, cfg=cfg.zo)
        )
    _write_csv(os.path.join(cfg.metrics_dir, "train.csv"), TRAIN_HEADER, train_rows)
    diagnostics.write_diagnostics_csv(
        os.path.join(cfg.metrics_dir, "diagnostics.csv"), records
    )
    ckpt = os.path.join(cfg.checkpoint_dir, "final.ckpt")
    save_checkpoint(ckpt, cfg, model, cfg.zo.steps)
    print(f"final eval ppl {records[-1].eval_ppl:.4f}")
    print(f"checkpoint {ckpt}")
    return EXIT_OK


def cmd_eval(checkpoint: str, corpus: str | None, metrics_dir: str | None) -> int:
    cfg, model, step = load_checkpoint(checkpoint)
    if corpus:
        cfg = replace(cfg, corpus=corpus)
    if metrics_dir:
        cfg = replace(cfg, metrics_dir=metrics_dir)
    train, eval_set = _prepare_data(cfg)
    eval_batch = _eval_batch(eval_set)
    captures = capture_activations(model, train[: min(4, train.shape[0])])
    probe = dict(list(captures.captures.items())[:4])
    record = diagnostics.track(model, eval_batch, probe, step=step, cfg=cfg.zo)
    diagnostics.write_diagnostics_csv(
        os.path.join(cfg.metrics_dir, "eval_diagnostics.csv"), [record]
    )
    print(f"eval ppl {record.eval_ppl!r}")
    return EXIT_OK


def cmd_verify(quick: bool, seed: int, metrics_dir: str) -> int:
    report = theory.run_verification(quick=quick, seed=seed)
    print(report.text())
    _write_csv(
        os.path.join(metrics_dir, "verification.csv"),
        next(report.csv_rows()),
        list(report.csv_rows())[1:],
    )
    with open(os.path.join(metrics_dir, "verification.txt"), "w") as f:
        f.write(report.text() + "\n")
    if not report.passed:
        failing = [r.name for r in report.rows if r.passed is False]
        raise VerificationError(f"checks failed: {', '.join(failing)}")
    return EXIT_OK


def cmd_quantize(cfg: RunConfig) -> int:
    train, eval_set = _prepare_data(cfg)
    model = build_model(cfg.model, cfg.quant_plan(), cfg.seed)
    rtn_quantize(model)
    record = diagnostics.track(model, _eval_batch(eval_set), None, cfg=cfg.zo)
    ckpt = os.path.join(cfg.checkpoint_dir, "rtn.ckpt")
    save_checkpoint(ckpt, cfg, model, 0)
    print(f"rtn eval ppl {record.eval_ppl:.4f}")
    print(f"checkpoint {ckpt}")
    return EXIT_OK


def cmd_calibrate(cfg: RunConfig) -> int:
    train, eval_set = _prepare_data(cfg)
    model, captures, calib_rows = _initialize(cfg, train, lightweight=False)
    _write_csv(
        os.path.join(cfg.metrics_dir, "calibration.csv"),
        CALIB_HEADER,
        [
            (r["layer_id"], repr(r["loss_before"]), repr(r["loss_after"]), repr(r["delta_loss"]))
            for r in calib_rows
        ],
    )
    record = diagnostics.track(model, _eval_batch(eval_set), None, cfg=cfg.zo)
    ckpt = os.path.join(cfg.checkpoint_dir, "calibrated.ckpt")
    save_checkpoint(ckpt, cfg, model, 0)
    print(f"calibrated eval ppl {record.eval_ppl:.4f}")
    for r in calib_rows:
        print(
            f"  {r['layer_id']}: loss {r['loss_before']:.6g} -> {r['loss_after']:.6g} "
            f"(delta_loss {r['delta_loss']:.4f})"
        )
    print(f"checkpoint {ckpt}")
    return EXIT_OK


def cmd_diag(checkpoint: str, corpus: str | None, metrics_dir: str | None) -> int:
    cfg, model, step = load_checkpoint(checkpoint)
    if corpus:
        cfg = replace(cfg, corpus=corpus)
    if metrics_dir:
        cfg = replace(cfg, metrics_dir=metrics_dir)
    train, eval_set = _prepare_data(cfg)
    captures = capture_activations(model, train[: min(4, train.shape[0])])
    record = diagnostics.track(
        model, _eval_batch(eval_set), captures.captures, step=step, cfg=cfg.zo
    )
    diagnostics.write_diagnostics_csv(
        os.path.join(cfg.metrics_dir, "diagnostics.csv"), [record]
    )
    mem = diagnostics.memory_report(model, cfg.zo)
    print(f"eval ppl {record.eval_ppl:.4f}")
    for key, val in mem.items():
        print(f"  {key}: {val} bytes")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_flags(p):
    p.add_argument("--config", help="INI config file")
    p.add_argument("--quant", help="quantization notation, e.g. W4A4 or W2A16g128")
    p.add_argument("--steps", type=int, help="ZO training steps")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--corpus", help="corpus text file (default: bundled)")
    p.add_argument("--checkpoint-dir", help="checkpoint output directory")
    p.add_argument("--metrics-dir", help="metrics output directory")


def build_parser() -> _Parser:
    parser = _Parser(prog="zoqlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="calibrate + ZO-train + checkpoint")
    _add_config_flags(p_train)
    p_train.add_argument("--lightweight", action="store_true", help="freeze all but attention q/v")
    p_train.add_argument("--resume", help="checkpoint to resume from")

    p_eval = sub.add_parser("eval", help="perplexity + diagnostics of a checkpoint")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("--corpus")
    p_eval.add_argument("--metrics-dir")

    p_verify = sub.add_parser("verify", help="run the estimator theory suite")
    p_verify.add_argument("--quick", action="store_true", help="reduced sample sizes")
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--metrics-dir", default="runs/metrics")

    p_quant = sub.add_parser("quantize", help="round-to-nearest baseline checkpoint")
    _add_config_flags(p_quant)

    p_calib = sub.add_parser("calibrate", help="reconstruction init only")
    _add_config_flags(p_calib)

    p_diag = sub.add_parser("diag", help="diagnostics of a checkpoint")
    p_diag.add_argument("checkpoint")
    p_diag.add_argument("--corpus")
    p_diag.add_argument("--metrics-dir")
    return parser


def _config_from_args(args) -> RunConfig:
    cfg = load_config_file(args.config) if args.config else RunConfig()
    updates = {}
    if args.quant:
        w, a, g = parse_quant_notation(args.quant)
        updates.update(w_bits=w, a_bits=a, group_size=g)
    if args.corpus:
        updates["corpus"] = args.corpus
    if getattr(args, "checkpoint_dir", None):
        updates["checkpoint_dir"] = args.checkpoint_dir
    if getattr(args, "metrics_dir", None):
        updates["metrics_dir"] = args.metrics_dir
    if args.seed is not None:
        updates["seed"] = args.seed
        updates["zo"] = replace(cfg.zo, seed=args.seed)
    cfg = replace(cfg, **updates) if updates else cfg
    if args.steps is not None:
        cfg = replace(cfg, zo=replace(cfg.zo, steps=args.steps))
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "train":
            return cmd_train(_config_from_args(args), args.lightweight, args.resume)
        if args.command == "eval":
            return cmd_eval(args.checkpoint, args.corpus, args.metrics_dir)
        if args.command == "verify":
            return cmd_verify(args.quick, args.seed, args.metrics_dir)
        if args.command == "quantize":
            return cmd_quantize(_config_from_args(args))
        if args.command == "calibrate":
            return cmd_calibrate(_config_from_args(args))
        if args.command == "diag":
            return cmd_diag(args.checkpoint, args.corpus, args.metrics_dir)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except VerificationError as e:
        print(f"verification failure: {e}", file=sys.stderr)
        return EXIT_VERIFY
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ZoqlabError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
