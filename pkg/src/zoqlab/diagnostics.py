"""Training-dynamics probes: reconstruction-vs-perplexity tracking and memory accounting.

Layer reconstruction losses and eval perplexity form paired series; their
sign-disagreement rate quantifies how often local layer improvements fail to
move the task metric the same way. Memory is modeled analytically (exact
functions of the configuration), not measured from the allocator.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .model import ModelGraph, linear_forward
from .zo import ZoConfig, optimizer_state_size


@dataclass
class TrackRecord:
    step: int
    recon_losses: dict[str, float]
    train_loss: float
    eval_loss: float
    eval_ppl: float
    bytes_params: int
    bytes_frozen: int
    bytes_opt: int
    bytes_fwd: int

    @property
    def recon_total(self) -> float:
        return float(sum(self.recon_losses.values()))


def layer_reconstruction_loss(lin, captures) -> float:
    """Mean squared gap between the layer's full-precision and quantized outputs.

    The full-precision reference uses the layer's current master weights; for
    a bypassed attachment the gap is exactly zero.
    """
    x = np.concatenate([np.asarray(c, dtype=np.float64) for c in captures], axis=0)
    y_fp = x @ lin.w + lin.b
    y_q = linear_forward(x, lin, mode="qat")
    diff = y_fp - y_q
    return float(np.mean(diff * diff))


def track(
    model: ModelGraph,
    eval_set,
    layer_probe_set: dict[str, list] | None,
    step: int = 0,
    train_loss: float = float("nan"),
    cfg: ZoConfig | None = None,
) -> TrackRecord:
    """One instrumentation snapshot: eval perplexity plus per-layer reconstruction."""
    eval_set = np.asarray(eval_set)
    if eval_set.size == 0:
        raise DataError("empty eval set")
    eval_loss = model.loss(eval_set, mode="qat")
    recon: dict[str, float] = {}
    if layer_probe_set:
        for layer_id, lin in model.iter_attachments():
            if layer_id in layer_probe_set:
                recon[layer_id] = layer_reconstruction_loss(lin, layer_probe_set[layer_id])
    mem = memory_report(model, cfg if cfg is not None else ZoConfig())
    return TrackRecord(
        step=step,
        recon_losses=recon,
        train_loss=train_loss,
        eval_loss=eval_loss,
        eval_ppl=float(np.exp(eval_loss)),
        bytes_params=mem["parameters"],
        bytes_frozen=mem["quantized_frozen"],
        bytes_opt=mem["optimizer_state"],
        bytes_fwd=mem["transient_forward"],
    )


def inconsistency_score(records) -> float:
    """Fraction of steps where reconstruction and perplexity move in opposite directions.

    Sign-based, so it is invariant under strictly monotone rescaling of
    either series. 0 means the two series always agree in direction.
    """
    records = list(records)
    if len(records) < 2:
        raise DataError("inconsistency_score needs at least 2 records")
    recon = np.array([r.recon_total for r in records])
    ppl = np.array([r.eval_ppl for r in records])
    dr = np.sign(np.diff(recon))
    dp = np.sign(np.diff(ppl))
    return float(np.mean(dr != dp))


def transient_forward_bytes(config, batch_size: int) -> int:
    """Modeled peak live activation bytes of one forward pass.

    Residual stream plus the largest concurrent stage (qkv projections,
    attention matrices, mlp hidden, or logits), all float64.
    """
    t, d, h, v = config.context, config.d_model, config.n_heads, config.vocab_size
    stages = (
        t * d + 3 * t * d,  # normed input + q, k, v
        t * d + 2 * h * t * t,  # scores and attention weights
        t * d + 2 * 4 * t * d,  # mlp hidden and activation
        t * v,  # logits
    )
    return 8 * batch_size * (t * d + max(stages))


def memory_report(model: ModelGraph, cfg: ZoConfig) -> dict[str, int]:
    """Analytic byte breakdown of a training setup.

    parameters: trainable scalars at 8 bytes; quantized_frozen: pre-quantized
    weight matrices at bits/8 packed; optimizer_state: the ZO coefficients
    and stream cursors; transient_forward: peak forward activations at the
    configured batch size. Only transient_forward depends on batch size.
    """
    params = model.trainable_parameters().size * 8
    frozen = sum(count * bits // 8 for count, bits in model.frozen_quantized_scalars())
    return {
        "parameters": params,
        "quantized_frozen": frozen,
        "optimizer_state": optimizer_state_size(cfg, model),
        "transient_forward": transient_forward_bytes(model.config, cfg.batch_size),
    }


DIAG_HEADER = (
    "step",
    "layer_id",
    "recon_loss",
    "train_loss",
    "eval_ppl",
    "bytes_params",
    "bytes_frozen",
    "bytes_opt",
    "bytes_fwd",
)


def write_diagnostics_csv(path, records) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(DIAG_HEADER)
        for r in records:
            layer_items = sorted(r.recon_losses.items()) or [("", float("nan"))]
            for layer_id, recon in layer_items:
                writer.writerow(
                    (
                        r.step,
                        layer_id,
                        repr(recon),
                        repr(r.train_loss),
                        repr(r.eval_ppl),
                        r.bytes_params,
                        r.bytes_frozen,
                        r.bytes_opt,
                        r.bytes_fwd,
                    )
                )
