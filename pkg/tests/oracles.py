"""Independent brute-force oracles used by the test suites.

These deliberately avoid the library's vectorized code paths: matmul is a
triple loop, quantization enumerates every integer code, and the reference
transformer walks positions and heads one at a time.
"""

import math

import numpy as np


def naive_matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def nearest_code(x, step, zero, lo, hi):
    """Best integer code for scalar x by exhaustive search.

    Ties between two equidistant codes resolve toward the code whose
    unshifted grid index (code - zero) is even, matching half-to-even
    rounding of x/step.
    """
    best_code = None
    best_dist = math.inf
    for code in range(int(lo), int(hi) + 1):
        dist = abs(x - step * (code - zero))
        if dist < best_dist - 1e-18 * max(1.0, abs(x)):
            best_dist = dist
            best_code = code
        elif abs(dist - best_dist) <= 1e-18 * max(1.0, abs(x)):
            if (code - zero) % 2 == 0:
                best_code = code
    return best_code


def nearest_code_dequant(x, step, zero, lo, hi):
    return step * (nearest_code(x, step, zero, lo, hi) - zero)


def scalar_range_init(values, bits, scheme):
    """Hand evaluation of the range-init formulas for a flat group."""
    values = np.asarray(values, dtype=np.float64)
    if scheme == "symmetric":
        q_n, q_p = -(2 ** (bits - 1)), 2 ** (bits - 1) - 1
        step = np.max(np.abs(values)) / q_p
        zero = 0.0
    else:
        q_n, q_p = 0, 2**bits - 1
        step = (values.max() - values.min()) / q_p
        zero = -round(values.min() / step) if step > 0 else None
    if step <= 0:
        step = 1.0
        zero = -round(float(values.max()))
    return step, zero, q_n, q_p


def reference_transformer_logits(model, tokens):
    """Position-by-position full-precision forward of the toy architecture."""
    cfg = model.config
    d, h = cfg.d_model, cfg.n_heads
    dh = d // h
    t_len = len(tokens)

    def layer_norm(vec, gain, bias):
        mu = sum(vec) / d
        var = sum((x - mu) ** 2 for x in vec) / d
        return [(x - mu) / math.sqrt(var + 1e-5) * g + b for x, g, b in zip(vec, gain, bias)]

    def linear(vec, w, b):
        return [sum(vec[i] * w[i, j] for i in range(len(vec))) + b[j] for j in range(w.shape[1])]

    def gelu(v):
        return [0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0))) for x in v]

    xs = [
        [model.embed[tok, j] + model.pos[t, j] for j in range(d)]
        for t, tok in enumerate(tokens)
    ]
    for block in model.blocks:
        normed = [layer_norm(x, block.ln1_gain, block.ln1_bias) for x in xs]
        qs = [linear(v, block.linears["attn_q"].w, block.linears["attn_q"].b) for v in normed]
        ks = [linear(v, block.linears["attn_k"].w, block.linears["attn_k"].b) for v in normed]
        vs = [linear(v, block.linears["attn_v"].w, block.linears["attn_v"].b) for v in normed]
        ctx = []
        for t in range(t_len):
            out = [0.0] * d
            for head in range(h):
                sl = slice(head * dh, (head + 1) * dh)
                scores = []
                for s in range(t + 1):
                    dot = sum(a * b for a, b in zip(qs[t][sl], ks[s][sl]))
                    scores.append(dot / math.sqrt(dh))
                mx = max(scores)
                exps = [math.exp(v - mx) for v in scores]
                z = sum(exps)
                weights = [e / z for e in exps]
                for j in range(dh):
                    out[head * dh + j] = sum(
                        weights[s] * vs[s][head * dh + j] for s in range(t + 1)
                    )
            ctx.append(out)
        att_out = [linear(v, block.linears["attn_o"].w, block.linears["attn_o"].b) for v in ctx]
        xs = [[a + b for a, b in zip(x, o)] for x, o in zip(xs, att_out)]
        normed2 = [layer_norm(x, block.ln2_gain, block.ln2_bias) for x in xs]
        hidden = [gelu(linear(v, block.linears["mlp_up"].w, block.linears["mlp_up"].b)) for v in normed2]
        mlp_out = [linear(v, block.linears["mlp_down"].w, block.linears["mlp_down"].b) for v in hidden]
        xs = [[a + b for a, b in zip(x, o)] for x, o in zip(xs, mlp_out)]
    final = [layer_norm(x, model.ln_f_gain, model.ln_f_bias) for x in xs]
    logits = np.array(
        [[sum(v[j] * model.embed[tok, j] for j in range(d)) for tok in range(cfg.vocab_size)] for v in final]
    )
    return logits


def hand_cross_entropy(logits, targets):
    """Per-position softmax cross-entropy summed by hand."""
    total = 0.0
    count = 0
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets)
    flat_logits = logits.reshape(-1, logits.shape[-1])
    flat_targets = targets.reshape(-1)
    for row, tgt in zip(flat_logits, flat_targets):
        z = sum(math.exp(v) for v in row)
        total += math.log(z) - row[tgt]
        count += 1
    return total / count
