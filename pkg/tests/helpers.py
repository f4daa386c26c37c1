"""Independent reference computations shared by several test modules."""

import math

import numpy as np
import torch


def _gelu(x):
    return 0.5 * x * (1.0 + np.vectorize(math.erf)(x / math.sqrt(2.0)))


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _lstm_direction(x, w_ih, w_hh, b_ih, b_hh):
    hidden = w_hh.shape[1]
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    out = []
    for xt in x:
        z = w_ih @ xt + b_ih + w_hh @ h + b_hh
        i, f, g, o = (z[k * hidden : (k + 1) * hidden] for k in range(4))
        c = _sigmoid(f) * c + _sigmoid(i) * np.tanh(g)
        h = _sigmoid(o) * np.tanh(c)
        out.append(h)
    return np.array(out)


def reference_mos(model, sem, stack):
    """Score one utterance with plain NumPy from the model's parameters.

    ``sem`` is (T, Ds) and ``stack`` is (L, T, Da).
    """
    p = {k: v.detach().cpu().numpy().astype(np.float64) for k, v in model.state_dict().items()}
    sem = np.asarray(sem, dtype=np.float64)
    stack = np.asarray(stack, dtype=np.float64)
    raw = p["layer_weights.raw"]
    w = np.exp(raw - raw.max())
    w /= w.sum()
    acoustic = np.tensordot(w, stack, axes=1)

    def proc(prefix, x):
        hid = _gelu(x @ p[f"{prefix}.linear1.weight"].T + p[f"{prefix}.linear1.bias"])
        return hid @ p[f"{prefix}.linear2.weight"].T + p[f"{prefix}.linear2.bias"]

    fused = np.concatenate([sem + proc("proc_semantic", sem), acoustic + proc("proc_acoustic", acoustic)], axis=1)
    fwd = _lstm_direction(
        fused,
        p["head.bilstm.weight_ih_l0"],
        p["head.bilstm.weight_hh_l0"],
        p["head.bilstm.bias_ih_l0"],
        p["head.bilstm.bias_hh_l0"],
    )
    bwd = _lstm_direction(
        fused[::-1],
        p["head.bilstm.weight_ih_l0_reverse"],
        p["head.bilstm.weight_hh_l0_reverse"],
        p["head.bilstm.bias_ih_l0_reverse"],
        p["head.bilstm.bias_hh_l0_reverse"],
    )[::-1]
    h = np.concatenate([fwd, bwd], axis=1)
    hid = np.maximum(h @ p["head.linear1.weight"].T + p["head.linear1.bias"], 0.0)
    frames = hid @ p["head.linear_out.weight"].T + p["head.linear_out.bias"]
    return float(frames.mean())


def central_difference_grads(loss_fn, params, step=1e-5, max_entries=None, rng=None):
    """Central finite differences of ``loss_fn()`` w.r.t. entries of each parameter.

    Returns ``{name: (flat_indices, numeric_grads)}``. With ``max_entries``
    only a random subset of entries per tensor is probed.
    """
    out = {}
    with torch.no_grad():
        for name, p in params.items():
            flat = p.view(-1)
            idx = np.arange(flat.numel())
            if max_entries is not None and flat.numel() > max_entries:
                idx = np.sort(rng.choice(flat.numel(), size=max_entries, replace=False))
            num = np.empty(len(idx))
            for k, i in enumerate(idx):
                orig = float(flat[i])
                flat[i] = orig + step
                up = float(loss_fn())
                flat[i] = orig - step
                down = float(loss_fn())
                flat[i] = orig
                num[k] = (up - down) / (2 * step)
            out[name] = (idx, num)
    return out


def max_relative_error(analytic, numeric, floor=1e-6):
    """Largest |a - n| / max(|a|, |n|, floor) over the probed entries."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
