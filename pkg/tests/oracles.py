"""Reference implementations that share no code with the engine.

Naive loops reproduce the engine's float32 accumulation order exactly; the
float64 forward passes back the finite-difference checks.
"""
import numpy as np


def naive_matmul_f32(a, b):
    m, k = a.shape
    n = b.shape[1]
    c = np.zeros((m, n), dtype=np.float32)
    for i in range(m):
        for j in range(n):
            s = np.float32(0)
            for t in range(k):
                s = np.float32(s + np.float32(a[i, t] * b[t, j]))
            c[i, j] = s
    return c


def naive_conv_f32(x, w, stride, pad):
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=np.float32)
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, f, ho, wo), dtype=np.float32)
    for b in range(n):
        for o in range(f):
            for i in range(ho):
                for j in range(wo):
                    s = np.float32(0)
                    for ch in range(c):
                        for di in range(k):
                            for dj in range(k):
                                v = xp[b, ch, i * stride + di, j * stride + dj] * w[o, ch, di, dj]
                                s = np.float32(s + np.float32(v))
                    out[b, o, i, j] = s
    return out


def conv64(x, w, stride, pad):
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for di in range(k):
        for dj in range(k):
            patch = xp[:, :, di:di + stride * ho:stride, dj:dj + stride * wo:stride]
            out += np.einsum("nchw,fc->nfhw", patch, w[:, :, di, dj])
    return out


def ce64(logits, labels):
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    labels = np.asarray(labels)
    if labels.ndim == 2:
        return float(-(labels * logp).sum(axis=1).mean())
    return float(-logp[np.arange(len(labels)), labels].mean())


def forward64(spec, params, x):
    """Float64 forward pass following the documented shape rule."""
    relu = lambda v: np.maximum(v, 0.0)
    n = x.shape[0]
    h = x.astype(np.float64)
    if spec.family == "mlp":
        h = h.reshape(n, -1)
        for i in range(spec.depth):
            h = relu(h @ params[f"fc{i}.weight"] + params[f"fc{i}.bias"])
    else:
        for i in range(spec.depth):
            h = relu(conv64(h, params[f"conv{i}.weight"], 2, 1) + params[f"conv{i}.bias"][:, None, None])
        h = relu(h.reshape(n, -1) @ params["fc0.weight"] + params["fc0.bias"])
    return h @ params["out.weight"] + params["out.bias"]


def central_diff(f, x, h=1e-3, coords=None):
    """Central differences of scalar ``f`` at float64 array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in (range(flat.size) if coords is None else coords):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_err(analytic, numeric, floor=1e-6):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def fd_pass_fraction(analytic, numeric, tol=1e-3, coords=None):
    r = rel_err(analytic, numeric).reshape(-1)
    if coords is not None:
        r = r[np.asarray(list(coords))]
    return float(np.mean(r <= tol))
