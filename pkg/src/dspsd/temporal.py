"""Fixed-length sequence compression and a single-layer LSTM aggregator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import glorot_init, sigmoid

GATES = ("i", "f", "o", "S")


def compress_sequence(seq, target_len: int, dim: int = None) -> np.ndarray:
    """Average contiguous blocks down to ``target_len`` rows, or zero-pad up to it.

    Block sizes differ by at most one, longer blocks first.
    """
    if target_len < 1:
        raise ValueError("target length must be >= 1")
    arr = np.asarray(seq, dtype=np.float64)
    if arr.size == 0:
        if dim is None:
            raise ValueError("dim is required for an empty sequence")
        return np.zeros((target_len, dim))
    arr = arr.reshape(len(arr), -1)
    n = len(arr)
    if n == target_len:
        return arr.copy()
    if n < target_len:
        out = np.zeros((target_len, arr.shape[1]))
        out[:n] = arr
        return out
    base, extra = divmod(n, target_len)
    sizes = np.full(target_len, base)
    sizes[:extra] += 1
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    return np.add.reduceat(arr, starts, axis=0) / sizes[:, None]


@dataclass
class LSTMParams:
    W: dict  # gate -> (h, h + D), input is [h_prev, x]
    b: dict  # gate -> (h,)
    dropout: float = 0.75

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        h = self.hidden
        for g in GATES:
            if self.W[g].shape != (h, self.W["i"].shape[1]) or self.b[g].shape != (h,):
                raise ShapeError(f"inconsistent shapes for gate {g}")

    @classmethod
    def init(cls, input_dim: int, hidden: int, rng: np.random.Generator, dropout: float = 0.75):
        W = {g: glorot_init(rng, hidden, hidden + input_dim) for g in GATES}
        b = {g: np.zeros(hidden) for g in GATES}
        return cls(W, b, dropout)

    @classmethod
    def zeros(cls, input_dim: int, hidden: int, dropout: float = 0.0):
        return cls({g: np.zeros((hidden, hidden + input_dim)) for g in GATES},
                   {g: np.zeros(hidden) for g in GATES}, dropout)

    @property
    def hidden(self) -> int:
        return self.W["i"].shape[0]

    @property
    def input_dim(self) -> int:
        return self.W["i"].shape[1] - self.hidden

    def weights(self) -> list:
        return [self.W[g] for g in GATES]

    def arrays(self) -> dict:
        out = {f"W_{g}": self.W[g] for g in GATES}
        out.update({f"b_{g}": self.b[g] for g in GATES})
        return out

    def copy(self) -> "LSTMParams":
        return LSTMParams({g: w.copy() for g, w in self.W.items()},
                          {g: v.copy() for g, v in self.b.items()}, self.dropout)


def lstm_forward(X, params: LSTMParams, dropout_active: bool = False, rng=None, static=None, mask=None):
    """Run the LSTM over ``X`` of shape (B, T, D) or (T, D).

    Returns ``(h_N, cache)``; ``h_N`` has shape (B, h) (or (h,) for
    unbatched input). Dropout with inverted scaling hits ``h_N`` only.

    ``static`` (B, D_s) with ``mask`` (B, T) supplies leading input features
    that are constant on unmasked steps and zero elsewhere: step t sees
    ``[static * mask[:, t], X[:, t]]`` without the repeated rows being built.
    """
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[None]
        if static is not None:
            static, mask = np.asarray(static)[None], np.asarray(mask)[None]
    B, T, D = X.shape
    Ds = 0
    if static is not None:
        static = np.asarray(static, dtype=np.float64)
        mask = np.asarray(mask, dtype=np.float64)
        if static.shape[0] != B or mask.shape != (B, T):
            raise ShapeError(f"static {static.shape} / mask {mask.shape} do not match input {X.shape}")
        Ds = static.shape[1]
    if Ds + D != params.input_dim:
        raise ShapeError(f"input dim {Ds + D} != {params.input_dim}")
    H = params.hidden
    Wcat = np.concatenate(params.weights(), axis=0)  # (4H, H + D)
    bcat = np.concatenate([params.b[g] for g in GATES])
    # sigmoid(x) = (1 + tanh(x / 2)) / 2, so halving the gate rows lets one tanh serve all four blocks;
    # scaling by a power of two is exact
    half = np.where(np.arange(4 * H) < 3 * H, 0.5, 1.0)
    Wsc = Wcat * half[:, None]
    WhT = Wsc[:, :H].T
    # time-major layout keeps every per-step slice contiguous
    Xt = np.ascontiguousarray(X.transpose(1, 0, 2))  # (T, B, D)
    dense = bool(Xt.any())  # an all-zero input contributes nothing to the products below
    pre = np.empty((T, B, 4 * H))
    pre[...] = bcat * half
    if dense:
        pre += Xt @ Wsc[:, H + Ds:].T
    if Ds:
        pre += mask.T[:, :, None] * (static @ Wsc[:, H:H + Ds].T)[None]
    h = np.zeros((B, H))
    S = np.zeros((B, H))
    steps = []
    for t in range(T):
        a = pre[t]
        a += h @ WhT
        np.tanh(a, out=a)
        a[:, :3 * H] += 1.0
        a[:, :3 * H] *= 0.5
        gi, gf, go, cand = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        S_prev = S
        S = gf * S_prev + gi * cand
        tS = np.tanh(S)
        h_prev, h = h, go * tS
        steps.append((h_prev, a, S_prev, S, tS))  # a holds [i, f, o, candidate]
    mask_d = None
    out = h
    if dropout_active and params.dropout > 0:
        if rng is None:
            raise ValueError("dropout needs an rng")
        keep = 1.0 - params.dropout
        mask_d = (rng.random(h.shape) < keep) / keep
        out = h * mask_d
    cache = {"steps": steps, "mask": mask_d, "single": single, "Wcat": Wcat, "shape": (B, T, D), "Xt": Xt,
             "static": static, "step_mask": mask, "dense": dense}
    return (out[0] if single else out), cache


def lstm_gradients(cache, dh_out, params: LSTMParams, need_dX: bool = True):
    """Backpropagation through time from the gradient on the returned ``h_N``.

    Returns ``(grads, dX)`` where ``grads`` maps ``W_g``/``b_g`` names to
    arrays. With a static input ``dX`` is the pair ``(d_static, d_X)``.
    ``need_dX=False`` skips the input gradient of ``X`` (returned as None).
    """
    if cache is None or "steps" not in cache:
        raise ValueError("missing forward cache")
    B, T, D = cache["shape"]
    H = params.hidden
    dh = np.asarray(dh_out, dtype=np.float64).reshape(B, H)
    if cache["mask"] is not None:
        dh = dh * cache["mask"]
    Wcat = cache["Wcat"]
    Wh = Wcat[:, :H]
    da_all = np.empty((T, B, 4 * H))
    h_all = np.empty((T, B, H))
    dS = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        h_prev, a, S_prev, S, tS = cache["steps"][t]
        gi, gf, go, cand = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        h_all[t] = h_prev
        dS = dS + dh * go * (1.0 - tS * tS)
        da = da_all[t]
        np.multiply(dS, cand, out=da[:, :H])
        np.multiply(dS, S_prev, out=da[:, H:2 * H])
        np.multiply(dh, tS, out=da[:, 2 * H:3 * H])
        gates = a[:, :3 * H]
        da[:, :3 * H] *= gates * (1.0 - gates)
        np.multiply(dS * gi, 1.0 - cand * cand, out=da[:, 3 * H:])
        dh = da @ Wh
        dS *= gf
    static = cache["static"]
    Ds = 0 if static is None else static.shape[1]
    flat = da_all.reshape(T * B, 4 * H)
    parts = [flat.T @ h_all.reshape(T * B, H)]
    if Ds:
        da_static = np.einsum("tb,tbg->bg", cache["step_mask"].T, da_all)
        parts.append(da_static.T @ static)
    if cache["dense"]:
        parts.append(flat.T @ cache["Xt"].reshape(T * B, D))
    else:
        parts.append(np.zeros((4 * H, D)))
    dW = np.concatenate(parts, axis=1)
    db = flat.sum(axis=0)
    dX = None
    if need_dX:
        dX = (flat @ Wcat[:, H + Ds:]).reshape(T, B, D).transpose(1, 0, 2)
        if cache["single"]:
            dX = dX[0]
    if Ds:
        d_static = da_static @ Wcat[:, H:H + Ds]
        dX = (d_static[0] if cache["single"] else d_static, dX)
    grads = {}
    for k, g in enumerate(GATES):
        grads[f"W_{g}"] = dW[k * H:(k + 1) * H]
        grads[f"b_{g}"] = db[k * H:(k + 1) * H]
    return grads, dX
