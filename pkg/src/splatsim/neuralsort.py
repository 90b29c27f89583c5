"""Order-independent weighted blending and the learned decay weight nets.

Weighted blending replaces sorted compositing with a normalized sum

    C = sum_i F_i * alpha_i * c_i / sum_i F_i * alpha_i

where F_i is a per-Gaussian depth weight.  Because addition commutes, the
result is independent of traversal order, which removes the per-tile sort
from the pipeline.  F comes either from a fixed exponential falloff or
from a small learned net evaluated once per Gaussian per frame.

DecayNet is the production shape: one scalar depth in, three hidden units,
one scalar out.

    h = leaky_relu(w1 * d + b1)      slope 1/8 on the negative side
    F = exp(w2 . h + b2)

Ten parameters, six MACs per Gaussian.  The hidden init is He normal, the
output layer Xavier uniform.  GeneralNet covers the neighboring design
points (2 or 3 layers, 2 or 3 units, relu/leaky hidden, sigmoid/exp
output) behind the same forward interface.

In fp16 mode every step is rounded to binary16: the hidden leaky relu uses
the exponent-decrement hardware model and the dot product accumulates in
ascending unit order with the bias added last.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import fp16

LEAKY_SLOPE = 0.125

DECAY_HIDDEN = 3
DECAY_N_PARAMS = 10
DECAY_N_MACS = 6


def blend_weighted(alphas: np.ndarray, rgbs: np.ndarray, f_values: np.ndarray,
                   cfg=None, counts=None, mode: str = "exact"):
    """Normalized weighted blend of a tile.

    alphas is (G, P), rgbs (G, 3), f_values (G,).  Returns (pixels (P, 3),
    contributing pair count, zero-denominator pixel count).  Pixels whose
    weight sum is zero fall back to the background color.
    """
    from .raster import RasterConfig, BLEND_WEIGHTED_COST

    if cfg is None:
        cfg = RasterConfig()
    dt = fp16.dtype_for(mode)
    g, p = alphas.shape
    a = alphas.astype(dt)
    rgb = rgbs.astype(dt)
    fv = f_values.astype(dt)
    num = np.zeros((p, 3), dtype=dt)
    den = np.zeros(p, dtype=dt)
    contributing = 0
    for i in range(g):
        take = a[i].astype(np.float64) >= cfg.alpha_skip
        if not take.any():
            continue
        w = fv[i] * a[i, take]
        num[take] += w[:, None] * rgb[i]
        den[take] = den[take] + w
        contributing += int(take.sum())
    resolved = den.astype(np.float64) > 0.0
    color = np.empty((p, 3), dtype=np.float64)
    color[~resolved] = np.asarray(cfg.background, dtype=np.float64)
    if resolved.any():
        color[resolved] = (num[resolved] / den[resolved, None]).astype(np.float64)
    zero_den = int(p - resolved.sum())
    if counts is not None:
        counts.blend.mul += BLEND_WEIGHTED_COST[0] * contributing
        counts.blend.add += BLEND_WEIGHTED_COST[1] * contributing
        counts.blend.div += 3 * int(resolved.sum())
    return color, contributing, zero_den


def weighted_forward(alphas: np.ndarray, rgbs: np.ndarray, fv: np.ndarray,
                     alpha_skip: float = 1.0 / 255.0,
                     background=(0.0, 0.0, 0.0)):
    """Differentiable weighted blend of one tile, exact arithmetic.

    Same math as blend_weighted but returns a cache for weighted_backward.
    No clipping: callers that need display images clip afterwards.
    """
    take = alphas >= alpha_skip
    w = np.where(take, fv[:, None] * alphas, 0.0)
    den = w.sum(axis=0)
    num = w.T @ rgbs
    resolved = den > 0.0
    safe = np.where(resolved, den, 1.0)
    color = np.where(resolved[:, None], num / safe[:, None],
                     np.asarray(background, dtype=np.float64))
    return color, (take, w, den, resolved, color)


def weighted_backward(cache, alphas: np.ndarray, rgbs: np.ndarray,
                      fv: np.ndarray, g: np.ndarray) -> dict:
    """Gradients of sum(g * color) from weighted_forward.

    Returns d/d fv (G,), d/d rgbs (G, 3) and d/d alphas (G, P).  Pixels
    with zero denominator sit on the background plateau: zero gradient.
    """
    take, w, den, resolved, color = cache
    inv = np.where(resolved, 1.0 / np.where(resolved, den, 1.0), 0.0)
    g_eff = g * resolved[:, None]
    s = rgbs @ g_eff.T          # (G, P): sum_ch rgb_gc * g_pc
    u = (color * g_eff).sum(axis=1)  # (P,): sum_ch C_pc * g_pc
    common = inv[None, :] * (s - u[None, :]) * take
    df = (alphas * common).sum(axis=1)
    dalpha = fv[:, None] * common
    drgb = (w * inv[None, :]) @ g_eff
    return {"f": df, "rgb": drgb, "alpha": dalpha}


def normalize_depths(depths: np.ndarray, policy: str = "frame_max") -> np.ndarray:
    """Map view depths into the unit-scale range the decay nets were trained on."""
    d = np.asarray(depths, dtype=np.float64)
    if policy == "none":
        return d
    if policy == "frame_max":
        m = d.max() if len(d) else 0.0
        return d / m if m > 0 else d
    raise ValueError(f"unknown depth normalization {policy!r}")


def fixed_decay(depths_norm: np.ndarray, k: float, mode: str = "exact") -> np.ndarray:
    """F(d) = exp(-k d) on normalized depths; k = 0 degenerates to uniform weights."""
    dt = fp16.dtype_for(mode)
    z = -(dt(k) * np.asarray(depths_norm).astype(dt))
    return fp16.exp_array(z, mode).astype(np.float64)


def _leaky(x: np.ndarray, mode: str) -> np.ndarray:
    if mode == "fp16":
        return fp16.leaky_relu_hw_np(x.astype(np.float16))
    return np.where(x > 0, x, LEAKY_SLOPE * x)


@dataclass
class DecayNet:
    """1-3-1 depth weight net: h = leaky(w1 d + b1), F = exp(w2 . h + b2)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    depth_norm: str = "frame_max"

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64).reshape(DECAY_HIDDEN)
        self.b1 = np.asarray(self.b1, dtype=np.float64).reshape(DECAY_HIDDEN)
        self.w2 = np.asarray(self.w2, dtype=np.float64).reshape(DECAY_HIDDEN)
        self.b2 = float(self.b2)

    @staticmethod
    def init(seed: int = 0, depth_norm: str = "frame_max") -> "DecayNet":
        # He normal for the fan-in-1 hidden layer, Xavier uniform for the output
        rng = np.random.default_rng(seed)
        w1 = rng.normal(0.0, np.sqrt(2.0), size=DECAY_HIDDEN)
        limit = np.sqrt(6.0 / (DECAY_HIDDEN + 1))
        w2 = rng.uniform(-limit, limit, size=DECAY_HIDDEN)
        return DecayNet(w1=w1, b1=np.zeros(DECAY_HIDDEN), w2=w2, b2=0.0,
                        depth_norm=depth_norm)

    @property
    def n_params(self) -> int:
        return DECAY_N_PARAMS

    @property
    def n_macs(self) -> int:
        return DECAY_N_MACS

    def forward(self, depths_norm: np.ndarray, mode: str = "exact") -> np.ndarray:
        f, _ = self.forward_cached(depths_norm, mode=mode)
        return f

    def forward_cached(self, depths_norm: np.ndarray, mode: str = "exact"):
        fp16.require_mode(mode)
        d = np.asarray(depths_norm, dtype=np.float64)
        if mode == "exact":
            pre = d[:, None] * self.w1[None, :] + self.b1[None, :]
            h = _leaky(pre, mode)
            z = h @ self.w2 + self.b2
            f = np.exp(z)
        else:
            dt = np.float16
            d16 = d.astype(dt)
            w1 = self.w1.astype(dt)
            b1 = self.b1.astype(dt)
            w2 = self.w2.astype(dt)
            pre = (d16[:, None] * w1[None, :]) + b1[None, :]
            h = _leaky(pre, mode)
            z = h[:, 0] * w2[0]
            for j in range(1, DECAY_HIDDEN):
                z = z + h[:, j] * w2[j]
            z = z + dt(self.b2)
            f = fp16.exp_array(z, mode)
            pre = pre.astype(np.float64)
            h = h.astype(np.float64)
            f = f.astype(np.float64)
        return f, (d, pre, h, f)

    def backward(self, cache, df: np.ndarray) -> dict:
        """Gradients of sum(df * F) w.r.t. parameters; kink subgradient is 1."""
        d, pre, h, f = cache
        dz = np.asarray(df, dtype=np.float64) * f
        dw2 = h.T @ dz
        db2 = dz.sum()
        dh = dz[:, None] * self.w2[None, :]
        slope = np.where(pre >= 0, 1.0, LEAKY_SLOPE)
        dpre = dh * slope
        dw1 = (dpre * d[:, None]).sum(axis=0)
        db1 = dpre.sum(axis=0)
        return {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}

    def params(self) -> dict:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2,
                "b2": np.asarray(self.b2)}

    def apply_update(self, deltas: dict) -> None:
        self.w1 = self.w1 + deltas["w1"]
        self.b1 = self.b1 + deltas["b1"]
        self.w2 = self.w2 + deltas["w2"]
        self.b2 = float(self.b2 + deltas["b2"])

    def to_dict(self) -> dict:
        return {"kind": "decay", "w1": self.w1.tolist(), "b1": self.b1.tolist(),
                "w2": self.w2.tolist(), "b2": self.b2, "depth_norm": self.depth_norm}

    @staticmethod
    def from_dict(d: dict) -> "DecayNet":
        if d.get("kind", "decay") != "decay":
            raise ValueError(f"not a decay net description: kind={d.get('kind')!r}")
        return DecayNet(w1=d["w1"], b1=d["b1"], w2=d["w2"], b2=d["b2"],
                        depth_norm=d.get("depth_norm", "frame_max"))

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @staticmethod
    def load_json(path) -> "DecayNet":
        with open(path) as fh:
            return DecayNet.from_dict(json.load(fh))


GENERAL_STRUCTURES = {
    "2l-2n": (1, 2, 1),
    "2l-3n": (1, 3, 1),
    "3l-2n": (1, 2, 2, 1),
    "3l-3n": (1, 3, 3, 1),
}

HIDDEN_ACTS = ("relu", "leaky")
OUTPUT_ACTS = ("sigmoid", "exp")


@dataclass
class GeneralNet:
    """Configurable small depth net for the design sweep; same forward contract."""

    weights: list  # per layer (out, in)
    biases: list
    hidden_act: str = "leaky"
    output_act: str = "exp"
    structure: str = "2l-3n"
    depth_norm: str = "frame_max"

    def __post_init__(self):
        if self.hidden_act not in HIDDEN_ACTS:
            raise ValueError(f"unknown hidden activation {self.hidden_act!r}")
        if self.output_act not in OUTPUT_ACTS:
            raise ValueError(f"unknown output activation {self.output_act!r}")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]

    @staticmethod
    def init(structure: str = "2l-3n", hidden_act: str = "leaky",
             output_act: str = "exp", seed: int = 0,
             depth_norm: str = "frame_max") -> "GeneralNet":
        if structure not in GENERAL_STRUCTURES:
            raise ValueError(f"unknown structure {structure!r}")
        dims = GENERAL_STRUCTURES[structure]
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for i in range(len(dims) - 1):
            fan_in, fan_out = dims[i], dims[i + 1]
            if i < len(dims) - 2:
                w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            weights.append(w)
            biases.append(np.zeros(fan_out))
        return GeneralNet(weights=weights, biases=biases, hidden_act=hidden_act,
                          output_act=output_act, structure=structure,
                          depth_norm=depth_norm)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    @property
    def n_macs(self) -> int:
        return sum(w.size for w in self.weights)

    def _hidden(self, x: np.ndarray, mode: str) -> np.ndarray:
        if self.hidden_act == "relu":
            return np.maximum(x, x.dtype.type(0))
        return _leaky(x, mode)

    def _output(self, z: np.ndarray, mode: str) -> np.ndarray:
        if self.output_act == "exp":
            return fp16.exp_array(z, mode)
        if mode == "fp16":
            dt = np.float16
            e = fp16.exp_array(-z, mode)
            return dt(1.0) / (dt(1.0) + e)
        return 1.0 / (1.0 + np.exp(-z))

    def _dense(self, a: np.ndarray, w: np.ndarray, b: np.ndarray,
               mode: str) -> np.ndarray:
        if mode == "exact":
            return a @ w.T + b[None, :]
        # fp16: accumulate in ascending input order, bias last, rounding each step
        dt = np.float16
        cols = []
        for o in range(w.shape[0]):
            acc = a[:, 0] * dt(w[o, 0])
            for k in range(1, w.shape[1]):
                acc = acc + a[:, k] * dt(w[o, k])
            cols.append(acc + dt(b[o]))
        return np.stack(cols, axis=1)

    def forward(self, depths_norm: np.ndarray, mode: str = "exact") -> np.ndarray:
        f, _ = self.forward_cached(depths_norm, mode=mode)
        return f

    def forward_cached(self, depths_norm: np.ndarray, mode: str = "exact"):
        fp16.require_mode(mode)
        dt = fp16.dtype_for(mode)
        d = np.asarray(depths_norm, dtype=np.float64)
        a = d.astype(dt)[:, None]
        pres, acts = [], [a.astype(np.float64)]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = self._dense(a, w.astype(dt), b.astype(dt), mode)
            pres.append(z.astype(np.float64))
            if i < len(self.weights) - 1:
                a = self._hidden(z, mode)
                acts.append(a.astype(np.float64))
            else:
                a = self._output(z, mode)
        f = a[:, 0].astype(np.float64)
        return f, (d, pres, acts, f)

    def backward(self, cache, df: np.ndarray) -> dict:
        d, pres, acts, f = cache
        n_layers = len(self.weights)
        if self.output_act == "exp":
            dz = np.asarray(df, dtype=np.float64) * f
        else:
            dz = np.asarray(df, dtype=np.float64) * f * (1.0 - f)
        grad = dz[:, None]
        gw = [None] * n_layers
        gb = [None] * n_layers
        for i in range(n_layers - 1, -1, -1):
            gw[i] = grad.T @ acts[i]
            gb[i] = grad.sum(axis=0)
            if i > 0:
                da = grad @ self.weights[i]
                pre = pres[i - 1]
                if self.hidden_act == "relu":
                    slope = (pre > 0).astype(np.float64)
                else:
                    slope = np.where(pre >= 0, 1.0, LEAKY_SLOPE)
                grad = da * slope
        return {"weights": gw, "biases": gb}

    def apply_update(self, deltas: dict) -> None:
        self.weights = [w + d for w, d in zip(self.weights, deltas["weights"])]
        self.biases = [b + d for b, d in zip(self.biases, deltas["biases"])]

    def to_dict(self) -> dict:
        return {"kind": "general", "structure": self.structure,
                "hidden_act": self.hidden_act, "output_act": self.output_act,
                "weights": [w.tolist() for w in self.weights],
                "biases": [b.tolist() for b in self.biases],
                "depth_norm": self.depth_norm}

    @staticmethod
    def from_dict(d: dict) -> "GeneralNet":
        if d.get("kind") != "general":
            raise ValueError(f"not a general net description: kind={d.get('kind')!r}")
        return GeneralNet(weights=d["weights"], biases=d["biases"],
                          hidden_act=d["hidden_act"], output_act=d["output_act"],
                          structure=d["structure"],
                          depth_norm=d.get("depth_norm", "frame_max"))


def load_net_json(path):
    """Load either net flavor from its JSON description."""
    with open(path) as fh:
        d = json.load(fh)
    if d.get("kind", "decay") == "decay":
        return DecayNet.from_dict(d)
    return GeneralNet.from_dict(d)


def decay_as_general(net: DecayNet) -> GeneralNet:
    """Express a DecayNet as the equivalent 2l-3n leaky/exp GeneralNet."""
    return GeneralNet(weights=[net.w1.reshape(DECAY_HIDDEN, 1),
                               net.w2.reshape(1, DECAY_HIDDEN)],
                      biases=[net.b1.copy(), np.array([net.b2])],
                      hidden_act="leaky", output_act="exp", structure="2l-3n",
                      depth_norm=net.depth_norm)
