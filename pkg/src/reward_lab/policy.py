"""Feed-forward muscle-command policy and its observation normalizer."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numba
import numpy as np

FORMAT = "reward-lab-policy"
FORMAT_VERSION = 1
OBS_CLIP = 5.0


def n_params(layer_sizes) -> int:
    return sum(i * o + o for i, o in zip(layer_sizes[:-1], layer_sizes[1:]))


@dataclass
class Normalizer:
    """Running per-dimension mean/variance (parallel-merge form)."""

    mean: np.ndarray
    var: np.ndarray
    count: float = 0.0

    @classmethod
    def identity(cls, dim):
        return cls(np.zeros(dim), np.ones(dim), 0.0)

    def merged(self, s1, s2, n) -> "Normalizer":
        """Fold in a batch summarised by its sum, sum of squares and count."""
        if n <= 0:
            return Normalizer(self.mean.copy(), self.var.copy(), self.count)
        b_mean = s1 / n
        b_var = np.maximum(s2 / n - b_mean**2, 0.0)
        if self.count == 0:
            return Normalizer(b_mean, b_var, float(n))
        tot = self.count + n
        delta = b_mean - self.mean
        mean = self.mean + delta * n / tot
        m2 = self.var * self.count + b_var * n + delta**2 * self.count * n / tot
        return Normalizer(mean, m2 / tot, float(tot))

    def apply(self, obs):
        return np.clip((obs - self.mean) / np.sqrt(self.var + 1e-8), -OBS_CLIP, OBS_CLIP)

    def to_dict(self):
        return {"mean": self.mean.tolist(), "var": self.var.tolist(), "count": self.count}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["var"], dtype=float), float(d["count"]))


@numba.njit(cache=True)
def _forward(params, sizes, x, out):
    # explicit loops: the summation order per row is fixed, so a candidate's
    # output never depends on its position in the batch
    B = x.shape[0]
    n_layers = sizes.shape[0] - 1
    width = 0
    for s in sizes:
        if s > width:
            width = s
    cur = np.empty(width)
    nxt = np.empty(width)
    for b in range(B):
        for i in range(sizes[0]):
            cur[i] = x[b, i]
        off = 0
        for layer in range(n_layers):
            n_in = sizes[layer]
            n_out = sizes[layer + 1]
            for o in range(n_out):
                acc = params[b, off + n_in * n_out + o]
                for i in range(n_in):
                    acc += cur[i] * params[b, off + i * n_out + o]
                if layer < n_layers - 1:
                    nxt[o] = math.tanh(acc)
                else:
                    nxt[o] = 1.0 / (1.0 + math.exp(-acc))
            off += n_in * n_out + n_out
            for o in range(n_out):
                cur[o] = nxt[o]
        for o in range(sizes[n_layers]):
            out[b, o] = cur[o]


def forward_batch(params, layer_sizes, obs_normed):
    """Muscle commands for a batch of parameter vectors and normalised observations."""
    params = np.ascontiguousarray(params, dtype=float)
    x = np.ascontiguousarray(obs_normed, dtype=float)
    out = np.empty((x.shape[0], layer_sizes[-1]))
    _forward(params, np.asarray(layer_sizes, dtype=np.int64), x, out)
    return out


@dataclass
class Policy:
    layer_sizes: tuple
    params: np.ndarray
    normalizer: Normalizer = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        self.params = np.asarray(self.params, dtype=float)
        if self.params.shape != (n_params(self.layer_sizes),):
            raise ValueError(
                f"parameter vector has {self.params.size} entries, layer sizes {self.layer_sizes} "
                f"need {n_params(self.layer_sizes)}"
            )
        if self.normalizer is None:
            self.normalizer = Normalizer.identity(self.layer_sizes[0])

    @classmethod
    def initial(cls, obs_dim, seed=0, hidden=(32, 32), n_out=6, command=0.5):
        """Random hidden layers and a zero output weight matrix, so every
        muscle starts at the constant ``command`` whatever the observation."""
        if not 0.0 < command < 1.0:
            raise ValueError("initial command must lie strictly inside (0, 1)")
        sizes = (obs_dim, *hidden, n_out)
        rng = np.random.default_rng(seed)
        chunks = []
        for k, (i, o) in enumerate(zip(sizes[:-1], sizes[1:])):
            if k < len(sizes) - 2:
                chunks += [rng.normal(0.0, 1.0 / np.sqrt(i), i * o), np.zeros(o)]
            else:
                chunks += [np.zeros(i * o), np.full(o, math.log(command / (1.0 - command)))]
        return cls(sizes, np.concatenate(chunks))

    @classmethod
    def zeros(cls, layer_sizes):
        return cls(layer_sizes, np.zeros(n_params(layer_sizes)))

    @property
    def obs_dim(self):
        return self.layer_sizes[0]

    def act(self, obs):
        """Commands for raw (un-normalised) observations, single or batched."""
        obs = np.asarray(obs, dtype=float)
        single = obs.ndim == 1
        x = self.normalizer.apply(np.atleast_2d(obs))
        p = np.broadcast_to(self.params, (x.shape[0], self.params.size))
        u = forward_batch(p, self.layer_sizes, x)
        return u[0] if single else u

    def to_json(self) -> str:
        doc = {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "layer_sizes": list(self.layer_sizes),
            "normalizer": self.normalizer.to_dict(),
            "meta": self.meta,
            "params": self.params.tolist(),
        }
        return json.dumps(doc, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Policy":
        doc = json.loads(text)
        if doc.get("format") != FORMAT:
            raise ValueError("not a policy file")
        if doc.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported policy format version {doc.get('version')}")
        return cls(
            tuple(doc["layer_sizes"]),
            np.asarray(doc["params"], dtype=float),
            Normalizer.from_dict(doc["normalizer"]),
            doc.get("meta", {}),
        )

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "Policy":
        with open(path) as fh:
            return cls.from_json(fh.read())
