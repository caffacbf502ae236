"""Named trainable parameters, the Adam optimizer, and JSON checkpoints."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor, constant, parameter, softplus, square

ZERO_NAME = "0"
FORMAT_VERSION = 1
TAU_RAW_INIT = math.log(math.e - 1.0)  # softplus(raw) == 1


class ShapeConflict(ValueError):
    pass


def _name_seed(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "little")


def init_parameter(name: str, shape: tuple, seed: int, role: str = "matrix") -> np.ndarray:
    """Initial value for a parameter.

    Matrices and bias columns are Glorot-uniform; the raw value behind a
    pooling exponent starts at 0 (beta = 1) and the raw value behind a
    softplus scale starts so that tau = 1. The draw depends only on
    (seed, name), never on creation order.
    """
    if role == "beta":
        return np.zeros(shape)
    if role == "tau":
        return np.full(shape, TAU_RAW_INIT)
    rng = np.random.default_rng([seed, _name_seed(name)])
    rows, cols = shape
    a = math.sqrt(6.0 / (rows + cols)) if rows + cols else 0.0
    return rng.uniform(-a, a, size=shape)


class ParameterStore:
    """Mapping from parameter name to a leaf tensor.

    Parameters are created lazily the first time a name is requested, with
    the shape of that first request; later requests must agree.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.tensors: dict[str, Tensor] = {}
        self.roles: dict[str, str] = {}
        self.frozen = {ZERO_NAME}

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __len__(self) -> int:
        return len(self.tensors)

    def get(self, name: str, shape: tuple, role: str = "matrix") -> Tensor:
        if name == ZERO_NAME:
            return constant(np.zeros(shape))
        t = self.tensors.get(name)
        if t is None:
            t = parameter(init_parameter(name, shape, self.seed, role), name=name)
            self.tensors[name] = t
            self.roles[name] = role
        elif t.shape != tuple(shape):
            raise ShapeConflict(f"parameter {name} has shape {t.shape}, requested {tuple(shape)}")
        return t

    def beta(self, name: str) -> Tensor:
        """Pooling exponent 1 + b^2 >= 1."""
        return square(self.get(name, (), "beta")) + 1.0

    def tau(self, name: str) -> Tensor:
        """Softplus temperature, always > 0."""
        return softplus(self.get(name, (), "tau"))

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def num_scalars(self) -> int:
        return sum(int(t.value.size) for t in self.tensors.values())

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def gradients(self) -> dict[str, np.ndarray]:
        return {
            n: (t.grad.copy() if t.grad is not None else np.zeros_like(t.value))
            for n, t in sorted(self.tensors.items())
        }

    def values(self) -> dict[str, np.ndarray]:
        return {n: t.value.copy() for n, t in sorted(self.tensors.items())}

    def load_values(self, values: dict, roles: dict | None = None):
        for n, v in values.items():
            arr = np.array(v, dtype=np.float64)
            if n in self.tensors:
                if self.tensors[n].shape != arr.shape:
                    raise ShapeConflict(f"checkpoint shape mismatch for {n}")
                self.tensors[n].value = arr
            else:
                self.tensors[n] = parameter(arr, name=n)
                self.roles[n] = (roles or {}).get(n, "matrix")

    def copy(self) -> "ParameterStore":
        other = ParameterStore(self.seed)
        other.load_values(self.values(), self.roles)
        return other


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, store: ParameterStore):
        """One bias-corrected Adam update; gradients are cleared afterwards."""
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for name in sorted(store.tensors):
            p = store.tensors[name]
            if name in store.frozen:
                p.grad = None
                continue
            g = p.grad if p.grad is not None else np.zeros_like(p.value)
            m = self.m.get(name)
            v = self.v.get(name)
            if m is None:
                m = np.zeros_like(p.value)
                v = np.zeros_like(p.value)
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            p.value = p.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = None


# ---------------------------------------------------------------------------
# checkpoints


def _encode(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape), "values": [float(x) for x in arr.ravel()]}


def _decode(d: dict) -> np.ndarray:
    return np.array(d["values"], dtype=np.float64).reshape(d["shape"])


def checkpoint_dict(store: ParameterStore, program_hash: str = "", optimizer: Adam | None = None) -> dict:
    opt = optimizer or Adam()
    return {
        "format_version": FORMAT_VERSION,
        "program_hash": program_hash,
        "rng_seed": store.seed,
        "step_count": opt.step_count,
        "optimizer": {
            "lr": opt.lr,
            "m": {n: _encode(a) for n, a in sorted(opt.m.items())},
            "v": {n: _encode(a) for n, a in sorted(opt.v.items())},
        },
        "roles": dict(sorted(store.roles.items())),
        "parameters": {n: _encode(t.value) for n, t in sorted(store.tensors.items())},
    }


def save_checkpoint(path, store: ParameterStore, program_hash: str = "", optimizer: Adam | None = None):
    Path(path).write_text(json.dumps(checkpoint_dict(store, program_hash, optimizer), indent=1) + "\n")


def load_checkpoint(path) -> tuple[ParameterStore, Adam, dict]:
    doc = json.loads(Path(path).read_text())
    return checkpoint_from_dict(doc)


def checkpoint_from_dict(doc: dict) -> tuple[ParameterStore, Adam, dict]:
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {doc.get('format_version')}")
    store = ParameterStore(doc["rng_seed"])
    store.load_values({n: _decode(d) for n, d in doc["parameters"].items()}, doc.get("roles"))
    o = doc["optimizer"]
    opt = Adam(
        lr=o["lr"],
        step_count=doc["step_count"],
        m={n: _decode(d) for n, d in o["m"].items()},
        v={n: _decode(d) for n, d in o["v"].items()},
    )
    return store, opt, doc
