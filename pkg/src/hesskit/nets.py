"""Tiny generator and discriminator networks with named activation taps.

The generator stacks affine -> feature-normalize -> tanh blocks and ends
with a linear head; every normalization output is exposed as a tap named
``norm1 .. normL`` so penalties can attach to intermediate activations.
Placing taps right after normalization avoids the degenerate solution
where an affine layer shrinks its weights to cheat the penalty. The
default tap selection leaves the last hidden layer out.

The discriminator stacks affine -> leaky-rectifier blocks and ends in a
single linear logit. Both nets are read-shared during evaluation;
parameter updates need exclusive access.

Checkpoints are versioned ``.npz`` containers of named parameter arrays
plus architecture metadata, with a human-readable JSON manifest
(name, shape, sha256) written next to them.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from . import autodiff as ad
from .errors import ContractViolation
from .functions import as_batch

CHECKPOINT_VERSION = 1


def _init_affine(rng, fan_in: int, fan_out: int, prefix: str) -> tuple[ad.Parameter, ad.Parameter]:
    w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
    return ad.Parameter(f"{prefix}.weight", w), ad.Parameter(f"{prefix}.bias", np.zeros(fan_out))


class Generator:
    """Latent-to-observation MLP: (affine, feature-normalize, tanh) x L, affine head."""

    kind = "generator"

    def __init__(
        self,
        latent_dim: int = 6,
        output_dim: int = 768,
        hidden_width: int = 64,
        hidden_layers: int = 3,
        seed: int = 0,
    ):
        if latent_dim < 1 or output_dim < 1 or hidden_width < 1 or hidden_layers < 0:
            raise ContractViolation("generator dimensions must be positive")
        self.latent_dim = int(latent_dim)
        self.output_dim = int(output_dim)
        self.hidden_width = int(hidden_width)
        self.hidden_layers = int(hidden_layers)
        self.seed = int(seed)
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        self._hidden = []
        width_in = self.latent_dim
        for i in range(self.hidden_layers):
            self._hidden.append(_init_affine(rng, width_in, self.hidden_width, f"hidden.{i}"))
            width_in = self.hidden_width
        self._head = _init_affine(rng, width_in, self.output_dim, "head")

    @property
    def input_dim(self) -> int:
        return self.latent_dim

    @property
    def tap_names(self) -> tuple[str, ...]:
        return tuple(f"norm{i + 1}" for i in range(self.hidden_layers))

    @property
    def default_taps(self) -> tuple[str, ...]:
        """All normalization taps except the final hidden layer's."""
        return self.tap_names[:-1] if self.hidden_layers > 1 else self.tap_names

    def parameters(self) -> list[ad.Parameter]:
        params = []
        for w, b in self._hidden:
            params.extend((w, b))
        params.extend(self._head)
        return params

    def __call__(self, z) -> tuple[ad.Tensor, dict[str, ad.Tensor]]:
        h, _ = as_batch(z, self.latent_dim)
        taps: dict[str, ad.Tensor] = {}
        for i, (w, b) in enumerate(self._hidden):
            normed = ad.feature_normalize(ad.matmul(h, w) + b)
            taps[f"norm{i + 1}"] = normed
            h = ad.tanh(normed)
        out = ad.matmul(h, self._head[0]) + self._head[1]
        return out, taps

    def arch(self) -> dict:
        return {
            "latent_dim": self.latent_dim,
            "output_dim": self.output_dim,
            "hidden_width": self.hidden_width,
            "hidden_layers": self.hidden_layers,
            "seed": self.seed,
        }


class Discriminator:
    """Observation-to-logit MLP: (affine, leaky-rectifier) x L, affine head."""

    kind = "discriminator"
    slope = 0.2

    def __init__(
        self,
        input_dim: int = 768,
        hidden_width: int = 64,
        hidden_layers: int = 2,
        seed: int = 0,
    ):
        if input_dim < 1 or hidden_width < 1 or hidden_layers < 0:
            raise ContractViolation("discriminator dimensions must be positive")
        self.input_dim = int(input_dim)
        self.hidden_width = int(hidden_width)
        self.hidden_layers = int(hidden_layers)
        self.seed = int(seed)
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        self._hidden = []
        width_in = self.input_dim
        for i in range(self.hidden_layers):
            self._hidden.append(_init_affine(rng, width_in, self.hidden_width, f"hidden.{i}"))
            width_in = self.hidden_width
        self._head = _init_affine(rng, width_in, 1, "head")

    def parameters(self) -> list[ad.Parameter]:
        params = []
        for w, b in self._hidden:
            params.extend((w, b))
        params.extend(self._head)
        return params

    def __call__(self, x) -> ad.Tensor:
        h, _ = as_batch(x, self.input_dim)
        for w, b in self._hidden:
            h = ad.leaky_relu(ad.matmul(h, w) + b, self.slope)
        return ad.matmul(h, self._head[0]) + self._head[1]

    def arch(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_width": self.hidden_width,
            "hidden_layers": self.hidden_layers,
            "seed": self.seed,
        }


def set_trainable(net, flag: bool) -> None:
    for p in net.parameters():
        p.requires_grad = bool(flag)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(net, path: str) -> str:
    """Write a versioned parameter container plus a JSON manifest.

    The manifest path is the checkpoint path with ``.manifest.json``
    appended to the stem.
    """
    meta = {"format": "checkpoint", "version": CHECKPOINT_VERSION, "kind": net.kind,
            "arch": net.arch()}
    arrays = {p.name: p.values for p in net.parameters()}
    os.makedirs(os.path.dirname(os.path.abspath(path)) or ".", exist_ok=True)
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
             **arrays)
    manifest = {
        "format": "checkpoint-manifest",
        "version": CHECKPOINT_VERSION,
        "kind": net.kind,
        "arch": net.arch(),
        "parameters": [
            {
                "name": name,
                "shape": list(arr.shape),
                "sha256": hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest(),
            }
            for name, arr in sorted(arrays.items())
        ],
    }
    manifest_path = _manifest_path(path)
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest_path


def _manifest_path(path: str) -> str:
    stem = path[:-4] if path.endswith(".npz") else path
    return stem + ".manifest.json"


def load_checkpoint(path: str):
    """Rebuild a network from a checkpoint; parameter values load bit-exact."""
    with np.load(path) as data:
        if "__meta__" not in data:
            raise ContractViolation(f"{path}: not a checkpoint container (missing metadata)")
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ContractViolation(
                f"{path}: unsupported checkpoint version {meta.get('version')!r}"
            )
        arch = meta["arch"]
        if meta["kind"] == "generator":
            net = Generator(**arch)
        elif meta["kind"] == "discriminator":
            net = Discriminator(**arch)
        else:
            raise ContractViolation(f"{path}: unknown checkpoint kind {meta['kind']!r}")
        for p in net.parameters():
            if p.name not in data:
                raise ContractViolation(f"{path}: missing parameter {p.name!r}")
            p.assign(data[p.name])
    return net
