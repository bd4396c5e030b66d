"""Self-describing model bundles serialised as JSON with hex-encoded floats."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .capture import BootTrace
from .dataset import LabelMap, ScalerBounds, apply_scaler
from .featurize import HASH_TAG, featurize_array
from .mlp import Network, forward

FORMAT_VERSION = 1


class BundleError(Exception):
    pass


class CorruptBundle(BundleError):
    def __init__(self, field: str, detail: str = ""):
        super().__init__(f"corrupt bundle field {field!r}" + (f": {detail}" if detail else ""))
        self.field = field


class VersionMismatch(BundleError):
    pass


@dataclass
class ModelBundle:
    labels: LabelMap
    bounds: ScalerBounds
    network: Network
    h: int
    t_delta: float
    seed: int
    hash_tag: str = HASH_TAG
    format_version: int = FORMAT_VERSION

    @property
    def granularity(self) -> str:
        return self.labels.granularity

    @property
    def hidden_layers(self) -> int:
        return self.network.hidden_layers

    def scale(self, raw) -> np.ndarray:
        return apply_scaler(raw, self.bounds)

    def predict_proba(self, raw) -> np.ndarray:
        """Probabilities for unscaled frequency vector(s)."""
        return forward(self.network, self.scale(raw))

    def predict_trace(self, trace: BootTrace) -> np.ndarray:
        return self.predict_proba(featurize_array(trace, self.h, self.t_delta))

    def to_dict(self) -> dict:
        hexes = lambda a: [float(x).hex() for x in np.ravel(a)]
        return {
            "format_version": self.format_version,
            "hash": self.hash_tag,
            "granularity": self.granularity,
            "h": self.h,
            "t_delta": float(self.t_delta).hex(),
            "hidden_layers": self.hidden_layers,
            "seed": self.seed,
            "classes": list(self.labels.classes),
            "scaler": {"mins": hexes(self.bounds.mins), "maxs": hexes(self.bounds.maxs)},
            "layers": [{"shape": list(W.shape), "weights": hexes(W), "biases": hexes(b)}
                       for W, b in zip(self.network.weights, self.network.biases)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelBundle":
        if not isinstance(d, dict):
            raise CorruptBundle("<root>", "not a JSON object")

        def get(key):
            if key not in d:
                raise CorruptBundle(key, "missing")
            return d[key]

        version = get("format_version")
        if version != FORMAT_VERSION:
            raise VersionMismatch(f"bundle format {version!r}, expected {FORMAT_VERSION}")
        if get("hash") != HASH_TAG:
            raise VersionMismatch(f"bundle hash {d['hash']!r}, expected {HASH_TAG!r}")

        def floats(value, field, n=None):
            try:
                arr = np.array([float.fromhex(x) for x in value], dtype=np.float64)
            except (TypeError, ValueError) as exc:
                raise CorruptBundle(field, str(exc)) from None
            if n is not None and arr.size != n:
                raise CorruptBundle(field, f"expected {n} values, got {arr.size}")
            return arr

        try:
            h = int(get("h"))
            hidden = int(get("hidden_layers"))
            seed = int(get("seed"))
            t_delta = float.fromhex(get("t_delta"))
            labels = LabelMap(str(get("granularity")), tuple(get("classes")))
        except (TypeError, ValueError) as exc:
            raise CorruptBundle("header", str(exc)) from None
        scaler = get("scaler")
        if not isinstance(scaler, dict) or "mins" not in scaler or "maxs" not in scaler:
            raise CorruptBundle("scaler", "needs mins and maxs")
        bounds = ScalerBounds(floats(scaler["mins"], "scaler.mins", h),
                              floats(scaler["maxs"], "scaler.maxs", h))

        layers = get("layers")
        if not isinstance(layers, list) or len(layers) != hidden + 1:
            raise CorruptBundle("layers", f"expected {hidden + 1} layers")
        weights, biases = [], []
        for i, layer in enumerate(layers):
            try:
                rows, cols = layer["shape"]
                W = floats(layer["weights"], f"layers[{i}].weights", rows * cols).reshape(rows, cols)
                b = floats(layer["biases"], f"layers[{i}].biases", cols)
            except (KeyError, TypeError, ValueError) as exc:
                raise CorruptBundle(f"layers[{i}]", str(exc)) from None
            weights.append(W)
            biases.append(b)
        try:
            net = Network(weights, biases)
        except ValueError as exc:
            raise CorruptBundle("layers", str(exc)) from None
        if net.input_dim != h or net.output_dim != len(labels):
            raise CorruptBundle("layers", "dimensions disagree with h/classes")
        return cls(labels, bounds, net, h, t_delta, seed, d["hash"], version)


def bundle_path(models_dir: str | Path, t_delta: float, h: int, hidden_layers: int,
                granularity: str) -> Path:
    return Path(models_dir) / f"td{t_delta:g}_h{h}_l{hidden_layers}" / f"{granularity}.model.json"


def save_bundle(bundle: ModelBundle, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(bundle.to_dict()) + "\n", encoding="utf-8")
    return path


def load_bundle(path: str | Path) -> ModelBundle:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorruptBundle("<json>", exc.msg) from None
    return ModelBundle.from_dict(d)
