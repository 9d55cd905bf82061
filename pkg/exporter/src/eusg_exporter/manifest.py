"""Export manifest: which model, which split layer, and what came out."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class ExportManifest:
    """Record of one export run, persisted as a flat key=value file.

    ``layer`` names the final classification layer used as the split
    point; features are that layer's inputs, so ``feature_dim`` must equal
    its input channels and the exported weight matrix is
    (num_classes, feature_dim).
    """

    model: str
    layer: str
    num_classes: int
    feature_dim: int
    out_dir: str
    images: list = field(default_factory=list)
    normalize_mean: tuple = (0.0,)
    normalize_std: tuple = (1.0,)

    def save(self, path):
        lines = [
            f"model={self.model}",
            f"layer={self.layer}",
            f"num_classes={self.num_classes}",
            f"feature_dim={self.feature_dim}",
            f"out_dir={self.out_dir}",
            f"normalize_mean={','.join(str(v) for v in self.normalize_mean)}",
            f"normalize_std={','.join(str(v) for v in self.normalize_std)}",
        ]
        lines += [f"image={name}" for name in self.images]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "ExportManifest":
        values = {}
        images = []
        for raw in Path(path).read_text().splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            if key == "image":
                images.append(value)
            else:
                values[key] = value
        return cls(
            model=values["model"],
            layer=values["layer"],
            num_classes=int(values["num_classes"]),
            feature_dim=int(values["feature_dim"]),
            out_dir=values["out_dir"],
            images=images,
            normalize_mean=tuple(float(v) for v in values["normalize_mean"].split(",")),
            normalize_std=tuple(float(v) for v in values["normalize_std"].split(",")),
        )
