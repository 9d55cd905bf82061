"""Export pretrained segmentation-model internals to EUSG containers."""

from .container_writer import ExportFormatError, write_entries
from .export import (
    FitSchedule,
    MissingLayerError,
    UnsupportedArchitectureError,
    export_features,
    export_head,
    export_snapshots,
    final_layer_matrix,
    flatten_head,
)
from .manifest import ExportManifest

__version__ = "0.1.0"
