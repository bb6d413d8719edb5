"""Dataset synthesis, losses and the training loop."""

from ..derev import wiener_mask as wiener_mask_target
from ..heads import mse_loss
from .dataset import DatasetManifest, ManifestEntry, build_dataset, make_manifest
from .loop import TrainConfig, train

__all__ = ["DatasetManifest", "ManifestEntry", "TrainConfig", "build_dataset", "make_manifest",
           "mse_loss", "train", "wiener_mask_target"]
