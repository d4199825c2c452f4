"""Python bindings for the simcvd semi-supervised segmentation toolkit."""

import json as _json

from ._simcvd import (  # noqa: F401
    Error,
    InvalidArgument,
    IoError,
    NumericalError,
    ShapeError,
    StateError,
    __version__,
    consistency_loss,
    dice_jaccard,
    generate_phantom,
    info_nce,
    lr_schedule,
    paired_t_test,
    pairwise_distill_loss,
    rampup,
    seg_loss,
    signed_distance_map,
    surface_distances,
    total_loss,
)
from . import _simcvd


def default_config():
    """Default experiment configuration as a dict."""
    return _json.loads(_simcvd._default_config())


def generate(config, dataset_dir, force=False):
    """Generate (or verify) a phantom dataset; returns its manifest."""
    return _json.loads(_simcvd._generate(_json.dumps(config), str(dataset_dir), force))


def train(config, dataset_dir, run_dir):
    """Train and return the per-iteration loss log as a list of dicts."""
    return _simcvd._train(_json.dumps(config), str(dataset_dir), str(run_dir))


def evaluate(run_dir, dataset_dir=None):
    """Evaluate a run's student on the test split; returns the aggregate metrics.

    Without `dataset_dir` the dataset recorded at training time is used.
    """
    data = "" if dataset_dir is None else str(dataset_dir)
    return _json.loads(_simcvd._evaluate(str(run_dir), data))
