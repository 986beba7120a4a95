"""Python bindings for the geobox annotation engine."""

import json

from . import _core
from ._core import (
    AllPathsImpossible,
    Clip,
    ConfigError,
    DegenerateCorrespondence,
    GeoboxError,
    Homography,
    TooFewClips,
    clip_metrics,
    dbscan,
    high_pass,
    iou,
    normalized_distance,
    smooth,
    viterbi,
)


def simulate(scenario=None, **overrides):
    """Generate a clip from a scenario dict (missing keys take their defaults)."""
    spec = dict(scenario or {})
    spec.update(overrides)
    return _core.simulate(json.dumps(spec))


def annotate(clip, version="v3", params=None):
    """Run the stages of `version` on a clip. Boxes are (cx, cy, w, h) or None."""
    return _core.annotate(clip, version, json.dumps(params) if params else "")


def run_benchmark(suite=None, **overrides):
    """Cross-validated benchmark; returns the report as a dict."""
    spec = dict(suite or {})
    spec.update(overrides)
    return json.loads(_core.run_benchmark(json.dumps(spec)))


__all__ = [
    "AllPathsImpossible", "Clip", "ConfigError", "DegenerateCorrespondence", "GeoboxError", "Homography",
    "TooFewClips", "annotate", "clip_metrics", "dbscan", "high_pass", "iou", "normalized_distance",
    "run_benchmark", "simulate", "smooth", "viterbi",
]
