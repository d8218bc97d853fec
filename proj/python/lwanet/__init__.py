"""Lightweight attention-guided segmentation network (C++ core)."""

import json

try:
    from . import _lwanet
except ImportError:  # in-tree build: the extension sits next to the package
    import _lwanet

ShapeError = _lwanet.ShapeError
WeightFileError = _lwanet.WeightFileError

__all__ = [
    "Model",
    "ShapeError",
    "WeightFileError",
    "analyze",
    "default_config",
    "ds_cost_ratio",
    "focal_loss",
    "focal_term",
    "grad_suite",
    "synth_shapes",
]

ds_cost_ratio = _lwanet.ds_cost_ratio
focal_term = _lwanet.focal_term
focal_loss = _lwanet.focal_loss
synth_shapes = _lwanet.synth_shapes


def default_config():
    return json.loads(_lwanet.default_config())


def analyze(config=None, size=(960, 544), flops_per_mac=1, per_layer=True):
    """Static MAC and parameter counts; `size` is (width, height)."""
    width, height = size
    text = _lwanet.analyze(json.dumps(config or {}), height, width, flops_per_mac, per_layer)
    return json.loads(text)


def grad_suite(cases=5, seed=1, only="", threshold=1e-4):
    return json.loads(_lwanet.grad_suite(cases, seed, only, threshold))


class Model:
    """Float32 network. `config` is a dict of network settings."""

    def __init__(self, config=None, seed=0, _impl=None):
        self._m = _impl if _impl is not None else _lwanet.Model(json.dumps(config or {}), seed)

    @classmethod
    def load(cls, path):
        return cls(_impl=_lwanet.Model.load(str(path)))

    @property
    def config(self):
        return json.loads(self._m.config())

    def save(self, path):
        self._m.save(str(path))

    def param_names(self):
        return self._m.param_names()

    def param(self, name):
        return self._m.param(name)

    def num_params(self, trainable_only=False):
        return self._m.num_params(trainable_only)

    def logits(self, x):
        """Eval-mode logits at stride 4 for normalized NCHW input."""
        return self._m.logits(x)

    def predict(self, images):
        """Class ids [n, h, w] for raw [0, 1] RGB images [n, 3, h, w]."""
        return self._m.predict(images)
