"""Run configuration: one flat JSON document holding every tunable.

Keys not listed in ``DEFAULTS`` are rejected. Command-line flags override
file values.
"""

import json
from pathlib import Path

from .autoencoder import NetworkConfig, TrainConfig
from .candidates import CandidateConfig
from .errors import ConfigError
from .fixations import HomogeneityConfig
from .flow import FlowConfig
from .transition import BaselineConfig

CONFIG_VERSION = 1

# key -> (default, description)
DEFAULTS = {
    "version": (CONFIG_VERSION, "document format version"),
    "seed": (0, "seed for SVM shuffling, network init and evaluation sampling"),
    "interval": (10, "frames between pipeline steps"),
    "sigma_fraction": (0.05, "fixation kernel sigma as a fraction of the frame diagonal"),
    "flow_alpha": (15.0 / 255.0, "flow smoothness weight on the [0,1] intensity scale"),
    "flow_levels": (3, "flow pyramid levels"),
    "flow_iterations": (100, "flow fixed-point iterations per level"),
    "dog_sigma": (2.0, "inner sigma of the motion difference-of-Gaussians"),
    "bandwidth": (8.0, "mean-shift bandwidth in pixels"),
    "k_max": (10, "maximum candidates per frame, center included"),
    "mode_floor": (0.25, "modes below this fraction of the map maximum are dropped"),
    "motion_floor": (0.01, "motion maps weaker than this yield no candidates"),
    "threshold_fraction": (0.5, "positive transitions reach this fraction of the gt maximum"),
    "render_sigma_fraction": (0.05, "baseline rendering sigma as a fraction of the diagonal"),
    "svm_c": (1.0, "SVM soft-margin weight"),
    "svm_epochs": (200, "SVM subgradient epochs"),
    "cnn_epochs": (400, "network training epochs"),
    "cnn_lr": (1e-4, "base learning rate"),
    "cnn_momentum": (0.9, "SGD momentum"),
    "cnn_decay_start": (None, "last epoch at the base rate (null: half the epochs)"),
    "cnn_decay_every": (None, "epochs between halvings (null: an eighth of the epochs)"),
    "cnn_clip_norm": (None, "cap on the per-batch gradient norm (null: off)"),
    "cnn_features": ([32, 64, 64], "feature maps of the three encoder convolutions"),
    "cnn_downsample": (1, "block-mean reduction of the working frame before the network"),
    "cnn_latent": (256, "latent code length"),
    "homogeneity_splits": (10, "random split-halves per frame"),
    "homogeneity_exhaustive": (False, "average over every balanced split instead"),
    "auc_negatives": (10, "random negatives per fixation for AUC"),
}


class RunConfig(dict):
    """Validated key-value configuration with defaults filled in."""

    def __init__(self, values=None):
        super().__init__({k: v for k, (v, _) in DEFAULTS.items()})
        self.update_checked(values or {})

    def update_checked(self, values):
        unknown = sorted(set(values) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if values.get("version", CONFIG_VERSION) != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {values['version']}")
        self.update(values)
        return self

    def flow(self):
        return FlowConfig(float(self["flow_alpha"]), int(self["flow_levels"]), int(self["flow_iterations"]))

    def candidates(self):
        return CandidateConfig(float(self["bandwidth"]), int(self["k_max"]), float(self["mode_floor"]),
                               float(self["motion_floor"]), float(self["sigma_fraction"]))

    def baseline(self):
        return BaselineConfig(int(self["interval"]), float(self["threshold_fraction"]),
                              float(self["render_sigma_fraction"]), float(self["dog_sigma"]),
                              float(self["svm_c"]), int(self["svm_epochs"]), int(self["seed"]),
                              self.flow(), self.candidates())

    def network(self):
        return NetworkConfig(tuple(int(f) for f in self["cnn_features"]), (5, 3, 3),
                             int(self["cnn_latent"]), int(self["cnn_downsample"]))

    def train(self):
        opt = lambda k, t: None if self[k] is None else t(self[k])  # noqa: E731
        return TrainConfig(epochs=int(self["cnn_epochs"]), lr=float(self["cnn_lr"]),
                           momentum=float(self["cnn_momentum"]),
                           decay_start=opt("cnn_decay_start", int),
                           decay_every=opt("cnn_decay_every", int),
                           interval=int(self["interval"]), seed=int(self["seed"]),
                           clip_norm=opt("cnn_clip_norm", float),
                           network=self.network(), flow=self.flow())

    def homogeneity(self, seed=None):
        return HomogeneityConfig(int(self["homogeneity_splits"]),
                                 int(self["seed"] if seed is None else seed),
                                 bool(self["homogeneity_exhaustive"]))

    def with_overrides(self, **values):
        return RunConfig({**self, **{k: v for k, v in values.items() if v is not None}})

    def to_json(self):
        return json.dumps(dict(self), indent=2, sort_keys=True) + "\n"


def load_config(path=None):
    """Read a config document; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return RunConfig(doc)


def describe():
    """Default value and description of every key, one per line."""
    return "\n".join(f"{k} = {json.dumps(v)}: {d}" for k, (v, d) in DEFAULTS.items())


