# The MIT License (MIT)

# Copyright (c) 2024 metalingo contributors

# Permission is hereby granted, free of charge, to any person obtaining a copy
# of this software and associated documentation files (the "Software"), to deal
# in the Software without restriction, including without limitation the rights
# to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
# copies of the Software, and to permit persons to whom the Software is
# furnished to do so, subject to the following conditions:

# The above copyright notice and this permission notice shall be included in
# all copies or substantial portions of the Software.

# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
# IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
# FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
# AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
# LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
# OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN
# THE SOFTWARE.
"""Experiment configuration tree.

Defaults follow the published Reptile and Prototypical hyperparameter
tables where they exist (AdamW lr 1e-5, dropout 0.1, m=3, queue length 4,
tau=1, way 2 for Reptile and 3 for ProtoNet, lambda1=lambda2=1, 2 epochs
of 20000 iterations).
"""
import json
import math
import os

from .settings import (
    SCHEMA_DIALECT,
    CategorySetting,
    ConfigError,
    FlagSetting,
    ListSetting,
    NumberSetting,
    OptionalSetting,
    SettingsNamespace,
    Store,
    TextSetting,
)

OUTPUT_DIR_ENV = "METALINGO_OUTPUT_DIR"
RESOLVED_FILENAME = "config.resolved.json"

REGIMES = ["reptile", "maml", "protonet", "non_episodic"]
SCENARIOS = ["aux_only", "aux_support_mixed_query"]
FINETUNE_MODES = ["non_episodic", "episodic"]
GRID_CELLS = ["zero_shot", "non_episodic_ft", "episodic_ft", "meta_train_with_target"]

MAX_COUNT = 10**9
AUTO = {"auto": "auto"}
INFINITE = {"inf": math.inf}


class SyntheticSettings(SettingsNamespace):
    """Synthetic multi-language task family"""

    namespace = "data.synthetic"
    num_languages = NumberSetting(int, "num_languages", 5, [1, 256])
    num_labels = NumberSetting(int, "num_labels", 3, [2, 64])
    feature_dim = NumberSetting(int, "feature_dim", 16, [2, 4096])
    clusters_per_label = NumberSetting(int, "clusters_per_label", 2, [1, 64])
    separation = NumberSetting(float, "separation", 4.0, [1e-9, 1e6])
    cluster_separation = NumberSetting(float, "cluster_separation", 2.0, [0, 1e6])
    noise = NumberSetting(float, "noise", 1.0, [0, 1e6])
    shift = NumberSetting(float, "shift", 1.0, [0, 1e6])
    samples_per_label = NumberSetting(int, "samples_per_label", 60, [1, 10**7])
    task = TextSetting("task", "nli")
    aux_task_labels = NumberSetting(int, "aux_task_labels", 0, [0, 64])
    seed = OptionalSetting(NumberSetting(int, "seed", 0, [0, 2**64 - 1]))

    def label(self, attr):
        """Returns a one-line description of a setting name or namespace"""
        return {
            "num_languages": "Number of generated languages",
            "num_labels": "Labels of the main task",
            "feature_dim": "Feature vector width",
            "clusters_per_label": "Planted sub-clusters per label",
            "separation": "Distance between class centers",
            "cluster_separation": "Distance between sub-clusters of one label",
            "noise": "Standard deviation of the per-example noise",
            "shift": "Language shift magnitude (offset and rotation)",
            "samples_per_label": "Examples per (language, label)",
            "task": "Task tag of the main family",
            "aux_task_labels": "Labels of an auxiliary task family, 0 disables it",
            "seed": "Generator seed, null reuses the experiment seed",
        }[attr]


class DataSettings(SettingsNamespace):
    """Data sources"""

    namespace = "data"
    source = CategorySetting("source", "synthetic", ["synthetic", "files"])
    format = CategorySetting("format", "jsonl", ["jsonl", "tsv"])
    auxiliary = ListSetting(TextSetting("auxiliary", "-"), "auxiliary", [])
    target = OptionalSetting(TextSetting("target", "-"))
    labels = OptionalSetting(TextSetting("labels", "-"))
    task = TextSetting("task", "nli")
    feature_dim = NumberSetting(int, "feature_dim", 256, [1, 65536])
    split = ListSetting(
        NumberSetting(float, "split", 0.1, [1e-9, 1.0]), "split", [0.8, 0.1, 0.1], (3, 3)
    )

    def __init__(self, store):
        super().__init__(store)
        self.synthetic = SyntheticSettings(store)

    def label(self, attr):
        """Returns a one-line description of a setting name or namespace"""
        return {
            "source": "Where datasets come from",
            "format": "File format of data.auxiliary and data.target",
            "auxiliary": "Auxiliary dataset files",
            "target": "Target dataset file, or target language tag for synthetic data",
            "labels": "Sidecar label file fixing label order",
            "task": "Task tag given to TSV text-pair files",
            "feature_dim": "Hash buckets per text for the TSV featurizer",
            "split": "Train/dev/test fractions",
            "synthetic": "Synthetic generator parameters",
        }[attr]


class EncoderSettings(SettingsNamespace):
    """Encoder architecture"""

    namespace = "encoder"
    hidden_dim = NumberSetting(int, "hidden_dim", 32, [1, 4096])
    num_layers = NumberSetting(int, "num_layers", 4, [1, 64])
    activation = CategorySetting("activation", "tanh", ["tanh", "relu"])
    dropout_rate = NumberSetting(float, "dropout_rate", 0.1, [0.0, 0.99])

    def label(self, attr):
        """Returns a one-line description of a setting name or namespace"""
        return {
            "hidden_dim": "Width of every encoder layer",
            "num_layers": "Number of encoder layers",
            "activation": "Layer nonlinearity",
            "dropout_rate": "Inverted dropout rate in train mode",
        }[attr]


class AdamWSettings(SettingsNamespace):
    """AdamW hyperparameters"""

    namespace = "learner.adamw"
    lr = NumberSetting(float, "lr", 1e-5, [0.0, 10.0])
    beta1 = NumberSetting(float, "beta1", 0.9, [0.0, 0.999999])
    beta2 = NumberSetting(float, "beta2", 0.999, [0.0, 0.999999])
    eps = NumberSetting(float, "eps", 1e-8, [1e-300, 1.0])
    weight_decay = NumberSetting(float, "weight_decay", 0.01, [0.0, 10.0])

    def label(self, attr):
        """Returns a one-line description of a setting name or namespace"""
        return {
            "lr": "Learning rate",
            "beta1": "First-moment decay",
            "beta2": "Second-moment decay",
            "eps": "Denominator epsilon",
            "weight_decay": "Decoupled weight decay",
        }[attr]


class EpisodeSettings(SettingsNamespace):
    """Episode shape"""

    namespace = "learner.episode"
    way = OptionalSetting(NumberSetting(int, "way", 3, [2, 64]))
    shot = NumberSetting(int, "shot", 4, [1, 10**4])
    query_per_class = OptionalSetting(NumberSetting(int, "query_per_class", 4, [0, 10**4]))
    scenario = CategorySetting("scenario", "aux_only", SCENARIOS)
    target_fraction = NumberSetting(float, "target_fraction", 1.0 / 3.0, [0.0, 1.0])

    def label(self, attr):
        """Returns a one-line description of a setting name or namespace"""
        return {
            "way": "Classes per episode, capped per task; null picks the learner's default",
            "shot": "Support examples per class",
            "query_per_class": "Query examples per class, null means equal to shot",
            "scenario": "Episode scenario",
            "target_fraction": "Chance a query slot is drawn from the target in the mixed scenario",
        }[attr]


class ReptileSettings(SettingsNamespace):
    """Reptile learner"""

    namespace = "learner.reptile"
    inner_steps = NumberSetting(int, "inner_steps", 3, [1, 10**4])
    beta = NumberSetting(float, "beta", 0.5, [1e-12, 1.0])
    beta_decay = FlagSetting("beta_decay", True)
    tasks_per_update = NumberSetting(int, "tasks_per_update", 4, [1, 10**4])

    def label(self, attr):
        """Returns a one-line description of a setting name or namespace"""
        return {
            "inner_steps": "AdamW steps per task (m)",
            "beta": "Outer step size",
            "beta_decay": "Decay beta linearly to 0 over training",
            "tasks_per_update": "Tasks averaged per outer update (queue length)",
        }[attr]


class MamlSettings(SettingsNamespace):
    """First-order MAML learner"""

    namespace = "learner.maml"
    inner_lr = NumberSetting(float, "inner_lr", 0.01, [1e-12, 10.0])
    outer_lr = NumberSetting(float, "outer_lr", 0.001, [1e-12, 10.0])
    inner_steps = NumberSetting(int, "inner_steps", 1, [1, 10**4])
    tasks_per_update = NumberSetting(int, "tasks_per_update", 4, [1, 10**4])

    def label(self, attr):
        """Returns a one-line description of a setting name or namespace"""
        return {
            "inner_lr": "Inner SGD step size (alpha)",
            "outer_lr": "Outer SGD step size (beta)",
            "inner_steps": "Inner SGD steps per episode",
            "tasks_per_update": "Episodes per meta-batch",
        }[attr]


class ProtoNetSettings(SettingsNamespace):
    """Prototypical network learner"""

    namespace = "learner.protonet"
    lambda_dce = NumberSetting(float, "lambda_dce", 1.0, [0.0, 1e6])
    lambda_ce = NumberSetting(float, "lambda_ce", 1.0, [0.0, 1e6])
    distance = CategorySetting(
        "distance", "squared_euclidean", ["squared_euclidean", "euclidean"]
    )
    languages_per_episode = NumberSetting(int, "languages_per_episode", 1, [1, 256])

    def label(self, attr):
        """Returns a one-line description of a setting name or namespace"""
        return {
            "lambda_dce": "Weight of the distance-based cross-entropy",
            "lambda_ce": "Weight of the head cross-entropy",
            "distance": "Query-to-prototype distance",
            "languages_per_episode": "Same-task datasets drawn into one episode",
        }[attr]


class NonEpisodicSettings(SettingsNamespace):
    """Plain mini-batch training"""

    namespace = "learner.non_episodic"
    batch_size = NumberSetting(int, "batch_size", 32, [1, 10**6])

    def label(self, attr):
        """Returns a one-line description of a setting name or namespace"""
        return {"batch_size": "Examples per mini-batch"}[attr]


class LearnerSettings(SettingsNamespace):
    """Learner and training loop"""

    namespace = "learner"
    regime = CategorySetting("regime", "reptile", REGIMES)
    iterations = NumberSetting(int, "iterations", 20000, [0, MAX_COUNT], AUTO)
    epochs = NumberSetting(int, "epochs", 2, [1, 10**4])
    eval_interval = NumberSetting(int, "eval_interval", 100, [1, MAX_COUNT])

    def __init__(self, store):
        super().__init__(store)
        self.adamw = AdamWSettings(store)
        self.episode = EpisodeSettings(store)
        self.reptile = ReptileSettings(store)
        self.maml = MamlSettings(store)
        self.protonet = ProtoNetSettings(store)
        self.non_episodic = NonEpisodicSettings(store)

    def label(self, attr):
        """Returns a one-line description of a setting name or namespace"""
        return {
            "regime": "Training regime",
            "iterations": "Iterations per epoch, or auto",
            "epochs": "Passes over the iteration budget",
            "eval_interval": "Iterations between metric rows",
            "adamw": "AdamW hyperparameters",
            "episode": "Episode shape",
            "reptile": "Reptile parameters",
            "maml": "MAML parameters",
            "protonet": "Prototypical network parameters",
            "non_episodic": "Mini-batch parameters",
        }[attr]


class QueueSettings(SettingsNamespace):
    """Task queue"""

    namespace = "queue"
    temperature = NumberSetting(float, "temperature", 1.0, [1e-6, 1e6], INFINITE)
    add_target = FlagSetting("add_target", False)

    def label(self, attr):
        """Returns a one-line description of a setting name or namespace"""
        return {
            "temperature": "Sampling temperature, inf for uniform",
            "add_target": "Place the target training split in the meta-training queue",
        }[attr]


class DrecaSettings(SettingsNamespace):
    """Task augmentation by clustering"""

    namespace = "dreca"
    enabled = FlagSetting("enabled", False)
    clusters = NumberSetting(int, "clusters", 2, [1, 64])
    embed = CategorySetting("embed", "encoder", ["encoder", "identity"])
    restarts = NumberSetting(int, "restarts", 5, [1, 1000])
    max_iterations = NumberSetting(int, "max_iterations", 100, [1, 10**6])
    tolerance = NumberSetting(float, "tolerance", 1e-8, [0.0, 1.0])
    mixing = NumberSetting(float, "mixing", 0.5, [0.0, 1.0])

    def label(self, attr):
        """Returns a one-line description of a setting name or namespace"""
        return {
            "enabled": "Augment the queue with cluster-combination tasks",
            "clusters": "Clusters per label group (K)",
            "embed": "Embedding used for clustering",
            "restarts": "k-means restarts",
            "max_iterations": "Lloyd iterations per restart",
            "tolerance": "Relative inertia improvement that ends a restart",
            "mixing": "Queue weight given to the new tasks",
        }[attr]


class FinetuneSettings(SettingsNamespace):
    """Fine-tuning on the target"""

    namespace = "finetune"
    iterations = NumberSetting(int, "iterations", 200, [0, MAX_COUNT], AUTO)
    epochs = NumberSetting(int, "epochs", 1, [1, 10**4])

    def label(self, attr):
        """Returns a one-line description of a setting name or namespace"""
        return {
            "iterations": "Fine-tuning iterations per epoch, or auto",
            "epochs": "Fine-tuning epochs",
        }[attr]


class EvaluationSettings(SettingsNamespace):
    """Evaluation plan"""

    namespace = "evaluation"
    plan = ListSetting(
        CategorySetting("plan", "zero_shot", GRID_CELLS),
        "plan",
        ["zero_shot", "non_episodic_ft", "episodic_ft"],
    )
    method = OptionalSetting(CategorySetting("method", "head", ["head", "prototype"]))
    prototype_source = CategorySetting(
        "prototype_source", "auxiliary", ["auxiliary", "target_train"]
    )
    dev_episodes = NumberSetting(int, "dev_episodes", 20, [0, 10**6])

    def label(self, attr):
        """Returns a one-line description of a setting name or namespace"""
        return {
            "plan": "Experiment grid cells to compute",
            "method": "Prediction method, null picks prototype for protonet else head",
            "prototype_source": "Where prototypes come from for the prototype method",
            "dev_episodes": "Held-out episodes scored at every metric row",
        }[attr]


class AnalysisSettings(SettingsNamespace):
    """Representation analysis"""

    namespace = "analysis"
    samples = NumberSetting(int, "samples", 200, [3, 10**6])
    probe = CategorySetting("probe", "target_test", ["target_test", "target_train"])
    hausdorff = FlagSetting("hausdorff", True)
    cca = FlagSetting("cca", True)
    pca = FlagSetting("pca", True)

    def label(self, attr):
        """Returns a one-line description of a setting name or namespace"""
        return {
            "samples": "Examples per language embedded for Hausdorff and PCA",
            "probe": "Split used for the per-layer CCA profile",
            "hausdorff": "Emit hausdorff.csv",
            "cca": "Emit cca.csv",
            "pca": "Emit pca.csv",
        }[attr]


class OutputSettings(SettingsNamespace):
    """Outputs"""

    namespace = "output"
    directory = TextSetting("directory", "runs")

    def label(self, attr):
        """Returns a one-line description of a setting name or namespace"""
        return {"directory": "Run directory, overridden by " + OUTPUT_DIR_ENV}[attr]


class ExperimentConfig(SettingsNamespace):
    """Root of the experiment configuration"""

    namespace = ""
    seed = NumberSetting(int, "seed", 0, [0, 2**64 - 1])

    def __init__(self, store=None):
        super().__init__(store or Store())
        self.data = DataSettings(self.store)
        self.encoder = EncoderSettings(self.store)
        self.learner = LearnerSettings(self.store)
        self.queue = QueueSettings(self.store)
        self.dreca = DrecaSettings(self.store)
        self.finetune = FinetuneSettings(self.store)
        self.evaluation = EvaluationSettings(self.store)
        self.analysis = AnalysisSettings(self.store)
        self.output = OutputSettings(self.store)

    def label(self, attr):
        """Returns a one-line description of a setting name or namespace"""
        return {
            "seed": "Experiment seed",
            "data": "Data sources",
            "encoder": "Encoder architecture",
            "learner": "Learner and training loop",
            "queue": "Task queue",
            "dreca": "Task augmentation",
            "finetune": "Fine-tuning",
            "evaluation": "Evaluation plan",
            "analysis": "Representation analysis",
            "output": "Outputs",
        }[attr]

    @classmethod
    def from_dict(cls, document):
        """Validated configuration from a parsed JSON document"""
        config = cls()
        config.load(document)
        config.check()
        return config

    def check(self):
        """Cross-field validation that single descriptors cannot express"""
        if abs(sum(self.data.split) - 1.0) > 1e-9:
            raise ConfigError("data.split fractions must sum to 1")
        if self.learner.protonet.lambda_dce == 0 and self.learner.protonet.lambda_ce == 0:
            raise ConfigError("learner.protonet lambdas must not both be zero")
        if self.data.source == "files" and not self.data.auxiliary:
            raise ConfigError("data.auxiliary must list at least one file")
        if (
            self.data.source == "synthetic"
            and self.data.synthetic.feature_dim < self.data.synthetic.num_labels
        ):
            raise ConfigError("data.synthetic.feature_dim must be at least num_labels")

    def output_directory(self):
        """Run directory, honouring the environment override"""
        return os.environ.get(OUTPUT_DIR_ENV) or self.output.directory

    def dumps(self):
        """Resolved configuration as written into every run directory"""
        return json.dumps(self.resolved(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def schema_document(cls):
        """JSON-Schema for configuration files"""
        document = {"$schema": SCHEMA_DIALECT, "title": "metalingo experiment"}
        document.update(cls().schema())
        return document


def load_config(path):
    """Reads and validates a JSON configuration file"""
    try:
        with open(path, "r", encoding="utf-8") as file:
            document = json.load(file)
    except OSError as e:
        raise ConfigError("cannot read %s: %s" % (path, e)) from e
    except ValueError as e:
        raise ConfigError("%s is not valid JSON: %s" % (path, e)) from e
    return ExperimentConfig.from_dict(document)
