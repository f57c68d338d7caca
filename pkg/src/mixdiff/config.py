"""Experiment configuration: a YAML tree validated into typed objects.

Every key is optional. An empty file yields the default four-condition layout
with one-hot embeddings and the default schedule, sampler and training
settings. Errors carry the dotted field path and, where the key exists in
the file, its line number.
"""

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from .conditions import ConditionEmbedding, GaussianMixture, default_layout, one_hot_embeddings
from .exceptions import ConfigError, MixdiffError
from .probe import DEFAULT_GAMMAS, INTENSITY_BUCKETS
from .sampler import MixSpec, SamplerConfig
from .schedule import NoiseSchedule
from .seeding import stream_seed
from .training import TrainConfig

OUT_DIR_ENV = "MIXDIFF_OUT"
DEFAULT_OUT_DIR = "mixdiff_out"

_TOP_KEYS = {"seed", "out_dir", "schedule", "conditions", "network", "train", "sampler",
             "mixes", "curve", "confusion"}


@dataclass
class CurveSettings:
    base: str = "Happy"
    mixin: str = "Surprise"
    gammas: tuple = DEFAULT_GAMMAS
    batch_size: int = 500


@dataclass
class ConfusionSettings:
    neutral: str = "Neutral"
    target: str = "Surprise"
    batches_per_bucket: int = 20
    batch_size: int = 500
    buckets: dict = field(default_factory=lambda: dict(INTENSITY_BUCKETS))


@dataclass
class ExperimentConfig:
    seed: int
    out_dir: str
    schedule: NoiseSchedule
    distributions: list
    network: dict
    train: TrainConfig
    sampler: SamplerConfig
    n_samples: int
    k_max: float
    k_min: float
    mixes: dict
    curve: CurveSettings
    confusion: ConfusionSettings
    config_hash: str

    def embedding(self, label):
        for d in self.distributions:
            if d.label == label:
                return d.condition
        raise ConfigError(f"unknown condition {label!r}")

    @property
    def labels(self):
        return [d.label for d in self.distributions]


class _Locator:
    """Maps dotted field paths back to line numbers of the composed YAML tree."""

    def __init__(self, root):
        self.root = root

    def line(self, path):
        node = self.root
        if node is None:
            return None
        best = node.start_mark.line + 1
        for part in path.split(".") if path else []:
            if isinstance(node, yaml.MappingNode):
                nxt = None
                for k, v in node.value:
                    if k.value == part:
                        best = k.start_mark.line + 1
                        nxt = v
                        break
                if nxt is None:
                    return best
                node = nxt
            elif isinstance(node, yaml.SequenceNode) and part.isdigit() and int(part) < len(node.value):
                node = node.value[int(part)]
                best = node.start_mark.line + 1
            else:
                return best
        return best


class _Reader:
    def __init__(self, locator):
        self.loc = locator

    def fail(self, path, message):
        raise ConfigError(message, field=path, line=self.loc.line(path))

    def mapping(self, data, path, allowed=None):
        if data is None:
            return {}
        if not isinstance(data, dict):
            self.fail(path, "expected a mapping")
        if allowed is not None:
            extra = set(data) - set(allowed)
            if extra:
                self.fail(f"{path}.{sorted(extra)[0]}" if path else sorted(extra)[0],
                          f"unknown key {sorted(extra)[0]!r}")
        return data

    def number(self, data, key, path, default, kind=float):
        if key not in data:
            return default
        val = data[key]
        p = f"{path}.{key}" if path else key
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            self.fail(p, f"expected a number, got {val!r}")
        if kind is int and int(val) != val:
            self.fail(p, f"expected an integer, got {val!r}")
        return kind(val)

    def vector(self, val, path):
        if not isinstance(val, (list, tuple)) or not val or \
                not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in val):
            self.fail(path, f"expected a nonempty list of numbers, got {val!r}")
        return np.array(val, dtype=np.float64)


def _build(data, rd, seed_override=None):
    data = rd.mapping(data, "", _TOP_KEYS)
    seed = rd.number(data, "seed", "", 0, int)
    if seed_override is not None:
        seed = int(seed_override)
    out_dir = data.get("out_dir") or os.environ.get(OUT_DIR_ENV) or DEFAULT_OUT_DIR

    sd = rd.mapping(data.get("schedule"), "schedule", {"beta0", "beta1"})
    try:
        schedule = NoiseSchedule(rd.number(sd, "beta0", "schedule", 0.05),
                                 rd.number(sd, "beta1", "schedule", 20.0))
    except MixdiffError as exc:
        rd.fail("schedule", f"NoiseSchedule: {exc}")

    distributions = _build_conditions(data.get("conditions"), rd)
    labels = [d.label for d in distributions]

    nd = rd.mapping(data.get("network"), "network", {"hidden_sizes", "n_frequencies"})
    hidden = nd.get("hidden_sizes", [64, 64, 64])
    if not isinstance(hidden, list) or not all(isinstance(h, int) and h > 0 for h in hidden):
        rd.fail("network.hidden_sizes", "expected a list of positive integers")
    n_freq = rd.number(nd, "n_frequencies", "network", 1, int)
    if n_freq < 0:
        rd.fail("network.n_frequencies", "must be >= 0")
    network = {"hidden_sizes": tuple(hidden), "n_frequencies": n_freq}

    td = rd.mapping(data.get("train"), "train",
                    {"learning_rate", "batch_size", "steps", "style_weight", "seed",
                     "loss_weight", "t_floor"})
    try:
        train = TrainConfig(
            learning_rate=rd.number(td, "learning_rate", "train", 1e-4),
            batch_size=rd.number(td, "batch_size", "train", 32, int),
            steps=rd.number(td, "steps", "train", 5000, int),
            style_weight=rd.number(td, "style_weight", "train", 1e-4),
            seed=rd.number(td, "seed", "train", stream_seed(seed, "train"), int),
            loss_weight=td.get("loss_weight", "lambda"),
            t_floor=rd.number(td, "t_floor", "train", 1e-3),
        )
    except MixdiffError as exc:
        rd.fail("train", f"TrainConfig: {exc}")

    sp = rd.mapping(data.get("sampler"), "sampler",
                    {"steps", "final_noise", "n_samples", "k_max", "k_min", "t_floor"})
    try:
        sampler = SamplerConfig(
            steps=rd.number(sp, "steps", "sampler", 10, int),
            seed=stream_seed(seed, "sample"),
            t_floor=rd.number(sp, "t_floor", "sampler", 1e-5),
            final_noise=bool(sp.get("final_noise", False)),
        )
    except MixdiffError as exc:
        rd.fail("sampler", f"SamplerConfig: {exc}")
    n_samples = rd.number(sp, "n_samples", "sampler", 500, int)
    if n_samples < 1:
        rd.fail("sampler.n_samples", "must be >= 1")
    k_max = rd.number(sp, "k_max", "sampler", 0.6)
    k_min = rd.number(sp, "k_min", "sampler", 0.2)
    if not 0 <= k_min <= k_max <= 1:
        rd.fail("sampler", f"MixSpec requires 0 <= k_min <= k_max <= 1, got k_min={k_min}, k_max={k_max}")

    by_label = {d.label: d.condition for d in distributions}

    def pick(preferred, fallback):
        return preferred if preferred in by_label else fallback

    def known(label, path):
        if label not in by_label:
            rd.fail(path, f"unknown condition label {label!r} (defined: {labels})")
        return label

    mixes = {}
    raw_mixes = data.get("mixes") or []
    if not isinstance(raw_mixes, list):
        rd.fail("mixes", "expected a list")
    for i, md in enumerate(raw_mixes):
        path = f"mixes.{i}"
        md = rd.mapping(md, path, {"name", "base", "components", "k_max", "k_min", "validate_cap",
                                   "combine_late"})
        name = str(md.get("name", f"mix{i}"))
        if name in mixes:
            rd.fail(f"{path}.name", f"duplicate mix name {name!r}")
        comps = md.get("components")
        if not isinstance(comps, list) or not comps:
            rd.fail(f"{path}.components", "expected a nonempty list of {label, weight}")
        pairs = []
        for j, cd in enumerate(comps):
            cpath = f"{path}.components.{j}"
            cd = rd.mapping(cd, cpath, {"label", "weight"})
            lab = known(cd.get("label"), f"{cpath}.label")
            pairs.append((by_label[lab], rd.number(cd, "weight", cpath, None)))
            if pairs[-1][1] is None:
                rd.fail(f"{cpath}.weight", "missing weight")
        comp_labels = [e.label for e, _ in pairs]
        base_label = md.get("base", comp_labels[0])
        if base_label not in comp_labels:
            rd.fail(f"{path}.base", f"base {base_label!r} is not among the mix components")
        try:
            mixes[name] = MixSpec(
                pairs, base=comp_labels.index(base_label),
                k_max=rd.number(md, "k_max", path, k_max), k_min=rd.number(md, "k_min", path, k_min),
                validate_cap=bool(md.get("validate_cap", True)),
                combine_late=bool(md.get("combine_late", False)),
            )
        except MixdiffError as exc:
            rd.fail(path, f"MixSpec: {exc}")

    cd = rd.mapping(data.get("curve"), "curve", {"base", "mixin", "gammas", "batch_size"})
    curve = CurveSettings(
        base=known(cd.get("base", pick("Happy", labels[0])), "curve.base"),
        mixin=known(cd.get("mixin", pick("Surprise", labels[-1])), "curve.mixin"),
        gammas=tuple(rd.vector(cd["gammas"], "curve.gammas")) if "gammas" in cd else DEFAULT_GAMMAS,
        batch_size=rd.number(cd, "batch_size", "curve", 500, int),
    )
    if any(not 0 <= g <= 0.8 for g in curve.gammas):
        rd.fail("curve.gammas", "mixing weights must lie in [0, 0.8]")
    if curve.batch_size < 1:
        rd.fail("curve.batch_size", "must be >= 1")

    fd = rd.mapping(data.get("confusion"), "confusion",
                    {"neutral", "target", "batches_per_bucket", "batch_size", "buckets"})
    buckets = dict(INTENSITY_BUCKETS)
    if "buckets" in fd:
        bd = rd.mapping(fd["buckets"], "confusion.buckets")
        if not bd:
            rd.fail("confusion.buckets", "needs at least one bucket")
        buckets = {str(k): tuple(rd.vector(v, f"confusion.buckets.{k}")) for k, v in bd.items()}
    confusion = ConfusionSettings(
        neutral=known(fd.get("neutral", pick("Neutral", labels[0])), "confusion.neutral"),
        target=known(fd.get("target", pick("Surprise", labels[-1])), "confusion.target"),
        batches_per_bucket=rd.number(fd, "batches_per_bucket", "confusion", 20, int),
        batch_size=rd.number(fd, "batch_size", "confusion", 500, int),
        buckets=buckets,
    )
    if confusion.batches_per_bucket < 1 or confusion.batch_size < 1:
        rd.fail("confusion", "batch counts must be >= 1")

    return dict(seed=seed, out_dir=str(out_dir), schedule=schedule, distributions=distributions,
                network=network, train=train, sampler=sampler, n_samples=n_samples,
                k_max=k_max, k_min=k_min, mixes=mixes, curve=curve, confusion=confusion)


def _build_conditions(raw, rd):
    if raw is None:
        return default_layout()
    if not isinstance(raw, list) or not raw:
        rd.fail("conditions", "expected a nonempty list")
    labels = []
    for i, cd in enumerate(raw):
        cd = rd.mapping(cd, f"conditions.{i}", {"label", "embedding", "components"})
        lab = cd.get("label")
        if not isinstance(lab, str) or not lab:
            rd.fail(f"conditions.{i}.label", "expected a nonempty string")
        if lab in labels:
            rd.fail(f"conditions.{i}.label", f"condition {lab!r} defined more than once")
        labels.append(lab)
    onehots = one_hot_embeddings(labels)
    dists = []
    for i, cd in enumerate(raw):
        path = f"conditions.{i}"
        if "embedding" in cd:
            emb = ConditionEmbedding(labels[i], rd.vector(cd["embedding"], f"{path}.embedding"))
        else:
            emb = onehots[i]
        comps = cd.get("components")
        if not isinstance(comps, list) or not comps:
            rd.fail(f"{path}.components", "expected a nonempty list of {weight, mean, variance}")
        w, m, v = [], [], []
        for j, kd in enumerate(comps):
            kpath = f"{path}.components.{j}"
            kd = rd.mapping(kd, kpath, {"weight", "mean", "variance"})
            w.append(rd.number(kd, "weight", kpath, 1.0))
            if "mean" not in kd:
                rd.fail(f"{kpath}.mean", "missing mean")
            m.append(rd.vector(kd["mean"], f"{kpath}.mean"))
            if "variance" not in kd:
                rd.fail(f"{kpath}.variance", "missing variance")
            v.append(rd.number(kd, "variance", kpath, None))
        if len({len(x) for x in m}) != 1:
            rd.fail(f"{path}.components", "component means differ in dimension")
        try:
            dists.append(GaussianMixture(emb, w, np.stack(m), v))
        except MixdiffError as exc:
            rd.fail(path, f"ConditionedDistribution: {exc}")
    if len({d.dim for d in dists}) != 1:
        rd.fail("conditions", "conditions disagree on data dimension")
    if len({d.condition.dim for d in dists}) != 1:
        rd.fail("conditions", "embeddings disagree on dimension")
    return dists


def parse_config(text, seed=None):
    """Validate a YAML document given as a string; ``seed`` overrides the global seed."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"parse error: {getattr(exc, 'problem', exc)}",
                          line=mark.line + 1 if mark else None) from None
    fields = _build(data, _Reader(_Locator(root)), seed)
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return ExperimentConfig(config_hash=digest, **fields)


def load_config(path=None, seed=None):
    """Load and validate a config file; ``None`` gives the all-defaults config."""
    if path is None:
        return parse_config("", seed)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, seed)
