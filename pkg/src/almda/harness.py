"""Hold-one-domain-out experiments and error tables.

Each domain in turn is the unlabeled target and the rest are labeled
sources.  Target labels are used only to score predictions.
"""

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .alm import Architecture, MultiDomainSet, TransformSpec, derive_seed, fit_alm
from .baselines import (KernelConfig, KmmConfig, KMMVoteClassifier, TcaConfig,
                        TCAVoteClassifier)
from .data import (MixtureBenchConfig, SineBenchConfig, gen_mixture_domains,
                   gen_sine_domains, kfold_indices, load_domains_csv)
from .exceptions import AlmdaError, ConfigError
from .nn import NetClassifier, TrainConfig

METHODS = ("cheat", "global", "local_vote", "alm", "tca", "kmm")
COLUMN_TITLES = {"cheat": "cheat", "global": "g(x)", "local_vote": "f_i(x)",
                 "alm": "ALM", "tca": "TCA", "kmm": "KMM"}
BENCHES = ("csv", "sine", "mixture")

# sine illustration: logistic-regression g, one hidden layer of three units per f_i
SINE_ARCH = Architecture(g_hidden=(), f_hidden=(3,), g_output="sigmoid")
SINE_TRANSFORM = TransformSpec("rotation", 1, TrainConfig(epochs=100, l2_penalty=0.0))
SINE_METHODS = ("global", "local_vote", "alm")


@dataclass(frozen=True)
class ExperimentConfig:
    bench: str = "csv"
    domains: tuple = ()
    sine: SineBenchConfig = field(default_factory=SineBenchConfig)
    mixture: MixtureBenchConfig = field(default_factory=MixtureBenchConfig)
    arch: Architecture = field(default_factory=Architecture)
    transform: TransformSpec = field(default_factory=TransformSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    kmm: KmmConfig = field(default_factory=KmmConfig)
    tca: TcaConfig = field(default_factory=TcaConfig)
    methods: tuple = METHODS
    trials: int = 1
    seed: int = 0
    cheat_folds: int = 10
    out: str = None
    format: str = "csv"

    def __post_init__(self):
        if self.bench not in BENCHES:
            raise ConfigError(f"unknown bench {self.bench!r}; choose from {', '.join(BENCHES)}")
        methods = tuple(self.methods)
        if not methods:
            raise ConfigError("select at least one method")
        unknown = [m for m in methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; choose from {', '.join(METHODS)}")
        object.__setattr__(self, "methods", tuple(m for m in METHODS if m in methods))
        if int(self.trials) != self.trials or self.trials < 1:
            raise ConfigError("trials must be a positive integer")
        if self.format not in ("csv", "text"):
            raise ConfigError(f"format must be csv or text, got {self.format!r}")
        if self.bench == "csv" and len(self.domains) < 2:
            raise ConfigError("table mode needs at least two domain CSV files")


@dataclass(eq=False)
class ExperimentReport:
    """Error percentages, one row per held-out domain (or per trial).

    ``errors[r, c]`` is NaN for a method that was not run or that failed;
    failures are listed in ``failures`` as ``(row_label, method, message)``.
    """

    row_labels: list
    errors: np.ndarray
    methods: tuple
    trials: int = 1
    seed: int = 0
    title: str = ""
    failures: list = field(default_factory=list)

    @property
    def mean_row(self):
        out = np.full(len(METHODS), np.nan)
        for c in range(len(METHODS)):
            col = self.errors[:, c]
            ok = ~np.isnan(col)
            if ok.any():
                out[c] = float(np.mean(col[ok]))
        return out

    def column(self, method):
        return self.errors[:, METHODS.index(method)]

    def mean(self, method):
        return float(self.mean_row[METHODS.index(method)])


def _error_pct(pred, y):
    return 100.0 * float(np.mean(pred != y))


def _sign(s):
    return np.where(s >= 0, 1.0, -1.0)


def cheat_error(domain, arch, train_cfg, folds=10, seed=0):
    """k-fold cross-validation error of an ``f_i``-shaped net inside one domain."""
    wrong = 0
    for i, test_idx in enumerate(kfold_indices(domain.n_samples, folds, seed)):
        mask = np.ones(domain.n_samples, dtype=bool)
        mask[test_idx] = False
        clf = _net(arch, train_cfg, derive_seed(seed, "cheat", i))
        clf.fit(domain.features[mask], domain.labels[mask])
        wrong += int(np.sum(clf.predict(domain.features[test_idx]) != domain.labels[test_idx]))
    return 100.0 * wrong / domain.n_samples


def _net(arch, train_cfg, seed):
    return NetClassifier(tuple(arch.f_hidden), arch.hidden_activation, arch.f_output,
                         train_cfg.learning_rate, train_cfg.epochs, train_cfg.batch_size,
                         train_cfg.l2_penalty, random_state=seed)


def _stack_sources(sources):
    X = np.vstack([s.features for s in sources])
    y = np.concatenate([s.labels for s in sources])
    groups = np.concatenate([[s.identifier] * s.n_samples for s in sources])
    return X, y, groups


def evaluate_holdout(sources, target, cfg, seed):
    """Error percentage per method for one target; ``(errors, failures)``.

    ``target`` keeps its labels here, but only an unlabeled copy is ever
    handed to a learner.
    """
    errors = np.full(len(METHODS), np.nan)
    failures = []
    y = target.labels
    blind = target.unlabeled()
    want = set(cfg.methods)

    def attempt(method, fn):
        try:
            errors[METHODS.index(method)] = fn()
        except (AlmdaError, np.linalg.LinAlgError) as exc:
            failures.append((method, str(exc)))

    if want & {"global", "local_vote", "alm"}:
        spec = cfg.transform if "alm" in want else replace(
            cfg.transform, train_cfg=replace(cfg.transform.train_cfg, epochs=0))
        try:
            model = fit_alm(MultiDomainSet(tuple(sources), blind), cfg.arch, spec,
                            replace(cfg.train, seed=seed))
        except AlmdaError as exc:
            failures += [(m, str(exc)) for m in ("global", "local_vote", "alm") if m in want]
        else:
            X = blind.features
            if "global" in want:
                errors[METHODS.index("global")] = _error_pct(_sign(model.global_net.score(X)), y)
            if "local_vote" in want:
                errors[METHODS.index("local_vote")] = _error_pct(
                    _sign(model.local_decision_function(X)), y)
            if "alm" in want:
                errors[METHODS.index("alm")] = _error_pct(model.predict(X), y)
    if "cheat" in want:
        attempt("cheat", lambda: cheat_error(target, cfg.arch, cfg.train, cfg.cheat_folds,
                                             derive_seed(seed, target.identifier)))
    if want & {"tca", "kmm"}:
        Xs, ys, groups = _stack_sources(sources)
        t = cfg.train
        common = dict(hidden_layer_sizes=tuple(cfg.arch.f_hidden), learning_rate=t.learning_rate,
                      epochs=t.epochs, batch_size=t.batch_size, l2_penalty=t.l2_penalty)
        if "tca" in want:
            clf = TCAVoteClassifier(bandwidth=cfg.tca.kernel.bandwidth,
                                    n_components=cfg.tca.num_components, mu=cfg.tca.mu,
                                    random_state=seed, **common)
            attempt("tca", lambda: _error_pct(clf.fit(Xs, ys, groups, blind.features).predict(), y))
        if "kmm" in want:
            clf = KMMVoteClassifier(bandwidth=cfg.kmm.kernel.bandwidth, B=cfg.kmm.B,
                                    epsilon=cfg.kmm.epsilon, max_iters=cfg.kmm.max_iters,
                                    random_state=seed, **common)
            attempt("kmm", lambda: _error_pct(clf.fit(Xs, ys, groups, blind.features).predict(), y))
    return errors, failures


def _holdout_table(domain_sets, cfg, title):
    """Average hold-one-out errors over ``domain_sets`` (one list per trial)."""
    k = len(domain_sets[0])
    total = np.zeros((k, len(METHODS)))
    counts = np.zeros((k, len(METHODS)))
    failures = []
    labels = [d.name or f"domain{i + 1}" for i, d in enumerate(domain_sets[0])]
    for t, domains in enumerate(domain_sets):
        seed = derive_seed(cfg.seed, "trial", t)
        for i, target in enumerate(domains):
            sources = [d for j, d in enumerate(domains) if j != i]
            errs, fails = evaluate_holdout(sources, target, cfg, seed)
            ok = ~np.isnan(errs)
            total[i, ok] += errs[ok]
            counts[i, ok] += 1
            failures += [(labels[i], m, msg) for m, msg in fails]
    with np.errstate(invalid="ignore"):
        errors = np.where(counts > 0, total / np.maximum(counts, 1), np.nan)
    return ExperimentReport(labels, errors, cfg.methods, cfg.trials, cfg.seed, title, failures)


def run_sine_bench(cfg):
    """Repeated sine-wave trials, each holding out one random domain."""
    rows, labels, failures = [], [], []
    for t in range(cfg.trials):
        sine = replace(cfg.sine, seed=derive_seed(cfg.seed, "sine", t))
        domains = gen_sine_domains(sine)
        h = int(np.random.default_rng(derive_seed(cfg.seed, "holdout", t)).integers(len(domains)))
        sources = [d for j, d in enumerate(domains) if j != h]
        errs, fails = evaluate_holdout(sources, domains[h], cfg, derive_seed(cfg.seed, "trial", t))
        label = f"trial{t + 1}:{domains[h].name}"
        rows.append(errs)
        labels.append(label)
        failures += [(label, m, msg) for m, msg in fails]
    title = f"sine benchmark, {cfg.trials} trials, seed {cfg.seed}"
    return ExperimentReport(labels, np.array(rows), cfg.methods, cfg.trials, cfg.seed, title,
                            failures)


def run_experiment(cfg):
    """Build the error table described by ``cfg``."""
    if cfg.bench == "sine":
        return run_sine_bench(cfg)
    if cfg.bench == "mixture":
        sets = [gen_mixture_domains(replace(cfg.mixture, seed=derive_seed(cfg.seed, "mixture", t)))
                for t in range(cfg.trials)]
        title = f"rotated-mixture benchmark, {cfg.trials} trials, seed {cfg.seed}"
        return _holdout_table(sets, cfg, title)
    domains = load_domains_csv(list(cfg.domains))
    unlabeled = [d.name for d in domains if not d.labeled]
    if unlabeled:
        raise ConfigError(f"every domain needs labels for hold-one-out scoring: {unlabeled}")
    title = f"hold-one-domain-out, {len(domains)} domains, {cfg.trials} trials, seed {cfg.seed}"
    return _holdout_table([domains] * cfg.trials, cfg, title)


# -- report output ---------------------------------------------------------------

def _cell(report, value, method):
    if method not in report.methods:
        return "-"
    if np.isnan(value):
        return "fail"
    return f"{value:.1f}"


def format_report(report, fmt="csv"):
    header = ["domain"] + [COLUMN_TITLES[m] for m in METHODS]
    body = [[label] + [_cell(report, v, m) for v, m in zip(row, METHODS)]
            for label, row in zip(report.row_labels, report.errors)]
    body.append(["mean"] + [_cell(report, v, m) for v, m in zip(report.mean_row, METHODS)])
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(body)
        return buf.getvalue()
    if fmt != "text":
        raise ConfigError(f"format must be csv or text, got {fmt!r}")
    rows = [header] + body
    widths = [max(len(r[c]) for r in rows) for c in range(len(header))]

    def line(r):
        return "  ".join([r[0].ljust(widths[0])] + [v.rjust(w) for v, w in zip(r[1:], widths[1:])])

    rule = "-" * len(line(header))
    out = []
    if report.title:
        out.append(f"# {report.title}")
    out += [line(header), rule] + [line(r) for r in body[:-1]] + [rule, line(body[-1])]
    for label, method, msg in report.failures:
        out.append(f"# failed: {label} {method}: {msg}")
    return "\n".join(out) + "\n"


def emit_report(report, path=None, fmt="csv"):
    """Write the table to ``path`` (or return it when ``path`` is None)."""
    text = format_report(report, fmt)
    if path is None:
        return text
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return text


def read_report_csv(text):
    """Parse a CSV table back into ``(row_labels, errors)``; the mean row is dropped."""
    rows = list(csv.reader(io.StringIO(text)))
    labels, values = [], []
    for r in rows[1:]:
        if r[0] == "mean":
            continue
        labels.append(r[0])
        values.append([math.nan if v in ("-", "fail") else float(v) for v in r[1:]])
    return labels, np.array(values)


# -- flat key = value configuration ------------------------------------------------

def _ints(text):
    return tuple(int(t) for t in text.replace(",", " ").split())


def _opt_float(text):
    return None if text.strip().lower() in ("", "none", "default") else float(text)


def _bandwidth(text):
    return "median" if text.strip() == "median" else float(text)


# key -> (section, field, parser)
CONFIG_KEYS = {
    "bench": ("", "bench", str),
    "domains": ("", "domains", lambda s: tuple(p.strip() for p in s.split(",") if p.strip())),
    "methods": ("", "methods", lambda s: tuple(m.strip() for m in s.split(",") if m.strip())),
    "trials": ("", "trials", int),
    "seed": ("", "seed", int),
    "out": ("", "out", str),
    "format": ("", "format", str),
    "cheat_folds": ("", "cheat_folds", int),
    "g_hidden": ("arch", "g_hidden", _ints),
    "f_hidden": ("arch", "f_hidden", _ints),
    "hidden_activation": ("arch", "hidden_activation", str),
    "g_output": ("arch", "g_output", str),
    "f_output": ("arch", "f_output", str),
    "learning_rate": ("train", "learning_rate", float),
    "epochs": ("train", "epochs", int),
    "batch_size": ("train", "batch_size", int),
    "l2_penalty": ("train", "l2_penalty", float),
    "phi_kind": ("transform", "kind", str),
    "phi_depth": ("transform", "depth", int),
    "phi_learning_rate": ("phi", "learning_rate", float),
    "phi_epochs": ("phi", "epochs", int),
    "phi_batch_size": ("phi", "batch_size", int),
    "phi_l2_penalty": ("phi", "l2_penalty", float),
    "kernel_bandwidth": ("kernel", "bandwidth", _bandwidth),
    "kmm_B": ("kmm", "B", float),
    "kmm_epsilon": ("kmm", "epsilon", _opt_float),
    "kmm_max_iters": ("kmm", "max_iters", int),
    "tca_components": ("tca", "num_components", lambda s: None if s.strip() in ("", "none") else int(s)),
    "tca_mu": ("tca", "mu", float),
    "sine_num_sources": ("sine", "num_sources", int),
    "sine_points": ("sine", "points_per_source", int),
    "sine_amplitude": ("sine", "amplitude", float),
    "sine_frequency": ("sine", "frequency", float),
    "sine_center_low": ("sine", "center_low", float),
    "sine_center_high": ("sine", "center_high", float),
    "sine_spread": ("sine", "cluster_spread", float),
    "mix_num_domains": ("mixture", "num_domains", int),
    "mix_points": ("mixture", "points_per_domain", int),
    "mix_features": ("mixture", "n_features", int),
    "mix_separation": ("mixture", "class_separation", float),
    "mix_spread": ("mixture", "cluster_spread", float),
    "mix_max_angle": ("mixture", "max_angle", float),
    "mix_max_shift": ("mixture", "max_shift", float),
}


def parse_config_text(text, source="<config>"):
    """Parse ``key = value`` lines; ``#`` starts a comment line."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = value.strip()
    return values


def bench_defaults(bench):
    """Settings each bench starts from before file values and flags apply."""
    if bench == "sine":
        return {"arch": SINE_ARCH, "transform": SINE_TRANSFORM, "methods": SINE_METHODS,
                "trials": 100}
    if bench == "mixture":
        return {"arch": Architecture(g_hidden=(10,), f_hidden=(10,)),
                "methods": SINE_METHODS, "trials": 20}
    return {}


def build_config(values, bench=None):
    """Turn raw ``key -> string`` values into an :class:`ExperimentConfig`."""
    values = dict(values)
    bench = bench or values.pop("bench", "csv")
    values.pop("bench", None)
    top = {"bench": bench, **bench_defaults(bench)}
    sections = {"arch": {}, "train": {}, "transform": {}, "phi": {}, "kernel": {},
                "kmm": {}, "tca": {}, "sine": {}, "mixture": {}}
    for key, raw in values.items():
        section, name, parse = CONFIG_KEYS[key]
        try:
            value = parse(raw)
        except ValueError:
            raise ConfigError(f"bad value for {key}: {raw!r}") from None
        (top if section == "" else sections[section])[name] = value
    try:
        arch = replace(top.pop("arch", Architecture()), **sections["arch"])
        base_transform = top.pop("transform", TransformSpec())
        phi_cfg = replace(base_transform.train_cfg, **sections["phi"])
        transform = replace(base_transform, train_cfg=phi_cfg, **sections["transform"])
        kernel = replace(KernelConfig(), **sections["kernel"])
        kmm = replace(KmmConfig(), kernel=kernel, **sections["kmm"])
        tca = replace(TcaConfig(), kernel=kernel, **sections["tca"])
        sine_vals = sections["sine"]
        base_sine = SineBenchConfig()
        lo = sine_vals.pop("center_low", base_sine.center_range[0])
        hi = sine_vals.pop("center_high", base_sine.center_range[1])
        sine = replace(base_sine, center_range=(lo, hi), **sine_vals)
        mixture = replace(MixtureBenchConfig(), **sections["mixture"])
        train = replace(TrainConfig(), **sections["train"])
        return ExperimentConfig(arch=arch, transform=transform, train=train, kmm=kmm, tca=tca,
                                sine=sine, mixture=mixture, **top)
    except AlmdaError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
