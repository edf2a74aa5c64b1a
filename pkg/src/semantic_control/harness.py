"""Experiment runner: fixtures x method x task -> metrics report and artifacts."""
import csv
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import yaml

from . import __version__
from .baselines import BeamSearchDecoder, BestOfNDecoder, RandomSampler
from .decoding import SemanticControlDecoder
from .exceptions import ConfigError, DomainError
from .gibbs import GibbsSampler
from .metrics import average_score, constraint_probability, expected_worst_score
from .toy_models import MAX_ENUMERATION, TabularJointLM, perplexity
from .verifier import LinearVerifier, MlpVerifier

METHODS = ("scone", "random", "beamsearch", "bon")

METHOD_DEFAULTS = {
    "scone": {"top_k": 10, "n_lookahead": None, "strength": 1.0, "renorm": "probability", "eps": 1e-4,
              "accumulate": "candidate", "lookahead": "gibbs",
              "gibbs": {"n_chains": 2, "n_iter": 20, "thinning": 5, "block_size": 1, "n_workers": 1,
                        "init": "crude-ar", "init_top_p": 0.9, "init_min_p": 0.1, "block_mode": "sequential"}},
    "random": {"top_p": 1.0, "min_p": 0.0, "temperature": 1.0, "top_k": None},
    "beamsearch": {"num_beams": 5, "temperature": 0.3},
    "bon": {"n": 10, "top_p": 0.9, "min_p": 0.1, "temperature": 1.0},
}

FIXTURE_DEFAULTS = {
    "vocab_size": 6, "horizon": 5, "embed_dim": 4, "sigma": 2.0, "lm_seed": 42,
    "verifier": {"kind": "mlp", "seed": 7, "hidden_size": 8, "output_scale": 10.0, "weight_scale": 1.0,
                 "bias": 0.0},
}

TASK_DEFAULTS = {"objective": "maximize", "threshold": 0.8, "constraint_mode": "any", "fraction": 0.9,
                 "worst_direction": None}


def _merge(defaults, overrides):
    out = dict(defaults)
    for key, value in (overrides or {}).items():
        if isinstance(out.get(key), dict) and isinstance(value, dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


@dataclass
class ExperimentConfig:
    fixture: dict = field(default_factory=lambda: _merge(FIXTURE_DEFAULTS, {}))
    method: str = "scone"
    method_params: dict = field(default_factory=dict)
    task: dict = field(default_factory=lambda: dict(TASK_DEFAULTS))
    prompts: list = field(default_factory=lambda: [[0]])
    generations_per_prompt: int = 10
    seed: int = 0
    eval_lm: dict = field(default_factory=lambda: {"kind": "base"})
    output_dir: str = None

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        known = {"fixture", "method", "task", "prompts", "generations_per_prompt", "seed", "eval_lm", "output_dir"}
        unknown = sorted(set(data) - known)
        method = data.get("method", "scone")
        params = {}
        if isinstance(method, dict):
            params = method.get("params", {}) or {}
            method = method.get("name")
        cfg = cls(
            fixture=_merge(FIXTURE_DEFAULTS, data.get("fixture")),
            method=method,
            method_params=_merge(METHOD_DEFAULTS.get(method, {}), params),
            task=_merge(TASK_DEFAULTS, data.get("task")),
            prompts=_expand_prompts(data.get("prompts", [[0]]), data.get("fixture", {}).get("vocab_size", 6)),
            generations_per_prompt=data.get("generations_per_prompt", 10),
            seed=data.get("seed", 0),
            eval_lm=_merge({"kind": "base", "seed": 1234, "sigma": None}, data.get("eval_lm")),
            output_dir=data.get("output_dir"),
        )
        cfg._unknown = unknown
        return cfg

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            data = yaml.safe_load(fh)
        cfg = cls.from_dict(data)
        if cfg.output_dir is not None and not os.path.isabs(cfg.output_dir):
            cfg.output_dir = os.path.normpath(os.path.join(os.path.dirname(os.path.abspath(path)), cfg.output_dir))
        return cfg

    def validate(self):
        """Collect every configuration problem; raise :class:`ConfigError` if there are any."""
        problems = [f"unknown top-level key {k!r}" for k in getattr(self, "_unknown", [])]
        fx = self.fixture
        V, T = fx.get("vocab_size"), fx.get("horizon")
        if not isinstance(V, int) or V < 2:
            problems.append(f"fixture.vocab_size must be an integer >= 2, got {V!r}")
        if not isinstance(T, int) or T < 1:
            problems.append(f"fixture.horizon must be a positive integer, got {T!r}")
        if isinstance(V, int) and isinstance(T, int) and V >= 2 and T >= 1 and V**T > MAX_ENUMERATION:
            problems.append(f"fixture V**T = {V**T} exceeds the enumeration bound {MAX_ENUMERATION}")
        if not isinstance(fx.get("embed_dim"), int) or fx["embed_dim"] < 1:
            problems.append(f"fixture.embed_dim must be a positive integer, got {fx.get('embed_dim')!r}")
        if fx["verifier"].get("kind") not in ("mlp", "linear"):
            problems.append(f"fixture.verifier.kind must be 'mlp' or 'linear', got {fx['verifier'].get('kind')!r}")
        if self.method not in METHODS:
            problems.append(f"method must be one of {METHODS}, got {self.method!r}")
        else:
            extra = sorted(set(self.method_params) - set(METHOD_DEFAULTS[self.method]))
            problems.extend(f"unknown {self.method} parameter {k!r}" for k in extra)
        task = self.task
        if task.get("objective") not in ("maximize", "minimize"):
            problems.append(f"task.objective must be 'maximize' or 'minimize', got {task.get('objective')!r}")
        tau = task.get("threshold")
        if not isinstance(tau, (int, float)) or not 0.0 < tau < 1.0:
            problems.append(f"task.threshold must lie in (0, 1), got {tau!r}")
        if task.get("constraint_mode") not in ("any", "fraction"):
            problems.append(f"task.constraint_mode must be 'any' or 'fraction', got {task.get('constraint_mode')!r}")
        if task.get("worst_direction") not in (None, "max", "min"):
            problems.append(f"task.worst_direction must be 'max' or 'min', got {task.get('worst_direction')!r}")
        if not isinstance(self.generations_per_prompt, int) or self.generations_per_prompt < 1:
            problems.append(f"generations_per_prompt must be a positive integer, got {self.generations_per_prompt!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            problems.append(f"seed must be a non-negative integer, got {self.seed!r}")
        if not self.prompts:
            problems.append("at least one prompt is required")
        for k, p in enumerate(self.prompts):
            if not isinstance(p, list) or not all(isinstance(t, int) for t in p):
                problems.append(f"prompt {k} must be a list of token ids, got {p!r}")
            elif isinstance(V, int) and any(not 0 <= t < V for t in p):
                problems.append(f"prompt {k} has token ids outside [0, {V})")
            elif isinstance(T, int) and len(p) >= T:
                problems.append(f"prompt {k} has length {len(p)} but must be shorter than the horizon {T}")
        if self.eval_lm.get("kind") not in ("base", "external"):
            problems.append(f"eval_lm.kind must be 'base' or 'external', got {self.eval_lm.get('kind')!r}")
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self):
        out = asdict(self)
        out.pop("output_dir")
        return out


def _expand_prompts(spec, vocab_size):
    """Either an explicit list of token lists or ``{count, length, seed}`` for seeded random prompts."""
    if isinstance(spec, dict):
        rng = np.random.default_rng(spec.get("seed", 0))
        return [[int(t) for t in rng.integers(0, vocab_size, size=spec.get("length", 1))]
                for _ in range(spec.get("count", 1))]
    return spec


def build_fixtures(cfg):
    fx = cfg.fixture
    lm = TabularJointLM(vocab_size=fx["vocab_size"], horizon=fx["horizon"], sigma=fx["sigma"],
                        random_state=fx["lm_seed"]).fit()
    v = fx["verifier"]
    if v["kind"] == "mlp":
        verifier = MlpVerifier(vocab_size=fx["vocab_size"], embed_dim=fx["embed_dim"], hidden_size=v["hidden_size"],
                               output_scale=v["output_scale"], random_state=v["seed"]).fit()
    else:
        verifier = LinearVerifier(vocab_size=fx["vocab_size"], embed_dim=fx["embed_dim"],
                                  weight_scale=v["weight_scale"], bias=v["bias"], random_state=v["seed"]).fit()
    if cfg.eval_lm["kind"] == "external":
        sigma = fx["sigma"] if cfg.eval_lm.get("sigma") is None else cfg.eval_lm["sigma"]
        eval_lm = TabularJointLM(vocab_size=fx["vocab_size"], horizon=fx["horizon"], sigma=sigma,
                                 random_state=cfg.eval_lm["seed"]).fit()
    else:
        eval_lm = lm
    return lm, verifier, eval_lm


def build_method(cfg, lm, verifier):
    params = dict(cfg.method_params)
    objective = cfg.task["objective"]
    if cfg.method == "scone":
        sampler = GibbsSampler(**params.pop("gibbs"))
        return SemanticControlDecoder(sampler=sampler, objective=objective, **params).fit(lm, verifier)
    if cfg.method == "random":
        return RandomSampler(**params).fit(lm)
    if cfg.method == "beamsearch":
        return BeamSearchDecoder(**params).fit(lm)
    return BestOfNDecoder(objective=objective, **params).fit(lm, verifier)


def _pct(x):
    return round(float(x), 2)


def run_experiment(cfg, write=True):
    """Generate, score and summarize; returns the report dict and writes artifacts to ``cfg.output_dir``."""
    cfg.validate()
    lm, verifier, eval_lm = build_fixtures(cfg)
    decoder = build_method(cfg, lm, verifier)
    G = cfg.generations_per_prompt
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(cfg.prompts) * G)
    rows, traces, groups = [], [], []
    for pid, prompt in enumerate(cfg.prompts):
        scores = []
        for g in range(G):
            rng = np.random.default_rng(seeds[pid * G + g])
            if cfg.method == "scone":
                seq, steps = decoder.generate(prompt, rng)
                traces.extend({"prompt_id": pid, "generation": g, "step": k, **t.to_dict()}
                              for k, t in enumerate(steps))
            else:
                seq = decoder.generate(prompt, rng)
            if seq.size != lm.horizon or seq.min() < 0 or seq.max() >= lm.vocab_size:
                raise DomainError(f"generation {seq} is not a complete sequence")
            score = verifier.score_sequence(seq)
            scores.append(score)
            rows.append({"prompt_id": pid, "generation": g, "prompt": prompt, "tokens": [int(t) for t in seq],
                         "score": score, "satisfied": score >= cfg.task["threshold"],
                         "eval_log_prob": float(np.log(eval_lm.joint_prob(seq))) if eval_lm.joint_prob(seq) > 0
                         else float("-inf")})
        groups.append(scores)

    task = cfg.task
    direction = task["worst_direction"] or ("min" if task["objective"] == "maximize" else "max")
    ppl = perplexity(eval_lm, [r["tokens"] for r in rows])
    report = {
        "tool_version": __version__,
        "config": cfg.to_dict(),
        "metrics": {
            "average_score": _pct(average_score(groups)),
            "constraint_probability": _pct(constraint_probability(groups, task["threshold"], task["constraint_mode"],
                                                                  task["fraction"])),
            "expected_worst_score": _pct(expected_worst_score(groups, direction)),
            "worst_direction": direction,
            "perplexity": None if not np.isfinite(ppl) else round(ppl, 4),
            "perplexity_infinite": not np.isfinite(ppl),
        },
        "per_prompt": [
            {"prompt_id": pid, "prompt": cfg.prompts[pid],
             "average_score": _pct(average_score([scores])),
             "constraint_probability": _pct(constraint_probability([scores], task["threshold"],
                                                                   task["constraint_mode"], task["fraction"])),
             "worst_score": _pct(expected_worst_score([scores], direction))}
            for pid, scores in enumerate(groups)
        ],
        "n_generations": len(rows),
        "traces": "traces.jsonl" if cfg.method == "scone" else None,
    }
    if write and cfg.output_dir:
        write_artifacts(cfg.output_dir, report, rows, traces if cfg.method == "scone" else None)
    return report, rows, traces


def write_artifacts(out_dir, report, rows, traces=None):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "generations.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["prompt_id", "generation", "prompt", "tokens", "score", "satisfied", "eval_log_prob"])
        for r in rows:
            writer.writerow([r["prompt_id"], r["generation"], " ".join(map(str, r["prompt"])),
                             " ".join(map(str, r["tokens"])), repr(r["score"]), int(r["satisfied"]),
                             repr(r["eval_log_prob"])])
    if traces is not None:
        with open(os.path.join(out_dir, "traces.jsonl"), "w") as fh:
            for t in traces:
                fh.write(json.dumps(t, sort_keys=True) + "\n")
