"""Cross-domain bootstrapping with pseudo-label co-supervision.

Per target query, every learner k receives its own bootstrapped labeled
source batch and is updated once (per step) on

    l_s(w_k, S_k) + l_t(peer -> k) + l_ent(w_k, T) + lam * l_div(w_k, T)

with a single accumulated gradient and one Adam step. Source rows, the weak
target view and the strong target view go through the network as one
train-mode batch, so the batch-norm statistics of each learner mix its own
bootstrap sample with the query (``joint_batch_norm=False`` forwards the
three blocks separately instead). After adaptation the query is predicted by
the eval-mode ensemble (mean of the learners' probabilities).

Modes:

* ``crodobo``: K learners, each trained on its peer's confident pseudo-labels
* ``single``: one learner, pseudo-labels from itself (no bootstrap ensemble)
* ``source_only``: one learner, supervised source loss only
* ``continual``: K learners, target objectives only; source data is only
  seen during the warm-up phase before the stream starts
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from crodobo.augment import AugmentPolicy, WeakPolicy, strong_augment, weak_augment
from crodobo.data import Dataset, SourcePool, TargetStream, bootstrap_batches
from crodobo.losses import (argmax_rows, cross_entropy_terms, diversity_terms,
                            entropy_terms, exchange_terms, pseudo_labels)
from crodobo.metrics import RunTrace
from crodobo.net import (Network, NetworkSpec, OptimizerState, adam_step, backward,
                         forward, init_network, init_optimizer)

MODES = ("crodobo", "single", "source_only", "continual")
LOSS_NAMES = ("source", "exchange", "entropy", "diversity")
# mixed into seeds so equal integer seeds still give unrelated streams
BOOTSTRAP_TAG = 0xB00
AUGMENT_TAG = 0xA06


class EngineError(ValueError):
    pass


@dataclass
class HyperParams:
    tau: float = 0.95
    lam: float = 0.4
    steps_per_query: int = 1
    mode: str = "crodobo"
    num_learners: int = 2
    use_exchange: bool = True
    use_entropy: bool = True
    use_diversity: bool = True
    warmup_steps: int = 0
    distinct_init: bool = False
    parallel: bool = False
    joint_batch_norm: bool = True

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise EngineError(f"tau must lie in (0, 1], got {self.tau}")
        if self.lam < 0:
            raise EngineError(f"lam must be non-negative, got {self.lam}")
        if self.steps_per_query < 0:
            raise EngineError("steps_per_query must be >= 0")
        if self.mode not in MODES:
            raise EngineError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.num_learners < 1:
            raise EngineError("num_learners must be >= 1")
        if self.warmup_steps < 0:
            raise EngineError("warmup_steps must be >= 0")

    @property
    def ensemble_size(self) -> int:
        return 1 if self.mode in ("single", "source_only") else self.num_learners

    @property
    def uses_source(self) -> bool:
        return self.mode != "continual"

    @property
    def uses_target(self) -> bool:
        return self.mode != "source_only"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Learner:
    net: Network
    opt: OptimizerState
    rng: np.random.Generator


@dataclass
class LearnerEnsemble:
    learners: list[Learner]

    @property
    def spec(self) -> NetworkSpec:
        return self.learners[0].net.spec

    def __len__(self):
        return len(self.learners)

    def predict(self, x) -> np.ndarray:
        return ensemble_predict(self, x)


def build_ensemble(spec: NetworkSpec, k: int, init_seed: int, augment_seed: int,
                   adam: dict | None = None, distinct_init: bool = False,
                   nets: list[Network] | None = None) -> LearnerEnsemble:
    """K learners with disjoint RNG streams. Unless ``distinct_init`` is set,
    all learners start from the same weights."""
    adam = adam or {}
    if nets is None:
        if distinct_init:
            # learner 0 keeps init_seed so a K=1 run shares its starting point
            seeds = [init_seed] + [int(s.generate_state(1)[0])
                                   for s in np.random.SeedSequence(init_seed).spawn(k - 1)]
        else:
            seeds = [init_seed] * k
        nets = [init_network(spec, s) for s in seeds]
    elif len(nets) != k:
        raise EngineError(f"expected {k} networks, got {len(nets)}")
    specs = {(n.spec.input_dim, n.spec.num_classes) for n in nets}
    if len(specs) != 1:
        raise EngineError("all learners must share input_dim and num_classes")
    rngs = [np.random.default_rng(s)
            for s in np.random.SeedSequence([augment_seed, AUGMENT_TAG]).spawn(k)]
    return LearnerEnsemble([Learner(n, init_optimizer(n, **adam), r)
                            for n, r in zip(nets, rngs)])


@dataclass
class QueryOutcome:
    index: int
    probs: np.ndarray
    predictions: np.ndarray
    losses: list[dict] = field(default_factory=list)
    accepted: list[int] = field(default_factory=list)
    updates_applied: int = 0

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "probs": self.probs.tolist(),
            "predictions": self.predictions.tolist(),
            "losses": self.losses,
            "accepted": self.accepted,
            "updates_applied": self.updates_applied,
        }


def ensemble_predict(ensemble: LearnerEnsemble, x) -> np.ndarray:
    """Mean of the learners' eval-mode probabilities.

    Per-entry values are sorted before summation so the result does not
    depend on learner order.
    """
    stack = np.stack([forward(l.net, x, "eval")[0] for l in ensemble.learners])
    return np.sort(stack, axis=0).sum(axis=0) / len(stack)


@dataclass
class _Pass:
    probs: np.ndarray
    cache: object
    source: slice | None
    weak: slice | None
    strong: slice | None
    source_labels: np.ndarray | None


def _forward_pass(learner: Learner, source_batch, query_x, hp: HyperParams,
                  weak_policy: WeakPolicy, strong_policy: AugmentPolicy) -> _Pass:
    blocks = []
    pos = 0
    src = weak = strong = None
    labels = None
    if hp.uses_source:
        xs, labels = source_batch
        blocks.append(weak_augment(xs, learner.rng, weak_policy))
        src = slice(0, len(xs))
        pos = len(xs)
    if hp.uses_target:
        b = len(query_x)
        blocks.append(weak_augment(query_x, learner.rng, weak_policy))
        blocks.append(strong_augment(query_x, strong_policy, learner.rng))
        weak = slice(pos, pos + b)
        strong = slice(pos + b, pos + 2 * b)
    if hp.joint_batch_norm:
        probs, cache = forward(learner.net, np.concatenate(blocks), "train")
        return _Pass(probs, cache, src, weak, strong, labels)
    outs = [forward(learner.net, b, "train") for b in blocks]
    probs = np.concatenate([o[0] for o in outs])
    return _Pass(probs, [o[1] for o in outs], src, weak, strong, labels)


def objective_terms(pas: _Pass, teacher_probs, hp: HyperParams):
    """Loss values, d(total)/d(logits) for the concatenated batch, and the
    number of accepted pseudo-labels."""
    probs = pas.probs
    grad = np.zeros_like(probs)
    values = dict.fromkeys(LOSS_NAMES, 0.0)
    accepted = 0
    if pas.source is not None:
        values["source"], g = cross_entropy_terms(probs[pas.source], pas.source_labels)
        grad[pas.source] += g
    if pas.weak is not None:
        if hp.use_exchange:
            values["exchange"], g, mask = exchange_terms(
                probs[pas.strong], teacher_probs, hp.tau)
            grad[pas.strong] += g
        else:
            _, mask = pseudo_labels(teacher_probs, hp.tau)
        accepted = int(mask.sum())
        weak = probs[pas.weak]
        if hp.use_entropy:
            values["entropy"], g = entropy_terms(weak)
            grad[pas.weak] += g
        if hp.use_diversity:
            values["diversity"], g = diversity_terms(weak)
            grad[pas.weak] += hp.lam * g
    return values, grad, accepted


def _update(learner: Learner, pas: _Pass, teacher_probs, hp: HyperParams):
    values, grad, accepted = objective_terms(pas, teacher_probs, hp)
    if isinstance(pas.cache, list):
        grads = None
        pos = 0
        for c in pas.cache:
            n = len(c.logits)
            g = backward(learner.net, c, grad[pos:pos + n])
            grads = g if grads is None else {k: grads[k] + g[k] for k in g}
            pos += n
    else:
        grads = backward(learner.net, pas.cache, grad)
    adam_step(learner.net, grads, learner.opt)
    return values, accepted


def _map(fn, items, parallel):
    if parallel and len(items) > 1:
        with ThreadPoolExecutor(max_workers=len(items)) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def adapt_query(ensemble: LearnerEnsemble, query_features, source_batches,
                hp: HyperParams, weak_policy: WeakPolicy | None = None,
                strong_policy: AugmentPolicy | None = None,
                index: int = 0) -> QueryOutcome:
    """Adapt every learner on one query, then predict it with the ensemble."""
    weak_policy = weak_policy or WeakPolicy()
    strong_policy = strong_policy or AugmentPolicy()
    query_x = np.asarray(query_features, dtype=np.float64)
    if query_x.ndim != 2 or len(query_x) == 0:
        raise EngineError("query must be a non-empty feature matrix")
    k = len(ensemble)
    if k != hp.ensemble_size:
        raise EngineError(f"mode {hp.mode!r} expects {hp.ensemble_size} learners, got {k}")
    if hp.uses_source:
        if source_batches is None or len(source_batches) != k:
            raise EngineError(f"mode {hp.mode!r} needs {k} source batches")
    elif source_batches:
        raise EngineError("continual mode takes no source batches")

    learners = ensemble.learners
    losses = [dict.fromkeys(LOSS_NAMES, 0.0) for _ in learners]
    accepted = [0] * k
    for _ in range(hp.steps_per_query):
        # phase 1: weak/strong forward of every learner (pseudo-label exchange point)
        passes = _map(
            lambda i: _forward_pass(learners[i],
                                    source_batches[i] if hp.uses_source else None,
                                    query_x, hp, weak_policy, strong_policy),
            list(range(k)), hp.parallel)
        if hp.uses_target:
            peer = [(i + 1) % k for i in range(k)]
            teachers = [passes[peer[i]].probs[passes[peer[i]].weak] for i in range(k)]
        else:
            teachers = [None] * k
        # phase 2: independent updates
        results = _map(lambda i: _update(learners[i], passes[i], teachers[i], hp),
                       list(range(k)), hp.parallel)
        del passes
        for i, (vals, acc) in enumerate(results):
            losses[i] = vals
            accepted[i] = acc

    probs = ensemble_predict(ensemble, query_x)
    return QueryOutcome(
        index=index,
        probs=probs,
        predictions=argmax_rows(probs),
        losses=losses,
        accepted=accepted,
        updates_applied=learners[0].opt.step,
    )


def source_step(ensemble: LearnerEnsemble, source_batches, weak_policy: WeakPolicy,
                parallel: bool = False) -> list[float]:
    """One supervised source update per learner (used for warm-up)."""
    def step(i):
        learner = ensemble.learners[i]
        xs, ys = source_batches[i]
        probs, cache = forward(learner.net, weak_augment(xs, learner.rng, weak_policy), "train")
        value, g = cross_entropy_terms(probs, ys)
        adam_step(learner.net, backward(learner.net, cache, g), learner.opt)
        return value
    return _map(step, list(range(len(ensemble))), parallel)


def run_online(source: Dataset, stream: TargetStream, hp: HyperParams,
               spec: NetworkSpec, seed: int, *, bootstrap_seed: int = 0,
               augment_seed: int = 0, adam: dict | None = None,
               weak_policy: WeakPolicy | None = None,
               strong_policy: AugmentPolicy | None = None,
               batch_size: int | None = None,
               ensemble: LearnerEnsemble | None = None,
               manifest: dict | None = None) -> RunTrace:
    """Stream the target once: adapt, test, record, erase, query by query.

    The ensemble used is attached to the returned trace as ``trace.ensemble``.
    """
    weak_policy = weak_policy or WeakPolicy()
    strong_policy = strong_policy or AugmentPolicy()
    batch_size = batch_size or stream.query_size
    k = hp.ensemble_size
    if ensemble is None:
        ensemble = build_ensemble(spec, k, seed, augment_seed, adam, hp.distinct_init)
    pool = SourcePool(source, np.random.default_rng([bootstrap_seed, BOOTSTRAP_TAG]))
    trace = RunTrace(stream.num_samples, stream.num_classes, manifest)
    trace.ensemble = ensemble
    start = time.perf_counter()

    for _ in range(hp.warmup_steps):
        source_step(ensemble, bootstrap_batches(pool, k, batch_size), weak_policy, hp.parallel)

    while (query := stream.next_query()) is not None:
        view = query.view()
        batches = bootstrap_batches(pool, k, batch_size) if hp.uses_source else None
        outcome = adapt_query(ensemble, view.features, batches, hp, weak_policy,
                              strong_policy, index=view.index)
        del view, batches
        trace.record(outcome, query)
        query.release()
    trace.wall_clock = time.perf_counter() - start
    return trace
