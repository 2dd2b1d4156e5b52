"""Episodic training with validation-based selection, and seeded meta-test evaluation."""

from __future__ import annotations

import json
import logging
import math
import os
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from tqdm import tqdm

from structshot.autodiff import Tape, Value, backward, no_grad, stack
from structshot.checkpoint import Checkpoint
from structshot.config import RunConfig
from structshot.episodes import EpisodeTask, check_feasible, sample_episode
from structshot.errors import ConfigError, EpisodeError, NonFiniteError, TrainingError
from structshot.fusion import ModelParams, ModelVariant, encode_graph, init_model
from structshot.graphs import DatasetSplit, Graph, holdout_validation, parse_dataset, with_substructures
from structshot.meta import (
    Centroids,
    EmbeddingTransform,
    apply_transform,
    class_centroids,
    ensemble_predict_batch,
    episode_loss,
    fit_transform,
    predict_batch,
)
from structshot.params import load_state_dict, state_dict, trainable

logger = logging.getLogger("structshot")

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
CI95_Z = 1.96


class Adam:
    """Adaptive moment estimation over a fixed list of parameters, updated in place."""

    def __init__(
        self,
        params: Sequence[Value],
        lr: float = 0.001,
        betas: tuple[float, float] = ADAM_BETAS,
        eps: float = ADAM_EPS,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: dict[Value, Value]) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1**self.t
        correction2 = 1.0 - self.beta2**self.t
        for i, p in enumerate(self.params):
            grad = grads.get(p)
            g = grad.data if grad is not None else np.zeros_like(p.data)
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / correction1
            v_hat = self.v[i] / correction2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class EvalReport:
    mean: float
    std: float
    ci95: float
    tasks: int
    accuracies: tuple[float, ...]

    @classmethod
    def from_accuracies(cls, accuracies: Sequence[float]) -> EvalReport:
        values = np.asarray(accuracies, dtype=np.float64)
        if values.size == 0:
            raise EpisodeError("no tasks were evaluated")
        std = float(values.std())
        return cls(
            mean=float(values.mean()),
            std=std,
            ci95=CI95_Z * std / math.sqrt(values.size),
            tasks=int(values.size),
            accuracies=tuple(float(a) for a in values),
        )

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std": self.std,
            "ci95": self.ci95,
            "tasks": self.tasks,
            "accuracies": list(self.accuracies),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def progress_enabled(config: RunConfig) -> bool:
    return config.progress and not os.environ.get("STRUCTSHOT_NO_PROGRESS")


def load_dataset(config: RunConfig) -> DatasetSplit:
    """Parse config.dataset, adding seeded substructures when the variant fuses them."""
    if not config.dataset:
        raise ConfigError("no dataset given (set `dataset` or pass --dataset)")
    dataset = parse_dataset(config.dataset, degree_cap=config.degree_cap)
    if config.model_variant().needs_substructures:
        dataset = with_substructures(dataset, config.seed, config.num_substructures)
    return dataset


def _branch_count(variant: ModelVariant) -> int:
    return len(variant.branches)


def task_loss(task: EpisodeTask, variant: ModelVariant, params: ModelParams) -> Value:
    """Episode loss summed over branches; every branch sees the same episode."""
    total = None
    for branch in range(_branch_count(variant)):
        support = [encode_graph(g, variant, params, branch).vector for g in task.support]
        query = stack([encode_graph(g, variant, params, branch).vector for g in task.query])
        centroids = class_centroids(support, task.support_labels, task.classes)
        loss = episode_loss(query, task.query_labels, centroids)
        total = loss if total is None else total + loss
    return total


def embed_graphs(
    graphs: Sequence[Graph], variant: ModelVariant, params: ModelParams
) -> list[dict[str, np.ndarray]]:
    """Per branch, graph id -> embedding, computed once without recording."""
    with no_grad():
        return [
            {g.id: encode_graph(g, variant, params, branch).vector.data for g in graphs}
            for branch in range(_branch_count(variant))
        ]


def fit_transforms(
    graphs: Sequence[Graph], variant: ModelVariant, params: ModelParams, config: RunConfig
) -> list[EmbeddingTransform]:
    """One centering transform per branch over the meta-train graphs."""
    return [
        fit_transform(list(cache.values()), config.l2_normalize, config.epsilon_floor)
        for cache in embed_graphs(graphs, variant, params)
    ]


def _score_task(
    task: EpisodeTask,
    caches: list[dict[str, np.ndarray]],
    transforms: list[EmbeddingTransform],
) -> float:
    branch_centroids: list[Centroids] = []
    branch_queries: list[np.ndarray] = []
    for cache, transform in zip(caches, transforms):
        support = apply_transform(np.stack([cache[g.id] for g in task.support]), transform)
        query = apply_transform(np.stack([cache[g.id] for g in task.query]), transform)
        branch_centroids.append(
            class_centroids([Value(row) for row in support], task.support_labels, task.classes)
        )
        branch_queries.append(query)
    if len(branch_centroids) == 1:
        predictions = predict_batch(branch_queries[0], branch_centroids[0])
    else:
        predictions = ensemble_predict_batch(branch_queries, branch_centroids)
    return float(np.mean(predictions == np.asarray(task.query_labels)))


def run_episodes(
    graphs: Sequence[Graph],
    variant: ModelVariant,
    params: ModelParams,
    transforms: list[EmbeddingTransform],
    config: RunConfig,
    num_tasks: int,
    seed: int,
    desc: str | None = None,
) -> list[float]:
    """Per-task accuracies over num_tasks episodes, each on its own rng stream split from seed."""
    check_feasible(graphs, config.n, config.k, config.q)
    caches = embed_graphs(graphs, variant, params)
    streams = np.random.SeedSequence(seed).spawn(num_tasks)

    def one(stream: np.random.SeedSequence) -> float:
        task = sample_episode(graphs, config.n, config.k, config.q, np.random.default_rng(stream))
        return _score_task(task, caches, transforms)

    show = desc is not None and progress_enabled(config)
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = pool.map(one, streams)
            return list(tqdm(results, total=num_tasks, desc=desc, disable=not show))
    return [one(s) for s in tqdm(streams, desc=desc, disable=not show)]


def evaluate(
    checkpoint: Checkpoint,
    graphs: Sequence[Graph],
    num_tasks: int | None = None,
    seed: int | None = None,
) -> EvalReport:
    """Meta-test the checkpoint on graphs with seeded N-way K-shot episodes."""
    config = checkpoint.config
    num_tasks = num_tasks if num_tasks is not None else config.eval_tasks
    seed = seed if seed is not None else config.seed
    variant = config.model_variant()
    if len(checkpoint.transforms) != _branch_count(variant):
        raise EpisodeError(
            f"checkpoint holds {len(checkpoint.transforms)} transforms for "
            f"{_branch_count(variant)} branches"
        )
    accuracies = run_episodes(
        graphs, variant, checkpoint.params, checkpoint.transforms, config, num_tasks, seed, "eval"
    )
    report = EvalReport.from_accuracies(accuracies)
    logger.info(
        f"Evaluated {report.tasks} tasks: accuracy {report.mean:.4f} ± {report.std:.4f} "
        f"(ci95 {report.ci95:.4f})"
    )
    return report


def _split_pools(dataset: DatasetSplit, config: RunConfig) -> tuple[tuple[Graph, ...], tuple[Graph, ...]]:
    """(training pool, validation pool); without validation classes, hold out train graphs."""
    if dataset.validation:
        return dataset.train, dataset.validation
    kept, held = holdout_validation(dataset.train, config.holdout, config.seed)
    logger.info(
        f"No validation classes; holding out {config.holdout} graphs per train class "
        f"({len(held)} total) for model selection"
    )
    return kept, held


def train(config: RunConfig, dataset: DatasetSplit | None = None) -> Checkpoint:
    """Run config.iterations optimizer steps and return the checkpoint with the best validation."""
    dataset = dataset if dataset is not None else load_dataset(config)
    variant = config.model_variant()
    check_feasible(dataset.train, config.n, config.k, config.q)
    train_pool, val_pool = _split_pools(dataset, config)
    check_feasible(train_pool, config.n, config.k, config.q)
    try:
        check_feasible(val_pool, config.n, config.k, config.q)
        validate = True
    except EpisodeError as e:
        logger.warning(f"Validation disabled: {e}")
        validate = False

    init_seq, episode_seq, val_seq = np.random.SeedSequence(config.seed).spawn(3)
    params = init_model(
        variant,
        dataset.feature_dim,
        config.gin_config(),
        np.random.default_rng(init_seq),
        num_substructures=config.num_substructures,
    )
    leaves = trainable(params)
    optimizer = Adam(leaves, lr=config.learning_rate)
    episode_rng = np.random.default_rng(episode_seq)
    val_seed = int(val_seq.generate_state(1)[0])

    logger.info(
        f"Training {variant.name} ({', '.join(b.label for b in variant.branches)}): "
        f"{config.iterations} steps, {config.n}-way {config.k}-shot, "
        f"{sum(p.size for p in leaves)} parameters"
    )

    loss_trace: list[float] = []
    history: list[tuple[int, float]] = []
    best_acc: float | None = None
    best_state: dict[str, np.ndarray] | None = None

    pbar = tqdm(
        range(1, config.iterations + 1), desc="train", unit="step", disable=not progress_enabled(config)
    )
    for step in pbar:
        try:
            with Tape() as tape:
                losses = [
                    task_loss(
                        sample_episode(train_pool, config.n, config.k, config.q, episode_rng),
                        variant,
                        params,
                    )
                    for _ in range(config.tasks_per_iteration)
                ]
                loss = losses[0]
                for extra in losses[1:]:
                    loss = loss + extra
                if len(losses) > 1:
                    loss = loss * (1.0 / len(losses))
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteError(f"loss is {value}")
            grads = backward(tape, loss)
        except NonFiniteError as e:
            raise TrainingError(f"non-finite loss at iteration {step}: {e}") from None
        optimizer.step(grads)
        loss_trace.append(value)
        pbar.set_postfix({"loss": f"{value:.4f}"})
        if step % config.log_every == 0:
            logger.info(f"Step {step}/{config.iterations}: loss {value:.4f}")

        if validate and step % config.validate_every == 0:
            transforms = fit_transforms(dataset.train, variant, params, config)
            accuracy = float(
                np.mean(
                    run_episodes(val_pool, variant, params, transforms, config, config.val_tasks, val_seed)
                )
            )
            history.append((step, accuracy))
            if best_acc is None or accuracy > best_acc:
                best_acc = accuracy
                best_state = state_dict(params)
                logger.info(f"Step {step}: validation accuracy {accuracy:.4f} (new best)")
            else:
                logger.info(f"Step {step}: validation accuracy {accuracy:.4f} (best {best_acc:.4f})")

    if best_state is not None:
        load_state_dict(params, best_state)
    transforms = fit_transforms(dataset.train, variant, params, config)
    logger.info(
        f"Training finished: {len(loss_trace)} steps"
        + (f", best validation accuracy {best_acc:.4f}" if best_acc is not None else "")
    )
    return Checkpoint(
        config=config,
        params=params,
        in_dim=dataset.feature_dim,
        transforms=transforms,
        best_val_acc=best_acc,
        rng_state=episode_rng.bit_generator.state,
        loss_trace=loss_trace,
        validation=history,
    )
