"""Pytest fixtures for structshot tests."""

import logging
import os
from argparse import Namespace

import numpy as np
import pytest

from structshot.config import RunConfig
from structshot.graphs import DatasetSplit, Graph, write_dataset
from structshot.synthetic import generate_triangles_dataset


def pytest_configure(config):
    """Keep progress bars out of test output."""
    os.environ["STRUCTSHOT_NO_PROGRESS"] = "1"


def make_graph(graph_id, num_nodes, edges, label=0, split="train", substructures=None):
    """Graph with degree features, capped small so toy graphs stay narrow."""
    return Graph.from_edges(
        graph_id, num_nodes, edges, label, split=split, substructures=substructures, degree_cap=4
    )


def make_train_args(**overrides):
    """Namespace shaped like `structshot train` arguments."""
    defaults = {
        "config": None,
        "dataset": None,
        "variant": None,
        "global_attn": None,
        "local_attn": None,
        "n": None,
        "k": None,
        "q": None,
        "seed": None,
        "pooling": None,
        "heads": None,
        "attn_layers": None,
        "attn_depth": None,
        "hidden_dim": None,
        "num_layers": None,
        "layers_used": None,
        "learning_rate": None,
        "iterations": None,
        "validate_every": None,
        "eval_tasks": None,
        "tasks_per_iteration": None,
        "val_tasks": None,
        "num_substructures": None,
        "workers": None,
        "holdout_per_class": None,
        "degree_cap": None,
        "log_every": None,
        "learn_eps": False,
        "epsilon_floor": False,
        "no_l2": False,
        "no_progress": True,
        "out": None,
    }
    defaults.update(overrides)
    return Namespace(**defaults)


def make_eval_args(**overrides):
    """Namespace shaped like `structshot eval` arguments."""
    defaults = {
        "checkpoint": None,
        "dataset": None,
        "split": "test",
        "tasks": None,
        "seed": None,
        "workers": None,
        "no_progress": True,
        "out": None,
    }
    defaults.update(overrides)
    return Namespace(**defaults)


@pytest.fixture(autouse=True)
def reset_logging():
    """Drop handlers the CLI attached so each test starts unconfigured."""
    yield
    logger = logging.getLogger("structshot")
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()
    logger.setLevel(logging.NOTSET)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def triangle():
    return make_graph("triangle", 3, [(0, 1), (1, 2), (0, 2)], label=1)


@pytest.fixture
def square():
    return make_graph("square", 4, [(0, 1), (1, 2), (2, 3), (3, 0)], label=0)


@pytest.fixture
def toy_graph():
    """4-node graph: a triangle with a pendant node, split into two substructures."""
    return make_graph(
        "toy", 4, [(0, 1), (1, 2), (0, 2), (2, 3)], label=1, substructures=[[0, 1], [2, 3]]
    )


@pytest.fixture(scope="session")
def small_dataset() -> DatasetSplit:
    """Five triangle classes, 12 graphs each: classes 1-3 train, 4-5 test."""
    return generate_triangles_dataset(
        num_classes=5,
        graphs_per_class=12,
        node_range=(6, 12),
        edge_prob=0.3,
        seed=3,
        train_classes=3,
    )


@pytest.fixture
def dataset_file(tmp_path, small_dataset):
    path = tmp_path / "triangles.jsonl"
    write_dataset(small_dataset, path)
    return path


@pytest.fixture
def tiny_config(dataset_file) -> RunConfig:
    """A run small enough to train in seconds."""
    return RunConfig(
        dataset=str(dataset_file),
        variant="g",
        global_attn="learned",
        n=2,
        k=2,
        q=2,
        hidden_dim=8,
        num_layers=2,
        iterations=4,
        validate_every=2,
        val_tasks=4,
        eval_tasks=6,
        log_every=2,
        progress=False,
    )
