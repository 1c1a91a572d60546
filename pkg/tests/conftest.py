"""Shared fixtures: a tiny corpus/model pair for fast unit tests and a
desk-scale corpus/checkpoint/featurizer trio for the acceptance suite.

Desk-scale artifacts are cached under tests/_cache keyed by their full build
configuration, so the first run pays for training once and later runs reuse
the exact same bits.
"""

import dataclasses
from pathlib import Path

import pytest
import torch

torch.set_num_threads(1)

from restain.data import default_domains, generate_synthetic_corpus, load_corpus
from restain.metrics import load_featurizer, save_featurizer, train_featurizer
from restain.train import (
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    train_conditional_denoiser,
)
from restain.utils import fingerprint_json, sha256_file

CACHE_DIR = Path(__file__).resolve().parent / "_cache"

CORPUS_SAMPLES = 120
CORPUS_IMAGE_SIZE = 64
CORPUS_N_DOMAINS = 4
CORPUS_SEED = 0
CORPUS_TEST_FRACTION = 1.0 / 6.0  # 20 held-out samples

ACCEPT_TRAIN = TrainConfig(total_steps=100, iterations=8000, batch_size=8, seed=0, log_every=1000)
FEATURIZER_SEED = 0


def build_desk_corpus():
    root = CACHE_DIR / "corpus-desk"
    if not (root / "manifest.json").exists():
        generate_synthetic_corpus(
            root,
            CORPUS_SAMPLES,
            domains=default_domains()[:CORPUS_N_DOMAINS],
            image_size=CORPUS_IMAGE_SIZE,
            seed=CORPUS_SEED,
            test_fraction=CORPUS_TEST_FRACTION,
        )
    return load_corpus(root)


def desk_checkpoint_path(corpus) -> Path:
    key = fingerprint_json(
        {
            "train": dataclasses.asdict(ACCEPT_TRAIN),
            "corpus": sha256_file(corpus.root / "manifest.json"),
        }
    )[:16]
    return CACHE_DIR / f"denoiser-{key}.pt"


def build_desk_checkpoint(corpus) -> Path:
    path = desk_checkpoint_path(corpus)
    if not path.exists():
        model, history, aux = train_conditional_denoiser(corpus, ACCEPT_TRAIN, progress=True)
        save_checkpoint(path, model, ACCEPT_TRAIN, history, aux)
    return path


def build_desk_featurizer(corpus) -> Path:
    key = fingerprint_json(
        {"corpus": sha256_file(corpus.root / "manifest.json"), "seed": FEATURIZER_SEED}
    )[:16]
    path = CACHE_DIR / f"featurizer-{key}.pt"
    if not path.exists():
        net, accuracy = train_featurizer(corpus, seed=FEATURIZER_SEED)
        save_featurizer(path, net, accuracy)
    return path


@pytest.fixture(scope="session")
def desk_corpus():
    return build_desk_corpus()


@pytest.fixture(scope="session")
def desk_checkpoint(desk_corpus):
    """Path to the trained desk-scale checkpoint (trains on first use)."""
    return build_desk_checkpoint(desk_corpus)


@pytest.fixture(scope="session")
def desk_model(desk_checkpoint):
    model, config, history = load_checkpoint(desk_checkpoint)
    return model


@pytest.fixture(scope="session")
def desk_featurizer(desk_corpus):
    path = build_desk_featurizer(desk_corpus)
    net, accuracy = load_featurizer(path)
    return net


# ---------------------------------------------------------------------------
# tiny fixtures for fast unit tests


TINY_TRAIN = TrainConfig(
    total_steps=8, iterations=40, batch_size=4, seed=11, log_every=20, base=8, mults=(1, 2), emb_dim=32
)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny-corpus")
    generate_synthetic_corpus(
        root, 8, domains=default_domains()[:2], image_size=24, seed=11, test_fraction=0.25
    )
    return load_corpus(root)


@pytest.fixture(scope="session")
def tiny_model(tiny_corpus):
    model, history, aux = train_conditional_denoiser(tiny_corpus, TINY_TRAIN)
    return model


@pytest.fixture(scope="session")
def small_four_domain_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny-corpus-4dom")
    generate_synthetic_corpus(
        root, 6, domains=default_domains(), image_size=24, seed=12, test_fraction=0.5
    )
    return load_corpus(root)
