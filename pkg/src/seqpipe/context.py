"""Embeddings for prompts and arm descriptions, and the per-arm context."""

import hashlib
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._validation import check_positive_int, check_vector


class ArmId(NamedTuple):
    subtask: int
    arm: int


@dataclass
class ArmDescription:
    arm: ArmId
    text_tag: str
    embedding: np.ndarray


def _tag_seed(tag):
    return int.from_bytes(hashlib.sha256(tag.encode("utf-8")).digest()[:8], "little")


def synth_embedding(tag, d, seed):
    """Deterministic unit-norm stand-in for a sentence embedding of ``tag``."""
    if not isinstance(tag, str) or not tag:
        raise ValueError("tag must be a non-empty string")
    d = check_positive_int(d, "d")
    rng = np.random.default_rng([int(seed) & (2**64 - 1), _tag_seed(tag)])
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def make_context(prompt, desc):
    """Elementwise product of a prompt embedding and a description embedding."""
    prompt = check_vector(prompt, name="prompt")
    desc = check_vector(desc, prompt.shape[0], name="description")
    return prompt * desc


def unit(v):
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("cannot normalise the zero vector")
    return v / norm
