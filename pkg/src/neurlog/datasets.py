"""Dataset ingestion and synthetic generators for the experiment harness.

The MNIST IDX loader reads the standard byte format.  When no IDX files are
available (NEURLOG_DATA_DIR unset or empty) the harness falls back to a
deterministic synthetic digit generator that renders glyph bitmaps with
jitter and noise at the same 28x28 resolution, so the whole pipeline runs
self-contained.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .learning import TrainExample, abstract_query
from .terms import Atom, Constant, NeurlogError, make_list


class DatasetError(NeurlogError):
    pass


class BadMagic(DatasetError):
    pass


class TruncatedFile(DatasetError):
    pass


class CountMismatch(DatasetError):
    pass


class NotEnoughItems(DatasetError):
    pass


@dataclass
class Dataset:
    """Named feature vectors plus train/valid/test example lists."""

    items: dict[str, np.ndarray]
    train: list[TrainExample] = field(default_factory=list)
    valid: list[TrainExample] = field(default_factory=list)
    test: list[TrainExample] = field(default_factory=list)
    meta: dict = field(default_factory=dict)


# --- MNIST IDX -------------------------------------------------------------------

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


def _open_maybe_gz(path: Union[str, Path]):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return path.open("rb")


def load_mnist_idx(images_path: Union[str, Path], labels_path: Union[str, Path]):
    """Read IDX image/label files into (vectors[n,784] in [0,1], labels[n])."""
    with _open_maybe_gz(images_path) as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise TruncatedFile(f"{images_path}: missing IDX header")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IMAGE_MAGIC:
            raise BadMagic(f"{images_path}: magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}")
        payload = fh.read(count * rows * cols)
        if len(payload) < count * rows * cols:
            raise TruncatedFile(f"{images_path}: expected {count * rows * cols} pixels")
        images = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows * cols)
    with _open_maybe_gz(labels_path) as fh:
        header = fh.read(8)
        if len(header) < 8:
            raise TruncatedFile(f"{labels_path}: missing IDX header")
        magic, label_count = struct.unpack(">II", header)
        if magic != LABEL_MAGIC:
            raise BadMagic(f"{labels_path}: magic {magic:#010x}, expected {LABEL_MAGIC:#010x}")
        payload = fh.read(label_count)
        if len(payload) < label_count:
            raise TruncatedFile(f"{labels_path}: expected {label_count} labels")
        labels = np.frombuffer(payload, dtype=np.uint8)
    if count != label_count:
        raise CountMismatch(f"{count} images but {label_count} labels")
    return images.astype(np.float64) / 255.0, labels.astype(np.int64)


def find_mnist(split: str = "train") -> Optional[tuple[Path, Path]]:
    """Locate IDX files under NEURLOG_DATA_DIR, if any."""
    root = os.environ.get("NEURLOG_DATA_DIR")
    if not root:
        return None
    root = Path(root)
    stem = "train" if split == "train" else "t10k"
    for suffix in ("", ".gz"):
        images = root / f"{stem}-images-idx3-ubyte{suffix}"
        labels = root / f"{stem}-labels-idx1-ubyte{suffix}"
        if images.exists() and labels.exists():
            return images, labels
    return None


# --- synthetic digits --------------------------------------------------------------

# 7x5 glyph bitmaps, upscaled to 28x28 with jitter and noise.
_GLYPHS = {
    0: ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    1: ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    2: ["01110", "10001", "00001", "00110", "01000", "10000", "11111"],
    3: ["11110", "00001", "00001", "01110", "00001", "00001", "11110"],
    4: ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    5: ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    6: ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    7: ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    8: ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    9: ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
}


def _glyph_image(digit: int) -> np.ndarray:
    bitmap = np.array([[int(c) for c in row] for row in _GLYPHS[digit]], dtype=np.float64)
    return np.kron(bitmap, np.ones((3, 3)))  # 21x15, leaves room for jitter


def synthetic_digits(count: int, seed: int = 0, noise: float = 0.25) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic MNIST-like digit images: (vectors[count,784], labels)."""
    rng = np.random.default_rng(seed)
    images = np.zeros((count, 28, 28))
    labels = rng.integers(0, 10, size=count)
    for i, digit in enumerate(labels):
        glyph = _glyph_image(int(digit))
        dy = int(rng.integers(-2, 3))
        dx = int(rng.integers(-2, 5))
        y0, x0 = 3 + dy, 5 + dx
        images[i, y0 : y0 + glyph.shape[0], x0 : x0 + glyph.shape[1]] = glyph
        images[i] += rng.normal(0.0, noise, size=(28, 28))
    return images.clip(0.0, 1.0).reshape(count, 784), labels.astype(np.int64)


def digit_items(vectors: np.ndarray, prefix: str = "img") -> dict[str, np.ndarray]:
    return {f"{prefix}{i}": vectors[i] for i in range(len(vectors))}


# --- pairwise addition examples ------------------------------------------------------


def make_pair_dataset(
    items: dict[str, np.ndarray],
    labels: Sequence[int],
    n: int,
    seed: int = 0,
    noise_fraction: float = 0.0,
    predicate: str = "addition",
) -> list[TrainExample]:
    """Disjoint image pairs labeled with the digit sum; with noise fraction f,
    that share of labels is replaced by a uniform draw from 0..18."""
    keys = list(items)
    if n > len(keys) // 2:
        raise NotEnoughItems(f"need {2 * n} items for {n} pairs, have {len(keys)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(keys))
    examples = []
    key_set = set(keys)
    for i in range(n):
        a, b = keys[order[2 * i]], keys[order[2 * i + 1]]
        total = int(labels[order[2 * i]] + labels[order[2 * i + 1]])
        noisy = bool(rng.random() < noise_fraction)
        if noisy:
            total = int(rng.integers(0, 19))
        query = Atom(predicate, (Constant(a), Constant(b), Constant(total)))
        template = abstract_query(query, key_set)
        examples.append(
            TrainExample(
                template.query,
                target=1.0,
                bindings=template.bindings,
                meta={"sum": total, "noisy": noisy},
            )
        )
    return examples


# --- program-sketch datasets (symbolic inputs) ----------------------------------------


def make_forth_addition_examples(n: int, length: int, seed: int = 0) -> list[TrainExample]:
    rng = np.random.default_rng(seed)
    examples = []
    for _ in range(n):
        d1 = [int(x) for x in rng.integers(0, 10, size=length)]
        d2 = [int(x) for x in rng.integers(0, 10, size=length)]
        carry_in = int(rng.integers(0, 2))
        n1 = int("".join(map(str, d1)))
        n2 = int("".join(map(str, d2)))
        total = n1 + n2 + carry_in
        digits = [int(c) for c in str(total).zfill(length + 1)]
        query = Atom(
            "forth_addition",
            (
                make_list([Constant(d) for d in d1]),
                make_list([Constant(d) for d in d2]),
                Constant(carry_in),
                make_list([Constant(d) for d in digits]),
            ),
        )
        examples.append(TrainExample(query, meta={"length": length}))
    return examples


def make_forth_sort_examples(n: int, length: int, seed: int = 0, domain: int = 10) -> list[TrainExample]:
    rng = np.random.default_rng(seed)
    examples = []
    for _ in range(n):
        values = [int(x) for x in rng.integers(0, domain, size=length)]
        query = Atom(
            "forth_sort",
            (
                make_list([Constant(v) for v in values]),
                make_list([Constant(v) for v in sorted(values)]),
            ),
        )
        examples.append(TrainExample(query, meta={"length": length}))
    return examples


# --- synthetic poker ------------------------------------------------------------------

RANKS = ("jack", "queen", "king", "ace")
HOUSE_DISTRIBUTION = (0.2, 0.4, 0.15, 0.25)

# Fixed 8-dimensional prototypes, one per rank.
CARD_PROTOTYPES = {
    "jack": np.array([1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
    "queen": np.array([0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0]),
    "king": np.array([0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]),
    "ace": np.array([1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]),
}


def poker_hand_rank(cards: Sequence[str]) -> int:
    """Best hand rank of three cards under the simplified rules: high card,
    pair, three of a kind, low straight (J,Q,K), high straight (Q,K,A)."""
    order = {r: i for i, r in enumerate(RANKS)}
    counts = {r: cards.count(r) for r in set(cards)}
    best = -1
    if {"queen", "king", "ace"} <= set(cards):
        best = 13
    elif {"jack", "queen", "king"} <= set(cards):
        best = 12
    for rank, count in counts.items():
        if count >= 3:
            best = max(best, 8 + order[rank])
        elif count >= 2:
            best = max(best, 4 + order[rank])
        best = max(best, order[rank])
    return best


def poker_outcome(player1: tuple[str, str], player2: tuple[str, str], house: str) -> str:
    r1 = poker_hand_rank([*player1, house])
    r2 = poker_hand_rank([*player2, house])
    if r1 > r2:
        return "win"
    if r1 < r2:
        return "loss"
    return "draw"


def poker_outcome_marginal(
    player1: tuple[str, str], player2: tuple[str, str], house_dist: Sequence[float] = HOUSE_DISTRIBUTION
) -> dict[str, float]:
    """Outcome distribution marginalized over the community card."""
    out = {"win": 0.0, "loss": 0.0, "draw": 0.0}
    for rank, p in zip(RANKS, house_dist):
        out[poker_outcome(player1, player2, rank)] += p
    return out


def make_synthetic_cards(
    n: int,
    seed: int = 0,
    distribution: Sequence[float] = (0.25, 0.25, 0.25, 0.25),
    house_distribution: Sequence[float] = HOUSE_DISTRIBUTION,
    sigma: float = 0.1,
    labeled_fraction: float = 0.1,
) -> Dataset:
    """Games of two two-card hands plus a community card drawn from the house
    distribution.  Each example is a game/2 query labeled with the exact
    outcome marginal; a fraction carries the community card as extra
    supervision (game/3, target 1)."""
    if abs(sum(distribution) - 1.0) > 1e-9:
        raise DatasetError("player card distribution must sum to 1")
    rng = np.random.default_rng(seed)
    items: dict[str, np.ndarray] = {}
    examples: list[TrainExample] = []
    for g in range(n):
        ranks = [RANKS[i] for i in rng.choice(4, size=4, p=np.asarray(distribution))]
        house = RANKS[int(rng.choice(4, p=np.asarray(house_distribution)))]
        keys = []
        for c, rank in enumerate(ranks):
            key = f"card{g}_{c}"
            items[key] = CARD_PROTOTYPES[rank] + rng.normal(0.0, sigma, size=8)
            keys.append(key)
        player1, player2 = (ranks[0], ranks[1]), (ranks[2], ranks[3])
        outcome = poker_outcome(player1, player2, house)
        labeled = bool(rng.random() < labeled_fraction)
        card_list = make_list([Constant(k) for k in keys])
        if labeled:
            query = Atom("game", (card_list, Constant(house), Constant(outcome)))
            target = 1.0
        else:
            query = Atom("game", (card_list, Constant(outcome)))
            target = poker_outcome_marginal(player1, player2, house_distribution)[outcome]
        template = abstract_query(query, set(keys))
        examples.append(
            TrainExample(
                template.query,
                target=target,
                bindings=template.bindings,
                meta={"ranks": ranks, "house": house, "outcome": outcome, "labeled": labeled},
            )
        )
    dataset = Dataset(items=items, train=examples)
    dataset.meta["house_distribution"] = tuple(house_distribution)
    return dataset
