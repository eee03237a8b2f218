"""Planted-keyword corpora for smoke runs and tests.

Each label owns a set of keywords; a document carries a few keywords of its
own label, a fixed share of distractor words that carry no label signal, and
filler words shared by all labels.
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_LABELS = ("negative", "positive")


def planted_documents(
    count: int,
    rng: np.random.Generator,
    label_names: Sequence[str] = DEFAULT_LABELS,
    keywords_per_label: int = 30,
    keywords_per_document: Sequence[int] = (1, 3),
    length: int = 20,
    distractor_share: float = 0.2,
    filler_vocabulary: int = 200,
    distractor_vocabulary: int = 50,
) -> List[Dict[str, str]]:
    keywords = {label: [f"{label}{i:02d}" for i in range(keywords_per_label)] for label in label_names}
    fillers = [f"filler{i:03d}" for i in range(filler_vocabulary)]
    distractors = [f"noise{i:02d}" for i in range(distractor_vocabulary)]
    distractor_count = int(round(distractor_share * length))
    low, high = keywords_per_document

    rows = []
    for _ in range(count):
        label = label_names[int(rng.integers(len(label_names)))]
        planted = int(rng.integers(low, high + 1))
        words = list(rng.choice(keywords[label], size=planted))
        words += list(rng.choice(distractors, size=distractor_count))
        words += list(rng.choice(fillers, size=max(length - planted - distractor_count, 0)))
        rng.shuffle(words)
        rows.append({"text": " ".join(words), "label": label})
    return rows


def write_jsonl(rows: Sequence[Dict], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False) + "\n")
    return path


def write_planted_corpus(
    out_dir: Union[str, Path], train: int = 2000, dev: int = 500, test: int = 500, seed: int = 0, **options
) -> Path:
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    for name, count in (("train", train), ("dev", dev), ("test", test)):
        write_jsonl(planted_documents(count, rng, **options), out_dir / f"{name}.jsonl")
    logger.info("wrote planted corpus %d/%d/%d to %s", train, dev, test, out_dir)
    return out_dir
