from simulation.config import default_config
from simulation.corpus import AnnotatedDocument, DatasetSplit

SMALL_SECTIONS = {
    "experiment": {"step_size": 10, "budget": 30, "initial_ratio": 0.05, "seeds": [42, 4711]},
    "trainer": {"epochs_per_step": 3, "learning_rate": 0.5},
}


def make_config(source_path, revision="test", **sections):
    merged = {name: dict(values) for name, values in SMALL_SECTIONS.items()}
    for name, values in sections.items():
        merged.setdefault(name, {}).update(values)
    return default_config(str(source_path), revision, **merged)


def make_split(train, dev=(), test=(), label_names=("neg", "pos")):
    """Build a split from ``(text, label_index)`` pairs with dense global ids."""
    next_id = 0
    splits = {}
    for name, rows in (("train", train), ("dev", dev), ("test", test)):
        docs = []
        for text, label in rows:
            docs.append(AnnotatedDocument(next_id, text, label))
            next_id += 1
        splits[name] = tuple(docs)
    return DatasetSplit(label_names=tuple(label_names), **splits)
