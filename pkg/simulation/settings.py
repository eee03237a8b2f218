DEFAULT_SEEDS = [42, 4711, 768, 4656, 32213]

MIN_STEP_SIZE = 1
MIN_NGRAM_ORDER = 1
MAX_NGRAM_ORDER = 3
MAX_INCLUDE_DEPTH = 4
MAX_LLOYD_ITERATIONS = 100

SUPPORTED_METRICS = ("macro_f1",)
STORE_ENV_VAR = "ALSIM_STORE_DIR"


def get_default_config():
    return {
        "data": {
            "source_path": "",
            "text_field": "text",
            "label_field": "label",
            "spans_field": "labels",
            "train_file": "train.jsonl",
            "dev_file": "dev.jsonl",
            "test_file": "test.jsonl",
        },
        "experiment": {
            "step_size": 1000,
            "step_ratio": None,
            "initial_ratio": 0.05,
            "budget": 5000,
            "tracking_metric": "macro_f1",
            "seeds": list(DEFAULT_SEEDS),
            "max_steps": None,
            "stop_threshold": None,
        },
        "teacher": {
            "strategy": "random",
            "initial_strategy": "random",
            "k": None,
            "max_iterations": MAX_LLOYD_ITERATIONS,
        },
        "trainer": {
            "name": "softmax_sgd",
            "learning_rate": 1.0,
            "epochs_per_step": 20,
            "l2_penalty": 1e-4,
            "batch_size": 32,
            "ngram_order": 1,
            "vocabulary_cap": None,
            "warm_start": True,
        },
        "tracking": {
            "store_root": "runs",
            "worker_count": 1,
            "revision": "",
        },
    }
