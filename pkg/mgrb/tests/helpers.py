"""Small experiment configs that finish in a second or two"""

import copy

TINY_CONFIG = {
    "name": "tiny",
    "seed": 7,
    "split": {"n": 2, "m": 2},
    "dataset": {
        "source": "synthetic",
        "synthetic": {
            "coarse_groups": 2,
            "fine_per_group": 3,
            "dim": 8,
            "train_counts": [40, 20],
            "test_per_class": 10,
        },
    },
    "memory": {"mode": "per_class", "size": 5},
    "network": {"hidden_sizes": [16]},
    "train": {"learning_rate": 0.05, "epochs": 3, "batch_size": 16},
    "retrain": {"learning_rate": 0.01, "epochs": 2, "batch_size": 8},
    "weights": {"beta": 5.0},
    "k": 2,
}


def tiny_config(**changes) -> dict:
    config = copy.deepcopy(TINY_CONFIG)
    config.update(changes)
    return config
