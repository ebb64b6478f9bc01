"""Builtin experiment configurations.

The fixed 3D study uses the spectrum 0.5*(sqrt(3)/2 +/- 0.5i) together with a
real eigenvalue of 0.8, observed either linearly or through the mildly
nonlinear coupled-quadratic map; sweeps walk the geometry knobs or the real
eigenvalue.  Smoke variants shrink the trial budget and coarsen the density
grid so the full pipeline runs in seconds.
"""

from __future__ import annotations

import math

STANDARD_PAIR = [0.43301270189221935, 0.25]  # 0.5 * (sqrt(3)/2 +/- 0.5i)
STANDARD_REAL = 0.8

THETA_SWEEP = [0.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.52, 1.53, 1.560]
PHI_SWEEP = [0.0, 0.79, math.pi / 2]
S_SWEEP = [0.1, 0.5, 1.0]
REAL_EIG_SWEEP = [0.01, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]

DATASET_SHAPES = [[50, 2], [10, 10], [2, 50]]

# Slightly perturbed copy of the order-2 lifted spectrum of the standard 3D
# system; every perturbation is below 0.01, which breaks all multiplicative
# relations among the eigenvalues.
NONRESONANT_9D_PAIRS = [
    [0.12968323896283715, 0.2162178989926427],
    [0.3476690850520712, 0.2020128612495012],
    [0.42838777905872627, 0.25039291816475817],
]
NONRESONANT_9D_REALS = [0.2589633265742217, 0.6451994172623488, 0.7941216805845859]

# Two slow oscillatory pairs plus one real mode; values are a configuration
# choice, not measured ground truth.
LEGGED_5D_PAIRS = [[0.43301270189221935, 0.25], [0.9310912882206415, 0.18880135717381437]]
LEGGED_5D_REALS = [0.8]


def _standard_system(**overrides) -> dict:
    system = {
        "pairs": [STANDARD_PAIR],
        "reals": [STANDARD_REAL],
        "theta": 0.0,
        "phi": 0.0,
        "s": 1.0,
    }
    if "real_sweep" in overrides:
        system.pop("reals")
    system.update(overrides)
    return system


def _order_keys(order: int) -> dict:
    if order == 1:
        return {"observable": "linear", "lifting_order": 1}
    return {"observable": "coupled-quadratic", "lifting_order": 2}


def _cond_sweep(order: int) -> dict:
    return {
        "name": f"paper-cond-sweep-order{order}",
        "system": _standard_system(theta=THETA_SWEEP, phi=PHI_SWEEP, s=S_SWEEP),
        "dataset_shapes": DATASET_SHAPES,
        "noise": {"system_sigma": 0.05, "measurement_sigma": 0.05},
        "algorithms": ["exact"],
        **_order_keys(order),
    }


def _eig_sweep(order: int) -> dict:
    return {
        "name": f"paper-eig-sweep-order{order}",
        "system": _standard_system(real_sweep=REAL_EIG_SWEEP),
        "dataset_shapes": DATASET_SHAPES,
        "noise": {"system_sigma": 0.05, "measurement_sigma": 0.05},
        "algorithms": ["exact"],
        **_order_keys(order),
    }


def _algorithms_comparison(order: int, theta: float, s: float, label: str) -> dict:
    return {
        "name": f"paper-algorithms-{label}-order{order}",
        "system": _standard_system(theta=theta, s=s),
        "dataset_shapes": DATASET_SHAPES,
        "noise": {"system_sigma": 0.05, "measurement_sigma": 0.05},
        "algorithms": ["exact", "fb", "tls", "opt"],
        **_order_keys(order),
    }


_SMOKE_GRID = {
    "re_range": [-1.1, 1.1],
    "im_range": [-1.1, 1.1],
    "resolution": 0.05,
    "sigma": 0.01,
}

BUILTIN_CONFIGS: dict[str, dict] = {
    "paper-cond-sweep-order1": _cond_sweep(1),
    "paper-cond-sweep-order2": _cond_sweep(2),
    "paper-eig-sweep-order1": _eig_sweep(1),
    "paper-eig-sweep-order2": _eig_sweep(2),
    "paper-algorithms-normal-order1": _algorithms_comparison(1, 0.0, 1.0, "normal"),
    "paper-algorithms-normal-order2": _algorithms_comparison(2, 0.0, 1.0, "normal"),
    "paper-algorithms-nonnormal-order1": _algorithms_comparison(1, 1.4, 0.1, "nonnormal"),
    "paper-algorithms-nonnormal-order2": _algorithms_comparison(2, 1.4, 0.1, "nonnormal"),
    "nonresonant-9d": {
        "name": "nonresonant-9d",
        "system": {
            "pairs": NONRESONANT_9D_PAIRS,
            "reals": NONRESONANT_9D_REALS,
        },
        "observable": "linear",
        "lifting_order": 1,
        "dataset_shapes": DATASET_SHAPES,
        "noise": {"system_sigma": 0.05, "measurement_sigma": 0.05},
        "algorithms": ["exact"],
    },
    "legged-5d": {
        "name": "legged-5d",
        "system": {"pairs": LEGGED_5D_PAIRS, "reals": LEGGED_5D_REALS},
        "observable": "linear",
        "lifting_order": 1,
        "dataset_shapes": DATASET_SHAPES,
        "noise": {"system_sigma": 0.05, "measurement_sigma": 0.05},
        "algorithms": ["exact", "fb", "tls", "opt"],
    },
    "smoke-noiseless": {
        "name": "smoke-noiseless",
        "system": _standard_system(),
        "observable": "linear",
        "lifting_order": 1,
        "dataset_shapes": [[10, 10]],
        "noise": {"system_sigma": 0.0, "measurement_sigma": 0.0},
        "algorithms": ["exact"],
        "batch_size": 40,
        "kl_threshold": 0.001,
        "max_batches": 5,
        "grid": _SMOKE_GRID,
    },
    "smoke-noisy": {
        "name": "smoke-noisy",
        "system": _standard_system(theta=[0.0, 1.2]),
        "observable": "linear",
        "lifting_order": 1,
        "dataset_shapes": [[10, 10], [2, 50]],
        "noise": {"system_sigma": 0.05, "measurement_sigma": 0.05},
        "algorithms": ["exact", "fb"],
        "batch_size": 60,
        "kl_threshold": 0.02,
        "max_batches": 8,
        "grid": _SMOKE_GRID,
    },
    "smoke-lifted": {
        "name": "smoke-lifted",
        "system": _standard_system(),
        "observable": "coupled-quadratic",
        "lifting_order": 2,
        "dataset_shapes": [[10, 10]],
        "noise": {"system_sigma": 0.05, "measurement_sigma": 0.05},
        "algorithms": ["exact"],
        "batch_size": 60,
        "kl_threshold": 0.02,
        "max_batches": 8,
        "grid": _SMOKE_GRID,
    },
}

# The order-1 variants answer to the plain sweep names as well.
BUILTIN_CONFIGS["paper-cond-sweep"] = dict(
    BUILTIN_CONFIGS["paper-cond-sweep-order1"], name="paper-cond-sweep"
)
BUILTIN_CONFIGS["paper-eig-sweep"] = dict(
    BUILTIN_CONFIGS["paper-eig-sweep-order1"], name="paper-eig-sweep"
)
