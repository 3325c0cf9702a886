#!/usr/bin/env python3
"""
Create sample score files for mcalib
Generates small synthetic calibration/test splits from an overconfident model
"""

import sys
from pathlib import Path

import numpy as np
import pandas as pd

# Add repository root to path
sys.path.insert(0, str(Path(__file__).parent.parent))
from core_data import softmax_rows

N_CLASSES = 5
SHARPEN = 2.5  # the model reports softmax(SHARPEN * z) while labels follow softmax(z)


def create_split(n, seed):
    """Return (logits, labels) for one split; labels are 1-based"""
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(n, N_CLASSES)) + rng.normal(size=N_CLASSES)
    truth = softmax_rows(z).values
    labels = np.array([rng.choice(N_CLASSES, p=row) for row in truth]) + 1
    return SHARPEN * z, labels


def probs_frame(logits, labels):
    df = pd.DataFrame(softmax_rows(logits).values, columns=[f"p_{l + 1}" for l in range(N_CLASSES)])
    df["label"] = labels
    return df


def logits_frame(logits, labels):
    df = pd.DataFrame(logits, columns=[f"logit_{l + 1}" for l in range(N_CLASSES)])
    df["label"] = labels
    return df


def main():
    """Generate sample CSV files"""
    script_dir = Path(__file__).parent

    for name, n, seed in (("calibration", 5000, 1), ("test", 5000, 2)):
        logits, labels = create_split(n, seed)

        probs_path = script_dir / f"sample_{name}.csv"
        probs_frame(logits, labels).to_csv(probs_path, index=False)
        print(f"Created: {probs_path}")

        logits_path = script_dir / f"sample_{name}_logits.csv"
        logits_frame(logits, labels).to_csv(logits_path, index=False)
        print(f"Created: {logits_path}")

    print("Sample data files created successfully!")


if __name__ == "__main__":
    main()
