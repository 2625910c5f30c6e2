"""Small constructed datasets shared by several test modules."""

import math

import numpy as np

from dmfp.data import MODALITIES, FeatureRecord, LabeledDataset, PrivacyLabel
from dmfp.linear import CalibratedClassifier, LinearModel, LossKind, PlattSigmoid


def reading_classifier(modality, dim=2):
    """Classifier whose private posterior is sigmoid of the block's first entry."""
    w = np.zeros(dim)
    w[0] = 1.0
    return CalibratedClassifier(((LinearModel(w, 0.0, LossKind.HINGE), PlattSigmoid(-1.0, 0.0)),), modality)


def region_world(n, seed=0, prefix="w", right_rate=(0.97, 0.03)):
    """Two regions far apart in feature space.

    Blocks are [logit, position]. The object classifier is right with
    probability right_rate[0] in region 0 and right_rate[1] in region 1;
    scene and tag are right half the time everywhere. Returns the dataset,
    the reading classifiers and the region of every record.
    """
    rng = np.random.default_rng(seed)
    region = rng.integers(0, 2, n)
    y = (rng.random(n) < 0.25).astype(int)
    recs = []
    for i in range(n):
        blocks = {}
        for j, m in enumerate(MODALITIES):
            rate = right_rate[region[i]] if j == 0 else 0.5
            right = rng.random() < rate
            says_private = right == (y[i] == 1)
            logit = (1.0 if says_private else -1.0) * (0.5 + rng.random())
            pos = (20.0 if region[i] == j % 2 else 0.0) + rng.standard_normal()
            blocks[m] = np.array([logit, pos])
        recs.append(FeatureRecord(f"{prefix}{i:05d}", blocks, PrivacyLabel.from_bit(y[i])))
    ds = LabeledDataset(tuple(recs), {m: 2 for m in MODALITIES})
    base = {m: reading_classifier(m) for m in MODALITIES}
    return ds, base, region


def logit(p):
    return math.log(p / (1 - p))
