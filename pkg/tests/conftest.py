import numpy as np
import pytest

from dmfp.data import MODALITIES, FeatureRecord, LabeledDataset, PrivacyLabel, SplitSpec, split_dataset
from dmfp.linear import TrainConfig, train_calibrated
from dmfp.synth import SynthConfig, generate


def random_dataset(n, dims=(3, 2, 2), seed=0, private_rate=0.25, prefix="r"):
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        blocks = {m: rng.standard_normal(d) for m, d in zip(MODALITIES, dims)}
        label = PrivacyLabel.from_bit(rng.random() < private_rate)
        records.append(FeatureRecord(f"{prefix}{i:04d}", blocks, label))
    return LabeledDataset(tuple(records), dict(zip(MODALITIES, dims)))


@pytest.fixture(scope="session")
def small_world():
    """A 900-record synthetic split with trained base classifiers."""
    ds, truth = generate(SynthConfig(n=900, seed=3))
    train, estimate, test = split_dataset(ds, SplitSpec(seed=1))
    base = {m: train_calibrated(train.matrix(m), train.labels, TrainConfig(), m) for m in MODALITIES}
    return {"ds": ds, "truth": truth, "train": train, "estimate": estimate, "test": test, "base": base}


# -- acceptance summary -------------------------------------------------------

_ACCEPTANCE = []


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE.append((props["criterion"], report.passed, props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(_ACCEPTANCE, key=lambda r: int(r[0].split(".")[0])):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  [{detail}]" if detail else ""))
