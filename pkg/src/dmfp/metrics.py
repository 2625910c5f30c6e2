"""Classification metrics and the analysis tables."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np
from scipy import stats

from dmfp.data import MODALITIES, PrivacyLabel


def _bits(labels) -> np.ndarray:
    return np.array([l.bit if isinstance(l, PrivacyLabel) else int(bool(l)) for l in labels],
                    dtype=np.int64)


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


def _class_fractions(tp: int, fp: int, fn: int) -> tuple[Fraction, Fraction, Fraction]:
    # exact rationals, so each reported value is the correctly rounded float
    precision = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
    recall = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else Fraction(0)
    return precision, recall, f1


@dataclass
class EvalReport:
    private: ClassMetrics
    public: ClassMetrics
    accuracy: float  # percent
    macro: tuple[float, float, float]
    weighted: tuple[float, float, float]
    n: int
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "private": asdict(self.private),
            "public": asdict(self.public),
            "accuracy": self.accuracy,
            "macro": dict(zip(("precision", "recall", "f1"), self.macro)),
            "weighted": dict(zip(("precision", "recall", "f1"), self.weighted)),
            "n": self.n,
            "metadata": self.metadata,
        }

    def flat(self) -> dict[str, float]:
        """Scalar metrics keyed by name, for averaging across runs."""
        out = {}
        for cls, cm in (("private", self.private), ("public", self.public)):
            for k in ("precision", "recall", "f1"):
                out[f"{cls}_{k}"] = getattr(cm, k)
        out["accuracy"] = self.accuracy
        for kind, vals in (("macro", self.macro), ("weighted", self.weighted)):
            for k, v in zip(("precision", "recall", "f1"), vals):
                out[f"{kind}_{k}"] = v
        return out


def confusion_metrics(preds, golds, metadata: dict | None = None) -> EvalReport:
    p, g = _bits(preds), _bits(golds)
    if len(p) != len(g):
        raise ValueError(f"{len(p)} predictions for {len(g)} gold labels")
    if len(p) == 0:
        raise ValueError("cannot score an empty prediction list")
    tp = int(np.sum((p == 1) & (g == 1)))
    tn = int(np.sum((p == 0) & (g == 0)))
    fp = int(np.sum((p == 1) & (g == 0)))
    fn = int(np.sum((p == 0) & (g == 1)))
    priv = _class_fractions(tp, fp, fn)
    pub = _class_fractions(tn, fn, fp)
    n_priv, n_pub, n = tp + fn, tn + fp, len(p)
    macro = tuple(float((a + b) / 2) for a, b in zip(priv, pub))
    weighted = tuple(float((a * n_priv + b * n_pub) / n) for a, b in zip(priv, pub))
    return EvalReport(ClassMetrics(*map(float, priv), n_priv), ClassMetrics(*map(float, pub), n_pub),
                      float(Fraction(100 * (tp + tn), n)), macro, weighted, n, dict(metadata or {}))


@dataclass
class AnalysisTable:
    """Rows of (label, private %, public %, overall %)."""

    title: str
    rows: list[tuple[str, float, float, float]]
    columns: tuple[str, str, str] = ("Pr(%)", "Pu(%)", "O(%)")

    def row(self, name: str) -> tuple[float, float, float]:
        for r in self.rows:
            if r[0] == name:
                return r[1:]
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"title": self.title, "columns": list(self.columns),
                "rows": [{"name": r[0], **dict(zip(self.columns, r[1:]))} for r in self.rows]}

    def format(self) -> str:
        width = max(len(r[0]) for r in self.rows) + 2
        lines = [self.title, " " * width + "".join(f"{c:>9}" for c in self.columns)]
        for name, *vals in self.rows:
            lines.append(f"{name:<{width}}" + "".join(
                f"{'-':>9}" if math.isnan(v) else f"{v:>9.1f}" for v in vals))
        return "\n".join(lines) + "\n"


def _rates(cond: np.ndarray, g: np.ndarray) -> tuple[float, float, float]:
    def pct(mask):
        return 100.0 * float(cond[mask].mean()) if mask.any() else math.nan
    return pct(g == 1), pct(g == 0), pct(np.ones_like(g, dtype=bool))


def exploratory_analysis(per_modality_preds: dict, golds) -> AnalysisTable:
    """Correctness rates per modality and for all/none/any of them."""
    g = _bits(golds)
    correct = {}
    rows = []
    for m in MODALITIES:
        if m not in per_modality_preds:
            continue
        c = _bits(per_modality_preds[m]) == g
        correct[m] = c
        rows.append((f"{m.value.capitalize()} is correct", *_rates(c, g)))
    stack = np.vstack(list(correct.values()))
    rows.append(("All are correct", *_rates(stack.all(0), g)))
    wrong = _rates(~stack.any(0), g)
    rows.append(("All are wrong", *wrong))
    rows.append(("At least one modality is correct", *(100.0 - w for w in wrong)))
    return AnalysisTable("Exploratory analysis", rows)


def error_correction(base_preds: dict, system_preds, golds) -> AnalysisTable:
    """Share of each base classifier's errors that the system gets right.

    Per class the denominator is the base classifier's errors on that class;
    NaN where it made none.
    """
    g = _bits(golds)
    s_ok = _bits(system_preds) == g
    rows = []
    for m, preds in base_preds.items():
        wrong = _bits(preds) != g
        name = m.value.capitalize() if hasattr(m, "value") else str(m)
        vals = []
        for mask in (wrong & (g == 1), wrong & (g == 0), wrong):
            vals.append(100.0 * float(s_ok[mask].mean()) if mask.any() else math.nan)
        rows.append((name, *vals))
    return AnalysisTable("Errors corrected (%)", rows)


def paired_t_test(a, b) -> tuple[float, float]:
    """Two-sided paired t statistic and p-value for per-run scores."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    n = len(d)
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    mean, sd = float(d.mean()), float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, mean), 0.0
    t = mean / (sd / math.sqrt(n))
    return t, float(2.0 * stats.t.sf(abs(t), n - 1))


def format_metrics_table(reports: dict[str, EvalReport], title: str = "") -> str:
    """Aligned table in the Private / Public / Overall layout."""
    head = ("", "P-prec", "P-rec", "P-F1", "Pu-prec", "Pu-rec", "Pu-F1", "Acc(%)",
            "M-prec", "M-rec", "M-F1", "W-prec", "W-rec", "W-F1")
    width = max([len(k) for k in reports] + [8]) + 2
    lines = [title] if title else []
    lines.append(f"{head[0]:<{width}}" + "".join(f"{h:>9}" for h in head[1:]))
    for name, r in reports.items():
        vals = [r.private.precision, r.private.recall, r.private.f1,
                r.public.precision, r.public.recall, r.public.f1]
        cells = [f"{v:>9.3f}" for v in vals] + [f"{r.accuracy:>9.2f}"]
        cells += [f"{v:>9.3f}" for v in (*r.macro, *r.weighted)]
        lines.append(f"{name:<{width}}" + "".join(cells))
    lines.append("M = macro (unweighted class mean), W = support-weighted; "
                 "the source table's 'Overall' convention is not stated.")
    return "\n".join(lines) + "\n"
