"""Fairness reports: aggregation into table rows, four-fifths verdicts, mitigation comparisons, rendering."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import __version__
from .errors import ConfigError
from .evaluation import aggregate, mean_ci, wilcoxon_one_sided
from .fairness import four_fifths_verdict

SCHEMA_VERSION = 1
# report metric name -> key suffix in MetricSample.metric_values()
METRIC_KEYS = {"F1": "f1", "DPR": "dpr", "TPPR": "tppr", "FPRR": "fprr", "EOR": "eor", "EOD": "eod"}
VERDICT_METRICS = ("DPR", "EOR")
TEXT_METRICS = ("F1", "DPR", "EOR", "EOD")
LOWER_IS_BETTER = {"EOD"}


class ReportFormat(str, Enum):
    Text = "text"
    Json = "json"
    Csv = "csv"


@dataclass
class FairnessReport:
    provenance: dict
    rows: list = field(default_factory=list)  # one dict per (dataset, model, mitigation, attribute)
    comparisons: list = field(default_factory=list)
    samples: list = field(default_factory=list)

    def __post_init__(self):
        for key in ("tool_version", "config_hash", "master_seed"):
            if self.provenance.get(key) in (None, ""):
                raise ConfigError(f"report provenance field {key!r} is empty")

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "provenance": self.provenance,
            "rows": self.rows,
            "comparisons": self.comparisons,
            "samples": self.samples,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FairnessReport":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"unsupported report schema_version {d.get('schema_version')!r}")
        return cls(d["provenance"], list(d.get("rows", [])), list(d.get("comparisons", [])),
                   list(d.get("samples", [])))

    @classmethod
    def read(cls, path) -> "FairnessReport":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise ConfigError(f"cannot read report {path}: {exc}") from None


def _verdict(value):
    return None if value is None else four_fifths_verdict(value).value


def build_report(samples, *, dataset: str, model: str, mitigation: str, config_hash: str,
                 master_seed: int) -> FairnessReport:
    """Aggregate fold samples into one row per protected attribute."""
    provenance = {"tool_version": __version__, "config_hash": config_hash, "master_seed": int(master_seed)}
    if not samples:
        return FairnessReport(provenance)
    agg = aggregate(samples)
    attributes = sorted({a for s in samples for a in s.fairness})
    rows = []
    for attr in attributes:
        metrics, verdicts, excluded = {}, {}, {}
        for name, suffix in METRIC_KEYS.items():
            key = suffix if name == "F1" else f"{attr}.{suffix}"
            if key not in agg:
                continue  # metric not defined for this attribute
            a = agg[key]
            metrics[name] = a.to_dict()
            excluded[name] = a.n_excluded
            if name in VERDICT_METRICS:
                verdicts[name] = _verdict(a.mean)
        rows.append({"dataset": dataset, "model": model, "mitigation": mitigation, "attribute": attr,
                     "metrics": metrics, "verdicts": verdicts, "excluded": excluded})
    sample_dicts = [{"dataset": dataset, "model": model, "mitigation": mitigation, **s.to_dict()}
                    for s in samples]
    return FairnessReport(provenance, rows, [], sample_dicts)


def _sample_value(sample: dict, attr: str, metric: str):
    if metric == "F1":
        return sample["f1"]
    fr = sample["fairness"].get(attr)
    if fr is None:
        return None
    m = METRIC_KEYS[metric]
    if fr.get("degenerate_flags", {}).get(m):
        return None
    return fr.get(m)


PAIRINGS = ("fold", "dataset")


def _paired_values(before: FairnessReport, after: FairnessReport, pairing: str):
    """``{(dataset, attribute, metric): [(unit, before, after), ...]}`` over the shared units."""
    def index(rep):
        return {(s["dataset"], s["iteration"], s["fold"]): s for s in rep.samples}

    ib, ia = index(before), index(after)
    keys = sorted(set(ib) & set(ia))
    if not keys:
        raise ConfigError("the two result files share no (dataset, iteration, fold) samples")
    attributes = sorted(set.intersection(*({a for k in keys for a in idx[k]["fairness"]} for idx in (ib, ia))))
    out: dict = {}
    for attr in attributes:
        for metric in METRIC_KEYS:
            pairs = [(k, _sample_value(ib[k], attr, metric), _sample_value(ia[k], attr, metric)) for k in keys]
            pairs = [p for p in pairs if p[1] is not None and p[2] is not None]
            if pairing == "dataset":
                by_ds: dict = {}
                for k, b, a in pairs:
                    by_ds.setdefault(k[0], []).append((b, a))
                pairs = [((ds,), mean_ci([p[0] for p in v])[0], mean_ci([p[1] for p in v])[0])
                         for ds, v in sorted(by_ds.items())]
                if pairs:
                    out[("all", attr, metric)] = pairs
            else:
                for k, b, a in pairs:
                    out.setdefault((k[0], attr, metric), []).append((k, b, a))
    return out, ib[keys[0]], ia[keys[0]]


def compare_reports(before: FairnessReport, after: FairnessReport, pairing: str = "fold") -> FairnessReport:
    """Paired deltas and one-sided Wilcoxon tests of improvement, ``after`` against ``before``.

    ``fold`` pairing matches samples on (dataset, iteration, fold) and tests
    each dataset separately; ``dataset`` pairing averages each dataset's
    samples first and tests across datasets. Improvement means a larger value
    except for EOD, where it means a smaller one; ``delta`` is always the raw
    ``after - before`` mean.
    """
    if pairing not in PAIRINGS:
        raise ConfigError(f"pairing must be one of {PAIRINGS}")
    paired, sb, sa = _paired_values(before, after, pairing)
    rows = []
    for (ds, attr, metric), pairs in sorted(paired.items()):
        b = np.array([p[1] for p in pairs])
        a = np.array([p[2] for p in pairs])
        delta, hw = mean_ci((a - b).tolist())
        test = wilcoxon_one_sided(a, b) if metric in LOWER_IS_BETTER else wilcoxon_one_sided(b, a)
        rows.append({
            "dataset": ds, "model": sa.get("model", ""), "mitigation": sa.get("mitigation", "none"),
            "baseline": sb.get("mitigation", "none"), "pairing": pairing,
            "attribute": attr, "metric": metric, "n_pairs": len(pairs),
            "delta": delta, "delta_ci95_half_width": hw, "wilcoxon": test.to_dict(),
        })
    provenance = {
        "tool_version": __version__,
        "config_hash": f"{before.provenance['config_hash']}..{after.provenance['config_hash']}",
        "master_seed": after.provenance["master_seed"],
    }
    return FairnessReport(provenance, [], rows, [])


# --- rendering ---------------------------------------------------------------

def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _fmt(v, digits=3):
    return "n/a" if v is None else f"{v:.{digits}f}"


def _g6(v):
    return "" if v is None else format(v, ".6g")


def _text(report: FairnessReport) -> str:
    out = io.StringIO()
    p = report.provenance
    out.write(f"fogfair {p['tool_version']}  seed {p['master_seed']}  config {p['config_hash'][:16]}\n")
    if report.rows:
        header = ["dataset", "model", "mitigation", "attribute", *TEXT_METRICS]
        table = []
        for r in report.rows:
            cells = [r["dataset"], r["model"], r["mitigation"], r["attribute"]]
            for m in TEXT_METRICS:
                a = r["metrics"].get(m)
                if a is None:
                    cells.append("-")
                    continue
                cell = f"{_fmt(a['mean'])} ± {_fmt(a['ci95_half_width'])}"
                if m in r["verdicts"]:
                    cell += f" [{r['verdicts'][m] or 'Undefined'}]"
                if a["n_excluded"]:
                    cell += f" (excl {a['n_excluded']})"
                cells.append(cell)
            table.append(cells)
        out.write(_align(header, table))
    if report.comparisons:
        header = ["dataset", "mitigation", "attribute", "metric", "delta", "p", "method", "n"]
        table = [[c["dataset"], f"{c['baseline']} -> {c['mitigation']}", c["attribute"], c["metric"],
                  f"{c['delta']:+.3f} ± {_fmt(c['delta_ci95_half_width'])}", f"{c['wilcoxon']['p_value']:.4g}",
                  c["wilcoxon"]["method"], str(c["n_pairs"])] for c in report.comparisons]
        out.write(_align(header, table))
    if not report.rows and not report.comparisons:
        out.write("(no results)\n")
    return out.getvalue()


def _align(header, table) -> str:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *table)]
    lines = ["  ".join(str(x).ljust(w) for x, w in zip(row, widths)).rstrip() for row in [header, *table]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


CSV_HEADER = ["dataset", "model", "mitigation", "attribute", "metric", "mean", "ci95_half_width",
              "n_samples", "n_excluded", "verdict", "p_value"]


def _csv(report: FairnessReport) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in report.rows:
        for m, a in r["metrics"].items():
            w.writerow([r["dataset"], r["model"], r["mitigation"], r["attribute"], m, _g6(a["mean"]),
                        _g6(a["ci95_half_width"]), a["n_samples"], a["n_excluded"],
                        r["verdicts"].get(m) or "", ""])
    for c in report.comparisons:
        w.writerow([c["dataset"], c["model"], f"{c['baseline']}->{c['mitigation']}", c["attribute"],
                    f"delta_{c['metric']}", _g6(c["delta"]), _g6(c["delta_ci95_half_width"]), c["n_pairs"], "",
                    "", _g6(c["wilcoxon"]["p_value"])])
    return out.getvalue()


def render_report(report: FairnessReport, fmt="json") -> bytes:
    fmt = ReportFormat(fmt)
    if fmt is ReportFormat.Json:
        return _canonical_json(report.to_dict()).encode()
    if fmt is ReportFormat.Csv:
        return _csv(report).encode()
    return _text(report).encode()
