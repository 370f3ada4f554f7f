"""Analysis products: data files, charts and ``analysis_manifest.json``.

Product ids are ``kind`` or ``kind:argument`` (for example
``distribution:commit_classification``). A bare kind expands to its default
arguments.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import analysis as an
from .charts import render_chart
from .dataset import Dataset
from .ingest import FeatureRecord

log = logging.getLogger(__name__)

MANIFEST_NAME = "analysis_manifest.json"

PRODUCT_KINDS = (
    "distribution",
    "timeline",
    "cumulative_features",
    "top_buggy_files",
    "top_buggy_components",
    "bug_share",
    "verifier_instruction_correlation",
    "component_lifecycle",
    "feature_component_matrix",
)

DEFAULT_KEYWORDS = ("bpf_link", "token", "bpf_iter", "spin_lock", "struct_ops")
DEFAULT_COMPONENT = "libbpf library"


class ProductError(ValueError):
    pass


@dataclass
class AnalysisOptions:
    window: int = 3
    top_n: int = 10
    keywords: Sequence[str] = DEFAULT_KEYWORDS
    component: str = DEFAULT_COMPONENT
    include_security: bool = False


@dataclass
class Product:
    id: str
    kind: str
    title: str
    files: list[str] = field(default_factory=list)
    data: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"id": self.id, "kind": self.kind, "title": self.title, "files": self.files,
                "data": self.data}


def parse_selector(selector: str) -> tuple[str, str | None]:
    kind, _, arg = selector.partition(":")
    if kind not in PRODUCT_KINDS:
        raise ProductError(f"unknown analysis product {kind!r}; choose from "
                           f"{', '.join(PRODUCT_KINDS)}")
    return kind, arg or None


def _slug(s: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", s.lower()).strip("_")


def _write_rows(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _num(v: float) -> str:
    return repr(float(v))


def _series_table(series: Sequence[an.TimelineSeries]):
    months = series[0].months if series else []
    header = ["month"] + [s.label for s in series]
    rows = [[m] + [_num(s.values[i]) for s in series] for i, m in enumerate(months)]
    return header, rows


class _Builder:
    def __init__(self, dataset: Dataset, out_dir: Path, features, opts: AnalysisOptions):
        self.ds = dataset
        self.out = out_dir
        self.features = features
        self.opts = opts

    def _chart(self, p: Product, data, kind: str, name: str, title: str) -> None:
        try:
            render_chart(data, kind, self.out / name, title)
        except ValueError as exc:
            log.info("%s: no chart (%s)", p.id, exc)
            return
        p.files.append(name)

    def _choice_questions(self, arg: str | None) -> list[str]:
        qids = [q.id for q in self.ds.schema.questions if q.kind.is_choice]
        if arg is None:
            return qids
        if arg not in qids:
            raise ProductError(f"{arg!r} is not a choice question of {self.ds.schema_id}")
        return [arg]

    def distribution(self, arg):
        pid = f"distribution:{arg}" if arg else "distribution"
        p = Product(pid, "distribution", "Answer distributions")
        for qid in self._choice_questions(arg):
            dist = an.distribution(self.ds, qid)
            name = f"distribution_{qid}.csv"
            _write_rows(self.out / name, ["label", "count", "share"],
                        [[lbl, n, _num(sh)] for lbl, n, sh in dist])
            p.files.append(name)
            title = self.ds.schema.question(qid).title or qid
            self._chart(p, dist, "pie", f"distribution_{qid}.svg", f"{title} Distribution")
        return p

    def timeline(self, arg):
        pid = f"timeline:{arg}" if arg else "timeline"
        p = Product(pid, "timeline", "Monthly timelines (cleaned, smoothed)")
        cleaned = an.clean_for_timeline(self.ds)
        p.data["rows_after_cleaning"] = len(cleaned.rows)
        for qid in self._choice_questions(arg):
            series = [an.smooth(s, self.opts.window)
                      for s in an.monthly_series(cleaned, qid)]
            name = f"timeline_{qid}.csv"
            _write_rows(self.out / name, *_series_table(series))
            p.files.append(name)
            visible = [s for s in series if any(s.values)]
            title = self.ds.schema.question(qid).title or qid
            self._chart(p, visible, "line", f"timeline_{qid}.svg", f"{title} Over Time")
        return p

    def cumulative_features(self, arg):
        if self.features is None:
            raise ProductError("cumulative_features needs a feature table (--features)")
        modes = [arg] if arg else list(an.CUMULATIVE_MODES)
        for m in modes:
            if m not in an.CUMULATIVE_MODES:
                raise ProductError(f"unknown cumulative mode {m!r}")
        pid = f"cumulative_features:{arg}" if arg else "cumulative_features"
        p = Product(pid, "cumulative_features", "Cumulative feature timelines")
        for m in modes:
            series = an.cumulative_features(self.features, m)
            name = f"cumulative_{m}.csv"
            _write_rows(self.out / name, *_series_table(series))
            p.files.append(name)
            p.data[m] = {s.label: int(s.values[-1]) for s in series}
            self._chart(p, series, "line", f"cumulative_{m}.svg",
                        f"Cumulative Features ({m.replace('_', ' ')})")
        return p

    def _top(self, kind: str, group_by: str, title: str):
        p = Product(kind, kind, title)
        ranking = an.top_buggy(self.ds, group_by, self.opts.top_n, self.opts.include_security)
        _write_rows(self.out / f"{kind}.csv", ["key", "count", "share"],
                    [[r.key, r.count, _num(r.share)] for r in ranking])
        p.files.append(f"{kind}.csv")
        self._chart(p, ranking, "bar", f"{kind}.svg", title)
        return p

    def top_buggy_files(self, arg):
        return self._top("top_buggy_files", "file", f"Top {self.opts.top_n} Buggy Files")

    def top_buggy_components(self, arg):
        return self._top("top_buggy_components", "implementation_component",
                         "Implementation Components with the Most Bugs")

    def bug_share(self, arg):
        p = Product("bug_share", "bug_share", "Verifier and JIT share of bug fixes")
        p.data = {
            "bug_rows": len(an.bug_rows(self.ds)),
            "verifier_jit_share": an.verifier_jit_bug_share(self.ds),
            "bug_rows_with_security": len(an.bug_rows(self.ds, True)),
            "verifier_jit_share_with_security": an.verifier_jit_bug_share(self.ds, True),
        }
        with open(self.out / "bug_share.json", "w", encoding="utf-8") as fh:
            json.dump(p.data, fh, indent=2, sort_keys=True)
            fh.write("\n")
        p.files.append("bug_share.json")
        return p

    def verifier_instruction_correlation(self, arg):
        p = Product("verifier_instruction_correlation", "verifier_instruction_correlation",
                    "Verifier Instruction Changes vs Verifier Bugs")
        a, b, r = an.verifier_instruction_correlation(self.ds, self.opts.window)
        _write_rows(self.out / "verifier_instruction_correlation.csv",
                    ["month", a.label, b.label],
                    [[m, _num(x), _num(y)] for m, x, y in zip(a.months, a.values, b.values)])
        p.files.append("verifier_instruction_correlation.csv")
        p.data["pearson"] = r
        self._chart(p, [a, b], "line", "verifier_instruction_correlation.svg", p.title)
        return p

    def component_lifecycle(self, arg):
        label = arg or self.opts.component
        try:
            series = an.component_lifecycle(self.ds, label, self.opts.window)
        except ValueError as exc:
            raise ProductError(str(exc)) from None
        p = Product(f"component_lifecycle:{label}" if arg else "component_lifecycle",
                    "component_lifecycle", f"Evolution of {label} Over Time")
        slug = _slug(label)
        _write_rows(self.out / f"lifecycle_{slug}.csv", *_series_table(series))
        p.files.append(f"lifecycle_{slug}.csv")
        p.data["component"] = label
        visible = [s for s in series if any(s.values)]
        self._chart(p, visible, "line", f"lifecycle_{slug}.svg", p.title)
        return p

    def feature_component_matrix(self, arg):
        keywords = [k for k in arg.split(",") if k] if arg else list(self.opts.keywords)
        p = Product(f"feature_component_matrix:{arg}" if arg else "feature_component_matrix",
                    "feature_component_matrix", "Feature-Component Interdependencies")
        m = an.feature_component_matrix(self.ds, keywords)
        _write_rows(self.out / "feature_component_matrix.csv", ["keyword"] + m.components,
                    [[k] + row for k, row in zip(m.feature_keywords, m.cells)])
        p.files.append("feature_component_matrix.csv")
        self._chart(p, m, "heatmap", "feature_component_matrix.svg", p.title)
        return p


def run_analyses(dataset: Dataset, out_dir, features: list[FeatureRecord] | None = None,
                 only: Sequence[str] | None = None,
                 opts: AnalysisOptions | None = None) -> dict:
    """Build the selected products into ``out_dir`` and write the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    opts = opts or AnalysisOptions()
    if only:
        selected = [parse_selector(s) for s in only]
    else:
        selected = [(k, None) for k in PRODUCT_KINDS
                    if not (k == "cumulative_features" and features is None)]
        if features is None:
            log.warning("no feature table given; skipping cumulative_features")
    b = _Builder(dataset, out, features, opts)
    products = [getattr(b, kind)(arg) for kind, arg in selected]
    manifest = {
        "schema_id": dataset.schema_id,
        "rows": len(dataset.rows),
        "ok_rows": len(dataset.ok_rows),
        "options": {"window": opts.window, "top_n": opts.top_n,
                    "keywords": list(opts.keywords), "component": opts.component,
                    "include_security": opts.include_security},
        "products": [p.to_json() for p in products],
    }
    with open(out / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, ensure_ascii=False)
        fh.write("\n")
    return manifest
