"""Result emission: JSON, CSV tables and SVG plots, plus the run manifest.

CSV column orders
-----------------
``coincidences.csv`` (bell)
    source, alice_setting, bob_setting, x, y, P13, P14, P23, P24, E
``joint.csv`` / ``joint_sampled.csv`` (two-time)
    a, a_prime, b, probability
``regime.csv`` (semi; one row)
    tau_ratio, regime, n, n_valid, bounce_fraction, ci_low, ci_high,
    pointer_path_correlation, surrealism
``trajectories.csv`` (semi)
    sample_id, t, x[, y], status, node_events, label
``sweep.csv`` (pointer-sweep; one row per grid value)
    value, then the ``regime.csv`` columns

``label`` is ``bounced``, ``crossed`` or ``excluded``; ``status`` is ``ok``,
``node-trapped`` or ``left-grid``. JSON and CSV files are byte-identical for
identical (config, seed); only ``manifest.json`` carries timestamps.
"""
from __future__ import annotations

import csv
import datetime as _dt
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import __version__
from .config import ScenarioConfig, jsonable
from .trajectories import STATUS_NAMES

FORMATS = ("json", "csv", "svg")
FAN_SAMPLES = 150
REGIME_COLUMNS = ["tau_ratio", "regime", "n", "n_valid", "bounce_fraction", "ci_low", "ci_high",
                  "pointer_path_correlation", "surrealism"]


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    tool_version: str = __version__
    started: str = field(default_factory=_now)
    finished: str | None = None
    verdicts: dict[str, bool] = field(default_factory=dict)

    @classmethod
    def for_config(cls, cfg: ScenarioConfig) -> RunManifest:
        return cls(cfg.hash(), cfg.ensemble.seed)

    def finish(self, verdicts: dict[str, bool]) -> RunManifest:
        self.verdicts = dict(verdicts)
        self.finished = _now()
        return self

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _writer(path: Path):
    fh = open(path, "w", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_csv(path: Path, header: list[str], rows: Iterable[list]) -> Path:
    fh, w = _writer(path)
    with fh:
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])
    return path


def _regime_row(d: dict) -> list:
    lo, hi = d["bounce_ci"]
    return [d.get("tau_ratio"), d.get("regime"), d["n"], d["n_valid"], d["bounce_fraction"], lo, hi,
            d.get("pointer_path_correlation"), d.get("surrealism")]


def _label_names(labels: np.ndarray) -> list[str]:
    return [{1: "bounced", -1: "crossed"}.get(int(v), "excluded") for v in labels]


# -- CSV per result kind -----------------------------------------------------------


def csv_bell(res, out: Path) -> list[Path]:
    rows = []
    for r in res.settings:
        a = r["analytic"]
        rows.append(["analytic", r["alice"], r["bob"], r["x"], r["y"], a["P13"], a["P14"], a["P23"], a["P24"],
                     r["E_analytic"]])
        if "sampled" in r:
            s = r["sampled"]
            rows.append(["sampled", r["alice"], r["bob"], r["x"], r["y"], s["P13"], s["P14"], s["P23"], s["P24"],
                         r["E_sampled"]])
    hdr = ["source", "alice_setting", "bob_setting", "x", "y", "P13", "P14", "P23", "P24", "E"]
    return [write_csv(out / "coincidences.csv", hdr, rows)]


def csv_two_time(res, out: Path) -> list[Path]:
    hdr = ["a", "a_prime", "b", "probability"]
    files = [write_csv(out / "joint.csv", hdr, ([r[h] for h in hdr] for r in res.table))]
    if res.sampled is not None:
        files.append(write_csv(out / "joint_sampled.csv", hdr, ([r[h] for h in hdr] for r in res.sampled)))
    return files


def csv_semi(rep, out: Path) -> list[Path]:
    files = [write_csv(out / "regime.csv", REGIME_COLUMNS, [_regime_row(rep.as_dict())])]
    ens = rep.ensemble
    if ens is not None:
        coords = ["x", "y"][: ens.dims]
        labels = _label_names(rep.labels)
        status = [STATUS_NAMES[int(s)] for s in ens.status]

        def rows():
            for i in range(ens.n):
                for ti, t in enumerate(ens.times):
                    yield [i, float(t), *(float(c) for c in ens.positions[ti, i]), status[i],
                           int(ens.node_events[i]), labels[i]]

        hdr = ["sample_id", "t", *coords, "status", "node_events", "label"]
        files.append(write_csv(out / "trajectories.csv", hdr, rows()))
    return files


def csv_sweep(res, out: Path) -> list[Path]:
    rows = [[v] + _regime_row(r.as_dict()) for v, r in zip(res.values, res.reports)]
    return [write_csv(out / "sweep.csv", ["value"] + REGIME_COLUMNS, rows)]


# -- SVG ---------------------------------------------------------------------------


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "pwlab"
    return plt


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata={"Date": None})
    import matplotlib.pyplot as plt

    plt.close(fig)
    return path


def svg_trajectory_fan(rep, path: Path) -> Path:
    """x against t for an evenly spaced subset, blue bounced, red crossed."""
    plt = _pyplot()
    ens = rep.ensemble
    fig, ax = plt.subplots(figsize=(6, 4.5))
    order = np.argsort(ens.initial[:, 0], kind="stable")
    pick = order[np.linspace(0, ens.n - 1, min(FAN_SAMPLES, ens.n)).astype(int)]
    colors = {1: "tab:blue", -1: "tab:red", 0: "0.6"}
    t_end = rep.times["t_detect"]
    m = ens.times <= t_end + 1e-12
    for i in pick:
        ax.plot(ens.positions[m, i, 0], ens.times[m], color=colors[int(rep.labels[i])], lw=0.6)
    ax.set_xlabel("particle position x")
    ax.set_ylabel("time t")
    title = "trajectory fan"
    if rep.regime:
        title += f" ({rep.regime}, tau/T = {rep.tau_ratio:g})"
    ax.set_title(title + f": bounce fraction {rep.bounce_fraction:.3f}")
    return _save(fig, path)


def svg_probability_bars(labels: list[str], values: list[float], path: Path, title: str,
                         sampled: list[float] | None = None) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    xs = np.arange(len(labels))
    w = 0.4 if sampled is not None else 0.7
    ax.bar(xs - (w / 2 if sampled is not None else 0), values, w, label="analytic")
    if sampled is not None:
        ax.bar(xs + w / 2, sampled, w, label="sampled")
        ax.legend()
    ax.set_xticks(xs, labels)
    ax.set_ylabel("probability")
    ax.set_title(title)
    return _save(fig, path)


def svg_sweep(res, path: Path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.array(res.values, dtype=float)
    y = np.array([r.bounce_fraction for r in res.reports])
    lo = np.array([r.bounce_ci[0] for r in res.reports])
    hi = np.array([r.bounce_ci[1] for r in res.reports])
    ax.fill_between(x, lo, hi, alpha=0.3, label="95% CI")
    ax.plot(x, y, "o-", label="bounce fraction")
    if np.all(x > 0):
        ax.set_xscale("log")
    ax.set_xlabel(res.param)
    ax.set_ylabel("bounce fraction")
    ax.set_ylim(-0.02, 1.02)
    ax.legend()
    return _save(fig, path)


# -- dispatch ----------------------------------------------------------------------


def emit_results(kind: str, result, formats: Iterable[str], out_dir: str | Path,
                 manifest: RunManifest | None = None) -> list[Path]:
    """Write ``result`` (of scenario ``kind``) to ``out_dir``; JSON is always written."""
    fmts = set(formats) | {"json"}
    bad = fmts - set(FORMATS)
    if bad:
        raise ValueError(f"unknown format(s): {', '.join(sorted(bad))}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    body = result.as_dict() if hasattr(result, "as_dict") else result
    (out / "result.json").write_text(dumps({"kind": kind, "result": body}))
    files.append(out / "result.json")
    if manifest is not None:
        (out / "manifest.json").write_text(dumps(manifest))
        files.append(out / "manifest.json")
    if "csv" in fmts:
        files += {"bell": csv_bell, "two-time": csv_two_time, "semi": csv_semi,
                  "pointer-sweep": csv_sweep}[kind](result, out)
    if "svg" in fmts:
        if kind == "semi" and result.ensemble is not None:
            files.append(svg_trajectory_fan(result, out / "trajectories.svg"))
        elif kind == "bell":
            r = result.settings[0]
            labels = list(r["analytic"])
            files.append(svg_probability_bars(labels, list(r["analytic"].values()), out / "probabilities.svg",
                                              f"coincidences at x={r['x']:.3g}, y={r['y']:.3g}",
                                              list(r["sampled"].values()) if "sampled" in r else None))
        elif kind == "two-time":
            labels = [f"{t['a']}{t['a_prime']}{t['b']}" for t in result.table]
            files.append(svg_probability_bars(labels, [t["probability"] for t in result.table],
                                              out / "probabilities.svg", "two-time joint (a, a', b)",
                                              [t["probability"] for t in result.sampled] if result.sampled else None))
        elif kind == "pointer-sweep":
            files.append(svg_sweep(result, out / "sweep.svg"))
    return files
