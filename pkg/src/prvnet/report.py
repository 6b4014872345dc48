"""Reporting utilities to build CSV exports, SVG figures and Markdown summaries."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from .models import REPORT_COLUMNS, TRACE_COLUMNS, NmseReport, TrainTrace, format_gamma  # noqa: E402

# stable element ids so identical runs produce identical SVG bytes
plt.rcParams["svg.hashsalt"] = "prvnet"
_SVG_METADATA = {"Date": None, "Creator": "prvnet"}


def report_to_dataframe(report: NmseReport) -> pd.DataFrame:
    rows = []
    for row in report.rows:
        rows.append(
            {
                "gamma": format_gamma(row.gamma),
                "scenario": row.scenario.value,
                "snr_db": row.snr_label,
                "nmse_db": f"{row.nmse_db:.4f}",
                "n_samples": row.n_samples,
                "model_id": row.model_id,
                "seed": row.seed,
            }
        )
    return pd.DataFrame(rows, columns=list(REPORT_COLUMNS))


def trace_to_dataframe(trace: TrainTrace) -> pd.DataFrame:
    rows = [
        {
            "epoch": record.epoch,
            "beta": f"{record.beta:.6f}",
            "recon_loss": f"{record.recon_loss:.6f}",
            "kl_loss": f"{record.kl_loss:.6f}",
            "total_loss": f"{record.total_loss:.6f}",
            "val_nmse_db": f"{record.val_nmse_db:.4f}",
        }
        for record in trace.records
    ]
    return pd.DataFrame(rows, columns=list(TRACE_COLUMNS))


def export_report_csv(report: NmseReport, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    report_to_dataframe(report).to_csv(path, index=False)
    return path


def export_trace_csv(trace: TrainTrace, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    trace_to_dataframe(trace).to_csv(path, index=False)
    return path


def render_summary_table(report: NmseReport) -> str:
    df = report_to_dataframe(report)
    if df.empty:
        return "(no rows)"
    return df.to_string(index=False)


def _numeric(report: NmseReport) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "gamma": row.gamma,
                "scenario": row.scenario.value,
                "snr_db": row.snr_db,
                "nmse_db": row.nmse_db,
                "mode": row.model_id.rsplit("-", 1)[0],
            }
            for row in report.rows
        ]
    )


def _chart_base(output_dir: Path, filename: str) -> Path:
    output_dir.mkdir(parents=True, exist_ok=True)
    return output_dir / filename


def plot_nmse_vs_compression(report: NmseReport, output_dir: Path) -> Optional[Path]:
    df = _numeric(report)
    if df.empty:
        return None
    clean = df[df["snr_db"].isna()]
    if clean.empty:
        return None
    plt.figure(figsize=(6, 4))
    for scenario, group in clean.groupby("scenario"):
        group = group.sort_values("gamma", ascending=False)
        plt.plot(1.0 / group["gamma"], group["nmse_db"], marker="o", label=scenario)
    plt.xscale("log", base=2)
    plt.xlabel("1 / compression ratio")
    plt.ylabel("NMSE (dB)")
    plt.title("NMSE vs compression")
    plt.legend()
    plt.grid(alpha=0.3)
    path = _chart_base(output_dir, "nmse_vs_compression.svg")
    plt.tight_layout()
    plt.savefig(path, format="svg", metadata=_SVG_METADATA)
    plt.close()
    return path


def plot_nmse_vs_snr(report: NmseReport, output_dir: Path) -> Optional[Path]:
    df = _numeric(report)
    if df.empty:
        return None
    noisy = df[df["snr_db"].notna()]
    if noisy.empty:
        return None
    plt.figure(figsize=(6, 4))
    for (mode, gamma), group in noisy.groupby(["mode", "gamma"]):
        group = group.sort_values("snr_db")
        plt.plot(group["snr_db"], group["nmse_db"], marker="o", label=f"{mode} γ={format_gamma(gamma)}")
    plt.xlabel("SNR (dB)")
    plt.ylabel("NMSE (dB)")
    plt.title("NMSE under feedback-link noise")
    plt.legend()
    plt.grid(alpha=0.3)
    path = _chart_base(output_dir, "nmse_vs_snr.svg")
    plt.tight_layout()
    plt.savefig(path, format="svg", metadata=_SVG_METADATA)
    plt.close()
    return path


def render_markdown_report(
    report: NmseReport,
    title: str,
    charts: Iterable[Path] = (),
    beta_star: Optional[float] = None,
    failures: Sequence[str] = (),
) -> str:
    lines = [f"# {title}", ""]
    lines.append(f"- Rows: **{len(report.rows)}**")
    lines.append(f"- Seed: **{report.seed}**")
    if report.dataset_hash:
        lines.append(f"- Dataset sha256: `{report.dataset_hash[:16]}`")
    if beta_star is not None:
        lines.append(f"- Selected beta*: **{beta_star:.4f}**")
    if report.monotone is not None:
        lines.append(f"- Monotone trend: **{'yes' if report.monotone else 'no'}**")
    lines.append("")

    charts = list(charts)
    if charts:
        lines.append("## Figures")
        for chart in charts:
            lines.append(f"![{chart.stem}]({chart.name})")
        lines.append("")

    lines.append("## Results")
    df = report_to_dataframe(report)
    if df.empty:
        lines.append("_No rows._")
    else:
        lines.append("| " + " | ".join(df.columns) + " |")
        lines.append("|" + "---|" * len(df.columns))
        for _, row in df.iterrows():
            lines.append("| " + " | ".join(str(value) for value in row) + " |")
    lines.append("")

    if report.notes:
        lines.append("## Notes")
        for note in report.notes:
            lines.append(f"- {note}")
        lines.append("")

    if failures:
        lines.append("## Failed Runs")
        for failure in failures:
            lines.append(f"- {failure}")

    return "\n".join(lines)
