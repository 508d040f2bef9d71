"""Command-line front end.

Subcommands: linkbudget, correlate, g2, chsh, sidechannel, keygen, figure.
All file outputs land in ``--out`` and are byte-identical for a fixed
scenario and seed; wall-clock timing reports go to stdout only.

Exit codes: 0 success, 1 usage error, 2 input error, 3 security abort,
4 reconciliation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from entlink import chsh, coincidence, key_pipeline, pair_source, pipeline, side_channel
from entlink.key_pipeline import ReconciliationFailure
from entlink.pair_source import StreamParseError
from entlink.pipeline import SecurityAbort
from entlink.scenario import Scenario, ScenarioError, load_scenario

__all__ = ["main"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_SECURITY = 3
EXIT_RECONCILIATION = 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="entlink", description=__doc__.splitlines()[0])
    parser.add_argument("--scenario", type=str, default=None, help="scenario file (INI)")
    parser.add_argument("--seed", type=int, default=None, help="override the run seed")
    parser.add_argument("--out", type=str, default="out", help="output directory")
    parser.add_argument(
        "--verify", action="store_true", help="cross-check FFT against the direct method"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("linkbudget", help="loss chain from pair rate to key length")

    corr = sub.add_parser("correlate", help="correlate two timestamp CSV files")
    corr.add_argument("stream_a", type=str)
    corr.add_argument("stream_b", type=str)
    corr.add_argument("--bin-size", type=int, default=None, help="bin size in ps")
    corr.add_argument("--max-lag", type=int, default=None, help="max |lag| in ps")

    sub.add_parser("g2", help="pair correlation profile of the configured source")
    sub.add_parser("chsh", help="polarization run and CHSH statistic")
    sub.add_parser("sidechannel", help="timing mutual-information scan")
    sub.add_parser("keygen", help="full two-party key generation")

    fig = sub.add_parser("figure", help="emit a reproduced figure dataset")
    fig.add_argument("name", type=str)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        scenario = _load(args)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        handler = {
            "linkbudget": _cmd_linkbudget,
            "correlate": _cmd_correlate,
            "g2": _cmd_g2,
            "chsh": _cmd_chsh,
            "sidechannel": _cmd_sidechannel,
            "keygen": _cmd_keygen,
            "figure": _cmd_figure,
        }[args.command]
        handler(args, scenario, out_dir)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioError, StreamParseError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SecurityAbort as exc:
        print(f"security abort: {exc}", file=sys.stderr)
        return EXIT_SECURITY
    except ReconciliationFailure as exc:
        print(f"reconciliation failure: {exc}", file=sys.stderr)
        return EXIT_RECONCILIATION
    return EXIT_OK


def _load(args) -> Scenario:
    scenario = load_scenario(args.scenario) if args.scenario else Scenario()
    if args.seed is not None:
        scenario.run.seed = args.seed
    return scenario


def _write_json(payload: dict, path: Path) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _cmd_linkbudget(args, scenario, out_dir: Path) -> None:
    report = pipeline.run_linkbudget(scenario)
    _write_json(report.as_dict(), out_dir / "linkbudget.json")
    for stage in report.stages:
        print(f"{stage.name}: {stage.value:.6g} {stage.unit}")


def _cmd_correlate(args, scenario, out_dir: Path) -> None:
    bin_size = args.bin_size or scenario.protocol.time_bin_ps
    stream_a = pair_source.read_timestamp_csv(args.stream_a, time_bin_ps=bin_size)
    stream_b = pair_source.read_timestamp_csv(args.stream_b, time_bin_ps=bin_size)
    max_lag = args.max_lag if args.max_lag is not None else scenario.protocol.max_lag_ps
    result, timing = pipeline.run_correlate(
        stream_a, stream_b, bin_size, max_lag, verify=args.verify
    )
    coincidence.write_histogram_csv(result, out_dir / "correlation.csv")
    _write_json(
        {
            "recovered_delay_ps": result.recovered_delay_ps,
            "peak_count": result.peak_count,
            "significance": result.significance,
            "bin_size_ps": bin_size,
            "verified_against_direct": bool(args.verify),
        },
        out_dir / "correlation_report.json",
    )
    # timing is wall-clock and intentionally not written into --out
    for entry in timing.values():
        print(json.dumps(entry, sort_keys=True))


def _cmd_g2(args, scenario, out_dir: Path) -> None:
    model = scenario.source_model()
    taus_ps = np.arange(-2000, 2001, 10)
    lines = ["tau_ps,g2"]
    for tau_ps in taus_ps:
        lines.append(f"{int(tau_ps)},{pair_source.g2(tau_ps * 1e-12, model):.10g}")
    (out_dir / "g2.csv").write_text("\n".join(lines) + "\n")
    print(f"g2 curve written for bandwidth {model.bandwidth / 1e6:.0f} MHz")


_SETTING_NAMES_A = ("A0", "A1", "Ak")
_SETTING_NAMES_B = ("B0", "B1", "Bk")


def _write_counts_csv(counts, path: Path) -> None:
    lines = ["setting_a,setting_b,n_pp,n_pm,n_mp,n_mm"]
    for (i, j) in sorted(counts):
        c = counts[(i, j)]
        lines.append(
            f"{_SETTING_NAMES_A[i]},{_SETTING_NAMES_B[j]},{c.n_pp},{c.n_pm},{c.n_mp},{c.n_mm}"
        )
    path.write_text("\n".join(lines) + "\n")


def _cmd_chsh(args, scenario, out_dir: Path) -> None:
    counts, report = pipeline.run_chsh(scenario)
    _write_counts_csv(counts, out_dir / "chsh_counts.csv")
    _write_json(report.as_dict(), out_dir / "chsh_report.json")
    print(f"S = {report.s_value:.4f} +- {report.s_error:.4f}")


def _cmd_sidechannel(args, scenario, out_dir: Path) -> None:
    points = pipeline.run_sidechannel(scenario)
    side_channel.write_mi_csv(points, out_dir / "sidechannel_mi.csv")
    extrema = side_channel.mi_extrema_by_width(points)
    peak_width = max(extrema, key=lambda w: extrema[w][1])
    print(
        f"{len(points)} scan points; max MI {extrema[peak_width][1]:.4f} bits "
        f"at bin width {peak_width} ps"
    )


def _cmd_keygen(args, scenario, out_dir: Path) -> None:
    result = pipeline.run_keygen(scenario)
    key_pipeline.write_key_file(result.key_a, out_dir / "key_alice.key")
    key_pipeline.write_key_file(result.key_b, out_dir / "key_bob.key")
    _write_json(result.chsh_report.as_dict(), out_dir / "chsh_report.json")
    _write_json(
        {
            "parity_bits_disclosed": result.ledger.parity_bits_disclosed,
            "qber_sample_bits_disclosed": result.ledger.qber_sample_bits_disclosed,
            "total_classical_bits_exchanged": result.ledger.total_classical_bits_exchanged,
        },
        out_dir / "ledger.json",
    )
    _write_json(
        {
            "recovered_delay_ps": result.recovered_delay_ps,
            "significance": result.significance,
            "n_coincidences": result.n_coincidences,
            "n_sifted": result.n_sifted,
            "qber_estimate": result.qber_estimate,
            "s_value": result.chsh_report.s_value,
            "final_key_bits": result.key_a.length,
        },
        out_dir / "keygen_report.json",
    )
    print(
        f"final key: {result.key_a.length} bits, S = {result.chsh_report.s_value:.3f}, "
        f"QBER = {result.qber_estimate:.4f}"
    )


def _cmd_figure(args, scenario, out_dir: Path) -> None:
    try:
        table = pipeline.run_figure(args.name, scenario)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    path = out_dir / f"{table.name}.csv"
    table.write_csv(path)
    print(f"{table.name}: {len(table.rows)} rows -> {path}")


if __name__ == "__main__":
    sys.exit(main())
