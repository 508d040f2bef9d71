"""End-to-end scenario runs: rate chain, key generation, figure datasets.

The key-generation run is a genuine two-party simulation: correlated
timestamp streams are generated, the inter-node delay is recovered by FFT
correlation, coincidences are extracted and sifted, the CHSH statistic is
checked against the abort threshold, and the surviving key is reconciled and
hashed.  Beam capture enters the generation step as a per-channel efficiency
factor (independent thinning); the joint, correlation-aware capture geometry
is the link-budget chain's job.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from entlink import beam_optics, chsh, coincidence, key_pipeline, side_channel
from entlink.beam_optics import ApertureSpec
from entlink.key_pipeline import KeyMaterial, LeakageLedger
from entlink.pair_source import TimestampStream, generate_pair_events
from entlink.scenario import Scenario

__all__ = [
    "ChshReport",
    "FigureTable",
    "KeygenResult",
    "RateChainReport",
    "SecurityAbort",
    "run_chsh",
    "run_correlate",
    "run_figure",
    "run_keygen",
    "run_linkbudget",
    "run_sidechannel",
]

FIGURE_NAMES = ("fig3", "fig4", "fig5", "fig7")


class SecurityAbort(Exception):
    """CHSH statistic below the configured threshold; key material discarded."""


@dataclass
class RateChainStage:
    name: str
    value: float
    unit: str


@dataclass
class RateChainReport:
    stages: list[RateChainStage]

    def value(self, name: str) -> float:
        for stage in self.stages:
            if stage.name == name:
                return stage.value
        raise KeyError(name)

    def as_dict(self) -> dict:
        return {s.name: {"value": s.value, "unit": s.unit} for s in self.stages}


@dataclass
class ChshReport:
    e_values: dict[str, float]
    e_errors: dict[str, float]
    s_value: float
    s_error: float

    def as_dict(self) -> dict:
        return {
            "E": self.e_values,
            "E_standard_error": self.e_errors,
            "S": self.s_value,
            "S_standard_error": self.s_error,
        }


@dataclass
class KeygenResult:
    key_a: KeyMaterial
    key_b: KeyMaterial
    chsh_report: ChshReport
    ledger: LeakageLedger
    recovered_delay_ps: int
    significance: float
    n_coincidences: int
    n_sifted: int
    qber_estimate: float


@dataclass
class FigureTable:
    name: str
    columns: list[str]
    rows: list[tuple]

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [row[i] for row in self.rows]

    def write_csv(self, path) -> None:
        lines = [",".join(self.columns)]
        for row in self.rows:
            lines.append(",".join(_fmt(v) for v in row))
        Path(path).write_text("\n".join(lines) + "\n")


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


# ---------------------------------------------------------------------------
# link budget


def _marginal_capture(scenario: Scenario, radius: float, rng: np.random.Generator) -> float:
    """Single-photon capture probability averaged over pointing jitter."""
    geometry = scenario.beam_geometry()
    sigma = scenario.link.pointing_sigma_rad
    if sigma == 0.0:
        return beam_optics.capture_probability(geometry, ApertureSpec(radius))
    offsets = beam_optics.sample_pointing_offsets(
        rng, scenario.link.pointing_samples, geometry.distance, sigma
    )
    return float(
        np.mean(
            [
                beam_optics.capture_probability(geometry, ApertureSpec(radius, (dx, dy)))
                for dx, dy in offsets
            ]
        )
    )


def _window_pair_fraction(scenario: Scenario) -> float:
    """Fraction of true pairs whose arrival difference fits the window.

    The pair time difference is Gaussian with std sqrt(2)*tau_j; quantisation
    effects are neglected in this arithmetic estimate.
    """
    tau_j = scenario.source.detector_jitter_s
    if tau_j == 0.0:
        return 1.0
    half = 0.5 * scenario.protocol.coincidence_window_ps * 1e-12
    return math.erf(half / (math.sqrt(2.0) * math.sqrt(2.0) * tau_j))


def run_linkbudget(scenario: Scenario) -> RateChainReport:
    """Compose the loss chain from pair rate to expected final key length."""
    rng = np.random.default_rng(scenario.run.seed + 6)
    geometry = scenario.beam_geometry()
    mode = scenario.correlation_mode()
    link = scenario.link

    if link.pointing_sigma_rad == 0.0:
        ap_a, ap_b = scenario.apertures()
        p_joint = beam_optics.coincidence_probability(geometry, ap_a, ap_b, mode)
    else:
        p_joint = beam_optics.jittered_coincidence_probability(
            geometry,
            link.aperture_radius_a_m,
            link.aperture_radius_b_m,
            mode,
            angle_sigma=link.pointing_sigma_rad,
            n_samples=link.pointing_samples,
            rng=rng,
        )

    pair_rate = scenario.source.pair_rate_hz
    transmitted = pair_rate * p_joint
    detected = (
        transmitted
        * scenario.channel_a.efficiency
        * scenario.channel_b.efficiency
        * _window_pair_fraction(scenario)
    )
    sifted_rate = detected / 9.0  # both nodes on the key setting, 3x3 uniform

    duration = scenario.protocol.duration_s
    n_sifted = int(sifted_rate * duration)
    n_sample = int(round(scenario.protocol.qber_sample_fraction * n_sifted))

    model = scenario.state_model()
    settings = scenario.basis_settings()
    key_probs = chsh.joint_probabilities(settings.alice[2], settings.bob[2], model)
    qber = float(key_probs[1] + key_probs[2])

    n_corrected = n_sifted - n_sample
    parity_est = int(
        math.ceil(scenario.protocol.ec_efficiency * key_pipeline.binary_entropy(qber) * n_corrected)
    )
    n_final = max(
        0, n_corrected - parity_est - n_sample - scenario.protocol.security_margin_bits
    )

    return RateChainReport(
        stages=[
            RateChainStage("pair_rate", pair_rate, "pairs/s"),
            RateChainStage("link_transmitted_rate", transmitted, "pairs/s"),
            RateChainStage("detected_coincidence_rate", detected, "pairs/s"),
            RateChainStage("sifted_rate", sifted_rate, "bits/s"),
            RateChainStage("sifted_bits", float(n_sifted), "bits/run"),
            RateChainStage("corrected_bits", float(n_corrected), "bits/run"),
            RateChainStage("final_bits", float(n_final), "bits/run"),
        ]
    )


# ---------------------------------------------------------------------------
# correlation


def _auto_max_lag(scenario: Scenario, a, b) -> int:
    if scenario.protocol.max_lag_ps > 0:
        return scenario.protocol.max_lag_ps
    return coincidence.default_max_lag_ps(a, b)


def run_correlate(
    stream_a: TimestampStream,
    stream_b: TimestampStream,
    bin_size_ps: int,
    max_lag_ps: int = 0,
    verify: bool = False,
) -> tuple[coincidence.CorrelationResult, dict]:
    """FFT-correlate two streams; optionally check against the direct oracle.

    Returns the correlation result plus a timing dictionary with one entry per
    method run ({method, bins, elapsed_seconds}).
    """
    a = coincidence.bin_timestamps(stream_a, bin_size_ps)
    b = coincidence.bin_timestamps(stream_b, bin_size_ps)
    if max_lag_ps <= 0:
        max_lag_ps = coincidence.default_max_lag_ps(a, b)

    t0 = time.perf_counter()
    result = coincidence.cross_correlate_fft(a, b, max_lag_ps)
    timing = {
        "fft": {
            "method": "fft",
            "bins": max(a.n_bins, b.n_bins),
            "elapsed_seconds": time.perf_counter() - t0,
        }
    }
    if verify:
        t1 = time.perf_counter()
        direct = coincidence.cross_correlate_direct(a, b, max_lag_ps)
        timing["direct"] = {
            "method": "direct",
            "bins": max(a.n_bins, b.n_bins),
            "elapsed_seconds": time.perf_counter() - t1,
        }
        if not np.array_equal(result.histogram, direct.histogram):
            raise AssertionError("FFT and direct correlation histograms differ")
    return result, timing


# ---------------------------------------------------------------------------
# chsh + side channel subcommand payloads


def run_chsh(scenario: Scenario) -> tuple[dict, ChshReport]:
    """Simulate a polarization run and summarise the CHSH statistic."""
    counts = chsh.simulate_run(
        scenario.basis_settings(),
        scenario.state_model(),
        scenario.chsh.n_pairs,
        seed=scenario.run.seed,
    )
    return counts, _chsh_report(counts)


def _chsh_report(counts: dict[tuple[int, int], chsh.SettingCounts]) -> ChshReport:
    pairs = {"E00": (0, 0), "E01": (0, 1), "E11": (1, 1), "E10": (1, 0)}
    e_values = {}
    e_errors = {}
    for name, key in pairs.items():
        e_values[name] = chsh.correlation_coefficient(counts[key])
        e_errors[name] = chsh.correlation_error(counts[key])
    s = chsh.chsh_s_value(
        e_values["E00"], e_values["E01"], e_values["E11"], e_values["E10"]
    )
    s_err = math.sqrt(sum(err**2 for err in e_errors.values()))
    return ChshReport(e_values=e_values, e_errors=e_errors, s_value=s, s_error=s_err)


def run_sidechannel(scenario: Scenario) -> list[side_channel.MiPoint]:
    """Scan mutual information over the configured bin widths and offsets."""
    sc = scenario.sidechannel
    profile = side_channel.gaussian_profile(
        sc.sigma_ps, shift_capacity_ps=sc.centroid_offset_ps
    )
    hists = side_channel.make_shifted_histograms(profile, sc.centroid_offset_ps)
    prior = side_channel.OutcomePrior(sc.prior)
    return side_channel.mi_vs_binwidth(prior, hists, sc.bin_widths_ps, sc.start_offsets_ps)


# ---------------------------------------------------------------------------
# key generation


def run_keygen(scenario: Scenario) -> KeygenResult:
    """Full two-party run: generate, correlate, extract, verify, distill."""
    seed = scenario.run.seed
    protocol = scenario.protocol
    settings = scenario.basis_settings()
    model = scenario.state_model()

    rng_link = np.random.default_rng(seed + 6)
    capture_a = _marginal_capture(scenario, scenario.link.aperture_radius_a_m, rng_link)
    capture_b = _marginal_capture(scenario, scenario.link.aperture_radius_b_m, rng_link)

    base_a, base_b = scenario.channel_models(seed)
    channel_a = replace(base_a, efficiency=base_a.efficiency * capture_a)
    channel_b = replace(base_b, efficiency=base_b.efficiency * capture_b)

    stream_a, stream_b = generate_pair_events(
        scenario.source_model(),
        channel_a,
        channel_b,
        protocol.duration_s,
        time_bin_ps=protocol.time_bin_ps,
        pair_tagger=chsh.pair_tagger(settings, model),
        background_tagger=chsh.background_tagger(settings),
    )

    result, _ = run_correlate(
        stream_a, stream_b, protocol.time_bin_ps, protocol.max_lag_ps
    )
    coincidences = coincidence.extract_coincidences(
        stream_a, stream_b, result.recovered_delay_ps, protocol.coincidence_window_ps
    )
    idx_a = coincidences.pairs[:, 0]
    idx_b = coincidences.pairs[:, 1]
    records_a = key_pipeline.RawKeyRecords(stream_a.basis[idx_a], stream_a.outcome[idx_a])
    records_b = key_pipeline.RawKeyRecords(stream_b.basis[idx_b], stream_b.outcome[idx_b])

    ledger = LeakageLedger()
    # basis reconciliation: each node announces its 3-bit setting tag per event
    ledger.record_classical(6 * len(records_a))

    report = _chsh_report(_counts_from_records(records_a, records_b))
    if report.s_value < protocol.s_threshold:
        raise SecurityAbort(
            f"CHSH S = {report.s_value:.3f} below threshold {protocol.s_threshold:.3f}; "
            "aborting key generation"
        )

    sifted_a, sifted_b = key_pipeline.sift(records_a, records_b)
    qber, rem_a, rem_b = key_pipeline.estimate_qber(
        sifted_a,
        sifted_b,
        protocol.qber_sample_fraction,
        ledger=ledger,
        seed=seed + 3,
    )
    # Block sizing needs a sane error-rate prior: a lucky sample can report
    # zero errors on a key that still carries some, which would degenerate
    # the first-pass block size to n/2.  Floor the sizing input at 1%.
    corrected_b = key_pipeline.cascade_correct(
        rem_a,
        rem_b,
        max(qber, 0.01),
        ledger=ledger,
        seed=seed + 4,
        passes=protocol.cascade_passes,
    )
    corrected_a = KeyMaterial(
        key_pipeline.KeyStage.CORRECTED, rem_a.bits, qber_estimate=qber
    )
    final_a = key_pipeline.privacy_amplify(
        corrected_a, ledger, protocol.security_margin_bits, seed=seed + 5
    )
    final_b = key_pipeline.privacy_amplify(
        corrected_b, ledger, protocol.security_margin_bits, seed=seed + 5
    )

    return KeygenResult(
        key_a=final_a,
        key_b=final_b,
        chsh_report=report,
        ledger=ledger,
        recovered_delay_ps=result.recovered_delay_ps,
        significance=result.significance,
        n_coincidences=coincidences.n_pairs,
        n_sifted=sifted_a.length,
        qber_estimate=qber,
    )


def _counts_from_records(
    records_a: key_pipeline.RawKeyRecords, records_b: key_pipeline.RawKeyRecords
) -> dict[tuple[int, int], chsh.SettingCounts]:
    """Tally detector-pair counts per CHSH setting pair from tagged records."""
    counts = {}
    for i in range(2):
        for j in range(2):
            mask = (records_a.basis == chsh.ALICE_TAGS[i]) & (
                records_b.basis == chsh.BOB_TAGS[j]
            )
            oa = records_a.outcome[mask]
            ob = records_b.outcome[mask]
            counts[(i, j)] = chsh.SettingCounts(
                n_pp=int(np.sum((oa == 0) & (ob == 0))),
                n_pm=int(np.sum((oa == 0) & (ob == 1))),
                n_mp=int(np.sum((oa == 1) & (ob == 0))),
                n_mm=int(np.sum((oa == 1) & (ob == 1))),
            )
    return counts


# ---------------------------------------------------------------------------
# figure datasets


def run_figure(name: str, scenario: Scenario) -> FigureTable:
    """Emit the dataset behind one of the reproduced figures."""
    if name not in FIGURE_NAMES:
        raise ValueError(
            f"unknown figure {name!r}; valid names: {', '.join(FIGURE_NAMES)}"
        )
    return {
        "fig3": _figure_coincidence_vs_offset,
        "fig4": _figure_g2_bandwidths,
        "fig5": _figure_lag_histogram,
        "fig7": _figure_mi_vs_binwidth,
    }[name](scenario)


def _figure_coincidence_vs_offset(scenario: Scenario) -> FigureTable:
    """Coincidence probability vs common pointing offset, both modes."""
    geometry = scenario.beam_geometry()
    r1 = scenario.link.aperture_radius_a_m
    r2 = scenario.link.aperture_radius_b_m
    width = beam_optics.beam_width(geometry)
    offsets = np.linspace(0.0, 2.0 * max(width, r1), 20)
    rows = []
    for d in offsets:
        ap1 = ApertureSpec(r1, (float(d), 0.0))
        ap2 = ApertureSpec(r2, (float(d), 0.0))
        anti = beam_optics.coincidence_probability(
            geometry, ap1, ap2, beam_optics.CorrelationMode.ANTI_CORRELATED
        )
        inverted = beam_optics.coincidence_probability(
            geometry, ap1, ap2, beam_optics.CorrelationMode.INVERTED
        )
        rows.append((float(d), anti, inverted))
    return FigureTable(
        "fig3", ["offset_m", "anticorrelated_probability", "inverted_probability"], rows
    )


FIG4_BANDWIDTHS_HZ = (300e6, 400e6, 500e6, 600e6)


def _figure_g2_bandwidths(scenario: Scenario) -> FigureTable:
    """Pair correlation profile for the four reference source bandwidths."""
    from entlink.pair_source import SourceModel, g2

    taus_ps = np.arange(-2000, 2001, 10)
    models = [
        SourceModel(
            pair_rate=scenario.source.pair_rate_hz,
            bandwidth=bw,
            detector_jitter=scenario.source.detector_jitter_s,
            coincidence_bin=scenario.protocol.coincidence_window_ps * 1e-12,
        )
        for bw in FIG4_BANDWIDTHS_HZ
    ]
    columns = ["tau_ps"] + [f"g2_{int(bw / 1e6)}mhz" for bw in FIG4_BANDWIDTHS_HZ]
    rows = []
    for tau_ps in taus_ps:
        tau = tau_ps * 1e-12
        rows.append((int(tau_ps), *(float(g2(tau, m)) for m in models)))
    return FigureTable("fig4", columns, rows)


def _figure_lag_histogram(scenario: Scenario) -> FigureTable:
    """Lag histogram of a generated stream pair, peak at the true delay."""
    channel_a, channel_b = scenario.channel_models(scenario.run.seed)
    stream_a, stream_b = generate_pair_events(
        scenario.source_model(),
        channel_a,
        channel_b,
        scenario.protocol.duration_s,
        time_bin_ps=scenario.protocol.time_bin_ps,
    )
    result, _ = run_correlate(
        stream_a, stream_b, scenario.protocol.time_bin_ps, scenario.protocol.max_lag_ps
    )
    rows = [(int(l), int(c)) for l, c in zip(result.lags_ps, result.histogram)]
    return FigureTable("fig5", ["lag_ps", "count"], rows)


def _figure_mi_vs_binwidth(scenario: Scenario) -> FigureTable:
    """Mutual information vs bin width for several centroid offsets."""
    sc = scenario.sidechannel
    sigma = sc.sigma_ps
    offsets_dt0 = sorted({int(round(sigma)), int(round(2 * sigma)), sc.centroid_offset_ps})
    prior = side_channel.OutcomePrior(sc.prior)
    rows = []
    for dt0 in offsets_dt0:
        profile = side_channel.gaussian_profile(sigma, shift_capacity_ps=dt0)
        hists = side_channel.make_shifted_histograms(profile, dt0)
        for point in side_channel.mi_vs_binwidth(prior, hists, sc.bin_widths_ps, (0,)):
            rows.append((dt0, point.bin_width_ps, point.mi_bits))
    return FigureTable("fig7", ["dt0_ps", "bin_width_ps", "mi_bits"], rows)
