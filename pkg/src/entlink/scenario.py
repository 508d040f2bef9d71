"""Scenario files: one flat INI document describing a full link simulation.

Sections and keys (all optional; unknown names are rejected):

    [link]        distance_m, wavelength_m, beam_waist_m, aperture_radius_a_m,
                  aperture_radius_b_m, pointing_sigma_rad, pointing_samples,
                  correlation_mode (anticorrelated|inverted)
    [source]      pair_rate_hz, bandwidth_hz, detector_jitter_s
    [channel_a]   efficiency, background_rate_hz, true_delay_ps
    [channel_b]   efficiency, background_rate_hz, true_delay_ps
    [protocol]    duration_s, time_bin_ps, coincidence_window_ps, max_lag_ps
                  (0 = automatic), qber_sample_fraction, cascade_passes,
                  security_margin_bits, s_threshold, ec_efficiency
    [chsh]        visibility, accidental_fraction, state (correlated|singlet),
                  n_pairs, alice_angles_deg, bob_angles_deg (comma triples)
    [sidechannel] sigma_ps, centroid_offset_ps, bin_widths_ps (lo:hi:step or
                  comma list), start_offsets_ps, prior (comma list)
    [run]         seed

Link defaults follow the reference platform: 810 nm pairs (405 nm pump,
degenerate down-conversion), 8 cm telescope apertures, 50 microradian
pointing uncertainty.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from entlink.beam_optics import ApertureSpec, BeamGeometry, CorrelationMode
from entlink.chsh import BasisSettings, PairStateModel
from entlink.pair_source import ChannelModel, SourceModel

__all__ = ["Scenario", "ScenarioError", "load_scenario"]


class ScenarioError(ValueError):
    """Malformed, unknown or out-of-range scenario content."""


@dataclass
class LinkConfig:
    distance_m: float = 300.0
    wavelength_m: float = 810e-9
    beam_waist_m: float = 0.04
    aperture_radius_a_m: float = 0.04  # 8 cm telescope diameter
    aperture_radius_b_m: float = 0.04
    pointing_sigma_rad: float = 50e-6
    pointing_samples: int = 128
    correlation_mode: str = "inverted"


@dataclass
class SourceConfig:
    pair_rate_hz: float = 2e7
    bandwidth_hz: float = 500e6
    detector_jitter_s: float = 100e-12


@dataclass
class ChannelConfig:
    efficiency: float = 0.9
    background_rate_hz: float = 1e4
    true_delay_ps: int = 0


@dataclass
class ProtocolConfig:
    duration_s: float = 0.005
    time_bin_ps: int = 1296
    coincidence_window_ps: int = 2592
    max_lag_ps: int = 0  # 0: half the span, capped at 2**20 bins
    qber_sample_fraction: float = 0.1
    cascade_passes: int = 4
    security_margin_bits: int = 100
    s_threshold: float = 2.0
    ec_efficiency: float = 1.2  # leakage/Shannon-limit ratio for estimates


@dataclass
class ChshConfig:
    visibility: float = 0.98
    accidental_fraction: float = 0.0
    state: str = "correlated"
    n_pairs: int = 100000
    alice_angles_deg: tuple[float, float, float] = (22.5, 67.5, 0.0)
    bob_angles_deg: tuple[float, float, float] = (0.0, 45.0, 0.0)


@dataclass
class SideChannelConfig:
    sigma_ps: float = 350.0
    centroid_offset_ps: int = 350
    bin_widths_ps: tuple[int, ...] = tuple(range(50, 3050, 50))
    start_offsets_ps: tuple[int, ...] = (0,)
    prior: tuple[float, ...] = (0.5, 0.5)


@dataclass
class RunConfig:
    seed: int = 1


@dataclass
class Scenario:
    """Aggregated, validated configuration for every subcommand."""

    link: LinkConfig = field(default_factory=LinkConfig)
    source: SourceConfig = field(default_factory=SourceConfig)
    channel_a: ChannelConfig = field(default_factory=ChannelConfig)
    channel_b: ChannelConfig = field(default_factory=lambda: ChannelConfig(true_delay_ps=4096000))
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    chsh: ChshConfig = field(default_factory=ChshConfig)
    sidechannel: SideChannelConfig = field(default_factory=SideChannelConfig)
    run: RunConfig = field(default_factory=RunConfig)

    # -- module object factories -------------------------------------------

    def beam_geometry(self) -> BeamGeometry:
        return BeamGeometry(
            wavelength=self.link.wavelength_m,
            waist=self.link.beam_waist_m,
            distance=self.link.distance_m,
        )

    def apertures(self, offset=(0.0, 0.0)) -> tuple[ApertureSpec, ApertureSpec]:
        return (
            ApertureSpec(self.link.aperture_radius_a_m, offset),
            ApertureSpec(self.link.aperture_radius_b_m, offset),
        )

    def correlation_mode(self) -> CorrelationMode:
        try:
            return CorrelationMode(self.link.correlation_mode)
        except ValueError:
            raise ScenarioError(
                f"unknown correlation_mode {self.link.correlation_mode!r}"
            ) from None

    def source_model(self) -> SourceModel:
        return SourceModel(
            pair_rate=self.source.pair_rate_hz,
            bandwidth=self.source.bandwidth_hz,
            detector_jitter=self.source.detector_jitter_s,
            coincidence_bin=self.protocol.coincidence_window_ps * 1e-12,
        )

    def channel_models(self, seed: int) -> tuple[ChannelModel, ChannelModel]:
        return (
            ChannelModel(
                efficiency=self.channel_a.efficiency,
                background_rate=self.channel_a.background_rate_hz,
                true_delay_ps=self.channel_a.true_delay_ps,
                rng_seed=seed + 1,
            ),
            ChannelModel(
                efficiency=self.channel_b.efficiency,
                background_rate=self.channel_b.background_rate_hz,
                true_delay_ps=self.channel_b.true_delay_ps,
                rng_seed=seed + 2,
            ),
        )

    def basis_settings(self) -> BasisSettings:
        return BasisSettings(alice=self.chsh.alice_angles_deg, bob=self.chsh.bob_angles_deg)

    def state_model(self) -> PairStateModel:
        return PairStateModel(
            visibility=self.chsh.visibility,
            accidental_fraction=self.chsh.accidental_fraction,
            state=self.chsh.state,
        )


_SECTION_TYPES = {
    "link": LinkConfig,
    "source": SourceConfig,
    "channel_a": ChannelConfig,
    "channel_b": ChannelConfig,
    "protocol": ProtocolConfig,
    "chsh": ChshConfig,
    "sidechannel": SideChannelConfig,
    "run": RunConfig,
}


def _parse_int_list(text: str) -> tuple[int, ...]:
    text = text.strip()
    if ":" in text:
        parts = [int(p) for p in text.split(":")]
        if len(parts) != 3:
            raise ValueError("range must be lo:hi:step")
        lo, hi, step = parts
        return tuple(range(lo, hi + 1, step))
    return tuple(int(p) for p in text.split(","))


def _parse_value(name: str, text: str, annotation: str):
    text = text.strip()
    try:
        if annotation == "int":
            return int(text)
        if annotation == "float":
            return float(text)
        if annotation == "str":
            return text
        if annotation.startswith("tuple[int"):
            return _parse_int_list(text)
        if annotation.startswith("tuple[float, float, float]"):
            values = tuple(float(p) for p in text.split(","))
            if len(values) != 3:
                raise ValueError("expected exactly 3 comma-separated values")
            return values
        if annotation.startswith("tuple[float"):
            return tuple(float(p) for p in text.split(","))
    except ValueError as exc:
        raise ScenarioError(f"bad value for {name}: {exc}") from None
    raise ScenarioError(f"unhandled type for {name}: {annotation}")


def parse_scenario(text: str, origin: str = "<scenario>") -> Scenario:
    """Parse scenario text; unknown sections or keys are errors."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=origin)
    except configparser.Error as exc:
        raise ScenarioError(f"{origin}: {exc}") from None

    scenario = Scenario()
    for section in parser.sections():
        if section not in _SECTION_TYPES:
            valid = ", ".join(sorted(_SECTION_TYPES))
            raise ScenarioError(f"{origin}: unknown section [{section}] (valid: {valid})")
        config = getattr(scenario, section)
        known = {f.name: f.type for f in fields(config)}
        for key, raw in parser.items(section):
            if key not in known:
                valid = ", ".join(sorted(known))
                raise ScenarioError(
                    f"{origin}: unknown key {key!r} in [{section}] (valid: {valid})"
                )
            setattr(config, key, _parse_value(f"[{section}] {key}", raw, known[key]))
    _validate(scenario, origin)
    return scenario


def load_scenario(path) -> Scenario:
    """Load and validate a scenario file."""
    path = Path(path)
    return parse_scenario(path.read_text(), origin=str(path))


def _validate(scenario: Scenario, origin: str) -> None:
    try:
        scenario.beam_geometry()
        scenario.apertures()
        scenario.correlation_mode()
        scenario.source_model()
        scenario.channel_models(seed=0)
        scenario.basis_settings()
        scenario.state_model()
    except ValueError as exc:
        raise ScenarioError(f"{origin}: {exc}") from None
    p = scenario.protocol
    if p.duration_s <= 0 or p.time_bin_ps <= 0 or p.coincidence_window_ps <= 0:
        raise ScenarioError(f"{origin}: protocol durations and windows must be positive")
    if not 0.0 < p.qber_sample_fraction < 1.0:
        raise ScenarioError(f"{origin}: qber_sample_fraction must be in (0, 1)")
    if p.cascade_passes < 1 or p.security_margin_bits < 0 or p.max_lag_ps < 0:
        raise ScenarioError(f"{origin}: bad protocol integers")
    if scenario.link.pointing_samples < 1:
        raise ScenarioError(f"{origin}: pointing_samples must be >= 1")
    if scenario.chsh.n_pairs < 1:
        raise ScenarioError(f"{origin}: n_pairs must be >= 1")
    sc = scenario.sidechannel
    if sc.sigma_ps <= 0 or sc.centroid_offset_ps < 0:
        raise ScenarioError(f"{origin}: side-channel sigma/offset out of range")
    if not sc.bin_widths_ps or min(sc.bin_widths_ps) <= 0:
        raise ScenarioError(f"{origin}: bin widths must be positive")
