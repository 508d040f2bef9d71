"""Entangled-pair free-space QKD link simulator and post-processing toolkit.

Submodules:
    beam_optics   Gaussian-beam capture and pair-coincidence probabilities
    pair_source   source model, pair correlation profile, stream generation
    coincidence   binning, FFT/direct cross-correlation, pair extraction
    key_pipeline  sifting, error estimation, cascade, privacy amplification
    chsh          polarization simulation and CHSH statistics
    side_channel  timing-histogram mutual-information analysis
    scenario      INI scenario files
    pipeline      end-to-end scenario runs
    cli           command-line entry point
"""

__version__ = "0.1.0"
