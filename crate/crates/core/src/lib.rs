//! Ginzburg-Landau minimisers on the unit disk with values in `R^3`, their
//! radial bifurcation thresholds, linearised spectra and the harmonic-map
//! limit.

pub mod banded;
pub mod potential;
pub mod radial;
pub mod spectral;
pub mod bifurcation;
pub mod field;
pub mod harmonic;
pub mod cli;
