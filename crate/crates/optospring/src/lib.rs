//! Simulation and analysis toolkit for a pair of mechanical oscillators
//! coupled by the intracavity field of a driven optical resonator.
//!
//! The light field detuned from cavity resonance establishes an optical
//! spring between the oscillators. The same field carries information out of
//! the cavity, so the coupling is accompanied by quantum backaction noise.
//! This crate models both sides of that trade:
//!
//! * [`model`] — physical parameters, unit conventions, pulse schedules and
//!   the run configuration.
//! * [`spring`] — optical spring constants, normal-mode structure and the
//!   dynamical stability boundary.
//! * [`ampmodel`] — steady-state heterodyne sideband spectra from a linear
//!   amplifier model, plus the inverse problems (cooperativity and
//!   occupation extraction).
//! * [`dynamics`] — time-domain simulation of the excite / couple / read-out
//!   pulse protocol with synthetic heterodyne traces and Monte-Carlo
//!   parameter-uncertainty ensembles.
//! * [`moments`] — second-moment master-equation integrator for backaction
//!   heating and cross-oscillator noise correlations.
//! * [`filter`] — matched-filter quadrature estimation and ensemble
//!   statistics (variance ellipses, added phonons, correlation coefficient).
//! * [`cli`] — the scenario runner behind the `optospring` binary.
//!
//! All internal frequencies are angular (rad/s); configuration files use
//! ordinary frequencies in Hz. Damping rates are energy decay rates, so
//! amplitude ring-downs decay at `gamma / 2`.

// fixed-size paired-array numerics reads more clearly with explicit indices
#![allow(clippy::needless_range_loop)]

pub mod ampmodel;
pub mod cli;
pub mod dynamics;
pub mod filter;
pub mod model;
pub mod moments;
pub mod spectral;
pub mod spring;
