//! Pseudospectral simulator and verification lab for the 3D incompressible
//! Navier–Stokes equations on T³ driven by multiplicative transport noise
//! `P((b·∇)u) dW`, with a cutoff-truncated variant and its stopping time.

pub mod spectral;
pub mod dynamics;
pub mod noise;
pub mod picard;
pub mod stats;
pub mod ensemble;
pub mod initial_data;
pub mod config;
pub mod cli_io;
