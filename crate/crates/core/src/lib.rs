pub mod attack;
pub mod config;
pub mod defense;
pub mod denoise;
pub mod error;
pub mod harness;
pub mod irispipe;
pub mod pgm;
pub mod provenance;
pub mod rng;
pub mod tensornet;
pub mod wavelet;
