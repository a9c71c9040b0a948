//! Desk-scale simulator for paper-surface PUF authentication.
//!
//! The crate models the full life of a paper-based product fingerprint:
//!
//! - [`surface`] generates synthetic paper micro-surfaces (norm maps) and
//!   applies physical degradations (crumpling, wetting, scribbling, tearing).
//! - [`optics`] renders surface images under a fully diffused reflection
//!   model, in flatbed-scanner mode (four orientations) and camera mode
//!   (point lights, four or more shots).
//! - [`features`] registers captures, estimates norm maps back out of the
//!   images (scanner differences or per-pixel least squares), and quantizes
//!   them into binary PUF responses.
//! - [`pufmetrics`] evaluates robustness, uniqueness, uniformity, similarity
//!   scores, and empirical equal error rates.
//! - [`authcore`] holds the reference store (plain, salted-hash, or
//!   LSH-indexed), the decision rule, query lockout, and a hash-chained
//!   audit ledger.
//! - [`attacks`] mounts the adversary playbook (replay, leakage, inversion,
//!   hill climbing, malicious registration, marker tampering) against a
//!   configured system and measures what the mitigations buy.
//! - [`chainnet`] simulates a supply-chain network of peers with a
//!   round-robin block ledger and the distributed mutual-authentication
//!   protocol, in client-server, P2P, and hybrid arrangements.
//!
//! Everything is deterministic: all randomness flows from explicit 64-bit
//! seeds, so any run can be replayed bit for bit.

pub mod attacks;
pub mod authcore;
pub mod chainnet;
pub mod features;
pub mod optics;
pub mod population;
pub mod pufmetrics;
pub mod surface;

pub(crate) mod util;
