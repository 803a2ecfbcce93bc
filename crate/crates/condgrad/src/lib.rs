//! Constrained training with conditional gradients.
//!
//! The crate provides a catalogue of constraint oracles (Frobenius,
//! nuclear, ℓ1, ℓ∞, group ℓ1/ℓ∞, total-variation and path-norm balls),
//! optimizer loops that use them (CG, layer-wise Path-CG, PGD, SGD), a
//! small feedforward ReLU network with backpropagation, dataset and
//! experiment plumbing, and brute-force oracles that double-check every
//! closed form.

pub mod constraints;
pub mod harness;
pub mod linalg;
pub mod network;
pub mod optim;
pub mod verify;
