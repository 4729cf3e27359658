//! Latent representations of battery impedance spectra and capacity estimation.
//!
//! An information-maximizing GAN is trained on impedance spectra (real and
//! imaginary parts on a 60-point log-frequency grid); the auxiliary head maps
//! any spectrum to a nine-dimensional latent code, and exact Gaussian process
//! regression maps codes to cell capacity with a predictive variance.
//!
//! * [`ndgrad`]: reverse-mode autodiff and the AdamP optimizer
//! * [`eisdata`]: spectra, capacity records, CSV I/O, resampling, perturbation
//! * [`ecmoracle`]: synthetic spectra from an equivalent circuit with aging
//! * [`eisgan`]: networks, training, latent extraction and selection
//! * [`gpr`]: squared-exponential GP regression
//! * [`pipeline`]: the end-to-end study behind the `eisgan-soh` CLI

pub mod ndgrad;
pub mod eisdata;
pub mod ecmoracle;
pub mod seeding;
pub mod gpr;
pub mod eisgan;
pub mod pipeline;
