//! Jordan recurrent networks learning exhaustive 4-bit binary addition and
//! subtraction, answering under a confidence-threshold halting rule, and the
//! statistics used to compare their answer steps across carry classes.
//!
//! * [`arithmetic`]: operation datasets, carry counting, problem-set sampling
//! * [`network`]: forward unroll, digit decisions, loss and BPTT gradients
//! * [`training`]: initialization, Adam, train-to-full-accuracy
//! * [`stats`]: IQR filter, one-way ANOVA, Games-Howell
//! * [`experiment`]: configuration grids, aggregation, reports

pub mod arithmetic;
pub mod error;
pub mod experiment;
pub mod network;
pub mod par;
pub mod seed;
pub mod stats;
pub mod training;

pub use arithmetic::{Operand, Operation, Operator};
pub use error::{Error, Result};
pub use network::{ModelConfig, NetworkParams, SavedNetwork};
pub use training::{AdamConfig, TrialRecord};
