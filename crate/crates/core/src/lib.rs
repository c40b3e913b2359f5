//! Deep-Q classification of 3D image volumes.
//!
//! The crate has two halves. The first extracts binary class labels from
//! free-text report impressions with a pair-trained sentence encoder
//! ([`labeler`]). The second classifies volumes with a two-input Deep-Q
//! network trained by TD(0) on a five-step prediction MDP ([`rl`]), and
//! compares it to a supervised CNN ([`sdl`]) with McNemar's test
//! ([`stats`]).
//!
//! Everything runs on a small reverse-mode autodiff engine ([`autodiff`]).
//! Synthetic phantom volumes ([`phantom`]) stand in for real scans.

pub mod autodiff;
pub mod config;
pub mod error;
pub mod labeler;
pub mod model;
pub mod phantom;
pub mod rl;
pub mod sdl;
pub mod stats;
pub(crate) mod util;

pub use error::{Error, Result};
