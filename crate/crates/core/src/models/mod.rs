//! Built-in test problems.

mod gm_target;
pub mod lv;
pub mod ode;
pub mod signaling;

pub use gm_target::{gm_target, GmTarget};
