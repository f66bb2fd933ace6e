// Positivity checks are written `!(x > 0.0)` so that NaN fails them too.
// Mixture sums index several parallel arrays by component.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assets;
pub mod bc;
pub mod executor;
pub mod boundary;
pub mod lpvds;
pub mod modulation;
pub mod ltl;
pub mod optim;
pub mod segmentation;
pub mod sim;
pub mod types;

pub use types::*;
