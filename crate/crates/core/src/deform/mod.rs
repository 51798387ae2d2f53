//! Time-conditioned deformation field: positional encoding, the offset MLP,
//! annealed time noise and the canonical → deformed mapping.

mod ast;
mod encoding;
mod mlp;
mod offsets;

pub use ast::{ast_sample, AstSchedule};
pub use encoding::{encoded_dim, positional_encoding, positional_encoding_derivative};
pub use mlp::{DeformCache, DeformGrads, DeformNet, DeformNetConfig, Linear};
pub use offsets::{apply_offsets, apply_offsets_backward, CloudGrads, OffsetGrads, Offsets, SCALE_FLOOR};
