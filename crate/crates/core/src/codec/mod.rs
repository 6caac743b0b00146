//! The non-differentiable channel: block-transform codec, feature-map
//! entropy coder, and the container both write into.

pub mod arith;
pub mod bitstream;
pub mod dct;
pub mod dnnc;
pub mod scic;
pub mod table;

pub use arith::{arith_decode, arith_encode, AdaptiveModel};
pub use bitstream::{Bitstream, Header};
pub use dct::{dct8, idct8};
pub use dnnc::{decode_dnnc, encode_dnnc, SymbolMap};
pub use scic::{decode_scic, encode_scic, g_map};
pub use table::{zigzag, QuantTable};
