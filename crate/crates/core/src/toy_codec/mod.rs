//! A miniature closed-loop block codec: DC intra / integer-pel inter
//! prediction, 8x8 DCT and uniform scalar quantization.

mod dct;
mod encoder;
mod motion;
mod quant;


pub use dct::{dct2, idct2, Dct};
pub use encoder::{
    code_frame, decode_clip, encode_clip, noise_samples, pad_to_block, predict_frame, recode_frame, CodecConfig,
    CodecMetadata, FrameCoding, FrameMeta, Gop, Prediction, SAMPLE_SCALE,
};
pub use motion::{block_motion_search, search_block, BlockMotion, BlockRect, PredMode};
pub use quant::{dequantize, dequantize_all, qstep, quantize, quantize_all};
