//! Activation map compression: L1 activation sparsification during
//! fine-tuning, uniform quantization, and entropy coding with
//! sparse-exponential-Golomb and comparison coders.

pub mod bitstream;
pub mod codecs;
pub mod quantizer;
pub mod tensorio;
pub mod sparsetrain;
pub mod pipeline;
pub mod cli;
