//! Zero-shot prompt editing for latent-diffusion text conditioning.
//!
//! The pipeline is: [`Vocabulary`] (CLIP BPE tokenizer) produces a
//! [`TokenSequence`]; [`TextEncoder`] turns it into a [`PromptEmbedding`];
//! [`apply_eos_edit`] writes a scaled target `<EOS>` state into the source
//! prompt's `<EOS>` slot; [`generate`] samples an image from either embedding
//! with the same seed so the pair can be compared.

pub mod archive;
pub mod edit;
pub mod error;
pub mod sampler;
pub mod tensor;
pub mod text_encoder;
pub mod tokenizer;

pub use edit::{
    apply_eos_edit, embedding_distance, linspace, sweep_guidance, EditSpec, EditedEmbedding,
    DEFAULT_GUIDANCE,
};
pub use error::{Error, ErrorClass, Result};
pub use sampler::{
    backend_for, generate, BackendId, Conditioning, DiffusionBackend, GenerationRequest,
    ImageResult, Latent, Provenance, RgbImage, ToyBackend, DEFAULT_STEPS,
};
pub use tensor::Matrix;
pub use text_encoder::{Activation, EncoderConfig, EncoderWeights, PromptEmbedding, TextEncoder};
pub use tokenizer::{eos_index_of, TokenSequence, Vocabulary};
