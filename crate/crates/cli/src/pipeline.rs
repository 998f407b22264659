//! Loaded models plus the per-invocation context every command shares.

use eos_edit_core::{
    backend_for, generate, Conditioning, DiffusionBackend, Error, GenerationRequest, ImageResult,
    PromptEmbedding, Provenance, Result, TextEncoder, Vocabulary,
};

use crate::config::RunConfig;
use crate::output::{sidecar_name, PromptRecord, Sidecar, Staging};

/// Which heavy components a command needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Needs {
    Tokenizer,
    Encoder,
    Generation,
}

pub struct Pipeline {
    pub config: RunConfig,
    pub vocab: Vocabulary,
    encoder: Option<TextEncoder>,
    backend: Option<Box<dyn DiffusionBackend>>,
    command: Vec<String>,
}

impl Pipeline {
    pub fn open(config: RunConfig, command: Vec<String>, needs: Needs) -> Result<Self> {
        let vocab = Vocabulary::from_files(&config.vocab, &config.merges)?;
        let mut encoder = None;
        let mut backend = None;
        if needs != Needs::Tokenizer {
            let weights = config.encoder_weights.as_ref().ok_or_else(|| {
                Error::Input("no encoder weights: pass --encoder-weights or set `encoder_weights`".into())
            })?;
            let enc = TextEncoder::from_file(weights, config.encoder_config()?)?;
            if enc.config().vocab_size != vocab.vocab_size() || enc.config().context_len != vocab.context_len() {
                return Err(Error::Integrity(format!(
                    "encoder expects vocab {} / context {}, tokenizer has {} / {}",
                    enc.config().vocab_size,
                    enc.config().context_len,
                    vocab.vocab_size(),
                    vocab.context_len()
                )));
            }
            if needs == Needs::Generation {
                backend = Some(backend_for(config.backend, enc.config().d_model)?);
            }
            encoder = Some(enc);
        }
        Ok(Self {
            config,
            vocab,
            encoder,
            backend,
            command,
        })
    }

    fn encoder(&self) -> Result<&TextEncoder> {
        self.encoder
            .as_ref()
            .ok_or_else(|| Error::Input("this command was opened without an encoder".into()))
    }

    fn backend(&self) -> Result<&dyn DiffusionBackend> {
        self.backend
            .as_deref()
            .ok_or_else(|| Error::Backend("this command was opened without a backend".into()))
    }

    pub fn encode(&self, prompt: &str) -> Result<PromptEmbedding> {
        self.encoder()?.encode_text(&self.vocab, prompt)
    }

    pub fn prompt_record(&self, role: &str, text: &str) -> PromptRecord {
        let seq = self.vocab.encode(text);
        PromptRecord {
            role: role.to_owned(),
            text: text.to_owned(),
            normalized: self.vocab.normalize(text),
            token_ids: seq.ids()[..=seq.eos_index()].to_vec(),
            eos_index: seq.eos_index(),
        }
    }

    /// One sampling run with the configured seed, steps and guidance.
    pub fn generate(&self, conditioning: impl Into<Conditioning>, unconditional: &PromptEmbedding) -> Result<ImageResult> {
        let mut request = GenerationRequest::new(
            conditioning,
            unconditional.clone(),
            self.config.seed,
            self.config.backend,
        );
        request.steps = self.config.steps;
        request.cfg_scale = self.config.cfg_scale;
        generate(self.backend()?, &request)
    }

    pub fn staging(&self) -> Result<Staging> {
        Staging::new(&self.config.out)
    }

    /// Writes `artifact` and its provenance sidecar.
    pub fn emit(
        &self,
        staging: &mut Staging,
        artifact: &str,
        bytes: &[u8],
        prompts: &[PromptRecord],
        generations: &[Provenance],
        details: serde_json::Value,
    ) -> Result<()> {
        staging.write(artifact, bytes)?;
        self.emit_sidecar(staging, artifact, prompts, generations, details)
    }

    pub fn emit_sidecar(
        &self,
        staging: &mut Staging,
        artifact: &str,
        prompts: &[PromptRecord],
        generations: &[Provenance],
        details: serde_json::Value,
    ) -> Result<()> {
        let sidecar = Sidecar {
            artifact,
            tool: concat!("eos-edit ", env!("CARGO_PKG_VERSION")),
            command: &self.command,
            config: &self.config,
            config_digest: self.config.digest(),
            encoder_config_digest: self.encoder.as_ref().map(|e| e.config().digest()),
            prompts,
            generations,
            details,
        };
        staging.write_json(&sidecar_name(artifact), &sidecar)
    }
}
