//! Conditioning assembly, the mel generator, and the two conditioned
//! discriminators.
//!
//! The generator is fully convolutional: an input conv lifts the assembled
//! `T x 5 x C` conditioning tensor to 160 channels, five blocks each run a
//! transposed conv (upsampling the frequency axis, channel schedule
//! [160, 144, 128, 112, 96]) followed by a pre-activation residual block,
//! and a final pointwise conv emits `T x 80` log-mel frames. Swish
//! activations throughout, no normalization or dropout.
//!
//! Both discriminators see the mel stacked with detached conditioning
//! channels (normalized F0, speaker embedding, phoneme one-hot): a strided
//! 2D stack scoring local time-frequency patches and a stride-1 1D stack
//! scoring per-frame spectral structure.

mod checkpoint;
mod conditioning;
mod discriminator;
mod generator;
mod speaker;

pub use checkpoint::{load_checkpoint_records, save_checkpoint, CheckpointError, CKPT_HEADER};
pub use conditioning::{
    assemble, assemble_to_tensor, discriminator_conditioning, normalize_f0, FeatureFrames,
    PhonemeEmbedding,
};
pub use discriminator::{Discriminator1d, Discriminator2d};
pub use generator::Generator;
pub use speaker::{SpeakerStats, SpeakerTable};

use crate::tensor::{Elem, ParamId, ParamSet, Tensor};
use rand::Rng;
use thiserror::Error;

/// Frequency rows the conditioning tensor is replicated to before the input
/// conv; the generator's stride schedule upsamples them 16x to the mel bins.
pub const FREQ_ROWS: usize = 5;

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("conditioning stream '{name}' has {got} frames, expected {expected}")]
    LengthMismatch { name: &'static str, got: usize, expected: usize },
    #[error("F0 value {0} is not positive; interpolate the contour first")]
    NonPositiveF0(f64),
    #[error("unknown speaker '{0}'")]
    UnknownSpeaker(String),
    #[error("speaker '{0}' is already registered")]
    DuplicateSpeaker(String),
    #[error("speaker '{0}' has no prosody stats")]
    MissingStats(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Dims that depend on the corpus or were left open by the architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_symbols: usize,
    pub speaker_dim: usize,
    pub phoneme_dim: usize,
    pub mel_bins: usize,
}

impl ModelConfig {
    pub fn new(n_symbols: usize) -> Self {
        Self { n_symbols, speaker_dim: 32, phoneme_dim: 64, mel_bins: 80 }
    }

    /// Channels of the assembled conditioning tensor:
    /// F0 + intensity + phoneme embedding + positional pairs + speaker.
    pub fn cond_channels(&self) -> usize {
        1 + 1 + self.phoneme_dim + crate::align::POSITIONAL_DIMS + self.speaker_dim
    }

    /// Channels of the discriminator conditioning block:
    /// F0 + speaker + phoneme one-hot.
    pub fn disc_cond_channels(&self) -> usize {
        1 + self.speaker_dim + self.n_symbols
    }
}

/// Generator convolution schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub channels: [usize; 5],
    pub strides: [(usize, usize); 5],
    pub base_kernel: (usize, usize),
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            channels: [160, 144, 128, 112, 96],
            strides: [(1, 2), (1, 2), (1, 2), (1, 2), (1, 1)],
            base_kernel: (3, 3),
        }
    }
}

impl GeneratorConfig {
    /// Transposed-conv kernel of a block: base kernel multiplied by stride.
    pub fn tconv_kernel(&self, block: usize) -> (usize, usize) {
        let (st, sf) = self.strides[block];
        (self.base_kernel.0 * st, self.base_kernel.1 * sf)
    }

    pub fn frequency_upsampling(&self) -> usize {
        self.strides.iter().map(|(_, sf)| sf).product()
    }

    /// Analytic time receptive-field radius of the stacked time-stride-1
    /// convs (input conv + per block: transposed conv and two residual
    /// convs; the final pointwise conv adds nothing).
    pub fn time_receptive_radius(&self) -> usize {
        let mut r = (self.base_kernel.0 - 1) / 2;
        for block in 0..self.channels.len() {
            let (kt, _) = self.tconv_kernel(block);
            debug_assert_eq!(self.strides[block].0, 1, "time axis is never strided");
            r += (kt - 1) / 2;
            r += 2 * ((self.base_kernel.0 - 1) / 2);
        }
        r
    }
}

/// Discriminator schedules (time x frequency for the 2D branch).
pub const DISC2D_CHANNELS: [usize; 5] = [80, 100, 200, 300, 100];
pub const DISC2D_STRIDES: [(usize, usize); 5] = [(2, 2), (1, 2), (1, 1), (1, 1), (1, 1)];
pub const DISC1D_CHANNELS: [usize; 4] = [128, 128, 512, 128];
pub const DISC1D_KERNELS: [usize; 4] = [3, 3, 3, 1];

/// He-uniform kernel init, zero bias. `cout` is explicit because transposed
/// kernels carry their output channels in dim 3 rather than last.
pub(crate) fn conv_init<T: Elem, R: Rng>(
    set: &mut ParamSet<T>,
    name: &str,
    kernel_shape: &[usize],
    fan_in: usize,
    cout: usize,
    rng: &mut R,
) -> (ParamId, ParamId) {
    let limit = (6.0 / fan_in as f64).sqrt();
    let w = Tensor::from_fn(kernel_shape, |_| T::from_f64(rng.gen_range(-limit..limit)));
    let wid = set.add(format!("{name}.w"), w);
    let bid = set.add(format!("{name}.b"), Tensor::zeros(&[cout]));
    (wid, bid)
}

/// Everything trainable plus the configs needed to rebuild it.
pub struct VcModel<T: Elem = f32> {
    pub model_cfg: ModelConfig,
    pub gen_cfg: GeneratorConfig,
    pub set: ParamSet<T>,
    pub embedding: PhonemeEmbedding,
    pub generator: Generator,
    pub disc2d: Discriminator2d,
    pub disc1d: Discriminator1d,
    pub speakers: SpeakerTable,
}

impl<T: Elem> VcModel<T> {
    pub fn new(
        model_cfg: ModelConfig,
        speaker_names: &[String],
        seed: u64,
    ) -> Result<Self, ModelError> {
        use rand::SeedableRng;
        let gen_cfg = GeneratorConfig::default();
        assert_eq!(
            FREQ_ROWS * gen_cfg.frequency_upsampling(),
            model_cfg.mel_bins,
            "stride schedule must upsample {} rows to {} mel bins",
            FREQ_ROWS,
            model_cfg.mel_bins
        );
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut set = ParamSet::new();
        let embedding = PhonemeEmbedding::init(&mut set, &model_cfg, &mut rng);
        let generator = Generator::init(&mut set, &model_cfg, &gen_cfg, &mut rng);
        let disc2d = Discriminator2d::init(&mut set, &model_cfg, &mut rng);
        let disc1d = Discriminator1d::init(&mut set, &model_cfg, &mut rng);
        let mut speakers = SpeakerTable::new(model_cfg.speaker_dim);
        for name in speaker_names {
            speakers.register(&mut set, name, &mut rng)?;
        }
        Ok(Self { model_cfg, gen_cfg, set, embedding, generator, disc2d, disc1d, speakers })
    }

    /// Parameters updated in the generator phase: generator stack, phoneme
    /// embedding conv, and the speaker table.
    pub fn generator_param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.embedding.param_ids();
        ids.extend(self.generator.param_ids());
        ids.extend(self.speakers.param_ids());
        ids
    }

    /// Parameters updated in the discriminator phase.
    pub fn discriminator_param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.disc2d.param_ids();
        ids.extend(self.disc1d.param_ids());
        ids
    }

    /// Trainable parameter count of the generation path (conv stack plus
    /// the phoneme embedding conv; the speaker lookup scales with the
    /// corpus and is excluded).
    pub fn generator_parameter_count(&self) -> usize {
        let mut ids = self.embedding.param_ids();
        ids.extend(self.generator.param_ids());
        self.set.total_elements(&ids)
    }
}
