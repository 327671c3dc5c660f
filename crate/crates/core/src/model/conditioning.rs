//! Input feature processing and conditioning tensor assembly.

use super::{conv_init, ModelConfig, ModelError, FREQ_ROWS};
use crate::align::PhonemeFrameStream;
use crate::tensor::{Elem, Graph, NodeId, ParamId, ParamSet, Tensor};
use rand::Rng;

/// Speaker-relative log-F0: `ln(f0) - speaker_mean_log_f0` per frame.
/// Expects an interpolated contour (no zeros).
pub fn normalize_f0(values_hz: &[f64], speaker_mean_log_f0: f64) -> Result<Vec<f32>, ModelError> {
    values_hz
        .iter()
        .map(|&v| {
            if v > 0.0 {
                Ok((v.ln() - speaker_mean_log_f0) as f32)
            } else {
                Err(ModelError::NonPositiveF0(v))
            }
        })
        .collect()
}

/// The kernel-3 conv that turns augmented one-hots into learned per-frame
/// phoneme embeddings (label, length, and one label of context each side).
#[derive(Debug, Clone)]
pub struct PhonemeEmbedding {
    pub w: ParamId,
    pub b: ParamId,
    in_dim: usize,
    out_dim: usize,
}

impl PhonemeEmbedding {
    pub(crate) fn init<T: Elem, R: Rng>(
        set: &mut ParamSet<T>,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Self {
        let in_dim = cfg.n_symbols + 1;
        let out_dim = cfg.phoneme_dim;
        let (w, b) = conv_init(set, "embed.phoneme", &[3, in_dim, out_dim], 3 * in_dim, out_dim, rng);
        Self { w, b, in_dim, out_dim }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w, self.b]
    }

    /// `T x (n_symbols + 1)` one-hot + length block -> `T x phoneme_dim`.
    pub fn embed<T: Elem>(
        &self,
        g: &mut Graph<T>,
        set: &ParamSet<T>,
        stream: &PhonemeFrameStream,
    ) -> NodeId {
        let t = stream.n_frames();
        let mut data = Vec::with_capacity(t * self.in_dim);
        for frame in 0..t {
            data.extend(stream.label_block(frame).iter().map(|&v| T::from_f64(v as f64)));
        }
        let x = g.constant(Tensor::new(&[t, self.in_dim], data));
        let w = g.param(set, self.w);
        let b = g.param(set, self.b);
        let y = g.conv1d(x, w, Some(b), 1);
        debug_assert_eq!(g.value(y).shape(), &[t, self.out_dim]);
        y
    }
}

/// Frame-aligned conditioning features for one utterance.
#[derive(Debug, Clone)]
pub struct FeatureFrames {
    pub f0_norm: Vec<f32>,
    pub intensity: Vec<f32>,
    pub stream: PhonemeFrameStream,
}

impl FeatureFrames {
    pub fn new(
        f0_norm: Vec<f32>,
        intensity: Vec<f32>,
        stream: PhonemeFrameStream,
    ) -> Result<Self, ModelError> {
        let t = stream.n_frames();
        if f0_norm.len() != t {
            return Err(ModelError::LengthMismatch { name: "f0", got: f0_norm.len(), expected: t });
        }
        if intensity.len() != t {
            return Err(ModelError::LengthMismatch {
                name: "intensity",
                got: intensity.len(),
                expected: t,
            });
        }
        Ok(Self { f0_norm, intensity, stream })
    }

    pub fn n_frames(&self) -> usize {
        self.stream.n_frames()
    }

    /// Crops frames `[start, start + len)` (for fixed-length excerpts).
    pub fn crop(&self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.n_frames());
        let labels = &self.stream_labels()[start..start + len];
        // rebuild a stream slice by re-encoding the cropped label runs;
        // positional dims are recomputed for the excerpt
        let mut entries: Vec<(usize, usize)> = Vec::new();
        for &l in labels {
            match entries.last_mut() {
                Some((prev, n)) if *prev == l => *n += 1,
                _ => entries.push((l, 1)),
            }
        }
        let alignment = crate::align::PhonemeAlignment { entries };
        let stream = re_encode(&alignment, self.stream.n_symbols());
        Self {
            f0_norm: self.f0_norm[start..start + len].to_vec(),
            intensity: self.intensity[start..start + len].to_vec(),
            stream,
        }
    }

    fn stream_labels(&self) -> Vec<usize> {
        (0..self.stream.n_frames())
            .map(|t| {
                self.stream.row(t)[..self.stream.n_symbols()]
                    .iter()
                    .position(|&v| v == 1.0)
                    .expect("one-hot row")
            })
            .collect()
    }
}

fn re_encode(a: &crate::align::PhonemeAlignment, n_symbols: usize) -> PhonemeFrameStream {
    // encode_stream needs an inventory only for its size; build a stub
    let symbols: Vec<(String, bool)> = (0..n_symbols)
        .map(|i| (if i == 0 { "sil".to_string() } else { format!("p{i}") }, false))
        .collect();
    let refs: Vec<(&str, bool)> = symbols.iter().map(|(s, v)| (s.as_str(), *v)).collect();
    let inv = crate::align::PhonemeInventory::from_symbols(&refs).expect("stub inventory");
    crate::align::encode_stream(a, &inv).expect("re-encode")
}

/// Assembles the generator input: features concatenated along the channel
/// axis `[f0 | intensity | phoneme embedding | positional | speaker]`, then
/// replicated to the 5 frequency rows. Returns a `T x 5 x C` node.
pub fn assemble<T: Elem>(
    g: &mut Graph<T>,
    set: &ParamSet<T>,
    embedding: &PhonemeEmbedding,
    feats: &FeatureFrames,
    speaker_row: NodeId,
) -> NodeId {
    let t = feats.n_frames();
    let f0 = g.constant(Tensor::new(
        &[t, 1],
        feats.f0_norm.iter().map(|&v| T::from_f64(v as f64)).collect(),
    ));
    let inten = g.constant(Tensor::new(
        &[t, 1],
        feats.intensity.iter().map(|&v| T::from_f64(v as f64)).collect(),
    ));
    let emb = embedding.embed(g, set, &feats.stream);
    let mut pos_data = Vec::with_capacity(t * crate::align::POSITIONAL_DIMS);
    for frame in 0..t {
        pos_data.extend(feats.stream.positional(frame).iter().map(|&v| T::from_f64(v as f64)));
    }
    let pos = g.constant(Tensor::new(&[t, crate::align::POSITIONAL_DIMS], pos_data));
    let spk = g.broadcast_time(speaker_row, t);
    let features = g.concat_last(&[f0, inten, emb, pos, spk]);
    g.tile_mid(features, FREQ_ROWS)
}

/// Runs [`assemble`] in a throwaway graph and returns the plain tensor
/// (debug dumps and conformance oracles).
pub fn assemble_to_tensor<T: Elem>(
    set: &ParamSet<T>,
    embedding: &PhonemeEmbedding,
    feats: &FeatureFrames,
    speaker_row_id: ParamId,
) -> Tensor<T> {
    let mut g = Graph::new();
    let spk = g.param(set, speaker_row_id);
    let node = assemble(&mut g, set, embedding, feats, spk);
    g.value(node).clone()
}

/// Detached conditioning block for the discriminators:
/// `[f0_norm | speaker | phoneme one-hot]`, `T x (1 + D_spk + n_symbols)`.
pub fn discriminator_conditioning<T: Elem>(
    feats: &FeatureFrames,
    speaker: &Tensor<T>,
) -> Tensor<T> {
    let t = feats.n_frames();
    let s = feats.stream.n_symbols();
    let dim = 1 + speaker.len() + s;
    let mut data = Vec::with_capacity(t * dim);
    for frame in 0..t {
        data.push(T::from_f64(feats.f0_norm[frame] as f64));
        data.extend_from_slice(speaker.data());
        data.extend(
            feats.stream.row(frame)[..s]
                .iter()
                .map(|&v| T::from_f64(v as f64)),
        );
    }
    Tensor::new(&[t, dim], data)
}
