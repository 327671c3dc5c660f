//! The two conditioned discriminator branches (least-squares GAN, so both
//! end linear with no sigmoid).

use super::{
    conv_init, ModelConfig, DISC1D_CHANNELS, DISC1D_KERNELS, DISC2D_CHANNELS, DISC2D_STRIDES,
    LEAKY_SLOPE,
};
use crate::tensor::{Elem, Graph, NodeId, ParamId, ParamSet, Tensor};
use rand::Rng;

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

/// Strided 2D stack over `T x 80` mels with conditioning broadcast along the
/// frequency axis; emits a patch score map.
#[derive(Debug, Clone)]
pub struct Discriminator2d {
    convs: Vec<(Conv, (usize, usize))>,
}

impl Discriminator2d {
    pub(crate) fn init<T: Elem, R: Rng>(
        set: &mut ParamSet<T>,
        model: &ModelConfig,
        rng: &mut R,
    ) -> Self {
        let mut convs = Vec::with_capacity(DISC2D_CHANNELS.len());
        let mut prev = 1 + model.disc_cond_channels();
        for (i, (&ch, &stride)) in DISC2D_CHANNELS.iter().zip(&DISC2D_STRIDES).enumerate() {
            let (w, b) = conv_init(
                set,
                &format!("disc2d.conv{i}"),
                &[3, 3, prev, ch],
                9 * prev,
                ch,
                rng,
            );
            convs.push((Conv { w, b }, stride));
            prev = ch;
        }
        Self { convs }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.convs.iter().flat_map(|(c, _)| [c.w, c.b]).collect()
    }

    /// `mel` is a `T x 80` node; `cond` is the detached `T x Cc` block.
    pub fn forward<T: Elem>(
        &self,
        g: &mut Graph<T>,
        set: &ParamSet<T>,
        mel: NodeId,
        cond: &Tensor<T>,
    ) -> NodeId {
        let shape = g.value(mel).shape().to_vec();
        let (t, bins) = (shape[0], shape[1]);
        debug_assert_eq!(cond.shape()[0], t);
        let mel3 = g.reshape(mel, &[t, bins, 1]);
        let cond_node = g.constant(cond.clone());
        let cond3 = g.tile_mid(cond_node, bins);
        let mut x = g.concat_last(&[mel3, cond3]);
        let last = self.convs.len() - 1;
        for (i, (conv, stride)) in self.convs.iter().enumerate() {
            let w = g.param(set, conv.w);
            let b = g.param(set, conv.b);
            x = g.conv2d(x, w, Some(b), *stride);
            if i < last {
                x = g.leaky_relu(x, LEAKY_SLOPE);
            }
        }
        x
    }
}

/// Stride-1 1D stack treating mel bins as feature channels; emits one score
/// per frame (channel mean of the final kernel-1 layer).
#[derive(Debug, Clone)]
pub struct Discriminator1d {
    convs: Vec<(Conv, usize)>,
}

impl Discriminator1d {
    pub(crate) fn init<T: Elem, R: Rng>(
        set: &mut ParamSet<T>,
        model: &ModelConfig,
        rng: &mut R,
    ) -> Self {
        let mut convs = Vec::with_capacity(DISC1D_CHANNELS.len());
        let mut prev = model.mel_bins + model.disc_cond_channels();
        for (i, (&ch, &k)) in DISC1D_CHANNELS.iter().zip(&DISC1D_KERNELS).enumerate() {
            let (w, b) = conv_init(
                set,
                &format!("disc1d.conv{i}"),
                &[k, prev, ch],
                k * prev,
                ch,
                rng,
            );
            convs.push((Conv { w, b }, k));
            prev = ch;
        }
        Self { convs }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.convs.iter().flat_map(|(c, _)| [c.w, c.b]).collect()
    }

    pub fn forward<T: Elem>(
        &self,
        g: &mut Graph<T>,
        set: &ParamSet<T>,
        mel: NodeId,
        cond: &Tensor<T>,
    ) -> NodeId {
        let cond_node = g.constant(cond.clone());
        let mut x = g.concat_last(&[mel, cond_node]);
        let last = self.convs.len() - 1;
        for (i, (conv, _)) in self.convs.iter().enumerate() {
            let w = g.param(set, conv.w);
            let b = g.param(set, conv.b);
            x = g.conv1d(x, w, Some(b), 1);
            if i < last {
                x = g.leaky_relu(x, LEAKY_SLOPE);
            }
        }
        g.mean_last(x)
    }
}
