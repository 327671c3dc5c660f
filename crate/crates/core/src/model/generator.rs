//! The mel decoder: input conv, five upsampling blocks, pointwise head.

use super::{conv_init, GeneratorConfig, ModelConfig, FREQ_ROWS};
use crate::tensor::{Elem, Graph, NodeId, ParamId, ParamSet};
use rand::Rng;

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    tconv: Conv,
    res_a: Conv,
    res_b: Conv,
    stride: (usize, usize),
}

/// Generator parameters; the forward pass builds onto a caller-owned graph
/// so the same weights serve training (with gradients) and inference.
#[derive(Debug, Clone)]
pub struct Generator {
    input: Conv,
    blocks: Vec<Block>,
    head: Conv,
}

impl Generator {
    pub(crate) fn init<T: Elem, R: Rng>(
        set: &mut ParamSet<T>,
        model: &ModelConfig,
        cfg: &GeneratorConfig,
        rng: &mut R,
    ) -> Self {
        let (kt, kf) = cfg.base_kernel;
        let c_in = model.cond_channels();
        let c0 = cfg.channels[0];
        let (w, b) = conv_init(set, "gen.input", &[kt, kf, c_in, c0], kt * kf * c_in, c0, rng);
        let input = Conv { w, b };

        let mut blocks = Vec::with_capacity(cfg.channels.len());
        let mut prev = c0;
        for (i, &ch) in cfg.channels.iter().enumerate() {
            let (tkt, tkf) = cfg.tconv_kernel(i);
            // transposed kernels are stored [kt, kf, Cout, Cin]
            let (tw, tb) = conv_init(
                set,
                &format!("gen.block{i}.tconv"),
                &[tkt, tkf, ch, prev],
                tkt * tkf * prev,
                ch,
                rng,
            );
            let (aw, ab) = conv_init(
                set,
                &format!("gen.block{i}.res_a"),
                &[kt, kf, ch, ch],
                kt * kf * ch,
                ch,
                rng,
            );
            let (bw, bb) = conv_init(
                set,
                &format!("gen.block{i}.res_b"),
                &[kt, kf, ch, ch],
                kt * kf * ch,
                ch,
                rng,
            );
            blocks.push(Block {
                tconv: Conv { w: tw, b: tb },
                res_a: Conv { w: aw, b: ab },
                res_b: Conv { w: bw, b: bb },
                stride: cfg.strides[i],
            });
            prev = ch;
        }
        let (hw, hb) = conv_init(set, "gen.head", &[1, 1, prev, 1], prev, 1, rng);
        Self { input, blocks, head: Conv { w: hw, b: hb } }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.input.w, self.input.b];
        for b in &self.blocks {
            ids.extend([b.tconv.w, b.tconv.b, b.res_a.w, b.res_a.b, b.res_b.w, b.res_b.b]);
        }
        ids.extend([self.head.w, self.head.b]);
        ids
    }

    /// `T x 5 x C_in` conditioning -> `T x mel_bins` log-mel frames.
    pub fn forward<T: Elem>(
        &self,
        g: &mut Graph<T>,
        set: &ParamSet<T>,
        cond: NodeId,
    ) -> NodeId {
        let shape = g.value(cond).shape().to_vec();
        debug_assert_eq!(shape.len(), 3);
        debug_assert_eq!(shape[1], FREQ_ROWS);
        let t = shape[0];

        let w = g.param(set, self.input.w);
        let b = g.param(set, self.input.b);
        let mut x = g.conv2d(cond, w, Some(b), (1, 1));
        x = g.swish(x);

        for block in &self.blocks {
            let tw = g.param(set, block.tconv.w);
            let tb = g.param(set, block.tconv.b);
            x = g.conv2d_transposed(x, tw, Some(tb), block.stride);
            // pre-activation residual: x + conv(swish(conv(swish(x))))
            let s1 = g.swish(x);
            let aw = g.param(set, block.res_a.w);
            let ab = g.param(set, block.res_a.b);
            let h = g.conv2d(s1, aw, Some(ab), (1, 1));
            let s2 = g.swish(h);
            let bw = g.param(set, block.res_b.w);
            let bb = g.param(set, block.res_b.b);
            let h = g.conv2d(s2, bw, Some(bb), (1, 1));
            x = g.add(x, h);
        }

        let hw = g.param(set, self.head.w);
        let hb = g.param(set, self.head.b);
        let y = g.conv2d(x, hw, Some(hb), (1, 1));
        let bins = g.value(y).shape()[1];
        g.reshape(y, &[t, bins])
    }
}
