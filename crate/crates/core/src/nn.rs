//! Network building blocks: linear layers, two-layer MLPs, multi-head
//! self-attention, pre-norm transformer blocks and encoders, and the small
//! strided-conv backbone that turns an image into one feature vector.
//!
//! Forward methods record onto a [`Session`] and return tape ids; parameters
//! are bound under dotted paths so gradients and optimizer state line up.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{join, ParamModule};
use crate::tape::{Session, ValueId};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Fully connected layer; weight is `[d_in, d_out]` so activations multiply
/// from the left as `x · W + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Fan-in scaled init: weights uniform in ±1/√d_in, biases zero.
    pub fn new<R: Rng>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        Linear {
            weight: Tensor::uniform(vec![d_in, d_out], -bound, bound, rng).with_grad(),
            bias: Tensor::zeros(vec![d_out]).with_grad(),
        }
    }

    /// All-zero layer; used where training must start as the identity.
    pub fn zeroed(d_in: usize, d_out: usize) -> Self {
        Linear {
            weight: Tensor::zeros(vec![d_in, d_out]).with_grad(),
            bias: Tensor::zeros(vec![d_out]).with_grad(),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, sess: &mut Session, path: &str, x: ValueId) -> Result<ValueId> {
        let w = sess.param(&join(path, "weight"), &self.weight);
        let b = sess.param(&join(path, "bias"), &self.bias);
        let y = sess.tape.matmul(x, w)?;
        sess.tape.add_bias(y, b)
    }

    pub fn count(d_in: usize, d_out: usize) -> usize {
        d_in * d_out + d_out
    }
}

impl ParamModule for Linear {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Two linear layers with a GELU between them.
#[derive(Debug, Clone)]
pub struct Mlp2 {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp2 {
    pub fn new<R: Rng>(d_in: usize, hidden: usize, d_out: usize, rng: &mut R) -> Self {
        Mlp2 {
            fc1: Linear::new(d_in, hidden, rng),
            fc2: Linear::new(hidden, d_out, rng),
        }
    }

    /// Second layer zeroed, so the map starts as the constant zero.
    pub fn new_zero_out<R: Rng>(d_in: usize, hidden: usize, d_out: usize, rng: &mut R) -> Self {
        Mlp2 {
            fc1: Linear::new(d_in, hidden, rng),
            fc2: Linear::zeroed(hidden, d_out),
        }
    }

    pub fn forward(&self, sess: &mut Session, path: &str, x: ValueId) -> Result<ValueId> {
        let h = self.fc1.forward(sess, &join(path, "fc1"), x)?;
        let a = sess.tape.gelu(h);
        self.fc2.forward(sess, &join(path, "fc2"), a)
    }

    pub fn count(d_in: usize, hidden: usize, d_out: usize) -> usize {
        Linear::count(d_in, hidden) + Linear::count(hidden, d_out)
    }
}

impl ParamModule for Mlp2 {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.fc1.visit_params(&join(prefix, "fc1"), f);
        self.fc2.visit_params(&join(prefix, "fc2"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.fc1.visit_params_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_params_mut(&join(prefix, "fc2"), f);
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        LayerNorm {
            gamma: Tensor::filled(vec![d], 1.0).with_grad(),
            beta: Tensor::zeros(vec![d]).with_grad(),
        }
    }

    pub fn forward(&self, sess: &mut Session, path: &str, x: ValueId) -> Result<ValueId> {
        let g = sess.param(&join(path, "gamma"), &self.gamma);
        let b = sess.param(&join(path, "beta"), &self.beta);
        sess.tape.layer_norm(x, g, b, LAYER_NORM_EPS)
    }

    pub fn count(d: usize) -> usize {
        2 * d
    }
}

impl ParamModule for LayerNorm {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

/// Multi-head self-attention with per-head scaled dot-product attention and
/// an output projection.
#[derive(Debug, Clone)]
pub struct Mhsa {
    pub num_heads: usize,
    pub w_q: Linear,
    pub w_k: Linear,
    pub w_v: Linear,
    pub w_o: Linear,
}

impl Mhsa {
    pub fn new<R: Rng>(d_model: usize, num_heads: usize, rng: &mut R) -> Result<Self> {
        if num_heads == 0 || d_model % num_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {d_model} is not divisible by num_heads {num_heads}"
            )));
        }
        Ok(Mhsa {
            num_heads,
            w_q: Linear::new(d_model, d_model, rng),
            w_k: Linear::new(d_model, d_model, rng),
            w_v: Linear::new(d_model, d_model, rng),
            w_o: Linear::new(d_model, d_model, rng),
        })
    }

    pub fn d_model(&self) -> usize {
        self.w_q.d_in()
    }

    pub fn forward(&self, sess: &mut Session, path: &str, z: ValueId) -> Result<ValueId> {
        Ok(self.forward_with_attn(sess, path, z)?.0)
    }

    /// Returns the output and, for inspection, the `[n, n]` attention-weight
    /// matrix id of each head.
    pub fn forward_with_attn(
        &self,
        sess: &mut Session,
        path: &str,
        z: ValueId,
    ) -> Result<(ValueId, Vec<ValueId>)> {
        let d_model = self.d_model();
        let d_k = d_model / self.num_heads;
        let q = self.w_q.forward(sess, &join(path, "w_q"), z)?;
        let k = self.w_k.forward(sess, &join(path, "w_k"), z)?;
        let v = self.w_v.forward(sess, &join(path, "w_v"), z)?;

        let mut attns = Vec::with_capacity(self.num_heads);
        let mut merged = None;
        for h in 0..self.num_heads {
            let start = h * d_k;
            let qh = sess.tape.slice_cols(q, start, d_k)?;
            let kh = sess.tape.slice_cols(k, start, d_k)?;
            let vh = sess.tape.slice_cols(v, start, d_k)?;
            let kt = sess.tape.transpose(kh)?;
            let scores = sess.tape.matmul(qh, kt)?;
            let scaled = sess.tape.scale(scores, 1.0 / (d_k as f64).sqrt());
            let attn = sess.tape.softmax_rows(scaled)?;
            attns.push(attn);
            let oh = sess.tape.matmul(attn, vh)?;
            merged = Some(match merged {
                None => oh,
                Some(acc) => sess.tape.concat(acc, oh, 1)?,
            });
        }
        let out = self
            .w_o
            .forward(sess, &join(path, "w_o"), merged.expect("at least one head"))?;
        Ok((out, attns))
    }

    pub fn count(d_model: usize) -> usize {
        4 * Linear::count(d_model, d_model)
    }
}

impl ParamModule for Mhsa {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.w_q.visit_params(&join(prefix, "w_q"), f);
        self.w_k.visit_params(&join(prefix, "w_k"), f);
        self.w_v.visit_params(&join(prefix, "w_v"), f);
        self.w_o.visit_params(&join(prefix, "w_o"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.w_q.visit_params_mut(&join(prefix, "w_q"), f);
        self.w_k.visit_params_mut(&join(prefix, "w_k"), f);
        self.w_v.visit_params_mut(&join(prefix, "w_v"), f);
        self.w_o.visit_params_mut(&join(prefix, "w_o"), f);
    }
}

/// Pre-norm residual transformer block:
/// `z' = MHSA(LN(z)) + z; out = MLP(LN(z')) + z'`.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub mhsa: Mhsa,
    pub ln2: LayerNorm,
    pub mlp: Mlp2,
}

impl TransformerBlock {
    pub fn new<R: Rng>(d_model: usize, num_heads: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        Ok(TransformerBlock {
            ln1: LayerNorm::new(d_model),
            mhsa: Mhsa::new(d_model, num_heads, rng)?,
            ln2: LayerNorm::new(d_model),
            mlp: Mlp2::new(d_model, hidden, d_model, rng),
        })
    }

    pub fn forward(&self, sess: &mut Session, path: &str, z: ValueId) -> Result<ValueId> {
        let n1 = self.ln1.forward(sess, &join(path, "ln1"), z)?;
        let a = self.mhsa.forward(sess, &join(path, "mhsa"), n1)?;
        let z1 = sess.tape.add(a, z)?;
        let n2 = self.ln2.forward(sess, &join(path, "ln2"), z1)?;
        let m = self.mlp.forward(sess, &join(path, "mlp"), n2)?;
        sess.tape.add(m, z1)
    }

    pub fn count(d_model: usize, hidden: usize) -> usize {
        2 * LayerNorm::count(d_model) + Mhsa::count(d_model) + Mlp2::count(d_model, hidden, d_model)
    }
}

impl ParamModule for TransformerBlock {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.ln1.visit_params(&join(prefix, "ln1"), f);
        self.mhsa.visit_params(&join(prefix, "mhsa"), f);
        self.ln2.visit_params(&join(prefix, "ln2"), f);
        self.mlp.visit_params(&join(prefix, "mlp"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.ln1.visit_params_mut(&join(prefix, "ln1"), f);
        self.mhsa.visit_params_mut(&join(prefix, "mhsa"), f);
        self.ln2.visit_params_mut(&join(prefix, "ln2"), f);
        self.mlp.visit_params_mut(&join(prefix, "mlp"), f);
    }
}

/// `L` transformer blocks followed by a final layer norm. No positional
/// encoding: token identity is carried by input order into learned
/// projections, so the encoder is permutation-equivariant.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    pub blocks: Vec<TransformerBlock>,
    pub final_ln: LayerNorm,
}

impl TransformerEncoder {
    pub fn new<R: Rng>(
        d_model: usize,
        num_heads: usize,
        hidden: usize,
        num_blocks: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if num_blocks == 0 {
            return Err(Error::Config("encoder needs at least one block".into()));
        }
        let blocks = (0..num_blocks)
            .map(|_| TransformerBlock::new(d_model, num_heads, hidden, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(TransformerEncoder {
            blocks,
            final_ln: LayerNorm::new(d_model),
        })
    }

    pub fn d_model(&self) -> usize {
        self.final_ln.gamma.numel()
    }

    pub fn forward(&self, sess: &mut Session, path: &str, z: ValueId) -> Result<ValueId> {
        let mut cur = z;
        for (i, block) in self.blocks.iter().enumerate() {
            cur = block.forward(sess, &join(path, &format!("block{i}")), cur)?;
        }
        self.final_ln.forward(sess, &join(path, "final_ln"), cur)
    }

    pub fn count(d_model: usize, hidden: usize, num_blocks: usize) -> usize {
        num_blocks * TransformerBlock::count(d_model, hidden) + LayerNorm::count(d_model)
    }
}

impl ParamModule for TransformerEncoder {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_params(&join(prefix, &format!("block{i}")), f);
        }
        self.final_ln.visit_params(&join(prefix, "final_ln"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params_mut(&join(prefix, &format!("block{i}")), f);
        }
        self.final_ln.visit_params_mut(&join(prefix, "final_ln"), f);
    }
}

#[derive(Debug, Clone)]
pub struct ConvStage {
    pub kernel: Tensor, // [3, 3, cin, cout]
    pub bias: Tensor,
}

/// Strided 3×3 conv stages with GELU, global average pooling, and a linear
/// projection to `feature_dim`. Stands in for a classification backbone:
/// image in, one feature vector out.
#[derive(Debug, Clone)]
pub struct ConvBackbone {
    pub input_hw: usize,
    pub in_channels: usize,
    pub stages: Vec<ConvStage>,
    pub proj: Linear,
}

pub const CONV_KERNEL: usize = 3;
pub const CONV_STRIDE: usize = 2;
pub const CONV_PAD: usize = 1;

impl ConvBackbone {
    pub fn new<R: Rng>(
        input_hw: usize,
        in_channels: usize,
        stage_channels: &[usize],
        feature_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if stage_channels.is_empty() {
            return Err(Error::Config("backbone needs at least one conv stage".into()));
        }
        let mut stages = Vec::with_capacity(stage_channels.len());
        let mut cin = in_channels;
        for &cout in stage_channels {
            let fan_in = (CONV_KERNEL * CONV_KERNEL * cin) as f64;
            let bound = 1.0 / fan_in.sqrt();
            stages.push(ConvStage {
                kernel: Tensor::uniform(
                    vec![CONV_KERNEL, CONV_KERNEL, cin, cout],
                    -bound,
                    bound,
                    rng,
                )
                .with_grad(),
                bias: Tensor::zeros(vec![cout]).with_grad(),
            });
            cin = cout;
        }
        Ok(ConvBackbone {
            input_hw,
            in_channels,
            stages,
            proj: Linear::new(cin, feature_dim, rng),
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.proj.d_out()
    }

    /// Image `[hw, hw, in_channels]` to a `[1, feature_dim]` row.
    pub fn forward(&self, sess: &mut Session, path: &str, image: &Tensor) -> Result<ValueId> {
        let expected = [self.input_hw, self.input_hw, self.in_channels];
        if image.shape() != expected {
            return Err(Error::BadShape {
                op: "backbone_forward",
                expected: expected.to_vec(),
                got: image.shape().to_vec(),
            });
        }
        let x = sess.constant(image);
        self.forward_id(sess, path, x)
    }

    pub fn forward_id(&self, sess: &mut Session, path: &str, image: ValueId) -> Result<ValueId> {
        let mut x = image;
        for (i, stage) in self.stages.iter().enumerate() {
            let k = sess.param(&join(path, &format!("stage{i}.kernel")), &stage.kernel);
            let b = sess.param(&join(path, &format!("stage{i}.bias")), &stage.bias);
            let c = sess.tape.conv2d(x, k, b, CONV_STRIDE, CONV_PAD)?;
            x = sess.tape.gelu(c);
        }
        let pooled = sess.tape.global_avg_pool(x)?;
        let c = self.stages.last().unwrap().bias.numel();
        let row = sess.tape.reshape(pooled, vec![1, c])?;
        self.proj.forward(sess, &join(path, "proj"), row)
    }

    pub fn count(in_channels: usize, stage_channels: &[usize], feature_dim: usize) -> usize {
        let mut n = 0;
        let mut cin = in_channels;
        for &cout in stage_channels {
            n += CONV_KERNEL * CONV_KERNEL * cin * cout + cout;
            cin = cout;
        }
        n + Linear::count(cin, feature_dim)
    }
}

impl ParamModule for ConvBackbone {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, s) in self.stages.iter().enumerate() {
            f(&join(prefix, &format!("stage{i}.kernel")), &s.kernel);
            f(&join(prefix, &format!("stage{i}.bias")), &s.bias);
        }
        self.proj.visit_params(&join(prefix, "proj"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            f(&join(prefix, &format!("stage{i}.kernel")), &mut s.kernel);
            f(&join(prefix, &format!("stage{i}.bias")), &mut s.bias);
        }
        self.proj.visit_params_mut(&join(prefix, "proj"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_diff_gradients, max_rel_err};
    use crate::params::{param_count, randomize_params};
    use crate::rngs;
    use crate::tape::Tape;

    #[test]
    fn mhsa_rejects_indivisible_heads() {
        let mut rng = rngs::seeded(1);
        assert!(Mhsa::new(10, 4, &mut rng).is_err());
        assert!(Mhsa::new(8, 4, &mut rng).is_ok());
    }

    #[test]
    fn mhsa_single_token_attention_is_one() {
        let mut rng = rngs::seeded(2);
        let mhsa = Mhsa::new(8, 4, &mut rng).unwrap();
        let mut sess = Session::new();
        let z = sess.constant(&Tensor::uniform(vec![1, 8], -1.0, 1.0, &mut rng));
        let (_, attns) = mhsa.forward_with_attn(&mut sess, "m", z).unwrap();
        assert_eq!(attns.len(), 4);
        for a in attns {
            assert_eq!(sess.tape.value(a), &[1.0]);
        }
    }

    #[test]
    fn mhsa_identical_tokens_give_identical_outputs() {
        let mut rng = rngs::seeded(3);
        let mhsa = Mhsa::new(8, 2, &mut rng).unwrap();
        let row: Vec<f64> = (0..8).map(|i| 0.1 * i as f64 - 0.3).collect();
        let mut data = row.clone();
        data.extend_from_slice(&row);
        data.extend_from_slice(&row);
        let mut sess = Session::new();
        let z = sess.constant(&Tensor::new(vec![3, 8], data).unwrap());
        let out = mhsa.forward(&mut sess, "m", z).unwrap();
        let v = sess.tape.value(out);
        for r in 1..3 {
            for j in 0..8 {
                assert!((v[j] - v[r * 8 + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mhsa_attention_rows_sum_to_one() {
        let mut rng = rngs::seeded(4);
        let mhsa = Mhsa::new(8, 4, &mut rng).unwrap();
        let mut sess = Session::new();
        let z = sess.constant(&Tensor::uniform(vec![5, 8], -3.0, 3.0, &mut rng));
        let (_, attns) = mhsa.forward_with_attn(&mut sess, "m", z).unwrap();
        for a in attns {
            let v = sess.tape.value(a);
            for r in 0..5 {
                let s: f64 = v[r * 5..(r + 1) * 5].iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }

    /// Straight-line reimplementation of scaled dot-product attention with
    /// no tape, used as a duplicate-implementation oracle.
    fn mhsa_reference(m: &Mhsa, z: &Tensor) -> Vec<f64> {
        let n = z.shape()[0];
        let d = m.d_model();
        let heads = m.num_heads;
        let dk = d / heads;
        let lin = |w: &Linear, x: &Tensor| -> Vec<f64> {
            let mut out = vec![0.0; n * w.d_out()];
            for i in 0..n {
                for j in 0..w.d_out() {
                    let mut s = w.bias.data()[j];
                    for p in 0..w.d_in() {
                        s += x.data()[i * d + p] * w.weight.data()[p * w.d_out() + j];
                    }
                    out[i * w.d_out() + j] = s;
                }
            }
            out
        };
        let q = lin(&m.w_q, z);
        let k = lin(&m.w_k, z);
        let v = lin(&m.w_v, z);
        let mut merged = vec![0.0; n * d];
        for h in 0..heads {
            for i in 0..n {
                let mut scores = vec![0.0; n];
                for j in 0..n {
                    let mut s = 0.0;
                    for p in 0..dk {
                        s += q[i * d + h * dk + p] * k[j * d + h * dk + p];
                    }
                    scores[j] = s / (dk as f64).sqrt();
                }
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                let denom: f64 = exps.iter().sum();
                for p in 0..dk {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += exps[j] / denom * v[j * d + h * dk + p];
                    }
                    merged[i * d + h * dk + p] = acc;
                }
            }
        }
        let merged_t = Tensor::new(vec![n, d], merged).unwrap();
        lin(&m.w_o, &merged_t)
    }

    #[test]
    fn mhsa_matches_straight_line_reimplementation() {
        let mut rng = rngs::seeded(5);
        let mut mhsa = Mhsa::new(4, 2, &mut rng).unwrap();
        randomize_params(&mut mhsa, -0.8, 0.8, &mut rng);
        let z = Tensor::uniform(vec![3, 4], -1.5, 1.5, &mut rng);
        let mut sess = Session::new();
        let zi = sess.constant(&z);
        let out = mhsa.forward(&mut sess, "m", zi).unwrap();
        let expected = mhsa_reference(&mhsa, &z);
        let got = sess.tape.value(out);
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn block_with_zeroed_projections_is_identity() {
        let mut rng = rngs::seeded(6);
        let mut block = TransformerBlock::new(8, 2, 16, &mut rng).unwrap();
        for v in block.mhsa.w_o.weight.data_mut() {
            *v = 0.0;
        }
        for v in block.mhsa.w_o.bias.data_mut() {
            *v = 0.0;
        }
        for v in block.mlp.fc2.weight.data_mut() {
            *v = 0.0;
        }
        for v in block.mlp.fc2.bias.data_mut() {
            *v = 0.0;
        }
        let z = Tensor::uniform(vec![3, 8], -2.0, 2.0, &mut rng);
        let mut sess = Session::new();
        let zi = sess.constant(&z);
        let out = block.forward(&mut sess, "b", zi).unwrap();
        for (a, b) in sess.tape.value(out).iter().zip(z.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn block_preserves_shape() {
        let mut rng = rngs::seeded(7);
        let block = TransformerBlock::new(8, 2, 16, &mut rng).unwrap();
        for n in [2usize, 3, 7] {
            let mut sess = Session::new();
            let z = sess.constant(&Tensor::uniform(vec![n, 8], -1.0, 1.0, &mut rng));
            let out = block.forward(&mut sess, "b", z).unwrap();
            assert_eq!(sess.tape.shape(out), &[n, 8]);
        }
    }

    #[test]
    fn block_input_gradient_matches_central_differences() {
        let mut rng = rngs::seeded(8);
        let block = TransformerBlock::new(4, 2, 8, &mut rng).unwrap();
        let z = Tensor::uniform(vec![2, 4], -1.0, 1.0, &mut rng).with_grad();
        let f = |inputs: &[Tensor]| {
            let mut sess = Session::new();
            let zi = sess.tape.leaf(&inputs[0]);
            let out = block.forward(&mut sess, "b", zi).unwrap();
            { let s = sess.tape.mean_all(out); sess.tape.value(s)[0] }
        };
        let fd = central_diff_gradients(&f, &[z.clone()], 1e-5);
        let mut sess = Session::new();
        let zi = sess.tape.leaf(&z);
        let out = block.forward(&mut sess, "b", zi).unwrap();
        let loss = sess.tape.mean_all(out);
        sess.backward(loss).unwrap();
        assert!(max_rel_err(sess.tape.grad(zi).unwrap(), &fd[0]) < 1e-5);
    }

    #[test]
    fn encoder_composes_blocks_then_final_ln() {
        let mut rng = rngs::seeded(9);
        let enc = TransformerEncoder::new(8, 2, 16, 2, &mut rng).unwrap();
        let z = Tensor::uniform(vec![2, 8], -1.0, 1.0, &mut rng);

        let mut sess = Session::new();
        let zi = sess.constant(&z);
        let out = enc.forward(&mut sess, "e", zi).unwrap();
        let got = sess.tape.value(out).to_vec();

        let mut sess2 = Session::new();
        let zi2 = sess2.constant(&z);
        let b0 = enc.blocks[0].forward(&mut sess2, "e.block0", zi2).unwrap();
        let b1 = enc.blocks[1].forward(&mut sess2, "e.block1", b0).unwrap();
        let fin = enc.final_ln.forward(&mut sess2, "e.final_ln", b1).unwrap();
        let manual = sess2.tape.value(fin);
        for (a, b) in got.iter().zip(manual) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn encoder_is_permutation_equivariant() {
        let mut rng = rngs::seeded(10);
        let enc = TransformerEncoder::new(8, 4, 16, 2, &mut rng).unwrap();
        let z = Tensor::uniform(vec![3, 8], -1.0, 1.0, &mut rng);
        // permutation: rows (2, 0, 1)
        let perm = [2usize, 0, 1];
        let mut zp = vec![0.0; 24];
        for (r, &src) in perm.iter().enumerate() {
            zp[r * 8..(r + 1) * 8].copy_from_slice(&z.data()[src * 8..(src + 1) * 8]);
        }
        let run = |input: &Tensor| {
            let mut sess = Session::new();
            let zi = sess.constant(input);
            let out = enc.forward(&mut sess, "e", zi).unwrap();
            sess.tape.value(out).to_vec()
        };
        let base = run(&z);
        let permuted = run(&Tensor::new(vec![3, 8], zp).unwrap());
        for (r, &src) in perm.iter().enumerate() {
            for j in 0..8 {
                assert!((permuted[r * 8 + j] - base[src * 8 + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encoder_parameter_count_matches_closed_form() {
        let mut rng = rngs::seeded(11);
        for (d, heads, hidden, blocks) in [(8, 2, 16, 1), (32, 4, 64, 2), (16, 4, 32, 3)] {
            let enc = TransformerEncoder::new(d, heads, hidden, blocks, &mut rng).unwrap();
            assert_eq!(param_count(&enc), TransformerEncoder::count(d, hidden, blocks));
        }
    }

    #[test]
    fn backbone_zero_image_is_finite_and_deterministic() {
        let mut rng = rngs::seeded(12);
        let bb = ConvBackbone::new(8, 1, &[2, 4], 8, &mut rng).unwrap();
        let img = Tensor::zeros(vec![8, 8, 1]);
        let run = |image: &Tensor| {
            let mut sess = Session::new();
            let out = bb.forward(&mut sess, "bb", image).unwrap();
            sess.tape.value(out).to_vec()
        };
        let a = run(&img);
        assert!(a.iter().all(|v| v.is_finite()));
        let b = run(&img);
        assert_eq!(a, b);
    }

    #[test]
    fn backbone_rejects_resolution_mismatch() {
        let mut rng = rngs::seeded(13);
        let bb = ConvBackbone::new(8, 1, &[2], 4, &mut rng).unwrap();
        let img = Tensor::zeros(vec![9, 9, 1]);
        let mut sess = Session::new();
        assert!(matches!(
            bb.forward(&mut sess, "bb", &img),
            Err(Error::BadShape { .. })
        ));
    }

    #[test]
    fn backbone_gradients_match_central_differences() {
        let mut rng = rngs::seeded(14);
        let mut bb = ConvBackbone::new(8, 1, &[2, 3], 4, &mut rng).unwrap();
        randomize_params(&mut bb, -0.5, 0.5, &mut rng);
        let img = Tensor::uniform(vec![8, 8, 1], 0.0, 1.0, &mut rng);

        let mut sess = Session::new();
        let out = bb.forward(&mut sess, "", &img).unwrap();
        let a = sess.tape.abs(out);
        let loss = sess.tape.mean_all(a);
        sess.backward(loss).unwrap();
        let analytic: std::collections::HashMap<String, Vec<f64>> = sess
            .bindings()
            .map(|(p, id)| (p.to_string(), sess.tape.grad(id).unwrap().to_vec()))
            .collect();

        let mut eval = |m: &ConvBackbone| {
            let mut s = Session::new();
            let out = m.forward(&mut s, "", &img).unwrap();
            let a = s.tape.abs(out);
            { let l = s.tape.mean_all(a); s.tape.value(l)[0] }
        };
        let report = crate::gradcheck::check_against_finite_differences(
            &mut bb, &analytic, &mut eval, 1e-5, 1e-4,
        );
        assert!(report.passed(), "{}", report.render());
    }

    #[test]
    fn linear_forward_shape_and_bias() {
        let mut rng = rngs::seeded(15);
        let lin = Linear::new(3, 2, &mut rng);
        let mut sess = Session::new();
        let x = sess.constant(&Tensor::zeros(vec![4, 3]));
        let y = lin.forward(&mut sess, "l", x).unwrap();
        assert_eq!(sess.tape.shape(y), &[4, 2]);
        // zero input -> rows equal the bias (zero at init)
        assert!(sess.tape.value(y).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn tape_grows_once_per_bound_parameter_across_samples() {
        let mut rng = rngs::seeded(16);
        let lin = Linear::new(3, 2, &mut rng);
        let mut sess = Session::new();
        for _ in 0..3 {
            let x = sess.constant(&Tensor::zeros(vec![1, 3]));
            lin.forward(&mut sess, "l", x).unwrap();
        }
        assert_eq!(sess.bindings().count(), 2);
    }
}
