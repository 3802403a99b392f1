//! The two-stage gaze-feature fusion estimator.
//!
//! One fusion unit (TGF) stacks two feature vectors as a 2-token sequence,
//! runs a transformer encoder over it, projects each token with a shared
//! linear layer, and concatenates the projected tokens. The full estimator
//! fuses each eye feature with the head feature first (separate parameter
//! sets for left and right), then fuses the two eye-head features, and
//! regresses (yaw, pitch) from the result with a small MLP.
//!
//! The alternative fusion wirings (eyes first, all-parallel, eyes-only) are
//! built from the same unit and share the estimator interface.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::geom::GazeAngles;
use crate::nn::{ConvBackbone, Linear, Mlp2, TransformerEncoder};
use crate::params::{join, ParamModule};
use crate::tape::{Session, ValueId};
use crate::tensor::Tensor;

/// How the eye and face streams are merged before gaze regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionTopology {
    /// Eye+head fused per eye, then left/right fused. The default.
    EhLr,
    /// Left+right eyes fused first, then fused with the head feature.
    LrEh,
    /// One fusion over all three streams at once.
    Par,
    /// Eyes only; the face stream is absent entirely.
    TwoEyes,
}

impl FusionTopology {
    pub const ALL: [FusionTopology; 4] = [
        FusionTopology::EhLr,
        FusionTopology::LrEh,
        FusionTopology::Par,
        FusionTopology::TwoEyes,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FusionTopology::EhLr => "eh_lr",
            FusionTopology::LrEh => "lr_eh",
            FusionTopology::Par => "par",
            FusionTopology::TwoEyes => "two_eyes",
        }
    }
}

impl fmt::Display for FusionTopology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionTopology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eh_lr" => Ok(FusionTopology::EhLr),
            "lr_eh" => Ok(FusionTopology::LrEh),
            "par" => Ok(FusionTopology::Par),
            "two_eyes" => Ok(FusionTopology::TwoEyes),
            other => Err(Error::Config(format!(
                "unknown topology '{other}' (expected eh_lr, lr_eh, par, two_eyes)"
            ))),
        }
    }
}

/// One fusion unit: encoder over an `n_tokens × in_dim` stack, shared
/// per-token projection, concatenation.
#[derive(Debug, Clone)]
pub struct TgfModule {
    pub encoder: TransformerEncoder,
    pub proj: Linear,
    pub n_tokens: usize,
}

impl TgfModule {
    pub fn new<R: Rng>(
        in_dim: usize,
        n_tokens: usize,
        num_heads: usize,
        mlp_hidden: usize,
        num_blocks: usize,
        proj_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(TgfModule {
            encoder: TransformerEncoder::new(in_dim, num_heads, mlp_hidden, num_blocks, rng)?,
            proj: Linear::new(in_dim, proj_dim, rng),
            n_tokens,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.encoder.d_model()
    }

    pub fn proj_dim(&self) -> usize {
        self.proj.d_out()
    }

    /// Length of the fused output vector.
    pub fn out_dim(&self) -> usize {
        self.n_tokens * self.proj_dim()
    }

    /// Fuses `feats` (each a `[1, in_dim]` row) into a `[1, out_dim]` row.
    pub fn forward(&self, sess: &mut Session, path: &str, feats: &[ValueId]) -> Result<ValueId> {
        if feats.len() != self.n_tokens {
            return Err(Error::Config(format!(
                "fusion unit expects {} tokens, got {}",
                self.n_tokens,
                feats.len()
            )));
        }
        let d = self.in_dim();
        for &f in feats {
            if sess.tape.shape(f) != [1, d] {
                return Err(Error::BadShape {
                    op: "tgf_forward",
                    expected: vec![1, d],
                    got: sess.tape.shape(f).to_vec(),
                });
            }
        }
        let mut stacked = feats[0];
        for &f in &feats[1..] {
            stacked = sess.tape.concat(stacked, f, 0)?;
        }
        let encoded = self.encoder.forward(sess, &join(path, "encoder"), stacked)?;
        let projected = self.proj.forward(sess, &join(path, "proj"), encoded)?;
        sess.tape.reshape(projected, vec![1, self.out_dim()])
    }

    pub fn count(in_dim: usize, mlp_hidden: usize, num_blocks: usize, proj_dim: usize) -> usize {
        TransformerEncoder::count(in_dim, mlp_hidden, num_blocks) + Linear::count(in_dim, proj_dim)
    }
}

impl ParamModule for TgfModule {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.encoder.visit_params(&join(prefix, "encoder"), f);
        self.proj.visit_params(&join(prefix, "proj"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.encoder.visit_params_mut(&join(prefix, "encoder"), f);
        self.proj.visit_params_mut(&join(prefix, "proj"), f);
    }
}

/// Fusion wiring variants. `EhLr` keeps separate parameters for the
/// left-head and right-head units.
#[derive(Debug, Clone)]
pub enum FusionStack {
    EhLr {
        tgf_lh: TgfModule,
        tgf_rh: TgfModule,
        tgf_lr: TgfModule,
    },
    LrEh {
        tgf_eyes: TgfModule,
        tgf_eh: TgfModule,
    },
    Par {
        tgf: TgfModule,
    },
    TwoEyes {
        tgf_eyes: TgfModule,
    },
}

/// Gaze estimator: per-stream conv backbones, fusion stack, regression MLP.
#[derive(Debug, Clone)]
pub struct TtgfModel {
    pub config: ModelConfig,
    pub face_backbone: Option<ConvBackbone>,
    pub left_backbone: ConvBackbone,
    pub right_backbone: ConvBackbone,
    pub fusion: FusionStack,
    pub gaze_mlp: Mlp2,
}

/// Tape ids of the intermediate and final products of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardStreams {
    /// `[1, 2]` predicted (yaw, pitch) before any per-dataset correction.
    pub gaze: ValueId,
    /// `[1, fused_dim]` fused feature consumed by both the gaze MLP and the
    /// adaptation heads.
    pub fused: ValueId,
    /// Left-eye+head fusion output (eye-head-first wiring only).
    pub left_head: Option<ValueId>,
    /// Right-eye+head fusion output (eye-head-first wiring only).
    pub right_head: Option<ValueId>,
}

impl TtgfModel {
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let f = config.feature_dim;
        let p = config.proj_dim;
        let unit = |in_dim: usize, n_tokens: usize, rng: &mut R| {
            TgfModule::new(
                in_dim,
                n_tokens,
                config.num_heads,
                config.mlp_hidden,
                config.num_blocks,
                p,
                rng,
            )
        };
        let fusion = match config.topology {
            FusionTopology::EhLr => FusionStack::EhLr {
                tgf_lh: unit(f, 2, rng)?,
                tgf_rh: unit(f, 2, rng)?,
                tgf_lr: unit(2 * p, 2, rng)?,
            },
            FusionTopology::LrEh => {
                if 2 * p != f {
                    return Err(Error::Config(format!(
                        "lr_eh needs 2*proj_dim == feature_dim so the fused eye \
                         feature and the head feature share a token width; got \
                         proj_dim {p}, feature_dim {f}"
                    )));
                }
                FusionStack::LrEh {
                    tgf_eyes: unit(f, 2, rng)?,
                    tgf_eh: unit(2 * p, 2, rng)?,
                }
            }
            FusionTopology::Par => FusionStack::Par { tgf: unit(f, 3, rng)? },
            FusionTopology::TwoEyes => FusionStack::TwoEyes { tgf_eyes: unit(f, 2, rng)? },
        };
        let fused_dim = match &fusion {
            FusionStack::EhLr { tgf_lr, .. } => tgf_lr.out_dim(),
            FusionStack::LrEh { tgf_eh, .. } => tgf_eh.out_dim(),
            FusionStack::Par { tgf } => tgf.out_dim(),
            FusionStack::TwoEyes { tgf_eyes } => tgf_eyes.out_dim(),
        };
        let face_backbone = if config.topology == FusionTopology::TwoEyes {
            None
        } else {
            Some(ConvBackbone::new(
                config.face_size,
                config.in_channels,
                &config.conv_channels,
                f,
                rng,
            )?)
        };
        Ok(TtgfModel {
            face_backbone,
            left_backbone: ConvBackbone::new(
                config.eye_size,
                config.in_channels,
                &config.conv_channels,
                f,
                rng,
            )?,
            right_backbone: ConvBackbone::new(
                config.eye_size,
                config.in_channels,
                &config.conv_channels,
                f,
                rng,
            )?,
            gaze_mlp: Mlp2::new(fused_dim, config.gaze_hidden, 2, rng),
            fusion,
            config,
        })
    }

    /// Dimension of the fused feature fed to the gaze MLP and the
    /// adaptation heads.
    pub fn fused_dim(&self) -> usize {
        self.gaze_mlp.fc1.d_in()
    }

    /// Full forward pass from images already recorded on the tape.
    pub fn forward_ids(
        &self,
        sess: &mut Session,
        face: Option<ValueId>,
        left: ValueId,
        right: ValueId,
    ) -> Result<ForwardStreams> {
        let f_le = self.left_backbone.forward_id(sess, "left_bb", left)?;
        let f_re = self.right_backbone.forward_id(sess, "right_bb", right)?;
        let f_h = match (&self.face_backbone, face) {
            (Some(bb), Some(img)) => Some(bb.forward_id(sess, "face_bb", img)?),
            (None, _) => None,
            (Some(_), None) => {
                return Err(Error::Config("this topology requires a face image".into()))
            }
        };

        let (fused, left_head, right_head) = match &self.fusion {
            FusionStack::EhLr { tgf_lh, tgf_rh, tgf_lr } => {
                let f_h = f_h.expect("face stream present");
                let f_lh = tgf_lh.forward(sess, "tgf_lh", &[f_le, f_h])?;
                let f_rh = tgf_rh.forward(sess, "tgf_rh", &[f_re, f_h])?;
                let f_lr = tgf_lr.forward(sess, "tgf_lr", &[f_lh, f_rh])?;
                (f_lr, Some(f_lh), Some(f_rh))
            }
            FusionStack::LrEh { tgf_eyes, tgf_eh } => {
                let f_h = f_h.expect("face stream present");
                let f_e = tgf_eyes.forward(sess, "tgf_eyes", &[f_le, f_re])?;
                let f_eh = tgf_eh.forward(sess, "tgf_eh", &[f_e, f_h])?;
                (f_eh, None, None)
            }
            FusionStack::Par { tgf } => {
                let f_h = f_h.expect("face stream present");
                let f_all = tgf.forward(sess, "tgf_par", &[f_le, f_re, f_h])?;
                (f_all, None, None)
            }
            FusionStack::TwoEyes { tgf_eyes } => {
                let f_e = tgf_eyes.forward(sess, "tgf_eyes", &[f_le, f_re])?;
                (f_e, None, None)
            }
        };
        let gaze = self.gaze_mlp.forward(sess, "gaze_mlp", fused)?;
        Ok(ForwardStreams {
            gaze,
            fused,
            left_head,
            right_head,
        })
    }

    /// Records the images as constants and runs the forward pass, checking
    /// resolutions against the configured sizes.
    pub fn forward(
        &self,
        sess: &mut Session,
        face: Option<&Tensor>,
        left: &Tensor,
        right: &Tensor,
    ) -> Result<ForwardStreams> {
        let eye_shape = [self.config.eye_size, self.config.eye_size, self.config.in_channels];
        for img in [left, right] {
            if img.shape() != eye_shape {
                return Err(Error::BadShape {
                    op: "ttgf_forward",
                    expected: eye_shape.to_vec(),
                    got: img.shape().to_vec(),
                });
            }
        }
        let face_id = match (&self.face_backbone, face) {
            (Some(_), Some(img)) => {
                let face_shape =
                    [self.config.face_size, self.config.face_size, self.config.in_channels];
                if img.shape() != face_shape {
                    return Err(Error::BadShape {
                        op: "ttgf_forward",
                        expected: face_shape.to_vec(),
                        got: img.shape().to_vec(),
                    });
                }
                Some(sess.constant(img))
            }
            (Some(_), None) => {
                return Err(Error::Config("this topology requires a face image".into()))
            }
            (None, _) => None,
        };
        let left_id = sess.constant(left);
        let right_id = sess.constant(right);
        self.forward_ids(sess, face_id, left_id, right_id)
    }

    /// One-shot inference: fresh session, returns the predicted angles and
    /// the fused feature for downstream correction.
    pub fn predict(
        &self,
        face: Option<&Tensor>,
        left: &Tensor,
        right: &Tensor,
    ) -> Result<(GazeAngles, Tensor)> {
        let mut sess = Session::new();
        let streams = self.forward(&mut sess, face, left, right)?;
        let g = sess.tape.value(streams.gaze);
        let angles = GazeAngles::new(g[0], g[1]);
        Ok((angles, sess.tape.to_tensor(streams.fused)))
    }

    /// Closed-form parameter count for a config; verified against the
    /// constructed model in tests.
    pub fn expected_count(config: &ModelConfig) -> usize {
        let f = config.feature_dim;
        let p = config.proj_dim;
        let bb = ConvBackbone::count(config.in_channels, &config.conv_channels, f);
        let unit =
            |in_dim: usize| TgfModule::count(in_dim, config.mlp_hidden, config.num_blocks, p);
        let (n_backbones, fusion, fused_dim) = match config.topology {
            FusionTopology::EhLr => (3, 2 * unit(f) + unit(2 * p), 2 * p),
            FusionTopology::LrEh => (3, unit(f) + unit(2 * p), 2 * p),
            FusionTopology::Par => (3, unit(f), 3 * p),
            FusionTopology::TwoEyes => (2, unit(f), 2 * p),
        };
        n_backbones * bb + fusion + Mlp2::count(fused_dim, config.gaze_hidden, 2)
    }
}

impl ParamModule for TtgfModel {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        if let Some(bb) = &self.face_backbone {
            bb.visit_params(&join(prefix, "face_bb"), f);
        }
        self.left_backbone.visit_params(&join(prefix, "left_bb"), f);
        self.right_backbone.visit_params(&join(prefix, "right_bb"), f);
        match &self.fusion {
            FusionStack::EhLr { tgf_lh, tgf_rh, tgf_lr } => {
                tgf_lh.visit_params(&join(prefix, "tgf_lh"), f);
                tgf_rh.visit_params(&join(prefix, "tgf_rh"), f);
                tgf_lr.visit_params(&join(prefix, "tgf_lr"), f);
            }
            FusionStack::LrEh { tgf_eyes, tgf_eh } => {
                tgf_eyes.visit_params(&join(prefix, "tgf_eyes"), f);
                tgf_eh.visit_params(&join(prefix, "tgf_eh"), f);
            }
            FusionStack::Par { tgf } => tgf.visit_params(&join(prefix, "tgf_par"), f),
            FusionStack::TwoEyes { tgf_eyes } => {
                tgf_eyes.visit_params(&join(prefix, "tgf_eyes"), f)
            }
        }
        self.gaze_mlp.visit_params(&join(prefix, "gaze_mlp"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        if let Some(bb) = &mut self.face_backbone {
            bb.visit_params_mut(&join(prefix, "face_bb"), f);
        }
        self.left_backbone.visit_params_mut(&join(prefix, "left_bb"), f);
        self.right_backbone.visit_params_mut(&join(prefix, "right_bb"), f);
        match &mut self.fusion {
            FusionStack::EhLr { tgf_lh, tgf_rh, tgf_lr } => {
                tgf_lh.visit_params_mut(&join(prefix, "tgf_lh"), f);
                tgf_rh.visit_params_mut(&join(prefix, "tgf_rh"), f);
                tgf_lr.visit_params_mut(&join(prefix, "tgf_lr"), f);
            }
            FusionStack::LrEh { tgf_eyes, tgf_eh } => {
                tgf_eyes.visit_params_mut(&join(prefix, "tgf_eyes"), f);
                tgf_eh.visit_params_mut(&join(prefix, "tgf_eh"), f);
            }
            FusionStack::Par { tgf } => tgf.visit_params_mut(&join(prefix, "tgf_par"), f),
            FusionStack::TwoEyes { tgf_eyes } => {
                tgf_eyes.visit_params_mut(&join(prefix, "tgf_eyes"), f)
            }
        }
        self.gaze_mlp.visit_params_mut(&join(prefix, "gaze_mlp"), f);
    }
}
