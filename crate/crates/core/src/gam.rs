//! Per-dataset gaze adaptation: one offset head per dataset corrects the
//! shared estimator's output for that dataset's annotation convention.
//!
//! Head 0 belongs to the anchor dataset. It is parameter-free and its
//! offset is identically zero, so anchor samples always see the raw
//! estimator output — bitwise, not just numerically: the correction path
//! skips the addition entirely.

use rand::Rng;

use crate::config::GamMode;
use crate::error::{Error, Result};
use crate::geom::GazeAngles;
use crate::nn::Mlp2;
use crate::params::{join, ParamModule};
use crate::tape::{Session, ValueId};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub enum GamHead {
    /// The anchor head: no parameters, offset (0, 0) for every input.
    Zero,
    /// Two-layer MLP with GELU mapping the fused feature to (Δyaw, Δpitch).
    /// The second layer starts zeroed, so training begins from the raw
    /// estimator's behavior.
    Offset(Mlp2),
    /// Trainable constant offset, ignoring the fused feature (ablation for
    /// pure-rotation/bias inconsistencies).
    Bias(Tensor),
}

#[derive(Debug, Clone)]
pub struct GamBank {
    pub heads: Vec<GamHead>,
    in_dim: usize,
}

impl GamBank {
    /// `num_datasets` heads over a fused feature of `in_dim`; head 0 is the
    /// zero head.
    pub fn new<R: Rng>(
        num_datasets: usize,
        in_dim: usize,
        hidden: usize,
        mode: GamMode,
        rng: &mut R,
    ) -> Result<Self> {
        if num_datasets == 0 {
            return Err(Error::Config("need at least one dataset".into()));
        }
        let mut heads = vec![GamHead::Zero];
        for _ in 1..num_datasets {
            heads.push(match mode {
                GamMode::OffsetMlp => GamHead::Offset(Mlp2::new_zero_out(in_dim, hidden, 2, rng)),
                GamMode::ConstBias => GamHead::Bias(Tensor::zeros(vec![1, 2]).with_grad()),
            });
        }
        Ok(GamBank { heads, in_dim })
    }

    /// Every head is the parameter-free zero head; correction is
    /// structurally absent. Training with this bank is identical to
    /// training with the correction disabled.
    pub fn all_zero(num_datasets: usize) -> Self {
        GamBank {
            heads: vec![GamHead::Zero; num_datasets],
            in_dim: 0,
        }
    }

    pub fn num_datasets(&self) -> usize {
        self.heads.len()
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    fn check_id(&self, dataset_id: usize) -> Result<()> {
        if dataset_id >= self.heads.len() {
            return Err(Error::DatasetIdOutOfRange {
                id: dataset_id,
                num: self.heads.len(),
            });
        }
        Ok(())
    }

    /// Records the offset computation for one sample on the tape. `None`
    /// means "exactly zero": the caller applies no correction at all, which
    /// keeps anchor outputs bitwise identical to the raw estimator.
    pub fn offset_id(
        &self,
        sess: &mut Session,
        path: &str,
        dataset_id: usize,
        fused: ValueId,
    ) -> Result<Option<ValueId>> {
        self.check_id(dataset_id)?;
        match &self.heads[dataset_id] {
            GamHead::Zero => Ok(None),
            GamHead::Offset(mlp) => {
                let path = join(path, &format!("head{dataset_id}"));
                Ok(Some(mlp.forward(sess, &path, fused)?))
            }
            GamHead::Bias(b) => {
                let path = join(path, &format!("head{dataset_id}.bias"));
                Ok(Some(sess.param(&path, b)))
            }
        }
    }

    /// Offset as plain angles, evaluated on a throwaway tape.
    pub fn offset(&self, dataset_id: usize, fused: &Tensor) -> Result<GazeAngles> {
        self.check_id(dataset_id)?;
        if matches!(self.heads[dataset_id], GamHead::Zero) {
            return Ok(GazeAngles::new(0.0, 0.0));
        }
        if fused.numel() != self.in_dim {
            return Err(Error::BadShape {
                op: "gam_offset",
                expected: vec![1, self.in_dim],
                got: fused.shape().to_vec(),
            });
        }
        let mut sess = Session::new();
        let row = Tensor::new(vec![1, self.in_dim], fused.data().to_vec())?;
        let f = sess.constant(&row);
        let id = self
            .offset_id(&mut sess, "", dataset_id, f)?
            .expect("non-anchor head");
        let v = sess.tape.value(id);
        Ok(GazeAngles::new(v[0], v[1]))
    }

    /// Trainable parameters across all heads; the anchor head contributes
    /// nothing.
    pub fn trainable_param_count(&self) -> usize {
        crate::params::param_count(self)
    }

    /// Parameters of a single non-anchor head.
    pub fn head_param_count(&self) -> usize {
        self.heads
            .iter()
            .find_map(|h| match h {
                GamHead::Zero => None,
                GamHead::Offset(m) => {
                    Some(Mlp2::count(m.fc1.d_in(), m.fc1.d_out(), m.fc2.d_out()))
                }
                GamHead::Bias(_) => Some(2),
            })
            .unwrap_or(0)
    }

    pub fn expected_count(num_datasets: usize, in_dim: usize, hidden: usize, mode: GamMode) -> usize {
        let per_head = match mode {
            GamMode::OffsetMlp => Mlp2::count(in_dim, hidden, 2),
            GamMode::ConstBias => 2,
        };
        num_datasets.saturating_sub(1) * per_head
    }
}

impl ParamModule for GamBank {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, head) in self.heads.iter().enumerate() {
            match head {
                GamHead::Zero => {}
                GamHead::Offset(m) => m.visit_params(&join(prefix, &format!("head{i}")), f),
                GamHead::Bias(b) => f(&join(prefix, &format!("head{i}.bias")), b),
            }
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, head) in self.heads.iter_mut().enumerate() {
            match head {
                GamHead::Zero => {}
                GamHead::Offset(m) => m.visit_params_mut(&join(prefix, &format!("head{i}")), f),
                GamHead::Bias(b) => f(&join(prefix, &format!("head{i}.bias")), b),
            }
        }
    }
}

/// Componentwise correction: `g + Δg`.
pub fn apply_gam(g: GazeAngles, delta: GazeAngles) -> GazeAngles {
    GazeAngles::new(g.yaw + delta.yaw, g.pitch + delta.pitch)
}

/// Total trainable parameters of estimator (`n`) plus `m − 1` adaptation
/// heads of `k` parameters each. The anchor head is parameter-free; the
/// headline cost of supporting one more dataset is exactly `k`.
pub fn param_budget(num_datasets: usize, n: usize, k: usize) -> usize {
    n + num_datasets.saturating_sub(1) * k
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::randomize_params;
    use crate::rngs;

    fn bank(m: usize) -> GamBank {
        GamBank::new(m, 8, 4, GamMode::OffsetMlp, &mut rngs::seeded(1)).unwrap()
    }

    #[test]
    fn anchor_offset_is_exactly_zero() {
        let bank = bank(3);
        let mut rng = rngs::seeded(2);
        for _ in 0..20 {
            let f = Tensor::uniform(vec![1, 8], -5.0, 5.0, &mut rng);
            let d = bank.offset(0, &f).unwrap();
            assert_eq!(d.yaw, 0.0);
            assert_eq!(d.pitch, 0.0);
        }
    }

    #[test]
    fn zero_initialized_head_starts_at_zero() {
        let bank = bank(2);
        let f = Tensor::uniform(vec![1, 8], -1.0, 1.0, &mut rngs::seeded(3));
        let d = bank.offset(1, &f).unwrap();
        assert_eq!((d.yaw, d.pitch), (0.0, 0.0));
    }

    #[test]
    fn dataset_id_out_of_range_is_an_error() {
        let bank = bank(2);
        let f = Tensor::zeros(vec![1, 8]);
        assert!(matches!(
            bank.offset(2, &f),
            Err(Error::DatasetIdOutOfRange { id: 2, num: 2 })
        ));
    }

    #[test]
    fn head_gradients_match_central_differences() {
        let mut bank = bank(2);
        randomize_params(&mut bank, -0.5, 0.5, &mut rngs::seeded(4));
        let f = Tensor::uniform(vec![1, 8], -1.0, 1.0, &mut rngs::seeded(5));

        let mut sess = Session::new();
        let fi = sess.constant(&f);
        let off = bank.offset_id(&mut sess, "", 1, fi).unwrap().unwrap();
        let a = sess.tape.abs(off);
        let loss = sess.tape.mean_all(a);
        sess.backward(loss).unwrap();
        let analytic: std::collections::HashMap<String, Vec<f64>> = sess
            .bindings()
            .map(|(p, id)| (p.to_string(), sess.tape.grad(id).unwrap().to_vec()))
            .collect();

        let mut eval = |b: &GamBank| {
            let mut s = Session::new();
            let fi = s.constant(&f);
            let off = b.offset_id(&mut s, "", 1, fi).unwrap().unwrap();
            let a = s.tape.abs(off);
            let l = s.tape.mean_all(a);
            s.tape.value(l)[0]
        };
        let report = crate::gradcheck::check_against_finite_differences(
            &mut bank, &analytic, &mut eval, 1e-5, 1e-5,
        );
        assert!(report.passed(), "{}", report.render());
    }

    #[test]
    fn apply_gam_arithmetic() {
        let g = GazeAngles::new(0.1, -0.2);
        let out = apply_gam(g, GazeAngles::new(0.0, 0.0));
        assert_eq!((out.yaw, out.pitch), (0.1, -0.2));
        let out = apply_gam(GazeAngles::new(0.1, 0.2), GazeAngles::new(0.05, -0.1));
        assert!((out.yaw - 0.15).abs() < 1e-15);
        assert!((out.pitch - 0.1).abs() < 1e-15);
    }

    #[test]
    fn apply_gam_is_additive() {
        let g = GazeAngles::new(0.3, -0.4);
        let a = GazeAngles::new(0.01, 0.02);
        let b = GazeAngles::new(-0.03, 0.05);
        let chained = apply_gam(apply_gam(g, a), b);
        let summed = apply_gam(g, GazeAngles::new(a.yaw + b.yaw, a.pitch + b.pitch));
        assert!((chained.yaw - summed.yaw).abs() < 1e-15);
        assert!((chained.pitch - summed.pitch).abs() < 1e-15);
    }

    #[test]
    fn budget_matches_counted_parameters() {
        // M = 1: no adaptation parameters at all
        assert_eq!(bank(1).trainable_param_count(), 0);
        assert_eq!(param_budget(1, 1000, 42), 1000);

        let b = bank(4);
        let k = b.head_param_count();
        assert_eq!(k, Mlp2::count(8, 4, 2));
        assert_eq!(b.trainable_param_count(), 3 * k);
        assert_eq!(param_budget(4, 0, k), b.trainable_param_count());
        assert_eq!(
            GamBank::expected_count(4, 8, 4, GamMode::OffsetMlp),
            b.trainable_param_count()
        );
    }

    #[test]
    fn budget_grows_linearly_in_dataset_count() {
        let k = 57;
        for m in 1..6 {
            assert_eq!(param_budget(m + 1, 100, k) - param_budget(m, 100, k), k);
        }
    }

    #[test]
    fn const_bias_mode_counts() {
        let b = GamBank::new(3, 8, 4, GamMode::ConstBias, &mut rngs::seeded(6)).unwrap();
        assert_eq!(b.trainable_param_count(), 4);
        assert_eq!(b.head_param_count(), 2);
    }

    #[test]
    fn training_one_head_leaves_others_untouched() {
        // gradient isolation: only the selected head binds onto the tape
        let mut bank = bank(4);
        randomize_params(&mut bank, -0.5, 0.5, &mut rngs::seeded(7));
        let f = Tensor::uniform(vec![1, 8], -1.0, 1.0, &mut rngs::seeded(8));
        let mut sess = Session::new();
        let fi = sess.constant(&f);
        let off = bank.offset_id(&mut sess, "", 2, fi).unwrap().unwrap();
        let a = sess.tape.abs(off);
        let loss = sess.tape.mean_all(a);
        sess.backward(loss).unwrap();
        let bound: Vec<&str> = sess.bindings().map(|(p, _)| p).collect();
        assert!(bound.iter().all(|p| p.starts_with("head2")));
        crate::params::harvest_grads(&mut bank, &sess);
        bank.visit_params("", &mut |path, t| {
            if path.starts_with("head2") {
                assert!(t.grad.is_some(), "{path} missing gradient");
            } else {
                assert!(t.grad.is_none(), "{path} unexpectedly has a gradient");
            }
        });
    }
}
