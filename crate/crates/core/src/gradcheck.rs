//! Central-finite-difference gradient verification.
//!
//! The finite-difference side evaluates the loss as a black box and never
//! touches the tape's backward rules, so it is an independent oracle for
//! them.

use std::collections::HashMap;

use crate::params::{adjust_param, param_paths, ParamModule};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Relative error floor: differences below this magnitude are measured
/// absolutely, which keeps finite-difference roundoff (~1e-11 on O(1)
/// losses) from dominating near-zero gradients.
const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| rel_err(x, y))
        .fold(0.0, f64::max)
}

/// Central differences `(f(x+h) - f(x-h)) / 2h` for every element of every
/// input tensor. `f` is called with the perturbed input list and must be a
/// pure function of it.
pub fn central_diff_gradients(
    f: &dyn Fn(&[Tensor]) -> f64,
    inputs: &[Tensor],
    step: f64,
) -> Vec<Vec<f64>> {
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for ti in 0..inputs.len() {
        let n = inputs[ti].numel();
        let mut g = vec![0.0; n];
        for j in 0..n {
            let orig = work[ti].data()[j];
            work[ti].data_mut()[j] = orig + step;
            let up = f(&work);
            work[ti].data_mut()[j] = orig - step;
            let down = f(&work);
            work[ti].data_mut()[j] = orig;
            g[j] = (up - down) / (2.0 * step);
        }
        grads.push(g);
    }
    grads
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub path: String,
    pub numel: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checks: Vec<ParamCheck>,
    pub tolerance: f64,
    pub step: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.max_rel_err < self.tolerance)
    }

    /// One line per parameter tensor plus a verdict line.
    pub fn render(&self) -> String {
        let width = self
            .checks
            .iter()
            .map(|c| c.path.len())
            .max()
            .unwrap_or(10)
            .max(10);
        let mut out = format!("{:<width$}  {:>8}  {:>12}  status\n", "parameter", "numel", "max rel err");
        for c in &self.checks {
            let status = if c.max_rel_err < self.tolerance { "ok" } else { "FAIL" };
            out.push_str(&format!(
                "{:<width$}  {:>8}  {:>12.3e}  {}\n",
                c.path, c.numel, c.max_rel_err, status
            ));
        }
        out.push_str(&format!(
            "{} parameter tensors, max rel err {:.3e}, tolerance {:.1e}: {}\n",
            self.checks.len(),
            self.max_rel_err(),
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        ));
        out
    }
}

/// Compares analytic gradients (keyed by parameter path) against central
/// finite differences of `eval` taken through every element of every
/// parameter in `model`.
pub fn check_against_finite_differences<M: ParamModule>(
    model: &mut M,
    analytic: &HashMap<String, Vec<f64>>,
    eval: &mut dyn FnMut(&M) -> f64,
    step: f64,
    tolerance: f64,
) -> GradCheckReport {
    let paths = param_paths(model);
    let mut checks = Vec::with_capacity(paths.len());
    for (path, numel) in paths {
        let ad = analytic
            .get(&path)
            .unwrap_or_else(|| panic!("no analytic gradient for {path}"));
        assert_eq!(ad.len(), numel, "gradient length mismatch at {path}");
        let mut worst = 0.0f64;
        for j in 0..numel {
            adjust_param(model, &path, j, step);
            let up = eval(model);
            adjust_param(model, &path, j, -2.0 * step);
            let down = eval(model);
            adjust_param(model, &path, j, step);
            let fd = (up - down) / (2.0 * step);
            worst = worst.max(rel_err(ad[j], fd));
        }
        checks.push(ParamCheck {
            path,
            numel,
            max_rel_err: worst,
        });
    }
    GradCheckReport {
        checks,
        tolerance,
        step,
    }
}

/// Settings for the whole-model check.
#[derive(Debug, Clone, Copy)]
pub struct ModelCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Corrupts one analytic gradient before comparison; proves the
    /// harness actually fails on a broken backward rule.
    pub inject_fault: bool,
}

impl Default for ModelCheckOptions {
    fn default() -> Self {
        ModelCheckOptions {
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            inject_fault: false,
        }
    }
}

/// Checks every parameter gradient of a full estimator (fusion model plus
/// one adaptation head) against central finite differences of the training
/// loss on a fixed two-sample batch: one anchor sample and one corrected
/// sample, so the adaptation path is exercised too.
///
/// All parameters are re-randomized first; zero-initialized layers would
/// otherwise hide their gradient paths behind exact zeros.
pub fn check_estimator(
    model_cfg: &crate::config::ModelConfig,
    seed: u64,
    opts: ModelCheckOptions,
) -> crate::error::Result<GradCheckReport> {
    use crate::geom::GazeAngles;
    use crate::synth::render::{render_sample, Appearance, SubjectParams};
    use crate::tape::Session;
    use crate::train::{l1_loss, GazeEstimator};

    let mut rng = crate::rngs::seeded(seed);
    let mut est = GazeEstimator::new(
        model_cfg.clone(),
        2,
        crate::config::GamMode::OffsetMlp,
        &mut rng,
    )?;
    crate::params::randomize_params(&mut est, -0.5, 0.5, &mut rng);

    let subj = SubjectParams::sample(&mut rng);
    let app = Appearance::default();
    let poses = [
        (GazeAngles::from_degrees(12.0, -8.0), GazeAngles::from_degrees(-6.0, 4.0)),
        (GazeAngles::from_degrees(-20.0, 10.0), GazeAngles::from_degrees(9.0, -3.0)),
    ];
    let samples: Vec<_> = poses
        .iter()
        .map(|(g, h)| {
            render_sample(*g, *h, &subj, &app, model_cfg.face_size, model_cfg.eye_size)
        })
        .collect::<crate::error::Result<_>>()?;
    let labels = [GazeAngles::new(0.31, -0.12), GazeAngles::new(-0.24, 0.18)];

    let forward_loss = |est: &GazeEstimator| -> crate::error::Result<(Session, crate::tape::ValueId)> {
        let mut sess = Session::new();
        let mut outs = Vec::new();
        let mut label_data = Vec::new();
        for (i, ((face, left, right), label)) in samples.iter().zip(&labels).enumerate() {
            let streams = est.model.forward(&mut sess, Some(face), left, right)?;
            let out = if i == 1 {
                match est.gam.offset_id(&mut sess, "gam", 1, streams.fused)? {
                    Some(delta) => sess.tape.add(streams.gaze, delta)?,
                    None => streams.gaze,
                }
            } else {
                streams.gaze
            };
            outs.push(out);
            label_data.push(label.yaw);
            label_data.push(label.pitch);
        }
        let preds = sess.tape.stack_rows(&outs)?;
        let lab = sess.tape.constant_parts(vec![2, 2], label_data);
        let loss = l1_loss(&mut sess, preds, lab)?;
        Ok((sess, loss))
    };

    let (mut sess, loss) = forward_loss(&est)?;
    sess.backward(loss)?;
    let mut analytic: HashMap<String, Vec<f64>> = sess
        .bindings()
        .map(|(p, id)| {
            let g = sess
                .tape
                .grad(id)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; sess.tape.value(id).len()]);
            (p.to_string(), g)
        })
        .collect();
    if opts.inject_fault {
        let first = analytic
            .get_mut("gaze_mlp.fc1.weight")
            .expect("gaze head is always bound");
        first[0] = first[0] * 1.5 + 1.0;
    }

    let mut eval = |m: &GazeEstimator| {
        let (sess, loss) = forward_loss(m).expect("forward on perturbed params");
        sess.tape.value(loss)[0]
    };
    Ok(check_against_finite_differences(
        &mut est,
        &analytic,
        &mut eval,
        opts.step,
        opts.tolerance,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_diff_matches_polynomial_derivative() {
        // f(x) = x0^2 + 3 x1 -> df = [2 x0, 3]
        let f = |xs: &[Tensor]| {
            let d = xs[0].data();
            d[0] * d[0] + 3.0 * d[1]
        };
        let x = Tensor::from_vec(vec![1.5, -2.0]);
        let g = central_diff_gradients(&f, &[x], 1e-5);
        assert!((g[0][0] - 3.0).abs() < 1e-9);
        assert!((g[0][1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn rel_err_uses_absolute_floor_near_zero() {
        assert!(rel_err(0.0, 1e-11) < 1e-4);
        assert!(rel_err(1.0, 1.1) > 0.05);
    }

    #[test]
    fn full_tiny_estimator_passes_and_fault_injection_fails() {
        let cfg = crate::config::ModelConfig::tiny();
        let report = check_estimator(&cfg, 7, ModelCheckOptions::default()).unwrap();
        assert!(report.passed(), "{}", report.render());
        // the report names every parameter tensor
        let est = crate::train::GazeEstimator::new(
            cfg.clone(),
            2,
            crate::config::GamMode::OffsetMlp,
            &mut crate::rngs::seeded(7),
        )
        .unwrap();
        let expected = crate::params::param_paths(&est);
        assert_eq!(report.checks.len(), expected.len());

        let corrupted = check_estimator(
            &cfg,
            7,
            ModelCheckOptions {
                inject_fault: true,
                ..ModelCheckOptions::default()
            },
        )
        .unwrap();
        assert!(!corrupted.passed(), "fault injection went undetected");
    }
}
