//! Named-parameter traversal.
//!
//! Models expose their trainable tensors through [`ParamModule`] under
//! stable dotted paths ("left_bb.stage0.kernel", "gaze_mlp.fc1.weight").
//! The same paths are used when binding onto a tape, when harvesting
//! gradients, by the optimizer state, in checkpoints, and in grad-check
//! reports.

use crate::tape::Session;
use crate::tensor::Tensor;

pub trait ParamModule {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor));
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn param_count(m: &impl ParamModule) -> usize {
    let mut n = 0;
    m.visit_params("", &mut |_, t| n += t.numel());
    n
}

/// `(path, numel)` for every parameter, in visit order.
pub fn param_paths(m: &impl ParamModule) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    m.visit_params("", &mut |p, t| out.push((p.to_string(), t.numel())));
    out
}

/// Adds `delta` to one element of one named parameter.
pub fn adjust_param(m: &mut impl ParamModule, path: &str, idx: usize, delta: f64) {
    let mut hit = false;
    m.visit_params_mut("", &mut |p, t| {
        if p == path {
            t.data_mut()[idx] += delta;
            hit = true;
        }
    });
    debug_assert!(hit, "no parameter at path {path}");
}

/// Copies the tape gradients of a finished session into the `grad` field of
/// each bound parameter. Parameters never bound in this session keep their
/// current (usually empty) gradient.
pub fn harvest_grads(m: &mut impl ParamModule, sess: &Session) {
    m.visit_params_mut("", &mut |p, t| {
        if let Some(g) = sess.grad_of(p) {
            t.accumulate_grad(g);
        }
    });
}

pub fn zero_grads(m: &mut impl ParamModule) {
    m.visit_params_mut("", &mut |_, t| t.zero_grad());
}

/// Overwrites every parameter with i.i.d. uniform values; used by the
/// gradient checker to avoid the zero-initialized layers that make finite
/// differences degenerate.
pub fn randomize_params<R: rand::Rng>(m: &mut impl ParamModule, lo: f64, hi: f64, rng: &mut R) {
    m.visit_params_mut("", &mut |_, t| {
        for v in t.data_mut() {
            *v = rng.random_range(lo..hi);
        }
    });
}

/// Two modules traversed as one, each under its own prefix.
pub struct PairMut<'a, A: ParamModule, B: ParamModule> {
    pub first: &'a mut A,
    pub second: &'a mut B,
    pub first_prefix: &'static str,
    pub second_prefix: &'static str,
}

impl<A: ParamModule, B: ParamModule> ParamModule for PairMut<'_, A, B> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.first.visit_params(&join(prefix, self.first_prefix), f);
        self.second
            .visit_params(&join(prefix, self.second_prefix), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.first
            .visit_params_mut(&join(prefix, self.first_prefix), f);
        self.second
            .visit_params_mut(&join(prefix, self.second_prefix), f);
    }
}
