//! The two-head architecture: a shared fully connected ReLU backbone feeding
//! a linear classifier head and an auxiliary rectifier head.
//!
//! The rectifier head maps the shared feature through
//! `W2(ReLU(BN(W1 z + b1))) + b2` followed by a sigmoid, so its output lies
//! in `[0, 1]`. The sigmoid is appended on purpose: the rectified confidence
//! `r_con = confidence * a_phi` must stay below the confidence it rectifies.

mod checkpoint;
mod graph;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use graph::{tape_forward, tape_forward_batch, BatchGraph, ParamNodes, TapeHeads};

use crate::numkit::{argmax, softmax_t, Matrix, NumError, ProbVector};
use crate::rng::Rng;
use std::ops::Range;
use thiserror::Error;

/// Batch-norm variance guard.
pub const BN_EPS: f64 = 1e-5;
/// Running-statistics update rate: `run = (1 - RATE) * run + RATE * batch`.
pub const BN_UPDATE_RATE: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("dimension mismatch: expected input of length {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("train-mode batch norm needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse error at byte offset {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unsupported checkpoint version: found `{found}`, expected `RRLAB-CKPT v1`")]
    Version { found: String },
}

/// Whether batch norm uses batch statistics (train) or running statistics
/// (eval).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Network shape: input dimension, backbone widths, class count, and the
/// rectifier's hidden width (defaults to half the feature width).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    input_dim: usize,
    backbone: Vec<usize>,
    classes: usize,
    aux_hidden: usize,
}

impl Architecture {
    pub fn new(input_dim: usize, backbone: Vec<usize>, classes: usize) -> Result<Self, ModelError> {
        let feature = backbone.last().copied().unwrap_or(input_dim);
        Self::with_aux_hidden(input_dim, backbone, classes, (feature / 2).max(1))
    }

    pub fn with_aux_hidden(
        input_dim: usize,
        backbone: Vec<usize>,
        classes: usize,
        aux_hidden: usize,
    ) -> Result<Self, ModelError> {
        if input_dim < 1 {
            return Err(ModelError::InvalidArchitecture("input_dim must be >= 1".into()));
        }
        if classes < 2 {
            return Err(ModelError::InvalidArchitecture("need at least 2 classes".into()));
        }
        if backbone.iter().any(|&w| w == 0) || aux_hidden == 0 {
            return Err(ModelError::InvalidArchitecture("layer widths must be >= 1".into()));
        }
        Ok(Architecture { input_dim, backbone, classes, aux_hidden })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn backbone(&self) -> &[usize] {
        &self.backbone
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn aux_hidden(&self) -> usize {
        self.aux_hidden
    }

    /// Width of the shared feature `z` (the last backbone width, or the input
    /// dimension for an empty backbone).
    pub fn feature_dim(&self) -> usize {
        self.backbone.last().copied().unwrap_or(self.input_dim)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Layer {
    pub w: Matrix,
    pub b: Vec<f64>,
}

/// All learnable parameters plus the rectifier head's batch-norm running
/// statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoHeadParams {
    arch: Architecture,
    pub(crate) backbone: Vec<Layer>,
    pub(crate) cls_w: Matrix,
    pub(crate) cls_b: Vec<f64>,
    pub(crate) aux_w1: Matrix,
    pub(crate) aux_b1: Vec<f64>,
    pub(crate) bn_gamma: Vec<f64>,
    pub(crate) bn_beta: Vec<f64>,
    pub(crate) bn_mean: Vec<f64>,
    pub(crate) bn_var: Vec<f64>,
    pub(crate) aux_w2: Matrix,
    pub(crate) aux_b2: Vec<f64>,
}

/// Per-example forward results.
#[derive(Clone, Debug)]
pub struct HeadOutputs {
    pub logits: Vec<f64>,
    pub probs: ProbVector,
    /// `max(probs)`.
    pub confidence: f64,
    /// Predicted class, ties broken by the lowest index.
    pub y_m: usize,
    /// Rectifier output in `[0, 1]`.
    pub a_phi: f64,
    /// `confidence * a_phi`.
    pub r_con: f64,
}

/// Initializes parameters from a seeded stream: weights are uniform in
/// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero, batch norm at identity
/// (`gamma = 1`, `beta = 0`, running mean 0, running variance 1).
pub fn init_params(arch: &Architecture, seed: u64) -> TwoHeadParams {
    let mut rng = Rng::stream(seed, "init");
    let fill = |rows: usize, cols: usize, rng: &mut Rng| {
        let bound = 1.0 / (cols as f64).sqrt();
        Matrix::from_fn(rows, cols, |_, _| rng.uniform_in(-bound, bound))
    };
    let mut backbone = Vec::new();
    let mut prev = arch.input_dim;
    for &width in &arch.backbone {
        backbone.push(Layer {
            w: fill(width, prev, &mut rng),
            b: vec![0.0; width],
        });
        prev = width;
    }
    let z = arch.feature_dim();
    let h = arch.aux_hidden;
    TwoHeadParams {
        arch: arch.clone(),
        backbone,
        cls_w: fill(arch.classes, z, &mut rng),
        cls_b: vec![0.0; arch.classes],
        aux_w1: fill(h, z, &mut rng),
        aux_b1: vec![0.0; h],
        bn_gamma: vec![1.0; h],
        bn_beta: vec![0.0; h],
        bn_mean: vec![0.0; h],
        bn_var: vec![1.0; h],
        aux_w2: fill(1, h, &mut rng),
        aux_b2: vec![0.0],
    }
}

impl TwoHeadParams {
    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    /// Named spans of the flattened learnable parameter vector, in the fixed
    /// order used by [`flatten_learnable`](Self::flatten_learnable). Running
    /// statistics are not learnable and never appear here.
    pub fn param_spans(&self) -> Vec<(String, Range<usize>)> {
        let mut spans = Vec::new();
        let mut off = 0;
        let span = |name: String, len: usize, off: &mut usize| {
            let r = *off..*off + len;
            *off += len;
            (name, r)
        };
        for (i, layer) in self.backbone.iter().enumerate() {
            spans.push(span(format!("backbone{i}.w"), layer.w.data().len(), &mut off));
            spans.push(span(format!("backbone{i}.b"), layer.b.len(), &mut off));
        }
        spans.push(span("cls.w".into(), self.cls_w.data().len(), &mut off));
        spans.push(span("cls.b".into(), self.cls_b.len(), &mut off));
        spans.push(span("aux.w1".into(), self.aux_w1.data().len(), &mut off));
        spans.push(span("aux.b1".into(), self.aux_b1.len(), &mut off));
        spans.push(span("aux.bn_gamma".into(), self.bn_gamma.len(), &mut off));
        spans.push(span("aux.bn_beta".into(), self.bn_beta.len(), &mut off));
        spans.push(span("aux.w2".into(), self.aux_w2.data().len(), &mut off));
        spans.push(span("aux.b2".into(), self.aux_b2.len(), &mut off));
        spans
    }

    pub fn learnable_len(&self) -> usize {
        self.param_spans().last().map(|(_, r)| r.end).unwrap_or(0)
    }

    /// All learnable parameters as one flat vector (running stats excluded).
    pub fn flatten_learnable(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.learnable_len());
        for layer in &self.backbone {
            out.extend_from_slice(layer.w.data());
            out.extend_from_slice(&layer.b);
        }
        out.extend_from_slice(self.cls_w.data());
        out.extend_from_slice(&self.cls_b);
        out.extend_from_slice(self.aux_w1.data());
        out.extend_from_slice(&self.aux_b1);
        out.extend_from_slice(&self.bn_gamma);
        out.extend_from_slice(&self.bn_beta);
        out.extend_from_slice(self.aux_w2.data());
        out.extend_from_slice(&self.aux_b2);
        out
    }

    /// Writes a flat vector produced by [`flatten_learnable`](Self::flatten_learnable)
    /// back into the parameter tensors.
    pub fn set_learnable(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.learnable_len(), "flat parameter length");
        let mut off = 0;
        let take = |len: usize, off: &mut usize| {
            let s = &flat[*off..*off + len];
            *off += len;
            s
        };
        for layer in &mut self.backbone {
            let n = layer.w.data().len();
            layer.w.data_mut().copy_from_slice(take(n, &mut off));
            let n = layer.b.len();
            layer.b.copy_from_slice(take(n, &mut off));
        }
        let n = self.cls_w.data().len();
        self.cls_w.data_mut().copy_from_slice(take(n, &mut off));
        let n = self.cls_b.len();
        self.cls_b.copy_from_slice(take(n, &mut off));
        let n = self.aux_w1.data().len();
        self.aux_w1.data_mut().copy_from_slice(take(n, &mut off));
        let n = self.aux_b1.len();
        self.aux_b1.copy_from_slice(take(n, &mut off));
        let n = self.bn_gamma.len();
        self.bn_gamma.copy_from_slice(take(n, &mut off));
        let n = self.bn_beta.len();
        self.bn_beta.copy_from_slice(take(n, &mut off));
        let n = self.aux_w2.data().len();
        self.aux_w2.data_mut().copy_from_slice(take(n, &mut off));
        let n = self.aux_b2.len();
        self.aux_b2.copy_from_slice(take(n, &mut off));
    }

    /// Batch-norm running statistics `(mean, var)`.
    pub fn running_stats(&self) -> (&[f64], &[f64]) {
        (&self.bn_mean, &self.bn_var)
    }

    pub fn set_running_stats(&mut self, mean: Vec<f64>, var: Vec<f64>) {
        assert_eq!(mean.len(), self.bn_mean.len());
        assert_eq!(var.len(), self.bn_var.len());
        self.bn_mean = mean;
        self.bn_var = var;
    }

    /// Applies one running-statistics update from batch statistics.
    pub fn update_running_stats(&mut self, batch_mean: &[f64], batch_var: &[f64]) {
        for (r, &b) in self.bn_mean.iter_mut().zip(batch_mean) {
            *r = (1.0 - BN_UPDATE_RATE) * *r + BN_UPDATE_RATE * b;
        }
        for (r, &b) in self.bn_var.iter_mut().zip(batch_var) {
            *r = (1.0 - BN_UPDATE_RATE) * *r + BN_UPDATE_RATE * b;
        }
    }

    /// Backbone feature `z` for one input.
    pub(crate) fn feature(&self, x: &[f64]) -> Vec<f64> {
        let mut z = x.to_vec();
        for layer in &self.backbone {
            z = layer.w.matvec(&z);
            for (zi, bi) in z.iter_mut().zip(&layer.b) {
                *zi += bi;
            }
            for zi in z.iter_mut() {
                *zi = zi.max(0.0);
            }
        }
        z
    }

    /// Rectifier pre-activations `u = W1 z + b1`.
    pub(crate) fn aux_pre(&self, z: &[f64]) -> Vec<f64> {
        let mut u = self.aux_w1.matvec(z);
        for (ui, bi) in u.iter_mut().zip(&self.aux_b1) {
            *ui += bi;
        }
        u
    }

    /// Rectifier output from normalized hidden activations.
    pub(crate) fn aux_out(&self, v_normed: &[f64]) -> f64 {
        let r: Vec<f64> = v_normed.iter().map(|&a| a.max(0.0)).collect();
        let o = self.aux_w2.matvec(&r)[0] + self.aux_b2[0];
        sigmoid(o)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn bn_apply(u: &[f64], mean: &[f64], var: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    (0..u.len())
        .map(|j| gamma[j] * (u[j] - mean[j]) / (var[j] + BN_EPS).sqrt() + beta[j])
        .collect()
}

fn outputs_from(
    params: &TwoHeadParams,
    logits: Vec<f64>,
    a_phi: f64,
    tau_cls: f64,
) -> Result<HeadOutputs, ModelError> {
    let _ = params;
    let probs = softmax_t(&logits, tau_cls)?;
    let y_m = argmax(&logits);
    let confidence = probs.get(y_m);
    Ok(HeadOutputs {
        logits,
        confidence,
        y_m,
        a_phi,
        r_con: confidence * a_phi,
        probs,
    })
}

/// Forward pass for one input.
///
/// In eval mode batch norm uses the running statistics. In train mode it uses
/// the statistics of this single input (mean = the activation, variance = 0,
/// guarded by [`BN_EPS`]); running statistics are only updated by
/// [`forward_batch_train`].
pub fn forward(
    params: &TwoHeadParams,
    x: &[f64],
    tau_cls: f64,
    mode: BnMode,
) -> Result<HeadOutputs, ModelError> {
    if x.len() != params.arch.input_dim {
        return Err(ModelError::DimMismatch { expected: params.arch.input_dim, got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(NumError::InvalidArgument("input contains non-finite values".into()).into());
    }
    let z = params.feature(x);
    let mut logits = params.cls_w.matvec(&z);
    for (l, b) in logits.iter_mut().zip(&params.cls_b) {
        *l += b;
    }
    let u = params.aux_pre(&z);
    let v = match mode {
        BnMode::Eval => bn_apply(&u, &params.bn_mean, &params.bn_var, &params.bn_gamma, &params.bn_beta),
        BnMode::Train => {
            let var = vec![0.0; u.len()];
            bn_apply(&u, &u, &var, &params.bn_gamma, &params.bn_beta)
        }
    };
    let a_phi = params.aux_out(&v);
    outputs_from(params, logits, a_phi, tau_cls)
}

/// Eval-mode forward over the rows of `xs`. Each row's result is independent
/// of the batch composition.
pub fn forward_batch(
    params: &TwoHeadParams,
    xs: &Matrix,
    tau_cls: f64,
) -> Result<Vec<HeadOutputs>, ModelError> {
    (0..xs.rows())
        .map(|i| forward(params, xs.row(i), tau_cls, BnMode::Eval))
        .collect()
}

/// Train-mode forward over a batch: batch norm uses the batch statistics of
/// the rectifier pre-activations and the running statistics are updated at
/// rate [`BN_UPDATE_RATE`]. Needs at least 2 rows.
pub fn forward_batch_train(
    params: &mut TwoHeadParams,
    xs: &Matrix,
    tau_cls: f64,
) -> Result<Vec<HeadOutputs>, ModelError> {
    let n = xs.rows();
    if n < 2 {
        return Err(ModelError::BatchTooSmall(n));
    }
    let mut features = Vec::with_capacity(n);
    let mut pres = Vec::with_capacity(n);
    for i in 0..n {
        let x = xs.row(i);
        if x.len() != params.arch.input_dim {
            return Err(ModelError::DimMismatch { expected: params.arch.input_dim, got: x.len() });
        }
        let z = params.feature(x);
        let u = params.aux_pre(&z);
        features.push(z);
        pres.push(u);
    }
    let h = params.arch.aux_hidden;
    let mut mean = vec![0.0; h];
    for u in &pres {
        for j in 0..h {
            mean[j] += u[j];
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut var = vec![0.0; h];
    for u in &pres {
        for j in 0..h {
            let d = u[j] - mean[j];
            var[j] += d * d;
        }
    }
    for v in var.iter_mut() {
        *v /= n as f64;
    }

    let mut outs = Vec::with_capacity(n);
    for (z, u) in features.iter().zip(&pres) {
        let mut logits = params.cls_w.matvec(z);
        for (l, b) in logits.iter_mut().zip(&params.cls_b) {
            *l += b;
        }
        let v = bn_apply(u, &mean, &var, &params.bn_gamma, &params.bn_beta);
        let a_phi = params.aux_out(&v);
        outs.push(outputs_from(params, logits, a_phi, tau_cls)?);
    }
    params.update_running_stats(&mean, &var);
    Ok(outs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_arch() -> Architecture {
        Architecture::new(4, vec![8, 8], 3).unwrap()
    }

    #[test]
    fn aux_hidden_defaults_to_half_feature_width() {
        assert_eq!(toy_arch().aux_hidden(), 4);
        let a = Architecture::new(5, vec![], 2).unwrap();
        assert_eq!(a.feature_dim(), 5);
        assert_eq!(a.aux_hidden(), 2);
    }

    #[test]
    fn bad_architectures_rejected() {
        assert!(Architecture::new(0, vec![8], 3).is_err());
        assert!(Architecture::new(4, vec![8], 1).is_err());
        assert!(Architecture::new(4, vec![0], 3).is_err());
        assert!(Architecture::with_aux_hidden(4, vec![8], 3, 0).is_err());
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let arch = toy_arch();
        let a = init_params(&arch, 42);
        let b = init_params(&arch, 42);
        assert_eq!(a.flatten_learnable(), b.flatten_learnable());
    }

    #[test]
    fn distinct_seeds_differ() {
        let arch = toy_arch();
        for s in 0..100u64 {
            let a = init_params(&arch, 2 * s);
            let b = init_params(&arch, 2 * s + 1);
            assert_ne!(a.flatten_learnable(), b.flatten_learnable(), "seed pair {s}");
        }
    }

    #[test]
    fn zero_params_give_symmetric_outputs() {
        let arch = toy_arch();
        let mut p = init_params(&arch, 0);
        let zeros = vec![0.0; p.learnable_len()];
        let mut flat = zeros.clone();
        // keep gamma at 1 so batch norm stays the identity map on zeros
        for (name, span) in p.param_spans() {
            if name == "aux.bn_gamma" {
                for v in &mut flat[span] {
                    *v = 1.0;
                }
            }
        }
        p.set_learnable(&flat);
        let out = forward(&p, &[0.3, -0.2, 0.9, 0.0], 1.0, BnMode::Eval).unwrap();
        let l = arch.classes() as f64;
        assert!((out.confidence - 1.0 / l).abs() < 1e-12);
        assert_eq!(out.y_m, 0);
        assert!((out.a_phi - 0.5).abs() < 1e-12);
        assert!((out.r_con - 0.5 / l).abs() < 1e-12);
    }

    #[test]
    fn predicted_label_invariant_to_temperature() {
        let arch = toy_arch();
        let p = init_params(&arch, 7);
        let x = [0.5, -1.0, 0.25, 2.0];
        let base = forward(&p, &x, 1.0, BnMode::Eval).unwrap();
        for k in -4..=4 {
            let tau = 2.0f64.powi(k);
            let out = forward(&p, &x, tau, BnMode::Eval).unwrap();
            assert_eq!(out.y_m, base.y_m, "tau {tau}");
        }
    }

    #[test]
    fn r_con_never_exceeds_confidence() {
        let arch = toy_arch();
        let p = init_params(&arch, 3);
        let mut rng = crate::rng::Rng::from_seed(9);
        for _ in 0..200 {
            let x: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
            let out = forward(&p, &x, 1.0, BnMode::Eval).unwrap();
            assert!(out.r_con <= out.confidence + 1e-15);
            assert!((out.r_con - out.confidence * out.a_phi).abs() < 1e-15);
        }
    }

    #[test]
    fn eval_batch_rows_independent() {
        let arch = toy_arch();
        let p = init_params(&arch, 5);
        let xs = Matrix::new(2, 4, vec![0.1, 0.2, 0.3, 0.4, -1.0, 0.5, 0.0, 2.0]).unwrap();
        let batch = forward_batch(&p, &xs, 1.0).unwrap();
        let single = forward(&p, xs.row(0), 1.0, BnMode::Eval).unwrap();
        assert_eq!(batch[0].logits, single.logits);
        assert_eq!(batch[0].a_phi, single.a_phi);
    }

    #[test]
    fn train_batch_of_identical_rows_is_finite() {
        let arch = toy_arch();
        let mut p = init_params(&arch, 5);
        let row = [0.4, -0.6, 1.2, 0.0];
        let mut data = Vec::new();
        for _ in 0..4 {
            data.extend_from_slice(&row);
        }
        let xs = Matrix::new(4, 4, data).unwrap();
        let outs = forward_batch_train(&mut p, &xs, 1.0).unwrap();
        for o in outs {
            assert!(o.a_phi.is_finite());
            assert!(o.logits.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn single_row_train_batch_rejected() {
        let arch = toy_arch();
        let mut p = init_params(&arch, 5);
        let xs = Matrix::new(1, 4, vec![0.0; 4]).unwrap();
        assert!(matches!(
            forward_batch_train(&mut p, &xs, 1.0),
            Err(ModelError::BatchTooSmall(1))
        ));
    }

    #[test]
    fn running_stats_converge_geometrically() {
        let arch = toy_arch();
        let mut p = init_params(&arch, 5);
        let xs = Matrix::new(
            2,
            4,
            vec![0.1, 0.2, 0.3, 0.4, -1.0, 0.5, 0.0, 2.0],
        )
        .unwrap();
        // Batch statistics are fixed, so mu_t - m = 0.9^t (mu_0 - m).
        forward_batch_train(&mut p, &xs, 1.0).unwrap();
        let (m1, _) = p.running_stats();
        let m1 = m1.to_vec();
        let mut q = init_params(&arch, 5);
        let zs: Vec<Vec<f64>> = (0..2).map(|i| q.feature(xs.row(i))).collect();
        let us: Vec<Vec<f64>> = zs.iter().map(|z| q.aux_pre(z)).collect();
        let h = q.arch().aux_hidden();
        let mut target = vec![0.0; h];
        for u in &us {
            for j in 0..h {
                target[j] += u[j] / 2.0;
            }
        }
        // one step: run = 0.9*0 + 0.1*target
        for j in 0..h {
            assert!((m1[j] - 0.1 * target[j]).abs() < 1e-12);
        }
        for step in 1..=20 {
            forward_batch_train(&mut q, &xs, 1.0).unwrap();
            let (m, _) = q.running_stats();
            for j in 0..h {
                let expect = target[j] * (1.0 - 0.9f64.powi(step));
                assert!((m[j] - expect).abs() < 1e-9, "step {step} unit {j}");
            }
        }
    }

    #[test]
    fn eval_equals_train_after_freezing_stats() {
        let arch = toy_arch();
        let mut p = init_params(&arch, 11);
        let mut rng = crate::rng::Rng::from_seed(1);
        let n = 64;
        let data: Vec<f64> = (0..n * 4).map(|_| rng.normal()).collect();
        let xs = Matrix::new(n, 4, data).unwrap();
        let train_outs = forward_batch_train(&mut p, &xs, 1.0).unwrap();

        // Recompute the batch statistics and freeze them as running stats.
        let mut q = p.clone();
        let zs: Vec<Vec<f64>> = (0..n).map(|i| q.feature(xs.row(i))).collect();
        let us: Vec<Vec<f64>> = zs.iter().map(|z| q.aux_pre(z)).collect();
        let h = arch.aux_hidden();
        let mut mean = vec![0.0; h];
        for u in &us {
            for j in 0..h {
                mean[j] += u[j] / n as f64;
            }
        }
        let mut var = vec![0.0; h];
        for u in &us {
            for j in 0..h {
                var[j] += (u[j] - mean[j]) * (u[j] - mean[j]) / n as f64;
            }
        }
        q.set_running_stats(mean, var);
        let eval_outs = forward_batch(&q, &xs, 1.0).unwrap();
        for (a, b) in train_outs.iter().zip(&eval_outs) {
            assert!((a.a_phi - b.a_phi).abs() < 1e-9);
            for (la, lb) in a.logits.iter().zip(&b.logits) {
                assert!((la - lb).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let arch = toy_arch();
        let p = init_params(&arch, 0);
        assert!(matches!(
            forward(&p, &[1.0, 2.0], 1.0, BnMode::Eval),
            Err(ModelError::DimMismatch { expected: 4, got: 2 })
        ));
    }
}
