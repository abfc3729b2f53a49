//! Tape-graph forward passes used by training and attacks.

use super::{BnMode, TwoHeadParams, BN_EPS};
use crate::numkit::argmax;
use crate::numkit::tape::{NodeId, Tape};

/// Tape leaves for every learnable tensor, in the same order as
/// [`TwoHeadParams::flatten_learnable`].
pub struct ParamNodes {
    pub backbone: Vec<(NodeId, NodeId)>,
    pub cls_w: NodeId,
    pub cls_b: NodeId,
    pub aux_w1: NodeId,
    pub aux_b1: NodeId,
    pub bn_gamma: NodeId,
    pub bn_beta: NodeId,
    pub aux_w2: NodeId,
    pub aux_b2: NodeId,
}

impl TwoHeadParams {
    /// Inserts one leaf per learnable tensor.
    pub fn insert_leaves(&self, tape: &mut Tape) -> ParamNodes {
        let backbone = self
            .backbone
            .iter()
            .map(|layer| {
                let w = tape.leaf(layer.w.data().to_vec());
                let b = tape.leaf(layer.b.clone());
                (w, b)
            })
            .collect();
        ParamNodes {
            backbone,
            cls_w: tape.leaf(self.cls_w.data().to_vec()),
            cls_b: tape.leaf(self.cls_b.clone()),
            aux_w1: tape.leaf(self.aux_w1.data().to_vec()),
            aux_b1: tape.leaf(self.aux_b1.clone()),
            bn_gamma: tape.leaf(self.bn_gamma.clone()),
            bn_beta: tape.leaf(self.bn_beta.clone()),
            aux_w2: tape.leaf(self.aux_w2.data().to_vec()),
            aux_b2: tape.leaf(self.aux_b2.clone()),
        }
    }

    /// Collects parameter gradients from a backward pass into the flat
    /// layout of [`flatten_learnable`](Self::flatten_learnable).
    pub fn collect_grads(
        &self,
        grads: &crate::numkit::tape::Gradients,
        nodes: &ParamNodes,
    ) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.learnable_len());
        for (w, b) in &nodes.backbone {
            out.extend_from_slice(grads.get(*w));
            out.extend_from_slice(grads.get(*b));
        }
        out.extend_from_slice(grads.get(nodes.cls_w));
        out.extend_from_slice(grads.get(nodes.cls_b));
        out.extend_from_slice(grads.get(nodes.aux_w1));
        out.extend_from_slice(grads.get(nodes.aux_b1));
        out.extend_from_slice(grads.get(nodes.bn_gamma));
        out.extend_from_slice(grads.get(nodes.bn_beta));
        out.extend_from_slice(grads.get(nodes.aux_w2));
        out.extend_from_slice(grads.get(nodes.aux_b2));
        out
    }
}

/// Per-example node handles from a tape forward.
pub struct TapeHeads {
    pub logits: NodeId,
    /// `softmax(logits / tau_cls)`.
    pub probs: NodeId,
    /// Rectifier output node (scalar in `[0, 1]`).
    pub a_phi: NodeId,
    /// Predicted class, from the logit values.
    pub y_m: usize,
}

/// A batch forward: per-example heads plus the batch statistics of the
/// rectifier pre-activations (used for running-stat updates in train mode).
pub struct BatchGraph {
    pub heads: Vec<TapeHeads>,
    pub bn_mean: Vec<f64>,
    pub bn_var: Vec<f64>,
}

fn backbone_feature(tape: &mut Tape, params: &TwoHeadParams, nodes: &ParamNodes, x: NodeId) -> NodeId {
    let mut z = x;
    let mut prev = params.arch().input_dim();
    for (layer, (w, b)) in params.backbone.iter().zip(&nodes.backbone) {
        let rows = layer.b.len();
        z = tape.affine(*w, z, *b, rows, prev);
        z = tape.relu(z);
        prev = rows;
    }
    z
}

fn classifier_logits(
    tape: &mut Tape,
    params: &TwoHeadParams,
    nodes: &ParamNodes,
    z: NodeId,
) -> NodeId {
    tape.affine(
        nodes.cls_w,
        z,
        nodes.cls_b,
        params.arch().classes(),
        params.arch().feature_dim(),
    )
}

fn aux_pre(tape: &mut Tape, params: &TwoHeadParams, nodes: &ParamNodes, z: NodeId) -> NodeId {
    tape.affine(
        nodes.aux_w1,
        z,
        nodes.aux_b1,
        params.arch().aux_hidden(),
        params.arch().feature_dim(),
    )
}

fn aux_head(tape: &mut Tape, params: &TwoHeadParams, nodes: &ParamNodes, v: NodeId) -> NodeId {
    let r = tape.relu(v);
    let o = tape.affine(nodes.aux_w2, r, nodes.aux_b2, 1, params.arch().aux_hidden());
    tape.sigmoid(o)
}

/// Single-example tape forward with eval-mode batch norm.
pub fn tape_forward(
    tape: &mut Tape,
    params: &TwoHeadParams,
    nodes: &ParamNodes,
    x: NodeId,
    tau_cls: f64,
) -> TapeHeads {
    let z = backbone_feature(tape, params, nodes, x);
    let logits = classifier_logits(tape, params, nodes, z);
    let probs = tape.softmax_t(logits, tau_cls);
    let y_m = argmax(tape.value(logits));
    let u = aux_pre(tape, params, nodes, z);
    let v = tape.batchnorm_eval(
        u,
        nodes.bn_gamma,
        nodes.bn_beta,
        params.bn_mean.clone(),
        params.bn_var.clone(),
        BN_EPS,
    );
    let a_phi = aux_head(tape, params, nodes, v);
    TapeHeads { logits, probs, a_phi, y_m }
}

/// Batch tape forward. Train-mode batch norm normalizes with the batch
/// statistics of the rectifier pre-activations; gradients flow through those
/// statistics. Running statistics are *not* touched here; the caller applies
/// [`TwoHeadParams::update_running_stats`] with the returned batch stats.
pub fn tape_forward_batch(
    tape: &mut Tape,
    params: &TwoHeadParams,
    nodes: &ParamNodes,
    xs: &[NodeId],
    tau_cls: f64,
    mode: BnMode,
) -> BatchGraph {
    let n = xs.len();
    let h = params.arch().aux_hidden();
    let mut zs = Vec::with_capacity(n);
    let mut pres = Vec::with_capacity(n);
    let mut cls = Vec::with_capacity(n);
    for &x in xs {
        let z = backbone_feature(tape, params, nodes, x);
        let logits = classifier_logits(tape, params, nodes, z);
        let probs = tape.softmax_t(logits, tau_cls);
        let y_m = argmax(tape.value(logits));
        cls.push((logits, probs, y_m));
        pres.push(aux_pre(tape, params, nodes, z));
        zs.push(z);
    }

    let (normed, bn_mean, bn_var): (Vec<NodeId>, Vec<f64>, Vec<f64>) = match mode {
        BnMode::Eval => {
            let normed = pres
                .iter()
                .map(|&u| {
                    tape.batchnorm_eval(
                        u,
                        nodes.bn_gamma,
                        nodes.bn_beta,
                        params.bn_mean.clone(),
                        params.bn_var.clone(),
                        BN_EPS,
                    )
                })
                .collect();
            (normed, params.bn_mean.clone(), params.bn_var.clone())
        }
        BnMode::Train => {
            assert!(n >= 2, "train-mode batch norm needs at least 2 rows");
            let stacked = tape.concat(&pres);
            let (mean, var) = tape.batch_stats(stacked, n, h);
            let bn = tape.batchnorm_train(stacked, nodes.bn_gamma, nodes.bn_beta, n, h, BN_EPS);
            let normed = (0..n).map(|i| tape.slice(bn, i * h, h)).collect();
            (normed, mean, var)
        }
    };

    let heads = cls
        .into_iter()
        .zip(normed)
        .map(|((logits, probs, y_m), v)| {
            let a_phi = aux_head(tape, params, nodes, v);
            TapeHeads { logits, probs, a_phi, y_m }
        })
        .collect();
    BatchGraph { heads, bn_mean, bn_var }
}
