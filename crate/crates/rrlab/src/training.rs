//! The joint training objective: a classification term plus the rectifier
//! loss, with exact stop-gradient semantics, under either the PGD-AT or the
//! TRADES framework. SGD with momentum, milestone learning-rate decay, and a
//! best-checkpoint rule on validation PGD accuracy.
//!
//! Stop gradients, per the loss construction: the BCE target (the true-label
//! probability at the rectifier temperature) never propagates gradients, and
//! the confidence factor of the rectified prediction is stopped exactly when
//! the example is correctly classified. Both apply to parameter and input
//! gradients alike.

use crate::attacks::{pgd_best_of, pgd_indexed, AttackConfig, AttackError};
use crate::config::{digest, ConfigError, ConfigMap};
use crate::data::Dataset;
use crate::model::{
    forward, init_params, tape_forward, tape_forward_batch, Architecture, BnMode, Checkpoint,
    ModelError, TapeHeads, TwoHeadParams,
};
use crate::numkit::tape::{NodeId, Tape};
use crate::numkit::{bce_stopgrad, softmax_t, NumError, StopGradScalar, BCE_CLAMP, PROB_CLAMP};
use crate::rng::Rng;
use std::fmt::Write as _;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training diverged (non-finite loss) at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Adversarial-training framework for the outer objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Framework {
    PgdAt,
    Trades,
}

impl Framework {
    pub fn label(self) -> &'static str {
        match self {
            Framework::PgdAt => "pgd-at",
            Framework::Trades => "trades",
        }
    }
}

impl std::str::FromStr for Framework {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pgd-at" => Ok(Framework::PgdAt),
            "trades" => Ok(Framework::Trades),
            other => Err(format!("unknown framework `{other}` (expected pgd-at or trades)")),
        }
    }
}

/// What stands in for the rectified prediction inside the BCE loss: the full
/// product, the rectifier alone, or the confidence alone.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RconMode {
    Rcon,
    AphiOnly,
    ConfOnly,
}

impl RconMode {
    pub fn label(self) -> &'static str {
        match self {
            RconMode::Rcon => "rcon",
            RconMode::AphiOnly => "aphi-only",
            RconMode::ConfOnly => "conf-only",
        }
    }
}

impl std::str::FromStr for RconMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rcon" => Ok(RconMode::Rcon),
            "aphi-only" => Ok(RconMode::AphiOnly),
            "conf-only" => Ok(RconMode::ConfOnly),
            other => Err(format!(
                "unknown rcon mode `{other}` (expected rcon, aphi-only, or conf-only)"
            )),
        }
    }
}

/// Full training configuration. Defaults are the desk-scale shrink of the
/// usual adversarial-training recipe: 40 epochs with decay at 30 and 35.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub framework: Framework,
    /// Weight of the rectifier loss term.
    pub lambda: f64,
    /// TRADES trade-off weight on the KL term.
    pub trades_beta: f64,
    /// Temperature of the rectifier loss (classification stays at 1).
    pub tau_rr: f64,
    pub rcon_mode: RconMode,
    /// Add the rectifier term on clean inputs too (TRADES composition knob).
    pub rr_on_clean: bool,
    /// Let the inner maximization target the joint objective instead of the
    /// classification term alone.
    pub attack_includes_aphi: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epochs (0-based) at which the learning rate is multiplied by
    /// `decay_factor`.
    pub milestones: Vec<usize>,
    pub decay_factor: f64,
    pub seed: u64,
    /// Backbone widths.
    pub widths: Vec<usize>,
    pub aux_hidden: Option<usize>,
    /// Inner-maximization attack. Batch-norm runs in eval mode while
    /// crafting; running statistics move only in the outer pass.
    pub attack: AttackConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            framework: Framework::PgdAt,
            lambda: 1.0,
            trades_beta: 6.0,
            tau_rr: 1.0,
            rcon_mode: RconMode::Rcon,
            rr_on_clean: false,
            attack_includes_aphi: false,
            epochs: 40,
            batch_size: 128,
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            milestones: vec![30, 35],
            decay_factor: 0.1,
            seed: 0,
            widths: vec![32, 32],
            aux_hidden: None,
            attack: AttackConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(TrainingError::InvalidConfig(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.tau_rr > 0.0) {
            return Err(TrainingError::InvalidConfig("tau_rr must be positive".into()));
        }
        if self.trades_beta < 0.0 {
            return Err(TrainingError::InvalidConfig("trades_beta must be >= 0".into()));
        }
        if self.batch_size < 2 {
            return Err(TrainingError::InvalidConfig("batch_size must be >= 2".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.decay_factor > 0.0) {
            return Err(TrainingError::InvalidConfig(
                "learning_rate and decay_factor must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainingError::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(TrainingError::InvalidConfig("weight_decay must be >= 0".into()));
        }
        for pair in self.milestones.windows(2) {
            if pair[1] <= pair[0] {
                return Err(TrainingError::InvalidConfig(
                    "milestones must be strictly increasing".into(),
                ));
            }
        }
        if let Some(&m) = self.milestones.last() {
            if m >= self.epochs {
                return Err(TrainingError::InvalidConfig(format!(
                    "milestone {m} must be < epochs {}",
                    self.epochs
                )));
            }
        }
        self.attack.validate()?;
        Ok(())
    }

    /// Reads every recognized key from the map, falling back to defaults.
    pub fn from_config(map: &mut ConfigMap) -> Result<Self, ConfigError> {
        let d = TrainConfig::default();
        fn take_enum<T: std::str::FromStr<Err = String>>(
            map: &mut ConfigMap,
            key: &str,
            fallback: &str,
        ) -> Result<T, ConfigError> {
            map.take(key)
                .unwrap_or_else(|| fallback.to_string())
                .parse()
                .map_err(|e: String| ConfigError::BadValue { key: key.into(), message: e })
        }
        let framework: Framework = take_enum(map, "framework", d.framework.label())?;
        let rcon_mode: RconMode = take_enum(map, "rcon-mode", d.rcon_mode.label())?;
        let seed = map.take_parsed("seed", d.seed)?;
        let aux_hidden = match map.take("aux-hidden") {
            None => None,
            Some(v) => Some(v.parse().map_err(|_| ConfigError::BadValue {
                key: "aux-hidden".into(),
                message: format!("cannot parse `{v}`"),
            })?),
        };
        let mut attack = AttackConfig::from_config(map, "attack-")?;
        attack.seed = seed;
        Ok(TrainConfig {
            framework,
            lambda: map.take_parsed("lambda", d.lambda)?,
            trades_beta: map.take_parsed("trades-beta", d.trades_beta)?,
            tau_rr: map.take_parsed("tau-rr", d.tau_rr)?,
            rcon_mode,
            rr_on_clean: map.take_bool("rr-on-clean", d.rr_on_clean)?,
            attack_includes_aphi: map.take_bool("attack-includes-aphi", d.attack_includes_aphi)?,
            epochs: map.take_parsed("epochs", d.epochs)?,
            batch_size: map.take_parsed("batch-size", d.batch_size)?,
            learning_rate: map.take_parsed("learning-rate", d.learning_rate)?,
            momentum: map.take_parsed("momentum", d.momentum)?,
            weight_decay: map.take_parsed("weight-decay", d.weight_decay)?,
            milestones: map.take_list("milestones", d.milestones)?,
            decay_factor: map.take_parsed("decay-factor", d.decay_factor)?,
            seed,
            widths: map.take_list("widths", d.widths)?,
            aux_hidden,
            attack,
        })
    }

    /// Canonical key=value rendering, the digest input recorded in
    /// checkpoints and manifests.
    pub fn canonical_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "framework={}", self.framework.label());
        let _ = writeln!(s, "lambda={}", self.lambda);
        let _ = writeln!(s, "trades-beta={}", self.trades_beta);
        let _ = writeln!(s, "tau-rr={}", self.tau_rr);
        let _ = writeln!(s, "rcon-mode={}", self.rcon_mode.label());
        let _ = writeln!(s, "rr-on-clean={}", self.rr_on_clean);
        let _ = writeln!(s, "attack-includes-aphi={}", self.attack_includes_aphi);
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "batch-size={}", self.batch_size);
        let _ = writeln!(s, "learning-rate={}", self.learning_rate);
        let _ = writeln!(s, "momentum={}", self.momentum);
        let _ = writeln!(s, "weight-decay={}", self.weight_decay);
        let ms: Vec<String> = self.milestones.iter().map(|m| m.to_string()).collect();
        let _ = writeln!(s, "milestones={}", if ms.is_empty() { "-".into() } else { ms.join(",") });
        let _ = writeln!(s, "decay-factor={}", self.decay_factor);
        let _ = writeln!(s, "seed={}", self.seed);
        let ws: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(s, "widths={}", if ws.is_empty() { "-".into() } else { ws.join(",") });
        if let Some(h) = self.aux_hidden {
            let _ = writeln!(s, "aux-hidden={h}");
        }
        let a = &self.attack;
        let _ = writeln!(
            s,
            "attack-norm={}",
            match a.norm {
                crate::attacks::Norm::Linf => "linf",
                crate::attacks::Norm::L2 => "l2",
            }
        );
        let _ = writeln!(s, "attack-epsilon={}", a.epsilon);
        let _ = writeln!(s, "attack-step-size={}", a.step_size);
        let _ = writeln!(s, "attack-steps={}", a.steps);
        let _ = writeln!(s, "attack-restarts={}", a.restarts);
        let _ = writeln!(s, "attack-objective={}", a.objective.kind.label());
        let _ = writeln!(s, "attack-eta={}", a.objective.eta);
        let _ = writeln!(s, "attack-tau-rr={}", a.objective.tau_rr);
        if let Some((lo, hi)) = a.box_bounds {
            let _ = writeln!(s, "attack-box={lo},{hi}");
        }
        s
    }

    pub fn digest(&self) -> String {
        digest(&self.canonical_string())
    }

    /// Network shape for a dataset under this config.
    pub fn arch_for(&self, ds: &Dataset) -> Result<Architecture, ModelError> {
        match self.aux_hidden {
            Some(h) => Architecture::with_aux_hidden(ds.dim(), self.widths.clone(), ds.classes, h),
            None => Architecture::new(ds.dim(), self.widths.clone(), ds.classes),
        }
    }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// The rectifier loss at one example: BCE between the (mode-dependent)
/// rectified prediction and the gradient-stopped true-label probability, both
/// recomputed from the logits at temperature `tau_rr`.
pub fn rr_loss(
    outputs: &crate::model::HeadOutputs,
    y: usize,
    tau_rr: f64,
    mode: RconMode,
) -> Result<f64, TrainingError> {
    let p = softmax_t(&outputs.logits, tau_rr)?;
    if y >= p.classes() {
        return Err(TrainingError::InvalidConfig(format!(
            "label {y} out of range for {} classes",
            p.classes()
        )));
    }
    let target = p.get(y);
    let conf = p.get(outputs.y_m);
    let pred = match mode {
        RconMode::Rcon => conf * outputs.a_phi,
        RconMode::AphiOnly => outputs.a_phi,
        RconMode::ConfOnly => conf,
    };
    Ok(bce_stopgrad(pred, StopGradScalar::stopped(target))?)
}

/// BCE between a live prediction node and an (already stopped) target node.
fn bce_node(tape: &mut Tape, pred: NodeId, target: NodeId) -> NodeId {
    let f = tape.clamp(pred, BCE_CLAMP, 1.0 - BCE_CLAMP);
    let lnf = tape.ln(f);
    let one = tape.scalar(1.0);
    let omf = tape.sub(one, f);
    let ln_omf = tape.ln(omf);
    let omt = tape.sub(one, target);
    let a = tape.mul(target, lnf);
    let b = tape.mul(omt, ln_omf);
    let s = tape.add(a, b);
    tape.scale(s, -1.0)
}

/// Cross-entropy node on the forward's class probabilities.
pub fn ce_node(tape: &mut Tape, heads: &TapeHeads, y: usize) -> NodeId {
    let py = tape.index(heads.probs, y);
    let c = tape.clamp(py, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let l = tape.ln(c);
    tape.scale(l, -1.0)
}

/// Rectifier loss node with the stop-gradient rules applied: the target is
/// always stopped; the confidence factor is stopped iff the example is
/// correctly classified.
pub fn rr_loss_node(
    tape: &mut Tape,
    heads: &TapeHeads,
    y: usize,
    tau_rr: f64,
    mode: RconMode,
) -> NodeId {
    let p_rr = tape.softmax_t(heads.logits, tau_rr);
    let target_raw = tape.index(p_rr, y);
    let target = tape.stop_grad(target_raw);
    let conf_raw = tape.index(p_rr, heads.y_m);
    let conf = if heads.y_m == y {
        tape.stop_grad(conf_raw)
    } else {
        conf_raw
    };
    let pred = match mode {
        RconMode::Rcon => tape.mul(conf, heads.a_phi),
        RconMode::AphiOnly => heads.a_phi,
        RconMode::ConfOnly => conf,
    };
    bce_node(tape, pred, target)
}

/// `log(confidence_tau * a_phi)`, the rejector term of the adaptive attacks.
pub fn log_rcon_node(tape: &mut Tape, heads: &TapeHeads, tau: f64) -> NodeId {
    let p = tape.softmax_t(heads.logits, tau);
    let conf = tape.index(p, heads.y_m);
    let rcon = tape.mul(conf, heads.a_phi);
    let c = tape.clamp(rcon, PROB_CLAMP, f64::INFINITY);
    tape.ln(c)
}

/// `KL(p || q)` with gradients flowing through both arguments.
pub fn kl_node(tape: &mut Tape, p: NodeId, q: NodeId) -> NodeId {
    let pc = tape.clamp(p, PROB_CLAMP, f64::INFINITY);
    let qc = tape.clamp(q, PROB_CLAMP, f64::INFINITY);
    let lp = tape.ln(pc);
    let lq = tape.ln(qc);
    let d = tape.sub(lp, lq);
    let t = tape.mul(p, d);
    tape.sum(t)
}

// ---------------------------------------------------------------------------
// Batch objective
// ---------------------------------------------------------------------------

/// Loss value, decomposed terms, parameter gradients, and the batch-norm
/// statistics the outer pass produced (in application order).
pub struct BatchEval {
    pub loss: f64,
    /// Everything except the `lambda`-weighted rectifier terms.
    pub cls_term: f64,
    /// Mean rectifier loss (the slope of the objective in `lambda`).
    pub rr_term: f64,
    /// Flat gradients in [`TwoHeadParams::flatten_learnable`] layout.
    pub grads: Vec<f64>,
    pub bn_updates: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Inner maximization for a batch: per-example projected gradient ascent of
/// the framework's adversarial objective. Batch norm runs in eval mode and
/// no parameter state moves.
pub fn craft_adversarial_batch(
    params: &TwoHeadParams,
    xs: &[Vec<f64>],
    ys: &[usize],
    cfg: &TrainConfig,
    step_index: u64,
) -> Result<Vec<Vec<f64>>, TrainingError> {
    let a = &cfg.attack;
    let mut out = Vec::with_capacity(xs.len());
    for (i, (x, &y)) in xs.iter().zip(ys).enumerate() {
        let clean_probs = match cfg.framework {
            Framework::Trades => Some(forward(params, x, 1.0, BnMode::Eval)?.probs),
            Framework::PgdAt => None,
        };
        let mut vag = |p: &[f64]| -> Result<(f64, Vec<f64>), AttackError> {
            let mut tape = Tape::new();
            let nodes = params.insert_leaves(&mut tape);
            let xn = tape.leaf(p.to_vec());
            let heads = tape_forward(&mut tape, params, &nodes, xn, 1.0);
            let obj = match cfg.framework {
                Framework::PgdAt => {
                    let ce = ce_node(&mut tape, &heads, y);
                    if cfg.attack_includes_aphi && cfg.lambda > 0.0 {
                        let rr = rr_loss_node(&mut tape, &heads, y, cfg.tau_rr, cfg.rcon_mode);
                        let t = tape.scale(rr, cfg.lambda);
                        tape.add(ce, t)
                    } else {
                        ce
                    }
                }
                Framework::Trades => {
                    let pc = tape.leaf(clean_probs.as_ref().unwrap().probs().to_vec());
                    kl_node(&mut tape, pc, heads.probs)
                }
            };
            let v = tape.scalar_value(obj);
            let g = tape.backward(obj);
            Ok((v, g.get(xn).to_vec()))
        };
        let (x_star, _) = pgd_best_of(
            x,
            a.norm,
            a.epsilon,
            a.step_size,
            a.steps,
            a.restarts,
            a.box_bounds,
            cfg.seed,
            "inner-attack",
            step_index.wrapping_mul(1 << 20).wrapping_add(i as u64),
            &mut vag,
        )?;
        out.push(x_star);
    }
    Ok(out)
}

/// Evaluates the outer objective and its parameter gradients for fixed
/// adversarial points. Pure: running statistics are returned, not applied.
pub fn batch_objective_frozen(
    params: &TwoHeadParams,
    xs: &[Vec<f64>],
    ys: &[usize],
    x_stars: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<BatchEval, TrainingError> {
    let n = xs.len();
    if n == 0 || ys.len() != n || x_stars.len() != n {
        return Err(TrainingError::InvalidConfig("empty or misaligned batch".into()));
    }
    let bn_mode = if n >= 2 { BnMode::Train } else { BnMode::Eval };
    let mut tape = Tape::new();
    let nodes = params.insert_leaves(&mut tape);
    let star_nodes: Vec<NodeId> = x_stars.iter().map(|x| tape.leaf(x.clone())).collect();

    let mut bn_updates = Vec::new();
    let (loss, cls_term, rr_term) = match cfg.framework {
        Framework::PgdAt => {
            let adv = tape_forward_batch(&mut tape, params, &nodes, &star_nodes, 1.0, bn_mode);
            if bn_mode == BnMode::Train {
                bn_updates.push((adv.bn_mean.clone(), adv.bn_var.clone()));
            }
            let ce: Vec<NodeId> = adv
                .heads
                .iter()
                .zip(ys)
                .map(|(h, &y)| ce_node(&mut tape, h, y))
                .collect();
            let rr: Vec<NodeId> = adv
                .heads
                .iter()
                .zip(ys)
                .map(|(h, &y)| rr_loss_node(&mut tape, h, y, cfg.tau_rr, cfg.rcon_mode))
                .collect();
            let ce_mean = tape.mean(&ce);
            let rr_mean = tape.mean(&rr);
            let rr_scaled = tape.scale(rr_mean, cfg.lambda);
            let total = tape.add(ce_mean, rr_scaled);
            (total, tape.scalar_value(ce_mean), tape.scalar_value(rr_mean))
        }
        Framework::Trades => {
            let clean_nodes: Vec<NodeId> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
            let clean = tape_forward_batch(&mut tape, params, &nodes, &clean_nodes, 1.0, bn_mode);
            if bn_mode == BnMode::Train {
                bn_updates.push((clean.bn_mean.clone(), clean.bn_var.clone()));
            }
            let adv = tape_forward_batch(&mut tape, params, &nodes, &star_nodes, 1.0, bn_mode);
            if bn_mode == BnMode::Train {
                bn_updates.push((adv.bn_mean.clone(), adv.bn_var.clone()));
            }
            let ce: Vec<NodeId> = clean
                .heads
                .iter()
                .zip(ys)
                .map(|(h, &y)| ce_node(&mut tape, h, y))
                .collect();
            let kl: Vec<NodeId> = clean
                .heads
                .iter()
                .zip(&adv.heads)
                .map(|(hc, ha)| kl_node(&mut tape, hc.probs, ha.probs))
                .collect();
            let mut rr: Vec<NodeId> = adv
                .heads
                .iter()
                .zip(ys)
                .map(|(h, &y)| rr_loss_node(&mut tape, h, y, cfg.tau_rr, cfg.rcon_mode))
                .collect();
            if cfg.rr_on_clean {
                rr.extend(
                    clean
                        .heads
                        .iter()
                        .zip(ys)
                        .map(|(h, &y)| rr_loss_node(&mut tape, h, y, cfg.tau_rr, cfg.rcon_mode)),
                );
            }
            let ce_mean = tape.mean(&ce);
            let kl_mean = tape.mean(&kl);
            let rr_mean = tape.mean(&rr);
            let kl_scaled = tape.scale(kl_mean, cfg.trades_beta);
            let rr_scaled = tape.scale(rr_mean, cfg.lambda);
            let partial = tape.add(ce_mean, kl_scaled);
            let total = tape.add(partial, rr_scaled);
            (
                total,
                tape.scalar_value(ce_mean) + cfg.trades_beta * tape.scalar_value(kl_mean),
                tape.scalar_value(rr_mean),
            )
        }
    };

    let loss_value = tape.scalar_value(loss);
    let grads = tape.backward(loss);
    Ok(BatchEval {
        loss: loss_value,
        cls_term,
        rr_term,
        grads: params.collect_grads(&grads, &nodes),
        bn_updates,
    })
}

/// Crafts the batch's adversarial points, evaluates the objective, and
/// applies the resulting batch-norm running updates.
pub fn batch_objective(
    params: &mut TwoHeadParams,
    xs: &[Vec<f64>],
    ys: &[usize],
    cfg: &TrainConfig,
    step_index: u64,
) -> Result<BatchEval, TrainingError> {
    let x_stars = craft_adversarial_batch(params, xs, ys, cfg, step_index)?;
    let eval = batch_objective_frozen(params, xs, ys, &x_stars, cfg)?;
    for (mean, var) in &eval.bn_updates {
        params.update_running_stats(mean, var);
    }
    Ok(eval)
}

// ---------------------------------------------------------------------------
// Optimizer and loop
// ---------------------------------------------------------------------------

pub(crate) struct SgdState {
    velocity: Vec<f64>,
}

impl SgdState {
    pub(crate) fn new(len: usize) -> Self {
        SgdState { velocity: vec![0.0; len] }
    }

    /// `v = momentum v + (g + wd * theta); theta -= lr * v`. Weight decay
    /// touches every learnable tensor; running statistics are not learnable
    /// and never move here.
    pub(crate) fn step(
        &mut self,
        params: &mut TwoHeadParams,
        grads: &[f64],
        lr: f64,
        momentum: f64,
        weight_decay: f64,
    ) {
        let mut flat = params.flatten_learnable();
        for i in 0..flat.len() {
            let g = grads[i] + weight_decay * flat[i];
            self.velocity[i] = momentum * self.velocity[i] + g;
            flat[i] -= lr * self.velocity[i];
        }
        params.set_learnable(&flat);
    }
}

/// One per-epoch log record.
#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub cls_loss: f64,
    pub rr_loss: f64,
    pub clean_acc: f64,
    pub pgd_acc: f64,
    pub seconds: f64,
}

/// Training history, one record per completed epoch.
#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn csv(&self) -> String {
        let mut out = String::from("epoch,cls_loss,rr_loss,clean_acc,pgd_acc,seconds\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch, r.cls_loss, r.rr_loss, r.clean_acc, r.pgd_acc, r.seconds
            );
        }
        out
    }
}

/// Result of a training run: the checkpoint with the best validation PGD
/// accuracy, the final checkpoint, and the log.
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub final_ckpt: Checkpoint,
    pub log: TrainLog,
}

/// Fraction of the dataset classified correctly in eval mode.
pub fn clean_accuracy(params: &TwoHeadParams, ds: &Dataset) -> Result<f64, TrainingError> {
    let mut correct = 0;
    for i in 0..ds.len() {
        let out = forward(params, ds.x.row(i), 1.0, BnMode::Eval)?;
        if out.y_m == ds.y[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Accuracy after attacking every example with `attack` (plain objective as
/// configured), using per-example seed substreams.
pub fn attacked_accuracy(
    params: &TwoHeadParams,
    ds: &Dataset,
    attack: &AttackConfig,
) -> Result<f64, TrainingError> {
    let mut correct = 0;
    for i in 0..ds.len() {
        let r = pgd_indexed(params, ds.x.row(i), ds.y[i], attack, i as u64)?;
        if !r.success {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// The 10-step validation attack used for the best-checkpoint rule.
fn validation_attack(cfg: &TrainConfig, epoch: usize) -> AttackConfig {
    AttackConfig {
        steps: 10,
        restarts: 1,
        objective: crate::attacks::AdaptiveObjective::default(),
        seed: Rng::substream(cfg.seed, "val-attack", epoch as u64).next_u64(),
        ..cfg.attack.clone()
    }
}

/// Trains a two-head network under `cfg`. Fully reproducible: identical
/// configs and datasets give bit-identical checkpoints.
pub fn train(
    cfg: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
) -> Result<TrainOutcome, TrainingError> {
    cfg.validate()?;
    if train_set.len().div_ceil(cfg.batch_size) < 2 {
        return Err(TrainingError::InvalidConfig(format!(
            "training set of {} rows yields fewer than 2 batches of {}",
            train_set.len(),
            cfg.batch_size
        )));
    }
    let arch = cfg.arch_for(train_set)?;
    let mut params = init_params(&arch, cfg.seed);
    let config_digest = cfg.digest();
    let make_ckpt = |params: &TwoHeadParams, epoch: usize| Checkpoint {
        params: params.clone(),
        config_digest: config_digest.clone(),
        seed: cfg.seed,
        epoch,
    };

    let mut log = TrainLog::default();
    if cfg.epochs == 0 {
        let ckpt = make_ckpt(&params, 0);
        return Ok(TrainOutcome { best: ckpt.clone(), final_ckpt: ckpt, log });
    }

    let mut sgd = SgdState::new(params.learnable_len());
    let mut best: Option<(f64, Checkpoint)> = None;
    let n = train_set.len();
    let mut global_step: u64 = 0;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let decays = cfg.milestones.iter().filter(|&&m| m <= epoch).count() as i32;
        let lr = cfg.learning_rate * cfg.decay_factor.powi(decays);

        let mut order: Vec<usize> = (0..n).collect();
        Rng::substream(cfg.seed, "shuffle", epoch as u64).shuffle(&mut order);

        let mut cls_sum = 0.0;
        let mut rr_sum = 0.0;
        let mut batches = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue; // a trailing single row cannot feed train-mode batch norm
            }
            let xs: Vec<Vec<f64>> = chunk.iter().map(|&i| train_set.x.row(i).to_vec()).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| train_set.y[i]).collect();
            let eval = batch_objective(&mut params, &xs, &ys, cfg, global_step)?;
            if !eval.loss.is_finite() {
                return Err(TrainingError::Diverged { epoch, step });
            }
            sgd.step(&mut params, &eval.grads, lr, cfg.momentum, cfg.weight_decay);
            cls_sum += eval.cls_term;
            rr_sum += eval.rr_term;
            batches += 1;
            global_step += 1;
        }

        let clean_acc = clean_accuracy(&params, val_set)?;
        let pgd_acc = if cfg.attack.epsilon > 0.0 {
            attacked_accuracy(&params, val_set, &validation_attack(cfg, epoch))?
        } else {
            clean_acc
        };
        log.records.push(EpochRecord {
            epoch,
            cls_loss: cls_sum / batches.max(1) as f64,
            rr_loss: rr_sum / batches.max(1) as f64,
            clean_acc,
            pgd_acc,
            seconds: started.elapsed().as_secs_f64(),
        });
        let is_better = match &best {
            None => true,
            Some((best_acc, _)) => pgd_acc > *best_acc,
        };
        if is_better {
            best = Some((pgd_acc, make_ckpt(&params, epoch)));
        }
    }

    let final_ckpt = make_ckpt(&params, cfg.epochs - 1);
    let best = best.map(|(_, c)| c).unwrap_or_else(|| final_ckpt.clone());
    Ok(TrainOutcome { best, final_ckpt, log })
}
