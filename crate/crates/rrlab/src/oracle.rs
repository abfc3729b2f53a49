//! Independent reference implementations for cross-checking the main paths.
//!
//! Everything here recomputes its answer from plain kernels or brute force
//! and never touches the tape, so a disagreement between an oracle and the
//! implementation it shadows is always a finding. The test suites (and the
//! acceptance suite in particular) drive these against the real code.

use crate::evaluation::ScoredSample;
use crate::model::{forward, forward_batch_train, BnMode, TwoHeadParams};
use crate::numkit::{bce_stopgrad, cross_entropy, kl_divergence, softmax_t, Matrix, StopGradScalar};
use crate::training::{Framework, RconMode, TrainConfig, TrainingError};

/// Exhaustive pairwise ROC-AUC with ties counting one half.
pub fn pairwise_auc(samples: &[ScoredSample]) -> f64 {
    let pos: Vec<f64> = samples.iter().filter(|s| s.correct).map(|s| s.score).collect();
    let neg: Vec<f64> = samples.iter().filter(|s| !s.correct).map(|s| s.score).collect();
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() as f64 * neg.len() as f64)
}

/// Brute-force TPR threshold: scan every sample score and keep the largest
/// one retaining at least `tpr` of the correct samples.
pub fn tpr_threshold_scan(samples: &[ScoredSample], tpr: f64) -> (f64, f64, f64) {
    let n_correct = samples.iter().filter(|s| s.correct).count();
    let mut best: Option<f64> = None;
    for cand in samples.iter().map(|s| s.score) {
        let kept = samples
            .iter()
            .filter(|s| s.correct && s.score >= cand)
            .count();
        if kept as f64 >= tpr * n_correct as f64 {
            best = Some(match best {
                Some(b) if b >= cand => b,
                _ => cand,
            });
        }
    }
    let threshold = best.expect("some threshold always qualifies");
    let retained: Vec<_> = samples.iter().filter(|s| s.score >= threshold).collect();
    let rc = retained.iter().filter(|s| s.correct).count();
    (
        threshold,
        rc as f64 / retained.len() as f64,
        retained.len() as f64 / samples.len() as f64,
    )
}

/// Smallest `xi` on a grid of the given resolution at which either pointwise
/// error bound holds, checked directly from the definition.
pub fn xi_min_grid_scan(a_phi: f64, a_star: f64, resolution: f64) -> Option<f64> {
    let steps = (1.0 / resolution).round() as usize;
    for i in 0..steps {
        let xi = i as f64 * resolution;
        let geometric = a_phi > 0.0
            && a_star > 0.0
            && (a_phi / a_star).ln().abs() <= (2.0 / (2.0 - xi)).ln();
        let arithmetic = (a_phi - a_star).abs() <= xi / 2.0;
        if geometric || arithmetic {
            return Some(xi);
        }
    }
    None
}

/// The per-example quantities the training loss treats as constants: the
/// predicted label, whether it matches the truth, and the true-label and
/// top-label probabilities at the rectifier temperature.
#[derive(Clone, Copy, Debug)]
pub struct FrozenStops {
    pub y_m: usize,
    pub correct: bool,
    pub tcon: f64,
    pub conf: f64,
}

/// Captures the gradient-stopped quantities at the given points under the
/// current parameters. Logits do not pass through batch norm, so eval-mode
/// forwards capture exactly what a train-mode graph would stop.
pub fn capture_stops(
    params: &TwoHeadParams,
    xs: &[Vec<f64>],
    ys: &[usize],
    tau_rr: f64,
) -> Result<Vec<FrozenStops>, TrainingError> {
    let mut out = Vec::with_capacity(xs.len());
    for (x, &y) in xs.iter().zip(ys) {
        let o = forward(params, x, 1.0, BnMode::Eval)?;
        let p = softmax_t(&o.logits, tau_rr)?;
        out.push(FrozenStops {
            y_m: o.y_m,
            correct: o.y_m == y,
            tcon: p.get(y),
            conf: p.get(o.y_m),
        });
    }
    Ok(out)
}

fn frozen_rr_term(
    logits: &[f64],
    a_phi: f64,
    stop: &FrozenStops,
    tau_rr: f64,
    mode: RconMode,
) -> Result<f64, TrainingError> {
    let p = softmax_t(logits, tau_rr)?;
    let conf = if stop.correct { stop.conf } else { p.get(stop.y_m) };
    let pred = match mode {
        RconMode::Rcon => conf * a_phi,
        RconMode::AphiOnly => a_phi,
        RconMode::ConfOnly => conf,
    };
    Ok(bce_stopgrad(pred.clamp(0.0, 1.0), StopGradScalar::stopped(stop.tcon))?)
}

/// The training batch objective recomputed from plain kernels, with every
/// gradient-stopped quantity replaced by the constants in `stops` (captured
/// at the base parameters). Finite differences of this function are the
/// reference for the implemented parameter gradients.
#[allow(clippy::too_many_arguments)]
pub fn frozen_batch_loss(
    theta: &[f64],
    template: &TwoHeadParams,
    xs: &[Vec<f64>],
    ys: &[usize],
    x_stars: &[Vec<f64>],
    cfg: &TrainConfig,
    adv_stops: &[FrozenStops],
    clean_stops: &[FrozenStops],
) -> Result<f64, TrainingError> {
    let mut p = template.clone();
    p.set_learnable(theta);
    let n = xs.len();
    let dim = xs[0].len();
    let star_matrix = Matrix::new(n, dim, x_stars.concat())
        .map_err(TrainingError::from)?;
    match cfg.framework {
        Framework::PgdAt => {
            let outs = forward_batch_train(&mut p.clone(), &star_matrix, 1.0)?;
            let mut ce = 0.0;
            let mut rr = 0.0;
            for ((o, &y), stop) in outs.iter().zip(ys).zip(adv_stops) {
                ce += cross_entropy(&o.probs, y)?;
                rr += frozen_rr_term(&o.logits, o.a_phi, stop, cfg.tau_rr, cfg.rcon_mode)?;
            }
            Ok(ce / n as f64 + cfg.lambda * rr / n as f64)
        }
        Framework::Trades => {
            let clean_matrix = Matrix::new(n, dim, xs.concat()).map_err(TrainingError::from)?;
            let clean_outs = forward_batch_train(&mut p.clone(), &clean_matrix, 1.0)?;
            let adv_outs = forward_batch_train(&mut p.clone(), &star_matrix, 1.0)?;
            let mut ce = 0.0;
            let mut kl = 0.0;
            let mut rr_terms: Vec<f64> = Vec::new();
            for (((c, a), &y), stop) in clean_outs.iter().zip(&adv_outs).zip(ys).zip(adv_stops) {
                ce += cross_entropy(&c.probs, y)?;
                kl += kl_divergence(&c.probs, &a.probs)?;
                rr_terms.push(frozen_rr_term(&a.logits, a.a_phi, stop, cfg.tau_rr, cfg.rcon_mode)?);
            }
            if cfg.rr_on_clean {
                for (c, stop) in clean_outs.iter().zip(clean_stops) {
                    rr_terms.push(frozen_rr_term(&c.logits, c.a_phi, stop, cfg.tau_rr, cfg.rcon_mode)?);
                }
            }
            let rr_mean = rr_terms.iter().sum::<f64>() / rr_terms.len() as f64;
            Ok(ce / n as f64 + cfg.trades_beta * kl / n as f64 + cfg.lambda * rr_mean)
        }
    }
}

/// The adaptive attack objective recomputed from plain kernels with frozen
/// stop-gradient constants, as a function of the input point. Reference for
/// the implemented input gradients.
pub fn frozen_adaptive_loss(
    params: &TwoHeadParams,
    v: &[f64],
    y: usize,
    obj: &crate::attacks::AdaptiveObjective,
    stop: &FrozenStops,
) -> Result<f64, TrainingError> {
    use crate::attacks::ObjectiveKind;
    let o = forward(params, v, 1.0, BnMode::Eval)?;
    let base = match obj.kind {
        ObjectiveKind::Ce | ObjectiveKind::CeRcon | ObjectiveKind::CeRr => {
            cross_entropy(&o.probs, y)?
        }
        ObjectiveKind::ConRr | ObjectiveKind::ConRcon => -o.probs.get(y),
    };
    let value = match obj.kind {
        ObjectiveKind::Ce => base,
        ObjectiveKind::CeRcon | ObjectiveKind::ConRcon => {
            let p = softmax_t(&o.logits, obj.tau_rr)?;
            let rcon = p.get(o.y_m) * o.a_phi;
            base + obj.eta * rcon.max(crate::numkit::PROB_CLAMP).ln()
        }
        ObjectiveKind::CeRr | ObjectiveKind::ConRr => {
            let rr = frozen_rr_term(&o.logits, o.a_phi, stop, obj.tau_rr, RconMode::Rcon)?;
            base - obj.eta * rr
        }
    };
    Ok(value)
}
