//! The five subcommands. Each returns a stable exit code: 0 success,
//! 2 usage/config, 3 numeric failure, 4 verification failure.

use crate::dataspec::DataSpec;
use crate::manifest::{write_atomic, Manifest};
use crate::par::parallel_map;
use crate::{EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, EXIT_VERIFY};
use rrlab::attacks::{
    min_distortion, pgd_indexed, AttackConfig, AttackError, AttackResult, MinDistortionConfig,
    ObjectiveKind,
};
use rrlab::config::{digest, ConfigMap};
use rrlab::data::{load_csv, save_csv, Dataset};
use rrlab::evaluation::{
    default_xi_grid, pass_curve, pass_curve_csv, retained_at, EvalReport, ScoredSample,
};
use rrlab::model::{forward, load_checkpoint, save_checkpoint, BnMode, TwoHeadParams};
use rrlab::rejection::{
    arithmetic_bin_edges, geometric_bin_edges, nsub, verify_lemma1_with, verify_theorem1_with,
    VerifyOptions,
};
use rrlab::rng::Rng;
use rrlab::training::{attacked_accuracy, train, TrainConfig, TrainingError};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Which per-example value serves as the rejection score.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rejector {
    Conf,
    Tcon,
    Rcon,
    Aphi,
}

impl std::str::FromStr for Rejector {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "conf" => Ok(Rejector::Conf),
            "tcon" => Ok(Rejector::Tcon),
            "rcon" => Ok(Rejector::Rcon),
            "aphi" => Ok(Rejector::Aphi),
            other => Err(format!("unknown rejector `{other}` (conf|tcon|rcon|aphi)")),
        }
    }
}

impl Rejector {
    pub fn label(self) -> &'static str {
        match self {
            Rejector::Conf => "conf",
            Rejector::Tcon => "tcon",
            Rejector::Rcon => "rcon",
            Rejector::Aphi => "aphi",
        }
    }
}

fn fail(manifest: &mut Manifest, out_dir: &Path, code: u8, message: &str) -> u8 {
    eprintln!("error: {message}");
    manifest.status = format!("error {code}");
    let _ = std::fs::create_dir_all(out_dir);
    let _ = manifest.write(out_dir);
    code
}

fn finish(manifest: &mut Manifest, out_dir: &Path, started: Instant) -> u8 {
    manifest.status = "ok".into();
    manifest.wall_seconds = started.elapsed().as_secs_f64();
    if manifest.write(out_dir).is_err() {
        eprintln!("error: could not write manifest");
        return EXIT_CONFIG;
    }
    EXIT_OK
}

fn code_for_training(err: &TrainingError) -> u8 {
    match err {
        TrainingError::Diverged { .. } => EXIT_NUMERIC,
        TrainingError::Attack(AttackError::NonFiniteGradient { .. }) => EXIT_NUMERIC,
        TrainingError::Num(_) => EXIT_NUMERIC,
        _ => EXIT_CONFIG,
    }
}

/// Scores one forward output under a rejector at temperature `tau`.
pub fn score_output(
    params: &TwoHeadParams,
    x: &[f64],
    y: usize,
    tau: f64,
    rejector: Rejector,
) -> Result<ScoredSample, rrlab::model::ModelError> {
    let out = forward(params, x, tau, BnMode::Eval)?;
    let tcon = out.probs.get(y);
    let score = match rejector {
        Rejector::Conf => out.confidence,
        Rejector::Tcon => tcon,
        Rejector::Rcon => out.r_con,
        Rejector::Aphi => out.a_phi,
    };
    Ok(ScoredSample::new(score, out.y_m == y, out.confidence, out.r_con))
}

/// Scores a whole dataset (optionally replacing inputs by attacked points).
pub fn score_dataset(
    params: &TwoHeadParams,
    ds: &Dataset,
    points: Option<&[Vec<f64>]>,
    tau: f64,
    rejector: Rejector,
) -> Result<Vec<ScoredSample>, rrlab::model::ModelError> {
    let mut out = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        let x = match points {
            Some(ps) => ps[i].as_slice(),
            None => ds.x.row(i),
        };
        out.push(score_output(params, x, ds.y[i], tau, rejector)?);
    }
    Ok(out)
}

/// Attacks every example in parallel with per-example seed substreams.
pub fn attack_dataset(
    params: &TwoHeadParams,
    ds: &Dataset,
    cfg: &AttackConfig,
) -> Result<Vec<AttackResult>, AttackError> {
    let mut cfg = cfg.clone();
    if cfg.box_bounds.is_none() {
        cfg.box_bounds = ds.bounds;
    }
    let results = parallel_map(ds.len(), |i| {
        pgd_indexed(params, ds.x.row(i), ds.y[i], &cfg, i as u64)
    });
    results.into_iter().collect()
}

fn attack_results_csv(results: &[(usize, &AttackResult, f64)]) -> String {
    let mut s = String::from("idx,success,eps,obj_value,rcon,conf\n");
    for (idx, r, eps) in results {
        let _ = writeln!(
            s,
            "{idx},{},{eps},{},{},{}",
            u8::from(r.success),
            r.objective,
            r.r_con,
            r.confidence
        );
    }
    s
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub fn cmd_train(config_path: &Path, out_dir: &Path, overrides: &[String]) -> u8 {
    let started = Instant::now();
    let mut manifest = Manifest::new("train");
    let mut map = match ConfigMap::from_file(config_path) {
        Ok(m) => m,
        Err(e) => return fail(&mut manifest, out_dir, EXIT_CONFIG, &e.to_string()),
    };
    for o in overrides {
        if let Err(e) = map.set_override(o) {
            return fail(&mut manifest, out_dir, EXIT_CONFIG, &e.to_string());
        }
    }
    let cfg = match TrainConfig::from_config(&mut map) {
        Ok(c) => c,
        Err(e) => return fail(&mut manifest, out_dir, EXIT_CONFIG, &e.to_string()),
    };
    let spec = match DataSpec::from_config(&mut map) {
        Ok(s) => s,
        Err(e) => return fail(&mut manifest, out_dir, EXIT_CONFIG, &e.to_string()),
    };
    if let Err(e) = map.ensure_consumed() {
        return fail(&mut manifest, out_dir, EXIT_CONFIG, &e.to_string());
    }
    if let Err(e) = cfg.validate() {
        return fail(&mut manifest, out_dir, EXIT_CONFIG, &e.to_string());
    }
    let resolved = format!("{}{}", cfg.canonical_string(), spec.canonical_string());
    manifest.seed = cfg.seed;
    manifest.config_digest = digest(&resolved);
    manifest.resolved_config = resolved;

    if std::fs::create_dir_all(out_dir).is_err() {
        return fail(&mut manifest, out_dir, EXIT_CONFIG, "cannot create output directory");
    }
    let (train_set, val_set) = match spec.realize(cfg.seed) {
        Ok(d) => d,
        Err(e) => return fail(&mut manifest, out_dir, EXIT_CONFIG, &e.to_string()),
    };
    let train_csv = out_dir.join("train_data.csv");
    let val_csv = out_dir.join("val_data.csv");
    if let Err(e) = save_csv(&train_set, &train_csv).and_then(|_| save_csv(&val_set, &val_csv)) {
        return fail(&mut manifest, out_dir, EXIT_CONFIG, &e.to_string());
    }
    manifest.add_artifact("train_data", &train_csv);
    manifest.add_artifact("val_data", &val_csv);

    let outcome = match train(&cfg, &train_set, &val_set) {
        Ok(o) => o,
        Err(e) => return fail(&mut manifest, out_dir, code_for_training(&e), &e.to_string()),
    };
    let best_path = out_dir.join("best.ckpt");
    let final_path = out_dir.join("final.ckpt");
    let log_path = out_dir.join("train_log.csv");
    if let Err(e) = save_checkpoint(&outcome.best, &best_path)
        .and_then(|_| save_checkpoint(&outcome.final_ckpt, &final_path))
    {
        return fail(&mut manifest, out_dir, EXIT_CONFIG, &e.to_string());
    }
    if write_atomic(&log_path, outcome.log.csv().as_bytes()).is_err() {
        return fail(&mut manifest, out_dir, EXIT_CONFIG, "cannot write train log");
    }
    manifest.add_artifact("checkpoint_best", &best_path);
    manifest.add_artifact("checkpoint_final", &final_path);
    manifest.add_artifact("train_log", &log_path);
    finish(&mut manifest, out_dir, started)
}

// ---------------------------------------------------------------------------
// eval and sweep-tau
// ---------------------------------------------------------------------------

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub out_dir: PathBuf,
    pub attack_config: Option<PathBuf>,
    pub rejector: Rejector,
    pub tpr: f64,
    pub taus: Vec<f64>,
    /// `same`: thresholds from the reported (possibly attacked) scores;
    /// `clean`: thresholds fixed on clean scores, then applied.
    pub threshold_from_clean: bool,
    pub emit_gnuplot: bool,
    pub overrides: Vec<String>,
}

fn load_attack_config(
    path: &Path,
    overrides: &[String],
) -> Result<AttackConfig, rrlab::config::ConfigError> {
    let mut map = ConfigMap::from_file(path)?;
    for o in overrides {
        map.set_override(o)?;
    }
    let cfg = AttackConfig::from_config(&mut map, "")?;
    // keys used only by specific attack modes are tolerated here
    let _ = map.take_list::<f64>("eta-grid", Vec::new());
    let _ = map.take_parsed::<f64>("eps-max", 0.0);
    let _ = map.take_parsed::<usize>("bisection-steps", 9);
    map.ensure_consumed()?;
    Ok(cfg)
}

fn tau_file_tag(tau: f64) -> String {
    format!("{tau}").replace('.', "p")
}

pub fn cmd_eval(args: &EvalArgs) -> u8 {
    let started = Instant::now();
    let mut manifest = Manifest::new("eval");
    let out_dir = args.out_dir.clone();

    let ckpt = match load_checkpoint(&args.checkpoint) {
        Ok(c) => c,
        Err(e) => return fail(&mut manifest, &out_dir, EXIT_CONFIG, &e.to_string()),
    };
    let ds = match load_csv(&args.data) {
        Ok(d) => d,
        Err(e) => return fail(&mut manifest, &out_dir, EXIT_CONFIG, &e.to_string()),
    };
    if ds.dim() != ckpt.params.arch().input_dim() || ds.classes != ckpt.params.arch().classes() {
        return fail(
            &mut manifest,
            &out_dir,
            EXIT_CONFIG,
            &format!(
                "checkpoint expects {}-dim {} classes, dataset has {}-dim {} classes",
                ckpt.params.arch().input_dim(),
                ckpt.params.arch().classes(),
                ds.dim(),
                ds.classes
            ),
        );
    }
    manifest.seed = ckpt.seed;
    manifest.config_digest = ckpt.config_digest.clone();
    let mut resolved = format!(
        "checkpoint={}\ndata={}\nrejector={}\ntpr={}\n",
        args.checkpoint.display(),
        args.data.display(),
        args.rejector.label(),
        args.tpr
    );

    if std::fs::create_dir_all(&out_dir).is_err() {
        return fail(&mut manifest, &out_dir, EXIT_CONFIG, "cannot create output directory");
    }

    let attacked_points: Option<Vec<Vec<f64>>> = match &args.attack_config {
        None => None,
        Some(path) => {
            let cfg = match load_attack_config(path, &args.overrides) {
                Ok(c) => c,
                Err(e) => return fail(&mut manifest, &out_dir, EXIT_CONFIG, &e.to_string()),
            };
            resolved.push_str(&format!("attack-config={}\n", path.display()));
            match attack_dataset(&ckpt.params, &ds, &cfg) {
                Ok(rs) => Some(rs.into_iter().map(|r| r.x_star).collect()),
                Err(e) => {
                    let code = match e {
                        AttackError::NonFiniteGradient { .. } => EXIT_NUMERIC,
                        _ => EXIT_CONFIG,
                    };
                    return fail(&mut manifest, &out_dir, code, &e.to_string());
                }
            }
        }
    };
    manifest.resolved_config = resolved;

    for &tau in &args.taus {
        let samples = match score_dataset(
            &ckpt.params,
            &ds,
            attacked_points.as_deref(),
            tau,
            args.rejector,
        ) {
            Ok(s) => s,
            Err(e) => return fail(&mut manifest, &out_dir, EXIT_NUMERIC, &e.to_string()),
        };
        let report = match EvalReport::from_samples(&samples, args.tpr, 15) {
            Ok(r) => r,
            Err(e) => return fail(&mut manifest, &out_dir, EXIT_CONFIG, &e.to_string()),
        };
        let mut metrics = report.metrics_csv();
        if args.threshold_from_clean && attacked_points.is_some() {
            let clean = match score_dataset(&ckpt.params, &ds, None, tau, args.rejector) {
                Ok(s) => s,
                Err(e) => return fail(&mut manifest, &out_dir, EXIT_NUMERIC, &e.to_string()),
            };
            match rrlab::evaluation::tpr_accuracy(&clean, args.tpr) {
                Ok(t) => {
                    let (acc, cov) = retained_at(&samples, t.threshold);
                    metrics.push_str(&format!("tpr_accuracy_clean_threshold,{acc}\n"));
                    metrics.push_str(&format!("coverage_clean_threshold,{cov}\n"));
                    metrics.push_str(&format!("clean_threshold,{}\n", t.threshold));
                }
                Err(e) => return fail(&mut manifest, &out_dir, EXIT_CONFIG, &e.to_string()),
            }
        }

        let suffix = if args.taus.len() == 1 {
            String::new()
        } else {
            format!("_tau{}", tau_file_tag(tau))
        };
        let report_path = out_dir.join(format!("report{suffix}.csv"));
        let curve_path = out_dir.join(format!("pass_curve{suffix}.csv"));
        let scores_path = out_dir.join(format!("scores{suffix}.csv"));
        let rows = match pass_curve(&samples, &default_xi_grid()) {
            Ok(r) => r,
            Err(e) => return fail(&mut manifest, &out_dir, EXIT_CONFIG, &e.to_string()),
        };
        let mut scores_csv = String::from("idx,score,correct,confidence,rcon\n");
        for (i, s) in samples.iter().enumerate() {
            let _ = writeln!(
                scores_csv,
                "{i},{},{},{},{}",
                s.score,
                u8::from(s.correct),
                s.confidence,
                s.r_con
            );
        }
        if write_atomic(&report_path, metrics.as_bytes()).is_err()
            || write_atomic(&curve_path, pass_curve_csv(&rows).as_bytes()).is_err()
            || write_atomic(&scores_path, scores_csv.as_bytes()).is_err()
        {
            return fail(&mut manifest, &out_dir, EXIT_CONFIG, "cannot write reports");
        }
        manifest.add_artifact("report", &report_path);
        manifest.add_artifact("pass_curve", &curve_path);
        manifest.add_artifact("scores", &scores_path);
        if args.emit_gnuplot {
            let gp_path = out_dir.join(format!("pass_curve{suffix}.gp"));
            let gp = format!(
                "set datafile separator ','\nset key autotitle columnhead\n\
                 set xlabel 'xi'\nset ylabel 'count'\n\
                 plot 'pass_curve{suffix}.csv' using 1:2 with lines, \
                 '' using 1:3 with lines, '' using 1:4 with lines, '' using 1:5 with lines\n"
            );
            if write_atomic(&gp_path, gp.as_bytes()).is_err() {
                return fail(&mut manifest, &out_dir, EXIT_CONFIG, "cannot write gnuplot script");
            }
            manifest.add_artifact("gnuplot", &gp_path);
        }
    }
    finish(&mut manifest, &out_dir, started)
}

// ---------------------------------------------------------------------------
// attack
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttackMode {
    Normal,
    Adaptive,
    MinDistortion,
}

impl std::str::FromStr for AttackMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "normal" => Ok(AttackMode::Normal),
            "adaptive" => Ok(AttackMode::Adaptive),
            "min-distortion" => Ok(AttackMode::MinDistortion),
            other => Err(format!("unknown mode `{other}` (normal|adaptive|min-distortion)")),
        }
    }
}

pub struct AttackArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub attack_config: PathBuf,
    pub mode: AttackMode,
    pub out_dir: PathBuf,
    /// Dataset for the rejector-median reference (min-distortion mode);
    /// defaults to the attacked dataset.
    pub median_data: Option<PathBuf>,
    pub overrides: Vec<String>,
}

/// Worst-for-the-defender ordering: successful evasions first, then higher
/// rejector value, then higher objective.
fn worse_for_defender(a: &AttackResult, b: &AttackResult) -> bool {
    match (a.success, b.success) {
        (true, false) => true,
        (false, true) => false,
        (true, true) => a.r_con > b.r_con,
        (false, false) => a.objective > b.objective,
    }
}

fn median_rcon(params: &TwoHeadParams, ds: &Dataset) -> Result<f64, rrlab::model::ModelError> {
    let mut values = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        values.push(forward(params, ds.x.row(i), 1.0, BnMode::Eval)?.r_con);
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    Ok(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

pub fn cmd_attack(args: &AttackArgs) -> u8 {
    let started = Instant::now();
    let mut manifest = Manifest::new("attack");
    let out_dir = args.out_dir.clone();

    let ckpt = match load_checkpoint(&args.checkpoint) {
        Ok(c) => c,
        Err(e) => return fail(&mut manifest, &out_dir, EXIT_CONFIG, &e.to_string()),
    };
    let ds = match load_csv(&args.data) {
        Ok(d) => d,
        Err(e) => return fail(&mut manifest, &out_dir, EXIT_CONFIG, &e.to_string()),
    };
    if ds.dim() != ckpt.params.arch().input_dim() {
        return fail(&mut manifest, &out_dir, EXIT_CONFIG, "checkpoint/dataset dimension mismatch");
    }
    let mut map = match ConfigMap::from_file(&args.attack_config) {
        Ok(m) => m,
        Err(e) => return fail(&mut manifest, &out_dir, EXIT_CONFIG, &e.to_string()),
    };
    for o in &args.overrides {
        if let Err(e) = map.set_override(o) {
            return fail(&mut manifest, &out_dir, EXIT_CONFIG, &e.to_string());
        }
    }
    let base_cfg = match AttackConfig::from_config(&mut map, "") {
        Ok(c) => c,
        Err(e) => return fail(&mut manifest, &out_dir, EXIT_CONFIG, &e.to_string()),
    };
    let eta_grid = match map.take_list::<f64>("eta-grid", vec![0.1, 1.0, 10.0]) {
        Ok(g) => g,
        Err(e) => return fail(&mut manifest, &out_dir, EXIT_CONFIG, &e.to_string()),
    };
    let eps_max = match map.take_parsed::<f64>("eps-max", 8.0 * base_cfg.epsilon.max(1e-6)) {
        Ok(v) => v,
        Err(e) => return fail(&mut manifest, &out_dir, EXIT_CONFIG, &e.to_string()),
    };
    let bisection_steps = match map.take_parsed::<usize>("bisection-steps", 9) {
        Ok(v) => v,
        Err(e) => return fail(&mut manifest, &out_dir, EXIT_CONFIG, &e.to_string()),
    };
    if let Err(e) = map.ensure_consumed() {
        return fail(&mut manifest, &out_dir, EXIT_CONFIG, &e.to_string());
    }
    if let Err(e) = base_cfg.validate() {
        return fail(&mut manifest, &out_dir, EXIT_CONFIG, &e.to_string());
    }
    manifest.seed = base_cfg.seed;
    manifest.resolved_config = format!(
        "checkpoint={}\ndata={}\nmode={:?}\nattack-config={}\n",
        args.checkpoint.display(),
        args.data.display(),
        args.mode,
        args.attack_config.display()
    );
    if std::fs::create_dir_all(&out_dir).is_err() {
        return fail(&mut manifest, &out_dir, EXIT_CONFIG, "cannot create output directory");
    }
    let results_path = out_dir.join("attack_results.csv");

    match args.mode {
        AttackMode::Normal => {
            let results = match attack_dataset(&ckpt.params, &ds, &base_cfg) {
                Ok(r) => r,
                Err(e) => return fail(&mut manifest, &out_dir, EXIT_NUMERIC, &e.to_string()),
            };
            let rows: Vec<(usize, &AttackResult, f64)> = results
                .iter()
                .enumerate()
                .map(|(i, r)| (i, r, base_cfg.epsilon))
                .collect();
            if write_atomic(&results_path, attack_results_csv(&rows).as_bytes()).is_err() {
                return fail(&mut manifest, &out_dir, EXIT_CONFIG, "cannot write results");
            }
        }
        AttackMode::Adaptive => {
            // sweep every objective kind over the eta grid, keep the worst
            // candidate per example
            let mut worst: Vec<Option<AttackResult>> = vec![None; ds.len()];
            let mut detail = String::from("kind,eta,idx,success,obj_value,rcon,conf\n");
            for kind in ObjectiveKind::ALL {
                let etas: &[f64] = if kind == ObjectiveKind::Ce { &[0.0] } else { &eta_grid };
                for &eta in etas {
                    let mut cfg = base_cfg.clone();
                    cfg.objective.kind = kind;
                    cfg.objective.eta = eta;
                    let results = match attack_dataset(&ckpt.params, &ds, &cfg) {
                        Ok(r) => r,
                        Err(e) => {
                            return fail(&mut manifest, &out_dir, EXIT_NUMERIC, &e.to_string())
                        }
                    };
                    for (i, r) in results.into_iter().enumerate() {
                        let _ = writeln!(
                            detail,
                            "{},{eta},{i},{},{},{},{}",
                            kind.label(),
                            u8::from(r.success),
                            r.objective,
                            r.r_con,
                            r.confidence
                        );
                        let replace = match &worst[i] {
                            None => true,
                            Some(cur) => worse_for_defender(&r, cur),
                        };
                        if replace {
                            worst[i] = Some(r);
                        }
                    }
                }
            }
            let finals: Vec<AttackResult> = worst.into_iter().map(|w| w.unwrap()).collect();
            let rows: Vec<(usize, &AttackResult, f64)> = finals
                .iter()
                .enumerate()
                .map(|(i, r)| (i, r, base_cfg.epsilon))
                .collect();
            let detail_path = out_dir.join("adaptive_detail.csv");
            if write_atomic(&results_path, attack_results_csv(&rows).as_bytes()).is_err()
                || write_atomic(&detail_path, detail.as_bytes()).is_err()
            {
                return fail(&mut manifest, &out_dir, EXIT_CONFIG, "cannot write results");
            }
            manifest.add_artifact("adaptive_detail", &detail_path);
        }
        AttackMode::MinDistortion => {
            let median_ds = match &args.median_data {
                None => None,
                Some(p) => match load_csv(p) {
                    Ok(d) => Some(d),
                    Err(e) => return fail(&mut manifest, &out_dir, EXIT_CONFIG, &e.to_string()),
                },
            };
            let median = match median_rcon(&ckpt.params, median_ds.as_ref().unwrap_or(&ds)) {
                Ok(m) => m,
                Err(e) => return fail(&mut manifest, &out_dir, EXIT_NUMERIC, &e.to_string()),
            };
            let md_cfg = MinDistortionConfig {
                eps_max,
                bisection_steps,
                attack: base_cfg.clone(),
            };
            let results = parallel_map(ds.len(), |i| {
                min_distortion(&ckpt.params, ds.x.row(i), ds.y[i], median, &md_cfg)
            });
            let mut csv = String::from("idx,success,eps,obj_value,rcon,conf\n");
            let mut found = Vec::new();
            for (i, r) in results.iter().enumerate() {
                match r {
                    Err(e) => return fail(&mut manifest, &out_dir, EXIT_NUMERIC, &e.to_string()),
                    Ok(r) => match (&r.min_eps, &r.final_result) {
                        (Some(eps), Some(fr)) => {
                            found.push(*eps);
                            let _ = writeln!(
                                csv,
                                "{i},1,{eps},{},{},{}",
                                fr.objective, fr.r_con, fr.confidence
                            );
                        }
                        _ => {
                            let _ = writeln!(csv, "{i},0,,,,");
                        }
                    },
                }
            }
            found.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut summary = String::from("metric,value\n");
            let _ = writeln!(summary, "rejector_median,{median}");
            let _ = writeln!(summary, "found,{}", found.len());
            let _ = writeln!(summary, "total,{}", ds.len());
            if !found.is_empty() {
                let mid = if found.len() % 2 == 1 {
                    found[found.len() / 2]
                } else {
                    0.5 * (found[found.len() / 2 - 1] + found[found.len() / 2])
                };
                let mean: f64 = found.iter().sum::<f64>() / found.len() as f64;
                let _ = writeln!(summary, "median_min_eps,{mid}");
                let _ = writeln!(summary, "mean_min_eps,{mean}");
            }
            let summary_path = out_dir.join("min_distortion_summary.csv");
            if write_atomic(&results_path, csv.as_bytes()).is_err()
                || write_atomic(&summary_path, summary.as_bytes()).is_err()
            {
                return fail(&mut manifest, &out_dir, EXIT_CONFIG, "cannot write results");
            }
            manifest.add_artifact("min_distortion_summary", &summary_path);
        }
    }
    manifest.add_artifact("attack_results", &results_path);
    finish(&mut manifest, &out_dir, started)
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

fn temperature_ordering_violations() -> (u64, String) {
    // the two logit triples whose confidence ordering flips between tau = 1
    // and tau = 2
    let x1 = [0.0, 3.0, -1000.0];
    let x2 = [0.0, 2.0, 2.0];
    let m = |logits: &[f64], tau: f64| {
        rrlab::numkit::softmax_t(logits, tau).expect("finite logits").get(0)
    };
    let mut violations = 0;
    let mut text = String::new();
    let (a1, b1) = (m(&x1, 1.0), m(&x2, 1.0));
    let (a2, b2) = (m(&x1, 2.0), m(&x2, 2.0));
    let _ = writeln!(
        text,
        "temperature ordering: tau=1 -> {a1:.6} < {b1:.6} ({})",
        if a1 < b1 { "ok" } else { "VIOLATION" }
    );
    let _ = writeln!(
        text,
        "temperature ordering: tau=2 -> {a2:.6} > {b2:.6} ({})",
        if a2 > b2 { "ok" } else { "VIOLATION" }
    );
    if a1 >= b1 {
        violations += 1;
    }
    if a2 <= b2 {
        violations += 1;
    }
    (violations, text)
}

fn nsub_bin_violations(pairs: u64, seed: u64) -> (u64, String) {
    let mut rng = Rng::stream(seed, "verify-nsub");
    let mut violations = 0;
    let mut worst = String::new();
    for _ in 0..pairs {
        let xi = rng.uniform_in(0.01, 0.99);
        let rho = rng.uniform_in(0.001, 0.9);
        let r = nsub(xi, rho).expect("valid range");
        let geo = geometric_bin_edges(xi, rho).expect("valid range");
        let arith = arithmetic_bin_edges(xi).expect("valid range");
        if geo.len() - 1 != r.n1.ceil() as usize || arith.len() - 1 != r.n2.ceil() as usize {
            violations += 1;
            if worst.is_empty() {
                worst = format!(
                    "xi {xi}, rho {rho}: bins {}/{} vs ceil {}/{}",
                    geo.len() - 1,
                    arith.len() - 1,
                    r.n1.ceil(),
                    r.n2.ceil()
                );
            }
        }
    }
    let text = format!(
        "bin construction vs ceil formulas: {pairs} random pairs, {violations} mismatches {worst}\n"
    );
    (violations, text)
}

/// Runs every verifier and writes the report. `trials` counts instances per
/// branch for the coupled-separation check.
pub fn cmd_verify(trials: u64, seed: u64, out_dir: &Path, inject_fault: bool) -> u8 {
    let started = Instant::now();
    let mut manifest = Manifest::new("verify");
    manifest.seed = seed;
    manifest.resolved_config = format!("trials={trials}\nseed={seed}\ninject-fault={inject_fault}\n");
    manifest.config_digest = digest(&manifest.resolved_config);
    if std::fs::create_dir_all(out_dir).is_err() {
        return fail(&mut manifest, out_dir, EXIT_CONFIG, "cannot create output directory");
    }
    if trials == 0 {
        return fail(&mut manifest, out_dir, EXIT_CONFIG, "need at least 1 trial");
    }
    let opts = VerifyOptions { inject_fault };
    let lemma = verify_lemma1_with(trials, seed, opts);
    let theorem = verify_theorem1_with(trials, seed, opts);
    let (t_viol, t_text) = temperature_ordering_violations();
    let (n_viol, n_text) = nsub_bin_violations(1000, seed);

    let mut report = String::new();
    let _ = write!(report, "{lemma}");
    let _ = write!(report, "{theorem}");
    report.push_str(&t_text);
    report.push_str(&n_text);
    let n20 = nsub(0.1, 0.01).expect("valid range");
    let _ = writeln!(
        report,
        "substituted task size at xi 0.1, rho 0.01: N_sub = {} ({})",
        n20.n_sub,
        if n20.n_sub == 20 { "ok" } else { "VIOLATION" }
    );
    let nsub_exact_violation = u64::from(n20.n_sub != 20);

    let total = lemma.violations + theorem.violations + t_viol + n_viol + nsub_exact_violation;
    let _ = writeln!(report, "total violations: {total}");
    let _ = writeln!(report, "overall: {}", if total == 0 { "PASS" } else { "FAIL" });

    let report_path = out_dir.join("verify_report.txt");
    let counters_path = out_dir.join("branch_counters.csv");
    let mut counters = String::from("check,branch,count\n");
    for r in [&lemma, &theorem] {
        for (name, count) in &r.branch_counts {
            let _ = writeln!(counters, "{},{name},{count}", r.name);
        }
    }
    if write_atomic(&report_path, report.as_bytes()).is_err()
        || write_atomic(&counters_path, counters.as_bytes()).is_err()
    {
        return fail(&mut manifest, out_dir, EXIT_CONFIG, "cannot write report");
    }
    manifest.add_artifact("verify_report", &report_path);
    manifest.add_artifact("branch_counters", &counters_path);

    if total > 0 {
        let mut dump = String::new();
        for r in [&lemma, &theorem] {
            for ce in &r.counterexamples {
                let _ = writeln!(dump, "{}: {}", r.name, ce.description);
            }
        }
        let dump_path = out_dir.join("counterexamples.txt");
        let _ = write_atomic(&dump_path, dump.as_bytes());
        manifest.add_artifact("counterexamples", &dump_path);
        eprintln!("verification failed with {total} violations; see {}", dump_path.display());
        manifest.status = format!("error {EXIT_VERIFY}");
        manifest.wall_seconds = started.elapsed().as_secs_f64();
        let _ = manifest.write(out_dir);
        return EXIT_VERIFY;
    }
    println!("{report}");
    finish(&mut manifest, out_dir, started)
}

/// Clean or attacked accuracy, as the presence of an attack config decides.
pub fn quick_accuracy(
    params: &TwoHeadParams,
    ds: &Dataset,
    attack: Option<&AttackConfig>,
) -> Result<f64, TrainingError> {
    match attack {
        None => rrlab::training::clean_accuracy(params, ds),
        Some(cfg) => attacked_accuracy(params, ds, cfg),
    }
}
