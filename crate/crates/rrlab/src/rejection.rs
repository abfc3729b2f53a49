//! Rejection metrics and their machine-checked guarantees.
//!
//! The metrics: *confidence* is the classifier's top probability, *T-Con* is
//! the probability on the true label (an oracle, it needs the label), and
//! *R-Con* rectifies confidence by the auxiliary head,
//! `r_con = confidence * a_phi`. The rectifier's pointwise optimum is
//! `a_star = p[y] / p[y_m]`, and `xi_error` measures how far `a_phi` sits
//! from it, through a geometric (log-ratio) or arithmetic (absolute
//! difference) bound — whichever is satisfied.
//!
//! The coupled rejector first filters by confidence at `1/(2 - xi)` and then
//! separates the survivors by R-Con at `1/2`. [`verify_lemma1`] and
//! [`verify_theorem1`] sample hypothesis-satisfying instances by the hundred
//! thousand and check the separation claims with a small guard band against
//! floating-point ties; any violation is an implementation bug, never noise.

use crate::numkit::{NumError, ProbVector, PROB_CLAMP};
use crate::rng::Rng;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RejectionError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Guard band for strict theorem inequalities: sampled instances landing
/// within this distance of a decision boundary are regenerated, not counted.
pub const GUARD_BAND: f64 = 1e-9;

/// Per-example rejection metric values.
#[derive(Clone, Copy, Debug)]
pub struct RejectionScores {
    pub confidence: f64,
    /// Probability on the true label (oracle).
    pub tcon: f64,
    pub a_phi: f64,
    pub r_con: f64,
    /// Whether the prediction matches the true label.
    pub correct: bool,
}

impl RejectionScores {
    /// Builds scores from a probability vector, true label, and rectifier
    /// value.
    pub fn from_parts(probs: &ProbVector, y: usize, a_phi: f64) -> Result<Self, RejectionError> {
        if y >= probs.classes() {
            return Err(RejectionError::InvalidArgument(format!(
                "class index {y} out of range for {} classes",
                probs.classes()
            )));
        }
        if !(0.0..=1.0).contains(&a_phi) {
            return Err(RejectionError::InvalidArgument(format!(
                "a_phi must lie in [0, 1], got {a_phi}"
            )));
        }
        let y_m = probs.argmax();
        let confidence = probs.get(y_m);
        Ok(RejectionScores {
            confidence,
            tcon: probs.get(y),
            a_phi,
            r_con: confidence * a_phi,
            correct: y_m == y,
        })
    }
}

/// The probability the classifier assigns to the true label.
pub fn tcon(probs: &ProbVector, y: usize) -> Result<f64, RejectionError> {
    if y >= probs.classes() {
        return Err(RejectionError::InvalidArgument(format!(
            "class index {y} out of range for {} classes",
            probs.classes()
        )));
    }
    Ok(probs.get(y))
}

/// A bound value that may fall outside the admissible range `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum XiBound {
    Attainable(f64),
    Unattainable,
}

impl XiBound {
    pub fn value(self) -> Option<f64> {
        match self {
            XiBound::Attainable(v) => Some(v),
            XiBound::Unattainable => None,
        }
    }
}

/// The two pointwise error bounds between `a_phi` and its optimum, and their
/// minimum.
#[derive(Clone, Copy, Debug)]
pub struct Definition1Result {
    /// Smallest arithmetic bound `2 |a_phi - a_star|` (may exceed 1).
    pub xi_arith: f64,
    /// Smallest geometric bound `2 - 2 / max(ratio)`, when one exists in
    /// `[0, 1)`.
    pub xi_geom: XiBound,
    /// Minimum of the attainable bounds, or unattainable when both are >= 1.
    pub xi_min: XiBound,
}

/// Pointwise error of the rectifier at one example.
///
/// `a_star = p[y] / p[y_m]` with both probabilities clamped at `1e-12` so the
/// ratio stays finite.
pub fn xi_error(a_phi: f64, probs: &ProbVector, y: usize) -> Result<Definition1Result, RejectionError> {
    if !(0.0..=1.0).contains(&a_phi) {
        return Err(RejectionError::InvalidArgument(format!(
            "a_phi must lie in [0, 1], got {a_phi}"
        )));
    }
    if y >= probs.classes() {
        return Err(RejectionError::InvalidArgument(format!(
            "class index {y} out of range for {} classes",
            probs.classes()
        )));
    }
    let y_m = probs.argmax();
    let a_star = probs.get(y).max(PROB_CLAMP) / probs.get(y_m).max(PROB_CLAMP);
    let xi_arith = 2.0 * (a_phi - a_star).abs();

    let xi_geom = if a_phi <= 0.0 || a_star <= 0.0 {
        XiBound::Unattainable
    } else {
        let ratio = (a_phi / a_star).max(a_star / a_phi);
        if ratio >= 2.0 {
            XiBound::Unattainable
        } else {
            XiBound::Attainable(2.0 - 2.0 / ratio)
        }
    };

    let mut xi_min = XiBound::Unattainable;
    for candidate in [xi_geom, attainable_if_below_one(xi_arith)] {
        if let XiBound::Attainable(v) = candidate {
            xi_min = match xi_min {
                XiBound::Attainable(cur) if cur <= v => XiBound::Attainable(cur),
                _ => XiBound::Attainable(v),
            };
        }
    }
    Ok(Definition1Result { xi_arith, xi_geom, xi_min })
}

fn attainable_if_below_one(v: f64) -> XiBound {
    if v < 1.0 {
        XiBound::Attainable(v)
    } else {
        XiBound::Unattainable
    }
}

/// Stage reached by the coupled rejector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    /// Confidence did not exceed `1/(2 - xi)`.
    RejectedByConfidence,
    /// Passed the confidence filter and has `r_con > 1/2`.
    Accepted,
    /// Passed the confidence filter but `r_con <= 1/2`.
    FlaggedByRcon,
}

/// Outcome of the two-stage rejector.
#[derive(Clone, Copy, Debug)]
pub struct CoupledDecision {
    pub stage: Stage,
    pub xi: f64,
    /// `(1/(2 - xi), 1/2)`.
    pub thresholds: (f64, f64),
}

/// Two-stage rule: reject when confidence is at most `1/(2 - xi)`, then flag
/// accepted examples whose R-Con is at most `1/2`.
pub fn coupled_reject(scores: &RejectionScores, xi: f64) -> Result<CoupledDecision, RejectionError> {
    if !(0.0..1.0).contains(&xi) {
        return Err(RejectionError::InvalidArgument(format!(
            "xi must lie in [0, 1), got {xi}"
        )));
    }
    let conf_threshold = 1.0 / (2.0 - xi);
    let stage = if scores.confidence <= conf_threshold {
        Stage::RejectedByConfidence
    } else if scores.r_con > 0.5 {
        Stage::Accepted
    } else {
        Stage::FlaggedByRcon
    };
    Ok(CoupledDecision { stage, xi, thresholds: (conf_threshold, 0.5) })
}

/// `N1`, `N2`, and the class count of the substituted classification task.
#[derive(Clone, Copy, Debug)]
pub struct NsubResult {
    pub n1: f64,
    pub n2: f64,
    pub n_sub: usize,
}

/// Class count of the classification task that substitutes for learning a
/// `xi`-error rectifier at rounding error `rho`:
/// `N1 = log(1/rho) / log(2/(2-xi)) + 1`, `N2 = 2/xi`,
/// `N_sub = ceil(min(N1, N2))`.
pub fn nsub(xi: f64, rho: f64) -> Result<NsubResult, RejectionError> {
    if !(xi > 0.0 && xi < 1.0) {
        return Err(RejectionError::InvalidArgument(format!(
            "xi must lie in (0, 1), got {xi}"
        )));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(RejectionError::InvalidArgument(format!(
            "rho must lie in (0, 1), got {rho}"
        )));
    }
    let n1 = (1.0 / rho).ln() / (2.0 / (2.0 - xi)).ln() + 1.0;
    let n2 = 2.0 / xi;
    let n_sub = n1.min(n2).ceil() as usize;
    Ok(NsubResult { n1, n2, n_sub })
}

/// Geometric bin edges `0, rho, rho*r, rho*r^2, ..., 1` with `r = 2/(2-xi)`,
/// built exactly as the binning argument constructs them. Two values inside
/// the same bin satisfy the geometric bound.
pub fn geometric_bin_edges(xi: f64, rho: f64) -> Result<Vec<f64>, RejectionError> {
    if !(xi > 0.0 && xi < 1.0) || !(rho > 0.0 && rho < 1.0) {
        return Err(RejectionError::InvalidArgument(
            "xi and rho must lie in (0, 1)".into(),
        ));
    }
    let r = 2.0 / (2.0 - xi);
    let mut edges = vec![0.0, rho];
    let mut last = rho;
    while last < 1.0 {
        last *= r;
        edges.push(last.min(1.0));
    }
    Ok(edges)
}

/// Arithmetic bin edges `0, xi/2, xi, ..., 1`. Two values inside the same bin
/// satisfy the arithmetic bound.
pub fn arithmetic_bin_edges(xi: f64) -> Result<Vec<f64>, RejectionError> {
    if !(xi > 0.0 && xi < 1.0) {
        return Err(RejectionError::InvalidArgument(format!(
            "xi must lie in (0, 1), got {xi}"
        )));
    }
    let mut edges = vec![0.0];
    let mut last = 0.0;
    while last < 1.0 {
        last += xi / 2.0;
        edges.push(last.min(1.0));
    }
    Ok(edges)
}

/// Mean probability mass on the true labels: the accuracy a sampling
/// classifier achieves in expectation. At temperature zero it collapses to
/// the plain 0/1 accuracy.
pub fn expected_sampled_accuracy(
    probs_batch: &[ProbVector],
    y_batch: &[usize],
) -> Result<f64, RejectionError> {
    if probs_batch.is_empty() {
        return Err(RejectionError::InvalidArgument("empty batch".into()));
    }
    if probs_batch.len() != y_batch.len() {
        return Err(RejectionError::InvalidArgument(format!(
            "batch length mismatch: {} probs vs {} labels",
            probs_batch.len(),
            y_batch.len()
        )));
    }
    let mut acc = 0.0;
    for (p, &y) in probs_batch.iter().zip(y_batch) {
        acc += tcon(p, y)?;
    }
    Ok(acc / probs_batch.len() as f64)
}

// ---------------------------------------------------------------------------
// Theorem verifiers
// ---------------------------------------------------------------------------

/// The four proof branches of the coupled-separation theorem.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    CorrectGeometric,
    CorrectArithmetic,
    WrongGeometric,
    WrongArithmetic,
}

pub const BRANCHES: [Branch; 4] = [
    Branch::CorrectGeometric,
    Branch::CorrectArithmetic,
    Branch::WrongGeometric,
    Branch::WrongArithmetic,
];

impl Branch {
    pub fn label(self) -> &'static str {
        match self {
            Branch::CorrectGeometric => "correct,geometric",
            Branch::CorrectArithmetic => "correct,arithmetic",
            Branch::WrongGeometric => "wrong,geometric",
            Branch::WrongArithmetic => "wrong,arithmetic",
        }
    }
}

/// A sampled instance violating a claimed inequality.
#[derive(Clone, Debug)]
pub struct Counterexample {
    pub description: String,
}

/// Report of a sampling verification run.
#[derive(Clone, Debug)]
pub struct VerificationReport {
    pub name: String,
    pub trials: u64,
    /// Hypothesis-satisfying instances checked per branch, in
    /// [`BRANCHES`] order (a single entry for one-branch checks).
    pub branch_counts: Vec<(String, u64)>,
    pub violations: u64,
    pub counterexamples: Vec<Counterexample>,
    /// Smallest observed distance from each strict inequality.
    pub tightest_margin: f64,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    /// Branch counters as CSV with header `branch,count`.
    pub fn counters_csv(&self) -> String {
        let mut out = String::from("branch,count\n");
        for (name, count) in &self.branch_counts {
            out.push_str(&format!("{name},{count}\n"));
        }
        out
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{}: {} trials, {} violations, tightest margin {:.3e}",
            self.name, self.trials, self.violations, self.tightest_margin
        )?;
        for (name, count) in &self.branch_counts {
            writeln!(f, "  {name}: {count}")?;
        }
        for ce in self.counterexamples.iter().take(5) {
            writeln!(f, "  counterexample: {}", ce.description)?;
        }
        Ok(())
    }
}

/// Samples a probability vector over `classes` whose maximum entry exceeds
/// `threshold + GUARD_BAND`, together with its argmax.
fn sample_confident_probs(rng: &mut Rng, classes: usize, threshold: f64) -> (ProbVector, usize) {
    loop {
        // Random simplex point, then mix toward a random vertex until the
        // confidence condition holds.
        let mut q: Vec<f64> = (0..classes).map(|_| -rng.uniform().max(1e-300).ln()).collect();
        let sum: f64 = q.iter().sum();
        for v in q.iter_mut() {
            *v /= sum;
        }
        let k = rng.below(classes as u64) as usize;
        let need = threshold + GUARD_BAND;
        let alpha_min = if q[k] >= need {
            0.0
        } else {
            (need - q[k]) / (1.0 - q[k])
        };
        if alpha_min >= 1.0 {
            continue;
        }
        let alpha = rng.uniform_in(alpha_min, 1.0);
        let mut p = vec![0.0; classes];
        for (i, v) in p.iter_mut().enumerate() {
            *v = (1.0 - alpha) * q[i] + if i == k { alpha } else { 0.0 };
        }
        // Renormalize away accumulated rounding.
        let s: f64 = p.iter().sum();
        for v in p.iter_mut() {
            *v /= s;
        }
        if p[k] > need && crate::numkit::argmax(&p) == k {
            let probs = ProbVector::new(p).expect("sampled simplex point");
            return (probs, k);
        }
    }
}

fn wrong_label(rng: &mut Rng, classes: usize, y_m: usize) -> usize {
    loop {
        let y = rng.below(classes as u64) as usize;
        if y != y_m {
            return y;
        }
    }
}

/// Options for the verifiers. `inject_fault` is a test hook that flips one
/// inequality so the harness can prove it reports counterexamples.
#[derive(Clone, Copy, Debug, Default)]
pub struct VerifyOptions {
    pub inject_fault: bool,
}

/// Checks the one-metric separation fact: among inputs with confidence above
/// `1/2`, every correctly classified input has T-Con above `1/2` and every
/// wrongly classified one below. Each trial draws one correct and one wrong
/// instance.
pub fn verify_lemma1(trials: u64, seed: u64) -> VerificationReport {
    verify_lemma1_with(trials, seed, VerifyOptions::default())
}

pub fn verify_lemma1_with(trials: u64, seed: u64, opts: VerifyOptions) -> VerificationReport {
    let mut rng = Rng::stream(seed, "verify-lemma1");
    let mut violations = 0;
    let mut counterexamples = Vec::new();
    let mut tightest: f64 = f64::INFINITY;
    let mut correct_count = 0;
    let mut wrong_count = 0;
    for _ in 0..trials {
        let classes = 2 + rng.below(9) as usize;

        let (p1, k1) = sample_confident_probs(&mut rng, classes, 0.5);
        let t1 = p1.get(k1); // correct: y = y_m
        correct_count += 1;
        let margin1 = t1 - 0.5;
        tightest = tightest.min(margin1);
        let ok1 = if opts.inject_fault { t1 < 0.5 } else { t1 > 0.5 };
        if !ok1 {
            violations += 1;
            if counterexamples.len() < 8 {
                counterexamples.push(Counterexample {
                    description: format!("correct instance with T-Con {t1} <= 1/2, probs {:?}", p1.probs()),
                });
            }
        }

        let (p2, k2) = sample_confident_probs(&mut rng, classes, 0.5);
        let y2 = wrong_label(&mut rng, classes, k2);
        let t2 = p2.get(y2);
        wrong_count += 1;
        let margin2 = 0.5 - t2;
        tightest = tightest.min(margin2);
        if !(t2 < 0.5) {
            violations += 1;
            if counterexamples.len() < 8 {
                counterexamples.push(Counterexample {
                    description: format!("wrong instance with T-Con {t2} >= 1/2, probs {:?}", p2.probs()),
                });
            }
        }
    }
    VerificationReport {
        name: "lemma1-separability".into(),
        trials,
        branch_counts: vec![
            ("correct".into(), correct_count),
            ("wrong".into(), wrong_count),
        ],
        violations,
        counterexamples,
        tightest_margin: if tightest.is_finite() { tightest } else { 0.0 },
    }
}

/// Proof auxiliary: `g(xi) = (2 - 2 xi) / (2 - xi)^2`, the bound on R-Con of
/// a wrongly classified input under the geometric branch.
pub fn wrong_rcon_bound(xi: f64) -> f64 {
    (2.0 - 2.0 * xi) / ((2.0 - xi) * (2.0 - xi))
}

/// Sampled check of the coupled-separation theorem: instances satisfying the
/// confidence hypothesis and one error bound must land on the correct side of
/// the R-Con line at `1/2`. Runs `trials_per_branch` instances for each of
/// the four proof branches and also checks that [`wrong_rcon_bound`] is
/// monotone decreasing and at most `1/2` on a grid.
pub fn verify_theorem1(trials_per_branch: u64, seed: u64) -> VerificationReport {
    verify_theorem1_with(trials_per_branch, seed, VerifyOptions::default())
}

pub fn verify_theorem1_with(
    trials_per_branch: u64,
    seed: u64,
    opts: VerifyOptions,
) -> VerificationReport {
    let mut rng = Rng::stream(seed, "verify-theorem1");
    let mut violations = 0;
    let mut counterexamples: Vec<Counterexample> = Vec::new();
    let mut tightest: f64 = f64::INFINITY;
    let mut counts = [0u64; 4];

    for (bi, &branch) in BRANCHES.iter().enumerate() {
        let mut done = 0;
        while done < trials_per_branch {
            let classes = 2 + rng.below(9) as usize;
            let xi = rng.uniform_in(0.0, 1.0 - 1e-12);
            let threshold = 1.0 / (2.0 - xi);
            let (probs, y_m) = sample_confident_probs(&mut rng, classes, threshold);
            let conf = probs.get(y_m);

            let a_star = match branch {
                Branch::CorrectGeometric | Branch::CorrectArithmetic => 1.0,
                Branch::WrongGeometric | Branch::WrongArithmetic => {
                    let y = wrong_label(&mut rng, classes, y_m);
                    probs.get(y) / conf
                }
            };

            // Sample a_phi inside the branch's bound, intersected with [0, 1].
            let (lo, hi) = match branch {
                Branch::CorrectGeometric | Branch::WrongGeometric => {
                    let r = 2.0 / (2.0 - xi);
                    (a_star / r, (a_star * r).min(1.0))
                }
                Branch::CorrectArithmetic | Branch::WrongArithmetic => {
                    ((a_star - xi / 2.0).max(0.0), (a_star + xi / 2.0).min(1.0))
                }
            };
            if !(lo <= hi) {
                continue;
            }
            let a_phi = rng.uniform_in(lo, hi).clamp(lo, hi);
            let r_con = conf * a_phi;

            // Regenerate instances inside the guard band instead of counting
            // them either way.
            if (r_con - 0.5).abs() <= GUARD_BAND {
                continue;
            }
            done += 1;
            counts[bi] += 1;

            let correct_side = matches!(branch, Branch::CorrectGeometric | Branch::CorrectArithmetic);
            let margin = if correct_side { r_con - 0.5 } else { 0.5 - r_con };
            tightest = tightest.min(margin);
            let claim = if correct_side { r_con > 0.5 } else { r_con < 0.5 };
            let claim = if opts.inject_fault { !claim } else { claim };
            if !claim {
                violations += 1;
                if counterexamples.len() < 8 {
                    counterexamples.push(Counterexample {
                        description: format!(
                            "branch {}: xi {xi:.6}, conf {conf:.6}, a_phi {a_phi:.6}, a_star {a_star:.6}, r_con {r_con:.6}",
                            branch.label()
                        ),
                    });
                }
            }
        }
    }

    // Auxiliary fact from the proof: g is monotone decreasing on [0, 1) and
    // g(0) = 1/2 is its maximum.
    let grid = 10_000;
    let mut prev = wrong_rcon_bound(0.0);
    if (prev - 0.5).abs() > 1e-15 {
        violations += 1;
        counterexamples.push(Counterexample {
            description: format!("g(0) = {prev}, expected exactly 1/2"),
        });
    }
    for i in 1..grid {
        let xi = i as f64 / grid as f64;
        let g = wrong_rcon_bound(xi);
        if g >= prev || g > 0.5 {
            violations += 1;
            if counterexamples.len() < 8 {
                counterexamples.push(Counterexample {
                    description: format!("g not decreasing at xi {xi}: {g} vs {prev}"),
                });
            }
        }
        prev = g;
    }

    VerificationReport {
        name: "theorem1-coupled-separability".into(),
        trials: trials_per_branch * 4,
        branch_counts: BRANCHES
            .iter()
            .zip(counts)
            .map(|(b, c)| (b.label().to_string(), c))
            .collect(),
        violations,
        counterexamples,
        tightest_margin: if tightest.is_finite() { tightest } else { 0.0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::softmax_t;

    #[test]
    fn tcon_examples() {
        let p = ProbVector::new(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(tcon(&p, 1).unwrap(), 1.0);
        let u = ProbVector::uniform(10);
        assert!((tcon(&u, 7).unwrap() - 0.1).abs() < 1e-15);
        let p = ProbVector::new(vec![0.7, 0.2, 0.1]).unwrap();
        assert_eq!(tcon(&p, 1).unwrap(), 0.2);
        assert!(tcon(&p, 3).is_err());
    }

    #[test]
    fn xi_error_identity_case() {
        let p = ProbVector::new(vec![0.6, 0.4]).unwrap();
        // correct prediction: a_star = 1
        let r = xi_error(1.0, &p, 0).unwrap();
        assert_eq!(r.xi_min, XiBound::Attainable(0.0));
        assert_eq!(r.xi_arith, 0.0);
    }

    #[test]
    fn xi_error_ratio_two_unattainable_geometric() {
        // a_phi = 0.5, a_star = 0.25: arithmetic bound 0.5, geometric ratio 2.
        let p = ProbVector::new(vec![0.8, 0.2]).unwrap();
        let r = xi_error(0.5, &p, 1).unwrap();
        assert!((r.xi_arith - 0.5).abs() < 1e-12);
        assert_eq!(r.xi_geom, XiBound::Unattainable);
        assert_eq!(r.xi_min.value().unwrap(), r.xi_arith);
    }

    #[test]
    fn xi_error_both_bounds() {
        // a_phi = 0.9, a_star = 1.0: both bounds give 0.2.
        let p = ProbVector::new(vec![0.5, 0.3, 0.2]).unwrap();
        let r = xi_error(0.9, &p, 0).unwrap();
        assert!((r.xi_arith - 0.2).abs() < 1e-12);
        let g = r.xi_geom.value().unwrap();
        assert!((g - 0.2).abs() < 1e-12);
        assert!((r.xi_min.value().unwrap() - 0.2).abs() < 1e-12);
    }

    /// Grid-scan oracle: smallest xi on a 1e-4 grid satisfying either bound
    /// of the pointwise error definition, checked directly.
    fn xi_min_grid_oracle(a_phi: f64, a_star: f64) -> Option<f64> {
        let steps = 10_000;
        for i in 0..steps {
            let xi = i as f64 / steps as f64;
            let geo = a_phi > 0.0
                && a_star > 0.0
                && (a_phi / a_star).ln().abs() <= (2.0 / (2.0 - xi)).ln();
            let arith = (a_phi - a_star).abs() <= xi / 2.0;
            if geo || arith {
                return Some(xi);
            }
        }
        None
    }

    #[test]
    fn xi_error_matches_grid_oracle() {
        let mut rng = Rng::from_seed(404);
        for _ in 0..1000 {
            let py = rng.uniform_in(0.01, 0.5);
            let pm = rng.uniform_in(py, 1.0 - py).max(py);
            let rest = 1.0 - py - pm;
            let probs = ProbVector::new(vec![pm, py, rest.max(0.0)]);
            let probs = match probs {
                Ok(p) => p,
                Err(_) => continue,
            };
            let a_phi = rng.uniform();
            let got = xi_error(a_phi, &probs, 1).unwrap();
            let a_star = probs.get(1).max(PROB_CLAMP) / probs.get(probs.argmax()).max(PROB_CLAMP);
            match (got.xi_min, xi_min_grid_oracle(a_phi, a_star)) {
                (XiBound::Attainable(v), Some(o)) => {
                    assert!((v - o).abs() <= 1e-3, "xi_min {v} vs grid {o}");
                }
                (XiBound::Unattainable, None) => {}
                (a, b) => panic!("disagreement: {a:?} vs {b:?} (a_phi {a_phi}, a_star {a_star})"),
            }
        }
    }

    #[test]
    fn coupled_reject_thresholds() {
        let p = ProbVector::new(vec![0.9, 0.05, 0.05]).unwrap();
        let s = RejectionScores::from_parts(&p, 0, 1.0).unwrap();
        let d = coupled_reject(&s, 0.0).unwrap();
        assert_eq!(d.thresholds.0, 0.5);
        let d = coupled_reject(&s, 0.5).unwrap();
        assert!((d.thresholds.0 - 2.0 / 3.0).abs() < 1e-15);

        let d = coupled_reject(&s, 0.1).unwrap();
        assert_eq!(d.stage, Stage::Accepted);

        assert!(coupled_reject(&s, 1.0).is_err());
        assert!(coupled_reject(&s, -0.1).is_err());
    }

    #[test]
    fn coupled_reject_stages() {
        let p = ProbVector::new(vec![0.55, 0.45]).unwrap();
        let low_aphi = RejectionScores::from_parts(&p, 0, 0.5).unwrap();
        // passes conf filter at xi=0 (0.55 > 0.5) but r_con 0.275 <= 0.5
        assert_eq!(coupled_reject(&low_aphi, 0.0).unwrap().stage, Stage::FlaggedByRcon);
        // fails conf filter at xi=0.5 (0.55 <= 2/3)
        assert_eq!(
            coupled_reject(&low_aphi, 0.5).unwrap().stage,
            Stage::RejectedByConfidence
        );
    }

    #[test]
    fn accepted_set_shrinks_as_xi_grows() {
        // threshold 1/(2 - xi) rises with xi, so the pass set can only shrink
        let mut rng = Rng::from_seed(77);
        let mut samples = Vec::new();
        for _ in 0..300 {
            let logits: Vec<f64> = (0..4).map(|_| rng.normal() * 3.0).collect();
            let p = softmax_t(&logits, 1.0).unwrap();
            samples.push(RejectionScores::from_parts(&p, 0, rng.uniform()).unwrap());
        }
        let grid: Vec<f64> = (0..100).map(|i| i as f64 / 101.0).collect();
        let mut prev_pass: Option<Vec<bool>> = None;
        for &xi in &grid {
            let pass: Vec<bool> = samples
                .iter()
                .map(|s| coupled_reject(s, xi).unwrap().stage != Stage::RejectedByConfidence)
                .collect();
            if let Some(prev) = &prev_pass {
                for (now, before) in pass.iter().zip(prev) {
                    assert!(!now || *before, "pass set must shrink as xi grows");
                }
            }
            prev_pass = Some(pass);
        }
    }

    #[test]
    fn nsub_paper_value() {
        let r = nsub(0.1, 0.01).unwrap();
        assert_eq!(r.n_sub, 20);
        assert!((r.n2 - 20.0).abs() < 1e-12);
    }

    #[test]
    fn nsub_derived_values() {
        let r = nsub(0.5, 0.01).unwrap();
        assert!((r.n2 - 4.0).abs() < 1e-12);
        assert!((r.n1 - 17.0086).abs() < 1e-3);
        assert_eq!(r.n_sub, 4);

        let r = nsub(0.2, 0.5).unwrap();
        assert!((r.n1 - 7.5788).abs() < 1e-3);
        assert!((r.n2 - 10.0).abs() < 1e-12);
        assert_eq!(r.n_sub, 8);

        assert!(nsub(0.0, 0.5).is_err());
        assert!(nsub(1.0, 0.5).is_err());
        assert!(nsub(0.5, 0.0).is_err());
    }

    #[test]
    fn bin_construction_matches_ceil_formulas() {
        let mut rng = Rng::from_seed(2024);
        for _ in 0..1000 {
            let xi = rng.uniform_in(0.01, 0.99);
            let rho = rng.uniform_in(0.001, 0.9);
            let r = nsub(xi, rho).unwrap();
            let geo = geometric_bin_edges(xi, rho).unwrap();
            let arith = arithmetic_bin_edges(xi).unwrap();
            assert_eq!(geo.len() - 1, r.n1.ceil() as usize, "xi {xi} rho {rho}");
            assert_eq!(arith.len() - 1, r.n2.ceil() as usize, "xi {xi}");
        }
    }

    #[test]
    fn expected_sampled_accuracy_cases() {
        let onehot = ProbVector::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(expected_sampled_accuracy(&[onehot.clone()], &[0]).unwrap(), 1.0);

        let u = ProbVector::uniform(4);
        let v = expected_sampled_accuracy(&[u.clone(), u.clone()], &[0, 3]).unwrap();
        assert!((v - 0.25).abs() < 1e-15);

        let p1 = ProbVector::new(vec![0.9, 0.1]).unwrap();
        let p2 = ProbVector::new(vec![0.3, 0.7]).unwrap();
        let v = expected_sampled_accuracy(&[p1, p2], &[0, 0]).unwrap();
        assert!((v - 0.6).abs() < 1e-12);

        assert!(expected_sampled_accuracy(&[], &[]).is_err());
    }

    #[test]
    fn lemma1_holds_on_samples() {
        let report = verify_lemma1(20_000, 0);
        assert!(report.passed(), "{report}");
        assert!(report.tightest_margin > 0.0);
    }

    #[test]
    fn lemma1_boundary_probe() {
        // conf just above 1/2 forces T-Con of a wrong label just below 1/2
        let p = ProbVector::new(vec![0.5 + 1e-9, 0.5 - 1e-9]).unwrap();
        let t = tcon(&p, 1).unwrap();
        assert!(t <= 0.5 - 1e-9 + 1e-15);
    }

    #[test]
    fn lemma1_dense_grid_over_3_simplex() {
        // every grid point with conf > 1/2: correct label T-Con > 1/2,
        // wrong label T-Con < 1/2
        let steps = 1000;
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let a = i as f64 / steps as f64;
                let b = j as f64 / steps as f64;
                let c = 1.0 - a - b;
                let p = [a, b, c.max(0.0)];
                let ym = crate::numkit::argmax(&p);
                if p[ym] <= 0.5 + 1e-12 {
                    continue;
                }
                for y in 0..3 {
                    if y == ym {
                        assert!(p[y] > 0.5);
                    } else {
                        assert!(p[y] < 0.5);
                    }
                }
            }
        }
    }

    #[test]
    fn theorem1_holds_on_samples() {
        let report = verify_theorem1(5_000, 0);
        assert!(report.passed(), "{report}");
        for (name, count) in &report.branch_counts {
            assert_eq!(*count, 5_000, "branch {name}");
        }
    }

    #[test]
    fn theorem1_xi_zero_degenerates_to_lemma1() {
        // at xi = 0 both bounds force a_phi = a_star exactly
        let mut rng = Rng::from_seed(5);
        for _ in 0..1000 {
            let (p, ym) = sample_confident_probs(&mut rng, 3, 0.5);
            let conf = p.get(ym);
            // correct: a_star = 1, r_con = conf > 1/2
            assert!(conf * 1.0 > 0.5);
            // wrong: a_star = p[y]/conf, r_con = p[y] < 1/2
            let y = wrong_label(&mut rng, 3, ym);
            assert!(conf * (p.get(y) / conf) < 0.5);
        }
    }

    #[test]
    fn wrong_rcon_bound_grid() {
        assert_eq!(wrong_rcon_bound(0.0), 0.5);
        let mut prev = 0.5;
        for i in 1..10_000 {
            let xi = i as f64 / 10_000.0;
            let g = wrong_rcon_bound(xi);
            assert!(g < prev);
            assert!(g < 0.5);
            prev = g;
        }
    }

    #[test]
    fn injected_fault_is_caught() {
        let report = verify_lemma1_with(100, 0, VerifyOptions { inject_fault: true });
        assert!(!report.passed());
        assert!(!report.counterexamples.is_empty());
        let report = verify_theorem1_with(100, 0, VerifyOptions { inject_fault: true });
        assert!(!report.passed());
    }

    #[test]
    fn scores_from_parts_validates() {
        let p = ProbVector::uniform(3);
        assert!(RejectionScores::from_parts(&p, 5, 0.5).is_err());
        assert!(RejectionScores::from_parts(&p, 0, 1.5).is_err());
        let s = RejectionScores::from_parts(&p, 0, 0.5).unwrap();
        assert!(s.correct); // argmax ties break low, so y = 0 matches
        assert_eq!(s.tcon, s.confidence);
    }
}
