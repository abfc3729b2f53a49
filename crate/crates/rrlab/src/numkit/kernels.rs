use super::NumError;

/// Clamp bound for probabilities inside `log` in cross-entropy and KL.
pub const PROB_CLAMP: f64 = 1e-12;
/// Clamp bound for the prediction inside the binary cross-entropy.
pub const BCE_CLAMP: f64 = 1e-6;

/// A point on the probability simplex over `L >= 2` classes.
///
/// Entries lie in `[0, 1]` and sum to one within `1e-9`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVector {
    probs: Vec<f64>,
}

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self, NumError> {
        if probs.len() < 2 {
            return Err(NumError::InvalidArgument(format!(
                "probability vector needs at least 2 classes, got {}",
                probs.len()
            )));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(NumError::InvalidArgument(
                "probability entries must lie in [0, 1]".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(NumError::InvalidArgument(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        Ok(ProbVector { probs })
    }

    pub fn uniform(classes: usize) -> Self {
        assert!(classes >= 2);
        ProbVector {
            probs: vec![1.0 / classes as f64; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, i: usize) -> f64 {
        self.probs[i]
    }

    /// Index of the largest entry; ties broken by the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    /// The largest entry, i.e. the confidence of the prediction.
    pub fn max(&self) -> f64 {
        self.probs[self.argmax()]
    }
}

/// Lowest-index argmax over a slice.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// A scalar value with a marker deciding whether gradients may flow through
/// it. With `grad_enabled = false` the value is treated as a constant by
/// every differentiation path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopGradScalar {
    pub value: f64,
    pub grad_enabled: bool,
}

impl StopGradScalar {
    /// A gradient-stopped constant.
    pub fn stopped(value: f64) -> Self {
        StopGradScalar {
            value,
            grad_enabled: false,
        }
    }

    /// A value gradients may flow through.
    pub fn flowing(value: f64) -> Self {
        StopGradScalar {
            value,
            grad_enabled: true,
        }
    }
}

/// Raw temperature softmax, shared by the kernel and the tape so both paths
/// produce bit-identical values. Stabilized by subtracting the max logit.
pub(crate) fn softmax_raw(logits: &[f64], tau: f64) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| ((z - m) / tau).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
    out
}

/// `softmax(logits / tau)` for a temperature `tau > 0`.
///
/// The argmax of the output equals the argmax of the logits for every `tau`
/// (ties broken by the lowest index).
pub fn softmax_t(logits: &[f64], tau: f64) -> Result<ProbVector, NumError> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(NumError::InvalidArgument(format!(
            "temperature must be positive and finite, got {tau}"
        )));
    }
    if logits.len() < 2 {
        return Err(NumError::InvalidArgument(
            "softmax needs at least 2 logits".into(),
        ));
    }
    if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
        return Err(NumError::InvalidArgument(format!(
            "logit {i} is not finite"
        )));
    }
    Ok(ProbVector {
        probs: softmax_raw(logits, tau),
    })
}

/// `-log p[y]`, with the probability clamped to `[1e-12, 1 - 1e-12]`.
pub fn cross_entropy(p: &ProbVector, y: usize) -> Result<f64, NumError> {
    if y >= p.classes() {
        return Err(NumError::InvalidArgument(format!(
            "class index {y} out of range for {} classes",
            p.classes()
        )));
    }
    Ok(-p.get(y).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln())
}

/// Binary cross-entropy `-g log f - (1-g) log(1-f)` between a prediction and
/// a gradient-stopped target.
///
/// The prediction is clamped to `[1e-6, 1 - 1e-6]` before the logs. Gradients
/// flow only through `pred`, never through `target`.
pub fn bce_stopgrad(pred: f64, target: StopGradScalar) -> Result<f64, NumError> {
    if !(0.0..=1.0).contains(&pred) || !pred.is_finite() {
        return Err(NumError::InvalidArgument(format!(
            "BCE prediction must lie in [0, 1], got {pred}"
        )));
    }
    let g = target.value;
    if !(0.0..=1.0).contains(&g) || !g.is_finite() {
        return Err(NumError::InvalidArgument(format!(
            "BCE target must lie in [0, 1], got {g}"
        )));
    }
    let f = pred.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    Ok(-g * f.ln() - (1.0 - g) * (1.0 - f).ln())
}

/// `KL(p || q) = sum p[i] log(p[i] / q[i])`, with both log arguments clamped
/// at `1e-12`. Zero iff `p = q` up to clamping.
pub fn kl_divergence(p: &ProbVector, q: &ProbVector) -> Result<f64, NumError> {
    if p.classes() != q.classes() {
        return Err(NumError::InvalidArgument(format!(
            "KL length mismatch: {} vs {}",
            p.classes(),
            q.classes()
        )));
    }
    let mut acc = 0.0;
    for (&pi, &qi) in p.probs().iter().zip(q.probs()) {
        let pc = pi.max(PROB_CLAMP);
        let qc = qi.max(PROB_CLAMP);
        acc += pi * (pc / qc).ln();
    }
    Ok(acc.max(0.0))
}
