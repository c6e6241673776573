//! Classification losses recorded on a [`Tape`] so they can be differentiated.
//!
//! All losses return the batch mean as a scalar node.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::numcore::{Tape, Var};

/// Weights for symmetric cross-entropy `α·CE + β·RCE`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Value substituted for `−log 0` in the reverse term.
    pub log_zero_clip: f64,
}

impl Default for SceConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            log_zero_clip: 4.0,
        }
    }
}

impl SceConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.alpha >= 0.0 && self.beta >= 0.0,
            "SCE weights must be non-negative (alpha={}, beta={})",
            self.alpha,
            self.beta
        );
        ensure!(self.alpha + self.beta > 0.0, "SCE needs alpha + beta > 0");
        ensure!(self.log_zero_clip > 0.0, "log-zero clip must be positive");
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogitNormConfig {
    pub tau: f64,
}

impl Default for LogitNormConfig {
    fn default() -> Self {
        Self { tau: 0.1 }
    }
}

impl LogitNormConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.tau > 0.0 && self.tau.is_finite(),
            "tau must be positive, got {}",
            self.tau
        );
        Ok(())
    }
}

fn check_labels(tape: &Tape, logits: Var, labels: &[usize]) -> Result<()> {
    let t = tape.value(logits);
    ensure!(t.is_matrix(), "logits must be n×C");
    ensure!(
        labels.len() == t.rows(),
        "{} labels for {} logit rows",
        labels.len(),
        t.rows()
    );
    let c = t.cols();
    if let Some(bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::contract(format!("label {bad} outside [0, {c})")));
    }
    Ok(())
}

/// Mean of `−log softmax(logits)[y]`.
pub fn ce(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    check_labels(tape, logits, labels)?;
    let ls = tape.log_softmax(logits);
    let picked = tape.gather(ls, labels)?;
    let m = tape.mean(picked);
    Ok(tape.scale(m, -1.0))
}

/// Cross-entropy on `l / (τ‖l‖)`, each row rescaled to norm `1/τ`.
pub fn logit_norm_ce(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    cfg: &LogitNormConfig,
) -> Result<Var> {
    cfg.validate()?;
    check_labels(tape, logits, labels)?;
    let norms = tape.row_norm(logits);
    if let Some(i) = tape.value(norms).data().iter().position(|n| *n <= 0.0) {
        return Err(Error::DegenerateInput(format!("logit row {i} has zero norm")));
    }
    let scaled_norms = tape.scale(norms, cfg.tau);
    let normalized = tape.div_rows(logits, scaled_norms)?;
    ce(tape, normalized, labels)
}

/// Mean reverse cross-entropy with one-hot targets: `A·(1 − p_y)`.
pub fn rce(tape: &mut Tape, logits: Var, labels: &[usize], log_zero_clip: f64) -> Result<Var> {
    check_labels(tape, logits, labels)?;
    let p = tape.softmax(logits);
    let py = tape.gather(p, labels)?;
    let m = tape.mean(py);
    let neg = tape.scale(m, -log_zero_clip);
    Ok(tape.add_scalar(neg, log_zero_clip))
}

/// `α·CE + β·RCE`.
pub fn sce(tape: &mut Tape, logits: Var, labels: &[usize], cfg: &SceConfig) -> Result<Var> {
    cfg.validate()?;
    let ce_term = ce(tape, logits, labels)?;
    let weighted_ce = tape.scale(ce_term, cfg.alpha);
    if cfg.beta == 0.0 {
        return Ok(weighted_ce);
    }
    let rce_term = rce(tape, logits, labels, cfg.log_zero_clip)?;
    let weighted_rce = tape.scale(rce_term, cfg.beta);
    tape.add(weighted_ce, weighted_rce)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    fn eval(rows: &[Vec<f64>], f: impl FnOnce(&mut Tape, Var) -> Result<Var>) -> Result<f64> {
        let mut tape = Tape::new();
        let l = tape.leaf(&Tensor::from_rows(rows).unwrap());
        let out = f(&mut tape, l)?;
        Ok(tape.value(out).data()[0])
    }

    #[test]
    fn ce_uniform_is_ln2() {
        let v = eval(&[vec![0.0, 0.0]], |t, l| ce(t, l, &[0])).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn ce_confident() {
        // scripted: log(1 + e^-20)
        let v = eval(&[vec![10.0, -10.0]], |t, l| ce(t, l, &[0])).unwrap();
        let oracle = (-20f64).exp().ln_1p();
        assert!((v - oracle).abs() < 1e-20);
        assert!((v - 2.06e-9).abs() < 1e-11);
    }

    #[test]
    fn ce_label_out_of_range() {
        let r = eval(&[vec![0.0, 0.0]], |t, l| ce(t, l, &[2]));
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn logit_norm_worked_value() {
        let cfg = LogitNormConfig { tau: 0.1 };
        let v = eval(&[vec![3.0, 4.0]], |t, l| logit_norm_ce(t, l, &[1], &cfg)).unwrap();
        let expect = (-2f64).exp().ln_1p();
        assert!((v - expect).abs() < 1e-12);
        assert!((v - 0.126928).abs() < 1e-6);
    }

    #[test]
    fn logit_norm_zero_row() {
        let cfg = LogitNormConfig::default();
        let r = eval(&[vec![1.0, 1.0], vec![0.0, 0.0]], |t, l| {
            logit_norm_ce(t, l, &[0, 1], &cfg)
        });
        assert!(matches!(r, Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn tau_zero_rejected() {
        let cfg = LogitNormConfig { tau: 0.0 };
        let r = eval(&[vec![1.0, 2.0]], |t, l| logit_norm_ce(t, l, &[0], &cfg));
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn sce_hand_value() {
        let cfg = SceConfig {
            alpha: 1.0,
            beta: 1.0,
            log_zero_clip: 4.0,
        };
        let v = eval(&[vec![0.0, 0.0]], |t, l| sce(t, l, &[0], &cfg)).unwrap();
        assert!((v - (std::f64::consts::LN_2 + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn sce_beta_zero_is_scaled_ce() {
        let cfg = SceConfig {
            alpha: 0.7,
            beta: 0.0,
            log_zero_clip: 4.0,
        };
        let rows = [vec![0.3, -1.2, 2.0], vec![1.0, 0.5, -0.5]];
        let s = eval(&rows, |t, l| sce(t, l, &[2, 0], &cfg)).unwrap();
        let c = eval(&rows, |t, l| ce(t, l, &[2, 0])).unwrap();
        assert_eq!(s, 0.7 * c);
    }

    #[test]
    fn rce_vanishes_when_confident() {
        let v = eval(&[vec![60.0, 0.0]], |t, l| rce(t, l, &[0], 4.0)).unwrap();
        assert!(v < 1e-20);
    }

    #[test]
    fn invalid_sce_config() {
        let bad = SceConfig {
            alpha: 0.0,
            beta: 0.0,
            log_zero_clip: 4.0,
        };
        assert!(bad.validate().is_err());
    }
}
