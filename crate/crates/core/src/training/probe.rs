use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, AdamState, Tensor};
use crate::training::metrics::{classification_metrics, Metrics};

/// Settings for linear-probe transfer training on a frozen encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Name of the labeled task to probe.
    pub task: String,
    /// Session-dropout rate applied to training-time forward passes.
    /// Evaluation always runs on the full session sequence.
    pub rho_tr: f64,
    pub epochs: usize,
    pub lr: f64,
    /// Fraction of training labels made available (few-shot setting).
    pub fraction: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            task: "experience".into(),
            rho_tr: 0.5,
            epochs: 200,
            lr: 0.05,
            fraction: 1.0,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rho_tr) {
            return Err(Error::Config(format!("rho_tr must be in [0, 1), got {}", self.rho_tr)));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config(format!(
                "fraction must be in (0, 1], got {}",
                self.fraction
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Linear classifier mapping representations to class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeParams {
    /// `[dim, classes]`
    pub weight: Tensor,
    /// `[1, classes]`
    pub bias: Tensor,
}

impl ProbeParams {
    pub fn zeros(dim: usize, classes: usize) -> Self {
        ProbeParams {
            weight: Tensor::zeros(vec![dim, classes]),
            bias: Tensor::zeros(vec![1, classes]),
        }
    }

    pub fn dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn classes(&self) -> usize {
        self.weight.cols()
    }

    /// `x [n, dim] -> logits [n, classes]`.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let (n, d) = (x.rows(), x.cols());
        if d != self.dim() {
            return Err(Error::Dimension {
                op: "probe_logits",
                detail: format!("features have width {d}, probe expects {}", self.dim()),
            });
        }
        let c = self.classes();
        let w = self.weight.data();
        let b = self.bias.data();
        let xd = x.data();
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            let row = &mut out[i * c..(i + 1) * c];
            row.copy_from_slice(b);
            for k in 0..d {
                let xv = xd[i * d + k];
                if xv != 0.0 {
                    for (j, slot) in row.iter_mut().enumerate() {
                        *slot += xv * w[k * c + j];
                    }
                }
            }
        }
        Tensor::matrix(n, c, out)
    }

    /// Argmax class per row; ties resolve to the lowest class index.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        let c = self.classes();
        Ok((0..logits.rows())
            .map(|i| {
                let row = logits.row_slice(i);
                let mut best = 0;
                for j in 1..c {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }

    pub fn evaluate(&self, x: &Tensor, y: &[usize]) -> Result<Metrics> {
        let pred = self.predict(x)?;
        classification_metrics(y, &pred, self.classes())
    }
}

/// Mean cross-entropy over the batch plus its closed-form gradients
/// (softmax minus one-hot, scaled by 1/n) with respect to the probe weight
/// and bias.
pub fn cross_entropy_grad(
    x: &Tensor,
    y: &[usize],
    params: &ProbeParams,
) -> Result<(f64, Tensor, Tensor)> {
    let n = x.rows();
    if n == 0 || y.len() != n {
        return Err(Error::Eval(format!(
            "features/labels mismatch: {n} rows vs {} labels",
            y.len()
        )));
    }
    let c = params.classes();
    if let Some(&bad) = y.iter().find(|&&label| label >= c) {
        return Err(Error::Eval(format!("label {bad} outside 0..{c}")));
    }
    let logits = params.logits(x)?;
    let mut loss = 0.0;
    // dlogits starts as softmax probabilities, then subtracts the one-hot.
    let mut dlogits = vec![0.0; n * c];
    for i in 0..n {
        let row = logits.row_slice(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &v in row {
            denom += (v - max).exp();
        }
        let log_denom = denom.ln();
        loss -= row[y[i]] - max - log_denom;
        for j in 0..c {
            dlogits[i * c + j] = (row[j] - max - log_denom).exp();
        }
        dlogits[i * c + y[i]] -= 1.0;
    }
    loss /= n as f64;
    let inv_n = 1.0 / n as f64;
    for g in &mut dlogits {
        *g *= inv_n;
    }

    let d = x.cols();
    let xd = x.data();
    let mut dw = vec![0.0; d * c];
    let mut db = vec![0.0; c];
    for i in 0..n {
        let grow = &dlogits[i * c..(i + 1) * c];
        for k in 0..d {
            let xv = xd[i * d + k];
            if xv != 0.0 {
                for (j, &g) in grow.iter().enumerate() {
                    dw[k * c + j] += xv * g;
                }
            }
        }
        for (j, &g) in grow.iter().enumerate() {
            db[j] += g;
        }
    }
    Ok((loss, Tensor::matrix(d, c, dw)?, Tensor::matrix(1, c, db)?))
}

/// Trains a linear probe with Adam on full-batch closed-form gradients.
///
/// `features_for_epoch(e)` supplies the `[n, dim]` feature matrix for epoch
/// `e`; returning a fresh dropout-augmented matrix each epoch implements
/// training-time session dropout, while a constant matrix gives plain
/// logistic regression. Row `i` must describe the same example every epoch.
pub fn train_probe<F>(
    mut features_for_epoch: F,
    labels: &[usize],
    classes: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeParams>
where
    F: FnMut(usize) -> Result<Tensor>,
{
    cfg.validate()?;
    if labels.is_empty() {
        return Err(Error::Eval("cannot train a probe on zero labels".into()));
    }
    if classes < 2 {
        return Err(Error::Eval(format!("need at least 2 classes, got {classes}")));
    }
    let first = features_for_epoch(0)?;
    if first.rows() != labels.len() {
        return Err(Error::Eval(format!(
            "feature rows {} != label count {}",
            first.rows(),
            labels.len()
        )));
    }
    let dim = first.cols();
    let mut params = ProbeParams::zeros(dim, classes);
    let mut adam = AdamState::new(
        AdamConfig { lr: cfg.lr, ..AdamConfig::default() },
        &[vec![dim, classes], vec![1, classes]],
    );
    let mut x = first;
    for epoch in 0..cfg.epochs {
        if epoch > 0 {
            x = features_for_epoch(epoch)?;
            if x.rows() != labels.len() || x.cols() != dim {
                return Err(Error::Eval(format!(
                    "epoch {epoch} features changed shape to {:?}",
                    x.shape()
                )));
            }
        }
        let (loss, dw, db) = cross_entropy_grad(&x, labels, &params)?;
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite probe loss at epoch {epoch}"
            )));
        }
        let ProbeParams { weight, bias } = &mut params;
        adam.step(&mut [("probe.weight", weight), ("probe.bias", bias)], &[dw, db])?;
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{central_diff, max_rel_err};
    use crate::seeding::rng_for;
    use rand::Rng;

    fn toy_cfg(epochs: usize, lr: f64) -> ProbeConfig {
        ProbeConfig { epochs, lr, ..ProbeConfig::default() }
    }

    #[test]
    fn closed_form_gradient_matches_finite_differences() {
        for seed in 0..5u64 {
            let mut rng = rng_for(seed, "probe-fd", &[]);
            let (n, d, c) = (5, 3, 4);
            let x = Tensor::matrix(
                n,
                d,
                (0..n * d).map(|_| rng.random_range(-1.5..1.5)).collect(),
            )
            .unwrap();
            let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
            let mut params = ProbeParams {
                weight: Tensor::matrix(
                    d,
                    c,
                    (0..d * c).map(|_| rng.random_range(-0.8..0.8)).collect(),
                )
                .unwrap(),
                bias: Tensor::matrix(
                    1,
                    c,
                    (0..c).map(|_| rng.random_range(-0.3..0.3)).collect(),
                )
                .unwrap(),
            };
            let (_, dw, db) = cross_entropy_grad(&x, &y, &params).unwrap();
            let analytic: Vec<f64> =
                dw.data().iter().chain(db.data()).copied().collect();

            let x0: Vec<f64> = params
                .weight
                .data()
                .iter()
                .chain(params.bias.data())
                .copied()
                .collect();
            let split = d * c;
            let mut f = |v: &[f64]| -> f64 {
                params.weight.data_mut().copy_from_slice(&v[..split]);
                params.bias.data_mut().copy_from_slice(&v[split..]);
                cross_entropy_grad(&x, &y, &params).unwrap().0
            };
            let numeric = central_diff(&mut f, &x0, 1e-6);
            let err = max_rel_err(&analytic, &numeric, 1e-10);
            assert!(err < 1e-6, "seed {seed}: max rel err {err}");
        }
    }

    #[test]
    fn separable_toy_set_reaches_full_train_accuracy() {
        // Two well-separated clusters in the plane.
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let mut rng = rng_for(3, "probe-sep", &[]);
        for i in 0..20 {
            let class = i % 2;
            let center = if class == 0 { (-2.0, -2.0) } else { (2.0, 2.0) };
            rows.push(center.0 + rng.random_range(-0.5..0.5));
            rows.push(center.1 + rng.random_range(-0.5..0.5));
            labels.push(class);
        }
        let x = Tensor::matrix(20, 2, rows).unwrap();
        let probe =
            train_probe(|_| Ok(x.clone()), &labels, 2, &toy_cfg(150, 0.1)).unwrap();
        let metrics = probe.evaluate(&x, &labels).unwrap();
        assert_eq!(metrics.accuracy, 1.0);
        assert_eq!(metrics.weighted_f1, 1.0);
    }

    #[test]
    fn probe_training_is_deterministic() {
        let x = Tensor::matrix(6, 3, (0..18).map(|i| (i as f64 * 0.37).sin()).collect())
            .unwrap();
        let y = vec![0, 1, 2, 0, 1, 2];
        let run = || train_probe(|_| Ok(x.clone()), &y, 3, &toy_cfg(40, 0.05)).unwrap();
        assert_eq!(run(), run());
    }

    #[test]
    fn every_epoch_requests_fresh_features() {
        let x = Tensor::matrix(4, 2, vec![0.1; 8]).unwrap();
        let y = vec![0, 1, 0, 1];
        let mut seen = Vec::new();
        train_probe(
            |e| {
                seen.push(e);
                Ok(x.clone())
            },
            &y,
            2,
            &toy_cfg(7, 0.01),
        )
        .unwrap();
        assert_eq!(seen, vec![0, 1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn ties_predict_the_lowest_class() {
        let probe = ProbeParams::zeros(2, 3);
        let x = Tensor::matrix(2, 2, vec![1.0, -1.0, 0.5, 0.5]).unwrap();
        assert_eq!(probe.predict(&x).unwrap(), vec![0, 0]);
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let mut cfg = ProbeConfig::default();
        cfg.rho_tr = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ProbeConfig::default();
        cfg.fraction = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ProbeConfig::default();
        cfg.lr = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let x = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
        let params = ProbeParams::zeros(2, 2);
        assert!(cross_entropy_grad(&x, &[0, 2], &params).is_err());
    }
}
