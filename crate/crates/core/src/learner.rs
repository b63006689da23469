//! Linear softmax classifier trained on released features.
//!
//! Released labels are noisy and, after clipping, need not sum to one, so the
//! loss is the generalized KL divergence D(ȳ‖q) = Σ ȳ log(ȳ/q) − ȳ + q
//! against the softmax output q. Its gradient with respect to the logits is
//! q·Σȳ − ȳ.

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Floor applied to q inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// D(p‖q) for nonnegative p and positive q, with 0·log 0 = 0.
pub fn generalized_kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::domain("generalized KL needs equal lengths"));
    }
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi < 0.0 || pi.is_nan() {
            return Err(Error::domain(format!(
                "generalized KL needs nonnegative p, got {pi}; clip labels first"
            )));
        }
        total += kl_term(pi, qi);
    }
    Ok(total)
}

fn kl_term(p: f64, q: f64) -> f64 {
    if p == 0.0 {
        q
    } else {
        p * (p.ln() - q.max(PROB_FLOOR).ln()) - p + q
    }
}

/// Elementwise max(·, 0).
pub fn clip_labels(ybar: &Array2<f64>) -> Array2<f64> {
    ybar.mapv(|v| v.max(0.0))
}

/// Index of the largest entry per row, lowest index on ties.
pub fn argmax_rows(m: ArrayView2<f64>) -> Vec<usize> {
    m.outer_iter().map(argmax).collect()
}

fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn softmax_in_place(mut row: ndarray::ArrayViewMut1<f64>) {
    let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    row.mapv_inplace(|v| (v - max).exp());
    let sum = row.sum();
    row.mapv_inplace(|v| v / sum);
}

/// Weights k×p and bias k.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearModel {
    pub fn zeros(k: usize, p: usize) -> Self {
        Self {
            weights: Array2::zeros((k, p)),
            bias: Array1::zeros(k),
        }
    }

    pub fn classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn features(&self) -> usize {
        self.weights.ncols()
    }

    pub fn logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weights.t()) + &self.bias
    }

    pub fn probabilities(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = self.logits(x);
        z.outer_iter_mut().for_each(softmax_in_place);
        z
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<usize> {
        argmax_rows(self.logits(x).view())
    }

    /// Per-row generalized KL against `targets`.
    pub fn losses(&self, x: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<Vec<f64>> {
        let q = self.probabilities(x);
        q.outer_iter()
            .zip(targets.outer_iter())
            .map(|(qi, ti)| {
                generalized_kl(
                    ti.as_slice().expect("contiguous row"),
                    qi.as_slice().expect("contiguous row"),
                )
            })
            .collect()
    }

    /// Mean loss over the rows and its gradient (weights, bias).
    pub fn loss_and_gradient(
        &self,
        x: ArrayView2<f64>,
        targets: ArrayView2<f64>,
    ) -> Result<(f64, Array2<f64>, Array1<f64>)> {
        let rows = x.nrows() as f64;
        let q = self.probabilities(x);
        let mut loss = 0.0;
        let mut g = Array2::zeros(q.raw_dim());
        for ((qi, ti), mut gi) in q
            .outer_iter()
            .zip(targets.outer_iter())
            .zip(g.outer_iter_mut())
        {
            let mass = ti.sum();
            for j in 0..qi.len() {
                loss += kl_term(ti[j], qi[j]);
                gi[j] = qi[j] * mass - ti[j];
            }
        }
        g /= rows;
        let gw = g.t().dot(&x);
        let gb = g.sum_axis(Axis(0));
        Ok((loss / rows, gw, gb))
    }
}

/// Adam optimizer settings and the step-decay schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs at which the rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 256,
            learning_rate: 1e-3,
            decay_epochs: vec![80, 120, 160],
            decay_factor: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn rate_at(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&e| epoch >= e).count();
        self.learning_rate * self.decay_factor.powi(decays as i32)
    }
}

/// Minibatch Adam on the mean generalized KL; returns the final-epoch model.
pub fn train(
    features: ArrayView2<f64>,
    labels: ArrayView2<f64>,
    cfg: &TrainConfig,
) -> Result<LinearModel> {
    let n = features.nrows();
    if n == 0 || labels.nrows() != n {
        return Err(Error::domain(
            "training data must be nonempty with matching rows",
        ));
    }
    if cfg.batch_size == 0 || cfg.batch_size > n {
        return Err(Error::domain(format!(
            "batch size {} must lie in [1, {n}]",
            cfg.batch_size
        )));
    }
    if labels.iter().any(|&v| v < 0.0) {
        return Err(Error::domain("labels must be clipped to be nonnegative"));
    }
    let (k, p) = (labels.ncols(), features.ncols());
    let mut model = LinearModel::zeros(k, p);
    let mut m_w = Array2::<f64>::zeros((k, p));
    let mut v_w = Array2::<f64>::zeros((k, p));
    let mut m_b = Array1::<f64>::zeros(k);
    let mut v_b = Array1::<f64>::zeros(k);
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0i32;
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut stream(cfg.seed, Purpose::Shuffle, epoch as u64));
        let lr = cfg.rate_at(epoch);
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let xb = features.select(Axis(0), idx);
            let yb = labels.select(Axis(0), idx);
            let (loss, gw, gb) = model.loss_and_gradient(xb.view(), yb.view())?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch,
                    msg: format!("loss is {loss}"),
                });
            }
            step += 1;
            let c1 = 1.0 - cfg.beta1.powi(step);
            let c2 = 1.0 - cfg.beta2.powi(step);
            adam_update(&mut model.weights, &mut m_w, &mut v_w, &gw, cfg, lr, c1, c2);
            adam_update(&mut model.bias, &mut m_b, &mut v_b, &gb, cfg, lr, c1, c2);
        }
    }
    Ok(model)
}

#[allow(clippy::too_many_arguments)]
fn adam_update<D: ndarray::Dimension>(
    param: &mut ndarray::Array<f64, D>,
    m: &mut ndarray::Array<f64, D>,
    v: &mut ndarray::Array<f64, D>,
    g: &ndarray::Array<f64, D>,
    cfg: &TrainConfig,
    lr: f64,
    c1: f64,
    c2: f64,
) {
    ndarray::Zip::from(param)
        .and(m)
        .and(v)
        .and(g)
        .for_each(|w, m, v, &g| {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.adam_eps);
        });
}

/// Accuracy in percent of argmax predictions.
pub fn evaluate(
    model: &LinearModel,
    features: ArrayView2<f64>,
    hard_labels: &[usize],
) -> Result<f64> {
    if features.nrows() != hard_labels.len() || hard_labels.is_empty() {
        return Err(Error::domain("evaluation needs one label per nonempty row"));
    }
    let pred = model.predict(features);
    let hits = pred.iter().zip(hard_labels).filter(|(a, b)| a == b).count();
    Ok(100.0 * hits as f64 / hard_labels.len() as f64)
}

/// Membership leakage of a trained model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MembershipReport {
    /// Member minus nonmember accuracy, percentage points.
    pub gap: f64,
    /// P(nonmember loss > member loss), ties counted one half.
    pub auc: f64,
}

/// GAP and loss-AUC, with losses taken against the clean one-hot labels.
pub fn membership_report(
    model: &LinearModel,
    member_x: ArrayView2<f64>,
    member_y: ArrayView2<f64>,
    nonmember_x: ArrayView2<f64>,
    nonmember_y: ArrayView2<f64>,
) -> Result<MembershipReport> {
    if member_x.nrows() == 0 || nonmember_x.nrows() == 0 {
        return Err(Error::domain("membership sets must be nonempty"));
    }
    let acc_in = evaluate(model, member_x, &argmax_rows(member_y))?;
    let acc_out = evaluate(model, nonmember_x, &argmax_rows(nonmember_y))?;
    let loss_in = model.losses(member_x, member_y)?;
    let loss_out = model.losses(nonmember_x, nonmember_y)?;
    Ok(MembershipReport {
        gap: acc_in - acc_out,
        auc: loss_auc(&loss_in, &loss_out)?,
    })
}

/// Mann–Whitney estimate of P(nonmember > member) with ties counted one half.
pub fn loss_auc(member: &[f64], nonmember: &[f64]) -> Result<f64> {
    if member.is_empty() || nonmember.is_empty() {
        return Err(Error::domain("AUC needs both loss sets nonempty"));
    }
    if member.iter().chain(nonmember).any(|v| v.is_nan()) {
        return Err(Error::domain("AUC losses must not be NaN"));
    }
    let mut all: Vec<(f64, bool)> = member
        .iter()
        .map(|&v| (v, false))
        .chain(nonmember.iter().map(|&v| (v, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // midranks, 1-based
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let (a, b) = (member.len() as f64, nonmember.len() as f64);
    Ok((rank_sum - b * (b + 1.0) / 2.0) / (a * b))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    k: usize,
    p: usize,
    bias: Vec<f64>,
    config: TrainConfig,
}

/// Writes `<stem>.dpfm` (weights) and `<stem>.json` (shape, bias, config).
pub fn write_checkpoint(model: &LinearModel, cfg: &TrainConfig, stem: &Path) -> Result<()> {
    crate::data::write_matrix_file(model.weights.view(), &stem.with_extension("dpfm"))?;
    let side = Sidecar {
        k: model.classes(),
        p: model.features(),
        bias: model.bias.to_vec(),
        config: cfg.clone(),
    };
    let f = std::fs::File::create(stem.with_extension("json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), &side)?;
    Ok(())
}

pub fn read_checkpoint(stem: &Path) -> Result<(LinearModel, TrainConfig)> {
    let weights = crate::data::read_matrix_file(&stem.with_extension("dpfm"))?;
    let path = stem.with_extension("json");
    let f = std::fs::File::open(&path)
        .map_err(|e| Error::ingestion(None, format!("cannot open {}: {e}", path.display())))?;
    let side: Sidecar = serde_json::from_reader(std::io::BufReader::new(f))?;
    if weights.dim() != (side.k, side.p) || side.bias.len() != side.k {
        return Err(Error::ingestion(None, "checkpoint shapes disagree"));
    }
    Ok((
        LinearModel {
            weights,
            bias: Array1::from(side.bias),
        },
        side.config,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn kl_examples() {
        assert_eq!(generalized_kl(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let v = generalized_kl(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((generalized_kl(&[0.0, 0.0], &[0.5, 0.5]).unwrap() - 1.0).abs() < 1e-15);
        assert!(generalized_kl(&[-0.1, 1.1], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn label_clipping() {
        let y = array![[0.9, -0.1, 0.2], [0.0, 0.5, 0.5]];
        assert_eq!(clip_labels(&y), array![[0.9, 0.0, 0.2], [0.0, 0.5, 0.5]]);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(
            argmax_rows(array![[1.0, 3.0, 3.0], [0.0, 0.0, 0.0]].view()),
            vec![1, 0]
        );
    }

    #[test]
    fn auc_examples() {
        assert!((loss_auc(&[0.1, 0.2], &[0.3, 0.15]).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(loss_auc(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.5);
        assert_eq!(loss_auc(&[0.0, 0.0], &[0.5, 0.1]).unwrap(), 1.0);
        assert!(loss_auc(&[], &[1.0]).is_err());
    }

    #[test]
    fn schedule_decays() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.rate_at(0), 1e-3);
        assert!((cfg.rate_at(80) - 1e-4).abs() < 1e-18);
        assert!((cfg.rate_at(199) - 1e-6).abs() < 1e-20);
    }

    #[test]
    fn zero_rate_keeps_initialization() {
        let x = array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]];
        let y = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert_eq!(
            train(x.view(), y.view(), &cfg).unwrap(),
            LinearModel::zeros(2, 2)
        );
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let model = LinearModel {
            weights: array![[1.0, 2.0, 3.0], [-1.0, 0.5, 0.25]],
            bias: array![0.1, -0.2],
        };
        let cfg = TrainConfig::default();
        let stem = dir.path().join("model");
        write_checkpoint(&model, &cfg, &stem).unwrap();
        let (back, back_cfg) = read_checkpoint(&stem).unwrap();
        assert_eq!(back, model);
        assert_eq!(back_cfg, cfg);
    }
}
