use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forward::{batch_pass, Sample, LOSS_EPS};
use super::model::{Dims, Gradients, ModelParams, Readout};
use super::EmbeddedGraph;
use crate::digest::mix_seed;
use crate::error::{Error, Result};
use crate::fcg::{Corpus, Label};
use crate::featurize::Vocabulary;
use crate::robustness::{apply_perturbation, generate_attack, AttackConfig, BenignPool};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionCadence {
    #[default]
    PerEpoch,
    PerStep,
}

/// Adversarial training: adversarial copies of training malware are added
/// to the training set, labeled malware, before the first epoch.
#[derive(Debug, Clone)]
pub struct AdversarialTraining {
    pub count: usize,
    pub attack: AttackConfig,
    pub pool: BenignPool,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub h1: usize,
    pub h2: usize,
    pub hg: usize,
    pub readout: Readout,
    pub seed: u64,
    pub nonneg_gcn: bool,
    pub nonneg_gclf: bool,
    pub adversarial_training: Option<AdversarialTraining>,
    pub projection_cadence: ProjectionCadence,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.008,
            batch_size: 32,
            patience: 3,
            max_epochs: 100,
            h1: Dims::DEFAULT_H1,
            h2: Dims::DEFAULT_H2,
            hg: Dims::DEFAULT_HG,
            readout: Readout::Avg,
            seed: 0,
            nonneg_gcn: true,
            nonneg_gclf: true,
            adversarial_training: None,
            projection_cadence: ProjectionCadence::PerEpoch,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || self.max_epochs == 0
            || self.h1 == 0
            || self.h2 == 0
            || self.hg == 0
        {
            return Err(Error::InvalidConfig("sizes must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStopping,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonnegAudit {
    pub nonneg_gcn: bool,
    pub nonneg_gclf: bool,
    /// Negative entries among flag-governed matrices; zero after training.
    pub governed_negatives: usize,
    pub min_gcn_weight: f64,
    pub min_gclf_weight: f64,
}

impl NonnegAudit {
    pub fn of(m: &ModelParams) -> Self {
        let min = |s: &[f64]| s.iter().copied().fold(f64::INFINITY, f64::min);
        let t = m.tensors();
        NonnegAudit {
            nonneg_gcn: m.nonneg_gcn,
            nonneg_gclf: m.nonneg_gclf,
            governed_negatives: m.governed_negatives(),
            min_gcn_weight: min(t[0]).min(min(t[1])),
            min_gclf_weight: min(t[2]).min(min(t[4])),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// 1-based index of the epoch whose weights were returned.
    pub best_epoch: usize,
    pub stop_reason: StopReason,
    pub adversarial_examples: usize,
    pub audit: NonnegAudit,
}

/// Patience-based early stopping on a loss that should decrease.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    waited: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            waited: 0,
        }
    }

    /// Records the loss of `epoch`; returns true when it is a new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.waited = 0;
            true
        } else {
            self.waited += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.waited >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Adam with bias correction, one moment pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.len()])
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((w, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..w.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Mean clamped cross-entropy and accuracy at threshold 0.5.
pub fn evaluate(m: &ModelParams, data: &[EmbeddedGraph]) -> Result<(f64, f64)> {
    let scored: Vec<Result<(f64, bool)>> = data
        .par_iter()
        .map(|e| {
            let y = e.target()?;
            let p = m.score(&e.adj, &e.x)?;
            let c = p.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
            let loss = -(y * c.ln() + (1.0 - y) * (1.0 - c).ln());
            Ok((loss, (p >= 0.5) == (y == 1.0)))
        })
        .collect();
    let mut loss = 0.0;
    let mut correct = 0usize;
    for s in scored {
        let (l, ok) = s?;
        loss += l;
        correct += ok as usize;
    }
    let n = data.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

fn adversarial_examples(train: &Corpus, adv: &AdversarialTraining, seed: u64) -> Result<Corpus> {
    let malware: Vec<_> = train
        .records
        .iter()
        .filter(|g| g.label == Some(Label::Malware))
        .collect();
    let overheads: Vec<f64> = adv
        .attack
        .overheads
        .iter()
        .copied()
        .filter(|&o| o > 0.0)
        .collect();
    if adv.count == 0 {
        return Ok(Corpus::default());
    }
    if malware.is_empty() || overheads.is_empty() {
        return Err(Error::InvalidConfig(
            "adversarial training needs training malware and a positive overhead".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[b"adversarial-training"]));
    let mut records = Vec::with_capacity(adv.count);
    for k in 0..adv.count {
        let g = malware[rng.gen_range(0..malware.len())];
        let overhead = overheads[rng.gen_range(0..overheads.len())];
        let sample_seed = mix_seed(seed, &[g.graph_id.as_bytes(), &(k as u64).to_le_bytes()]);
        let p = generate_attack(g, &adv.pool, overhead, &adv.attack, sample_seed)?;
        let mut out = apply_perturbation(g, &p)?;
        out.graph_id = format!("{}#adv{k}", g.graph_id);
        out.label = Some(Label::Malware);
        records.push(out);
    }
    Ok(Corpus::new(records))
}

/// Trains with Adam and early stopping on validation loss; returns the best
/// epoch's weights, projected onto the non-negative constraints.
pub fn train(
    train: &Corpus,
    val: &Corpus,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidCorpus(
            "training and validation corpora must be non-empty".into(),
        ));
    }
    train.require_labeled()?;
    val.require_labeled()?;
    if val.count_label(Label::Malware) == 0 || val.count_label(Label::Benign) == 0 {
        return Err(Error::InvalidCorpus(
            "validation corpus needs both labels".into(),
        ));
    }
    let train = train.normalized()?;
    let val = val.normalized()?;

    let mut train_graphs = EmbeddedGraph::embed_corpus(&train, vocab)?;
    let mut adversarial = 0;
    if let Some(adv) = &cfg.adversarial_training {
        let extra = adversarial_examples(&train, adv, cfg.seed)?;
        adversarial = extra.len();
        train_graphs.extend(EmbeddedGraph::embed_corpus(&extra, vocab)?);
    }
    let val_graphs = EmbeddedGraph::embed_corpus(&val, vocab)?;
    let targets: Vec<f64> = train_graphs
        .iter()
        .map(EmbeddedGraph::target)
        .collect::<Result<_>>()?;

    let dims = Dims {
        d: vocab.dim(),
        h1: cfg.h1,
        h2: cfg.h2,
        hg: cfg.hg,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params =
        ModelParams::init(dims, cfg.nonneg_gcn, cfg.nonneg_gclf, cfg.readout, &mut rng);
    let mut adam = Adam::new(cfg.learning_rate, &params);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = params.clone();
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    let mut order: Vec<usize> = (0..train_graphs.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Sample<'_, _>> = idx
                .iter()
                .map(|&i| Sample {
                    adj: &train_graphs[i].adj,
                    x: &train_graphs[i].x,
                    label: targets[i],
                })
                .collect();
            let (loss, grads, probs) = batch_pass(&params, &batch)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b + 1,
                });
            }
            loss_sum += loss * idx.len() as f64;
            correct += probs
                .iter()
                .zip(idx)
                .filter(|(&p, &i)| (p >= 0.5) == (targets[i] == 1.0))
                .count();
            adam.step(&mut params, &grads);
            if cfg.projection_cadence == ProjectionCadence::PerStep {
                params.project_in_place();
            }
        }
        params.project_in_place();

        let (val_loss, val_accuracy) = evaluate(&params, &val_graphs)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }
        let n = train_graphs.len() as f64;
        epochs.push(EpochStats {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_loss,
            val_accuracy,
        });
        if stopper.observe(epoch, val_loss) {
            best = params.clone();
        }
        if stopper.should_stop() {
            stop_reason = StopReason::EarlyStopping;
            break;
        }
    }

    best.project_in_place();
    let report = TrainReport {
        epochs,
        best_epoch: stopper.best_epoch(),
        stop_reason,
        adversarial_examples: adversarial,
        audit: NonnegAudit::of(&best),
    };
    Ok((best, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_returns_best_epoch() {
        let mut s = EarlyStopping::new(3);
        let mut stopped_at = None;
        for (i, loss) in [0.50, 0.40, 0.41, 0.42, 0.43, 0.10].into_iter().enumerate() {
            s.observe(i + 1, loss);
            if s.should_stop() {
                stopped_at = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped_at, Some(5));
        assert_eq!(s.best_epoch(), 2);
    }

    #[test]
    fn equal_loss_is_not_an_improvement() {
        let mut s = EarlyStopping::new(1);
        assert!(s.observe(1, 0.3));
        assert!(!s.observe(2, 0.3));
        assert!(s.should_stop());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut m = ModelParams::zeros(Dims {
            d: 1,
            h1: 1,
            h2: 1,
            hg: 1,
        });
        let mut g = Gradients::zeros(m.dims);
        g.b_out = 2.0;
        g.w_gcn1[[0, 0]] = -0.5;
        let mut adam = Adam::new(0.01, &m);
        adam.step(&mut m, &g);
        assert!((m.b_out + 0.01).abs() < 1e-9);
        assert!((m.w_gcn1[[0, 0]] - 0.01).abs() < 1e-9);
        assert_eq!(m.w_gcn2[[0, 0]], 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
