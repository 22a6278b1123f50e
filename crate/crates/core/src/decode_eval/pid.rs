//! Person identification from pooled logits.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adaptor::{build_adaptor, Adaptor};
use crate::error::{Error, Result};
use crate::lm::TinyLm;
use crate::nn::Linear;
use crate::numerics::{warmup_linear_decay, AdamW, Element, Graph, ParameterSet, Tensor, Var};
use crate::rng::rng_for;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PidConfig {
    /// Width of the hidden layer of the two-layer head.
    pub hidden: usize,
    pub test_fraction: f64,
    pub batch_size: usize,
    /// Train the adaptor with the head through the frozen LM. When false
    /// only the head is fitted, on pooled logits of the given adaptor.
    pub train_adaptor: bool,
    pub probe_epochs: usize,
    pub probe_lr: f64,
    pub e2e_epochs: usize,
    pub e2e_lr: f64,
    pub weight_decay: f64,
}

impl Default for PidConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            test_fraction: 0.2,
            batch_size: 16,
            train_adaptor: true,
            probe_epochs: 10,
            probe_lr: 1e-3,
            e2e_epochs: 30,
            e2e_lr: 1e-3,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PidItem {
    pub features: Tensor<f32>,
    pub speaker: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PidReport {
    pub n_speakers: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Head on pooled logits of the frozen LM.
    pub probe_accuracy: f64,
    /// Adaptor, pooling and head trained together without the LM.
    pub e2e_accuracy: f64,
    /// The probe trained and tested on randomly permuted labels.
    pub shuffled_accuracy: f64,
}

/// Time-mean of a logits sequence, `[1 x cols]`.
pub fn pid_pool<E: Element>(z: &Tensor<E>) -> Result<Tensor<E>> {
    let mut g = Graph::new();
    let v = g.input(z.clone(), false);
    let m = g.mean_rows(v)?;
    Ok(g.value(m).clone())
}

/// Pooled LM logits of the adaptor output with no prompt around it.
pub fn pooled_lm_logits(adaptor: &Adaptor<f32>, lm: &TinyLm<f32>, features: &Tensor<f32>) -> Result<Tensor<f32>> {
    let e = adaptor.embed(features, "")?;
    pid_pool(&lm.lm_forward(&e.embeddings)?)
}

struct Head {
    params: ParameterSet<f32>,
    l1: Linear,
    l2: Linear,
}

impl Head {
    fn new(input: usize, hidden: usize, classes: usize, seed: u64, label: &str) -> Result<Self> {
        let mut rng = rng_for(seed, label);
        let mut params = ParameterSet::new();
        let l1 = Linear::new(&mut params, "head1", input, hidden, true, &mut rng)?;
        let l2 = Linear::new(&mut params, "head2", hidden, classes, true, &mut rng)?;
        Ok(Self { params, l1, l2 })
    }

    fn forward(&self, g: &mut Graph<f32>, x: Var) -> Result<Var> {
        let h = self.l1.forward(g, &self.params, x)?;
        let h = g.gelu(h);
        self.l2.forward(g, &self.params, h)
    }
}

fn argmax(row: &[f32]) -> usize {
    (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b })
}

fn split_indices(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed, "pid-split"));
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let test = idx.split_off(n - n_test);
    (idx, test)
}

/// Trains the head on fixed vectors, standardized with training
/// statistics; returns test accuracy.
fn probe_accuracy(
    x: &[Vec<f32>],
    labels: &[usize],
    classes: usize,
    (train, test): (&[usize], &[usize]),
    cfg: &PidConfig,
    seed: u64,
) -> Result<f64> {
    let d = x[0].len();
    let n = train.len() as f32;
    let mean: Vec<f32> = (0..d).map(|j| train.iter().map(|&i| x[i][j]).sum::<f32>() / n).collect();
    let std: Vec<f32> = (0..d)
        .map(|j| (train.iter().map(|&i| (x[i][j] - mean[j]).powi(2)).sum::<f32>() / n).sqrt().max(1e-6))
        .collect();
    let z = |i: usize| -> Vec<f32> { (0..d).map(|j| (x[i][j] - mean[j]) / std[j]).collect() };
    let mut head = Head::new(d, cfg.hidden, classes, seed, "pid-probe")?;
    let opt = AdamW { weight_decay: cfg.weight_decay, ..AdamW::default() };
    let mut order = train.to_vec();
    let mut rng = rng_for(seed, "pid-probe-order");
    let total = cfg.probe_epochs * train.len().div_ceil(cfg.batch_size);
    let mut step = 0;
    for _ in 0..cfg.probe_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let rows: Vec<Vec<f32>> = batch.iter().map(|&i| z(i)).collect();
            let targets: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let xv = g.input(Tensor::from_rows(&rows)?, false);
            let logits = head.forward(&mut g, xv)?;
            let loss = g.ce_temperature(logits, &targets, 1.0)?;
            head.params.zero_grad();
            let grads = g.backward(loss)?;
            head.params.accumulate(&g, &grads, 1.0 / batch.len() as f32);
            opt.step(&mut head.params, warmup_linear_decay(step, total, cfg.probe_lr, 0.1, 0.1))?;
            step += 1;
        }
    }
    let rows: Vec<Vec<f32>> = test.iter().map(|&i| z(i)).collect();
    let mut g = Graph::new();
    let xv = g.input(Tensor::from_rows(&rows)?, false);
    let logits = head.forward(&mut g, xv)?;
    let correct = test.iter().enumerate().filter(|(r, &i)| argmax(g.value(logits).row(*r)) == labels[i]).count();
    Ok(correct as f64 / test.len() as f64)
}

/// Trains `adaptor` and a fresh head end to end on time-pooled outputs,
/// through `lm` when given (the LM itself stays fixed); returns test
/// accuracy.
#[allow(clippy::too_many_arguments)]
fn fit_classifier(
    mut adaptor: Adaptor<f32>,
    lm: Option<&TinyLm<f32>>,
    items: &[PidItem],
    labels: &[usize],
    classes: usize,
    (train, test): (&[usize], &[usize]),
    (epochs, lr): (usize, f64),
    cfg: &PidConfig,
    seed: u64,
    label: &str,
) -> Result<f64> {
    let width = lm.map_or(adaptor.config.output_dim, |m| m.vocab_size);
    let mut head = Head::new(width, cfg.hidden, classes, seed, label)?;
    let opt = AdamW { weight_decay: cfg.weight_decay, ..AdamW::default() };
    let mut order = train.to_vec();
    let mut rng = rng_for(seed, &format!("{label}-order"));
    let total = epochs * train.len().div_ceil(cfg.batch_size);
    let mut step = 0;
    let logits_of = |g: &mut Graph<f32>, adaptor: &Adaptor<f32>, head: &Head, i: usize| -> Result<Var> {
        let x = g.input(items[i].features.clone(), false);
        let mut e = adaptor.forward(g, x)?;
        if let Some(m) = lm {
            e = m.forward(g, e)?;
        }
        let p = g.mean_rows(e)?;
        head.forward(g, p)
    };
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            adaptor.params.zero_grad();
            head.params.zero_grad();
            let scale = 1.0 / batch.len() as f32;
            for &i in batch {
                let mut g = Graph::new();
                let logits = logits_of(&mut g, &adaptor, &head, i)?;
                let loss = g.ce_temperature(logits, &[labels[i]], 1.0)?;
                let grads = g.backward(loss)?;
                adaptor.params.accumulate(&g, &grads, scale);
                head.params.accumulate(&g, &grads, scale);
            }
            let lr = warmup_linear_decay(step, total, lr, 0.1, 0.1);
            opt.step(&mut adaptor.params, lr)?;
            opt.step(&mut head.params, lr)?;
            step += 1;
        }
    }
    let mut correct = 0;
    for &i in test {
        let mut g = Graph::new();
        let logits = logits_of(&mut g, &adaptor, &head, i)?;
        correct += usize::from(argmax(g.value(logits).data()) == labels[i]);
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Probe, end-to-end variant and shuffled-label control on one split.
pub fn train_pid_probe(
    adaptor: &Adaptor<f32>,
    lm: &TinyLm<f32>,
    items: &[PidItem],
    cfg: &PidConfig,
    seed: u64,
) -> Result<PidReport> {
    let classes = items.iter().map(|i| i.speaker + 1).max().unwrap_or(0);
    let distinct = {
        let mut s: Vec<usize> = items.iter().map(|i| i.speaker).collect();
        s.sort_unstable();
        s.dedup();
        s.len()
    };
    if distinct < 2 {
        return Err(Error::param("speakers", "person identification needs at least two speakers"));
    }
    if items.len() < 4 || cfg.batch_size == 0 || !(0.0..1.0).contains(&cfg.test_fraction) {
        return Err(Error::param("pid", "needs >= 4 items, batch_size >= 1 and test_fraction in (0, 1)"));
    }
    let (train, test) = split_indices(items.len(), cfg.test_fraction, seed);
    let split = (&train[..], &test[..]);
    let labels: Vec<usize> = items.iter().map(|i| i.speaker).collect();
    let mut shuffled = labels.clone();
    shuffled.shuffle(&mut rng_for(seed, "pid-shuffle"));
    let probe = |labels: &[usize]| -> Result<f64> {
        if cfg.train_adaptor {
            let budget = (cfg.probe_epochs, cfg.probe_lr);
            fit_classifier(adaptor.clone(), Some(lm), items, labels, classes, split, budget, cfg, seed, "pid-probe")
        } else {
            let pooled = items
                .iter()
                .map(|it| Ok(pooled_lm_logits(adaptor, lm, &it.features)?.into_data()))
                .collect::<Result<Vec<_>>>()?;
            probe_accuracy(&pooled, labels, classes, split, cfg, seed)
        }
    };
    let accuracy = probe(&labels)?;
    let chance = probe(&shuffled)?;
    let fresh = build_adaptor::<f32>(&adaptor.config, seed)?;
    let budget = (cfg.e2e_epochs, cfg.e2e_lr);
    let e2e = fit_classifier(fresh, None, items, &labels, classes, split, budget, cfg, seed, "pid-e2e")?;
    Ok(PidReport {
        n_speakers: distinct,
        n_train: train.len(),
        n_test: test.len(),
        probe_accuracy: accuracy,
        e2e_accuracy: e2e,
        shuffled_accuracy: chance,
    })
}
