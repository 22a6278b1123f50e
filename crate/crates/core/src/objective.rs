//! Training losses: temperature-scaled cross-entropy and the CTC arm with
//! embedding dilation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{PromptTemplate, TinyLm};
use crate::nn::{Conv, Linear};
use crate::numerics::{Element, Graph, ParameterSet, Tensor, Var};
use crate::rng::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CeTemperature,
    Ctc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSpec {
    pub kind: LossKind,
    pub tau: f64,
    /// CTC only: rows per embedding row after dilation.
    pub dilation_factor: usize,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self { kind: LossKind::CeTemperature, tau: 0.8, dilation_factor: 2 }
    }
}

impl LossSpec {
    pub fn ctc() -> Self {
        Self { kind: LossKind::Ctc, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::param("tau", format!("must be positive, got {}", self.tau)));
        }
        if self.dilation_factor == 0 {
            return Err(Error::param("dilation_factor", "must be >= 1"));
        }
        Ok(())
    }

    /// The blank is appended after the vocabulary.
    pub fn ctc_blank_id(vocab_size: usize) -> usize {
        vocab_size
    }
}

/// Summed temperature-scaled cross-entropy over the rows of `logits`.
pub fn ce_temperature_loss<E: Element>(g: &mut Graph<E>, logits: Var, targets: &[usize], tau: E) -> Result<Var> {
    g.ce_temperature(logits, targets, tau)
}

/// Frames the CTC arm demands for a target of `len` symbols: one per symbol
/// plus a blank before, between and after them.
pub fn ctc_required_frames(len: usize) -> usize {
    2 * len + 1
}

/// CTC negative log-likelihood with the `2L + 1` frame requirement. The
/// underlying tape op accepts any feasible alignment length.
pub fn ctc_loss<E: Element>(g: &mut Graph<E>, frame_logits: Var, target: &[usize], blank: usize) -> Result<Var> {
    let frames = g.value(frame_logits).rows();
    let required = ctc_required_frames(target.len());
    if frames < required {
        return Err(Error::CtcLength { frames, target_len: target.len(), required });
    }
    g.ctc(frame_logits, target, blank)
}

/// Best-path decoding: per-frame argmax, merge repeats, drop blanks.
pub fn ctc_greedy_decode<E: Element>(frame_logits: &Tensor<E>, blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for r in 0..frame_logits.rows() {
        let row = frame_logits.row(r);
        let best = (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b });
        if Some(best) != prev && best != blank {
            out.push(best);
        }
        prev = Some(best);
    }
    out
}

/// Linear interpolation to `factor` times the rows, then a kernel-3 conv.
pub fn dilate_embeddings<E: Element>(
    g: &mut Graph<E>,
    ps: &ParameterSet<E>,
    conv: &Conv,
    e: Var,
    factor: usize,
) -> Result<Var> {
    let x = g.interp_rows(e, factor)?;
    conv.forward(g, ps, x)
}

/// Trainable parts of the CTC arm: the dilation conv (identity at
/// initialization) and a blank logit computed from the LM's final hidden
/// state next to its frozen vocabulary head.
#[derive(Clone, Debug)]
pub struct CtcArm<E> {
    pub params: ParameterSet<E>,
    pub conv: Conv,
    pub blank: Linear,
    pub factor: usize,
}

impl<E: Element> CtcArm<E> {
    pub fn new(dim: usize, factor: usize, seed: u64) -> Result<Self> {
        if factor == 0 {
            return Err(Error::param("dilation_factor", "must be >= 1"));
        }
        let mut rng = rng_for(seed, "ctc-arm");
        let mut ps = ParameterSet::new();
        let conv = Conv::new(&mut ps, "dilate", dim, dim, 3, 1, &mut rng)?;
        let w = ps.get_mut(conv.w).value.data_mut();
        w.iter_mut().for_each(|v| *v = E::zero());
        // Same-left padding puts the current row under the last tap.
        for i in 0..dim {
            w[2 * dim * dim + i * dim + i] = E::one();
        }
        ps.get_mut(conv.b).value.data_mut().iter_mut().for_each(|v| *v = E::zero());
        let blank = Linear::new(&mut ps, "blank", dim, 1, true, &mut rng)?;
        Ok(Self { params: ps, conv, blank, factor })
    }

    pub fn dilate(&self, g: &mut Graph<E>, e: Var) -> Result<Var> {
        dilate_embeddings(g, &self.params, &self.conv, e, self.factor)
    }

    /// Per-frame logits `[T' x (|V| + 1)]` read from the LM hidden states at
    /// the dilated rows of `P1 ++ dilate(E)`; the last column is the blank.
    pub fn frame_logits(&self, g: &mut Graph<E>, lm: &TinyLm<E>, template: &PromptTemplate, e: Var) -> Result<Var> {
        if g.value(e).cols() != lm.dim() {
            return Err(Error::shape("ctc arm", format!("embedding width {}, model width {}", g.value(e).cols(), lm.dim())));
        }
        let d = self.dilate(g, e)?;
        let frames = g.value(d).rows();
        let p1 = template.p1_ids(lm.vocab_size);
        let p1v = lm.embed_ids(g, &p1)?;
        let x = g.concat_rows(&[p1v, d])?;
        let h = lm.hidden(g, x)?;
        let hs = g.slice_rows(h, p1.len(), frames)?;
        let vocab = lm.head(g, hs)?;
        let blank = self.blank.forward(g, &self.params, hs)?;
        g.concat_cols(&[vocab, blank])
    }

    pub fn cast<F: Element>(&self) -> CtcArm<F> {
        CtcArm { params: self.params.cast(), conv: self.conv.clone(), blank: self.blank.clone(), factor: self.factor }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{build_lm, TinyLmConfig};
    use crate::numerics::gradcheck;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn logits(rows: usize, cols: usize, data: Vec<f64>) -> (Graph<f64>, Var) {
        let mut g = Graph::new();
        let v = g.input(Tensor::new(vec![rows, cols], data).unwrap(), true);
        (g, v)
    }

    fn value(g: &Graph<f64>, v: Var) -> f64 {
        g.value(v).data()[0]
    }

    fn log_softmax(row: &[f64]) -> Vec<f64> {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z = row.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
        row.iter().map(|v| v - z).collect()
    }

    #[test]
    fn ce_uniform_and_margin() {
        let (mut g, z) = logits(5, 71, vec![0.0; 5 * 71]);
        let l = ce_temperature_loss(&mut g, z, &[4, 5, 6, 7, 1], 0.8).unwrap();
        assert!((value(&g, l) - 5.0 * 71f64.ln()).abs() < 1e-10);

        let mut d = vec![0.0; 4];
        d[2] = 30.0;
        let (mut g, z) = logits(1, 4, d);
        let l = ce_temperature_loss(&mut g, z, &[2], 1.0).unwrap();
        assert!(value(&g, l) < 1e-9 && value(&g, l) >= 0.0);

        let (mut g, z) = logits(1, 2, vec![1.0, 0.0]);
        let l = ce_temperature_loss(&mut g, z, &[0], 0.8).unwrap();
        let expect = -(1.25f64.exp() / (1.25f64.exp() + 1.0)).ln();
        assert!((value(&g, l) - expect).abs() < 1e-14);

        let (mut g, z) = logits(1, 2, vec![1.0, 0.0]);
        assert!(ce_temperature_loss(&mut g, z, &[2], 0.8).is_err());
    }

    proptest! {
        #[test]
        fn ce_tau_one_is_cross_entropy_and_shift_invariant(
            data in prop::collection::vec(-5.0f64..5.0, 12),
            shift in -10.0f64..10.0,
            tau in 0.3f64..2.0,
        ) {
            let targets = [1usize, 3, 0];
            let (mut g, z) = logits(3, 4, data.clone());
            let l = ce_temperature_loss(&mut g, z, &targets, 1.0).unwrap();
            let reference: f64 = (0..3).map(|r| -log_softmax(&data[r * 4..r * 4 + 4])[targets[r]]).sum();
            prop_assert!((value(&g, l) - reference).abs() < 1e-6);

            let (mut g, z) = logits(3, 4, data.clone());
            let a = ce_temperature_loss(&mut g, z, &targets, tau).unwrap();
            let shifted: Vec<f64> = data.iter().enumerate().map(|(i, v)| v + shift * (i / 4) as f64).collect();
            let (mut h, y) = logits(3, 4, shifted);
            let b = ce_temperature_loss(&mut h, y, &targets, tau).unwrap();
            prop_assert!((value(&g, a) - value(&h, b)).abs() < 1e-6);
        }
    }

    #[test]
    fn ce_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = Tensor::new(vec![3, 5], (0..15).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let err = gradcheck::check(&[x], |g, v| ce_temperature_loss(g, v[0], &[0, 4, 2], 0.8)).unwrap();
            assert!(err < 1e-4, "{err}");
        }
    }

    /// Sum over every frame labelling that collapses to `target`.
    fn brute_force_ctc(logp: &[Vec<f64>], target: &[usize], blank: usize) -> f64 {
        let classes = logp[0].len();
        let frames = logp.len();
        let mut total = f64::NEG_INFINITY;
        let mut path = vec![0usize; frames];
        loop {
            let mut collapsed = Vec::new();
            let mut prev = None;
            for &k in &path {
                if Some(k) != prev && k != blank {
                    collapsed.push(k);
                }
                prev = Some(k);
            }
            if collapsed == target {
                let lp: f64 = path.iter().enumerate().map(|(t, &k)| logp[t][k]).sum();
                total = if total == f64::NEG_INFINITY { lp } else { total.max(lp) + (-(total - lp).abs()).exp().ln_1p() };
            }
            let mut i = 0;
            while i < frames {
                path[i] += 1;
                if path[i] < classes {
                    break;
                }
                path[i] = 0;
                i += 1;
            }
            if i == frames {
                break;
            }
        }
        -total
    }

    fn all_targets(alphabet: usize, max_len: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        let mut frontier = vec![vec![]];
        for _ in 0..max_len {
            let next: Vec<Vec<usize>> = frontier
                .iter()
                .flat_map(|p: &Vec<usize>| (0..alphabet).map(move |a| [p.clone(), vec![a]].concat()))
                .collect();
            out.extend(next.clone());
            frontier = next;
        }
        out
    }

    #[test]
    fn ctc_matches_path_enumeration_exhaustively() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut checked = 0;
        for alphabet in 1..=3 {
            let blank = alphabet;
            for frames in 1..=6 {
                for target in all_targets(alphabet, 2).into_iter().filter(|t| !t.is_empty()) {
                    let data: Vec<f64> = (0..frames * (alphabet + 1)).map(|_| rng.random_range(-2.0..2.0)).collect();
                    let logp: Vec<Vec<f64>> = data.chunks(alphabet + 1).map(log_softmax).collect();
                    let (mut g, z) = logits(frames, alphabet + 1, data);
                    let result = ctc_loss(&mut g, z, &target, blank);
                    if frames < ctc_required_frames(target.len()) {
                        assert!(matches!(result, Err(Error::CtcLength { .. })));
                        let raw = g.ctc(z, &target, blank);
                        let feasible = frames >= crate::numerics::kernels::ctc_min_frames(&target);
                        assert_eq!(raw.is_ok(), feasible);
                        if let Ok(l) = raw {
                            assert!((value(&g, l) - brute_force_ctc(&logp, &target, blank)).abs() < 1e-9);
                        }
                        continue;
                    }
                    let l = result.unwrap();
                    let oracle = brute_force_ctc(&logp, &target, blank);
                    assert!((value(&g, l) - oracle).abs() < 1e-9, "T'={frames} {target:?}: {} vs {oracle}", value(&g, l));
                    checked += 1;
                }
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn ctc_hand_examples() {
        // One frame, one symbol: a single path.
        let (mut g, z) = logits(1, 3, vec![5.0, -5.0, -5.0]);
        let l = g.ctc(z, &[0], 2).unwrap();
        let p0 = log_softmax(&[5.0, -5.0, -5.0])[0];
        assert!((value(&g, l) + p0).abs() < 1e-12);

        // Two frames, target "a": paths aa, a-, -a.
        let probs = [[0.5, 0.2, 0.3], [0.4, 0.1, 0.5]];
        let data: Vec<f64> = probs.iter().flatten().map(|p: &f64| p.ln()).collect();
        let (mut g, z) = logits(2, 3, data);
        let l = g.ctc(z, &[0], 2).unwrap();
        let expect = -(0.5 * 0.4 + 0.5 * 0.5 + 0.3 * 0.4f64).ln();
        assert!((value(&g, l) - expect).abs() < 1e-12);

        // One frame short of 2L + 1.
        let (mut g, z) = logits(4, 3, vec![0.0; 12]);
        assert!(matches!(ctc_loss(&mut g, z, &[0, 1], 2), Err(Error::CtcLength { frames: 4, required: 5, .. })));
    }

    proptest! {
        #[test]
        fn ctc_relabel_and_shift_invariant(data in prop::collection::vec(-3.0f64..3.0, 24), shift in -5.0f64..5.0) {
            // 6 frames over {a, b, c, blank}; swap a <-> c everywhere.
            let target = [0usize, 2];
            let (mut g, z) = logits(6, 4, data.clone());
            let l = ctc_loss(&mut g, z, &target, 3).unwrap();
            let base = value(&g, l);
            let swapped: Vec<f64> = data.chunks(4).flat_map(|r| [r[2], r[1], r[0], r[3]]).collect();
            let (mut h, y) = logits(6, 4, swapped);
            let l = ctc_loss(&mut h, y, &[2, 0], 3).unwrap();
            let relabeled = value(&h, l);
            prop_assert!((base - relabeled).abs() < 1e-9);
            let shifted: Vec<f64> = data.iter().map(|v| v + shift).collect();
            let (mut k, s) = logits(6, 4, shifted);
            let l = ctc_loss(&mut k, s, &target, 3).unwrap();
            prop_assert!((base - value(&k, l)).abs() < 1e-6);
        }
    }

    #[test]
    fn ctc_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x = Tensor::new(vec![6, 4], (0..24).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let err = gradcheck::check(&[x], |g, v| ctc_loss(g, v[0], &[1, 1], 3)).unwrap();
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn greedy_collapse() {
        let rows = [0usize, 0, 3, 1, 1, 3, 1, 2];
        let mut data = vec![0.0; rows.len() * 4];
        for (r, &k) in rows.iter().enumerate() {
            data[r * 4 + k] = 1.0;
        }
        assert_eq!(ctc_greedy_decode(&Tensor::new(vec![8, 4], data).unwrap(), 3), vec![0, 1, 1, 2]);
    }

    #[test]
    fn dilation_shapes_and_identity() {
        let arm = CtcArm::<f64>::new(4, 2, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = Tensor::new(vec![5, 4], (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let mut g = Graph::new();
        let v = g.input(e.clone(), false);
        let d = arm.dilate(&mut g, v).unwrap();
        assert_eq!(g.value(d).rows(), 10);
        // Identity conv leaves the interpolation visible: row 2r+1 is the
        // midpoint of rows r and r+1.
        for r in 0..4 {
            for c in 0..4 {
                let mid = 0.5 * (e.row(r)[c] + e.row(r + 1)[c]);
                assert!((g.value(d).row(2 * r + 1)[c] - mid).abs() < 1e-12);
            }
        }
        let one = CtcArm::<f64>::new(4, 1, 0).unwrap();
        let d = one.dilate(&mut g, v).unwrap();
        assert_eq!(g.value(d), &e);
        assert!(CtcArm::<f64>::new(4, 0, 0).is_err());
    }

    #[test]
    fn frame_logits_shape() {
        let cfg = TinyLmConfig { embed_dim: 8, layers: 1, heads: 2, ff_dim: 16, ..TinyLmConfig::default() };
        let t = PromptTemplate::default();
        let lm = build_lm::<f64>(&cfg, 10, t.reserved_tokens().len(), 0).unwrap();
        let arm = CtcArm::<f64>::new(8, 2, 0).unwrap();
        let mut g = Graph::new();
        let e = g.input(Tensor::zeros(&[6, 8]), true);
        let z = arm.frame_logits(&mut g, &lm, &t, e).unwrap();
        assert_eq!(g.value(z).shape(), &[12, 11]);
        assert_eq!(LossSpec::ctc_blank_id(10), 10);
        let l = ctc_loss(&mut g, z, &[4, 5, 4], 10).unwrap();
        assert!(value(&g, l).is_finite());
    }
}
