//! Reconstruction, localized, perceptual and adversarial objectives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, HairMask};
use crate::graph::{Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

pub const L1_EPS: f64 = 1e-8;

/// How a masked L1 sum is normalised.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum L1Convention {
    /// Divide by `3 · Σ mask + ε`.
    Mean,
    /// The plain masked sum.
    RawSum,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_adv: f64,
    pub lambda_p: f64,
    pub lambda_rec: f64,
    pub lambda_hair: f64,
    pub lambda_face: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_adv: 1.0, lambda_p: 1.0, lambda_rec: 1.0, lambda_hair: 1.0, lambda_face: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.named() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("lambda_adv", self.lambda_adv),
            ("lambda_p", self.lambda_p),
            ("lambda_rec", self.lambda_rec),
            ("lambda_hair", self.lambda_hair),
            ("lambda_face", self.lambda_face),
        ]
    }

    /// Only the hair term switched on.
    pub fn hair_only() -> Self {
        Self { lambda_adv: 0.0, lambda_p: 0.0, lambda_rec: 0.0, lambda_hair: 1.0, lambda_face: 0.0 }
    }
}

/// Unweighted loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub adv: f64,
    pub perceptual: f64,
    pub rec: f64,
    pub hair: f64,
    pub face: f64,
}

impl LossTerms {
    fn add_scaled(&mut self, o: &LossTerms, s: f64) {
        self.adv += s * o.adv;
        self.perceptual += s * o.perceptual;
        self.rec += s * o.rec;
        self.hair += s * o.hair;
        self.face += s * o.face;
    }

    pub fn mean(items: &[LossTerms]) -> LossTerms {
        let mut acc = LossTerms::default();
        let s = 1.0 / items.len().max(1) as f64;
        for t in items {
            acc.add_scaled(t, s);
        }
        acc
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub terms: LossTerms,
    pub total: f64,
}

impl LossReport {
    pub fn csv_header() -> &'static str {
        "step,adv,p,rec,hair,face,total"
    }

    pub fn csv_row(&self) -> String {
        let t = &self.terms;
        format!("{},{},{},{},{},{},{}", self.step, t.adv, t.perceptual, t.rec, t.hair, t.face, self.total)
    }
}

pub fn total_loss(terms: LossTerms, weights: &LossWeights, step: usize) -> LossReport {
    let total = weights.lambda_adv * terms.adv
        + weights.lambda_p * terms.perceptual
        + weights.lambda_rec * terms.rec
        + weights.lambda_hair * terms.hair
        + weights.lambda_face * terms.face;
    LossReport { step, terms, total }
}

fn check_same(a: &Frame, b: &Frame) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("frames {:?} and {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

fn normaliser(mask_sum: f64, convention: L1Convention) -> f64 {
    match convention {
        L1Convention::Mean => 1.0 / (3.0 * mask_sum + L1_EPS),
        L1Convention::RawSum => 1.0,
    }
}

/// `‖mask ⊗ (I_d − I_p)‖₁` under `convention`.
pub fn localized_l1(i_d: &Frame, i_p: &Frame, mask: &HairMask, convention: L1Convention) -> Result<f64> {
    check_same(i_d, i_p)?;
    if mask.dims() != i_d.dims() {
        return Err(Error::Shape(format!("mask {:?} vs frame {:?}", mask.dims(), i_d.dims())));
    }
    let mut s = 0.0;
    for (i, m) in mask.data().iter().enumerate() {
        let m = *m as f64;
        if !(0.0..=1.0).contains(&m) {
            return Err(Error::Validation(format!("mask value {m} outside [0, 1]")));
        }
        for c in 0..3 {
            s += m * (i_d.data()[3 * i + c] as f64 - i_p.data()[3 * i + c] as f64).abs();
        }
    }
    Ok(s * normaliser(mask.area(), convention))
}

/// Mean absolute difference over all pixels and channels.
pub fn reconstruction_l1(i_d: &Frame, i_p: &Frame) -> Result<f64> {
    check_same(i_d, i_p)?;
    let n = i_d.data().len() as f64;
    Ok(i_d.data().iter().zip(i_p.data()).map(|(a, b)| (*a as f64 - *b as f64).abs()).sum::<f64>() / n)
}

/// Graph form of [`localized_l1`]; `mask` is a `(1, H, W)` tensor.
pub fn localized_l1_var<T: Real>(g: &mut Graph<'_, T>, target: &Tensor<T>, pred: Var, mask: &Tensor<T>, convention: L1Convention) -> Var {
    let (c, h, w) = target.chw();
    let mut m3 = Vec::with_capacity(c * h * w);
    for _ in 0..c {
        m3.extend_from_slice(mask.data());
    }
    let mask_sum: f64 = mask.data().iter().map(|v| v.f64()).sum();
    let t = g.constant(target.clone());
    let d = g.sub(pred, t);
    let a = g.abs(d);
    let m = g.mul_const(a, Tensor::from_vec(&[c, h, w], m3));
    let s = g.sum(m);
    g.scale(s, T::of(normaliser(mask_sum, convention)))
}

/// Graph form of [`reconstruction_l1`].
pub fn reconstruction_l1_var<T: Real>(g: &mut Graph<'_, T>, target: &Tensor<T>, pred: Var) -> Var {
    let t = g.constant(target.clone());
    let d = g.sub(pred, t);
    let a = g.abs(d);
    g.mean(a)
}

/// `mean(relu(1 − real)) + mean(relu(1 + fake))`.
pub fn hinge_disc<T: Real>(g: &mut Graph<'_, T>, real_logits: Var, fake_logits: Var) -> Var {
    let r = g.scale(real_logits, T::of(-1.0));
    let r = g.offset(r, T::one());
    let r = g.relu(r);
    let r = g.mean(r);
    let f = g.offset(fake_logits, T::one());
    let f = g.relu(f);
    let f = g.mean(f);
    g.add(r, f)
}

/// `−mean(fake)`.
pub fn hinge_gen<T: Real>(g: &mut Graph<'_, T>, fake_logits: Var) -> Var {
    let m = g.mean(fake_logits);
    g.scale(m, T::of(-1.0))
}

/// A scalar whose gradient with respect to `x` is `grad`: lets a loss
/// computed on another graph join this one by the chain rule.
pub fn linear_surrogate<T: Real>(g: &mut Graph<'_, T>, x: Var, grad: Tensor<T>) -> Var {
    let m = g.mul_const(x, grad);
    g.sum(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::check::{numerical_grad, relative_error};
    use crate::params::ParamStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_frame(h: usize, w: usize, seed: u64) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Frame::from_fn(h, w, |_, _| [rng.gen(), rng.gen(), rng.gen()])
    }

    fn rand_mask(h: usize, w: usize, seed: u64) -> HairMask {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        HairMask::from_fn(h, w, |_, _| rng.gen())
    }

    #[test]
    fn localized_l1_examples() {
        let a = rand_frame(4, 4, 1);
        let m = rand_mask(4, 4, 2);
        assert_eq!(localized_l1(&a, &a, &m, L1Convention::Mean).unwrap(), 0.0);
        let b = rand_frame(4, 4, 3);
        assert_eq!(localized_l1(&a, &b, &HairMask::zeros(4, 4), L1Convention::Mean).unwrap(), 0.0);
        assert_eq!(localized_l1(&a, &b, &HairMask::zeros(4, 4), L1Convention::RawSum).unwrap(), 0.0);
        let ones = HairMask::from_fn(2, 2, |_, _| 1.0);
        let x = Frame::filled(2, 2, [0.25, 0.25, 0.25]);
        let y = Frame::filled(2, 2, [0.75, 0.75, 0.75]);
        let mean = localized_l1(&x, &y, &ones, L1Convention::Mean).unwrap();
        assert!((mean - 0.5).abs() < 1e-8);
        let raw = localized_l1(&x, &y, &ones, L1Convention::RawSum).unwrap();
        assert!((raw - 6.0).abs() < 1e-12);
    }

    #[test]
    fn localized_l1_validates_inputs() {
        let a = rand_frame(4, 4, 1);
        let bad = HairMask::from_fn(4, 4, |_, _| 1.5);
        assert!(matches!(localized_l1(&a, &a, &bad, L1Convention::Mean), Err(Error::Validation(_))));
        assert!(matches!(localized_l1(&a, &rand_frame(4, 5, 2), &rand_mask(4, 4, 3), L1Convention::Mean), Err(Error::Shape(_))));
        assert!(matches!(localized_l1(&a, &a, &rand_mask(3, 4, 3), L1Convention::Mean), Err(Error::Shape(_))));
    }

    #[test]
    fn reconstruction_l1_examples() {
        let z = Frame::filled(3, 5, [0.0; 3]);
        let o = Frame::filled(3, 5, [1.0; 3]);
        assert_eq!(reconstruction_l1(&z, &o).unwrap(), 1.0);
        assert_eq!(reconstruction_l1(&o, &o).unwrap(), 0.0);
        let a = rand_frame(6, 6, 4);
        let b = rand_frame(6, 6, 5);
        let ones = HairMask::from_fn(6, 6, |_, _| 1.0);
        let loc = localized_l1(&a, &b, &ones, L1Convention::Mean).unwrap();
        assert!((loc - reconstruction_l1(&a, &b).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn graph_losses_match_frame_losses() {
        let a = rand_frame(6, 6, 6);
        let b = rand_frame(6, 6, 7);
        let m = rand_mask(6, 6, 8);
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let p = g.constant(b.to_tensor());
        for conv in [L1Convention::Mean, L1Convention::RawSum] {
            let l = localized_l1_var(&mut g, &a.to_tensor(), p, &m.to_tensor(), conv);
            assert!((g.value(l).item() - localized_l1(&a, &b, &m, conv).unwrap()).abs() < 1e-9);
        }
        let r = reconstruction_l1_var(&mut g, &a.to_tensor(), p);
        assert!((g.value(r).item() - reconstruction_l1(&a, &b).unwrap()).abs() < 1e-9);
    }

    fn pred_grad_error(target: &Tensor<f64>, pred: &Tensor<f64>, f: impl Fn(&mut Graph<'_, f64>, &Tensor<f64>, Var) -> Var) -> f64 {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let p = g.input(pred.clone(), true);
        let l = f(&mut g, target, p);
        let analytic = g.backward(l).wrt(p).unwrap().clone();
        let numeric = numerical_grad(pred, 1e-6, |x| {
            let mut g = Graph::new(&store);
            let p = g.constant(x.clone());
            let l = f(&mut g, target, p);
            g.value(l).item()
        });
        relative_error(&analytic, &numeric, 1e-8)
    }

    #[test]
    fn l1_gradients_match_finite_differences() {
        let t = rand_frame(8, 8, 9).to_tensor::<f64>();
        let p = rand_frame(8, 8, 10).to_tensor::<f64>();
        let m = rand_mask(8, 8, 11).to_tensor::<f64>();
        for conv in [L1Convention::Mean, L1Convention::RawSum] {
            let e = pred_grad_error(&t, &p, |g, t, p| localized_l1_var(g, t, p, &m, conv));
            assert!(e <= 1e-4, "{e}");
        }
        let e = pred_grad_error(&t, &p, |g, t, p| reconstruction_l1_var(g, t, p));
        assert!(e <= 1e-4, "{e}");
    }

    #[test]
    fn hinge_examples() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let zero = g.constant(Tensor::zeros(&[1, 2, 2]));
        let d = hinge_disc(&mut g, zero, zero);
        let gl = hinge_gen(&mut g, zero);
        assert_eq!((g.value(d).item(), g.value(gl).item()), (2.0, 0.0));
        let real = g.constant(Tensor::from_vec(&[1, 2, 2], vec![1.0, 1.5, 3.0, 1.0]));
        let fake = g.constant(Tensor::from_vec(&[1, 2, 2], vec![-1.0, -2.0, -1.0, -7.0]));
        let d = hinge_disc(&mut g, real, fake);
        assert_eq!(g.value(d).item(), 0.0);
    }

    #[test]
    fn total_loss_examples() {
        let t = LossTerms { adv: 0.3, perceptual: 0.2, rec: 0.1, hair: 0.4, face: 0.5 };
        let r = total_loss(t, &LossWeights::default(), 7);
        assert!((r.total - 1.5).abs() < 1e-12);
        assert_eq!(r.step, 7);
        assert_eq!(total_loss(LossTerms::default(), &LossWeights::default(), 0).total, 0.0);
        let w = LossWeights { lambda_adv: 2.0, lambda_p: 0.0, lambda_rec: 0.0, lambda_hair: 0.0, lambda_face: 0.0 };
        let t = LossTerms { adv: 0.3, ..LossTerms::default() };
        assert!((total_loss(t, &w, 0).total - 0.6).abs() < 1e-12);
    }

    #[test]
    fn default_weights_are_all_one() {
        let w = LossWeights::default();
        assert!(w.named().iter().all(|&(_, v)| v == 1.0));
        assert!(w.validate().is_ok());
        let bad = LossWeights { lambda_face: -1.0, ..w };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let nan = LossWeights { lambda_p: f64::NAN, ..w };
        assert!(nan.validate().is_err());
    }

    #[test]
    fn report_csv_row_matches_header() {
        let r = total_loss(LossTerms { adv: 1.0, perceptual: 2.0, rec: 3.0, hair: 4.0, face: 5.0 }, &LossWeights::default(), 3);
        assert_eq!(LossReport::csv_header().split(',').count(), r.csv_row().split(',').count());
        assert_eq!(r.csv_row(), "3,1,2,3,4,5,15");
    }

    #[test]
    fn loss_terms_mean() {
        let a = LossTerms { adv: 1.0, perceptual: 2.0, rec: 3.0, hair: 4.0, face: 5.0 };
        let b = LossTerms::default();
        let m = LossTerms::mean(&[a, b]);
        assert_eq!(m, LossTerms { adv: 0.5, perceptual: 1.0, rec: 1.5, hair: 2.0, face: 2.5 });
    }

    #[test]
    fn surrogate_gradient_is_the_supplied_tensor() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]), true);
        let grad = Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]);
        let s = linear_surrogate(&mut g, x, grad.clone());
        assert_eq!(g.backward(s).wrt(x).unwrap(), &grad);
    }
}
