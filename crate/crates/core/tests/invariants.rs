//! Property tests of the confidence, mixture, fusion and steering maths.

mod common;

use dfka::amalgam::{confidence_weights, mixture_target, AmalgamNet, Enrichment, Fusion};
use dfka::generator::{restrict, steered_step, Sampling, SteerConfig};
use dfka::models::Token;
use dfka::ood::GaussianStats;
use dfka::tensor::{Rng, Tape, Tensor};
use nalgebra::DMatrix;
use proptest::prelude::*;

use common::{explicit_md, random_spd, tiny_classifier, tiny_lm, MAX_LEN, VOCAB};

fn vec_in(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, d)
}

/// Random rotation from the QR factor of a Gaussian matrix.
fn rotation(rng: &mut Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_vec(d, d, rng.normal_vec(d * d, 1.0));
    a.qr().q()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn md_matches_the_explicit_inverse(seed in any::<u64>(), d in 1usize..=4) {
        let mut rng = Rng::new(seed);
        let cov = random_spd(&mut rng, d);
        let mu = rng.normal_vec(d, 1.0);
        let h = rng.normal_vec(d, 2.0);
        let stats = GaussianStats::from_parts(vec![mu.clone()], cov.clone(), vec![0.0; d], DMatrix::identity(d, d)).unwrap();
        let want = explicit_md(&cov, &mu, &h);
        prop_assert!((stats.md(&h, 0).unwrap() - want).abs() <= 1e-8 * want.abs().max(1.0));
    }

    #[test]
    fn rmd_is_class_minus_background(seed in any::<u64>(), d in 1usize..=4) {
        let mut rng = Rng::new(seed);
        let cov = random_spd(&mut rng, d);
        let bg = random_spd(&mut rng, d);
        let stats = GaussianStats::from_parts(vec![rng.normal_vec(d, 1.0), rng.normal_vec(d, 1.0)], cov, rng.normal_vec(d, 1.0), bg).unwrap();
        let h = rng.normal_vec(d, 2.0);
        for y in 0..2 {
            prop_assert_eq!(stats.rmd(&h, y).unwrap(), stats.md(&h, y).unwrap() - stats.md_background(&h).unwrap());
        }
    }

    #[test]
    fn rmd_vanishes_when_background_equals_the_class(seed in any::<u64>(), d in 1usize..=4) {
        let mut rng = Rng::new(seed);
        let cov = random_spd(&mut rng, d);
        let mu = rng.normal_vec(d, 1.0);
        let stats = GaussianStats::from_parts(vec![mu.clone()], cov.clone(), mu, cov).unwrap();
        prop_assert!(stats.rmd(&rng.normal_vec(d, 3.0), 0).unwrap().abs() < 1e-6);
    }

    #[test]
    fn md_is_invariant_under_rigid_motion(seed in any::<u64>(), d in 1usize..=4, shift in vec_in(4)) {
        let mut rng = Rng::new(seed);
        let cov = random_spd(&mut rng, d);
        let mu = rng.normal_vec(d, 1.0);
        let h = rng.normal_vec(d, 2.0);
        let r = rotation(&mut rng, d);
        let t = nalgebra::DVector::from_column_slice(&shift[..d]);
        let move_pt = |x: &[f64]| -> Vec<f64> { (&r * nalgebra::DVector::from_column_slice(x) + &t).iter().copied().collect() };
        let cov_r = &r * &cov * r.transpose();
        let a = GaussianStats::from_parts(vec![mu.clone()], cov.clone(), vec![0.0; d], DMatrix::identity(d, d)).unwrap();
        let b = GaussianStats::from_parts(vec![move_pt(&mu)], cov_r, vec![0.0; d], DMatrix::identity(d, d)).unwrap();
        let (x, y) = (a.md(&h, 0).unwrap(), b.md(&move_pt(&h), 0).unwrap());
        prop_assert!((x - y).abs() <= 1e-8 * x.max(1.0));
    }

    #[test]
    fn mixture_rows_are_distributions(seed in any::<u64>(), k in 1usize..=4, conf in vec_in(4)) {
        let mut rng = Rng::new(seed);
        let n = 2 * k;
        // teacher i puts mass only on its own two union labels
        let probs: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                let a = rng.uniform();
                let mut p = vec![0.0; n];
                p[2 * i] = a;
                p[2 * i + 1] = 1.0 - a;
                p
            })
            .collect();
        let w = confidence_weights(&conf[..k]);
        let t = mixture_target(&probs, &w).unwrap();
        prop_assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(t.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn fusion_ignores_teacher_order(seed in any::<u64>(), k in 2usize..=4, rows in 1usize..=3) {
        let spec = common::amalgam_spec(&vec![6; k], 1, Enrichment::Additive, Fusion::SelectiveTransformer, false);
        let net = AmalgamNet::init(spec, seed).unwrap();
        let mut rng = Rng::new(seed ^ 1);
        let zs: Vec<Tensor> = (0..k).map(|_| Tensor::matrix(rows, 8, rng.normal_vec(rows * 8, 1.0)).unwrap()).collect();
        let fuse = |order: &[usize]| {
            let mut tape = Tape::no_grad();
            let vars: Vec<_> = order.iter().map(|&i| tape.constant(zs[i].clone()).unwrap()).collect();
            let out = net.arch.st_amalg(&mut tape, &net.params, &vars).unwrap();
            tape.value(out).data().to_vec()
        };
        let base: Vec<usize> = (0..k).collect();
        let mut perm = base.clone();
        rng.shuffle(&mut perm);
        for (a, b) in fuse(&base).iter().zip(fuse(&perm)) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn steered_distribution_lives_on_the_top_candidates(seed in any::<u64>(), gamma in 0.0..6.0f64, m in 1usize..=VOCAB, len in 1usize..MAX_LEN - 1) {
        let lm = tiny_lm(seed);
        let teacher = tiny_classifier(2, 3, seed ^ 7);
        let mut rng = Rng::new(seed);
        let prefix: Vec<Token> = (0..len).map(|_| rng.below(VOCAB) as Token).collect();
        let cfg = SteerConfig { gamma, m, max_len: MAX_LEN, ..SteerConfig::default() };
        let step = steered_step(&lm, &teacher, &prefix, 1, &cfg).unwrap();
        prop_assert!((step.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (x, p) in step.probs.iter().enumerate() {
            if !step.candidates.contains(&x) {
                prop_assert_eq!(*p, 0.0);
            }
        }
        for s in [Sampling::TopK(2), Sampling::Nucleus(0.5)] {
            let r = restrict(&step.probs, s);
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn unsteered_distribution_is_the_renormalized_lm_head() {
    use dfka::generator::NextTokenModel;
    let lm = tiny_lm(3);
    let teacher = tiny_classifier(2, 2, 4);
    let prefix: Vec<Token> = vec![0, 5, 6];
    let cfg = SteerConfig { gamma: 0.0, m: 5, max_len: MAX_LEN, ..SteerConfig::default() };
    let step = steered_step(&lm, &teacher, &prefix, 0, &cfg).unwrap();
    let p = lm.next_token_probs(&prefix).unwrap();
    let mass: f64 = step.candidates.iter().map(|&x| p[x]).sum();
    for &x in &step.candidates {
        assert_eq!(step.probs[x], p[x] / mass);
    }
}
