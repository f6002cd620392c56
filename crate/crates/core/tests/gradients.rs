mod common;

use common::*;
use dfka::amalgam::{train_student, AmalgamNet, Enrichment, Fusion};
use dfka::models::train::TrainConfig;
use dfka::tensor::Rng;

const TOL: f64 = 1e-4;

fn assert_close(name: &str, r: dfka::tensor::gradcheck::GradCheckReport) {
    assert!(r.checked > 0, "{name}: nothing checked");
    assert!(r.max_rel_err < TOL, "{name}: worst {:?}", r.worst);
}

#[test]
fn classifier_gradients_match_finite_differences() {
    assert_close("classifier", classifier_gradcheck(1));
}

#[test]
fn lm_gradients_match_finite_differences() {
    assert_close("lm", lm_gradcheck(2));
}

#[test]
fn joint_loss_gradients_cover_every_amalgamation_map() {
    assert_close("additive + st", student_gradcheck(Enrichment::Additive, Fusion::SelectiveTransformer, false, 0.65, 3));
    assert_close("multiplicative", student_gradcheck(Enrichment::Multiplicative, Fusion::SelectiveTransformer, false, 0.65, 4));
    assert_close("weighted linear", student_gradcheck(Enrichment::Additive, Fusion::WeightedLinear, false, 0.65, 5));
    assert_close("shared maps", student_gradcheck(Enrichment::Additive, Fusion::SelectiveTransformer, true, 0.65, 6));
}

#[test]
fn single_term_losses_have_exact_gradients() {
    assert_close("block loss only", student_gradcheck(Enrichment::Additive, Fusion::SelectiveTransformer, false, 1.0, 7));
    assert_close("output loss only", student_gradcheck(Enrichment::Additive, Fusion::SelectiveTransformer, false, 0.0, 8));
}

#[test]
fn teacher_parameters_stay_untouched_by_student_training() {
    let mut rng = Rng::new(9);
    let dims = [8, 8];
    let feats = synthetic_features(&mut rng, 12, &dims, 2);
    let mut teacher = tiny_classifier(2, 2, 10);
    teacher.freeze();
    let before = teacher.params.clone();
    let mut student = tiny_classifier(2, 4, 11);
    let mut net = AmalgamNet::init(amalgam_spec(&dims, 2, Enrichment::Additive, Fusion::SelectiveTransformer, false), 12).unwrap();
    let cfg = TrainConfig { epochs: 2, batch_size: 4, ..TrainConfig::default() };
    let (log, counts) = train_student(&mut student, Some(&mut net), &feats, 0.65, 0.75, &cfg, &mut rng).unwrap();
    assert_eq!(log.epoch_losses.len(), 2);
    assert_eq!(counts.amal, counts.out);
    for id in teacher.params.ids() {
        assert_eq!(teacher.params.value(id), before.value(id));
        assert!(teacher.params.grad(id).iter().all(|&g| g == 0.0));
    }
}
