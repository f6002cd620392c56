//! End-to-end runs on the tiny config, plus the teacher OOD premise on the
//! default task.

mod common;

use dfka::corpus::make_task;
use dfka::models::train::accuracy;
use dfka::pipeline::artifacts::{load_prepared, stage_evaluate, stage_fit_ood, stage_generate, stage_train_student, stage_train_teachers, RunDir};
use dfka::pipeline::{prepare_task, pretrain_trunks, run_method, run_seed, train_method, train_teachers, with_seed, ExperimentConfig, Method, Record};

use common::tiny_config;

#[test]
fn every_method_runs_and_reports() {
    let (_, p) = prepare_task(&tiny_config()).unwrap();
    let records = run_seed(&p, &Method::ALL).unwrap();
    for m in Method::ALL {
        let r = records.iter().find_map(|r| match r {
            Record::Method(x) if x.method == m => Some(x),
            _ => None,
        });
        let r = r.unwrap_or_else(|| panic!("no record for {m}"));
        assert!((0.0..=1.0).contains(&r.accuracy));
        assert_eq!(r.n_teachers, 2);
    }
    assert_eq!(records.iter().filter(|r| matches!(r, Record::Ood(_))).count(), 2);
    assert_eq!(records.iter().filter(|r| matches!(r, Record::Steering { .. })).count(), 2);
}

#[test]
fn student_training_never_reads_the_train_split() {
    let (data, p) = prepare_task(&tiny_config()).unwrap();
    let before = data.train.log().entries();
    assert!(before.iter().all(|who| who == "train_teachers"), "{before:?}");
    for m in Method::ALL {
        run_method(&p, m, p.cfg.amalgam.lambda).unwrap();
    }
    assert_eq!(data.train.log().entries(), before);
}

#[test]
fn a_seed_reproduces_bit_for_bit() {
    let cfg = with_seed(&tiny_config(), 5);
    let run = || {
        let (_, p) = prepare_task(&cfg).unwrap();
        let t = train_method(&p, Method::Stratanet, 0.65).unwrap();
        let bits: Vec<u64> = t.student.params.iter().flat_map(|(_, v)| v.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()).collect();
        (bits, t.log.epoch_losses.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), run_method(&p, Method::Stratanet, 0.65).unwrap())
    };
    assert_eq!(run(), run());
    let other = with_seed(&tiny_config(), 6);
    let (_, p) = prepare_task(&other).unwrap();
    let t = train_method(&p, Method::Stratanet, 0.65).unwrap();
    let bits: Vec<u64> = t.student.params.iter().flat_map(|(_, v)| v.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()).collect();
    assert_ne!(bits, run().0);
}

#[test]
fn stages_on_disk_match_the_in_memory_run() {
    let cfg = tiny_config();
    let tmp = tempfile::tempdir().unwrap();
    let dir = RunDir::new(tmp.path(), &cfg);
    stage_train_teachers(&cfg, &dir).unwrap();
    stage_generate(&cfg, &dir).unwrap();
    stage_fit_ood(&cfg, &dir).unwrap();
    let disk = load_prepared(&cfg, &dir).unwrap();
    let (_, mem) = prepare_task(&cfg).unwrap();
    assert_eq!(disk.transfer, mem.transfer);
    assert_eq!(serde_json::to_string(&disk.oods).unwrap(), serde_json::to_string(&mem.oods).unwrap());
    assert_eq!(disk.test, mem.test);
    for m in [Method::Stratanet, Method::VanillaKaR, Method::Ensemble] {
        let trained = stage_train_student(&cfg, &dir, m).unwrap();
        let in_memory = run_method(&mem, m, cfg.amalgam.lambda).unwrap();
        assert_eq!(trained, in_memory, "{m}");
        assert_eq!(stage_evaluate(&cfg, &dir, m).unwrap().accuracy, trained.accuracy, "{m}");
    }
}

#[test]
fn a_single_teacher_over_all_labels_runs() {
    let cfg = tiny_config().with_teachers(1).unwrap();
    assert_eq!(cfg.task.n_classes, 2);
    let (_, p) = prepare_task(&cfg).unwrap();
    for m in [Method::Stratanet, Method::StratanetNoSt, Method::Ensemble] {
        let r = run_method(&p, m, 0.65).unwrap();
        assert_eq!(r.n_teachers, 1);
        assert!((0.0..=1.0).contains(&r.accuracy));
    }
}

#[test]
fn teachers_are_near_chance_outside_their_classes() {
    let cfg = ExperimentConfig::default();
    let data = make_task(&cfg.task).unwrap();
    let teachers = train_teachers(&cfg, &data, &pretrain_trunks(&cfg).unwrap()).unwrap();
    for (model, map) in teachers.models.iter().zip(&teachers.maps) {
        let c = map.n_local();
        // outside union label y stands in for local class y mod c
        let outside: Vec<_> = data.test.iter().filter(|e| map.to_local(e.label).is_none()).map(|e| (e.tokens.clone(), e.label % c)).collect();
        let acc = accuracy(model, &outside).unwrap();
        assert!(acc <= 1.0 / c as f64 + 0.1, "teacher over {:?} scores {acc} outside its classes", map.union_of_local);
    }
}
