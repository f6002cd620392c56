//! Acceptance run: one PASS/FAIL line per criterion at its stated
//! tolerance, followed by the numbers behind it.
//!
//! Exits 0 after reporting, so that red criteria stay visible without
//! breaking the workspace test run; pass `--strict` to exit 1 on any FAIL.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use dfka::amalgam::{build_features, AmalgamNet, Enrichment, Fusion, OutputWeighting};
use dfka::corpus::TaskData;
use dfka::generator::{steered_step, NextTokenModel, SteerConfig};
use dfka::models::Token;
use dfka::ood::{ConfidenceKind, GaussianStats};
use dfka::pipeline::{
    heterogeneous, ood_auroc, prepare_task, run_method, steering_probe, teacher_accuracies, train_method, with_seed, ExperimentConfig, Method,
    MethodResult, OodAuroc, Prepared, Record, RunReport,
};
use dfka::tensor::{Rng, Tape, Tensor};

use common::{classifier_gradcheck, explicit_md, lm_gradcheck, random_spd, student_gradcheck};

const SEEDS: [u64; 3] = [0, 1, 2];
const STEER_PROBE_SAMPLES: usize = 60;

struct Verdict {
    id: u32,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn report(v: &Verdict) {
    println!("[{}] criterion {:>2}: {}  ({})", if v.pass { "PASS" } else { "FAIL" }, v.id, v.title, v.detail);
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Everything measured once per benchmark seed.
struct SeedRun {
    data: TaskData,
    prepared: Prepared,
    results: Vec<MethodResult>,
    lambda_sweep: Vec<(f64, f64)>,
    best_teacher: f64,
    auroc: Vec<OodAuroc>,
}

impl SeedRun {
    fn accuracy(&self, m: Method) -> f64 {
        self.results.iter().find(|r| r.method == m).map(|r| r.accuracy).expect("method ran")
    }
}

fn run_benchmark_seed(cfg: &ExperimentConfig, seed: u64) -> SeedRun {
    let cfg = with_seed(cfg, seed);
    let (data, prepared) = prepare_task(&cfg).expect("prepare");
    let results: Vec<MethodResult> = Method::ALL.iter().map(|&m| run_method(&prepared, m, cfg.amalgam.lambda).expect("method")).collect();
    let lambda_sweep = [0.0, 1.0].iter().map(|&l| (l, run_method(&prepared, Method::Stratanet, l).expect("sweep").accuracy)).collect();
    let best_teacher = teacher_accuracies(&prepared.teachers, &prepared.test).expect("teachers").into_iter().fold(0.0, f64::max);
    let auroc = ood_auroc(&prepared).expect("auroc");
    SeedRun { data, prepared, results, lambda_sweep, best_teacher, auroc }
}

fn gradient_fidelity() -> Verdict {
    let t = Instant::now();
    let reports = [
        ("additive+st", student_gradcheck(Enrichment::Additive, Fusion::SelectiveTransformer, false, 0.65, 3)),
        ("multiplicative", student_gradcheck(Enrichment::Multiplicative, Fusion::SelectiveTransformer, false, 0.65, 4)),
        ("weighted-linear", student_gradcheck(Enrichment::Additive, Fusion::WeightedLinear, false, 0.65, 5)),
        ("shared-maps", student_gradcheck(Enrichment::Additive, Fusion::SelectiveTransformer, true, 0.65, 6)),
        ("classifier", classifier_gradcheck(1)),
        ("lm", lm_gradcheck(2)),
    ];
    let elapsed = t.elapsed();
    let worst = reports.iter().map(|(_, r)| r.max_rel_err).fold(0.0, f64::max);
    let checked: usize = reports.iter().map(|(_, r)| r.checked).sum();
    let per: Vec<String> = reports.iter().map(|(n, r)| format!("{n} {:.1e}", r.max_rel_err)).collect();
    Verdict {
        id: 1,
        title: "gradient fidelity",
        pass: worst < 1e-4 && elapsed < Duration::from_secs(120) && reports.iter().all(|(_, r)| r.checked > 0),
        detail: format!("{checked} scalars, max rel err {worst:.2e} [{}], {:.1}s", per.join(", "), elapsed.as_secs_f64()),
    }
}

fn teacher_gradients_untouched(p: &Prepared) -> (bool, String) {
    let before: Vec<_> = p.teachers.models.iter().map(|m| m.params.clone()).collect();
    train_method(p, Method::Stratanet, p.cfg.amalgam.lambda).expect("train");
    let mut ok = true;
    for (m, b) in p.teachers.models.iter().zip(&before) {
        for id in m.params.ids() {
            ok &= m.params.value(id) == b.value(id) && m.params.grad(id).iter().all(|&g| g == 0.0);
        }
    }
    (ok, format!("teacher params unchanged with zero grads after student training: {ok}"))
}

fn mahalanobis_oracle() -> Verdict {
    let mut rng = Rng::new(2024);
    let (mut worst, mut exact) = (0.0f64, true);
    for case in 0..1000 {
        let d = 1 + case % 4;
        let cov = random_spd(&mut rng, d);
        let bg = random_spd(&mut rng, d);
        let mu = rng.normal_vec(d, 1.0);
        let stats = GaussianStats::from_parts(vec![mu.clone()], cov.clone(), rng.normal_vec(d, 1.0), bg).unwrap();
        let h = rng.normal_vec(d, 2.0);
        let md = stats.md(&h, 0).unwrap();
        worst = worst.max((md - explicit_md(&cov, &mu, &h)).abs());
        exact &= stats.rmd(&h, 0).unwrap() == md - stats.md_background(&h).unwrap();
    }
    Verdict {
        id: 2,
        title: "Mahalanobis oracle",
        pass: worst <= 1e-8 && exact,
        detail: format!("1000 cases d<=4, max |md - explicit| {worst:.2e}, rmd decomposition exact: {exact}"),
    }
}

fn rmd_degenerate() -> Verdict {
    let mut rng = Rng::new(77);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let d = 1 + case % 4;
        let cov = random_spd(&mut rng, d);
        let mu = rng.normal_vec(d, 1.0);
        let stats = GaussianStats::from_parts(vec![mu.clone()], cov.clone(), mu, cov).unwrap();
        worst = worst.max(stats.rmd(&rng.normal_vec(d, 3.0), 0).unwrap().abs());
    }
    Verdict { id: 3, title: "RMD degenerate case", pass: worst < 1e-6, detail: format!("1000 queries, max |rmd| {worst:.2e}") }
}

/// Whether gamma = 0 reproduces the renormalized top-m LM distribution
/// bit for bit on trained models.
fn unsteered_is_exact(p: &Prepared) -> bool {
    let cfg = SteerConfig { gamma: 0.0, ..p.cfg.steer.clone() };
    let mut rng = Rng::new(5);
    (0..20).all(|_| {
        let len = rng.range_inclusive(1, 6);
        let prefix: Vec<Token> = (0..len).map(|_| rng.below(p.cfg.task.vocab_size) as Token).collect();
        let step = steered_step(&p.lm, &p.teachers.models[0], &prefix, 0, &cfg).unwrap();
        let lm = p.lm.next_token_probs(&prefix).unwrap();
        let mass: f64 = step.candidates.iter().map(|&x| lm[x]).sum();
        step.probs.iter().enumerate().all(|(x, &q)| if step.candidates.contains(&x) { q == lm[x] / mass } else { q == 0.0 })
    })
}

fn steering_efficacy(runs: &[SeedRun]) -> Verdict {
    let mut wins = 0;
    let mut parts = Vec::new();
    for r in runs {
        let on = mean(&steering_probe(&r.prepared, 2.0, STEER_PROBE_SAMPLES).unwrap());
        let off = mean(&steering_probe(&r.prepared, 0.0, STEER_PROBE_SAMPLES).unwrap());
        if on - off >= 0.20 {
            wins += 1;
        }
        parts.push(format!("seed {}: {:.3} vs {:.3}", r.prepared.cfg.seed, on, off));
    }
    let exact = runs.iter().all(|r| unsteered_is_exact(&r.prepared));
    Verdict {
        id: 4,
        title: "steering efficacy",
        pass: wins * 2 > runs.len() && exact,
        detail: format!("target rate gamma=2 vs 0 [{}], {wins}/{} seeds >= +0.20, gamma=0 exact: {exact}", parts.join("; "), runs.len()),
    }
}

fn ood_ordering(runs: &[SeedRun]) -> Verdict {
    let mut wins = 0;
    let mut parts = Vec::new();
    for r in runs {
        let (rmd, md, msp) = (mean(&r.auroc.iter().map(|a| a.rmd).collect::<Vec<_>>()), mean(&r.auroc.iter().map(|a| a.md).collect::<Vec<_>>()), mean(&r.auroc.iter().map(|a| a.msp).collect::<Vec<_>>()));
        if rmd >= msp && rmd >= md {
            wins += 1;
        }
        parts.push(format!("seed {}: rmd {rmd:.3} md {md:.3} msp {msp:.3}", r.prepared.cfg.seed));
    }
    Verdict { id: 5, title: "OOD ordering", pass: wins >= 2, detail: format!("final-block AUROC over teachers [{}], {wins}/3 seeds", parts.join("; ")) }
}

fn end_to_end(runs: &[SeedRun], elapsed: Duration) -> Verdict {
    let m = |f: &dyn Fn(&SeedRun) -> f64| mean(&runs.iter().map(f).collect::<Vec<_>>());
    let s = m(&|r| r.accuracy(Method::Stratanet));
    let v = m(&|r| r.accuracy(Method::VanillaKaR));
    let e = m(&|r| r.accuracy(Method::Ensemble));
    let t = m(&|r| r.best_teacher);
    let gap = 0.03;
    let fast = elapsed < Duration::from_secs(15 * 60);
    Verdict {
        id: 6,
        title: "end-to-end ordering",
        pass: s - v >= gap && v - e >= gap && e - t >= gap && fast,
        detail: format!("3-seed means stratanet {s:.4} vanilla_ka_R {v:.4} ensemble {e:.4} best teacher {t:.4}, gaps need >= {gap}; run {:.0}s", elapsed.as_secs_f64()),
    }
}

fn ablation_ordering(runs: &[SeedRun]) -> Verdict {
    let m = |meth| mean(&runs.iter().map(|r| r.accuracy(meth)).collect::<Vec<_>>());
    let (s, mul, nost) = (m(Method::Stratanet), m(Method::StratanetMul), m(Method::StratanetNoSt));
    Verdict {
        id: 7,
        title: "ablation ordering",
        pass: s >= mul && s >= nost,
        detail: format!("3-seed means stratanet {s:.4} stratanet_mul {mul:.4} stratanet_noST {nost:.4}"),
    }
}

fn lambda_sweep(runs: &[SeedRun]) -> Verdict {
    let at = |l: f64| mean(&runs.iter().map(|r| r.lambda_sweep.iter().find(|(x, _)| *x == l).unwrap().1).collect::<Vec<_>>());
    let mid = mean(&runs.iter().map(|r| r.accuracy(Method::Stratanet)).collect::<Vec<_>>());
    let (zero, one) = (at(0.0), at(1.0));
    Verdict {
        id: 8,
        title: "lambda sweep",
        pass: mid >= zero && mid >= one,
        detail: format!("3-seed means lambda=0 {zero:.4} lambda=0.65 {mid:.4} lambda=1 {one:.4}"),
    }
}

fn heterogeneous_robustness(cfg: &ExperimentConfig) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for k in [3, 4] {
        let t = Instant::now();
        let outcome = heterogeneous(cfg, k).and_then(|kcfg| {
            let (_, p) = prepare_task(&kcfg)?;
            Ok((run_method(&p, Method::Stratanet, kcfg.amalgam.lambda)?.accuracy, run_method(&p, Method::Ensemble, kcfg.amalgam.lambda)?.accuracy))
        });
        match outcome {
            Ok((s, e)) => {
                pass &= s > e;
                parts.push(format!("K={k}: stratanet {s:.4} ensemble {e:.4} ({:.0}s)", t.elapsed().as_secs_f64()));
            }
            Err(err) => {
                pass = false;
                parts.push(format!("K={k}: failed: {err}"));
            }
        }
    }
    Verdict { id: 9, title: "heterogeneous robustness", pass, detail: format!("depths 4/6/8, widths 32/48, seed 0 [{}]", parts.join("; ")) }
}

fn permutation_gap() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let k = 2 + (seed as usize) % 3;
        let spec = common::amalgam_spec(&vec![6; k], 1, Enrichment::Additive, Fusion::SelectiveTransformer, false);
        let net = AmalgamNet::init(spec, seed).unwrap();
        let mut rng = Rng::new(seed + 100);
        let zs: Vec<Tensor> = (0..k).map(|_| Tensor::matrix(3, 8, rng.normal_vec(24, 1.0)).unwrap()).collect();
        let fuse = |order: &[usize]| {
            let mut tape = Tape::no_grad();
            let vars: Vec<_> = order.iter().map(|&i| tape.constant(zs[i].clone()).unwrap()).collect();
            let out = net.arch.st_amalg(&mut tape, &net.params, &vars).unwrap();
            tape.value(out).data().to_vec()
        };
        let base: Vec<usize> = (0..k).collect();
        let mut perm = base.clone();
        perm.reverse();
        for (a, b) in fuse(&base).iter().zip(fuse(&perm)) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

fn structural_invariants(runs: &[SeedRun], teachers_ok: (bool, String)) -> Verdict {
    let perm = permutation_gap();
    let p = &runs[0].prepared;
    let seqs: Vec<Vec<Token>> = p.transfer.train.iter().map(|s| s.tokens.clone()).collect();
    let feats = build_features(
        &seqs,
        &p.teachers.refs(),
        &p.teachers.partitions,
        &p.teachers.maps,
        Some((&p.oods, ConfidenceKind::Rmd)),
        OutputWeighting::Confidence,
        p.cfg.amalgam.tau,
    )
    .unwrap();
    let row_gap = feats.target.to_rows().iter().map(|r| (r.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    let clean = runs.iter().all(|r| r.data.train.log().entries().iter().all(|who| who == "train_teachers"));
    let bits = |r: &dfka::pipeline::TrainedStudent| -> Vec<u64> { r.student.params.iter().flat_map(|(_, v)| v.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()).collect() };
    let a = train_method(p, Method::Stratanet, p.cfg.amalgam.lambda).unwrap();
    let b = train_method(p, Method::Stratanet, p.cfg.amalgam.lambda).unwrap();
    let tiny = common::tiny_config();
    let rerun = || {
        let (_, q) = prepare_task(&tiny).unwrap();
        Record::Method(run_method(&q, Method::Stratanet, 0.65).unwrap())
    };
    let deterministic = bits(&a) == bits(&b) && rerun() == rerun();
    Verdict {
        id: 10,
        title: "structural invariants",
        pass: perm < 1e-6 && row_gap < 1e-6 && clean && deterministic && teachers_ok.0,
        detail: format!(
            "permutation gap {perm:.1e}, mixture row gap {row_gap:.1e} over {} rows, train split read only by teacher training: {clean}, bitwise rerun: {deterministic}; {}",
            feats.len(),
            teachers_ok.1
        ),
    }
}

fn main() -> ExitCode {
    let strict = std::env::args().any(|a| a == "--strict");
    // cargo passes libtest flags such as --list; only run for real invocations
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut verdicts = Vec::new();
    let mut gradients = gradient_fidelity();
    for v in [mahalanobis_oracle(), rmd_degenerate()] {
        report(&v);
        verdicts.push(v);
    }

    let cfg = ExperimentConfig::default();
    let t = Instant::now();
    let runs: Vec<SeedRun> = SEEDS.iter().map(|&s| run_benchmark_seed(&cfg, s)).collect();
    let elapsed = t.elapsed();
    let teachers_ok = teacher_gradients_untouched(&runs[0].prepared);
    gradients.pass &= teachers_ok.0;
    gradients.detail.push_str(&format!("; {}", teachers_ok.1));
    report(&gradients);
    verdicts.push(gradients);

    for v in [steering_efficacy(&runs), ood_ordering(&runs), end_to_end(&runs, elapsed), ablation_ordering(&runs), lambda_sweep(&runs)] {
        report(&v);
        verdicts.push(v);
    }
    for v in [heterogeneous_robustness(&cfg), structural_invariants(&runs, teachers_ok)] {
        report(&v);
        verdicts.push(v);
    }

    let mut all = RunReport::default();
    for r in &runs {
        all.records.extend(r.results.iter().cloned().map(Record::Method));
        all.records.extend(r.auroc.iter().cloned().map(Record::Ood));
    }
    println!("\nper-method means over seeds {SEEDS:?}:\n{}", all.table());
    verdicts.sort_by_key(|v| v.id);
    println!("summary:");
    for v in &verdicts {
        report(v);
    }
    let passed = verdicts.iter().filter(|v| v.pass).count();
    println!("{passed}/{} criteria pass", verdicts.len());
    if strict && passed < verdicts.len() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
