//! The acceptance battery: ten standalone criteria covering solver oracles,
//! the representer and norm-bound certificates, the maxbias and influence
//! bounds, gradient correctness, the four experiment harnesses, and CLI
//! determinism. Each test prints exactly one verdict line
//!
//!     ACCEPTANCE NN name: PASS|FAIL (detail)
//!
//! and then asserts it. Run with `--nocapture` to see the lines on success;
//! on failure the harness replays them. Tolerances are pinned inline next to
//! each check.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use pairlearn::experiments::{
    bootstrap_experiment, consistency_experiment, continuity_experiment, gen_synthetic,
    qual_robustness_experiment, ExperimentReport, LambdaRule, NoiseSpec, PerturbationFamily,
    SyntheticSpec, TruthFn,
};
use pairlearn::loss::PhiKind;
use pairlearn::model::sup_norm_probe;
use pairlearn::robustness::{bias_sweep, influence_function, influence_function_at, Contaminant};
use pairlearn::{
    check_norm_bounds, representer_residual, train, train_convex, train_ls_closed_form,
    InputPoint, PairKernel, PairScheme, PairSet, PairwiseLoss, RplModel, TrainConfig,
    WeightedDataset,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

const LN2: f64 = std::f64::consts::LN_2;

/// Trend criteria hold when at least this many of the five replicate seeds
/// show the asserted direction.
const TREND_PASS: u64 = 3;

fn report(num: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE {num:02} {name}: {verdict} ({detail})");
    assert!(pass, "ACCEPTANCE {num:02} {name}: FAIL ({detail})");
}

fn linear_spec(n: usize, d: usize, noise: NoiseSpec, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n,
        d,
        truth: TruthFn::Linear,
        noise,
        seed,
    }
}

fn summary_num(r: &ExperimentReport, key: &str) -> f64 {
    let v = &r.summary[key];
    v.as_f64()
        .or_else(|| v.as_bool().map(|b| if b { 1.0 } else { 0.0 }))
        .unwrap_or_else(|| panic!("summary key {key} is not numeric"))
}

fn summary_bool(r: &ExperimentReport, key: &str) -> bool {
    r.summary[key]
        .as_bool()
        .unwrap_or_else(|| panic!("summary key {key} is not boolean"))
}

#[test]
fn criterion_01_solver_oracle_equivalence() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for case in 0..20u64 {
        let n = rng.random_range(3..=30usize);
        let d = rng.random_range(1..=3usize);
        let gamma = rng.random_range(0.3..1.2);
        let lambda = rng.random_range(0.05..0.8);
        let data = gen_synthetic(&linear_spec(
            n,
            d,
            NoiseSpec::Gaussian { sigma: 0.5 },
            9000 + case,
        ))
        .unwrap();
        let kernel = PairKernel::rbf_concat(gamma).unwrap();
        let cfg = TrainConfig::new(lambda);
        let closed = train_ls_closed_form(&data, &kernel, &cfg).unwrap();
        let newton = train_convex(&data, &kernel, &PairwiseLoss::ls_rank(), &cfg).unwrap();
        let dist = closed.model.h_distance(&newton.model).unwrap();
        let scaled = dist / (1.0 + closed.model.h_norm());
        worst = worst.max(scaled);
        if scaled > 1e-8 {
            failures.push(format!("case {case} (n={n}, d={d}): scaled gap {scaled:.2e}"));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    if secs >= 60.0 {
        failures.push(format!("runtime {secs:.1}s >= 60s"));
    }
    report(
        1,
        "solver_oracle_equivalence",
        failures.is_empty(),
        &format!(
            "20 random ls datasets, worst ||closed - newton||_H / (1 + ||f||_H) = {worst:.2e} \
             vs tol 1e-8, {secs:.1}s < 60s{}",
            if failures.is_empty() {
                String::new()
            } else {
                format!("; {}", failures.join("; "))
            }
        ),
    );
}

#[test]
fn criterion_02_representer_theorem() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_res = 0.0f64;
    let mut worst_h = 0.0f64;
    let mut failures = Vec::new();
    for case in 0..20u64 {
        let n = rng.random_range(6..=16usize);
        let d = rng.random_range(1..=2usize);
        let sigma = rng.random_range(0.3..1.5);
        let lambda = rng.random_range(0.1..0.8);
        let gamma = rng.random_range(0.4..1.0);
        let noise = if case % 2 == 0 {
            NoiseSpec::Gaussian { sigma: 0.5 }
        } else {
            NoiseSpec::Cauchy { gamma: 1.0 }
        };
        let data = gen_synthetic(&linear_spec(n, d, noise, 7000 + case)).unwrap();
        let kernel = PairKernel::rbf_concat(gamma).unwrap();
        let loss = PairwiseLoss::phi_rank_smoothed(PhiKind::Logistic2, sigma).unwrap();
        let out = train_convex(&data, &kernel, &loss, &TrainConfig::new(lambda)).unwrap();
        let rep = representer_residual(&out.model, &data, &loss).unwrap();
        let scaled = rep.residual / (1.0 + out.model.h_norm());
        worst_res = worst_res.max(scaled);
        worst_h = worst_h.max(rep.h_sup);
        if scaled > 1e-6 {
            failures.push(format!("case {case}: scaled residual {scaled:.2e}"));
        }
        if rep.h_sup > 1.0 / LN2 + 1e-9 {
            failures.push(format!("case {case}: h_sup {:.12} > 1/ln2", rep.h_sup));
        }
    }
    report(
        2,
        "representer_theorem",
        failures.is_empty(),
        &format!(
            "20 smoothed-logistic models: worst scaled residual {worst_res:.2e} vs 1e-6, \
             max |h| = {worst_h:.6} vs 1/ln2 + 1e-9 = {:.6}{}",
            1.0 / LN2 + 1e-9,
            if failures.is_empty() {
                String::new()
            } else {
                format!("; {}", failures.join("; "))
            }
        ),
    );
}

#[test]
fn criterion_03_norm_and_risk_bounds() {
    let kernels = [
        PairKernel::rbf_concat(0.7).unwrap(),
        PairKernel::linear_concat(2.0).unwrap(),
        PairKernel::ranking_difference(pairlearn::BaseKernel::Linear, Some(2.0)).unwrap(),
        PairKernel::ranking_difference(pairlearn::BaseKernel::Rbf { gamma: 0.5 }, None).unwrap(),
    ];
    let losses = [
        PairwiseLoss::phi_rank(PhiKind::Logistic2),
        PairwiseLoss::phi_rank(PhiKind::Hinge),
        PairwiseLoss::phi_rank_smoothed(PhiKind::Logistic2, 0.5).unwrap(),
        PairwiseLoss::ls_rank(),
    ];
    let noises = [
        NoiseSpec::Gaussian { sigma: 0.5 },
        NoiseSpec::Cauchy { gamma: 1.0 },
        NoiseSpec::TruncatedCauchy {
            gamma: 1.0,
            cap: 1e6,
        },
    ];
    let lambda = 0.4;
    let mut models = 0usize;
    let mut violations = Vec::new();
    let mut probe_worst = 0.0f64;
    let mut seed = 3000u64;

    let check = |data: &WeightedDataset,
                     kernel: &PairKernel,
                     loss: &PairwiseLoss,
                     label: String,
                     violations: &mut Vec<String>,
                     probe_worst: &mut f64| {
        let out = train(data, kernel, loss, &TrainConfig::new(lambda)).unwrap();
        let bounds = check_norm_bounds(&out.model, data, loss).unwrap();
        for c in &bounds.checks {
            if !c.holds {
                violations.push(format!(
                    "{label}: {} achieved {:.3e} > bound {:.3e}",
                    c.name, c.achieved, c.bound
                ));
            }
        }
        let lip = loss.lip1();
        if lip.is_finite() {
            let k_sup = kernel.sup_bound();
            let sup_bound = lip * k_sup * k_sup / lambda;
            let sup = sup_norm_probe(&out.model, data.dim(), 200, 11);
            *probe_worst = (*probe_worst).max(sup / sup_bound);
            if sup > sup_bound * (1.0 + 1e-9) + 1e-9 {
                violations.push(format!("{label}: probe sup {sup:.3e} > {sup_bound:.3e}"));
            }
        }
    };

    for kernel in &kernels {
        for loss in &losses {
            for noise in &noises {
                seed += 1;
                let data = gen_synthetic(&linear_spec(8, 2, *noise, seed)).unwrap();
                models += 1;
                check(
                    &data,
                    kernel,
                    loss,
                    format!("{}/{}/{noise:?}", kernel.tag(), loss.tag()),
                    &mut violations,
                    &mut probe_worst,
                );
            }
        }
    }
    // One guaranteed |y| = 1e6 outlier per loss family.
    for loss in &losses {
        seed += 1;
        let clean =
            gen_synthetic(&linear_spec(8, 2, NoiseSpec::Gaussian { sigma: 0.5 }, seed)).unwrap();
        let mut labels = clean.labels().to_vec();
        labels[0] = 1e6;
        let data =
            WeightedDataset::new(clean.points().to_vec(), labels, clean.weights().to_vec())
                .unwrap();
        models += 1;
        check(
            &data,
            &kernels[0],
            loss,
            format!("outlier-1e6/{}", loss.tag()),
            &mut violations,
            &mut probe_worst,
        );
    }

    report(
        3,
        "norm_and_risk_bounds",
        violations.is_empty(),
        &format!(
            "{models} models across 4 kernels x 4 losses x 3 noises plus |y|=1e6 outliers: \
             {} bound violations, worst probe-sup/bound ratio {probe_worst:.3}{}",
            violations.len(),
            if violations.is_empty() {
                String::new()
            } else {
                format!("; {}", violations.join("; "))
            }
        ),
    );
}

#[test]
fn criterion_04_maxbias_bound() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst_ratio = 0.0f64;
    let mut failures = Vec::new();
    for case in 0..50u64 {
        let n = rng.random_range(8..=12usize);
        let d = rng.random_range(1..=2usize);
        let gamma = rng.random_range(0.4..1.0);
        let lambda = rng.random_range(0.1..0.7);
        let eps = rng.random_range(0.01..0.5);
        let qx: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let qy = rng.random_range(-100.0..100.0);
        let loss = if case % 2 == 0 {
            PairwiseLoss::phi_rank_smoothed(PhiKind::Logistic2, 0.6).unwrap()
        } else {
            PairwiseLoss::phi_rank(PhiKind::Hinge)
        };
        let data = gen_synthetic(&linear_spec(
            n,
            d,
            NoiseSpec::Gaussian { sigma: 0.5 },
            4000 + case,
        ))
        .unwrap();
        let kernel = PairKernel::rbf_concat(gamma).unwrap();
        let contaminant = Contaminant::Point {
            x: InputPoint::new(qx).unwrap(),
            y: qy,
        };
        let rows = bias_sweep(
            &data,
            &contaminant,
            &kernel,
            &loss,
            &TrainConfig::new(lambda),
            &[eps],
        )
        .unwrap();
        let row = &rows[0];
        worst_ratio = worst_ratio.max(row.bias / row.bound);
        if !row.holds {
            failures.push(format!(
                "case {case} ({}, eps={eps:.3}): bias {:.3e} > bound {:.3e}",
                loss.tag(),
                row.bias,
                row.bound
            ));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    if secs >= 300.0 {
        failures.push(format!("runtime {secs:.1}s >= 300s"));
    }
    report(
        4,
        "maxbias_bound",
        failures.is_empty(),
        &format!(
            "50 random (P, Q, eps) configs, hinge and smoothed logistic: all biases within \
             (8/lambda)||k||_inf |L|_1 eps, worst bias/bound ratio {worst_ratio:.3}, \
             {secs:.1}s < 300s{}",
            if failures.is_empty() {
                String::new()
            } else {
                format!("; {}", failures.join("; "))
            }
        ),
    );
}

#[test]
fn criterion_05_influence_function() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst_res = 0.0f64;
    let mut ratio_lo = f64::INFINITY;
    let mut ratio_hi = 0.0f64;
    let mut failures = Vec::new();
    for case in 0..10u64 {
        let n = rng.random_range(8..=12usize);
        let d = rng.random_range(1..=2usize);
        let gamma = rng.random_range(0.4..0.9);
        let lambda = rng.random_range(0.2..0.7);
        let sigma = rng.random_range(0.4..1.0);
        let x0 = InputPoint::new((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y0 = rng.random_range(-3.0..3.0);
        let data = gen_synthetic(&linear_spec(
            n,
            d,
            NoiseSpec::Gaussian { sigma: 0.5 },
            5000 + case,
        ))
        .unwrap();
        let kernel = PairKernel::rbf_concat(gamma).unwrap();
        let loss = PairwiseLoss::phi_rank_smoothed(PhiKind::Logistic2, sigma).unwrap();
        let res = influence_function(&data, &x0, y0, &kernel, &loss, &TrainConfig::new(lambda))
            .unwrap();
        let scaled = res.operator_residual / (1.0 + res.if_norm);
        worst_res = worst_res.max(scaled);
        if scaled > 1e-6 {
            failures.push(format!("case {case}: operator residual {scaled:.2e}"));
        }
        for w in res.fd_table.windows(2) {
            let ratio = w[0].error / w[1].error;
            ratio_lo = ratio_lo.min(ratio);
            ratio_hi = ratio_hi.max(ratio);
            if !(1.5..=2.5).contains(&ratio) {
                failures.push(format!(
                    "case {case}: fd ratio {:.3} at eps {} -> {} outside [1.5, 2.5]",
                    ratio, w[0].epsilon, w[1].epsilon
                ));
            }
        }
    }
    // Contamination grid including the extreme label: the influence element
    // must stay finite and within ||T||_H / (2 lambda).
    let data = gen_synthetic(&linear_spec(10, 1, NoiseSpec::Gaussian { sigma: 0.5 }, 5100))
        .unwrap();
    let kernel = PairKernel::rbf_concat(0.7).unwrap();
    let loss = PairwiseLoss::phi_rank_smoothed(PhiKind::Logistic2, 0.5).unwrap();
    let lambda = 0.4;
    for &y0 in &[-1e6, -1e3, 0.0, 1e3, 1e6] {
        for &x in &[-0.9, 0.4] {
            let res = influence_function_at(
                &data,
                &InputPoint::new(vec![x]).unwrap(),
                y0,
                &kernel,
                &loss,
                &TrainConfig::new(lambda),
                &[],
            )
            .unwrap();
            if !res.if_norm.is_finite() {
                failures.push(format!("grid y0={y0:e}, x={x}: IF norm not finite"));
            }
            if res.if_norm > res.t_norm / (2.0 * lambda) * (1.0 + 1e-9) + 1e-9 {
                failures.push(format!(
                    "grid y0={y0:e}, x={x}: IF norm {:.3e} > ||T||/(2 lambda) {:.3e}",
                    res.if_norm,
                    res.t_norm / (2.0 * lambda)
                ));
            }
        }
    }
    report(
        5,
        "influence_function",
        failures.is_empty(),
        &format!(
            "10 random configs: worst scaled operator residual {worst_res:.2e} vs 1e-6, \
             fd halving ratios in [{ratio_lo:.3}, {ratio_hi:.3}] within [1.5, 2.5]; \
             IF norm finite on the y0 grid up to 1e6{}",
            if failures.is_empty() {
                String::new()
            } else {
                format!("; {}", failures.join("; "))
            }
        ),
    );
}

#[test]
fn criterion_06_gradient_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let losses = [
        PairwiseLoss::phi_rank(PhiKind::Logistic2),
        PairwiseLoss::phi_rank_smoothed(PhiKind::Logistic2, 0.7).unwrap(),
        PairwiseLoss::ls_rank(),
    ];
    let mut worst = 0.0f64;
    let mut failures = 0usize;
    let mut first_failure = String::new();
    let mut checked = 0usize;
    for ds in 0..20u64 {
        let n = rng.random_range(4..=8usize);
        let d = rng.random_range(1..=2usize);
        let gamma = rng.random_range(0.4..1.0);
        let lambda = rng.random_range(0.1..1.0);
        let data = gen_synthetic(&linear_spec(
            n,
            d,
            NoiseSpec::Gaussian { sigma: 0.8 },
            6000 + ds,
        ))
        .unwrap();
        let kernel = PairKernel::rbf_concat(gamma).unwrap();
        let pairs = PairSet::full(&data, PairScheme::IncludeDiagonal).unwrap();
        let loss = &losses[(ds % 3) as usize];
        let objective = |m: &RplModel| -> f64 {
            let preds = pairs.predictions(m);
            pairs.risk(loss, &preds, true).unwrap() + lambda * m.h_norm() * m.h_norm()
        };
        for _ in 0..50 {
            let coef = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..pairs.len()).map(|_| rng.random_range(-1.0..1.0)).collect()
            };
            let model = RplModel::new(
                kernel.clone(),
                pairs.points().to_vec(),
                coef(&mut rng),
                lambda,
                loss.tag(),
            )
            .unwrap();
            let dir = RplModel::new(
                kernel.clone(),
                pairs.points().to_vec(),
                coef(&mut rng),
                lambda,
                loss.tag(),
            )
            .unwrap();
            let dir_norm = dir.h_norm().max(1e-12);
            let dir = RplModel::combine(&[(1.0 / dir_norm, &dir)]).unwrap();
            let grad = pairlearn::risk_gradient(&model, &data, loss, lambda).unwrap();
            let dd = grad.h_inner(&dir).unwrap();
            let h = 1e-5;
            let plus = RplModel::combine(&[(1.0, &model), (h, &dir)]).unwrap();
            let minus = RplModel::combine(&[(1.0, &model), (-h, &dir)]).unwrap();
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let rel = (dd - fd).abs() / dd.abs().max(1.0);
            worst = worst.max(rel);
            checked += 1;
            if rel > 1e-6 {
                failures += 1;
                if first_failure.is_empty() {
                    first_failure =
                        format!("dataset {ds} ({}): dd {dd:.6e} vs fd {fd:.6e}", loss.tag());
                }
            }
        }
    }
    report(
        6,
        "gradient_correctness",
        failures == 0 && checked == 1000,
        &format!(
            "{checked} (model, direction) pairs over 20 datasets and 3 differentiable losses: \
             worst |<grad, v> - fd| / max(1, |<grad, v>|) = {worst:.2e} vs 1e-6, \
             {failures} failures {first_failure}"
        ),
    );
}

#[test]
fn criterion_07_consistency_trend() {
    let t0 = Instant::now();
    // Noiseless anchor: the least-squares ranking risk has an analytic Bayes
    // proxy, and the rd-linear RKHS contains the optimal pairwise predictor,
    // so the rule should land within Monte-Carlo noise of it at n = 80. The
    // rate constant 0.15 keeps the regularization gap (lambda/(A+lambda))^2 A
    // below the 3 SE band at that sample size.
    let anchor_spec = linear_spec(10, 1, NoiseSpec::Gaussian { sigma: 0.0 }, 7);
    let anchor_kernel =
        PairKernel::ranking_difference(pairlearn::BaseKernel::Linear, Some(1.0)).unwrap();
    let anchor = consistency_experiment(
        &anchor_spec,
        &anchor_kernel,
        &PairwiseLoss::ls_rank(),
        &LambdaRule::QuarterRoot { c: 0.15 },
        &[10, 20, 40, 80],
    )
    .unwrap();

    // Trend at the literal schedule lambda_n = n^(-1/4) on a noisy nonlinear
    // truth with the universal kernel.
    let trend_spec = SyntheticSpec {
        n: 10,
        d: 1,
        truth: TruthFn::Sine,
        noise: NoiseSpec::Gaussian { sigma: 0.5 },
        seed: 17,
    };
    let trend = consistency_experiment(
        &trend_spec,
        &PairKernel::rbf_concat(0.7).unwrap(),
        &PairwiseLoss::phi_rank_smoothed(PhiKind::Logistic2, 0.5).unwrap(),
        &LambdaRule::QuarterRoot { c: 1.0 },
        &[10, 20, 40, 80],
    )
    .unwrap();

    let mut failures = Vec::new();
    for (label, rep) in [("anchor", &anchor), ("trend", &trend)] {
        if !summary_bool(rep, "running_min_monotone") {
            failures.push(format!("{label}: running minimum increased"));
        }
        if summary_num(rep, "norm_bound_violations") != 0.0 {
            failures.push(format!("{label}: norm bound violations"));
        }
    }
    let within = summary_num(&anchor, "bayes_within_3se_seeds") as u64;
    if within < TREND_PASS {
        failures.push(format!("anchor: only {within}/5 seeds within 3 SE of the Bayes proxy"));
    }
    let secs = t0.elapsed().as_secs_f64();
    report(
        7,
        "consistency_trend",
        failures.is_empty(),
        &format!(
            "lambda_n = c n^(-1/4) over n in {{10,20,40,80}}: running min non-increasing 5/5 \
             seeds in both runs; noiseless anchor within 3 SE of Bayes proxy \
             {:.6} for {within}/5 seeds (mean gap {:.4}); trend improved {}/5 seeds; \
             {secs:.1}s{}",
            summary_num(&anchor, "bayes_proxy"),
            summary_num(&anchor, "bayes_gap_mean"),
            summary_num(&trend, "improved_seeds"),
            if failures.is_empty() {
                String::new()
            } else {
                format!("; {}", failures.join("; "))
            }
        ),
    );
}

#[test]
fn criterion_08_continuity() {
    let data = gen_synthetic(&linear_spec(20, 1, NoiseSpec::Gaussian { sigma: 0.3 }, 55))
        .unwrap();
    let kernel = PairKernel::rbf_concat(0.7).unwrap();
    let loss = PairwiseLoss::phi_rank_smoothed(PhiKind::Logistic2, 0.5).unwrap();
    let rep = continuity_experiment(
        &data,
        &kernel,
        &loss,
        &TrainConfig::new(0.3),
        &[0.8, 0.4, 0.2, 0.1, 0.05, 0.0, 1e6],
    )
    .unwrap();
    let mut failures = Vec::new();
    if !summary_bool(&rep, "monotone_shrinking") {
        failures.push("h change not non-increasing as delta halves".to_owned());
    }
    if !summary_bool(&rep, "all_within_bound") {
        failures.push("a perturbation exceeded the replacement bound".to_owned());
    }
    if !summary_bool(&rep, "bounds_ok") {
        failures.push("a retrained model violated its norm bounds".to_owned());
    }
    let zero = summary_num(&rep, "zero_delta_change");
    if zero > 1e-8 {
        failures.push(format!("delta = 0 changed the model by {zero:.2e}"));
    }
    let max_change = rep
        .rows
        .iter()
        .map(|r| r[1])
        .fold(0.0f64, f64::max);
    report(
        8,
        "continuity",
        failures.is_empty(),
        &format!(
            "single-point delta halvings 0.8 -> 0.05 plus 0 and 1e6: changes non-increasing, \
             max ||delta f||_H = {max_change:.4e} within replacement bound {:.4e}, \
             delta = 0 change {zero:.1e} <= 1e-8{}",
            summary_num(&rep, "replacement_bound"),
            if failures.is_empty() {
                String::new()
            } else {
                format!("; {}", failures.join("; "))
            }
        ),
    );
}

#[test]
fn criterion_09_qualitative_robustness_and_bootstrap() {
    let kernel = PairKernel::rbf_concat(0.6).unwrap();
    let loss = PairwiseLoss::phi_rank_smoothed(PhiKind::Logistic2, 0.6).unwrap();
    let mut failures = Vec::new();

    let t0 = Instant::now();
    let qual = qual_robustness_experiment(
        &linear_spec(24, 1, NoiseSpec::Gaussian { sigma: 0.4 }, 31),
        &PerturbationFamily::MixtureOutlier {
            x_shift: 2.0,
            y_shift: 20.0,
        },
        &kernel,
        &loss,
        0.4,
        &[0.3, 0.15, 0.05, 0.0],
        8,
    )
    .unwrap();
    let qual_secs = t0.elapsed().as_secs_f64();
    let qual_trend = summary_num(&qual, "fixed_trend_seeds") as u64;
    let qual_floor = summary_num(&qual, "fixed_zero_under_floor_seeds") as u64;
    if qual_trend < TREND_PASS {
        failures.push(format!("qualrobust: energy trend only {qual_trend}/5 seeds"));
    }
    if qual_floor < TREND_PASS {
        failures.push(format!(
            "qualrobust: delta = 0 above the noise floor for {}/5 seeds",
            5 - qual_floor
        ));
    }
    if summary_num(&qual, "norm_bound_violations") != 0.0 {
        failures.push("qualrobust: norm bound violations".to_owned());
    }
    if qual_secs >= 600.0 {
        failures.push(format!("qualrobust runtime {qual_secs:.0}s >= 600s"));
    }

    let t1 = Instant::now();
    let boot = bootstrap_experiment(
        &SyntheticSpec {
            n: 15,
            d: 1,
            truth: TruthFn::Sine,
            noise: NoiseSpec::Cauchy { gamma: 0.5 },
            seed: 47,
        },
        &kernel,
        &loss,
        0.4,
        &[15, 30, 60],
        10,
    )
    .unwrap();
    let boot_secs = t1.elapsed().as_secs_f64();
    let boot_trend = summary_num(&boot, "truncated_trend_seeds") as u64;
    if boot_trend < TREND_PASS {
        failures.push(format!("bootstrap: energy trend only {boot_trend}/5 seeds"));
    }
    if !summary_bool(&boot, "all_norms_finite") {
        failures.push("bootstrap: a replicate norm was not finite".to_owned());
    }
    if summary_num(&boot, "norm_bound_violations") != 0.0 {
        failures.push("bootstrap: norm bound violations".to_owned());
    }
    if boot_secs >= 600.0 {
        failures.push(format!("bootstrap runtime {boot_secs:.0}s >= 600s"));
    }

    report(
        9,
        "qualitative_robustness_and_bootstrap",
        failures.is_empty(),
        &format!(
            "qualrobust (mixture outliers, delta 0.3 -> 0): energy distance shrinking for \
             {qual_trend}/5 seeds, delta = 0 under the noise floor for {qual_floor}/5, \
             {qual_secs:.0}s < 600s; bootstrap (cauchy labels, n in {{15,30,60}}): cloud \
             spread shrinking for {boot_trend}/5 seeds, all norms finite, \
             {boot_secs:.0}s < 600s{}",
            if failures.is_empty() {
                String::new()
            } else {
                format!("; {}", failures.join("; "))
            }
        ),
    );
}

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_pairlearn"))
        .args(args)
        .output()
        .expect("spawn pairlearn binary")
}

fn collect_files(root: &Path, prefix: &str, out: &mut BTreeMap<String, Vec<u8>>) {
    for entry in fs::read_dir(root).expect("read output dir") {
        let entry = entry.unwrap();
        let name = format!("{prefix}{}", entry.file_name().to_string_lossy());
        if entry.file_type().unwrap().is_dir() {
            collect_files(&entry.path(), &format!("{name}/"), out);
        } else {
            out.insert(name, fs::read(entry.path()).unwrap());
        }
    }
}

#[test]
fn criterion_10_cli_determinism() {
    let root = tempfile::tempdir().unwrap();
    let cfg_dir = root.path().join("cfg");
    fs::create_dir_all(&cfg_dir).unwrap();
    let write_cfg = |name: &str, value: Value| -> String {
        let path = cfg_dir.join(name);
        fs::write(&path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
        path.to_string_lossy().into_owned()
    };

    let kernel = json!({"kind": "rbf_concat", "gamma": 0.7});
    let loss = json!({"kind": "phi_rank_smoothed", "phi": "logistic2", "sigma": 0.5});
    let gen = write_cfg(
        "gen.json",
        json!({
            "format_version": 1, "command": "gen-data", "seed": 7,
            "synthetic": {"n": 10, "d": 2, "truth": {"kind": "linear"},
                          "noise": {"kind": "gaussian", "sigma": 0.5}}
        }),
    );
    let train = write_cfg(
        "train.json",
        json!({
            "format_version": 1, "command": "train", "seed": 1,
            "kernel": kernel, "loss": loss, "train": {"lambda": 0.4}
        }),
    );
    let infl = write_cfg(
        "infl.json",
        json!({
            "format_version": 1, "command": "influence", "seed": 1,
            "kernel": kernel, "loss": loss, "train": {"lambda": 0.4},
            "influence": {"x0": [0.3, -0.2], "y0": 2.0}
        }),
    );
    let bias = write_cfg(
        "bias.json",
        json!({
            "format_version": 1, "command": "bias-sweep", "seed": 1,
            "kernel": kernel, "loss": loss, "train": {"lambda": 0.4},
            "bias_sweep": {"epsilons": [0.0, 0.1, 0.2],
                           "contaminant": {"x": [1.5, 1.5], "y": 25.0}}
        }),
    );
    let cons = write_cfg(
        "cons.json",
        json!({
            "format_version": 1, "command": "consistency", "seed": 7,
            "kernel": {"kind": "ranking_difference", "base": {"kind": "linear"},
                       "domain_bound": 1.0},
            "loss": {"kind": "ls_rank"},
            "synthetic": {"n": 10, "d": 1, "truth": {"kind": "linear"},
                          "noise": {"kind": "gaussian", "sigma": 0.0}},
            "consistency": {"rule": {"kind": "quarter_root", "c": 0.2}, "n_grid": [8, 12]}
        }),
    );
    let boot = write_cfg(
        "boot.json",
        json!({
            "format_version": 1, "command": "bootstrap", "seed": 11,
            "kernel": {"kind": "rbf_concat", "gamma": 0.6},
            "loss": {"kind": "phi_rank_smoothed", "phi": "logistic2", "sigma": 0.6},
            "synthetic": {"n": 15, "d": 1, "truth": {"kind": "sine"},
                          "noise": {"kind": "cauchy", "gamma": 0.5}},
            "bootstrap": {"lambda": 0.4, "n_grid": [12, 24], "b_reps": 6}
        }),
    );
    let qual = write_cfg(
        "qr.json",
        json!({
            "format_version": 1, "command": "qualrobust", "seed": 7,
            "kernel": kernel, "loss": loss,
            "synthetic": {"n": 10, "d": 1, "truth": {"kind": "linear"},
                          "noise": {"kind": "gaussian", "sigma": 0.4}},
            "qualrobust": {"lambda": 0.4, "deltas": [0.2, 0.0], "reps": 4,
                           "family": {"kind": "mixture_outlier",
                                      "x_shift": 2.0, "y_shift": 20.0}}
        }),
    );

    let mut snapshots: Vec<BTreeMap<String, Vec<u8>>> = Vec::new();
    let mut commands = 0usize;
    for pass in 0..2 {
        let out_dir = root.path().join(format!("pass{pass}"));
        fs::create_dir_all(&out_dir).unwrap();
        let out = out_dir.to_string_lossy().into_owned();
        let data = format!("{out}/data.csv");
        let model = format!("{out}/model.json");
        let warm = format!("{out}/warm");
        let invocations: Vec<Vec<&str>> = vec![
            vec!["gen-data", "--config", &gen, "--out", &out],
            vec!["train", "--config", &train, "--data", &data, "--out", &out],
            vec![
                "train", "--config", &train, "--data", &data, "--model", &model, "--out", &warm,
            ],
            vec!["influence", "--config", &infl, "--data", &data, "--out", &out],
            vec!["bias-sweep", "--config", &bias, "--data", &data, "--out", &out],
            vec!["consistency", "--config", &cons, "--out", &out],
            vec!["bootstrap", "--config", &boot, "--out", &out],
            vec!["qualrobust", "--config", &qual, "--out", &out],
        ];
        commands = invocations.len();
        for args in invocations {
            let result = run_cli(&args);
            assert!(
                result.status.success(),
                "pass {pass}, `{}` exited {:?}: {}",
                args.join(" "),
                result.status.code(),
                String::from_utf8_lossy(&result.stderr)
            );
        }
        let mut files = BTreeMap::new();
        collect_files(&out_dir, "", &mut files);
        snapshots.push(files);
    }

    let names: Vec<&String> = snapshots[0].keys().collect();
    let same_set = snapshots[0].len() == snapshots[1].len()
        && names.iter().all(|n| snapshots[1].contains_key(*n));
    let mut differing = Vec::new();
    if same_set {
        for name in &names {
            if snapshots[0][*name] != snapshots[1][*name] {
                differing.push((*name).clone());
            }
        }
    }
    report(
        10,
        "cli_determinism",
        same_set && differing.is_empty(),
        &format!(
            "all 7 commands (plus a warm retrain) rerun with identical config and seed: \
             {} artifacts byte-identical across passes{}",
            snapshots[0].len(),
            if same_set && differing.is_empty() {
                format!(", {commands} invocations per pass")
            } else if !same_set {
                " FAILED: file sets differ".to_owned()
            } else {
                format!(" FAILED: {} differ ({})", differing.len(), differing.join(", "))
            }
        ),
    );
}
