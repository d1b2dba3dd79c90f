//! Acceptance criteria 1 to 11. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use icewatch::datagen::{
    gen_image_dataset, gen_temperature_series, gen_velocity_series, ImageGenParams, TemperatureFeaturizer,
    TemperatureParams, VelocityFeaturizer, VelocityParams, DEFAULT_SPLIT,
};
use icewatch::fusion::{decide, thermal_anomaly, Thresholds, SEASON_2022};
use icewatch::gradcheck::{run_suite, sign_error_double, SUITE_TOLERANCE};
use icewatch::harness::{run_with_args, run_ablation, AblationPlan};
use icewatch::metrics::{f1_score, report, ConfusionMatrix};
use icewatch::nn::{shuffled_batches, Module, TrainConfig};
use icewatch::optim::{mae, quantile_loss, LossKind, QuantileSpec};
use icewatch::riskflow::{evaluate, RiskFlowModel, RiskFlowTrainer};
use icewatch::tempflow::{TempFlowModel, TempFlowTrainer, TemperatureWindow};
use icewatch::terraflow::{mean_predictor_mae, TerraFlowConfig, TerraFlowModel, TerraFlowTrainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn table_conformance() -> Outcome {
    let m = RiskFlowModel::new(0);
    let trace = m.shape_trace().map_err(|e| e.to_string())?;
    let chain: Vec<String> =
        trace.stages.iter().map(|(_, s)| s.iter().map(usize::to_string).collect::<Vec<_>>().join("x")).collect();
    let counts: Vec<usize> = m.layer_param_counts().iter().map(|c| c.1).collect();
    let want_chain = ["6x128x128", "32x126x126", "32x63x63", "64x61x61", "64x30x30", "57600", "64", "1"];
    check(
        chain == want_chain && counts == [1760, 18496, 3_686_464, 65] && m.param_count() == 3_706_785,
        format!("{} ; params {:?} total {}", chain.join(" -> "), counts, m.param_count()),
    )
}

fn terraflow_budget() -> Outcome {
    let m = TerraFlowModel::new(TerraFlowConfig::full(), 0).map_err(|e| e.to_string())?;
    let n = m.param_count();
    check(
        (5_200_000..=5_800_000).contains(&n) && n == TerraFlowConfig::full().param_count(),
        format!("full configuration has {n} parameters"),
    )
}

fn gradient_soundness() -> Outcome {
    let cases = run_suite(7);
    let worst = cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<&str> = cases.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    let double = sign_error_double(7);
    check(
        failed.is_empty() && !double.passed && cases.len() >= 16,
        format!(
            "{} ops, worst relative error {worst:.2e} (< {SUITE_TOLERANCE:e}), failed {failed:?}; sign-error double error {:.2e} flagged",
            cases.len(),
            double.max_rel_error
        ),
    )
}

fn loss_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut exact = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..40);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let q = quantile_loss(&p, &t, QuantileSpec::median()).map_err(|e| e.to_string())?;
        exact += usize::from(q == 0.5 * mae(&p, &t).map_err(|e| e.to_string())?);
    }
    let sample: Vec<f64> = (0..501).map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng) * 3.0).collect();
    let step = 0.01;
    let grid: Vec<f64> = (0..=2400).map(|i| -12.0 + step * i as f64).collect();
    let mut worst_gap: f64 = 0.0;
    for tau in [0.1, 0.5, 0.9] {
        let spec = QuantileSpec::new(tau).map_err(|e| e.to_string())?;
        let loss = |c: f64| quantile_loss(&vec![c; sample.len()], &sample, spec).expect("loss");
        let best = grid.iter().copied().min_by(|a, b| loss(*a).total_cmp(&loss(*b))).expect("grid");
        let mut sorted = sample.clone();
        sorted.sort_by(f64::total_cmp);
        let quantile = sorted[(tau * sorted.len() as f64).ceil() as usize - 1];
        worst_gap = worst_gap.max((best - quantile).abs());
    }
    check(
        exact == 1000 && worst_gap <= step,
        format!("{exact}/1000 exact identities; pinball minimizer within {worst_gap:.4} of the empirical quantile (grid step {step})"),
    )
}

fn overfit_smoke() -> Outcome {
    // RiskFlow: 16 separable images.
    let t0 = Instant::now();
    let set = gen_image_dataset(1, 8, 8, &ImageGenParams::default()).map_err(|e| e.to_string())?;
    let mut m = RiskFlowModel::new(1);
    let mut tr = RiskFlowTrainer::new(&m, TrainConfig { epochs: 200, batch_size: 16, lr: 1e-3, seed: 1 })
        .map_err(|e| e.to_string())?;
    let mut risk = None;
    for e in 1..=200 {
        tr.run_epoch(&mut m, &set.samples, &[]).map_err(|e| e.to_string())?;
        let (bce, _) = evaluate(&m, &set.samples).map_err(|e| e.to_string())?;
        if bce < 0.05 {
            risk = Some((e, bce));
            break;
        }
    }
    let risk_s = t0.elapsed().as_secs_f64();

    // TempFlow: noiseless sinusoid, 500 steps.
    let t1 = Instant::now();
    let recs = gen_temperature_series(1, 3650, &TemperatureParams::pure_seasonal()).map_err(|e| e.to_string())?;
    let (_, split) = TemperatureFeaturizer::prepare(&recs, 30, 30, DEFAULT_SPLIT).map_err(|e| e.to_string())?;
    let mut tm = TempFlowModel::new(1);
    let mut ttr = TempFlowTrainer::new(&tm, TrainConfig { epochs: 0, batch_size: 32, lr: 3e-3, seed: 1 })
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut temp = None;
    for s in 1..=500 {
        let idx = &shuffled_batches(split.train.len(), 32, &mut rng)[0];
        let batch: Vec<&TemperatureWindow> = idx.iter().map(|&i| &split.train[i]).collect();
        ttr.step(&mut tm, &batch).map_err(|e| e.to_string())?;
        if s % 50 == 0 {
            let mse = tm.mse_on(&split.val).map_err(|e| e.to_string())?;
            if mse < 0.01 {
                temp = Some((s, mse));
                break;
            }
        }
    }
    let temp_s = t1.elapsed().as_secs_f64();

    // TerraFlow: deterministic seasonal velocity, 20 desk epochs.
    let t2 = Instant::now();
    let params = VelocityParams { sigma_eta: 0.0, spike_prob: 0.0, surge: None, ..VelocityParams::for_days(3650) };
    let vrecs = gen_velocity_series(1, 3650, &params).map_err(|e| e.to_string())?;
    let (_, vs) = VelocityFeaturizer::prepare(&vrecs, 30, DEFAULT_SPLIT).map_err(|e| e.to_string())?;
    let base = mean_predictor_mae(&vs.train, &vs.val).map_err(|e| e.to_string())?;
    let mut vm = TerraFlowModel::new(TerraFlowConfig::desk(), 1).map_err(|e| e.to_string())?;
    let mut vtr = TerraFlowTrainer::new(
        &vm,
        LossKind::Quantile(QuantileSpec::median()),
        TrainConfig { epochs: 20, batch_size: 64, lr: 1e-3, seed: 1 },
    )
    .map_err(|e| e.to_string())?;
    let mut terra = None;
    for e in 1..=20 {
        let ep = vtr.run_epoch(&mut vm, &vs.train, &vs.val).map_err(|e| e.to_string())?;
        if ep.val_mae <= 0.5 * base {
            terra = Some((e, ep.val_mae / base));
            break;
        }
    }
    let terra_s = t2.elapsed().as_secs_f64();

    let show = |r: Option<(usize, f64)>, unit: &str| match r {
        Some((n, v)) => format!("{v:.4} after {n} {unit}"),
        None => "not reached".into(),
    };
    check(
        risk.is_some() && temp.is_some() && terra.is_some(),
        format!(
            "riskflow BCE {} ({risk_s:.0} s); tempflow MSE {} ({temp_s:.0} s); terraflow MAE/baseline {} ({terra_s:.0} s)",
            show(risk, "epochs"),
            show(temp, "steps"),
            show(terra, "epochs")
        ),
    )
}

fn quantile_coverage() -> Outcome {
    let days = 3650;
    let epochs = 6;
    let seed = 0;
    let params = VelocityParams { surge: None, persistence: 0.0, ..VelocityParams::for_days(days) };
    let recs = gen_velocity_series(seed, days, &params).map_err(|e| e.to_string())?;
    let (_, split) = VelocityFeaturizer::prepare(&recs, 30, DEFAULT_SPLIT).map_err(|e| e.to_string())?;
    let mut m = TerraFlowModel::new(TerraFlowConfig::desk(), seed).map_err(|e| e.to_string())?;
    let loss = LossKind::Quantile(QuantileSpec::new(0.9).map_err(|e| e.to_string())?);
    let mut tr = TerraFlowTrainer::new(&m, loss, TrainConfig { epochs, batch_size: 64, lr: 1e-3, seed })
        .map_err(|e| e.to_string())?;
    for e in 0..epochs {
        if e * 10 >= epochs * 7 {
            tr.set_lr(1e-4).map_err(|e| e.to_string())?;
        }
        tr.run_epoch(&mut m, &split.train, &split.val).map_err(|e| e.to_string())?;
    }
    let held: Vec<_> = split.val.iter().chain(&split.test).cloned().collect();
    let pred = m.predict(&held).map_err(|e| e.to_string())?;
    let below = pred.iter().zip(&held).filter(|(p, w)| w.target() <= **p).count();
    let coverage = below as f64 / held.len() as f64;
    check((0.85..=0.95).contains(&coverage), format!("tau 0.9 coverage {coverage:.4} on {} held-out windows", held.len()))
}

fn ablation_orderings() -> Outcome {
    let t = Instant::now();
    let mut log = Vec::new();
    let r = run_ablation(&AblationPlan::default(), &mut log).map_err(|e| e.to_string())?;
    print!("{}", String::from_utf8_lossy(&log));
    let (lb, loss) = (r.lookback_tally(), r.loss_tally());
    let enough = |t: icewatch::harness::ablation::OrderingTally| t.seeds == 5 && t.holds >= 4;
    check(
        enough(lb) && enough(loss) && r.cells.len() == 45,
        format!(
            "lookback ordering {}/{} seeds, quantile <= mse {}/{} seeds, {} cells ({:.0} s)",
            lb.holds,
            lb.seeds,
            loss.holds,
            loss.seeds,
            r.cells.len(),
            t.elapsed().as_secs_f64()
        ),
    )
}

fn fusion_replay() -> Outcome {
    let th = Thresholds::default();
    let mut matched = 0;
    for row in &SEASON_2022 {
        matched += usize::from(decide(row.vision_prob, row.fused_prob, &th).map_err(|e| e.to_string())? == row.decision);
    }
    check(matched == 6, format!("{matched}/6 decisions reproduced"))
}

fn metric_consistency() -> Outcome {
    let f1 = f1_score(0.88, 0.96);
    let r = report(&ConfusionMatrix { tp: 22, fp: 3, tn: 45, fn_: 1 }).map_err(|e| e.to_string())?;
    let [neg, pos] = &r.classes;
    let round2 = |v: f64| (v * 100.0).round() / 100.0;
    let rows_match = [neg.precision, neg.recall, neg.f1, pos.precision, pos.recall, pos.f1].map(round2)
        == [0.98, 0.94, 0.96, 0.88, 0.96, 0.92]
        && (neg.support, pos.support) == (48, 23)
        && round2(r.accuracy) == 0.94;
    let (wn, wp) = (48.0 / 71.0, 23.0 / 71.0);
    let recomputed = [
        (neg.precision + pos.precision) / 2.0,
        (neg.recall + pos.recall) / 2.0,
        (neg.f1 + pos.f1) / 2.0,
        wn * neg.precision + wp * pos.precision,
        wn * neg.recall + wp * pos.recall,
        wn * neg.f1 + wp * pos.f1,
    ];
    let published = [0.93, 0.95, 0.94, 0.95, 0.94, 0.94];
    let worst = recomputed.iter().zip(published).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let own = [
        r.macro_avg.precision,
        r.macro_avg.recall,
        r.macro_avg.f1,
        r.weighted_avg.precision,
        r.weighted_avg.recall,
        r.weighted_avg.f1,
    ];
    check(
        round2(f1) == 0.92 && rows_match && worst <= 0.005 && own.iter().zip(&recomputed).all(|(a, b)| (a - b).abs() < 1e-12),
        format!("F1(0.88, 0.96) = {f1:.4}; per-class rows match at 2 decimals; averages within {worst:.4} of the table"),
    )
}

fn files_under(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("readable dir") {
            let p = entry.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).expect("prefix").to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).expect("readable file")));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let out_s = out.to_string_lossy().into_owned();
        let small = ["--set", "days=400", "--set", "base_positives=3", "--set", "base_negatives=12", "--set", "images_per_class=16"];
        let mut calls: Vec<Vec<&str>> = vec![[&["icewatch", "gen-data", "--seed", "11", "--out", &out_s][..], &small[..]].concat()];
        for (model, epochs) in [("riskflow", "1"), ("terraflow", "2"), ("tempflow", "2")] {
            calls.push(vec!["icewatch", "train", "--seed", "11", "--out", &out_s, "--model", model, "--epochs", epochs]);
        }
        for args in calls {
            let code = run_with_args(args.iter().copied(), &mut std::io::sink());
            if code != 0 {
                return Err(format!("{} exited with {code}", args[1]));
            }
        }
        runs.push(files_under(&out));
    }
    let names: Vec<&str> = runs[0].iter().map(|(n, _)| n.as_str()).collect();
    let differing: Vec<&str> = runs[0].iter().zip(&runs[1]).filter(|(a, b)| a != b).map(|(a, _)| a.0.as_str()).collect();
    check(
        runs[0].len() == runs[1].len() && differing.is_empty() && names.len() > 10,
        format!("{} files byte-identical across two runs, differing {differing:?}", names.len()),
    )
}

fn thermal_lead() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut series: Vec<f64> =
        (0..60).map(|_| -5.0 + Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
    let event = 50;
    for v in &mut series[event - 4..] {
        *v += 5.0;
    }
    let a = thermal_anomaly(&series[..=event], 30, 2.0, Some(event)).map_err(|e| e.to_string())?;
    check(
        a.lead_days.is_some_and(|l| (3..=4).contains(&l)),
        format!("+5 sigma step 4 days before the event flagged with lead {:?} days", a.lead_days),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("RiskFlow layer table conformance", table_conformance),
        ("TerraFlow parameter budget", terraflow_budget),
        ("gradient soundness", gradient_soundness),
        ("loss identities", loss_identities),
        ("overfit smoke tests", overfit_smoke),
        ("quantile coverage", quantile_coverage),
        ("ablation orderings", ablation_orderings),
        ("fusion replay", fusion_replay),
        ("metric consistency", metric_consistency),
        ("determinism", determinism),
        ("thermal anomaly lead", thermal_lead),
    ];
    let only: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {n:>2} PASS  {name}: {d} [{secs:.1} s]"),
            Err(d) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {d} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
