use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::checkpoint::{Checkpoint, MANIFEST};
use crate::datagen::images::{gen_filtered_scenes, read_image_dataset, write_image_dataset};
use crate::datagen::series::{
    read_temperature_file, read_velocity_file, write_temperature_csv, write_velocity_csv,
};
use crate::datagen::{
    augment_balance, gen_temperature_series, gen_velocity_series, split_dataset, ImageDataset, ImageGenParams,
    LstDailyRecord, SequenceSplit, TemperatureFeaturizer, TemperatureParams, VelocityDailyRecord,
    VelocityFeaturizer, VelocityParams, DEFAULT_SPLIT,
};
use crate::error::{Error, Result};
use crate::fusion::{thermal_anomaly, write_report_csv, RiskReport, SEASON_2022};
use crate::gradcheck::{run_suite, SUITE_TOLERANCE};
use crate::metrics::{confusion, report, write_class_report_csv, write_confusion_csv, RegressionSummary};
use crate::nn::TrainConfig;
use crate::riskflow::{classify, ImageSample, RiskFlowModel, RiskFlowTrainer};
use crate::tempflow::{TempFlowModel, TempFlowTrainer, TemperatureWindow};
use crate::terraflow::{TerraFlowConfig, TerraFlowModel, TerraFlowTrainer, VelocityWindow};

use super::ablation::{run_ablation, AblationPlan};
use super::config::{LstProduct, ModelKind, Profile, RunConfig};
use super::{EXIT_NUMERICAL, EXIT_OK};

pub const VELOCITY_FILE: &str = "velocity.csv";
pub const HISTORY_FILE: &str = "history.csv";
pub const SUMMARY_HEADER: &str = "model,epochs,final_train_loss,final_val_metric";
/// Desk runs keep at most this many of the most recent daily records.
pub const DESK_MAX_RECORDS: usize = 5000;
/// Baseline window of the thermal anomaly column.
pub const ANOMALY_BASELINE: usize = 30;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| Error::invalid(format!("cannot create {}: {e}", parent.display())))?;
    }
    let f = File::create(path).map_err(|e| Error::invalid(format!("cannot write {}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

fn input_error(path: &Path, e: Error) -> Error {
    match e {
        Error::Io(io) => Error::invalid(format!("cannot read {}: {io}", path.display())),
        other => other,
    }
}

pub fn gen_data(cfg: &RunConfig, log: &mut dyn Write) -> Result<i32> {
    let p = cfg.data_plan;
    if p.days == 0 {
        return Err(Error::invalid("days must be positive"));
    }
    if p.images_per_class < p.base_negatives {
        return Err(Error::invalid(format!(
            "images_per_class {} is below base_negatives {}",
            p.images_per_class, p.base_negatives
        )));
    }
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| Error::invalid(format!("cannot create {}: {e}", cfg.out.display())))?;
    let velocity = gen_velocity_series(cfg.seed, p.days, &VelocityParams::for_days(p.days))?;
    write_velocity_csv(&velocity, create(&cfg.out.join(VELOCITY_FILE))?)?;
    for product in [LstProduct::Day, LstProduct::Night] {
        let params = match product {
            LstProduct::Day => TemperatureParams::default(),
            LstProduct::Night => TemperatureParams::night(),
        };
        let recs = gen_temperature_series(cfg.seed, p.days, &params)?;
        write_temperature_csv(&recs, create(&cfg.out.join(product.file_name()))?)?;
        let gaps = recs.iter().filter(|r| r.lst_celsius.is_none()).count();
        writeln!(log, "{}: {} days, {gaps} missing", product.file_name(), recs.len())?;
    }
    let base = gen_filtered_scenes(cfg.seed, p.base_positives, p.base_negatives, p.max_cloud, &ImageGenParams::default())?;
    let balanced = augment_balance(&base, p.base_negatives, cfg.seed)?;
    let images = augment_balance(&balanced, p.images_per_class, cfg.seed.wrapping_add(1))?;
    write_image_dataset(&images, &cfg.out)?;
    writeln!(log, "{VELOCITY_FILE}: {} days", velocity.len())?;
    writeln!(
        log,
        "images.iwt: {} scenes ({} glof, {} no_glof) from {} cloud-filtered originals",
        images.len(),
        images.count(1),
        images.count(0),
        base.len()
    )?;
    Ok(EXIT_OK)
}

fn load_velocity(cfg: &RunConfig, keep: Option<usize>) -> Result<Vec<VelocityDailyRecord>> {
    let path = cfg.data.join(VELOCITY_FILE);
    let recs = read_velocity_file(&path).map_err(|e| input_error(&path, e))?;
    Ok(keep_recent(recs, keep.or_else(|| desk_cap(cfg))))
}

fn load_temperature(cfg: &RunConfig, lst: LstProduct, keep: Option<usize>) -> Result<Vec<LstDailyRecord>> {
    let path = cfg.data.join(lst.file_name());
    let recs = read_temperature_file(&path).map_err(|e| input_error(&path, e))?;
    Ok(keep_recent(recs, keep.or_else(|| desk_cap(cfg))))
}

fn desk_cap(cfg: &RunConfig) -> Option<usize> {
    (cfg.profile == Profile::Desk).then_some(DESK_MAX_RECORDS)
}

fn keep_recent<T>(mut recs: Vec<T>, keep: Option<usize>) -> Vec<T> {
    if let Some(k) = keep {
        if recs.len() > k {
            recs.drain(..recs.len() - k);
        }
    }
    recs
}

fn load_images(cfg: &RunConfig) -> Result<ImageDataset> {
    read_image_dataset(&cfg.data).map_err(|e| input_error(&cfg.data.join("images.iwt"), e))
}

fn pick(set: &ImageDataset, idx: &[usize]) -> Vec<ImageSample> {
    idx.iter().map(|&i| set.samples[i].clone()).collect()
}

fn model_dir(root: &Path, model: ModelKind) -> PathBuf {
    root.join(model.as_str())
}

fn checkpoint_dir(root: &Path, model: ModelKind) -> PathBuf {
    model_dir(root, model).join("checkpoint")
}

fn f(v: f64) -> String {
    format!("{v:.8}")
}

fn with_common_meta(ck: Checkpoint, t: &TrainConfig) -> Checkpoint {
    ck.with_meta("seed", t.seed).with_meta("epochs", t.epochs).with_meta("batch", t.batch_size).with_meta("lr", t.lr)
}

/// Final summary row, `model,epochs,final_train_loss,final_val_metric`.
fn summarize(cfg: &RunConfig, log: &mut dyn Write, epochs: usize, train_loss: f64, val_metric: f64) -> Result<()> {
    let line = format!("{},{epochs},{},{}", cfg.model, f(train_loss), f(val_metric));
    let mut w = create(&model_dir(&cfg.out, cfg.model).join("summary.csv"))?;
    writeln!(w, "{SUMMARY_HEADER}\n{line}")?;
    w.flush()?;
    writeln!(log, "{SUMMARY_HEADER}\n{line}")?;
    Ok(())
}

pub fn train(cfg: &RunConfig, log: &mut dyn Write) -> Result<i32> {
    let plan = cfg.plan()?;
    let t = plan.train;
    let dir = model_dir(&cfg.out, cfg.model);
    match cfg.model {
        ModelKind::RiskFlow => {
            let set = load_images(cfg)?;
            let split = split_dataset(&set.labels(), DEFAULT_SPLIT, cfg.seed)?;
            let (train, val) = (pick(&set, &split.train), pick(&set, &split.val));
            writeln!(log, "riskflow: {} train, {} val images", train.len(), val.len())?;
            let mut model = RiskFlowModel::new(cfg.seed);
            let mut trainer = RiskFlowTrainer::new(&model, t)?;
            let mut hist = csv_writer(create(&dir.join(HISTORY_FILE))?);
            hist.write_record(["epoch", "train_bce", "train_accuracy", "val_bce", "val_accuracy"])?;
            let mut last = (f64::NAN, f64::NAN);
            for _ in 0..t.epochs {
                let e = trainer.run_epoch(&mut model, &train, &val)?;
                hist.write_record([e.epoch.to_string(), f(e.train_loss), f(e.train_accuracy), f(e.val_loss), f(e.val_accuracy)])?;
                hist.flush()?;
                writeln!(log, "epoch {}: train bce {:.4} val acc {:.4}", e.epoch, e.train_loss, e.val_accuracy)?;
                last = (e.train_loss, e.val_accuracy);
            }
            with_common_meta(Checkpoint::from_module("riskflow", &model), &t).save(&dir.join("checkpoint"))?;
            summarize(cfg, log, t.epochs, last.0, last.1)?;
        }
        ModelKind::TerraFlow => {
            let recs = load_velocity(cfg, None)?;
            let (fz, split) = VelocityFeaturizer::prepare(&recs, plan.terraflow.window, DEFAULT_SPLIT)?;
            writeln!(log, "terraflow: {} train, {} val windows", split.train.len(), split.val.len())?;
            let mut model = TerraFlowModel::new(plan.terraflow, cfg.seed)?;
            let mut trainer = TerraFlowTrainer::new(&model, plan.loss, t)?;
            let name = plan.loss.name().replace('-', "_");
            let mut hist = csv_writer(create(&dir.join(HISTORY_FILE))?);
            hist.write_record([
                "epoch".to_string(),
                format!("train_{name}_loss"),
                format!("val_{name}_loss"),
                "val_mae".into(),
                "val_mae_m_yr".into(),
            ])?;
            let mut last = (f64::NAN, f64::NAN);
            for _ in 0..t.epochs {
                let e = trainer.run_epoch(&mut model, &split.train, &split.val)?;
                let phys = velocity_mae(&model, &fz, &split.val)?;
                hist.write_record([e.epoch.to_string(), f(e.train_loss), f(e.val_loss), f(e.val_mae), f(phys)])?;
                hist.flush()?;
                writeln!(log, "epoch {}: train {} {:.6} val MAE {phys:.3} m/yr", e.epoch, plan.loss.name(), e.train_loss)?;
                last = (e.train_loss, phys);
            }
            let c = plan.terraflow;
            with_common_meta(Checkpoint::from_module("terraflow", &model), &t)
                .with_meta("loss", plan.loss.name())
                .with_meta("tau", plan.tau)
                .with_meta("d_model", c.d_model)
                .with_meta("heads", c.heads)
                .with_meta("layers", c.layers)
                .with_meta("d_ff", c.d_ff)
                .with_meta("window", c.window)
                .with_meta("records", recs.len())
                .save(&dir.join("checkpoint"))?;
            summarize(cfg, log, t.epochs, last.0, last.1)?;
        }
        ModelKind::TempFlow => {
            let recs = load_temperature(cfg, cfg.lst, None)?;
            let (fz, split) = TemperatureFeaturizer::prepare(&recs, plan.lookback, 0, DEFAULT_SPLIT)?;
            writeln!(log, "tempflow: {} train, {} val windows", split.train.len(), split.val.len())?;
            let mut model = TempFlowModel::new(cfg.seed);
            let mut trainer = TempFlowTrainer::new(&model, t)?;
            let mut hist = csv_writer(create(&dir.join(HISTORY_FILE))?);
            hist.write_record(["epoch", "train_mse", "val_mse", "val_mae", "val_mae_c"])?;
            let scale = fz.lst.hi - fz.lst.lo;
            let mut last = (f64::NAN, f64::NAN);
            for _ in 0..t.epochs {
                let e = trainer.run_epoch(&mut model, &split.train, &split.val)?;
                let phys = e.val_mae * scale;
                hist.write_record([e.epoch.to_string(), f(e.train_mse), f(e.val_mse), f(e.val_mae), f(phys)])?;
                hist.flush()?;
                writeln!(log, "epoch {}: train mse {:.6} val MAE {phys:.3} C", e.epoch, e.train_mse)?;
                last = (e.train_mse, phys);
            }
            with_common_meta(Checkpoint::from_module("tempflow", &model), &t)
                .with_meta("lookback", plan.lookback)
                .with_meta("lst", lst_name(cfg.lst))
                .with_meta("records", recs.len())
                .save(&dir.join("checkpoint"))?;
            summarize(cfg, log, t.epochs, last.0, last.1)?;
        }
    }
    Ok(EXIT_OK)
}

fn lst_name(l: LstProduct) -> &'static str {
    match l {
        LstProduct::Day => "day",
        LstProduct::Night => "night",
    }
}

fn velocity_mae(model: &TerraFlowModel, fz: &VelocityFeaturizer, ws: &[VelocityWindow]) -> Result<f64> {
    if ws.is_empty() {
        return Ok(f64::NAN);
    }
    let pred = model.predict(ws)?;
    Ok(pred.iter().zip(ws).map(|(p, w)| (fz.to_velocity(*p) - fz.to_velocity(w.target())).abs()).sum::<f64>()
        / ws.len() as f64)
}

fn load_checkpoint(root: &Path, model: ModelKind) -> Result<Checkpoint> {
    let dir = checkpoint_dir(root, model);
    Checkpoint::load(&dir).map_err(|e| match e {
        Error::Io(io) => Error::invalid(format!("missing {model} checkpoint at {}: {io}", dir.display())),
        other => other,
    })
}

/// A trained TerraFlow with the scaler refitted on its training data.
struct TerraFlowRun {
    model: TerraFlowModel,
    fz: VelocityFeaturizer,
    recs: Vec<VelocityDailyRecord>,
    split: SequenceSplit<VelocityWindow>,
}

fn restore_terraflow(cfg: &RunConfig, ck: &Checkpoint) -> Result<TerraFlowRun> {
    let c = TerraFlowConfig {
        d_model: ck.meta_as("d_model")?,
        heads: ck.meta_as("heads")?,
        layers: ck.meta_as("layers")?,
        d_ff: ck.meta_as("d_ff")?,
        window: ck.meta_as("window")?,
        ..TerraFlowConfig::desk()
    };
    let mut model = TerraFlowModel::new(c, 0)?;
    ck.restore_into("terraflow", &mut model)?;
    let recs = load_velocity(cfg, Some(ck.meta_as("records")?))?;
    let (fz, split) = VelocityFeaturizer::prepare(&recs, c.window, DEFAULT_SPLIT)?;
    Ok(TerraFlowRun { model, fz, recs, split })
}

struct TempFlowRun {
    model: TempFlowModel,
    fz: TemperatureFeaturizer,
    recs: Vec<LstDailyRecord>,
    split: SequenceSplit<TemperatureWindow>,
}

fn restore_tempflow(cfg: &RunConfig, ck: &Checkpoint) -> Result<TempFlowRun> {
    let mut model = TempFlowModel::zeroed();
    ck.restore_into("tempflow", &mut model)?;
    let lst: LstProduct = ck.meta_as("lst")?;
    let recs = load_temperature(cfg, lst, Some(ck.meta_as("records")?))?;
    let (fz, split) = TemperatureFeaturizer::prepare(&recs, ck.meta_as("lookback")?, 0, DEFAULT_SPLIT)?;
    Ok(TempFlowRun { model, fz, recs, split })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn regression_eval(
    cfg: &RunConfig,
    log: &mut dyn Write,
    pred: Vec<f64>,
    target: Vec<f64>,
    train_targets: Vec<f64>,
    unit: &str,
) -> Result<()> {
    if pred.is_empty() || train_targets.is_empty() {
        return Err(Error::invalid("test or training split is empty"));
    }
    let s = RegressionSummary::compute(&pred, &target, mean(&train_targets))?;
    s.write_csv(cfg.model.as_str(), create(&model_dir(&cfg.out, cfg.model).join("metrics.csv"))?)?;
    writeln!(
        log,
        "{}: test MAE {:.4} {unit}, MSE {:.4}, mean-predictor MAE {:.4} (ratio {:.4}, n={})",
        cfg.model,
        s.mae,
        s.mse,
        s.baseline_mae,
        s.baseline_ratio(),
        s.n
    )?;
    Ok(())
}

pub fn eval(cfg: &RunConfig, log: &mut dyn Write) -> Result<i32> {
    let ck = load_checkpoint(&cfg.checkpoints, cfg.model)?;
    match cfg.model {
        ModelKind::RiskFlow => {
            let mut model = RiskFlowModel::zeroed();
            ck.restore_into("riskflow", &mut model)?;
            let set = load_images(cfg)?;
            let split = split_dataset(&set.labels(), DEFAULT_SPLIT, ck.meta_as("seed")?)?;
            let test = pick(&set, &split.test);
            let preds = model
                .predict(&test)?
                .into_iter()
                .map(|p| classify(p, 0.5).map(|c| c.as_label()))
                .collect::<Result<Vec<u8>>>()?;
            let truths: Vec<u8> = test.iter().map(ImageSample::label).collect();
            let cm = confusion(&preds, &truths)?;
            let r = report(&cm)?;
            let dir = model_dir(&cfg.out, cfg.model);
            write_class_report_csv(&r, create(&dir.join("metrics.csv"))?)?;
            write_confusion_csv(&cm, create(&dir.join("confusion.csv"))?)?;
            writeln!(
                log,
                "riskflow: test accuracy {:.4} on {} images (tp {} fp {} tn {} fn {})",
                r.accuracy, r.total, cm.tp, cm.fp, cm.tn, cm.fn_
            )?;
        }
        ModelKind::TerraFlow => {
            let run = restore_terraflow(cfg, &ck)?;
            let to_v = |ws: &[VelocityWindow]| ws.iter().map(|w| run.fz.to_velocity(w.target())).collect::<Vec<_>>();
            let pred = run.model.predict(&run.split.test)?.into_iter().map(|p| run.fz.to_velocity(p)).collect();
            regression_eval(cfg, log, pred, to_v(&run.split.test), to_v(&run.split.train), "m/yr")?;
        }
        ModelKind::TempFlow => {
            let run = restore_tempflow(cfg, &ck)?;
            let to_c = |ws: &[TemperatureWindow]| ws.iter().map(|w| run.fz.to_celsius(w.target())).collect::<Vec<_>>();
            let pred = run.model.predict(&run.split.test)?.into_iter().map(|p| run.fz.to_celsius(p)).collect();
            regression_eval(cfg, log, pred, to_c(&run.split.test), to_c(&run.split.train), "C")?;
        }
    }
    Ok(EXIT_OK)
}

/// One requested evaluation: a date and the index of its scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalDate {
    pub date: NaiveDate,
    pub image: usize,
}

/// Reads `date,image` rows.
pub fn read_dates_csv<R: std::io::Read>(input: R) -> Result<Vec<EvalDate>> {
    let mut rdr = csv::Reader::from_reader(input);
    if rdr.headers()?.iter().ne(["date", "image"]) {
        return Err(Error::Format("dates CSV must have header date,image".into()));
    }
    rdr.records()
        .enumerate()
        .map(|(i, row)| {
            let row = row?;
            let bad = |what: &str| Error::Format(format!("dates row {}: bad {what} '{}'", i + 1, row.as_slice()));
            Ok(EvalDate {
                date: row[0].parse().map_err(|_| bad("date"))?,
                image: row[1].trim().parse().map_err(|_| bad("image index"))?,
            })
        })
        .collect()
}

fn day_index<T>(recs: &[T], date: NaiveDate, get: impl Fn(&T) -> NaiveDate, what: &str) -> Result<usize> {
    recs.iter()
        .position(|r| get(r) == date)
        .ok_or_else(|| Error::invalid(format!("{date} is outside the {what} history")))
}

pub fn fuse(cfg: &RunConfig, log: &mut dyn Write) -> Result<i32> {
    let path = cfg.out.join("risk_report.csv");
    if cfg.replay {
        let rows = SEASON_2022
            .iter()
            .map(|r| r.replay(&cfg.thresholds, &cfg.calibration))
            .collect::<Result<Vec<_>>>()?;
        for (row, reference) in rows.iter().zip(&SEASON_2022) {
            writeln!(log, "{} {} (reference {})", row.date, row.decision, reference.decision)?;
        }
        write_report_csv(&rows, create(&path)?)?;
        return Ok(EXIT_OK);
    }
    for m in [ModelKind::RiskFlow, ModelKind::TerraFlow, ModelKind::TempFlow] {
        let manifest = checkpoint_dir(&cfg.checkpoints, m).join(MANIFEST);
        if !manifest.is_file() {
            return Err(Error::invalid(format!("missing {m} checkpoint: {}", manifest.display())));
        }
    }
    let dates = match &cfg.dates {
        Some(p) => read_dates_csv(File::open(p).map_err(|e| Error::invalid(format!("cannot read {}: {e}", p.display())))?)?,
        None => Vec::new(),
    };
    let mut rows = Vec::with_capacity(dates.len());
    if !dates.is_empty() {
        let mut vision = RiskFlowModel::zeroed();
        load_checkpoint(&cfg.checkpoints, ModelKind::RiskFlow)?.restore_into("riskflow", &mut vision)?;
        let terra = restore_terraflow(cfg, &load_checkpoint(&cfg.checkpoints, ModelKind::TerraFlow)?)?;
        let temp = restore_tempflow(cfg, &load_checkpoint(&cfg.checkpoints, ModelKind::TempFlow)?)?;
        let images = load_images(cfg)?;
        for d in &dates {
            let sample = images
                .samples
                .get(d.image)
                .ok_or_else(|| Error::invalid(format!("image index {} outside 0..{}", d.image, images.len())))?;
            let vision_prob = vision.predict(std::slice::from_ref(sample))?[0];
            let vi = day_index(&terra.recs, d.date, |r| r.date, "velocity")?;
            let vw = terra.fz.window_at(&terra.recs, vi)?;
            let velocity = terra.fz.to_velocity(terra.model.forward(&vw)?);
            let ti = day_index(&temp.recs, d.date, |r| r.date, "temperature")?;
            let span = ANOMALY_BASELINE + 4;
            let with_history = ti + 1 >= temp.fz.lookback + span;
            let targets: Vec<usize> = if with_history { (ti + 1 - span..=ti).collect() } else { vec![ti] };
            let forecasts: Vec<f64> = temp
                .model
                .predict(&temp.fz.windows_at(&temp.recs, &targets)?)?
                .into_iter()
                .map(|p| temp.fz.to_celsius(p))
                .collect();
            let temperature = *forecasts.last().expect("one target at least");
            let mut row = RiskReport::assess(d.date, vision_prob, velocity, temperature, &cfg.calibration, &cfg.thresholds)?;
            if with_history {
                let a = thermal_anomaly(&forecasts, ANOMALY_BASELINE, cfg.anomaly_z, None)?;
                row.thermal_anomaly = a.flags.last().copied();
            }
            writeln!(log, "{} vision {:.4} fused {:.4} {}", row.date, row.vision_prob, row.fused_prob, row.decision)?;
            rows.push(row);
        }
    }
    write_report_csv(&rows, create(&path)?)?;
    writeln!(log, "risk_report.csv: {} rows", rows.len())?;
    Ok(EXIT_OK)
}

pub fn gradcheck(cfg: &RunConfig, log: &mut dyn Write) -> Result<i32> {
    let cases = run_suite(cfg.seed);
    writeln!(log, "{:<28} {:>14}  status", "op", "max_rel_error")?;
    for c in &cases {
        writeln!(log, "{:<28} {:>14.3e}  {}", c.name, c.max_rel_error, if c.passed { "pass" } else { "FAIL" })?;
    }
    let failed = cases.iter().filter(|c| !c.passed).count();
    writeln!(log, "{} ops, {failed} failed (tolerance {SUITE_TOLERANCE:e})", cases.len())?;
    Ok(if failed == 0 { EXIT_OK } else { EXIT_NUMERICAL })
}

pub fn ablate(cfg: &RunConfig, log: &mut dyn Write) -> Result<i32> {
    let plan = AblationPlan::from_config(cfg)?;
    let result = run_ablation(&plan, log)?;
    result.write_csv(create(&cfg.out.join("ablation.csv"))?)?;
    let mut verdict = create(&cfg.out.join("ablation_verdict.txt"))?;
    for line in result.verdict_lines() {
        writeln!(log, "{line}")?;
        writeln!(verdict, "{line}")?;
    }
    verdict.flush()?;
    Ok(EXIT_OK)
}
