//! Run configuration: `key = value` files merged with command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fusion::{DecisionRule, RiskCalibration, Thresholds};
use crate::nn::TrainConfig;
use crate::optim::LossKind;
use crate::terraflow::TerraFlowConfig;

pub const SEED_ENV: &str = "ICEWATCH_SEED";

/// Every key accepted in a config file or via flags.
pub const KNOWN_KEYS: [&str; 31] = [
    "seed",
    "model",
    "profile",
    "epochs",
    "batch",
    "lr",
    "tau",
    "lookback",
    "loss",
    "out",
    "data",
    "checkpoints",
    "dates",
    "replay",
    "days",
    "base_positives",
    "base_negatives",
    "images_per_class",
    "max_cloud",
    "lst",
    "ablation_seeds",
    "ablation_tempflow_epochs",
    "ablation_terraflow_epochs",
    "decision_rule",
    "vision_threshold",
    "fusion_threshold",
    "velocity_pivot",
    "velocity_slope",
    "temperature_pivot",
    "temperature_slope",
    "anomaly_z",
];

/// Raw string settings; later insertions win.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Parses `key = value` lines. `#` starts a comment; blank lines are
    /// ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {}: expected 'key = value'", n + 1)))?;
            s.set(k.trim(), v.trim()).map_err(|e| Error::invalid(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(s)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::invalid(format!("unknown setting '{key}'")));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    /// Overlays `other` on top of `self`.
    pub fn merge(&mut self, other: &Settings) {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), v.clone());
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| Error::invalid(format!("setting '{key}' has invalid value '{raw}'"))),
        }
    }

    fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    RiskFlow,
    TerraFlow,
    TempFlow,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::RiskFlow => "riskflow",
            ModelKind::TerraFlow => "terraflow",
            ModelKind::TempFlow => "tempflow",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "riskflow" => Ok(ModelKind::RiskFlow),
            "terraflow" => Ok(ModelKind::TerraFlow),
            "tempflow" => Ok(ModelKind::TempFlow),
            other => Err(Error::invalid(format!("unknown model '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Profile {
    #[default]
    Desk,
    Paper,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::invalid(format!("unknown profile '{other}'"))),
        }
    }
}

/// Which LST product TempFlow reads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LstProduct {
    Day,
    #[default]
    Night,
}

impl LstProduct {
    pub fn file_name(self) -> &'static str {
        match self {
            LstProduct::Day => "temperature.csv",
            LstProduct::Night => "temperature_night.csv",
        }
    }
}

impl FromStr for LstProduct {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "day" => Ok(LstProduct::Day),
            "night" => Ok(LstProduct::Night),
            other => Err(Error::invalid(format!("unknown LST product '{other}'"))),
        }
    }
}

/// Hyperparameters after profile expansion and overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainPlan {
    pub train: TrainConfig,
    pub loss: LossKind,
    pub tau: f64,
    pub lookback: usize,
    pub terraflow: TerraFlowConfig,
}

/// Sizes of the generated datasets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DataPlan {
    pub days: usize,
    pub base_positives: usize,
    pub base_negatives: usize,
    pub images_per_class: usize,
    pub max_cloud: f64,
}

impl Default for DataPlan {
    fn default() -> Self {
        Self { days: 3650, base_positives: 5, base_negatives: 120, images_per_class: 300, max_cloud: 0.4 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelKind,
    pub profile: Profile,
    pub out: PathBuf,
    pub data: PathBuf,
    pub checkpoints: PathBuf,
    pub dates: Option<PathBuf>,
    pub replay: bool,
    pub lst: LstProduct,
    pub data_plan: DataPlan,
    pub thresholds: Thresholds,
    pub calibration: RiskCalibration,
    pub anomaly_z: f64,
    pub ablation_seeds: usize,
    pub ablation_tempflow_epochs: usize,
    pub ablation_terraflow_epochs: usize,
    settings: Settings,
}

impl RunConfig {
    /// Builds the configuration. `env_seed` is used only when neither the
    /// flags nor the file set a seed.
    pub fn from_settings(settings: Settings, env_seed: Option<&str>) -> Result<Self> {
        let seed = match (settings.get::<u64>("seed")?, env_seed) {
            (Some(s), _) => s,
            (None, Some(raw)) => raw
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("{SEED_ENV}='{raw}' is not an unsigned integer")))?,
            (None, None) => 0,
        };
        let out: PathBuf = settings.get_or("out", PathBuf::from("icewatch-out"))?;
        let data = settings.get("data")?.unwrap_or_else(|| out.clone());
        let checkpoints = settings.get("checkpoints")?.unwrap_or_else(|| out.clone());
        let d = DataPlan::default();
        let data_plan = DataPlan {
            days: settings.get_or("days", d.days)?,
            base_positives: settings.get_or("base_positives", d.base_positives)?,
            base_negatives: settings.get_or("base_negatives", d.base_negatives)?,
            images_per_class: settings.get_or("images_per_class", d.images_per_class)?,
            max_cloud: settings.get_or("max_cloud", d.max_cloud)?,
        };
        let th = Thresholds::default();
        let cal = RiskCalibration::default();
        let rule: DecisionRule = settings.get_or("decision_rule", DecisionRule::VisionGated)?;
        let cfg = Self {
            seed,
            model: settings.get_or("model", ModelKind::TempFlow)?,
            profile: settings.get_or("profile", Profile::Desk)?,
            out,
            data,
            checkpoints,
            dates: settings.get("dates")?,
            replay: settings.get_or("replay", false)?,
            lst: settings.get_or("lst", LstProduct::Night)?,
            data_plan,
            thresholds: Thresholds {
                vision: settings.get_or("vision_threshold", th.vision)?,
                fusion: settings.get_or("fusion_threshold", th.fusion)?,
                rule,
            },
            calibration: RiskCalibration {
                v0: settings.get_or("velocity_pivot", cal.v0)?,
                s_v: settings.get_or("velocity_slope", cal.s_v)?,
                t0: settings.get_or("temperature_pivot", cal.t0)?,
                s_t: settings.get_or("temperature_slope", cal.s_t)?,
            },
            anomaly_z: settings.get_or("anomaly_z", 2.0)?,
            ablation_seeds: settings.get_or("ablation_seeds", 1)?,
            ablation_tempflow_epochs: settings.get_or("ablation_tempflow_epochs", 10)?,
            ablation_terraflow_epochs: settings.get_or("ablation_terraflow_epochs", 12)?,
            settings,
        };
        cfg.calibration.validate()?;
        Ok(cfg)
    }

    /// Profile defaults for the selected model with overrides applied.
    pub fn plan(&self) -> Result<TrainPlan> {
        self.plan_for(self.model)
    }

    pub fn plan_for(&self, model: ModelKind) -> Result<TrainPlan> {
        let paper = self.profile == Profile::Paper;
        let (epochs, batch, lr) = match (model, paper) {
            (ModelKind::RiskFlow, _) => (5, 16, 1e-3),
            (ModelKind::TerraFlow, false) => (20, 64, 1e-3),
            (ModelKind::TerraFlow, true) => (50, 2048, 1e-5),
            (ModelKind::TempFlow, _) => (10, 32, 1e-3),
        };
        let s = &self.settings;
        let train = TrainConfig {
            epochs: s.get_or("epochs", epochs)?,
            batch_size: s.get_or("batch", batch)?,
            lr: s.get_or("lr", lr)?,
            seed: self.seed,
        };
        train.validate()?;
        let tau = s.get_or("tau", 0.5)?;
        let loss = LossKind::parse(&s.get_or("loss", "quantile".to_string())?, tau)?;
        let lookback = s.get_or("lookback", crate::tempflow::DEFAULT_LOOKBACK)?;
        if lookback == 0 {
            return Err(Error::invalid("lookback must be positive"));
        }
        let terraflow = if paper { TerraFlowConfig::full() } else { TerraFlowConfig::desk() };
        Ok(TrainPlan { train, loss, tau, lookback, terraflow })
    }
}
