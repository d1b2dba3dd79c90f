//! Model checkpoints: a directory holding `manifest.txt` and one IWT1 file
//! per parameter tensor, listed in layer order.
//!
//! ```text
//! model riskflow
//! meta epochs 5
//! tensor conv1.kernel 00_conv1.kernel.iwt 32x6x3x3
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Module;
use crate::tensor::{read_tensor_file, write_tensor_file, Tensor};

pub const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: String,
    /// Free-form key/value pairs, kept in insertion order.
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

fn check_token(s: &str, what: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        return Err(Error::invalid(format!("checkpoint {what} '{s}' must be a nonempty word")));
    }
    Ok(())
}

impl Checkpoint {
    pub fn from_module<M: Module + ?Sized>(model: &str, m: &M) -> Self {
        Self {
            model: model.into(),
            meta: Vec::new(),
            tensors: m.named_params().into_iter().map(|(n, t)| (n, t.clone())).collect(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.into(), value.to_string()));
        self
    }

    pub fn get_meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Parsed metadata value; missing or malformed keys are format errors.
    pub fn meta_as<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get_meta(key).ok_or_else(|| Error::Format(format!("checkpoint lacks '{key}'")))?;
        raw.parse().map_err(|_| Error::Format(format!("checkpoint '{key}' has bad value '{raw}'")))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        check_token(&self.model, "model")?;
        std::fs::create_dir_all(dir)?;
        let mut manifest = format!("model {}\n", self.model);
        for (k, v) in &self.meta {
            check_token(k, "meta key")?;
            check_token(v, "meta value")?;
            writeln!(manifest, "meta {k} {v}").expect("string write");
        }
        for (i, (name, t)) in self.tensors.iter().enumerate() {
            check_token(name, "tensor name")?;
            let file = format!("{i:02}_{name}.iwt");
            write_tensor_file(dir.join(&file), t)?;
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            writeln!(manifest, "tensor {name} {file} {}", dims.join("x")).expect("string write");
        }
        std::fs::write(dir.join(MANIFEST), manifest)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let model = match lines.next().map(|l| l.split_whitespace().collect::<Vec<_>>()) {
            Some(w) if w.len() == 2 && w[0] == "model" => w[1].to_string(),
            _ => return Err(Error::Format("manifest must start with 'model <name>'".into())),
        };
        let mut ck = Self { model, meta: Vec::new(), tensors: Vec::new() };
        for line in lines {
            let w: Vec<&str> = line.split_whitespace().collect();
            match w.as_slice() {
                ["meta", k, v] => ck.meta.push((k.to_string(), v.to_string())),
                ["tensor", name, file, dims] => {
                    if file.contains('/') || file.contains("..") {
                        return Err(Error::Format(format!("tensor file '{file}' must be a plain name")));
                    }
                    let t = read_tensor_file(dir.join(file))?;
                    let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
                    if shape.join("x") != *dims {
                        return Err(Error::Format(format!("{name}: manifest says {dims}, file holds {}", shape.join("x"))));
                    }
                    ck.tensors.push((name.to_string(), t));
                }
                _ => return Err(Error::Format(format!("bad manifest line '{line}'"))),
            }
        }
        Ok(ck)
    }

    /// Copies tensors into `m`, which must have the same names and shapes
    /// in the same order.
    pub fn restore_into<M: Module + ?Sized>(&self, model: &str, m: &mut M) -> Result<()> {
        if self.model != model {
            return Err(Error::Format(format!("checkpoint holds a {} model, not {model}", self.model)));
        }
        let names: Vec<(String, Vec<usize>)> =
            m.named_params().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
        if names.len() != self.tensors.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, model expects {}",
                self.tensors.len(),
                names.len()
            )));
        }
        for ((name, shape), (cname, t)) in names.iter().zip(&self.tensors) {
            if name != cname || shape.as_slice() != t.shape() {
                return Err(Error::Format(format!("checkpoint tensor {cname} {:?} does not fit {name} {shape:?}", t.shape())));
            }
        }
        for (dst, (_, src)) in m.params_mut().into_iter().zip(&self.tensors) {
            *dst = src.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riskflow::RiskFlowModel;
    use crate::tempflow::TempFlowModel;

    #[test]
    fn round_trip_preserves_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let model = TempFlowModel::new(3);
        let ck = Checkpoint::from_module("tempflow", &model).with_meta("lookback", 30);
        ck.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back.meta_as::<usize>("lookback").unwrap(), 30);
        let mut restored = TempFlowModel::zeroed();
        back.restore_into("tempflow", &mut restored).unwrap();
        for ((_, a), (_, b)) in model.named_params().iter().zip(restored.named_params()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*x as f32 as f64, *y);
            }
        }
        let manifest = std::fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert!(manifest.starts_with("model tempflow\nmeta lookback 30\ntensor lstm1.W_f "));
    }

    #[test]
    fn riskflow_manifest_lists_layers_in_order() {
        let dir = tempfile::tempdir().unwrap();
        Checkpoint::from_module("riskflow", &RiskFlowModel::zeroed()).save(dir.path()).unwrap();
        let manifest = std::fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        let dims: Vec<&str> = manifest.lines().skip(1).map(|l| l.split(' ').nth(3).unwrap()).collect();
        assert_eq!(dims, ["32x6x3x3", "32", "64x32x3x3", "64", "57600x64", "64", "64x1", "1"]);
    }

    #[test]
    fn mismatched_model_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        Checkpoint::from_module("tempflow", &TempFlowModel::zeroed()).save(dir.path()).unwrap();
        let ck = Checkpoint::load(dir.path()).unwrap();
        assert!(ck.restore_into("riskflow", &mut RiskFlowModel::zeroed()).is_err());
        let renamed = Checkpoint { model: "riskflow".into(), ..ck };
        assert!(renamed.restore_into("riskflow", &mut RiskFlowModel::zeroed()).is_err());
        assert!(Checkpoint::load(&dir.path().join("missing")).is_err());
    }
}
