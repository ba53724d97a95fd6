//! On-disk training state: a directory of tensor files and JSON sidecars.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{OptimizerState, TrainConfig};
use crate::codec::ChannelStats;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::{read_tensors, write_tensors, Tensor};

const MODEL: &str = "model.fqw";
const MODEL_CFG: &str = "model.json";
const OPTIMIZER: &str = "optimizer.fqw";
const TRAIN: &str = "train.json";
const STATS: &str = "stats.json";

#[derive(Serialize, Deserialize)]
struct TrainSidecar {
    config: TrainConfig,
    step: u64,
}

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub train: TrainConfig,
    pub stats: Option<ChannelStats>,
}

impl Checkpoint {
    /// Writes every file under a temporary name first, then renames, so an
    /// interrupted save leaves the previous files intact.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut staged = Vec::new();
        let mut stage = |name: &str, write: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
            let tmp = dir.join(format!("{name}.tmp"));
            write(&tmp)?;
            staged.push((tmp, dir.join(name)));
            Ok(())
        };
        stage(MODEL, &|p| self.params.save(p))?;
        stage(MODEL_CFG, &|p| Ok(fs::write(p, serde_json::to_string_pretty(&self.model)?)?))?;
        stage(OPTIMIZER, &|p| {
            let named: Vec<(String, &Tensor)> = self
                .optimizer
                .m
                .iter()
                .map(|(k, t)| (format!("m/{k}"), t))
                .chain(self.optimizer.v.iter().map(|(k, t)| (format!("v/{k}"), t)))
                .collect();
            write_tensors(BufWriter::new(fs::File::create(p)?), named.iter().map(|(k, t)| (k.as_str(), *t)))
        })?;
        stage(TRAIN, &|p| {
            let side = TrainSidecar { config: self.train.clone(), step: self.optimizer.step };
            Ok(fs::write(p, serde_json::to_string_pretty(&side)?)?)
        })?;
        if let Some(stats) = &self.stats {
            stage(STATS, &|p| stats.save(p))?;
        }
        for (tmp, dst) in staged {
            fs::rename(tmp, dst)?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let model: ModelConfig = serde_json::from_str(&fs::read_to_string(dir.join(MODEL_CFG))?)?;
        let params = ModelParams::load(dir.join(MODEL))?;
        params.validate(&model)?;
        let side: TrainSidecar = serde_json::from_str(&fs::read_to_string(dir.join(TRAIN))?)?;
        let mut optimizer = OptimizerState { step: side.step, ..Default::default() };
        let file = BufReader::new(fs::File::open(dir.join(OPTIMIZER))?);
        for (name, t) in read_tensors(file)? {
            match name.split_once('/') {
                Some(("m", k)) => optimizer.m.insert(k.to_string(), t),
                Some(("v", k)) => optimizer.v.insert(k.to_string(), t),
                _ => return Err(Error::Format(format!("unexpected optimizer tensor `{name}`"))),
            };
        }
        let stats_path = dir.join(STATS);
        let stats = if stats_path.exists() { Some(ChannelStats::load(stats_path)?) } else { None };
        Ok(Self { model, params, optimizer, train: side.config, stats })
    }
}
