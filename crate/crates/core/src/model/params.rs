use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::{BlockKind, KERNEL, SHRINK_KERNEL};
use crate::error::{invalid, Result};
use crate::tensor::{read_tensors, write_tensors, Graph, Tensor, Var};

/// How a tensor starts out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// He-normal with the given fan-in.
    Kaiming { fan_in: usize },
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn conv(out: &mut Vec<ParamSpec>, name: &str, oc: usize, ic: usize, k: usize, zero: bool) {
    let init = if zero { Init::Zero } else { Init::Kaiming { fan_in: ic * k * k } };
    out.push(ParamSpec { name: format!("{name}.w"), shape: vec![oc, ic, k, k], init });
    out.push(ParamSpec { name: format!("{name}.b"), shape: vec![oc], init: Init::Zero });
}

fn block(out: &mut Vec<ParamSpec>, prefix: &str, kind: BlockKind, f: usize) {
    match kind {
        BlockKind::Residual => {
            conv(out, &format!("{prefix}.conv1"), f, f, KERNEL, false);
            conv(out, &format!("{prefix}.conv2"), f, f, KERNEL, true);
        }
        BlockKind::Deformable => {
            conv(out, &format!("{prefix}.conv1"), f, f, KERNEL, false);
            conv(out, &format!("{prefix}.offset"), 2 * KERNEL * KERNEL, f, KERNEL, true);
            conv(out, &format!("{prefix}.conv2"), f, f, KERNEL, true);
        }
        BlockKind::Depthwise => {
            let init = Init::Kaiming { fan_in: KERNEL * KERNEL };
            out.push(ParamSpec { name: format!("{prefix}.conv1.w"), shape: vec![f, 1, KERNEL, KERNEL], init });
            out.push(ParamSpec { name: format!("{prefix}.conv1.b"), shape: vec![f], init: Init::Zero });
            conv(out, &format!("{prefix}.conv2"), f, f, 1, true);
        }
    }
}

fn group(out: &mut Vec<ParamSpec>, prefix: &str, kind: BlockKind, cfg: &ModelConfig) {
    for b in 0..cfg.blocks_per_group {
        block(out, &format!("{prefix}.b{b}"), kind, cfg.feature_channels);
    }
    if cfg.blocks_per_group > 0 {
        conv(out, &format!("{prefix}.tail"), cfg.feature_channels, cfg.feature_channels, KERNEL, true);
    }
}

/// Every learnable tensor of the network in a fixed order.
pub fn param_layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let f = cfg.feature_channels;
    let c = cfg.map_channels();
    let mut out = Vec::new();

    conv(&mut out, "sen.head", f, 1, KERNEL, false);
    for (i, kind) in super::sen_groups(cfg).into_iter().enumerate() {
        group(&mut out, &format!("sen.g{i}"), kind, cfg);
    }
    for s in 0..cfg.shrink_stages {
        conv(&mut out, &format!("sen.shrink{s}"), f, f, SHRINK_KERNEL, false);
    }
    conv(&mut out, "sen.proj", c, f, 1, false);

    conv(&mut out, "frn.head", f, c, KERNEL, false);
    for (i, kind) in super::frn_groups(cfg).into_iter().enumerate() {
        group(&mut out, &format!("frn.g{i}"), kind, cfg);
    }
    conv(&mut out, "frn.tail", c, f, KERNEL, true);
    out
}

/// Named learnable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn from_tensors(tensors: impl IntoIterator<Item = (String, Tensor)>) -> Self {
        Self { tensors: tensors.into_iter().collect() }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn insert(&mut self, name: &str, t: Tensor) {
        self.tensors.insert(name.to_string(), t);
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Checks names, shapes and finiteness against the layout of `cfg`.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let layout = param_layout(cfg);
        if layout.len() != self.tensors.len() {
            return Err(invalid!("checkpoint has {} tensors, config expects {}", self.tensors.len(), layout.len()));
        }
        for spec in layout {
            let t = self.get(&spec.name).ok_or_else(|| invalid!("missing parameter `{}`", spec.name))?;
            if t.shape() != spec.shape {
                return Err(invalid!("parameter `{}` has shape {:?}, expected {:?}", spec.name, t.shape(), spec.shape));
            }
            if !t.is_finite() {
                return Err(invalid!("parameter `{}` is not finite", spec.name));
            }
        }
        Ok(())
    }

    /// Inserts every tensor into the graph.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|(k, t)| (k.clone(), if trainable { g.param(t.clone()) } else { g.constant(t.clone()) }))
            .collect();
        BoundParams { vars }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_tensors(file, self.tensors.iter().map(|(k, v)| (k.as_str(), v)))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(Self::from_tensors(read_tensors(file)?))
    }
}

/// Graph handles for a bound [`ModelParams`].
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    /// Wraps handles that are already in a graph.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self { vars: vars.into_iter().collect() }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| invalid!("missing parameter `{name}`"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// Deterministic initialization: He-normal conv weights scaled for the
/// leaky slope, zero biases, and zeros for every residual tail and offset
/// branch so that each block, group and the frequency branch start as
/// identities.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gain = (2.0 / (1.0 + cfg.leaky_slope * cfg.leaky_slope)).sqrt();
    let mut tensors = BTreeMap::new();
    for spec in param_layout(cfg) {
        let mut t = Tensor::zeros(&spec.shape);
        if let Init::Kaiming { fan_in } = spec.init {
            let normal = Normal::new(0.0, gain / (fan_in as f64).sqrt()).map_err(|e| invalid!("{e}"))?;
            t.data_mut().iter_mut().for_each(|v| *v = normal.sample(&mut rng));
        }
        tensors.insert(spec.name, t);
    }
    Ok(ModelParams { tensors })
}
