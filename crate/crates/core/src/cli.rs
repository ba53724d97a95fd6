//! Command-line front end. Exit codes: 0 success, 1 runtime failure,
//! 2 invalid input or configuration, 3 selfcheck failure.

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::codec::{denormalize, ChannelStats, FreqMaps, Image, RegionSpec, BLOCK_SIZE};
use crate::enhance::{ChannelSelection, FillMode, MergeJob};
use crate::error::{invalid, Error, Result};
use crate::loss::{region_residual_profile, table1_weights, ResidualProfile, WeightProfile};
use crate::model::{init_params, ModelConfig};
use crate::pipeline::{infer, luma_maps, upscale_ycc, SCALE};
use crate::selfcheck::{self, SelfCheckConfig};
use crate::train::{
    evaluate, image_stats, make_patch_pairs, pair_stats, prepare_sample, train, Checkpoint, EvalContext,
    OptimizerState, TrainConfig,
};

#[derive(Debug, Parser)]
#[command(name = "freqnet", version, about = "DCT-domain 4x super-resolution")]
pub struct Cli {
    /// JSON file with optional `model` and `train` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Side of the retained low-frequency region.
    #[arg(long, global = true)]
    pub r: Option<usize>,
    /// Charbonnier epsilon.
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    /// Weight of the spatial branch.
    #[arg(long, global = true)]
    pub w1: Option<f64>,
    /// Weight of the frequency branch.
    #[arg(long, global = true)]
    pub w2: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-channel statistics of the upscaled-LR maps of a PNG directory.
    Stats {
        train_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on random patches of a PNG directory.
    Train {
        train_dir: PathBuf,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
        /// Precomputed statistics; computed from the patches otherwise.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Resume from this checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Super-resolve one LR image.
    Infer {
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the predicted (denormalized) maps.
        #[arg(long)]
        maps_out: Option<PathBuf>,
    },
    /// Degrade every HR image of a directory, super-resolve and score it.
    Eval {
        eval_dir: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Report path; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Residual profile of aligned pairs under growing region selections.
    Weights {
        /// Directory with `hr/` and `lr/` subdirectories of equally named PNGs.
        pairs_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replace selected channels of an SR image with network predictions.
    Merge {
        #[arg(long)]
        sr: PathBuf,
        /// Maps written by `infer --maps-out`.
        #[arg(long)]
        maps: PathBuf,
        /// The LR input; needed for `--fill-mode lr`.
        #[arg(long)]
        lr: Option<PathBuf>,
        /// Statistics for denormalizing normalized maps.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// e.g. `0-8,annulus:6-5,annulus:7-6`.
        #[arg(long)]
        selection: String,
        #[arg(long, default_value = "lr")]
        fill_mode: FillMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in numerical checks.
    Selfcheck,
}

impl clap::ValueEnum for FillMode {
    fn value_variants<'a>() -> &'a [Self] {
        &[FillMode::Lr, FillMode::Sr]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            FillMode::Lr => "lr",
            FillMode::Sr => "sr",
        }))
    }
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FileConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Cli {
    /// Built-in defaults, overridden by the config file, overridden by flags.
    pub fn resolve(&self) -> Result<FileConfig> {
        let mut cfg = match &self.config {
            Some(p) => serde_json::from_str(&read_input(p)?)?,
            None => FileConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(r) = self.r {
            cfg.model.region = r;
        }
        if let Some(e) = self.epsilon {
            cfg.train.epsilon = e;
        }
        if let Some(w) = self.w1 {
            cfg.model.w1 = w;
        }
        if let Some(w) = self.w2 {
            cfg.model.w2 = w;
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        RegionSpec::new(cfg.model.region)?;
        Ok(cfg)
    }
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInput(_) | Error::Format(_) | Error::Json(_) | Error::Image(_) => 2,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

pub fn run(cli: &Cli) -> Result<i32> {
    let cfg = cli.resolve()?;
    eprintln!("effective config: {}", serde_json::to_string(&cfg)?);
    match &cli.command {
        Command::Stats { train_dir, out } => cmd_stats(&cfg, train_dir, out),
        Command::Train { train_dir, out, stats, resume, iterations } => {
            cmd_train(cfg, train_dir, out, stats.as_deref(), resume.as_deref(), *iterations)
        }
        Command::Infer { input, checkpoint, out, maps_out } => cmd_infer(cli, input, checkpoint, out, maps_out.as_deref()),
        Command::Eval { eval_dir, checkpoint, out } => cmd_eval(cli, eval_dir, checkpoint, out.as_deref()),
        Command::Weights { pairs_dir, out } => cmd_weights(&cfg, pairs_dir, out),
        Command::Merge { sr, maps, lr, stats, selection, fill_mode, out } => {
            cmd_merge(sr, maps, lr.as_deref(), stats.as_deref(), selection, *fill_mode, out)
        }
        Command::Selfcheck => cmd_selfcheck(&cfg),
    }
    .map(|()| 0)
    .or_else(|e| match e {
        Error::State(ref m) if m == SELFCHECK_FAILED => Ok(3),
        e => Err(e),
    })
}

const SELFCHECK_FAILED: &str = "selfcheck failed";

fn read_input(p: &Path) -> Result<String> {
    fs::read_to_string(p).map_err(|e| invalid!("cannot read {}: {e}", p.display()))
}

/// Every PNG of a directory, sorted by file name.
pub fn load_png_dir(dir: &Path) -> Result<Vec<(String, Image)>> {
    let entries = fs::read_dir(dir).map_err(|e| invalid!("cannot read directory {}: {e}", dir.display()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(invalid!("no PNG files in {}", dir.display()));
    }
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, Image::load_png(&p)?))
        })
        .collect()
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(fs::write(path, serde_json::to_string_pretty(value)?)?)
}

fn cmd_stats(cfg: &FileConfig, dir: &Path, out: &Path) -> Result<()> {
    let images: Vec<Image> = load_png_dir(dir)?.into_iter().map(|(_, i)| i).collect();
    let stats = image_stats(&images, RegionSpec::new(cfg.model.region)?)?;
    stats.save(out)?;
    let mean_std = stats.stds.iter().sum::<f64>() / stats.stds.len() as f64;
    println!("{} images, {} blocks, R = {}, mean std {mean_std:.4}", images.len(), stats.sample_count, stats.r);
    Ok(())
}

fn cmd_train(
    mut cfg: FileConfig,
    dir: &Path,
    out: &Path,
    stats_path: Option<&Path>,
    resume: Option<&Path>,
    iterations: Option<usize>,
) -> Result<()> {
    if let Some(n) = iterations {
        cfg.train.iterations = n;
    }
    let region = RegionSpec::new(cfg.model.region)?;
    let images: Vec<Image> = load_png_dir(dir)?.into_iter().map(|(_, i)| i).collect();
    let pairs = make_patch_pairs(&images, &cfg.train, cfg.train.seed)?;
    if pairs.is_empty() {
        return Err(invalid!("no image in {} is large enough for {}px patches", dir.display(), cfg.train.hr_patch));
    }
    let stats = match stats_path {
        Some(p) => ChannelStats::load(p)?,
        None => pair_stats(&pairs, region)?,
    };
    let (params, optimizer) = match resume {
        Some(dir) => {
            let ck = Checkpoint::load(dir)?;
            if ck.model != cfg.model {
                return Err(invalid!("resumed checkpoint was trained with a different model configuration"));
            }
            (ck.params, ck.optimizer)
        }
        None => {
            let p = init_params(&cfg.model, cfg.train.seed)?;
            let o = OptimizerState::new(&p);
            (p, o)
        }
    };
    let samples = pairs.iter().map(|p| prepare_sample(p, &stats)).collect::<Result<Vec<_>>>()?;
    println!("{} patches from {} images, {} parameters", samples.len(), images.len(), params.numel());
    let outcome = train(&cfg.model, &cfg.train, &samples, &stats, params, optimizer, Some(out))?;
    let mut log = BufWriter::new(fs::File::create(out.join("metrics.jsonl"))?);
    for rec in &outcome.log {
        writeln!(log, "{}", serde_json::to_string(rec)?)?;
    }
    log.flush()?;
    if let Some(last) = outcome.log.last() {
        println!("iteration {}: l_freq {:.6e}, frm {:.3}", last.iter, last.l_freq, last.frm);
    }
    Ok(())
}

/// A checkpoint with flag overrides for the combine weights applied.
fn load_checkpoint(cli: &Cli, dir: &Path) -> Result<(Checkpoint, ChannelStats)> {
    let mut ck = Checkpoint::load(dir)?;
    if let Some(w) = cli.w1 {
        ck.model.w1 = w;
    }
    if let Some(w) = cli.w2 {
        ck.model.w2 = w;
    }
    ck.model.validate()?;
    let stats = ck.stats.clone().ok_or_else(|| invalid!("checkpoint {} has no statistics", dir.display()))?;
    Ok((ck, stats))
}

fn cmd_infer(cli: &Cli, input: &Path, checkpoint: &Path, out: &Path, maps_out: Option<&Path>) -> Result<()> {
    let (ck, stats) = load_checkpoint(cli, checkpoint)?;
    let lr = Image::load_png(input)?;
    let lr = if lr.width % (BLOCK_SIZE / SCALE) != 0 || lr.height % (BLOCK_SIZE / SCALE) != 0 {
        let c = lr.center_crop_to_multiple(BLOCK_SIZE / SCALE)?;
        log::warn!("LR input {}x{} center-cropped to {}x{}", lr.width, lr.height, c.width, c.height);
        c
    } else {
        lr
    };
    let result = infer(&ck.params, &ck.model, &stats, &lr)?;
    result.image.quantized().save_png(out)?;
    if let Some(p) = maps_out {
        let maps = denormalize(&result.maps_sr, &stats)?;
        maps.write_to(BufWriter::new(fs::File::create(p)?))?;
    }
    Ok(())
}

fn cmd_eval(cli: &Cli, dir: &Path, checkpoint: &Path, out: Option<&Path>) -> Result<()> {
    let (ck, stats) = load_checkpoint(cli, checkpoint)?;
    let mut weights = ck.train.weights.profile(ck.model.region)?;
    let mut charbonnier = ck.train.charbonnier()?;
    if let Some(e) = cli.epsilon {
        charbonnier = crate::loss::CharbonnierParams::new(e)?;
    }
    if weights.r != ck.model.region {
        weights = WeightProfile::uniform(ck.model.region);
    }
    let ctx = EvalContext { stats, stats_id: checkpoint.join("stats.json").display().to_string(), weights, charbonnier };
    let images = load_png_dir(dir)?;
    let report = evaluate(&ck.params, &ck.model, &ctx, &images)?;
    match out {
        Some(p) => write_json(p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct WeightsReport<'a> {
    residual_profile: &'a ResidualProfile,
    reference_profile: WeightProfile,
}

fn cmd_weights(cfg: &FileConfig, dir: &Path, out: &Path) -> Result<()> {
    let hr = load_png_dir(&dir.join("hr"))?;
    let lr: std::collections::BTreeMap<String, Image> = load_png_dir(&dir.join("lr"))?.into_iter().collect();
    let region = RegionSpec::new(cfg.model.region)?;
    let mut grids = Vec::new();
    for (name, h) in &hr {
        let l = lr.get(name).ok_or_else(|| invalid!("{name} has no LR counterpart"))?;
        let up = if (l.width, l.height) == (h.width, h.height) {
            l.luma()
        } else if (l.width * SCALE, l.height * SCALE) == (h.width, h.height) {
            upscale_ycc(l)?.y
        } else {
            return Err(invalid!(
                "hr/{name} is {}x{} but lr/{name} is {}x{}",
                h.width,
                h.height,
                l.width,
                l.height
            ));
        };
        let (w, hh) = (h.width / BLOCK_SIZE * BLOCK_SIZE, h.height / BLOCK_SIZE * BLOCK_SIZE);
        if w == 0 || hh == 0 {
            return Err(invalid!("{name} is smaller than one block"));
        }
        let (x0, y0) = ((h.width - w) / 2, (h.height - hh) / 2);
        let (_, hg) = luma_maps(&h.luma().crop(x0, y0, w, hh)?, region)?;
        let (_, lg) = luma_maps(&up.crop(x0, y0, w, hh)?, region)?;
        grids.push((hg, lg));
    }
    let profile = region_residual_profile(grids.iter().map(|(a, b)| (a, b)))?;
    let report = WeightsReport { residual_profile: &profile, reference_profile: table1_weights(10)? };
    write_json(out, &report)?;
    for (i, (r, v)) in profile.res.iter().zip(&profile.v).enumerate() {
        println!("region {0}x{0}: res {r:.5} v {v:.5}", i + 3);
    }
    Ok(())
}

fn cmd_merge(
    sr: &Path,
    maps_path: &Path,
    lr: Option<&Path>,
    stats: Option<&Path>,
    selection: &str,
    mode: FillMode,
    out: &Path,
) -> Result<()> {
    let file = fs::File::open(maps_path).map_err(|e| invalid!("cannot open {}: {e}", maps_path.display()))?;
    let mut maps = FreqMaps::read_from(BufReader::new(file))?;
    if maps.is_normalized() {
        let s = stats.ok_or_else(|| invalid!("{} holds normalized maps; pass --stats", maps_path.display()))?;
        maps = denormalize(&maps, &ChannelStats::load(s)?)?;
    }
    let selection = ChannelSelection::parse(selection, maps.region().side())?;
    let lr_fill = match (mode, lr) {
        (FillMode::Lr, None) => return Err(invalid!("--fill-mode lr needs --lr")),
        (_, Some(p)) => {
            let up = upscale_ycc(&Image::load_png(p)?)?;
            Some(luma_maps(&up.y, maps.region())?.1)
        }
        (FillMode::Sr, None) => None,
    };
    let job = MergeJob::new(Image::load_png(sr)?, maps, lr_fill, selection)?;
    let merged = job.run(mode)?;
    merged.quantized().save_png(out)?;
    Ok(())
}

fn cmd_selfcheck(cfg: &FileConfig) -> Result<()> {
    let outcomes = selfcheck::run(&SelfCheckConfig { seed: cfg.train.seed, ..SelfCheckConfig::default() })?;
    let mut ok = true;
    for o in &outcomes {
        println!(
            "{} {:<40} worst {:.3e} (tol {:.0e}, {} cases)",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.worst,
            o.tolerance,
            o.cases
        );
        ok &= o.passed;
    }
    if ok {
        Ok(())
    } else {
        Err(Error::State(SELFCHECK_FAILED.into()))
    }
}
