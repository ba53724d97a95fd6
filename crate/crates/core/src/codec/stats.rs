//! Per-channel statistics and the normalization they drive.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::maps::FreqMaps;
use crate::error::{invalid, Error, Result};

/// Lower bound applied to every standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-channel mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub r: usize,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    #[serde(rename = "samples")]
    pub sample_count: usize,
}

impl ChannelStats {
    pub fn channels(&self) -> usize {
        self.means.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.r * self.r;
        if self.means.len() != n || self.stds.len() != n {
            return Err(invalid!("stats for R = {} need {n} means and stds", self.r));
        }
        if self.stds.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(invalid!("stats contain non-positive standard deviations"));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(invalid!("stats contain non-finite means"));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let stats: Self = serde_json::from_str(&text)?;
        stats.validate()?;
        Ok(stats)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Streams over the dataset one map at a time, merging per-map moments
/// with the pairwise update so no sample needs to be held twice.
pub fn compute_channel_stats<'a>(dataset: impl IntoIterator<Item = &'a FreqMaps>) -> Result<ChannelStats> {
    let mut iter = dataset.into_iter().peekable();
    let first = iter.peek().ok_or_else(|| invalid!("cannot compute statistics of an empty dataset"))?;
    let region = first.region();
    let channels = region.channels();
    let mut count = vec![0usize; channels];
    let mut mean = vec![0.0; channels];
    let mut m2 = vec![0.0; channels];
    let mut samples = 0;

    for maps in iter {
        if maps.region() != region {
            return Err(invalid!("dataset mixes region sizes"));
        }
        if maps.is_normalized() {
            return Err(Error::State("statistics are computed on unnormalized maps".into()));
        }
        samples += 1;
        for c in 0..channels {
            let values = maps.channel(c);
            let n_b = values.len();
            if n_b == 0 {
                continue;
            }
            let mean_b = values.iter().sum::<f64>() / n_b as f64;
            let m2_b: f64 = values.iter().map(|v| (v - mean_b).powi(2)).sum();
            let n_a = count[c];
            let n = n_a + n_b;
            let delta = mean_b - mean[c];
            mean[c] += delta * n_b as f64 / n as f64;
            m2[c] += m2_b + delta * delta * (n_a as f64 * n_b as f64) / n as f64;
            count[c] = n;
        }
    }

    let stds = m2
        .iter()
        .zip(&count)
        .map(|(&m2, &n)| if n == 0 { STD_FLOOR } else { (m2 / n as f64).sqrt().max(STD_FLOOR) })
        .collect();
    Ok(ChannelStats { r: region.side(), means: mean, stds, sample_count: samples })
}

fn check_channels(maps: &FreqMaps, stats: &ChannelStats) -> Result<()> {
    if stats.channels() != maps.channels() || stats.r != maps.region().side() {
        return Err(invalid!(
            "stats for R = {} do not match maps with {} channels",
            stats.r,
            maps.channels()
        ));
    }
    Ok(())
}

/// `(x - mean_c) / std_c` per channel.
pub fn normalize(maps: &FreqMaps, stats: &ChannelStats) -> Result<FreqMaps> {
    check_channels(maps, stats)?;
    if maps.is_normalized() {
        return Err(Error::State("maps are already normalized".into()));
    }
    let n = maps.hb() * maps.wb();
    let mut data = maps.data().to_vec();
    for (c, chunk) in data.chunks_mut(n.max(1)).enumerate().take(maps.channels()) {
        let (m, s) = (stats.means[c], stats.stds[c]);
        chunk.iter_mut().for_each(|v| *v = (*v - m) / s);
    }
    maps.with_data(data, true)
}

pub fn denormalize(maps: &FreqMaps, stats: &ChannelStats) -> Result<FreqMaps> {
    check_channels(maps, stats)?;
    if !maps.is_normalized() {
        return Err(Error::State("maps are not normalized".into()));
    }
    let n = maps.hb() * maps.wb();
    let mut data = maps.data().to_vec();
    for (c, chunk) in data.chunks_mut(n.max(1)).enumerate().take(maps.channels()) {
        let (m, s) = (stats.means[c], stats.stds[c]);
        chunk.iter_mut().for_each(|v| *v = *v * s + m);
    }
    maps.with_data(data, false)
}
