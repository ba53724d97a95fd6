//! DCT feature maps: the top-left `R x R` corner of every block, rearranged
//! so that each retained frequency becomes one channel over the block grid.

use std::io::{Read, Write};

use crate::codec::dct::{BlockGrid, DctBlock};
use crate::error::{invalid, Error, Result};

/// Default side of the retained low-frequency region.
pub const DEFAULT_REGION: usize = 10;

const MAGIC: &[u8; 4] = b"FQM1";

/// Side length `R` of the retained top-left region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct RegionSpec(usize);

impl RegionSpec {
    pub fn new(r: usize) -> Result<Self> {
        if r == 0 {
            return Err(invalid!("region size must be positive"));
        }
        Ok(Self(r))
    }

    pub fn side(self) -> usize {
        self.0
    }

    pub fn channels(self) -> usize {
        self.0 * self.0
    }

    /// Block coordinate `(u, v)` carried by channel `c`.
    pub fn coord(self, c: usize) -> (usize, usize) {
        (c / self.0, c % self.0)
    }

    pub fn channel(self, u: usize, v: usize) -> usize {
        u * self.0 + v
    }
}

impl Default for RegionSpec {
    fn default() -> Self {
        Self(DEFAULT_REGION)
    }
}

/// Rank-3 array `[R^2, Hb, Wb]`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqMaps {
    region: RegionSpec,
    block_size: usize,
    hb: usize,
    wb: usize,
    normalized: bool,
    data: Vec<f64>,
}

impl FreqMaps {
    pub fn new(
        region: RegionSpec,
        block_size: usize,
        hb: usize,
        wb: usize,
        normalized: bool,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != region.channels() * hb * wb {
            return Err(invalid!(
                "feature maps need {} values for [{}, {hb}, {wb}], got {}",
                region.channels() * hb * wb,
                region.channels(),
                data.len()
            ));
        }
        if region.side() > block_size {
            return Err(invalid!("region {} exceeds block size {block_size}", region.side()));
        }
        Ok(Self { region, block_size, hb, wb, normalized, data })
    }

    pub fn zeros(region: RegionSpec, block_size: usize, hb: usize, wb: usize) -> Self {
        Self { region, block_size, hb, wb, normalized: false, data: vec![0.0; region.channels() * hb * wb] }
    }

    pub fn region(&self) -> RegionSpec {
        self.region
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn channels(&self) -> usize {
        self.region.channels()
    }

    /// Grid height in blocks.
    pub fn hb(&self) -> usize {
        self.hb
    }

    /// Grid width in blocks.
    pub fn wb(&self) -> usize {
        self.wb
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.hb * self.wb;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.hb * self.wb;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[(c * self.hb + row) * self.wb + col]
    }

    /// Same geometry, different values and state.
    pub fn with_data(&self, data: Vec<f64>, normalized: bool) -> Result<Self> {
        Self::new(self.region, self.block_size, self.hb, self.wb, normalized, data)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.region == other.region && self.hb == other.hb && self.wb == other.wb
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        for field in [self.region.side(), self.block_size, self.hb, self.wb, self.normalized as usize] {
            w.write_all(&(field as u32).to_le_bytes())?;
        }
        for &v in &self.data {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an FQM1 feature-map file".into()));
        }
        let mut fields = [0usize; 5];
        for f in &mut fields {
            let mut buf = [0u8; 4];
            r.read_exact(&mut buf)?;
            *f = u32::from_le_bytes(buf) as usize;
        }
        let [side, block_size, hb, wb, normalized] = fields;
        if normalized > 1 {
            return Err(Error::Format(format!("bad normalized flag {normalized}")));
        }
        let region = RegionSpec::new(side)?;
        let n = region.channels() * hb * wb;
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
        Self::new(region, block_size, hb, wb, normalized == 1, data)
    }
}

/// Keeps the top-left `R x R` coefficients of every block, flattened
/// row-major, as one vector per grid position.
pub fn reform_to_maps(grid: &BlockGrid, region: RegionSpec) -> Result<FreqMaps> {
    let r = region.side();
    if r > grid.block_size() {
        return Err(invalid!("region {r} exceeds block size {}", grid.block_size()));
    }
    let (hb, wb) = (grid.rows(), grid.cols());
    let mut maps = FreqMaps::zeros(region, grid.block_size(), hb, wb);
    for row in 0..hb {
        for col in 0..wb {
            let block = grid.block(row, col);
            for u in 0..r {
                for v in 0..r {
                    let c = region.channel(u, v);
                    maps.data[(c * hb + row) * wb + col] = block.get(u, v);
                }
            }
        }
    }
    Ok(maps)
}

/// Stage-1 inverse: overwrite the top-left region of each fill block with
/// the map vector at its grid position.
pub fn maps_to_blocks(maps: &FreqMaps, fill: &BlockGrid) -> Result<BlockGrid> {
    if maps.normalized {
        return Err(Error::State("maps must be denormalized before inverse reform".into()));
    }
    if fill.rows() != maps.hb || fill.cols() != maps.wb {
        return Err(invalid!(
            "fill grid {}x{} does not match maps grid {}x{}",
            fill.rows(),
            fill.cols(),
            maps.hb,
            maps.wb
        ));
    }
    let r = maps.region.side();
    if fill.block_size() < r {
        return Err(invalid!("fill blocks of size {} cannot hold region {r}", fill.block_size()));
    }
    let mut out = fill.clone();
    for row in 0..maps.hb {
        for col in 0..maps.wb {
            let block: &mut DctBlock = out.block_mut(row, col);
            for u in 0..r {
                for v in 0..r {
                    block.set(u, v, maps.get(maps.region.channel(u, v), row, col));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::dct::{forward_dct_block, PixelBlock};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(rows: usize, cols: usize, seed: u64) -> BlockGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = (0..rows * cols)
            .map(|_| {
                let v = (0..1024).map(|_| rng.random_range(-128.0..128.0)).collect();
                forward_dct_block(&PixelBlock::new(32, 32, v).unwrap())
            })
            .collect();
        BlockGrid::new(rows, cols, blocks).unwrap()
    }

    #[test]
    fn single_dc_block() {
        let mut b = DctBlock::zeros(32);
        b.set(0, 0, 5.0);
        let g = BlockGrid::new(1, 1, vec![b]).unwrap();
        let m = reform_to_maps(&g, RegionSpec::default()).unwrap();
        assert_eq!(m.channels(), 100);
        assert_eq!(m.channel(0), &[5.0]);
        assert!(m.data()[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_index_arithmetic() {
        let g = random_grid(2, 3, 1);
        let m = reform_to_maps(&g, RegionSpec::default()).unwrap();
        for c in 0..100 {
            let (u, v) = (c / 10, c % 10);
            for row in 0..2 {
                for col in 0..3 {
                    assert_eq!(m.get(c, row, col), g.block(row, col).get(u, v));
                }
            }
        }
    }

    #[test]
    fn full_region_is_lossless() {
        let g = random_grid(2, 2, 2);
        let m = reform_to_maps(&g, RegionSpec::new(32).unwrap()).unwrap();
        let back = maps_to_blocks(&m, &BlockGrid::zeros(2, 2, 32)).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn fill_semantics() {
        let g = random_grid(2, 2, 3);
        let fill = random_grid(2, 2, 4);
        let m = reform_to_maps(&g, RegionSpec::default()).unwrap();
        let out = maps_to_blocks(&m, &fill).unwrap();
        for row in 0..2 {
            for col in 0..2 {
                for u in 0..32 {
                    for v in 0..32 {
                        let expected = if u < 10 && v < 10 { g.block(row, col).get(u, v) } else { fill.block(row, col).get(u, v) };
                        assert_eq!(out.block(row, col).get(u, v).to_bits(), expected.to_bits());
                    }
                }
            }
        }
        // same grid as source and fill
        assert_eq!(maps_to_blocks(&m, &g).unwrap(), g);
    }

    #[test]
    fn zero_maps_clear_region() {
        let fill = random_grid(1, 2, 5);
        let out = maps_to_blocks(&FreqMaps::zeros(RegionSpec::default(), 32, 1, 2), &fill).unwrap();
        assert_eq!(out.block(0, 1).get(9, 9), 0.0);
        assert_eq!(out.block(0, 1).get(10, 0), fill.block(0, 1).get(10, 0));
    }

    #[test]
    fn errors() {
        let g = random_grid(1, 1, 6);
        assert!(reform_to_maps(&g, RegionSpec::new(33).unwrap()).is_err());
        let m = reform_to_maps(&g, RegionSpec::default()).unwrap();
        assert!(maps_to_blocks(&m, &BlockGrid::zeros(2, 1, 32)).is_err());
        let normed = m.with_data(m.data().to_vec(), true).unwrap();
        assert!(matches!(maps_to_blocks(&normed, &g), Err(Error::State(_))));
    }

    #[test]
    fn file_format() {
        let m = reform_to_maps(&random_grid(1, 2, 7), RegionSpec::default()).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"FQM1");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 10);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 32);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[20..24].try_into().unwrap()), 0);
        assert_eq!(buf.len(), 24 + 100 * 2 * 4);
        // channel-major: second float is channel 0 at column 1
        let second = f32::from_le_bytes(buf[28..32].try_into().unwrap());
        assert_eq!(second, m.get(0, 0, 1) as f32);
        let back = FreqMaps::read_from(&buf[..]).unwrap();
        assert!(back.same_shape(&m));
        for (a, b) in back.data().iter().zip(m.data()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert!(FreqMaps::read_from(&b"XXXX"[..]).is_err());
    }
}
