//! Orthonormal 2-D DCT-II on square blocks and block tiling of planes.
//!
//! Coefficient `(u, v)` pairs the vertical frequency `u` with the row index
//! and the horizontal frequency `v` with the column index. The per-axis
//! scale is `sqrt(1/M)` for the DC term and `sqrt(2/M)` otherwise, so the
//! transform is orthonormal for every block size and matches the familiar
//! JPEG formula at `M = 8`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use crate::codec::image::Plane;
use crate::error::{invalid, Result};

/// Default block edge length.
pub const BLOCK_SIZE: usize = 32;

/// An `M x M` block of spatial samples, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelBlock {
    size: usize,
    values: Vec<f64>,
}

/// An `M x M` block of DCT coefficients, row-major over `(u, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DctBlock {
    size: usize,
    coeffs: Vec<f64>,
}

macro_rules! square_block {
    ($ty:ident, $field:ident) => {
        impl $ty {
            pub fn new(rows: usize, cols: usize, $field: Vec<f64>) -> Result<Self> {
                if rows != cols {
                    return Err(invalid!("block must be square, got {rows}x{cols}"));
                }
                if rows == 0 {
                    return Err(invalid!("block size must be positive"));
                }
                if $field.len() != rows * cols {
                    return Err(invalid!(
                        "block of size {rows} needs {} values, got {}",
                        rows * cols,
                        $field.len()
                    ));
                }
                if $field.iter().any(|v| !v.is_finite()) {
                    return Err(invalid!("block contains non-finite values"));
                }
                Ok(Self { size: rows, $field })
            }

            pub fn zeros(size: usize) -> Self {
                Self { size, $field: vec![0.0; size * size] }
            }

            pub fn size(&self) -> usize {
                self.size
            }

            #[inline]
            pub fn get(&self, row: usize, col: usize) -> f64 {
                self.$field[row * self.size + col]
            }

            #[inline]
            pub fn set(&mut self, row: usize, col: usize, v: f64) {
                self.$field[row * self.size + col] = v;
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.$field
            }
        }
    };
}

square_block!(PixelBlock, values);
square_block!(DctBlock, coeffs);

impl DctBlock {
    /// Copy with every coefficient outside the top-left `keep x keep`
    /// corner set to zero.
    pub fn truncated(&self, keep: usize) -> Self {
        let mut out = Self::zeros(self.size);
        let keep = keep.min(self.size);
        for u in 0..keep {
            for v in 0..keep {
                out.set(u, v, self.get(u, v));
            }
        }
        out
    }
}

/// `basis[u * M + i] = scale(u) * cos((2i + 1) u pi / 2M)`.
fn basis(size: usize) -> Arc<Vec<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Vec<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut cache = cache.lock().unwrap_or_else(|e| e.into_inner());
    cache
        .entry(size)
        .or_insert_with(|| {
            let m = size as f64;
            let mut b = vec![0.0; size * size];
            for u in 0..size {
                let scale = if u == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
                for i in 0..size {
                    b[u * size + i] = scale * ((2 * i + 1) as f64 * u as f64 * PI / (2.0 * m)).cos();
                }
            }
            Arc::new(b)
        })
        .clone()
}

/// `out = C * x * C^T` when `forward`, `C^T * x * C` otherwise.
fn separable(x: &[f64], size: usize, forward: bool) -> Vec<f64> {
    let c = basis(size);
    let at = |freq: usize, pos: usize| c[freq * size + pos];
    // Rows first: tmp[r][k] = sum_j x[r][j] * B(k, j)
    let mut tmp = vec![0.0; size * size];
    for r in 0..size {
        for k in 0..size {
            let mut acc = 0.0;
            for j in 0..size {
                let w = if forward { at(k, j) } else { at(j, k) };
                acc += x[r * size + j] * w;
            }
            tmp[r * size + k] = acc;
        }
    }
    let mut out = vec![0.0; size * size];
    for k in 0..size {
        for col in 0..size {
            let mut acc = 0.0;
            for r in 0..size {
                let w = if forward { at(k, r) } else { at(r, k) };
                acc += w * tmp[r * size + col];
            }
            out[k * size + col] = acc;
        }
    }
    out
}

pub fn forward_dct_block(p: &PixelBlock) -> DctBlock {
    DctBlock { size: p.size, coeffs: separable(&p.values, p.size, true) }
}

pub fn inverse_dct_block(d: &DctBlock) -> PixelBlock {
    PixelBlock { size: d.size, values: separable(&d.coeffs, d.size, false) }
}

/// A rectangular, row-major grid of equally sized DCT blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrid {
    block_size: usize,
    rows: usize,
    cols: usize,
    blocks: Vec<DctBlock>,
}

impl BlockGrid {
    pub fn new(rows: usize, cols: usize, blocks: Vec<DctBlock>) -> Result<Self> {
        if rows == 0 || cols == 0 || blocks.len() != rows * cols {
            return Err(invalid!("grid {rows}x{cols} does not hold {} blocks", blocks.len()));
        }
        let block_size = blocks[0].size;
        if blocks.iter().any(|b| b.size != block_size) {
            return Err(invalid!("grid blocks differ in size"));
        }
        Ok(Self { block_size, rows, cols, blocks })
    }

    /// Builds a grid from nested rows, rejecting ragged input.
    pub fn from_rows(rows: Vec<Vec<DctBlock>>) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(invalid!("ragged block grid"));
        }
        Self::new(n_rows, n_cols, rows.into_iter().flatten().collect())
    }

    pub fn zeros(rows: usize, cols: usize, block_size: usize) -> Self {
        Self { block_size, rows, cols, blocks: vec![DctBlock::zeros(block_size); rows * cols] }
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn block(&self, row: usize, col: usize) -> &DctBlock {
        &self.blocks[row * self.cols + col]
    }

    pub fn block_mut(&mut self, row: usize, col: usize) -> &mut DctBlock {
        &mut self.blocks[row * self.cols + col]
    }

    pub fn blocks(&self) -> &[DctBlock] {
        &self.blocks
    }
}

/// Tiles a plane into non-overlapping `block_size` squares and transforms each.
pub fn plane_to_blocks(plane: &Plane, block_size: usize) -> Result<BlockGrid> {
    if block_size == 0 || !plane.width.is_multiple_of(block_size) || !plane.height.is_multiple_of(block_size) {
        return Err(invalid!(
            "plane {}x{} is not a multiple of block size {block_size}",
            plane.width,
            plane.height
        ));
    }
    let rows = plane.height / block_size;
    let cols = plane.width / block_size;
    let mut blocks = Vec::with_capacity(rows * cols);
    for by in 0..rows {
        for bx in 0..cols {
            let mut values = Vec::with_capacity(block_size * block_size);
            for y in 0..block_size {
                let start = (by * block_size + y) * plane.width + bx * block_size;
                values.extend_from_slice(&plane.data[start..start + block_size]);
            }
            blocks.push(forward_dct_block(&PixelBlock { size: block_size, values }));
        }
    }
    Ok(BlockGrid { block_size, rows, cols, blocks })
}

/// Inverse-transforms every block and stitches them back into a plane.
pub fn blocks_to_plane(grid: &BlockGrid) -> Plane {
    let m = grid.block_size;
    let width = grid.cols * m;
    let mut plane = Plane::filled(width, grid.rows * m, 0.0);
    for by in 0..grid.rows {
        for bx in 0..grid.cols {
            let px = inverse_dct_block(grid.block(by, bx));
            for y in 0..m {
                let start = (by * m + y) * width + bx * m;
                plane.data[start..start + m].copy_from_slice(&px.values[y * m..(y + 1) * m]);
            }
        }
    }
    plane
}
