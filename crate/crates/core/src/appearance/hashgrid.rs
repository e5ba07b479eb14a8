//! Multi-level hash grid over the `[-1, 1]^3` box that contains every unit
//! view direction.
//!
//! Level `l` has resolution `N_l = floor(N_min * b^l)` with
//! `b = (N_max / N_min)^(1 / (L - 1))`, cell size `s_l = 2 / N_l`, and a query
//! `x` falls in cell `floor(x / s_l)`. Corner cells are hashed into a table of
//! `2^log2_table_size` slots with a prime-multiply-xor combiner; collisions
//! share a slot.

use std::collections::BTreeSet;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HASH_PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HashGridConfig {
    pub levels: u32,
    pub base_resolution: u32,
    pub max_resolution: u32,
    pub log2_table_size: u32,
    pub features_per_level: u32,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        HashGridConfig {
            levels: 8,
            base_resolution: 8,
            max_resolution: 64,
            log2_table_size: 19,
            features_per_level: 2,
        }
    }
}

impl HashGridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.features_per_level == 0 || self.base_resolution == 0 {
            return Err(Error::InvalidInput("hash grid dimensions must be positive".into()));
        }
        if self.max_resolution < self.base_resolution {
            return Err(Error::InvalidInput("max resolution below base resolution".into()));
        }
        if self.log2_table_size == 0 || self.log2_table_size > 26 {
            return Err(Error::InvalidInput("log2 table size must be in 1..=26".into()));
        }
        let r = self.resolutions();
        if r.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(format!(
                "level resolutions must strictly increase, got {r:?}"
            )));
        }
        Ok(())
    }

    pub fn resolutions(&self) -> Vec<u32> {
        let l = self.levels;
        if l == 1 {
            return vec![self.base_resolution];
        }
        let b = (self.max_resolution as f64 / self.base_resolution as f64).powf(1.0 / (l - 1) as f64);
        (0..l)
            .map(|i| (self.base_resolution as f64 * b.powi(i as i32) + 1e-9).floor() as u32)
            .collect()
    }

    pub fn table_size(&self) -> usize {
        1 << self.log2_table_size
    }

    pub fn output_dim(&self) -> usize {
        (self.levels * self.features_per_level) as usize
    }
}

/// Slot of `cell` in a table of `2^log2_table_size` entries.
#[inline]
pub fn hash_index(cell: [i32; 3], log2_table_size: u32) -> usize {
    let h = (cell[0] as u32).wrapping_mul(HASH_PRIMES[0])
        ^ (cell[1] as u32).wrapping_mul(HASH_PRIMES[1])
        ^ (cell[2] as u32).wrapping_mul(HASH_PRIMES[2]);
    (h & ((1u32 << log2_table_size) - 1)) as usize
}

/// Per-level corner slots and trilinear weights of one query.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodeContext {
    levels: u32,
    features_per_level: u32,
    log2_table_size: u32,
    /// `levels x 8` entries of (slot, weight).
    pub corners: Vec<(u32, f64)>,
}

/// Sparse table gradient: `(flat table index, value)`, possibly repeated.
pub type SparseGrad = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct DirHashGrid {
    pub config: HashGridConfig,
    resolutions: Vec<u32>,
    /// `levels x table_size x features_per_level`, row-major.
    pub tables: Vec<f64>,
}

impl DirHashGrid {
    /// Tables start uniform in `[-1e-4, 1e-4]`.
    pub fn new(config: HashGridConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let len = config.levels as usize * config.table_size() * config.features_per_level as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tables = (0..len).map(|_| rng.random_range(-1e-4..1e-4)).collect();
        Ok(DirHashGrid {
            resolutions: config.resolutions(),
            config,
            tables,
        })
    }

    pub fn from_tables(config: HashGridConfig, tables: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let len = config.levels as usize * config.table_size() * config.features_per_level as usize;
        if tables.len() != len {
            return Err(Error::DimensionMismatch {
                what: "hash grid tables",
                expected: len,
                got: tables.len(),
            });
        }
        Ok(DirHashGrid {
            resolutions: config.resolutions(),
            config,
            tables,
        })
    }

    pub fn resolutions(&self) -> &[u32] {
        &self.resolutions
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    /// Flat table index of feature `f` in `slot` of `level`.
    #[inline]
    pub fn table_index(&self, level: usize, slot: usize, f: usize) -> usize {
        let fpl = self.config.features_per_level as usize;
        (level * self.config.table_size() + slot) * fpl + f
    }

    /// Cell containing `x` at `level`, and the fractional offset inside it.
    pub fn locate(&self, level: usize, x: &Vector3<f64>) -> ([i32; 3], [f64; 3]) {
        let inv_s = self.resolutions[level] as f64 / 2.0;
        let mut cell = [0i32; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let g = x[a] * inv_s;
            let c = g.floor();
            cell[a] = c as i32;
            frac[a] = g - c;
        }
        (cell, frac)
    }

    /// Trilinearly interpolated features of `dir`, levels concatenated in
    /// ascending order.
    pub fn encode(&self, dir: &Vector3<f64>) -> Result<(Vec<f64>, EncodeContext)> {
        if !((dir.norm() - 1.0).abs() <= 1e-6) {
            return Err(Error::InvalidInput(format!(
                "direction must be unit length (norm {})",
                dir.norm()
            )));
        }
        Ok(self.encode_point(dir))
    }

    /// Same as [`encode`](Self::encode) without the unit-norm precondition.
    pub fn encode_point(&self, x: &Vector3<f64>) -> (Vec<f64>, EncodeContext) {
        let levels = self.config.levels as usize;
        let fpl = self.config.features_per_level as usize;
        let mut out = vec![0.0; levels * fpl];
        let mut corners = Vec::with_capacity(levels * 8);
        for level in 0..levels {
            let (cell, frac) = self.locate(level, x);
            for corner in 0..8 {
                let off = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
                let mut wgt = 1.0;
                let mut c = cell;
                for a in 0..3 {
                    if off[a] == 1 {
                        wgt *= frac[a];
                        c[a] += 1;
                    } else {
                        wgt *= 1.0 - frac[a];
                    }
                }
                let slot = hash_index(c, self.config.log2_table_size);
                let base = self.table_index(level, slot, 0);
                for f in 0..fpl {
                    out[level * fpl + f] += wgt * self.tables[base + f];
                }
                corners.push((slot as u32, wgt));
            }
        }
        let ctx = EncodeContext {
            levels: self.config.levels,
            features_per_level: self.config.features_per_level,
            log2_table_size: self.config.log2_table_size,
            corners,
        };
        (out, ctx)
    }

    /// Scatters `dl_dfeatures` onto the corner slots of `ctx`.
    pub fn encode_backward(&self, ctx: &EncodeContext, dl_dfeatures: &[f64], out: &mut SparseGrad) -> Result<()> {
        if ctx.levels != self.config.levels
            || ctx.features_per_level != self.config.features_per_level
            || ctx.log2_table_size != self.config.log2_table_size
            || ctx.corners.len() != ctx.levels as usize * 8
        {
            return Err(Error::InvalidInput("encode context does not belong to this grid".into()));
        }
        if dl_dfeatures.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                what: "dL/dfeatures",
                expected: self.output_dim(),
                got: dl_dfeatures.len(),
            });
        }
        let fpl = self.config.features_per_level as usize;
        for level in 0..self.config.levels as usize {
            for &(slot, wgt) in &ctx.corners[level * 8..level * 8 + 8] {
                if wgt == 0.0 {
                    continue;
                }
                let base = self.table_index(level, slot as usize, 0);
                for f in 0..fpl {
                    out.push((base + f, wgt * dl_dfeatures[level * fpl + f]));
                }
            }
        }
        Ok(())
    }

    /// Flat table indices (feature 0 of each slot) reachable from the unit
    /// sphere: corners of every cell whose box straddles radius 1.
    pub fn sphere_active_slots(&self) -> BTreeSet<usize> {
        let mut set = BTreeSet::new();
        for (level, &res) in self.resolutions.iter().enumerate() {
            let s = 2.0 / res as f64;
            let lo = (-1.0 / s).floor() as i32;
            let hi = (1.0 / s).floor() as i32;
            for i in lo..=hi {
                for j in lo..=hi {
                    for k in lo..=hi {
                        let cell = [i, j, k];
                        let (mut near, mut far) = (0.0, 0.0);
                        for a in 0..3 {
                            let a0 = cell[a] as f64 * s;
                            let a1 = a0 + s;
                            let nearest = if a0 > 0.0 { a0 } else if a1 < 0.0 { a1 } else { 0.0 };
                            near += nearest * nearest;
                            far += a0.abs().max(a1.abs()).powi(2);
                        }
                        if near > 1.0 || far < 1.0 {
                            continue;
                        }
                        for corner in 0..8 {
                            let c = [i + (corner & 1), j + ((corner >> 1) & 1), k + ((corner >> 2) & 1)];
                            let slot = hash_index(c, self.config.log2_table_size);
                            set.insert(self.table_index(level, slot, 0));
                        }
                    }
                }
            }
        }
        set
    }
}
