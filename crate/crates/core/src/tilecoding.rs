//! Hashed tile coding over normalized observations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MIX: u64 = 0x9E37_79B9_7F4A_7C15;
const SALT: u64 = 0xC2B2_AE3D_27D4_EB4F;

fn default_grid() -> usize {
    8
}

fn default_tilings() -> usize {
    8
}

fn default_hash_size() -> usize {
    8192
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileCoderConfig {
    /// Cells per dimension in each tiling.
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_tilings")]
    pub tilings: usize,
    #[serde(default = "default_hash_size")]
    pub hash_size: usize,
    /// Per-dimension displacement multipliers. Tiling `t` is shifted by
    /// `t * displacement[i] / (tilings * grid)` along dimension `i`; the
    /// default of all ones gives uniform diagonal offsets.
    #[serde(default)]
    pub displacement: Option<Vec<u32>>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TileCoderConfig {
    fn default() -> Self {
        TileCoderConfig {
            grid: default_grid(),
            tilings: default_tilings(),
            hash_size: default_hash_size(),
            displacement: None,
            seed: 0,
        }
    }
}

/// Maps an observation in `[0, 1]^d` to one active index per tiling.
#[derive(Clone, Debug, PartialEq)]
pub struct TileCoder {
    config: TileCoderConfig,
    dim: usize,
    displacement: Vec<u64>,
}

impl TileCoder {
    pub fn new(config: TileCoderConfig, dim: usize) -> Result<Self> {
        if config.grid == 0 || config.tilings == 0 || dim == 0 {
            return Err(Error::invalid("grid, tilings and dimension must be positive"));
        }
        if config.hash_size < config.tilings {
            return Err(Error::invalid(format!(
                "hash size {} smaller than tiling count {}",
                config.hash_size, config.tilings
            )));
        }
        let displacement = match &config.displacement {
            None => vec![1; dim],
            Some(d) if d.len() == dim => d.iter().map(|&v| v as u64).collect(),
            Some(d) => return Err(Error::shape("tile displacement", dim, d.len())),
        };
        Ok(TileCoder {
            config,
            dim,
            displacement,
        })
    }

    pub fn config(&self) -> &TileCoderConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_features(&self) -> usize {
        self.config.hash_size
    }

    pub fn active_count(&self) -> usize {
        self.config.tilings
    }

    /// Integer cell coordinates of `obs` in tiling `t`.
    pub fn cell(&self, obs: &[f64], t: usize) -> Vec<u64> {
        let (n, d) = (self.config.grid as u64, self.config.tilings as u64);
        obs.iter()
            .zip(&self.displacement)
            .map(|(&x, &disp)| {
                // work in units of 1 / (d * n) so the offsets stay exact
                let fine = (x * (n * d) as f64).floor() as u64;
                (fine + t as u64 * disp % d) / d
            })
            .collect()
    }

    /// Packs `(t, cell)` into one integer in mixed radix, offsets it by the
    /// seed, and scatters it with Fibonacci hashing: multiplication by
    /// 2^64 / phi followed by a multiply-high range reduction. Keys that
    /// differ by small amounts land far apart, so the few hundred cells of
    /// a coarse 2-d tiling rarely share a slot.
    fn hash(&self, t: usize, cell: &[u64]) -> usize {
        let radix = self.config.grid as u64 + 1;
        let mut key = t as u64;
        for &c in cell.iter().rev() {
            key = key.wrapping_mul(radix).wrapping_add(c);
        }
        key = key.wrapping_add(self.config.seed.wrapping_mul(SALT));
        let h = key.wrapping_mul(MIX);
        ((h as u128 * self.config.hash_size as u128) >> 64) as usize
    }

    /// Active indices, one per tiling, in tiling order.
    pub fn encode(&self, obs: &[f64]) -> Result<Vec<usize>> {
        if obs.len() != self.dim {
            return Err(Error::shape("TileCoder::encode", self.dim, obs.len()));
        }
        if let Some(x) = obs.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::invalid(format!("observation component {x} outside [0, 1]")));
        }
        Ok((0..self.config.tilings)
            .map(|t| self.hash(t, &self.cell(obs, t)))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn coder(grid: usize, tilings: usize, dim: usize) -> TileCoder {
        TileCoder::new(
            TileCoderConfig {
                grid,
                tilings,
                ..TileCoderConfig::default()
            },
            dim,
        )
        .unwrap()
    }

    #[test]
    fn one_dimensional_cells_differ() {
        let tc = coder(2, 1, 1);
        assert_eq!(tc.cell(&[0.3], 0), vec![0]);
        assert_eq!(tc.cell(&[0.7], 0), vec![1]);
        assert_ne!(tc.encode(&[0.3]).unwrap(), tc.encode(&[0.7]).unwrap());
    }

    #[test]
    fn offsets_shift_cells() {
        let tc = coder(4, 4, 1);
        // tiling t shifts by t / 16; 0.2 * 16 = 3.2
        let cells: Vec<u64> = (0..4).map(|t| tc.cell(&[0.2], t)[0]).collect();
        assert_eq!(cells, vec![0, 1, 1, 1]);
    }

    #[test]
    fn rejects_bad_input() {
        let tc = coder(8, 8, 2);
        assert!(tc.encode(&[0.5, 1.2]).is_err());
        assert!(tc.encode(&[-0.1, 0.5]).is_err());
        assert!(tc.encode(&[0.5]).is_err());
        assert!(tc.encode(&[0.5, f64::NAN]).is_err());
        assert!(TileCoder::new(
            TileCoderConfig {
                hash_size: 4,
                ..TileCoderConfig::default()
            },
            2
        )
        .is_err());
    }

    #[test]
    fn collision_rate_is_small() {
        let tc = coder(8, 8, 2);
        let mut cells = HashSet::new();
        let mut indices = HashSet::new();
        for i in 0..100 {
            for j in 0..100 {
                let obs = [i as f64 / 99.0, j as f64 / 99.0];
                for t in 0..8 {
                    cells.insert((t, tc.cell(&obs, t)));
                }
                indices.extend(tc.encode(&obs).unwrap());
            }
        }
        let rate = (cells.len() - indices.len()) as f64 / cells.len() as f64;
        assert!(rate < 0.05, "collision rate {rate}");
    }

    #[test]
    fn nearby_points_share_more_tiles() {
        let tc = coder(8, 8, 2);
        let shared = |a: &[f64], b: &[f64]| {
            let x: HashSet<usize> = tc.encode(a).unwrap().into_iter().collect();
            tc.encode(b).unwrap().iter().filter(|i| x.contains(i)).count()
        };
        let mut by_distance = [0.0; 4];
        let steps = [0.0, 0.02, 0.06, 0.2];
        for k in 0..200 {
            let base = [0.1 + 0.6 * ((k * 37 % 200) as f64 / 200.0), 0.1 + 0.6 * (k as f64 / 200.0)];
            for (s, acc) in steps.iter().zip(by_distance.iter_mut()) {
                *acc += shared(&base, &[base[0] + s, base[1] + s]) as f64;
            }
        }
        assert!(by_distance.windows(2).all(|w| w[0] > w[1]), "{by_distance:?}");
    }

    proptest! {
        #[test]
        fn exactly_one_index_per_tiling(x in 0.0f64..=1.0, y in 0.0f64..=1.0, grid in 1usize..17, tilings in 1usize..33) {
            let tc = coder(grid, tilings, 2);
            let idx = tc.encode(&[x, y]).unwrap();
            prop_assert_eq!(idx.len(), tilings);
            prop_assert!(idx.iter().all(|&i| i < 8192));
            prop_assert_eq!(idx, tc.encode(&[x, y]).unwrap());
        }
    }
}
