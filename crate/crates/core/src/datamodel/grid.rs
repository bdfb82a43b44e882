use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Neighbourhood used for HMM transitions and the simulator's random walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adjacency {
    /// 4-neighbourhood.
    Rook,
    /// 8-neighbourhood.
    #[default]
    Queen,
}

impl std::str::FromStr for Adjacency {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rook" => Ok(Adjacency::Rook),
            "queen" => Ok(Adjacency::Queen),
            other => Err(Error::invalid(format!(
                "unknown adjacency `{other}` (expected rook or queen)"
            ))),
        }
    }
}

/// A neighbouring tile and whether it touches only at a corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbor {
    pub tile: usize,
    pub diagonal: bool,
}

/// Planar reference grid of rectangular tiles.
///
/// Tiles are numbered row-major from 0, with tile 0 at the origin corner:
/// tile `i` sits in row `i / n_tiles_x` and column `i % n_tiles_x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n_tiles_x: usize,
    pub n_tiles_y: usize,
    pub tile_size_x: f64,
    pub tile_size_y: f64,
    #[serde(default)]
    pub origin_x: f64,
    #[serde(default)]
    pub origin_y: f64,
}

impl Grid {
    pub fn new(
        n_tiles_x: usize,
        n_tiles_y: usize,
        tile_size_x: f64,
        tile_size_y: f64,
        origin_x: f64,
        origin_y: f64,
    ) -> Result<Self> {
        let grid = Grid {
            n_tiles_x,
            n_tiles_y,
            tile_size_x,
            tile_size_y,
            origin_x,
            origin_y,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Square tiles anchored at the origin.
    pub fn square(n_tiles_x: usize, n_tiles_y: usize, tile_size: f64) -> Result<Self> {
        Self::new(n_tiles_x, n_tiles_y, tile_size, tile_size, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tiles_x == 0 || self.n_tiles_y == 0 {
            return Err(Error::invalid(format!(
                "grid must have at least one tile, got {}x{}",
                self.n_tiles_x, self.n_tiles_y
            )));
        }
        let sizes_ok = self.tile_size_x.is_finite()
            && self.tile_size_y.is_finite()
            && self.tile_size_x > 0.0
            && self.tile_size_y > 0.0;
        if !sizes_ok {
            return Err(Error::invalid(format!(
                "tile sizes must be positive, got {} x {}",
                self.tile_size_x, self.tile_size_y
            )));
        }
        if !self.origin_x.is_finite() || !self.origin_y.is_finite() {
            return Err(Error::invalid("grid origin must be finite"));
        }
        Ok(())
    }

    pub fn n_tiles(&self) -> usize {
        self.n_tiles_x * self.n_tiles_y
    }

    pub fn width(&self) -> f64 {
        self.n_tiles_x as f64 * self.tile_size_x
    }

    pub fn height(&self) -> f64 {
        self.n_tiles_y as f64 * self.tile_size_y
    }

    pub fn tile_diagonal(&self) -> f64 {
        self.tile_size_x.hypot(self.tile_size_y)
    }

    fn check_tile(&self, tile: usize) -> Result<()> {
        if tile >= self.n_tiles() {
            return Err(Error::invalid(format!(
                "tile index {tile} out of range for a grid of {} tiles",
                self.n_tiles()
            )));
        }
        Ok(())
    }

    pub fn row_col(&self, tile: usize) -> Result<(usize, usize)> {
        self.check_tile(tile)?;
        Ok((tile / self.n_tiles_x, tile % self.n_tiles_x))
    }

    pub fn tile_index(&self, row: usize, col: usize) -> Result<usize> {
        if row >= self.n_tiles_y || col >= self.n_tiles_x {
            return Err(Error::invalid(format!(
                "(row {row}, col {col}) outside a {}x{} grid",
                self.n_tiles_x, self.n_tiles_y
            )));
        }
        Ok(row * self.n_tiles_x + col)
    }

    pub fn tile_center(&self, tile: usize) -> Result<(f64, f64)> {
        let (row, col) = self.row_col(tile)?;
        Ok((
            self.origin_x + (col as f64 + 0.5) * self.tile_size_x,
            self.origin_y + (row as f64 + 0.5) * self.tile_size_y,
        ))
    }

    /// Tile containing a point; points on the far boundary map to the last tile.
    pub fn tile_at(&self, x: f64, y: f64) -> Option<usize> {
        let fx = (x - self.origin_x) / self.tile_size_x;
        let fy = (y - self.origin_y) / self.tile_size_y;
        if !(fx >= 0.0 && fy >= 0.0 && fx <= self.n_tiles_x as f64 && fy <= self.n_tiles_y as f64) {
            return None;
        }
        let col = (fx.floor() as usize).min(self.n_tiles_x - 1);
        let row = (fy.floor() as usize).min(self.n_tiles_y - 1);
        Some(row * self.n_tiles_x + col)
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        self.tile_at(x, y).is_some()
    }

    /// Neighbours of `tile` in ascending tile order, excluding the tile itself.
    pub fn neighbors(&self, tile: usize, adjacency: Adjacency) -> Result<Vec<Neighbor>> {
        let (row, col) = self.row_col(tile)?;
        let mut out = Vec::with_capacity(8);
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let diagonal = dr != 0 && dc != 0;
                if diagonal && adjacency == Adjacency::Rook {
                    continue;
                }
                let r = row as i64 + dr;
                let c = col as i64 + dc;
                if r < 0 || c < 0 || r >= self.n_tiles_y as i64 || c >= self.n_tiles_x as i64 {
                    continue;
                }
                out.push(Neighbor {
                    tile: r as usize * self.n_tiles_x + c as usize,
                    diagonal,
                });
            }
        }
        Ok(out)
    }

    pub fn tile_neighbors(&self, tile: usize, adjacency: Adjacency) -> Result<Vec<usize>> {
        Ok(self
            .neighbors(tile, adjacency)?
            .into_iter()
            .map(|n| n.tile)
            .collect())
    }
}
