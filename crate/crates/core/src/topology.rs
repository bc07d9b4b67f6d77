//! Device placement in a single disc-shaped cell with the base station at the
//! origin. Devices follow a homogeneous Poisson point process.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type DeviceId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellConfig {
    pub cell_radius_m: f64,
    pub density_per_m2: f64,
    pub r_d2d_m: f64,
}

impl Default for CellConfig {
    fn default() -> Self {
        CellConfig {
            cell_radius_m: 500.0,
            density_per_m2: 0.0015,
            r_d2d_m: 200.0,
        }
    }
}

impl CellConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("topology.cell_radius_m", self.cell_radius_m),
            ("topology.density_per_m2", self.density_per_m2),
            ("topology.r_d2d_m", self.r_d2d_m),
        ];
        for (field, v) in checks {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn expected_devices(&self) -> f64 {
        self.density_per_m2 * PI * self.cell_radius_m * self.cell_radius_m
    }
}

/// Mean number of devices within `R_D2D` of a requester, `lambda * pi * R^2`.
pub fn expected_neighbor_count(cfg: &CellConfig) -> f64 {
    cfg.density_per_m2 * PI * cfg.r_d2d_m * cfg.r_d2d_m
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub device: DeviceId,
    pub distance_m: f64,
}

#[derive(Debug, Clone)]
pub struct Topology {
    cell_radius_m: f64,
    r_d2d_m: f64,
    positions: Vec<(f64, f64)>,
    /// Per-device neighbors within `r_d2d_m`, nearest first.
    neighbors: Vec<Vec<Neighbor>>,
}

/// Samples device positions. Deterministic in `(cfg, seed)`; the positions do
/// not depend on `r_d2d_m`, so a radius sweep sees the same devices.
pub fn sample_topology(cfg: &CellConfig, seed: u64) -> Result<Topology> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = cfg.expected_devices();
    let count = Poisson::new(mean)
        .map_err(|e| Error::config("topology.density_per_m2", e.to_string()))?
        .sample(&mut rng) as usize;
    let positions = (0..count)
        .map(|_| {
            let r = cfg.cell_radius_m * rng.random::<f64>().sqrt();
            let theta = 2.0 * PI * rng.random::<f64>();
            (r * theta.cos(), r * theta.sin())
        })
        .collect();
    Topology::from_positions(positions, cfg.cell_radius_m, cfg.r_d2d_m)
}

impl Topology {
    pub fn from_positions(positions: Vec<(f64, f64)>, cell_radius_m: f64, r_d2d_m: f64) -> Result<Self> {
        if let Some((i, _)) = positions
            .iter()
            .enumerate()
            .find(|(_, p)| p.0.hypot(p.1) > cell_radius_m * (1.0 + 1e-12))
        {
            return Err(Error::Domain(format!("device {i} lies outside the cell")));
        }
        let n = positions.len();
        let mut neighbors = vec![Vec::new(); n];
        let r2 = r_d2d_m * r_d2d_m * (1.0 + 1e-9);
        for a in 0..n {
            for b in (a + 1)..n {
                let (dx, dy) = (positions[a].0 - positions[b].0, positions[a].1 - positions[b].1);
                if dx * dx + dy * dy > r2 {
                    continue;
                }
                let d = dist(positions[a], positions[b]);
                if d <= r_d2d_m {
                    neighbors[a].push(Neighbor { device: b, distance_m: d });
                    neighbors[b].push(Neighbor { device: a, distance_m: d });
                }
            }
        }
        for list in &mut neighbors {
            list.sort_by(|x, y| x.distance_m.total_cmp(&y.distance_m).then(x.device.cmp(&y.device)));
        }
        Ok(Topology {
            cell_radius_m,
            r_d2d_m,
            positions,
            neighbors,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// True when the sampled cell holds no devices; such a run has no requesters.
    pub fn is_degenerate(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn cell_radius_m(&self) -> f64 {
        self.cell_radius_m
    }

    pub fn r_d2d_m(&self) -> f64 {
        self.r_d2d_m
    }

    pub fn position(&self, dev: DeviceId) -> Result<(f64, f64)> {
        self.positions
            .get(dev)
            .copied()
            .ok_or_else(|| Error::Domain(format!("unknown device {dev}")))
    }

    pub fn positions(&self) -> &[(f64, f64)] {
        &self.positions
    }

    pub fn distance(&self, a: DeviceId, b: DeviceId) -> Result<f64> {
        Ok(dist(self.position(a)?, self.position(b)?))
    }

    pub fn distance_to_bs(&self, dev: DeviceId) -> Result<f64> {
        let (x, y) = self.position(dev)?;
        Ok(x.hypot(y))
    }

    /// Precomputed neighbors within the configured D2D radius, nearest first.
    pub fn d2d_neighbors(&self, dev: DeviceId) -> &[Neighbor] {
        &self.neighbors[dev]
    }

    /// Devices at Euclidean distance `<= radius` from `dev`, excluding itself,
    /// in ascending id order.
    pub fn neighbors(&self, dev: DeviceId, radius: f64) -> Result<Vec<DeviceId>> {
        let here = self.position(dev)?;
        Ok(self
            .positions
            .iter()
            .enumerate()
            .filter(|&(other, &p)| other != dev && dist(here, p) <= radius)
            .map(|(other, _)| other)
            .collect())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["device", "x_m", "y_m"])?;
        for (i, (x, y)) in self.positions.iter().enumerate() {
            w.write_record([i.to_string(), format!("{x:.6}"), format!("{y:.6}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}
