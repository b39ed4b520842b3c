use serde::{Deserialize, Serialize};

use super::VelocityGrid;
use crate::{Error, Result};

/// Which grid edges absorb outgoing energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// Dirichlet `u = 0` on the top row, PML on the other edges.
    #[default]
    FreeSurfaceTop,
    /// PML on every edge.
    PmlAll,
}

/// Source and receiver cells. Every shot records on the same receiver set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionGeometry {
    pub sources: Vec<(usize, usize)>,
    pub receivers: Vec<(usize, usize)>,
    pub boundary: Boundary,
}

impl AcquisitionGeometry {
    pub fn new(sources: Vec<(usize, usize)>, receivers: Vec<(usize, usize)>, boundary: Boundary) -> Self {
        Self { sources, receivers, boundary }
    }

    /// Sources at `depth` every `source_step` cells starting at `first_source`,
    /// receivers on every `receiver_step`-th cell of row `depth`.
    pub fn surface_line(
        nx: usize,
        depth: usize,
        first_source: usize,
        source_step: usize,
        n_sources: usize,
        receiver_step: usize,
        boundary: Boundary,
    ) -> Self {
        let sources = (0..n_sources).map(|s| (depth, first_source + s * source_step)).collect();
        let receivers = (0..nx).step_by(receiver_step.max(1)).map(|ix| (depth, ix)).collect();
        Self { sources, receivers, boundary }
    }

    pub fn n_shots(&self) -> usize {
        self.sources.len()
    }

    pub fn validate(&self, grid: &VelocityGrid) -> Result<()> {
        if self.sources.is_empty() || self.receivers.is_empty() {
            return Err(Error::invalid("geometry needs at least one source and one receiver"));
        }
        let inside = |&(iz, ix): &(usize, usize)| iz < grid.nz() && ix < grid.nx();
        if let Some(p) = self.sources.iter().find(|p| !inside(p)) {
            return Err(Error::invalid(format!("source {p:?} outside {}x{} grid", grid.nz(), grid.nx())));
        }
        if let Some(p) = self.receivers.iter().find(|p| !inside(p)) {
            return Err(Error::invalid(format!("receiver {p:?} outside {}x{} grid", grid.nz(), grid.nx())));
        }
        Ok(())
    }

    /// The geometry restricted to a subset of shots, in the given order.
    pub fn with_shots(&self, shots: &[usize]) -> Result<Self> {
        let sources = shots
            .iter()
            .map(|&s| {
                self.sources
                    .get(s)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("shot {s} out of range ({} shots)", self.sources.len())))
            })
            .collect::<Result<_>>()?;
        Ok(Self { sources, receivers: self.receivers.clone(), boundary: self.boundary })
    }
}
