use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::filter::{filter_gather, Pass};
use crate::model::ShotGather;
use crate::{Error, Result};

/// Data degradation applied before inversion.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// `k` in the additive noise level `k·σ0`.
    #[serde(default)]
    pub noise_sigma_factor: f64,
    #[serde(default)]
    pub highpass_cutoff_hz: Option<f64>,
    /// Shot ids to keep.
    #[serde(default)]
    pub shot_subset: Option<Vec<usize>>,
}

impl Scenario {
    pub fn clean() -> Self {
        Self::default()
    }

    pub fn noisy(k: f64) -> Self {
        Self { noise_sigma_factor: k, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma_factor.is_finite() && self.noise_sigma_factor >= 0.0) {
            return Err(Error::invalid(format!("noise factor must be ≥ 0, got {}", self.noise_sigma_factor)));
        }
        if let Some(c) = self.highpass_cutoff_hz {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::invalid(format!("high-pass cutoff must be positive, got {c}")));
            }
        }
        if let Some(s) = &self.shot_subset {
            if s.is_empty() {
                return Err(Error::invalid("shot subset is empty"));
            }
        }
        Ok(())
    }
}

/// Gathers tagged with the id of the shot that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotData {
    pub shots: Vec<usize>,
    pub gathers: Vec<ShotGather>,
}

impl ShotData {
    /// Ids `0..n` in order.
    pub fn new(gathers: Vec<ShotGather>) -> Self {
        Self { shots: (0..gathers.len()).collect(), gathers }
    }
}

fn std_dev(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Select the subset, high-pass, then add `N(0, (k σ0)²)` noise where `σ0`
/// is the standard deviation of the shot's clean data. Noise for each shot
/// comes from a stream keyed by its id, so the steps commute.
pub fn degrade_data(data: &ShotData, scenario: &Scenario, seed: u64) -> Result<ShotData> {
    scenario.validate()?;
    let mut picked: Vec<(usize, ShotGather)> = match &scenario.shot_subset {
        None => data.shots.iter().copied().zip(data.gathers.iter().cloned()).collect(),
        Some(subset) => subset
            .iter()
            .map(|id| {
                data.shots
                    .iter()
                    .position(|s| s == id)
                    .map(|i| (*id, data.gathers[i].clone()))
                    .ok_or_else(|| Error::invalid(format!("shot {id} is not in the data")))
            })
            .collect::<Result<_>>()?,
    };
    if let Some(c) = scenario.highpass_cutoff_hz {
        for (_, g) in &mut picked {
            *g = filter_gather(g, c, Pass::High)?;
        }
    }
    let k = scenario.noise_sigma_factor;
    if k > 0.0 {
        for (id, g) in &mut picked {
            let sigma = k * std_dev(g.data());
            if sigma == 0.0 {
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(*id as u64);
            let noise = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
            for v in g.data_mut() {
                *v += noise.sample(&mut rng);
            }
        }
    }
    let (shots, gathers) = picked.into_iter().unzip();
    Ok(ShotData { shots, gathers })
}
