//! Link delay models. All delays are integer microseconds.

use optbft_core::PartyId;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Round-trip ping times in milliseconds between five cloud regions:
/// us-east1, us-west1, europe-west1, europe-north1 and asia-northeast1.
pub const GCP_PING_MS: [[f64; 5]; 5] = [
    [0.62, 66.30, 91.38, 114.63, 164.05],
    [66.42, 0.57, 135.27, 158.52, 90.84],
    [91.45, 135.27, 0.63, 34.45, 225.50],
    [114.97, 158.55, 34.50, 0.74, 246.24],
    [164.00, 90.80, 226.04, 246.36, 0.55],
];

pub const GCP_REGIONS: [&str; 5] = ["us-east1", "us-west1", "europe-west1", "europe-north1", "asia-northeast1"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    /// `"gcp"`: the built-in [`GCP_PING_MS`] table.
    Named(String),
    /// Round-trip milliseconds, row = source region, column = destination.
    Custom(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelayModel {
    /// Every link takes exactly `delta_us`.
    Uniform { delta_us: u64 },
    /// Region-to-region ping matrix; a link takes half the round trip.
    /// Party `i` sits in `regions[i]`, or in region `i mod R` when omitted.
    PerLinkMatrix {
        matrix: MatrixSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        regions: Option<Vec<usize>>,
    },
    /// Each message independently takes a uniform delay in `[lo_us, hi_us]`,
    /// drawn from the scenario's seeded generator.
    Jitter { lo_us: u64, hi_us: u64 },
}

impl Default for DelayModel {
    fn default() -> Self {
        DelayModel::Uniform { delta_us: 10_000 }
    }
}

impl DelayModel {
    fn matrix(spec: &MatrixSpec) -> Result<Vec<Vec<f64>>, String> {
        match spec {
            MatrixSpec::Named(name) if name == "gcp" => Ok(GCP_PING_MS.iter().map(|r| r.to_vec()).collect()),
            MatrixSpec::Named(name) => Err(format!("unknown matrix {name:?}")),
            MatrixSpec::Custom(rows) => Ok(rows.clone()),
        }
    }

    pub fn validate(&self, n: usize) -> Result<(), String> {
        match self {
            DelayModel::Uniform { delta_us } if *delta_us == 0 => Err("delta_us must be positive".into()),
            DelayModel::Jitter { lo_us, hi_us } if *lo_us == 0 || lo_us > hi_us => {
                Err("jitter needs 0 < lo_us ≤ hi_us".into())
            }
            DelayModel::PerLinkMatrix { matrix, regions } => {
                let m = Self::matrix(matrix)?;
                let r = m.len();
                if r == 0 || m.iter().any(|row| row.len() != r) {
                    return Err("matrix must be square and nonempty".into());
                }
                if m.iter().flatten().any(|&x| !(x > 0.0 && x.is_finite())) {
                    return Err("matrix entries must be positive".into());
                }
                if let Some(regions) = regions {
                    if regions.len() != n || regions.iter().any(|&g| g >= r) {
                        return Err("regions must list one valid region per party".into());
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Resolves the model for `n` parties. Call after [`DelayModel::validate`].
    pub fn build(&self, n: usize) -> Links {
        match self {
            DelayModel::Uniform { delta_us } => Links::Uniform(*delta_us),
            DelayModel::Jitter { lo_us, hi_us } => Links::Jitter(*lo_us, *hi_us),
            DelayModel::PerLinkMatrix { matrix, regions } => {
                let m = Self::matrix(matrix).expect("validated");
                let region = |i: usize| regions.as_ref().map_or(i % m.len(), |r| r[i]);
                let table = (0..n)
                    .map(|i| (0..n).map(|j| (m[region(i)][region(j)] * 500.0).round().max(1.0) as u64).collect())
                    .collect();
                Links::Table(table)
            }
        }
    }
}

/// A delay model resolved for a fixed party count.
#[derive(Debug, Clone)]
pub enum Links {
    Uniform(u64),
    Jitter(u64, u64),
    Table(Vec<Vec<u64>>),
}

impl Links {
    pub fn sample(&self, from: PartyId, to: PartyId, rng: &mut ChaCha8Rng) -> u64 {
        match self {
            Links::Uniform(d) => *d,
            Links::Jitter(lo, hi) => rng.gen_range(*lo..=*hi),
            // Endpoints outside the table (a dispersal client) use the row of party 0.
            Links::Table(t) => {
                let n = t.len();
                let (a, b) = (if from < n { from } else { 0 }, if to < n { to } else { 0 });
                t[a][b]
            }
        }
    }

    /// Largest delay the model can produce.
    pub fn max(&self) -> u64 {
        match self {
            Links::Uniform(d) => *d,
            Links::Jitter(_, hi) => *hi,
            Links::Table(t) => t.iter().flatten().copied().max().unwrap_or(1),
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn gcp_links_take_half_the_round_trip() {
        let links = DelayModel::PerLinkMatrix { matrix: MatrixSpec::Named("gcp".into()), regions: None }.build(10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // Party 0 in us-east1, party 4 in asia-northeast1, party 5 back in us-east1.
        assert_eq!(links.sample(0, 4, &mut rng), 82_025);
        assert_eq!(links.sample(0, 5, &mut rng), 310);
        assert_eq!(links.max(), 123_180);
    }

    #[test]
    fn jitter_stays_in_range_and_is_seeded() {
        let links = DelayModel::Jitter { lo_us: 5, hi_us: 9 }.build(4);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| links.sample(0, 1, &mut rng)).collect::<Vec<_>>()
        };
        assert!(draw(1).iter().all(|d| (5..=9).contains(d)));
        assert_eq!(draw(1), draw(1));
        assert_ne!(draw(1), draw(2));
    }

    #[test]
    fn malformed_models_are_rejected() {
        assert!(DelayModel::Uniform { delta_us: 0 }.validate(4).is_err());
        assert!(DelayModel::Jitter { lo_us: 5, hi_us: 4 }.validate(4).is_err());
        let m = DelayModel::PerLinkMatrix { matrix: MatrixSpec::Custom(vec![vec![1.0, 2.0]]), regions: None };
        assert!(m.validate(4).is_err());
        let m = DelayModel::PerLinkMatrix { matrix: MatrixSpec::Named("gcp".into()), regions: Some(vec![0, 9]) };
        assert!(m.validate(2).is_err());
    }
}
