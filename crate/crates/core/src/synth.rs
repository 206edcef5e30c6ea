//! Synthetic check-in data with planted groups: users and POIs are assigned
//! to `num_groups` groups round-robin and users mostly visit POIs of their
//! own group.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ids::{PoiId, UserId};
use crate::ingest::{Dataset, RawCheckIn};
use crate::joint::substream;

const START_TS: i64 = 1_262_304_000;
const STEP_SECS: i64 = 3_600;
const JITTER_DEG: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub num_users: usize,
    pub num_pois: usize,
    pub num_groups: usize,
    /// Probability that a visit ignores the group and picks any POI.
    pub epsilon: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_users: 500,
            num_pois: 200,
            num_groups: 10,
            epsilon: 0.2,
            min_len: 20,
            max_len: 50,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_groups < 2 {
            return Err(Error::Config("at least 2 groups are required".into()));
        }
        if self.num_users < self.num_groups || self.num_pois < self.num_groups {
            return Err(Error::Config(format!(
                "need at least as many users and POIs as groups ({} users, {} POIs, {} groups)",
                self.num_users, self.num_pois, self.num_groups
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon must lie in [0, 1], got {}", self.epsilon)));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "invalid sequence length range [{}, {}]",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }

    pub fn user_group(&self, user: usize) -> usize {
        user % self.num_groups
    }

    pub fn poi_group(&self, poi: usize) -> usize {
        poi % self.num_groups
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub dataset: Dataset,
    /// Group of each dense user id in `dataset`.
    pub user_groups: Vec<usize>,
    /// Group of each dense POI id in `dataset`.
    pub poi_groups: Vec<usize>,
}

fn user_key(u: usize) -> String {
    format!("u{u}")
}

fn poi_key(p: usize) -> String {
    format!("p{p}")
}

/// Raw check-ins of the generator, users in order. Each user draws from its
/// own substream so the output does not depend on generation order.
pub fn generate_raw(config: &SynthConfig) -> Result<Vec<RawCheckIn>> {
    config.validate()?;
    let g = config.num_groups;
    let members: Vec<Vec<usize>> = (0..g)
        .map(|grp| (grp..config.num_pois).step_by(g).collect())
        .collect();

    let mut coord_rng = substream(config.seed, u64::MAX);
    let coords: Vec<(f64, f64)> = (0..config.num_pois)
        .map(|p| {
            let grp = config.poi_group(p) as f64;
            let lat = -60.0 + 120.0 * (grp + 0.5) / g as f64;
            let lon = -150.0 + 300.0 * (grp + 0.5) / g as f64;
            (
                lat + coord_rng.gen_range(-JITTER_DEG..JITTER_DEG),
                lon + coord_rng.gen_range(-JITTER_DEG..JITTER_DEG),
            )
        })
        .collect();

    let mut out = Vec::new();
    for u in 0..config.num_users {
        let mut rng = substream(config.seed, u as u64);
        let own = &members[config.user_group(u)];
        let len = rng.gen_range(config.min_len..=config.max_len);
        for step in 0..len {
            let p = if rng.gen::<f64>() < config.epsilon {
                rng.gen_range(0..config.num_pois)
            } else {
                own[rng.gen_range(0..own.len())]
            };
            let (lat, lon) = coords[p];
            out.push(RawCheckIn {
                user_key: user_key(u),
                poi_key: poi_key(p),
                lat,
                lon,
                timestamp: START_TS + step as i64 * STEP_SECS,
            });
        }
    }
    Ok(out)
}

/// Unsplit dataset plus group labels. POIs nobody visited do not appear.
pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    let raw = generate_raw(config)?;
    let dataset = Dataset::from_raw(&raw)?;
    let parse = |key: &str| key[1..].parse::<usize>().expect("generator key");
    let user_groups = (0..dataset.num_users())
        .map(|u| config.user_group(parse(dataset.user_key(UserId::from_index(u)))))
        .collect();
    let poi_groups = (0..dataset.num_pois())
        .map(|p| config.poi_group(parse(dataset.poi_key(PoiId::from_index(p)))))
        .collect();
    Ok(SynthData {
        dataset,
        user_groups,
        poi_groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn in_group_counts(data: &SynthData) -> (usize, usize) {
        let mut hit = 0;
        let mut total = 0;
        for u in data.dataset.users() {
            for c in data.dataset.sequence(u) {
                total += 1;
                if data.user_groups[u.index()] == data.poi_groups[c.poi.index()] {
                    hit += 1;
                }
            }
        }
        (hit, total)
    }

    #[test]
    fn epsilon_zero_stays_in_group() {
        let cfg = SynthConfig { epsilon: 0.0, num_users: 60, num_pois: 40, ..SynthConfig::default() };
        let data = generate(&cfg).unwrap();
        let (hit, total) = in_group_counts(&data);
        assert_eq!(hit, total);
    }

    #[test]
    fn in_group_fraction_close_to_target() {
        for eps in [0.05, 0.1, 0.2] {
            let cfg = SynthConfig { epsilon: eps, seed: 9, ..SynthConfig::default() };
            let data = generate(&cfg).unwrap();
            let (hit, total) = in_group_counts(&data);
            assert!(total >= 10_000);
            // a uniform pick lands in-group with probability 1/G as well
            let expected = (1.0 - eps) + eps / cfg.num_groups as f64;
            let frac = hit as f64 / total as f64;
            assert!((frac - expected).abs() < 0.03, "eps={eps}: {frac} vs {expected}");
            assert!((frac - (1.0 - eps)).abs() < 0.03, "eps={eps}: {frac}");
        }
    }

    #[test]
    fn epsilon_one_is_independent_of_group() {
        let cfg = SynthConfig { epsilon: 1.0, num_users: 400, num_pois: 100, num_groups: 5, seed: 21, ..SynthConfig::default() };
        let data = generate(&cfg).unwrap();
        let g = cfg.num_groups;
        let mut table = vec![vec![0f64; g]; g];
        for u in data.dataset.users() {
            for c in data.dataset.sequence(u) {
                table[data.user_groups[u.index()]][data.poi_groups[c.poi.index()]] += 1.0;
            }
        }
        let n: f64 = table.iter().flatten().sum();
        assert!(n >= 10_000.0);
        let rows: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
        let cols: Vec<f64> = (0..g).map(|j| table.iter().map(|r| r[j]).sum()).collect();
        let mut stat = 0.0;
        for i in 0..g {
            for j in 0..g {
                let e = rows[i] * cols[j] / n;
                stat += (table[i][j] - e).powi(2) / e;
            }
        }
        let dist = ChiSquared::new(((g - 1) * (g - 1)) as f64).unwrap();
        let p = 1.0 - dist.cdf(stat);
        assert!(p > 0.001, "chi2={stat} p={p}");
    }

    #[test]
    fn lengths_and_timestamps() {
        let cfg = SynthConfig { num_users: 50, num_pois: 30, ..SynthConfig::default() };
        let data = generate(&cfg).unwrap();
        for u in data.dataset.users() {
            let seq = data.dataset.sequence(u);
            assert!((20..=50).contains(&seq.len()));
            assert!(seq.windows(2).all(|w| w[0].timestamp < w[1].timestamp));
        }
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = SynthConfig { num_users: 30, num_pois: 25, seed: 4, ..SynthConfig::default() };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = SynthConfig { seed: 5, ..cfg };
        assert_ne!(generate(&cfg).unwrap().dataset, generate(&other).unwrap().dataset);
    }

    #[test]
    fn survives_default_preprocessing() {
        let cfg = SynthConfig { num_users: 100, num_pois: 30, num_groups: 3, ..SynthConfig::default() };
        let raw = generate_raw(&cfg).unwrap();
        let pcfg = crate::ingest::PreprocessConfig { min_users_per_poi: 1, ..Default::default() };
        let d = crate::ingest::preprocess(&raw, &pcfg).unwrap();
        assert_eq!(d.num_users(), 100);
        assert_eq!(d.num_checkins(), raw.len());
    }

    #[test]
    fn rejects_bad_configs() {
        let base = SynthConfig::default();
        for bad in [
            SynthConfig { num_groups: 1, ..base },
            SynthConfig { num_pois: 5, ..base },
            SynthConfig { num_users: 3, ..base },
            SynthConfig { epsilon: 1.5, ..base },
            SynthConfig { min_len: 30, max_len: 20, ..base },
        ] {
            assert!(matches!(generate(&bad), Err(Error::Config(_))));
        }
    }
}
