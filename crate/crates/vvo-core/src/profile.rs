//! Exogenous drivers of the simulation: hourly solar irradiance and the
//! seeds behind per-episode demand variation.
//!
//! Irradiance follows a clear-sky half-sine over each day scaled by one
//! cloudiness factor per day drawn uniformly from [0.6, 1.0]. The whole year
//! is a pure function of the profile seed. Either generator can be overridden
//! per hour from CSV files.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const HOURS_PER_YEAR: usize = 8760;
pub const DAYS_PER_YEAR: usize = 365;
pub const CLOUD_MIN: f64 = 0.6;
pub const CLOUD_MAX: f64 = 1.0;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("failed to read profile file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse profile CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("profile row {row}: {message}")]
    BadRow { row: usize, message: String },
}

/// Clear-sky irradiance for an hour of day: zero outside 6:00-18:00, peaking
/// at 1.0 at noon.
pub fn clear_sky(hour_of_day: f64) -> f64 {
    (std::f64::consts::PI * (hour_of_day - 6.0) / 12.0).sin().max(0.0)
}

#[derive(Debug, Clone)]
pub struct ExogenousProfile {
    seed: u64,
    cloud_factor: Vec<f64>,
    irradiance_override: HashMap<usize, f64>,
    load_seed_override: HashMap<usize, u64>,
}

impl ExogenousProfile {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cloud_factor = (0..DAYS_PER_YEAR)
            .map(|_| rng.gen_range(CLOUD_MIN..=CLOUD_MAX))
            .collect();
        ExogenousProfile {
            seed,
            cloud_factor,
            irradiance_override: HashMap::new(),
            load_seed_override: HashMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Irradiance in [0, 1] for an absolute hour index.
    pub fn irradiance(&self, hour: usize) -> f64 {
        if let Some(&v) = self.irradiance_override.get(&hour) {
            return v;
        }
        let day = (hour / 24) % DAYS_PER_YEAR;
        clear_sky((hour % 24) as f64) * self.cloud_factor[day]
    }

    /// Per-hour demand seed override, when one was loaded.
    pub fn load_factor_seed(&self, hour: usize) -> Option<u64> {
        self.load_seed_override.get(&hour).copied()
    }

    /// Loads `(hour, irradiance)` rows that replace the generated values.
    pub fn load_irradiance_csv(&mut self, path: &Path) -> Result<(), ProfileError> {
        for (row, rec) in csv_rows(path)?.into_iter().enumerate() {
            let (hour, value) = parse_pair(&rec, row)?;
            if !(0.0..=1.5).contains(&value) {
                return Err(ProfileError::BadRow {
                    row,
                    message: format!("irradiance {value} outside [0, 1.5]"),
                });
            }
            self.irradiance_override.insert(hour, value);
        }
        Ok(())
    }

    /// Loads `(hour, load_factor_seed)` rows; demand sampling at those hours
    /// then derives from the listed seed instead of the episode seed.
    pub fn load_demand_seed_csv(&mut self, path: &Path) -> Result<(), ProfileError> {
        for (row, rec) in csv_rows(path)?.into_iter().enumerate() {
            let (hour, value) = parse_pair(&rec, row)?;
            if value < 0.0 || value.fract() != 0.0 {
                return Err(ProfileError::BadRow {
                    row,
                    message: format!("seed {value} is not a non-negative integer"),
                });
            }
            self.load_seed_override.insert(hour, value as u64);
        }
        Ok(())
    }
}

fn csv_rows(path: &Path) -> Result<Vec<csv::StringRecord>, ProfileError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        rows.push(rec?);
    }
    Ok(rows)
}

fn parse_pair(rec: &csv::StringRecord, row: usize) -> Result<(usize, f64), ProfileError> {
    if rec.len() < 2 {
        return Err(ProfileError::BadRow { row, message: "expected two columns".into() });
    }
    let hour: usize = rec[0].trim().parse().map_err(|e| ProfileError::BadRow {
        row,
        message: format!("bad hour {:?}: {e}", &rec[0]),
    })?;
    if hour >= HOURS_PER_YEAR {
        return Err(ProfileError::BadRow { row, message: format!("hour {hour} >= {HOURS_PER_YEAR}") });
    }
    let value: f64 = rec[1].trim().parse().map_err(|e| ProfileError::BadRow {
        row,
        message: format!("bad value {:?}: {e}", &rec[1]),
    })?;
    Ok((hour, value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::io::Write;

    #[test]
    fn clear_sky_shape() {
        assert_eq!(clear_sky(0.0), 0.0);
        assert_eq!(clear_sky(5.9), 0.0);
        assert_abs_diff_eq!(clear_sky(12.0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(clear_sky(9.0), (std::f64::consts::PI / 4.0).sin(), epsilon = 1e-12);
        assert!(clear_sky(18.1) == 0.0);
    }

    #[test]
    fn same_seed_reproduces_year_different_seed_differs() {
        let a = ExogenousProfile::new(7);
        let b = ExogenousProfile::new(7);
        let c = ExogenousProfile::new(8);
        let year_a: Vec<f64> = (0..HOURS_PER_YEAR).map(|h| a.irradiance(h)).collect();
        let year_b: Vec<f64> = (0..HOURS_PER_YEAR).map(|h| b.irradiance(h)).collect();
        assert_eq!(year_a, year_b);
        assert!((0..HOURS_PER_YEAR).any(|h| a.irradiance(h) != c.irradiance(h)));
    }

    #[test]
    fn irradiance_bounds_and_day_night() {
        let p = ExogenousProfile::new(7);
        for h in 0..HOURS_PER_YEAR {
            let v = p.irradiance(h);
            assert!((0.0..=1.0).contains(&v), "hour {h} -> {v}");
        }
        assert_eq!(p.irradiance(0), 0.0);
        assert!(p.irradiance(12) >= CLOUD_MIN);
        assert!(p.irradiance(36) >= CLOUD_MIN);
    }

    #[test]
    fn cloud_factor_scales_within_band() {
        let p = ExogenousProfile::new(3);
        for day in 0..30 {
            let noon = p.irradiance(day * 24 + 12);
            assert!((CLOUD_MIN..=CLOUD_MAX).contains(&noon));
        }
    }

    #[test]
    fn csv_overrides_replace_generated_values() {
        let dir = tempfile::tempdir().unwrap();
        let irr = dir.path().join("irr.csv");
        let mut f = std::fs::File::create(&irr).unwrap();
        writeln!(f, "hour,irradiance").unwrap();
        writeln!(f, "12,0.25").unwrap();
        let seeds = dir.path().join("seeds.csv");
        let mut f = std::fs::File::create(&seeds).unwrap();
        writeln!(f, "hour,load_factor_seed").unwrap();
        writeln!(f, "5,12345").unwrap();

        let mut p = ExogenousProfile::new(7);
        p.load_irradiance_csv(&irr).unwrap();
        p.load_demand_seed_csv(&seeds).unwrap();
        assert_eq!(p.irradiance(12), 0.25);
        assert!(p.irradiance(13) > 0.0);
        assert_eq!(p.load_factor_seed(5), Some(12345));
        assert_eq!(p.load_factor_seed(6), None);
    }

    #[test]
    fn rejects_out_of_range_rows() {
        let dir = tempfile::tempdir().unwrap();
        let irr = dir.path().join("irr.csv");
        let mut f = std::fs::File::create(&irr).unwrap();
        writeln!(f, "hour,irradiance").unwrap();
        writeln!(f, "9999,0.5").unwrap();
        let mut p = ExogenousProfile::new(7);
        assert!(matches!(p.load_irradiance_csv(&irr), Err(ProfileError::BadRow { .. })));
    }
}
