//! Per-sample score tables and the rank-based non-uniform mini-batch sampler.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::log_sum_exp;

/// Per-sample scores indexed by stable sample index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    scores: Vec<f64>,
    initialized: Vec<bool>,
    version: u64,
}

impl ScoreTable {
    /// A table of `n` uninitialized entries.
    pub fn new(n: usize) -> Self {
        Self {
            scores: vec![0.0; n],
            initialized: vec![false; n],
            version: 0,
        }
    }

    /// A fully initialized table.
    pub fn from_scores(scores: Vec<f64>) -> Result<Self> {
        if let Some(i) = scores.iter().position(|v| v.is_nan()) {
            return Err(Error::non_finite(format!("score of sample {i}")));
        }
        let n = scores.len();
        Ok(Self {
            scores,
            initialized: vec![true; n],
            version: 1,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn initialized(&self) -> &[bool] {
        &self.initialized
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn is_complete(&self) -> bool {
        self.initialized.iter().all(|&b| b)
    }

    /// Replaces the scores at `indices`; a repeated index keeps its last value.
    pub fn update_scores_dynamic(&mut self, indices: &[usize], values: &[f64]) -> Result<()> {
        if indices.len() != values.len() {
            return Err(Error::shape("score values", indices.len(), values.len()));
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidInput(format!("sample index {i} out of range for {} entries", self.len())));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("score update value {v}")));
        }
        for (&i, &v) in indices.iter().zip(values) {
            self.scores[i] = v;
            self.initialized[i] = true;
        }
        self.version += 1;
        Ok(())
    }

    /// Assigns the median of the initialized entries to every uninitialized one.
    /// Does nothing when no entry is initialized.
    pub fn fill_uninitialized_with_median(&mut self) {
        if self.is_complete() {
            return;
        }
        let known: Vec<f64> = self
            .scores
            .iter()
            .zip(&self.initialized)
            .filter_map(|(&s, &b)| b.then_some(s))
            .collect();
        if known.is_empty() {
            return;
        }
        let median = crate::stats::percentile(&known, 50.0);
        for (s, b) in self.scores.iter_mut().zip(self.initialized.iter_mut()) {
            if !*b {
                *s = median;
                *b = true;
            }
        }
        self.version += 1;
    }

    /// Writes `(sample_index, score, initialized, version)` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sample_index", "score", "initialized", "version"])?;
        for (i, (s, b)) in self.scores.iter().zip(&self.initialized).enumerate() {
            w.write_record([i.to_string(), s.to_string(), b.to_string(), self.version.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile { path: path.to_path_buf() });
        }
        let mut r = csv::Reader::from_path(path)?;
        let mut table = Self::new(0);
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = |k: usize| {
                rec.get(k)
                    .ok_or_else(|| Error::format("score table", format!("row {row} has too few columns")))
            };
            let bad = |what: &str| Error::format("score table", format!("row {row}: invalid {what}"));
            let idx: usize = field(0)?.parse().map_err(|_| bad("sample_index"))?;
            if idx != row {
                return Err(Error::format("score table", format!("row {row} has sample_index {idx}")));
            }
            let score: f64 = field(1)?.parse().map_err(|_| bad("score"))?;
            let init: bool = field(2)?.parse().map_err(|_| bad("initialized"))?;
            table.version = field(3)?.parse().map_err(|_| bad("version"))?;
            table.scores.push(score);
            table.initialized.push(init);
        }
        Ok(table)
    }
}

/// Ranks with 1 = largest score; ties go to the smaller sample index.
pub fn rank_samples(table: &ScoreTable) -> Result<Vec<usize>> {
    if let Some(i) = table.initialized.iter().position(|&b| !b) {
        return Err(Error::InvalidInput(format!("score of sample {i} is uninitialized")));
    }
    rank_scores(&table.scores)
}

/// Ranks raw scores; see [`rank_samples`].
pub fn rank_scores(scores: &[f64]) -> Result<Vec<usize>> {
    if let Some(i) = scores.iter().position(|v| v.is_nan()) {
        return Err(Error::non_finite(format!("score of sample {i}")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; scores.len()];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = pos + 1;
    }
    Ok(ranks)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    #[default]
    Uniform,
    StaticLl,
    DynamicPsnr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub mode: SamplerMode,
    pub lambda_perc: f64,
    pub lambda_dist: f64,
    /// Dynamic mode: epochs of uniform sampling while the table fills.
    pub warmup_epochs: u64,
    /// Dynamic mode: rescore the whole training set every this many batches (0 = never).
    pub refresh_period: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            mode: SamplerMode::Uniform,
            lambda_perc: 0.0,
            lambda_dist: 0.0,
            warmup_epochs: 1,
            refresh_period: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_perc) {
            return Err(Error::config(
                "sampler.lambda_perc",
                format!("must lie in [0, 1], got {}", self.lambda_perc),
            ));
        }
        if !(self.lambda_dist >= 0.0 && self.lambda_dist.is_finite()) {
            return Err(Error::config(
                "sampler.lambda_dist",
                format!("must be finite and >= 0, got {}", self.lambda_dist),
            ));
        }
        Ok(())
    }
}

fn check_permutation(ranks: &[usize]) -> Result<()> {
    let n = ranks.len();
    if n == 0 {
        return Err(Error::InvalidInput("ranks must be non-empty".into()));
    }
    let mut seen = vec![false; n];
    for &k in ranks {
        if k == 0 || k > n || std::mem::replace(&mut seen[k - 1], true) {
            return Err(Error::InvalidInput(format!("ranks are not a permutation of 1..={n}")));
        }
    }
    Ok(())
}

/// `Pr_k = (1 − λ_perc)/N + λ_perc · k^λ_dist / Σ_j j^λ_dist`, indexed like `ranks`.
/// The power weights are normalized in the log domain.
pub fn sampling_distribution(ranks: &[usize], lambda_perc: f64, lambda_dist: f64) -> Result<Vec<f64>> {
    check_permutation(ranks)?;
    SamplerConfig {
        lambda_perc,
        lambda_dist,
        ..Default::default()
    }
    .validate()?;
    let n = ranks.len();
    let log_w: Vec<f64> = (1..=n).map(|k| lambda_dist * (k as f64).ln()).collect();
    let log_z = log_sum_exp(&log_w);
    let base = (1.0 - lambda_perc) / n as f64;
    Ok(ranks
        .iter()
        .map(|&k| base + lambda_perc * (log_w[k - 1] - log_z).exp())
        .collect())
}

/// Cumulative distribution prepared for repeated draws.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampler {
    cdf: Vec<f64>,
}

impl Sampler {
    pub fn new(dist: &[f64]) -> Result<Self> {
        if dist.is_empty() {
            return Err(Error::InvalidInput("sampling distribution must be non-empty".into()));
        }
        if dist.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidInput("sampling probabilities must be finite and non-negative".into()));
        }
        let mut acc = 0.0;
        let cdf: Vec<f64> = dist
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        if !(acc > 0.0) {
            return Err(Error::InvalidInput("sampling distribution has zero mass".into()));
        }
        Ok(Self { cdf })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(&vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.cdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cdf.is_empty()
    }

    /// Draws `batch_size` indices i.i.d. with replacement.
    pub fn draw_batch<R: Rng>(&self, batch_size: usize, rng: &mut R) -> Vec<usize> {
        let total = *self.cdf.last().expect("non-empty");
        let last = self.cdf.len() - 1;
        (0..batch_size)
            .map(|_| {
                let u = rng.random::<f64>() * total;
                self.cdf.partition_point(|&c| c <= u).min(last)
            })
            .collect()
    }
}

/// Convenience wrapper around [`Sampler::draw_batch`].
pub fn draw_batch<R: Rng>(dist: &[f64], batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
    if batch_size == 0 {
        return Err(Error::InvalidInput("batch_size must be at least 1".into()));
    }
    Ok(Sampler::new(dist)?.draw_batch(batch_size, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rank_examples() {
        assert_eq!(rank_scores(&[5.0, 1.0, 3.0]).unwrap(), vec![1, 3, 2]);
        assert_eq!(rank_scores(&[2.0; 4]).unwrap(), vec![1, 2, 3, 4]);
        assert!(rank_scores(&[1.0, f64::NAN]).is_err());
        assert!(rank_samples(&ScoreTable::new(3)).is_err());
    }

    #[test]
    fn distribution_examples() {
        let ranks = [1, 2, 3, 4, 5];
        for p in sampling_distribution(&ranks, 0.0, 7.0).unwrap() {
            assert!((p - 0.2).abs() < 1e-15);
        }
        for p in sampling_distribution(&ranks, 0.7, 0.0).unwrap() {
            assert!((p - 0.2).abs() < 1e-15);
        }
        let p = sampling_distribution(&[1, 2, 3, 4], 1.0, 1.0).unwrap();
        for (a, b) in p.iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(sampling_distribution(&[1, 1, 2], 0.5, 1.0).is_err());
        assert!(sampling_distribution(&[1, 2], 1.5, 1.0).unwrap_err().is_config());
    }

    #[test]
    fn draws_are_reproducible_and_respect_point_mass() {
        let dist = [0.0, 0.0, 1.0, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(draw_batch(&dist, 100, &mut rng).unwrap().iter().all(|&i| i == 2));
        let uni = [0.25; 4];
        let a = draw_batch(&uni, 50, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = draw_batch(&uni, 50, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dynamic_updates() {
        let mut t = ScoreTable::new(5);
        t.update_scores_dynamic(&[3], &[25.0]).unwrap();
        assert_eq!(t.scores()[3], 25.0);
        assert_eq!(t.version(), 1);
        t.update_scores_dynamic(&[1, 1], &[2.0, 7.0]).unwrap();
        assert_eq!(t.scores()[1], 7.0);
        assert!(t.update_scores_dynamic(&[9], &[1.0]).is_err());
        assert!(t.update_scores_dynamic(&[0], &[f64::INFINITY]).is_err());
        t.fill_uninitialized_with_median();
        assert!(t.is_complete());
        assert_eq!(t.scores()[0], 16.0);
    }
}
