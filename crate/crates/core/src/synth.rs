//! Synthetic datasets `y = f(x) + s * e` with i.i.d. standard normal
//! features, `f` a disjoint multilinear expression and `e ~ N(0, var f)`.
//!
//! Seeding: feature column `j` is drawn from seed `seed_base + j` on the
//! feature stream, the noise column from seed `seed_base` on the noise stream
//! (see [`crate::rng`]). Rows keep generation order; the first 70% are the
//! training split.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dmie::{DmieError, DmieExpression};
use crate::rng::{seeded, stream};

/// Smallest sample count that still leaves both splits non-trivial.
pub const MIN_SAMPLES: usize = 10;

pub const DEFAULT_NOISE_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("{0} samples is too few to split (need at least {MIN_SAMPLES})")]
    TooFewSamples(usize),
    #[error("noise scale must be finite and non-negative, got {0}")]
    BadNoiseScale(f64),
    #[error("dataset shape mismatch: {0}")]
    Shape(&'static str),
    #[error(transparent)]
    Expression(#[from] DmieError),
}

/// The `sum_{i<p} x_{2i} x_{2i+1} + sum_{i<q} x_{2p+i}` family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub pairwise_terms: usize,
    pub unary_terms: usize,
    pub samples: usize,
    #[serde(default = "default_noise")]
    pub noise_scale: f64,
    #[serde(default)]
    pub seed_base: u64,
}

fn default_noise() -> f64 {
    DEFAULT_NOISE_SCALE
}

impl SyntheticSpec {
    pub fn new(pairwise_terms: usize, unary_terms: usize, samples: usize) -> Self {
        Self {
            pairwise_terms,
            unary_terms,
            samples,
            noise_scale: DEFAULT_NOISE_SCALE,
            seed_base: 0,
        }
    }

    pub fn with_noise_scale(mut self, noise_scale: f64) -> Self {
        self.noise_scale = noise_scale;
        self
    }

    pub fn num_features(&self) -> usize {
        2 * self.pairwise_terms + self.unary_terms
    }

    pub fn truth(&self) -> DmieExpression {
        let p = self.pairwise_terms;
        let terms = (0..p)
            .map(|i| vec![2 * i, 2 * i + 1])
            .chain((0..self.unary_terms).map(|i| vec![2 * p + i]))
            .collect();
        DmieExpression::new(self.num_features(), terms).expect("canonical terms are disjoint")
    }

    pub fn generator(&self) -> GeneratorSpec {
        GeneratorSpec {
            truth: self.truth(),
            samples: self.samples,
            noise_scale: self.noise_scale,
            seed_base: self.seed_base,
        }
    }
}

/// Generation parameters for an arbitrary ground-truth expression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub truth: DmieExpression,
    pub samples: usize,
    pub noise_scale: f64,
    pub seed_base: u64,
}

/// Row-major features, targets and the fixed train/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    spec: GeneratorSpec,
    features: Vec<f64>,
    targets: Vec<f64>,
    train_len: usize,
    sigma_f: f64,
}

/// Borrowed rows of a dataset.
#[derive(Debug, Clone, Copy)]
pub struct DataView<'a> {
    pub features: &'a [f64],
    pub targets: &'a [f64],
    pub num_features: usize,
}

impl<'a> DataView<'a> {
    pub fn new(features: &'a [f64], targets: &'a [f64], num_features: usize) -> Self {
        assert_eq!(features.len(), targets.len() * num_features, "view shape");
        Self {
            features,
            targets,
            num_features,
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    pub fn rows(&self) -> impl Iterator<Item = &'a [f64]> + 'a {
        let (features, d) = (self.features, self.num_features);
        (0..self.len()).map(move |i| &features[i * d..(i + 1) * d])
    }

    pub fn slice(&self, range: Range<usize>) -> DataView<'a> {
        DataView {
            features: &self.features[range.start * self.num_features..range.end * self.num_features],
            targets: &self.targets[range],
            num_features: self.num_features,
        }
    }
}

fn normal_column(seed: u64, stream: u64, n: usize) -> Vec<f64> {
    let mut rng = seeded(seed, stream);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Population standard deviation.
fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    libm::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n)
}

pub fn train_len_for(samples: usize) -> usize {
    samples * 7 / 10
}

/// Generates the dataset for an arbitrary expression.
pub fn generate_from(spec: &GeneratorSpec) -> Result<SyntheticDataset, SynthError> {
    let n = spec.samples;
    if n < MIN_SAMPLES {
        return Err(SynthError::TooFewSamples(n));
    }
    if !(spec.noise_scale.is_finite() && spec.noise_scale >= 0.0) {
        return Err(SynthError::BadNoiseScale(spec.noise_scale));
    }
    let d = spec.truth.num_features();
    let mut features = vec![0.0; n * d];
    for j in 0..d {
        let column = normal_column(spec.seed_base + j as u64, stream::FEATURE, n);
        for (i, v) in column.into_iter().enumerate() {
            features[i * d + j] = v;
        }
    }
    let clean: Vec<f64> = (0..n)
        .map(|i| spec.truth.evaluate(&features[i * d..(i + 1) * d]))
        .collect::<Result<_, _>>()?;
    let sigma_f = std_dev(&clean);
    let noise = normal_column(spec.seed_base, stream::NOISE, n);
    let scale = spec.noise_scale * sigma_f;
    let targets = clean.iter().zip(&noise).map(|(f, e)| f + scale * e).collect();
    Ok(SyntheticDataset {
        spec: spec.clone(),
        features,
        targets,
        train_len: train_len_for(n),
        sigma_f,
    })
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticDataset, SynthError> {
    generate_from(&spec.generator())
}

impl SyntheticDataset {
    /// Reassembles a dataset, e.g. after reading it back from disk.
    pub fn from_parts(
        spec: GeneratorSpec,
        features: Vec<f64>,
        targets: Vec<f64>,
        train_len: usize,
        sigma_f: f64,
    ) -> Result<Self, SynthError> {
        let d = spec.truth.num_features();
        if targets.len() != spec.samples {
            return Err(SynthError::Shape("target count differs from sample count"));
        }
        if features.len() != targets.len() * d {
            return Err(SynthError::Shape("feature matrix is not samples x features"));
        }
        if train_len == 0 || train_len >= targets.len() {
            return Err(SynthError::Shape("split leaves an empty side"));
        }
        Ok(Self {
            spec,
            features,
            targets,
            train_len,
            sigma_f,
        })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn truth(&self) -> &DmieExpression {
        &self.spec.truth
    }

    pub fn num_features(&self) -> usize {
        self.spec.truth.num_features()
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn sigma_f(&self) -> f64 {
        self.sigma_f
    }

    pub fn train_len(&self) -> usize {
        self.train_len
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn all(&self) -> DataView<'_> {
        DataView::new(&self.features, &self.targets, self.num_features())
    }

    pub fn train(&self) -> DataView<'_> {
        self.all().slice(0..self.train_len)
    }

    pub fn test(&self) -> DataView<'_> {
        self.all().slice(self.train_len..self.len())
    }

    /// Noise-free `f(x)` per row.
    pub fn clean_targets(&self) -> Vec<f64> {
        self.all()
            .rows()
            .map(|r| self.spec.truth.evaluate(r).expect("rows match the expression"))
            .collect()
    }
}

/// MAE of the Bayes predictor under the additive Gaussian noise:
/// `s * sigma_f * sqrt(2 / pi)`.
pub fn noise_mae_floor(dataset: &SyntheticDataset) -> f64 {
    dataset.spec.noise_scale * dataset.sigma_f * libm::sqrt(2.0 / PI)
}

pub fn evaluate_truth(expr: &DmieExpression, row: &[f64]) -> Result<f64, SynthError> {
    Ok(expr.evaluate(row)?)
}

#[cfg(test)]
mod tests {
    use alloc::string::ToString;
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn reference_split_sizes() {
        let ds = generate(&SyntheticSpec::new(2, 2, 10_000)).unwrap();
        assert_eq!(ds.num_features(), 6);
        assert_eq!(ds.train().len(), 7000);
        assert_eq!(ds.test().len(), 3000);
        assert_eq!(ds.truth().to_string(), "x0*x1 + x2*x3 + x4 + x5");
    }

    #[test]
    fn identity_without_noise() {
        let ds = generate(&SyntheticSpec::new(0, 1, 50).with_noise_scale(0.0)).unwrap();
        for (row, y) in ds.all().rows().zip(ds.targets()) {
            assert_eq!(row[0], *y);
        }
    }

    #[test]
    fn sigma_f_matches_population_variance() {
        // var(x y) = 1 for independent standard normals, so var f = p + q.
        let ds = generate(&SyntheticSpec::new(2, 2, 10_000)).unwrap();
        assert_abs_diff_eq!(ds.sigma_f(), 2.0, epsilon = 0.05);
    }

    #[test]
    fn noise_floor_values() {
        let ds = generate(&SyntheticSpec::new(2, 2, 10_000)).unwrap();
        let clean = ds.clean_targets();
        let noise_mae =
            ds.targets().iter().zip(&clean).map(|(y, f)| (y - f).abs()).sum::<f64>() / ds.len() as f64;
        let floor = noise_mae_floor(&ds);
        assert_abs_diff_eq!(floor, 0.1 * ds.sigma_f() * libm::sqrt(2.0 / PI), epsilon = 1e-15);
        assert_abs_diff_eq!(floor, 0.1596, epsilon = 0.005);
        assert_abs_diff_eq!(noise_mae, floor, epsilon = 0.005);

        let quiet = generate(&SyntheticSpec::new(2, 2, 100).with_noise_scale(0.0)).unwrap();
        assert_eq!(noise_mae_floor(&quiet), 0.0);

        let wide = generate(&SyntheticSpec::new(10, 2, 10_000)).unwrap();
        assert_abs_diff_eq!(noise_mae_floor(&wide), 0.2764, epsilon = 0.01);
    }

    #[test]
    fn column_statistics() {
        let ds = generate(&SyntheticSpec::new(2, 2, 10_000)).unwrap();
        let d = ds.num_features();
        for j in 0..d {
            let col: Vec<f64> = ds.all().rows().map(|r| r[j]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let sd = std_dev(&col);
            assert!(mean.abs() <= 0.05, "column {j} mean {mean}");
            assert!((0.9..=1.1).contains(&(sd * sd)), "column {j} variance {}", sd * sd);
        }
    }

    #[test]
    fn residual_scale_and_independence_from_features() {
        let ds = generate(&SyntheticSpec::new(2, 2, 10_000)).unwrap();
        let clean = ds.clean_targets();
        let resid: Vec<f64> = ds.targets().iter().zip(&clean).map(|(y, f)| y - f).collect();
        let want = 0.1 * ds.sigma_f();
        assert!((std_dev(&resid) - want).abs() <= 0.05 * want);
        // The noise stream must not replay any feature column.
        for j in 0..ds.num_features() {
            let corr = resid.iter().zip(ds.all().rows()).map(|(e, r)| e * r[j]).sum::<f64>()
                / (resid.len() as f64 * std_dev(&resid));
            assert!(corr.abs() < 0.05, "noise correlates with x{j}: {corr}");
        }
    }

    #[test]
    fn deterministic() {
        let spec = SyntheticSpec::new(1, 1, 200);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        let bits = |d: &SyntheticDataset| d.features().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn shared_columns_across_feature_counts() {
        // Column j depends only on (seed_base + j), not on the dataset width.
        let small = generate(&SyntheticSpec::new(1, 1, 100)).unwrap();
        let large = generate(&SyntheticSpec::new(3, 2, 100)).unwrap();
        for (rs, rl) in small.all().rows().zip(large.all().rows()) {
            assert_eq!(&rs[..3], &rl[..3]);
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert_eq!(generate(&SyntheticSpec::new(1, 1, 9)), Err(SynthError::TooFewSamples(9)));
        assert!(matches!(
            generate(&SyntheticSpec::new(1, 1, 100).with_noise_scale(-1.0)),
            Err(SynthError::BadNoiseScale(_))
        ));
    }

    #[test]
    fn evaluate_truth_examples() {
        let e = DmieExpression::parse("x0*x1 + x2").unwrap();
        assert_eq!(evaluate_truth(&e, &[2.0, 3.0, 5.0]), Ok(11.0));
        let empty = DmieExpression::new(0, vec![]).unwrap();
        assert_eq!(evaluate_truth(&empty, &[]), Ok(0.0));
        let triple = DmieExpression::parse("x0*x1*x2").unwrap();
        assert_eq!(evaluate_truth(&triple, &[1.0, 1.0, 1.0]), Ok(1.0));
        assert!(evaluate_truth(&triple, &[1.0]).is_err());
    }
}
