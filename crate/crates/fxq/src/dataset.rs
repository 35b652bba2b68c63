//! Built-in synthetic dataset and CSV loading.

use std::path::Path;

use anyhow::{bail, Context, Result};
use fxq_core::trainer::{Dataset, Targets};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const SYNTH_FEATURES: usize = 16;
pub const SYNTH_CLASSES: usize = 5;
const CLUSTERS_PER_CLASS: usize = 2;

/// Gaussian mixture with five classes over sixteen features. Each class is
/// a union of two unit-variance clusters whose centres are drawn from
/// `N(0, separation^2)`; larger `separation` makes the task easier.
pub fn synth_dataset(n: usize, seed: u64, separation: f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f64>> = (0..SYNTH_CLASSES * CLUSTERS_PER_CLASS)
        .map(|_| {
            (0..SYNTH_FEATURES)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    separation * z
                })
                .collect()
        })
        .collect();
    let mut features = Vec::with_capacity(n * SYNTH_FEATURES);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let class = rng.random_range(0..SYNTH_CLASSES);
        let c = &centres[class * CLUSTERS_PER_CLASS + rng.random_range(0..CLUSTERS_PER_CLASS)];
        for &m in c {
            let z: f64 = StandardNormal.sample(&mut rng);
            features.push(m + z);
        }
        labels.push(class);
    }
    Dataset::new(
        SYNTH_FEATURES,
        features,
        Targets::Classes {
            labels,
            n_classes: SYNTH_CLASSES,
        },
    )
    .expect("synthetic dataset is well formed")
}

/// Loads a CSV with a header row. `targets` names the target columns; for
/// classification there must be exactly one, holding labels `0..n_classes`.
/// All other columns are features.
pub fn load_csv(path: &Path, targets: &[String], classification: bool) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header = rdr.headers()?.clone();
    let mut target_idx = Vec::new();
    for t in targets {
        match header.iter().position(|h| h == t) {
            Some(i) => target_idx.push(i),
            None => bail!("{}: no column named `{t}`", path.display()),
        }
    }
    if target_idx.is_empty() || (classification && target_idx.len() != 1) {
        bail!("classification needs one target column, regression at least one");
    }
    let n_features = header.len() - target_idx.len();
    if n_features == 0 {
        bail!("{}: no feature columns", path.display());
    }
    let mut features = Vec::new();
    let mut values = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (i, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .with_context(|| format!("{}: row {}: bad number `{field}`", path.display(), row + 1))?;
            if target_idx.contains(&i) {
                values.push(v);
            } else {
                features.push(v);
            }
        }
    }
    let targets = if classification {
        let mut labels = Vec::with_capacity(values.len());
        for v in values {
            if v < 0.0 || v.fract() != 0.0 {
                bail!("{}: label {v} is not a non-negative integer", path.display());
            }
            labels.push(v as usize);
        }
        let n_classes = labels.iter().max().map_or(0, |m| m + 1);
        Targets::Classes { labels, n_classes }
    } else {
        Targets::Regression {
            values,
            n_outputs: target_idx.len(),
        }
    };
    Ok(Dataset::new(n_features, features, targets)?)
}
