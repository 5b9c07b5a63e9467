//! Dataset URIs and the preprocessing pipeline used by the commands.
//!
//! * `synth://SEED/N/CLASSES/CxHxW`: a synthetic blob dataset.
//! * `idx://DIR`: `images-idx3-ubyte[.gz]` and `labels-idx1-ubyte[.gz]` in
//!   `DIR`.
//! * `idx://IMAGES,LABELS`: explicit file pair.
//!
//! Any URI may end in `?downsample=K&take=N` to halve the resolution `K`
//! times and keep the first `N` examples. Relative paths are resolved
//! against a base directory (the config file's directory).

use std::path::{Path, PathBuf};

use fitnets_core::data::{
    downsample_2x, global_contrast_normalize, split, synthetic_dataset, zca_apply, zca_fit, Dataset, SplitTag,
};
use fitnets_core::netarch::FeatureShape;
use fitnets_core::train::Splits;
use fitnets_core::Scalar;

use crate::error::{FitError, Result};
use crate::idx::load_idx;

fn find_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    [stem.to_string(), format!("{stem}.gz")]
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.exists())
        .ok_or_else(|| FitError::Usage(format!("{}: no {stem} or {stem}.gz", dir.display())))
}

fn usize_field(v: &str, what: &str, uri: &str) -> Result<usize> {
    v.parse().map_err(|_| FitError::Usage(format!("dataset URI `{uri}`: bad {what} `{v}`")))
}

/// Loads the dataset named by `uri`.
pub fn load_uri(uri: &str, base: &Path) -> Result<Dataset> {
    let (body, query) = uri.split_once('?').unwrap_or((uri, ""));
    let mut data = if let Some(rest) = body.strip_prefix("synth://") {
        let parts: Vec<&str> = rest.split('/').collect();
        let [seed, n, classes, shape] = parts.as_slice() else {
            return Err(FitError::Usage(format!("dataset URI `{uri}`: expected synth://SEED/N/CLASSES/CxHxW")));
        };
        let dims: Vec<usize> = shape
            .split('x')
            .map(|d| usize_field(d, "shape", uri))
            .collect::<Result<_>>()?;
        let [c, h, w] = dims.as_slice() else {
            return Err(FitError::Usage(format!("dataset URI `{uri}`: shape must be CxHxW")));
        };
        synthetic_dataset(
            seed.parse().map_err(|_| FitError::Usage(format!("dataset URI `{uri}`: bad seed")))?,
            usize_field(n, "count", uri)?,
            usize_field(classes, "class count", uri)?,
            FeatureShape::new(*c, *h, *w),
        )?
    } else if let Some(rest) = body.strip_prefix("idx://") {
        let (images, labels) = match rest.split_once(',') {
            Some((i, l)) => (base.join(i), base.join(l)),
            None => {
                let dir = base.join(rest);
                if !dir.is_dir() {
                    return Err(FitError::Usage(format!("dataset directory {} does not exist", dir.display())));
                }
                (find_file(&dir, "images-idx3-ubyte")?, find_file(&dir, "labels-idx1-ubyte")?)
            }
        };
        for p in [&images, &labels] {
            if !p.exists() {
                return Err(FitError::Usage(format!("dataset file {} does not exist", p.display())));
            }
        }
        load_idx(&images, &labels)?
    } else {
        return Err(FitError::Usage(format!(
            "dataset URI `{uri}`: expected a synth:// or idx:// scheme"
        )));
    };
    for pair in query.split('&').filter(|p| !p.is_empty()) {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| FitError::Usage(format!("dataset URI `{uri}`: bad option `{pair}`")))?;
        match k {
            "downsample" => {
                for _ in 0..usize_field(v, "downsample", uri)? {
                    data = downsample_2x(&data)?;
                }
            }
            "take" => data = data.take(usize_field(v, "take", uri)?.min(data.len()))?,
            _ => return Err(FitError::Usage(format!("dataset URI `{uri}`: unknown option `{k}`"))),
        }
    }
    Ok(data)
}

/// How a run obtains and preprocesses its splits.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: String,
    /// Separate test set; otherwise the test split is carved from `source`.
    pub test_source: Option<String>,
    pub train: usize,
    pub validation: usize,
    /// Test examples carved from `source` (ignored with `test_source`).
    pub test: usize,
    pub split_seed: u64,
    pub gcn: bool,
    pub zca: bool,
    pub zca_epsilon: Scalar,
    pub flip: Scalar,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: String::new(),
            test_source: None,
            train: 0,
            validation: 0,
            test: 0,
            split_seed: 0,
            gcn: false,
            zca: false,
            zca_epsilon: 1e-5,
            flip: 0.0,
        }
    }
}

impl DataConfig {
    /// Loads, splits and preprocesses. ZCA is fitted on the training split
    /// only.
    pub fn prepare(&self, base: &Path) -> Result<Splits> {
        let full = load_uri(&self.source, base)?;
        let (pool, carved_test) = if self.test_source.is_none() && self.test > 0 {
            let need = self.train + self.validation + self.test;
            if need > full.len() {
                return Err(FitError::Usage(format!(
                    "data: train + validation + test = {need} exceeds the {} examples of `{}`",
                    full.len(),
                    self.source
                )));
            }
            let (pool, test) = split(&full, self.train + self.validation, self.test, self.split_seed)?;
            (pool, Some(test))
        } else {
            (full, None)
        };
        if self.train + self.validation > pool.len() {
            return Err(FitError::Usage(format!(
                "data: train + validation = {} exceeds the {} available examples",
                self.train + self.validation,
                pool.len()
            )));
        }
        let (mut train, mut validation) = split(&pool, self.train, self.validation, self.split_seed)?;
        let mut test = match &self.test_source {
            Some(uri) => Some(load_uri(uri, base)?),
            None => carved_test,
        };
        if self.gcn {
            train = global_contrast_normalize(&train);
            validation = global_contrast_normalize(&validation);
            test = test.map(|t| global_contrast_normalize(&t));
        }
        if self.zca {
            let z = zca_fit(&train, self.zca_epsilon)?;
            train = zca_apply(&z, &train)?;
            validation = zca_apply(&z, &validation)?;
            test = test.map(|t| zca_apply(&z, &t)).transpose()?;
        }
        Ok(Splits {
            train: train.with_tag(SplitTag::Train),
            validation: validation.with_tag(SplitTag::Validation),
            test: test.map(|t| t.with_tag(SplitTag::Test)),
        })
    }
}
