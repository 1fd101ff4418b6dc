//! Raw response features ψ(x, y) seen by every reward model.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::Universe;
use crate::rng::SeedStream;
use crate::types::{is_numeric, longest_common_substring, Prompt, Response, BULLET};

/// Dimensions of the projected unigram histogram.
pub const HIST_DIMS: usize = 8;
pub const FEATURE_DIM: usize = 9 + HIST_DIMS;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "length",
    "log_length",
    "terminated",
    "bullet_count",
    "numeric_count",
    "numeric_fraction",
    "copy_fraction",
    "content_proxy",
    "hist_0",
    "hist_1",
    "hist_2",
    "hist_3",
    "hist_4",
    "hist_5",
    "hist_6",
    "hist_7",
    "fluency_proxy",
];

pub const IDX_LENGTH: usize = 0;
pub const IDX_COPY: usize = 6;
pub const IDX_CONTENT: usize = 7;
pub const IDX_FLUENCY: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RawFeatures(pub [f64; FEATURE_DIM]);

impl RawFeatures {
    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES.iter().position(|n| *n == name).map(|i| self.0[i])
    }
}

/// ψ(x, y). The content and fluency components carry observation noise drawn
/// from a stream keyed by the universe seed and the pair itself, so a given
/// pair has one fixed feature vector no matter who looks at it.
pub fn raw_features(u: &Universe, x: &Prompt, y: &Response) -> RawFeatures {
    let body = y.body();
    let len = body.len();
    let lf = len as f64;
    let mut f = [0.0; FEATURE_DIM];
    f[0] = lf;
    f[1] = (1.0 + lf).ln();
    f[2] = if y.is_terminated() { 1.0 } else { 0.0 };
    let bullets = body.iter().filter(|&&t| t == BULLET).count();
    let numeric = body.iter().filter(|&&t| is_numeric(t)).count();
    f[3] = bullets as f64;
    f[4] = numeric as f64;
    if len > 0 {
        f[5] = numeric as f64 / lf;
        f[6] = longest_common_substring(x.tokens(), body) as f64 / lf;
    }

    let noise = SeedStream::new(u.seed())
        .derive("feature-noise")
        .tokens(x.tokens())
        .tokens(y.tokens());
    let mut rng = noise.rng();
    let z1: f64 = StandardNormal.sample(&mut rng);
    let z2: f64 = StandardNormal.sample(&mut rng);
    let cfg = u.config();
    f[IDX_CONTENT] = u.content_match(x, y) + cfg.content_proxy_noise * z1;

    if len > 0 {
        let v = u.vocab_size();
        let proj = u.projection();
        for &t in body {
            for k in 0..HIST_DIMS {
                f[8 + k] += proj[k * v + t as usize];
            }
        }
        for k in 0..HIST_DIMS {
            f[8 + k] /= lf;
        }
    }
    f[IDX_FLUENCY] = u.fluency(x, y) + cfg.fluency_proxy_noise * z2;
    RawFeatures(f)
}

/// Per-dimension standardisation fitted on the reference policy's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    pub fn identity() -> Self {
        Self {
            mean: vec![0.0; FEATURE_DIM],
            std: vec![1.0; FEATURE_DIM],
        }
    }

    /// Dimensions with zero spread keep unit scale.
    pub fn fit(rows: &[[f64; FEATURE_DIM]]) -> Self {
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; FEATURE_DIM];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; FEATURE_DIM];
        for r in rows {
            for k in 0..FEATURE_DIM {
                std[k] += (r[k] - mean[k]).powi(2) / n;
            }
        }
        for s in &mut std {
            *s = if *s > 1e-12 { s.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }

    pub fn apply(&self, f: &RawFeatures) -> [f64; FEATURE_DIM] {
        let mut out = [0.0; FEATURE_DIM];
        for k in 0..FEATURE_DIM {
            out[k] = (f.0[k] - self.mean[k]) / self.std[k];
        }
        out
    }
}

/// Standardised features of many pairs.
pub fn standardized_features(u: &Universe, items: &[(&Prompt, &Response)]) -> Vec<[f64; FEATURE_DIM]> {
    items
        .iter()
        .map(|(x, y)| u.scaler().apply(&raw_features(u, x, y)))
        .collect()
}
