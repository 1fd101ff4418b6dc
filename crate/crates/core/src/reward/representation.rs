//! Frozen random feature maps: the pretraining analog. Two reward models
//! with the same pretrain seed see the world through the same map.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedStream;

use super::features::FEATURE_DIM;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RepDims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl Default for RepDims {
    fn default() -> Self {
        Self {
            input: FEATURE_DIM,
            hidden: 64,
            output: 32,
        }
    }
}

/// `φ(ψ) = tanh(W2 · tanh(W1 ψ + b1))`, with `W1 ~ N(0, 2/in)`,
/// `W2 ~ N(0, 2/hidden)` and `b1 ~ N(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Representation {
    pretrain_seed: u64,
    dims: RepDims,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    // Column-major copies for the embedding loop.
    w1t: Vec<f64>,
    w2t: Vec<f64>,
}

fn transpose(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; m.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = m[r * cols + c];
        }
    }
    t
}

impl Representation {
    pub fn new(pretrain_seed: u64, dims: RepDims) -> Result<Self> {
        if dims.input == 0 || dims.hidden == 0 || dims.output == 0 {
            return Err(Error::config("representation dimensions must be positive"));
        }
        let root = SeedStream::new(pretrain_seed).derive("representation");
        let mut rng = root.derive("w1").rng();
        let s1 = (2.0 / dims.input as f64).sqrt();
        let w1: Vec<f64> = (0..dims.hidden * dims.input)
            .map(|_| { let z: f64 = StandardNormal.sample(&mut rng); s1 * z })
            .collect();
        let mut rng = root.derive("b1").rng();
        let b1 = (0..dims.hidden).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut rng = root.derive("w2").rng();
        let s2 = (2.0 / dims.hidden as f64).sqrt();
        let w2: Vec<f64> = (0..dims.output * dims.hidden)
            .map(|_| { let z: f64 = StandardNormal.sample(&mut rng); s2 * z })
            .collect();
        Ok(Self {
            pretrain_seed,
            dims,
            w1t: transpose(&w1, dims.hidden, dims.input),
            w2t: transpose(&w2, dims.output, dims.hidden),
            w1,
            b1,
            w2,
        })
    }

    pub fn pretrain_seed(&self) -> u64 {
        self.pretrain_seed
    }

    pub fn dims(&self) -> RepDims {
        self.dims
    }

    pub fn embed(&self, psi: &[f64]) -> Result<Vec<f64>> {
        if psi.len() != self.dims.input {
            return Err(Error::DimensionMismatch {
                expected: self.dims.input,
                actual: psi.len(),
            });
        }
        let mut out = vec![0.0; self.dims.output];
        self.embed_into(psi, &mut out);
        Ok(out)
    }

    /// Unchecked variant for hot loops; `psi` and `out` must have the
    /// input and output dimensions.
    pub fn embed_into(&self, psi: &[f64], out: &mut [f64]) {
        let d = self.dims;
        let mut stack = [0.0; 128];
        let mut heap = Vec::new();
        let h: &mut [f64] = if d.hidden <= stack.len() {
            &mut stack[..d.hidden]
        } else {
            heap.resize(d.hidden, 0.0);
            &mut heap
        };
        h.copy_from_slice(&self.b1);
        for (i, p) in psi.iter().enumerate() {
            for (hj, w) in h.iter_mut().zip(&self.w1t[i * d.hidden..(i + 1) * d.hidden]) {
                *hj += w * p;
            }
        }
        h.iter_mut().for_each(|v| *v = v.tanh());
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, hv) in h.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(&self.w2t[j * d.output..(j + 1) * d.output]) {
                *o += w * hv;
            }
        }
        out.iter_mut().for_each(|o| *o = o.tanh());
    }

    pub fn embed_all(&self, rows: &[[f64; FEATURE_DIM]]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.embed(r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn determined_by_seed_and_dims() {
        let a = Representation::new(4, RepDims::default()).unwrap();
        let b = Representation::new(4, RepDims::default()).unwrap();
        assert_eq!(a, b);
        let c = Representation::new(5, RepDims::default()).unwrap();
        assert_ne!(a.w1, c.w1);
    }

    #[test]
    fn embedding_is_bounded_and_checked() {
        let r = Representation::new(1, RepDims::default()).unwrap();
        let out = r.embed(&[3.0; FEATURE_DIM]).unwrap();
        assert_eq!(out.len(), 32);
        assert!(out.iter().all(|v| v.abs() < 1.0));
        assert!(matches!(r.embed(&[0.0; 3]), Err(Error::DimensionMismatch { .. })));
    }
}
