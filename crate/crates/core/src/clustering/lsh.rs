use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ClusterConfig, ClusterError, Clustering, UnionFind};
use crate::corpus::EmbeddingMatrix;

/// Random-hyperplane signatures split into `bands` bands of `bits_per_band` bits.
#[derive(Debug, Clone)]
pub struct LshHasher {
    dim: usize,
    bits_per_band: usize,
    bands: usize,
    planes: Vec<f32>,
}

impl LshHasher {
    pub fn new(dim: usize, bits_per_band: usize, bands: usize, seed: u64) -> Result<Self, ClusterError> {
        if bits_per_band == 0 || bands == 0 {
            return Err(ClusterError::LshShape {
                r: bits_per_band,
                b: bands,
            });
        }
        if bits_per_band > 64 {
            return Err(ClusterError::LshBandTooWide(bits_per_band));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let total = bits_per_band * bands;
        let mut planes = Vec::with_capacity(total * dim);
        for _ in 0..total {
            let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter_mut().for_each(|x| *x /= norm);
            }
            planes.extend(v.into_iter().map(|x| x as f32));
        }
        Ok(Self {
            dim,
            bits_per_band,
            bands,
            planes,
        })
    }

    /// One key per band. A zero projection counts as a positive bit.
    pub fn band_keys(&self, v: &[f32]) -> Vec<u64> {
        let mut keys = vec![0u64; self.bands];
        for (h, plane) in self.planes.chunks_exact(self.dim).enumerate() {
            let dot: f32 = plane.iter().zip(v).map(|(a, b)| a * b).sum();
            if dot >= 0.0 {
                keys[h / self.bits_per_band] |= 1 << (h % self.bits_per_band);
            }
        }
        keys
    }
}

/// Connected components of the relation "agree on every bit of some band".
pub fn lsh_buckets(
    matrix: &EmbeddingMatrix,
    indices: &[usize],
    bits_per_band: usize,
    bands: usize,
    seed: u64,
) -> Result<Clustering, ClusterError> {
    if let Some(&bad) = indices.iter().find(|&&i| i >= matrix.count()) {
        return Err(ClusterError::IndexOutOfRange(bad));
    }
    let hasher = LshHasher::new(matrix.dim(), bits_per_band, bands, seed)?;
    let mut uf = UnionFind::new(indices.len());
    let mut first_in_bucket: HashMap<(usize, u64), usize> = HashMap::new();
    for (local, &row) in indices.iter().enumerate() {
        for (band, key) in hasher.band_keys(matrix.row(row)).into_iter().enumerate() {
            match first_in_bucket.get(&(band, key)) {
                Some(&other) => {
                    uf.union(local, other);
                }
                None => {
                    first_in_bucket.insert((band, key), local);
                }
            }
        }
    }
    Ok(Clustering::new(
        uf.groups(indices),
        "lsh",
        ClusterConfig {
            lsh_bits_per_band: bits_per_band,
            lsh_bands: bands,
            lsh_seed: seed,
            ..ClusterConfig::default()
        },
    ))
}
