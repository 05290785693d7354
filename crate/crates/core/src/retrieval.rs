//! Training-free image retrieval with aggregated selective match kernels.
//!
//! Local features are whitened, quantized against a k-means codebook, and
//! the residuals falling into each cell are summed and binarized. Two images
//! are compared by a selective kernel over the cells they share.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Grid of `h x w` feature vectors of dimension `dim`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub h: usize,
    pub w: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(h: usize, w: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if h * w == 0 {
            return Err(Error::Invalid("feature map must hold at least one token".into()));
        }
        if dim < 2 {
            return Err(Error::Invalid("feature dimension must be at least 2".into()));
        }
        if data.len() != h * w * dim {
            return Err(Error::ShapeMismatch);
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("feature map contains non-finite values".into()));
        }
        Ok(FeatureMap { h, w, dim, data })
    }

    pub fn len(&self) -> usize {
        self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Feature of token `t` (row-major index).
    pub fn token(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// Feature at column `i`, row `j`.
    pub fn at(&self, i: usize, j: usize) -> &[f64] {
        self.token(j * self.w + i)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }
}

/// Affine whitening `x -> transform * (x - mean)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Whitening {
    pub mean: Vec<f64>,
    /// Row-major `dim x dim`.
    pub transform: Vec<f64>,
}

impl Whitening {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn identity(dim: usize) -> Self {
        let mut transform = vec![0.0; dim * dim];
        for k in 0..dim {
            transform[k * dim + k] = 1.0;
        }
        Whitening {
            mean: vec![0.0; dim],
            transform,
        }
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for r in 0..d {
            let row = &self.transform[r * d..(r + 1) * d];
            out[r] = row.iter().zip(x.iter().zip(&self.mean)).map(|(a, (v, m))| a * (v - m)).sum();
        }
    }
}

/// Fits a symmetric (ZCA) whitening on `samples`. Eigenvalues are floored at
/// `1e-6` times the largest before inversion.
pub fn fit_whitening(samples: &[&[f64]]) -> Result<Whitening> {
    let d = samples.first().map_or(0, |s| s.len());
    if samples.len() < d + 1 || d == 0 {
        return Err(Error::InsufficientSamples {
            needed: d + 1,
            got: samples.len(),
        });
    }
    if let Some(bad) = samples.iter().find(|s| s.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
    }
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        for k in 0..d {
            mean[k] += s[k];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for s in samples {
        let c = DVector::from_iterator(d, s.iter().zip(&mean).map(|(v, m)| v - m));
        cov += &c * c.transpose();
    }
    cov /= n;
    let eig = cov.symmetric_eigen();
    let lmax = eig.eigenvalues.max().max(1e-300);
    let inv_sqrt = DVector::from_iterator(d, eig.eigenvalues.iter().map(|&l| 1.0 / libm::sqrt(l.max(1e-6 * lmax))));
    let w = &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
    let mut transform = vec![0.0; d * d];
    for r in 0..d {
        for c in 0..d {
            transform[r * d + c] = w[(r, c)];
        }
    }
    Ok(Whitening { mean, transform })
}

/// `k` centroids of dimension `dim`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    pub dim: usize,
    pub centroids: Vec<f64>,
}

impl Codebook {
    pub fn new(dim: usize, centroids: Vec<f64>) -> Result<Self> {
        if dim == 0 || centroids.is_empty() || centroids.len() % dim != 0 {
            return Err(Error::ShapeMismatch);
        }
        Ok(Codebook { dim, centroids })
    }

    pub fn len(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn centroid(&self, k: usize) -> &[f64] {
        &self.centroids[k * self.dim..(k + 1) * self.dim]
    }

    /// Nearest centroid by L2 distance; ties go to the lowest id.
    pub fn assign(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for k in 0..self.len() {
            let d = sq_dist(x, self.centroid(k));
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's k-means with k-means++ seeding. Deterministic given the seed.
pub fn train_codebook(samples: &[&[f64]], k: usize, iters: usize, seed: u64) -> Result<Codebook> {
    if k == 0 || samples.len() < k {
        return Err(Error::InsufficientSamples {
            needed: k.max(1),
            got: samples.len(),
        });
    }
    let d = samples[0].len();
    if let Some(bad) = samples.iter().find(|s| s.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = samples.len();

    // k-means++
    let mut centroids: Vec<f64> = Vec::with_capacity(k * d);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(samples[first]);
    let mut dist: Vec<f64> = samples.iter().map(|s| sq_dist(s, samples[first])).collect();
    while centroids.len() < k * d {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut idx = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if w > 0.0 && r < w {
                    idx = i;
                    break;
                }
                r -= w;
            }
            if dist[idx] == 0.0 {
                idx = dist.iter().rposition(|&w| w > 0.0).unwrap_or(idx);
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.extend_from_slice(samples[pick]);
        for (i, s) in samples.iter().enumerate() {
            dist[i] = dist[i].min(sq_dist(s, samples[pick]));
        }
    }

    let mut cb = Codebook { dim: d, centroids };
    let mut assign = vec![0usize; n];
    for _ in 0..iters {
        let mut changed = false;
        for (i, s) in samples.iter().enumerate() {
            let a = cb.assign(s);
            if a != assign[i] {
                changed = true;
                assign[i] = a;
            }
        }
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (i, s) in samples.iter().enumerate() {
            counts[assign[i]] += 1;
            for c in 0..d {
                sums[assign[i] * d + c] += s[c];
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed from the sample farthest from its centroid
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(samples[a], cb.centroid(assign[a]))
                            .partial_cmp(&sq_dist(samples[b], cb.centroid(assign[b])))
                            .unwrap()
                            .then(b.cmp(&a))
                    })
                    .unwrap();
                sums[c * d..(c + 1) * d].copy_from_slice(samples[far]);
                counts[c] = 1;
                assign[far] = c;
                changed = true;
            }
            for v in &mut sums[c * d..(c + 1) * d] {
                *v /= counts[c] as f64;
            }
        }
        cb.centroids = sums;
        if !changed {
            break;
        }
    }
    Ok(cb)
}

/// Sparse binary descriptor: one sign vector per occupied codebook cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AsmkDescriptor {
    dim: usize,
    cells: Vec<u32>,
    /// `ceil(dim / 64)` words per cell; bit set means `+1`.
    bits: Vec<u64>,
}

impl AsmkDescriptor {
    fn words(dim: usize) -> usize {
        dim.div_ceil(64)
    }

    /// Builds a descriptor from `(cell, signs)` entries; signs must be `+-1`.
    pub fn from_entries(dim: usize, mut entries: Vec<(u32, Vec<i8>)>) -> Result<Self> {
        entries.sort_by_key(|e| e.0);
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Invalid("duplicate descriptor cell".into()));
        }
        let words = Self::words(dim);
        let mut cells = Vec::with_capacity(entries.len());
        let mut bits = vec![0u64; entries.len() * words];
        for (e, (cell, signs)) in entries.iter().enumerate() {
            if signs.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: signs.len() });
            }
            cells.push(*cell);
            for (k, &s) in signs.iter().enumerate() {
                match s {
                    1 => bits[e * words + k / 64] |= 1 << (k % 64),
                    -1 => {}
                    _ => return Err(Error::Invalid("residual signs must be +1 or -1".into())),
                }
            }
        }
        Ok(AsmkDescriptor { dim, cells, bits })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> &[u32] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Sign vector stored for the `e`-th entry.
    pub fn signs(&self, e: usize) -> Vec<i8> {
        let words = Self::words(self.dim);
        (0..self.dim)
            .map(|k| if self.bits[e * words + k / 64] >> (k % 64) & 1 == 1 { 1 } else { -1 })
            .collect()
    }

    fn entry_bits(&self, e: usize) -> &[u64] {
        let words = Self::words(self.dim);
        &self.bits[e * words..(e + 1) * words]
    }
}

/// Quantizes whitened tokens and binarizes the per-cell residual sums.
/// Zero residual components binarize to `+1`.
pub fn asmk_encode(fm: &FeatureMap, wh: &Whitening, cb: &Codebook) -> Result<AsmkDescriptor> {
    if fm.dim != wh.dim() {
        return Err(Error::DimensionMismatch { expected: wh.dim(), got: fm.dim });
    }
    if fm.dim != cb.dim {
        return Err(Error::DimensionMismatch { expected: cb.dim, got: fm.dim });
    }
    let d = fm.dim;
    let mut sums: alloc::collections::BTreeMap<u32, Vec<f64>> = alloc::collections::BTreeMap::new();
    let mut white = vec![0.0; d];
    for tok in fm.tokens() {
        wh.apply(tok, &mut white);
        let cell = cb.assign(&white);
        let c = cb.centroid(cell);
        let acc = sums.entry(cell as u32).or_insert_with(|| vec![0.0; d]);
        for k in 0..d {
            acc[k] += white[k] - c[k];
        }
    }
    // L2 normalization does not change signs, so binarize directly
    let entries = sums
        .into_iter()
        .map(|(cell, r)| (cell, r.iter().map(|&v| if v >= 0.0 { 1i8 } else { -1 }).collect()))
        .collect();
    AsmkDescriptor::from_entries(d, entries)
}

/// Selectivity parameters of the match kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelParams {
    pub alpha: f64,
    pub tau: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams { alpha: 3.0, tau: 0.0 }
    }
}

impl KernelParams {
    /// `sign(u) |u|^alpha` above the threshold, zero otherwise.
    pub fn select(&self, u: f64) -> f64 {
        if u > self.tau {
            libm::copysign(libm::pow(libm::fabs(u), self.alpha), u)
        } else {
            0.0
        }
    }
}

fn raw_score(a: &AsmkDescriptor, b: &AsmkDescriptor, p: &KernelParams) -> f64 {
    let (mut x, mut y) = (0, 0);
    let mut total = 0.0;
    let d = a.dim as f64;
    while x < a.cells.len() && y < b.cells.len() {
        match a.cells[x].cmp(&b.cells[y]) {
            core::cmp::Ordering::Less => x += 1,
            core::cmp::Ordering::Greater => y += 1,
            core::cmp::Ordering::Equal => {
                let ham: u32 = a.entry_bits(x).iter().zip(b.entry_bits(y)).map(|(p, q)| (p ^ q).count_ones()).sum();
                let u = (d - 2.0 * ham as f64) / d;
                total += p.select(u);
                x += 1;
                y += 1;
            }
        }
    }
    total
}

/// Normalized kernel similarity in `[0, 1]`.
pub fn asmk_similarity(a: &AsmkDescriptor, b: &AsmkDescriptor, params: &KernelParams) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch { expected: a.dim, got: b.dim });
    }
    let norm = raw_score(a, a, params) * raw_score(b, b, params);
    if norm <= 0.0 {
        return Ok(0.0);
    }
    Ok((raw_score(a, b, params) / libm::sqrt(norm)).clamp(0.0, 1.0))
}

/// Symmetric `n x n` similarity scores in `[0, 1]` with unit diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::ShapeMismatch);
        }
        for i in 0..n {
            if values[i * n + i] != 1.0 {
                return Err(Error::Invalid("similarity diagonal must be 1".into()));
            }
            for j in 0..n {
                let v = values[i * n + j];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Invalid("similarity outside [0, 1]".into()));
                }
                if (v - values[j * n + i]).abs() > 1e-12 {
                    return Err(Error::Invalid("similarity matrix is not symmetric".into()));
                }
            }
        }
        Ok(SimilarityMatrix { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Applies `perm` so that new image `k` is old image `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n;
        let mut v = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                v[a * n + b] = self.get(perm[a], perm[b]);
            }
        }
        SimilarityMatrix { n, values: v }
    }
}

pub fn similarity_matrix(descriptors: &[AsmkDescriptor], params: &KernelParams) -> Result<SimilarityMatrix> {
    let n = descriptors.len();
    if n == 0 {
        return Err(Error::BadCount { got: 0, min: 1, max: usize::MAX });
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
        for j in i + 1..n {
            let s = asmk_similarity(&descriptors[i], &descriptors[j], params)?;
            v[i * n + j] = s;
            v[j * n + i] = s;
        }
    }
    SimilarityMatrix::new(n, v)
}

/// Baseline scorer: cosine of whitened mean-pooled features, mapped to `[0, 1]`.
pub fn pooled_similarity_matrix(maps: &[FeatureMap], wh: &Whitening) -> Result<SimilarityMatrix> {
    let n = maps.len();
    let mut pooled = Vec::with_capacity(n);
    for fm in maps {
        if fm.dim != wh.dim() {
            return Err(Error::DimensionMismatch { expected: wh.dim(), got: fm.dim });
        }
        let mut mean = vec![0.0; fm.dim];
        for tok in fm.tokens() {
            for k in 0..fm.dim {
                mean[k] += tok[k] / fm.len() as f64;
            }
        }
        let mut out = vec![0.0; fm.dim];
        wh.apply(&mean, &mut out);
        let norm = libm::sqrt(out.iter().map(|v| v * v).sum::<f64>());
        pooled.push(out.into_iter().map(|v| if norm > 0.0 { v / norm } else { 0.0 }).collect::<Vec<f64>>());
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
        for j in i + 1..n {
            let c: f64 = pooled[i].iter().zip(&pooled[j]).map(|(a, b)| a * b).sum();
            let s = ((1.0 + c) / 2.0).clamp(0.0, 1.0);
            v[i * n + j] = s;
            v[j * n + i] = s;
        }
    }
    SimilarityMatrix::new(n, v)
}

/// Settings for fitting retrieval on an image collection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetrievalConfig {
    pub codebook_size: usize,
    pub max_samples: usize,
    pub kmeans_iters: usize,
    pub kernel: KernelParams,
    pub seed: u64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            codebook_size: 1024,
            max_samples: 1 << 18,
            kmeans_iters: 20,
            kernel: KernelParams::default(),
            seed: 0,
        }
    }
}

/// Retrieval model fitted on a feature collection.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalModel {
    pub whitening: Whitening,
    pub codebook: Codebook,
}

impl RetrievalModel {
    /// Fits whitening and codebook on (a deterministic subsample of) the
    /// tokens of `maps`. The codebook is capped at one cell per eight tokens.
    pub fn fit(maps: &[FeatureMap], cfg: &RetrievalConfig) -> Result<Self> {
        let mut pool: Vec<&[f64]> = maps.iter().flat_map(|m| m.tokens()).collect();
        if pool.len() > cfg.max_samples {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
            // partial Fisher-Yates keeps the first max_samples
            for i in 0..cfg.max_samples {
                let j = rng.random_range(i..pool.len());
                pool.swap(i, j);
            }
            pool.truncate(cfg.max_samples);
        }
        let whitening = fit_whitening(&pool)?;
        let d = whitening.dim();
        let white: Vec<Vec<f64>> = pool
            .iter()
            .map(|t| {
                let mut o = vec![0.0; d];
                whitening.apply(t, &mut o);
                o
            })
            .collect();
        let refs: Vec<&[f64]> = white.iter().map(|v| v.as_slice()).collect();
        let k = cfg.codebook_size.min((refs.len() / 8).max(1));
        let codebook = train_codebook(&refs, k, cfg.kmeans_iters, cfg.seed)?;
        Ok(RetrievalModel { whitening, codebook })
    }

    pub fn encode(&self, fm: &FeatureMap) -> Result<AsmkDescriptor> {
        asmk_encode(fm, &self.whitening, &self.codebook)
    }
}

/// Fits a model on `maps` and returns their pairwise similarity matrix.
pub fn retrieve(maps: &[FeatureMap], cfg: &RetrievalConfig) -> Result<SimilarityMatrix> {
    if maps.len() == 1 {
        return SimilarityMatrix::new(1, vec![1.0]);
    }
    let model = RetrievalModel::fit(maps, cfg)?;
    let descs = maps.iter().map(|m| model.encode(m)).collect::<Result<Vec<_>>>()?;
    similarity_matrix(&descs, &cfg.kernel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(|x| x.as_slice()).collect()
    }

    #[test]
    fn whitening_of_white_data_is_identity() {
        let d = 4;
        let mut samples = vec![];
        for k in 0..d {
            for s in [-1.0, 1.0] {
                let mut v = vec![0.0; d];
                v[k] = s * libm::sqrt(d as f64);
                samples.push(v);
            }
        }
        let w = fit_whitening(&refs(&samples)).unwrap();
        for r in 0..d {
            assert!(w.mean[r].abs() < 1e-6);
            for c in 0..d {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((w.transform[r * d + c] - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn whitening_normalizes_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let samples: Vec<Vec<f64>> = (0..500).map(|_| vec![2.0 * normal.sample(&mut rng) + 3.0, normal.sample(&mut rng) - 1.0]).collect();
        let w = fit_whitening(&refs(&samples)).unwrap();
        let out: Vec<Vec<f64>> = samples
            .iter()
            .map(|s| {
                let mut o = vec![0.0; 2];
                w.apply(s, &mut o);
                o
            })
            .collect();
        let n = out.len() as f64;
        let mean: Vec<f64> = (0..2).map(|k| out.iter().map(|o| o[k]).sum::<f64>() / n).collect();
        for a in 0..2 {
            assert!(mean[a].abs() < 1e-9);
            for b in 0..2 {
                let c: f64 = out.iter().map(|o| (o[a] - mean[a]) * (o[b] - mean[b])).sum::<f64>() / n;
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((c - want).abs() < 1e-6, "cov[{a}][{b}] = {c}");
            }
        }
    }

    #[test]
    fn whitening_needs_enough_samples() {
        let samples = vec![vec![1.0, 2.0], vec![3.0, 1.0]];
        assert!(matches!(fit_whitening(&refs(&samples)), Err(Error::InsufficientSamples { .. })));
    }

    #[test]
    fn codebook_with_k_equal_n_is_permutation() {
        let samples: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64, (i * i) as f64 * 0.3]).collect();
        let cb = train_codebook(&refs(&samples), 7, 10, 3).unwrap();
        let mut found: Vec<usize> = (0..7)
            .map(|k| samples.iter().position(|s| s.as_slice() == cb.centroid(k)).expect("centroid is a sample"))
            .collect();
        found.sort();
        assert_eq!(found, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn codebook_finds_two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let normal = Normal::new(0.0, 0.3).unwrap();
        let mut samples = vec![];
        for c in [[-5.0, 2.0], [4.0, -3.0]] {
            for _ in 0..200 {
                samples.push(vec![c[0] + normal.sample(&mut rng), c[1] + normal.sample(&mut rng)]);
            }
        }
        let blob_mean = |lo: usize| -> [f64; 2] {
            let s = &samples[lo..lo + 200];
            [s.iter().map(|v| v[0]).sum::<f64>() / 200.0, s.iter().map(|v| v[1]).sum::<f64>() / 200.0]
        };
        let means = [blob_mean(0), blob_mean(200)];
        let cb = train_codebook(&refs(&samples), 2, 50, 1).unwrap();
        for m in means {
            let best = (0..2).map(|k| libm::sqrt(sq_dist(cb.centroid(k), &m))).fold(f64::MAX, f64::min);
            assert!(best < 0.1);
        }
        let again = train_codebook(&refs(&samples), 2, 50, 1).unwrap();
        assert_eq!(cb, again);
        assert!(train_codebook(&refs(&samples[..1]), 2, 5, 0).is_err());
    }

    #[test]
    fn degenerate_residual_gives_all_plus() {
        let cb = Codebook::new(3, vec![0.0, 0.0, 0.0, 5.0, 5.0, 5.0]).unwrap();
        let fm = FeatureMap::new(2, 2, 3, vec![0.0; 12]).unwrap();
        let desc = asmk_encode(&fm, &Whitening::identity(3), &cb).unwrap();
        assert_eq!(desc.cells(), &[0]);
        assert_eq!(desc.signs(0), vec![1, 1, 1]);
    }

    #[test]
    fn per_cell_signs_follow_offsets() {
        let cb = Codebook::new(2, vec![0.0, 0.0, 10.0, 10.0]).unwrap();
        let fm = FeatureMap::new(1, 2, 2, vec![0.5, -0.25, 9.0, 10.5]).unwrap();
        let desc = asmk_encode(&fm, &Whitening::identity(2), &cb).unwrap();
        assert_eq!(desc.cells(), &[0, 1]);
        assert_eq!(desc.signs(0), vec![1, -1]);
        assert_eq!(desc.signs(1), vec![-1, 1]);
    }

    #[test]
    fn similarity_hand_case() {
        // d = 4; shared cell 7 has u = (4 - 2*1)/4 = 0.5
        let a = AsmkDescriptor::from_entries(4, vec![(3, vec![1, 1, 1, 1]), (7, vec![1, 1, -1, 1])]).unwrap();
        let b = AsmkDescriptor::from_entries(4, vec![(7, vec![1, 1, 1, 1]), (9, vec![-1, -1, 1, 1])]).unwrap();
        let p = KernelParams::default();
        let want = 0.5f64.powi(3) / libm::sqrt(2.0 * 2.0);
        assert!((asmk_similarity(&a, &b, &p).unwrap() - want).abs() < 1e-15);
        assert_eq!(asmk_similarity(&a, &a, &p).unwrap(), 1.0);
        let c = AsmkDescriptor::from_entries(4, vec![(1, vec![1, 1, 1, 1])]).unwrap();
        assert_eq!(asmk_similarity(&a, &c, &p).unwrap(), 0.0);
    }

    #[test]
    fn matrix_matches_pairwise_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let descs: Vec<AsmkDescriptor> = (0..4)
            .map(|_| {
                let mut entries = vec![];
                for c in 0..6u32 {
                    if rng.random_bool(0.6) {
                        entries.push((c, (0..8).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect()));
                    }
                }
                let entries = if entries.is_empty() { vec![(0, vec![1; 8])] } else { entries };
                AsmkDescriptor::from_entries(8, entries).unwrap()
            })
            .collect();
        let p = KernelParams::default();
        let s = similarity_matrix(&descs, &p).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { asmk_similarity(&descs[i], &descs[j], &p).unwrap() };
                assert_eq!(s.get(i, j), want);
            }
        }
        let single = similarity_matrix(&descs[..1], &p).unwrap();
        assert_eq!(single.values(), &[1.0]);
        let copies = similarity_matrix(&[descs[0].clone(), descs[0].clone(), descs[0].clone()], &p).unwrap();
        assert!(copies.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn empty_feature_map_rejected() {
        assert!(FeatureMap::new(0, 3, 4, vec![]).is_err());
    }

    #[test]
    fn pooled_baseline_is_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let maps: Vec<FeatureMap> = (0..3)
            .map(|_| FeatureMap::new(2, 2, 3, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
            .collect();
        let s = pooled_similarity_matrix(&maps, &Whitening::identity(3)).unwrap();
        assert_eq!(s.get(1, 1), 1.0);
        assert_eq!(s.get(0, 2), s.get(2, 0));
    }
}
