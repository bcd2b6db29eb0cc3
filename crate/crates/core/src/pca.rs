//! Mean-centered PCA: an exact solver and a randomized range-finder
//! approximation, plus the joint source+target fit used when ensembling
//! decoder layers.
//!
//! Both solvers share one sign convention: within each basis row the entry of
//! largest magnitude (first one on ties) is positive. This removes the SVD sign
//! ambiguity so repeated fits of the same data agree exactly.

use faer::{Mat, Side};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::featmap::FeatureMap;

pub const DEFAULT_OVERSAMPLE: usize = 10;
pub const DEFAULT_POWER_ITERS: usize = 2;

/// Row-major `rows x cols` view over `f32` tokens.
#[derive(Debug, Clone, Copy)]
pub struct Tokens<'a> {
    data: &'a [f32],
    rows: usize,
    cols: usize,
}

impl<'a> Tokens<'a> {
    pub fn new(data: &'a [f32], rows: usize, cols: usize) -> Result<Self> {
        if cols == 0 || data.len() != rows * cols {
            return Err(Error::shape(format!(
                "token buffer of length {} is not {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { data, rows, cols })
    }

    pub fn from_map(map: &'a FeatureMap) -> Self {
        Self {
            data: map.data(),
            rows: map.num_tokens(),
            cols: map.channels(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &'a [f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcaMethod {
    Exact,
    Randomized {
        oversample: usize,
        power_iters: usize,
        seed: u64,
    },
}

impl PcaMethod {
    /// Randomized solver with the default oversampling and power iterations.
    pub fn randomized(seed: u64) -> Self {
        PcaMethod::Randomized {
            oversample: DEFAULT_OVERSAMPLE,
            power_iters: DEFAULT_POWER_ITERS,
            seed,
        }
    }

    /// Same method with its seed offset by `offset`; exact fits are unchanged.
    pub fn reseeded(self, offset: u64) -> Self {
        match self {
            PcaMethod::Exact => PcaMethod::Exact,
            PcaMethod::Randomized {
                oversample,
                power_iters,
                seed,
            } => PcaMethod::Randomized {
                oversample,
                power_iters,
                seed: seed.wrapping_add(offset),
            },
        }
    }
}

/// A fitted projection: `token -> basis * (token - mean)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: Vec<f64>,
    /// `k x channels`, row-major, orthonormal rows.
    basis: Vec<f64>,
    k: usize,
    explained: Vec<f64>,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn basis_row(&self, i: usize) -> &[f64] {
        let c = self.channels();
        &self.basis[i * c..(i + 1) * c]
    }

    /// The leading `k` components. For an exact fit this equals fitting with
    /// `k` directly.
    pub fn truncated(&self, k: usize) -> Result<PcaModel> {
        if k == 0 || k > self.k {
            return Err(Error::invalid(format!("cannot truncate {} components to {k}", self.k)));
        }
        Ok(PcaModel {
            mean: self.mean.clone(),
            basis: self.basis[..k * self.channels()].to_vec(),
            k,
            explained: self.explained[..k].to_vec(),
        })
    }

    /// Singular values of the centered data along each component.
    pub fn explained(&self) -> &[f64] {
        &self.explained
    }

    pub fn project_token(&self, token: &[f32]) -> Vec<f64> {
        let centered: Vec<f64> = token
            .iter()
            .zip(&self.mean)
            .map(|(&t, &m)| t as f64 - m)
            .collect();
        (0..self.k)
            .map(|i| dot(self.basis_row(i), &centered))
            .collect()
    }

    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (i, &a) in coords.iter().enumerate() {
            for (o, &b) in out.iter_mut().zip(self.basis_row(i)) {
                *o += a * b;
            }
        }
        out
    }

    /// Frobenius deviation of `basis * basis^T` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.k {
            for j in 0..self.k {
                let g = dot(self.basis_row(i), self.basis_row(j));
                let target = if i == j { 1.0 } else { 0.0 };
                acc += (g - target) * (g - target);
            }
        }
        acc.sqrt()
    }

    /// Sum over tokens of the squared norm of their projection.
    pub fn captured_variance(&self, tokens: Tokens<'_>) -> f64 {
        (0..tokens.rows())
            .map(|r| self.project_token(tokens.row(r)).iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// Sum over tokens of the squared project-then-reconstruct error.
    pub fn reconstruction_error(&self, tokens: Tokens<'_>) -> f64 {
        (0..tokens.rows())
            .map(|r| {
                let t = tokens.row(r);
                let rec = self.reconstruct(&self.project_token(t));
                t.iter()
                    .zip(&rec)
                    .map(|(&a, &b)| (a as f64 - b).powi(2))
                    .sum::<f64>()
            })
            .sum()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_k(k: usize, rows: usize, cols: usize) -> Result<()> {
    if rows < 2 {
        return Err(Error::invalid(format!("PCA needs at least 2 tokens, got {rows}")));
    }
    if k == 0 || k > rows.min(cols) {
        return Err(Error::invalid(format!(
            "k = {k} outside [1, {}] for {rows}x{cols} tokens",
            rows.min(cols)
        )));
    }
    Ok(())
}

/// Column means and the centered `f64` matrix of the stacked blocks.
fn centered_matrix(blocks: &[Tokens<'_>]) -> (Vec<f64>, Mat<f64>) {
    let cols = blocks[0].cols();
    let rows: usize = blocks.iter().map(|b| b.rows()).sum();
    let mut mean = vec![0.0f64; cols];
    for b in blocks {
        for r in 0..b.rows() {
            for (m, &v) in mean.iter_mut().zip(b.row(r)) {
                *m += v as f64;
            }
        }
    }
    for m in &mut mean {
        *m /= rows as f64;
    }
    let mut x = Mat::<f64>::zeros(rows, cols);
    let mut r0 = 0;
    for b in blocks {
        for r in 0..b.rows() {
            for (j, &v) in b.row(r).iter().enumerate() {
                x[(r0 + r, j)] = v as f64 - mean[j];
            }
        }
        r0 += b.rows();
    }
    (mean, x)
}

/// Flips each row so its largest-magnitude entry is positive.
fn fix_signs(basis: &mut [f64], cols: usize) {
    for row in basis.chunks_exact_mut(cols) {
        let mut best = 0;
        for (j, v) in row.iter().enumerate() {
            if v.abs() > row[best].abs() {
                best = j;
            }
        }
        if row[best] < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
    }
}

fn finish(mean: Vec<f64>, mut basis: Vec<f64>, explained: Vec<f64>, k: usize) -> Result<PcaModel> {
    let cols = mean.len();
    if basis.iter().chain(&explained).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite value in PCA basis".into()));
    }
    fix_signs(&mut basis, cols);
    Ok(PcaModel {
        mean,
        basis,
        k,
        explained,
    })
}

fn fit_exact_blocks(blocks: &[Tokens<'_>], k: usize) -> Result<PcaModel> {
    let (mean, x) = centered_matrix(blocks);
    let cols = x.ncols();
    let gram = x.transpose() * &x;
    let eig = gram
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let values = eig.S().column_vector();
    let vectors = eig.U();
    // eigenvalues come back ascending
    let mut basis = Vec::with_capacity(k * cols);
    let mut explained = Vec::with_capacity(k);
    for i in 0..k {
        let col = cols - 1 - i;
        explained.push(values[col].max(0.0).sqrt());
        basis.extend((0..cols).map(|r| vectors[(r, col)]));
    }
    finish(mean, basis, explained, k)
}

fn orthonormal_columns(m: &Mat<f64>) -> Mat<f64> {
    m.qr().compute_thin_Q()
}

fn fit_randomized_blocks(
    blocks: &[Tokens<'_>],
    k: usize,
    oversample: usize,
    power_iters: usize,
    seed: u64,
) -> Result<PcaModel> {
    let (mean, x) = centered_matrix(blocks);
    let (rows, cols) = (x.nrows(), x.ncols());
    let sketch = (k + oversample).min(rows.min(cols));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut omega = Mat::<f64>::zeros(cols, sketch);
    for j in 0..sketch {
        for i in 0..cols {
            omega[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }

    let mut q = orthonormal_columns(&(&x * &omega));
    for _ in 0..power_iters {
        let z = orthonormal_columns(&(x.transpose() * &q));
        q = orthonormal_columns(&(&x * &z));
    }
    let small = q.transpose() * &x;
    let svd = small
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD failed: {e:?}")))?;
    let singular = svd.S().column_vector();
    let v = svd.V();
    let mut basis = Vec::with_capacity(k * cols);
    let mut explained = Vec::with_capacity(k);
    for i in 0..k {
        explained.push(singular[i].max(0.0));
        basis.extend((0..cols).map(|r| v[(r, i)]));
    }
    finish(mean, basis, explained, k)
}

fn fit_blocks(blocks: &[Tokens<'_>], k: usize, method: PcaMethod) -> Result<PcaModel> {
    let cols = blocks[0].cols();
    if blocks.iter().any(|b| b.cols() != cols) {
        return Err(Error::shape("token blocks have different channel counts"));
    }
    let rows = blocks.iter().map(|b| b.rows()).sum();
    check_k(k, rows, cols)?;
    match method {
        PcaMethod::Exact => fit_exact_blocks(blocks, k),
        PcaMethod::Randomized {
            oversample,
            power_iters,
            seed,
        } => fit_randomized_blocks(blocks, k, oversample, power_iters, seed),
    }
}

/// Exact rank-`k` PCA of mean-centered tokens.
///
/// When every token is identical the explained values are all zero and the
/// basis is an arbitrary (but deterministic) orthonormal set.
pub fn fit_pca_exact(tokens: Tokens<'_>, k: usize) -> Result<PcaModel> {
    fit_blocks(&[tokens], k, PcaMethod::Exact)
}

/// Randomized range finder followed by a small exact SVD. Deterministic for a
/// fixed `seed`.
pub fn fit_pca_randomized(
    tokens: Tokens<'_>,
    k: usize,
    oversample: usize,
    power_iters: usize,
    seed: u64,
) -> Result<PcaModel> {
    fit_blocks(
        &[tokens],
        k,
        PcaMethod::Randomized {
            oversample,
            power_iters,
            seed,
        },
    )
}

pub fn fit_pca(tokens: Tokens<'_>, k: usize, method: PcaMethod) -> Result<PcaModel> {
    fit_blocks(&[tokens], k, method)
}

/// Projects every token of `map`; channels become `model.k()`.
pub fn project(model: &PcaModel, map: &FeatureMap) -> Result<FeatureMap> {
    if map.channels() != model.channels() {
        return Err(Error::shape(format!(
            "map has {} channels, model expects {}",
            map.channels(),
            model.channels()
        )));
    }
    let data: Vec<f32> = map
        .tokens()
        .flat_map(|t| model.project_token(t).into_iter().map(|v| v as f32))
        .collect();
    FeatureMap::new(map.height(), map.width(), model.k(), data, map.meta().clone())
}

/// Fits one PCA on the source tokens stacked above the target tokens and
/// projects both maps with it.
pub fn fit_pair_pca(
    src: &FeatureMap,
    tgt: &FeatureMap,
    k: usize,
    method: PcaMethod,
) -> Result<(FeatureMap, FeatureMap, PcaModel)> {
    if src.channels() != tgt.channels() {
        return Err(Error::shape(format!(
            "source has {} channels, target has {}",
            src.channels(),
            tgt.channels()
        )));
    }
    let model = fit_blocks(&[Tokens::from_map(src), Tokens::from_map(tgt)], k, method)?;
    Ok((project(&model, src)?, project(&model, tgt)?, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featmap::MapMeta;
    use proptest::prelude::*;

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..rows * cols)
            .map(|_| StandardNormal.sample(&mut rng))
            .map(|v: f64| v as f32)
            .collect()
    }

    #[test]
    fn truncation_equals_direct_exact_fit() {
        let data = gaussian(60, 12, 21);
        let t = Tokens::new(&data, 60, 12).unwrap();
        let full = fit_pca_exact(t, 12).unwrap();
        for k in [1, 5, 12] {
            assert_eq!(full.truncated(k).unwrap(), fit_pca_exact(t, k).unwrap());
        }
        assert!(full.truncated(0).is_err());
        assert!(full.truncated(13).is_err());
    }

    #[test]
    fn rank_one_line_reconstructs() {
        // tokens = mean + s * dir
        let dir = [0.6f32, 0.0, 0.8];
        let shift = [1.0f32, -2.0, 0.5];
        let ts = [-2.0f32, -1.0, 0.5, 1.5, 3.0];
        let data: Vec<f32> = ts
            .iter()
            .flat_map(|&s| (0..3).map(move |j| shift[j] + s * dir[j]))
            .collect();
        let tokens = Tokens::new(&data, 5, 3).unwrap();
        for method in [PcaMethod::Exact, PcaMethod::randomized(3)] {
            let model = fit_pca(tokens, 1, method).unwrap();
            assert!(model.reconstruction_error(tokens) < 1e-6);
            // projection is the signed offset along the line from the mean
            let mean_s = ts.iter().sum::<f32>() as f64 / 5.0;
            for (r, &s) in ts.iter().enumerate() {
                let p = model.project_token(tokens.row(r))[0];
                assert!((p - (s as f64 - mean_s)).abs() < 1e-5, "{p} vs {s}");
            }
        }
    }

    #[test]
    fn isotropic_cross_has_equal_explained() {
        let data = [1.0f32, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0];
        let tokens = Tokens::new(&data, 4, 2).unwrap();
        let model = fit_pca_exact(tokens, 2).unwrap();
        // covariance diag(2, 2) on the un-normalized scatter, singular values sqrt(2)
        let e = model.explained();
        assert!((e[0] - 2f64.sqrt()).abs() < 1e-12 && (e[1] - 2f64.sqrt()).abs() < 1e-12);
        assert!(model.orthonormality_error() < 1e-12);
    }

    #[test]
    fn full_rank_identity() {
        let data = gaussian(30, 6, 1);
        let tokens = Tokens::new(&data, 30, 6).unwrap();
        let model = fit_pca_exact(tokens, 6).unwrap();
        assert!(model.reconstruction_error(tokens) < 1e-5);
    }

    #[test]
    fn k_out_of_range() {
        let data = gaussian(4, 3, 2);
        let tokens = Tokens::new(&data, 4, 3).unwrap();
        assert!(matches!(fit_pca_exact(tokens, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(fit_pca_exact(tokens, 4), Err(Error::InvalidArgument(_))));
        let one = Tokens::new(&data[..3], 1, 3).unwrap();
        assert!(fit_pca_exact(one, 1).is_err());
    }

    #[test]
    fn identical_tokens_are_degenerate_but_orthonormal() {
        let data: Vec<f32> = (0..10).flat_map(|_| [0.3f32, -1.0, 2.0, 4.0]).collect();
        let tokens = Tokens::new(&data, 10, 4).unwrap();
        for method in [PcaMethod::Exact, PcaMethod::randomized(9)] {
            let a = fit_pca(tokens, 3, method).unwrap();
            let b = fit_pca(tokens, 3, method).unwrap();
            assert_eq!(a, b);
            assert!(a.explained().iter().all(|&e| e.abs() < 1e-9));
            assert!(a.orthonormality_error() < 1e-5, "{method:?}");
        }
    }

    #[test]
    fn randomized_close_to_exact_on_gaussian() {
        let data = gaussian(200, 64, 11);
        let tokens = Tokens::new(&data, 200, 64).unwrap();
        let exact = fit_pca_exact(tokens, 16).unwrap();
        let approx = fit_pca_randomized(tokens, 16, 8, 2, 5).unwrap();
        let (e, a) = (
            exact.reconstruction_error(tokens),
            approx.reconstruction_error(tokens),
        );
        assert!(a >= e * (1.0 - 1e-9));
        assert!((a - e) / e <= 0.05, "randomized {a} vs exact {e}");
    }

    #[test]
    fn randomized_exact_on_rank_k() {
        // rank-4 data in 12 dims
        let left = gaussian(80, 4, 21);
        let right = gaussian(4, 12, 22);
        let data: Vec<f32> = (0..80)
            .flat_map(|i| {
                let (left, right) = (&left, &right);
                (0..12).map(move |j| (0..4).map(|r| left[i * 4 + r] * right[r * 12 + j]).sum())
            })
            .collect();
        let tokens = Tokens::new(&data, 80, 12).unwrap();
        let exact = fit_pca_exact(tokens, 4).unwrap();
        let approx = fit_pca_randomized(tokens, 4, 0, 0, 1).unwrap();
        let (ve, va) = (exact.captured_variance(tokens), approx.captured_variance(tokens));
        assert!((ve - va).abs() / ve < 1e-6, "{ve} vs {va}");
    }

    #[test]
    fn same_seed_same_model() {
        let data = gaussian(50, 20, 4);
        let tokens = Tokens::new(&data, 50, 20).unwrap();
        let a = fit_pca_randomized(tokens, 5, 10, 2, 77).unwrap();
        let b = fit_pca_randomized(tokens, 5, 10, 2, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sign_convention() {
        let data = gaussian(40, 7, 8);
        let tokens = Tokens::new(&data, 40, 7).unwrap();
        let model = fit_pca_exact(tokens, 4).unwrap();
        for i in 0..4 {
            let row = model.basis_row(i);
            let max = row.iter().cloned().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(max > 0.0);
        }
    }

    fn fmap(h: usize, w: usize, c: usize, data: Vec<f32>) -> FeatureMap {
        FeatureMap::new(h, w, c, data, MapMeta::new(16, 16)).unwrap()
    }

    #[test]
    fn project_mean_is_zero_and_isometric_at_full_rank() {
        let data = gaussian(12, 5, 3);
        let map = fmap(3, 4, 5, data.clone());
        let model = fit_pca_exact(Tokens::from_map(&map), 5).unwrap();
        let mean: Vec<f32> = model.mean().iter().map(|&m| m as f32).collect();
        assert!(model.project_token(&mean).iter().all(|v| v.abs() < 1e-6));
        let p = project(&model, &map).unwrap();
        assert_eq!(p.channels(), 5);
        assert_eq!(p.meta(), map.meta());
        for i in 0..12 {
            for j in 0..12 {
                let d0: f32 = map.token(i).iter().zip(map.token(j)).map(|(a, b)| (a - b).powi(2)).sum();
                let d1: f32 = p.token(i).iter().zip(p.token(j)).map(|(a, b)| (a - b).powi(2)).sum();
                assert!((d0.sqrt() - d1.sqrt()).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn project_channel_mismatch() {
        let map = fmap(2, 2, 3, gaussian(4, 3, 1));
        let model = fit_pca_exact(Tokens::from_map(&map), 2).unwrap();
        let other = fmap(2, 2, 4, gaussian(4, 4, 1));
        assert!(matches!(project(&model, &other), Err(Error::Shape(_))));
    }

    #[test]
    fn pair_pca_symmetry_and_order() {
        let src = fmap(4, 4, 6, gaussian(16, 6, 30));
        let tgt = fmap(3, 5, 6, gaussian(15, 6, 31));
        let (a, b, _) = fit_pair_pca(&src, &src, 3, PcaMethod::Exact).unwrap();
        assert_eq!(a, b);

        let (s1, t1, m1) = fit_pair_pca(&src, &tgt, 3, PcaMethod::Exact).unwrap();
        let (t2, s2, m2) = fit_pair_pca(&tgt, &src, 3, PcaMethod::Exact).unwrap();
        for (x, y) in s1.data().iter().zip(s2.data()).chain(t1.data().iter().zip(t2.data())) {
            assert!((x - y).abs() < 1e-5);
        }
        for (x, y) in m1.mean().iter().zip(m2.mean()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn pair_pca_constant_source() {
        let src = fmap(2, 3, 4, vec![0.5; 24]);
        let tgt = fmap(2, 3, 4, gaussian(6, 4, 40));
        let (ps, _, _) = fit_pair_pca(&src, &tgt, 2, PcaMethod::Exact).unwrap();
        for t in ps.tokens() {
            assert_eq!(t, ps.token(0));
        }
        let bad = fmap(2, 3, 5, gaussian(6, 5, 40));
        assert!(matches!(fit_pair_pca(&src, &bad, 2, PcaMethod::Exact), Err(Error::Shape(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn basis_orthonormal_and_error_monotone(seed in 0u64..1000, rows in 8usize..40, cols in 2usize..10) {
            let data = gaussian(rows, cols, seed);
            let tokens = Tokens::new(&data, rows, cols).unwrap();
            let mut prev = f64::INFINITY;
            for k in 1..=cols.min(rows) {
                let m = fit_pca_exact(tokens, k).unwrap();
                prop_assert!(m.orthonormality_error() < 1e-5);
                prop_assert!(m.explained().windows(2).all(|w| w[0] >= w[1] && w[1] >= 0.0));
                let err = m.reconstruction_error(tokens);
                prop_assert!(err <= prev * (1.0 + 1e-9) + 1e-9);
                prev = err;
            }
        }

        #[test]
        fn randomized_basis_orthonormal(seed in 0u64..1000, k in 1usize..6) {
            let data = gaussian(30, 8, seed);
            let tokens = Tokens::new(&data, 30, 8).unwrap();
            let m = fit_pca_randomized(tokens, k, 3, 2, seed).unwrap();
            prop_assert!(m.orthonormality_error() < 1e-5);
        }
    }
}
