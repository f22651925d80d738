//! Structured low-rank (SLR) parallel imaging: block-Hankel lifting, annihilation
//! filters calibrated on ACS data, and the penalized consistency solve
//! `argmin ½‖M z - y‖² + ‖H(z) N‖²_F + λ‖z - z'‖²`.

use nalgebra::DMatrix;
use ndarray::{Array2, Array3, ArrayView3, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::SamplingMask;
use crate::tensor::{dft2_in_place, Dims, KSpace};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Patch size of the block-Hankel lifting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HankelConfig {
    pub wy: usize,
    pub wx: usize,
}

impl Default for HankelConfig {
    fn default() -> Self {
        HankelConfig { wy: 6, wx: 6 }
    }
}

impl HankelConfig {
    pub fn new(wy: usize, wx: usize) -> Self {
        HankelConfig { wy, wx }
    }

    fn check(&self, ky: usize, kx: usize) -> Result<()> {
        if self.wy < 1 || self.wx < 1 || self.wy > ky || self.wx > kx {
            return Err(Error::InvalidDimension(format!(
                "window {}x{} does not fit a {ky}x{kx} grid",
                self.wy, self.wx
            )));
        }
        Ok(())
    }

    /// `(rows, cols)` of the lifted matrix.
    pub fn shape(&self, dims: Dims) -> (usize, usize) {
        (
            (dims.ky + 1 - self.wy) * (dims.kx + 1 - self.wx),
            dims.nc * self.wy * self.wx,
        )
    }
}

/// Block-Hankel lifting over valid (non-wrapping) patches. Row `py·(kx-wx+1)+px`
/// holds the patch at `(py, px)`; column `c·wy·wx + dy·wx + dx` is the sample
/// `z[c, py+dy, px+dx]`.
pub fn hankelize(z: ArrayView3<Complex64>, cfg: HankelConfig) -> Result<Array2<Complex64>> {
    let (nc, ky, kx) = z.dim();
    cfg.check(ky, kx)?;
    let (rows, cols) = cfg.shape(Dims::new(nc, ky, kx));
    let nx = kx + 1 - cfg.wx;
    Ok(Array2::from_shape_fn((rows, cols), |(r, col)| {
        let (py, px) = (r / nx, r % nx);
        let c = col / (cfg.wy * cfg.wx);
        let o = col % (cfg.wy * cfg.wx);
        z[[c, py + o / cfg.wx, px + o % cfg.wx]]
    }))
}

/// Adjoint of [`hankelize`]: scatters every entry back onto its sample and sums.
pub fn hankel_adjoint(h: &Array2<Complex64>, dims: Dims, cfg: HankelConfig) -> Result<Array3<Complex64>> {
    cfg.check(dims.ky, dims.kx)?;
    if h.dim() != cfg.shape(dims) {
        return Err(Error::DimensionMismatch(format!(
            "Hankel matrix is {:?}, expected {:?}",
            h.dim(),
            cfg.shape(dims)
        )));
    }
    let nx = dims.kx + 1 - cfg.wx;
    let mut out = Array3::zeros(dims.shape());
    for ((r, col), v) in h.indexed_iter() {
        let (py, px) = (r / nx, r % nx);
        let c = col / (cfg.wy * cfg.wx);
        let o = col % (cfg.wy * cfg.wx);
        out[[c, py + o / cfg.wx, px + o % cfg.wx]] += *v;
    }
    Ok(out)
}

/// Nullspace filter bank of the calibration Hankel matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnihilationFilter {
    filters: Array2<Complex64>,
    window: HankelConfig,
    nc: usize,
    rank_threshold: f64,
    singular_values: Vec<f64>,
}

impl AnnihilationFilter {
    /// Wraps a filter matrix (columns of length `nc·wy·wx`, orthonormal).
    pub fn new(
        filters: Array2<Complex64>,
        window: HankelConfig,
        nc: usize,
        rank_threshold: f64,
    ) -> Result<Self> {
        if filters.nrows() != nc * window.wy * window.wx {
            return Err(Error::DimensionMismatch(format!(
                "filters have {} rows, window needs {}",
                filters.nrows(),
                nc * window.wy * window.wx
            )));
        }
        check_threshold(rank_threshold)?;
        let gram = filters.t().mapv(|v| v.conj()).dot(&filters);
        let dev = gram
            .indexed_iter()
            .map(|((a, b), v)| (v - if a == b { 1.0 } else { 0.0 }).norm())
            .fold(0.0, f64::max);
        if dev > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "filter columns are not orthonormal (deviation {dev:e})"
            )));
        }
        Ok(AnnihilationFilter { filters, window, nc, rank_threshold, singular_values: Vec::new() })
    }

    /// A bank with no filters: the SLR term vanishes.
    pub fn empty(window: HankelConfig, nc: usize, rank_threshold: f64) -> Self {
        AnnihilationFilter {
            filters: Array2::zeros((nc * window.wy * window.wx, 0)),
            window,
            nc,
            rank_threshold,
            singular_values: Vec::new(),
        }
    }

    pub fn filters(&self) -> &Array2<Complex64> {
        &self.filters
    }

    pub fn window(&self) -> HankelConfig {
        self.window
    }

    pub fn nc(&self) -> usize {
        self.nc
    }

    pub fn rank_threshold(&self) -> f64 {
        self.rank_threshold
    }

    pub fn len(&self) -> usize {
        self.filters.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.ncols() == 0
    }

    /// Set when calibration found no singular value under the threshold, so the
    /// SLR term is inert.
    pub fn empty_nullspace_warning(&self) -> bool {
        self.is_empty()
    }

    /// Calibration singular values, descending (empty unless estimated).
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// `‖H(z) N‖²_F`.
    pub fn residual_sqr(&self, z: ArrayView3<Complex64>) -> Result<f64> {
        let h = hankelize(z, self.window)?;
        Ok(h.dot(&self.filters).iter().map(|v| v.norm_sqr()).sum())
    }
}

fn check_threshold(t: f64) -> Result<()> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::InvalidArgument(format!("rank threshold must lie in (0, 1), got {t}")));
    }
    Ok(())
}

fn to_dmatrix(a: &Array2<Complex64>, pad_rows: usize) -> DMatrix<Complex64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r.max(pad_rows), c, |i, j| if i < r { a[[i, j]] } else { ZERO })
}

/// Right singular vectors of `a` sorted by descending singular value, as the
/// columns of a square matrix, together with the (zero-padded) singular values.
fn right_singular_basis(a: &Array2<Complex64>) -> (Vec<f64>, Array2<Complex64>) {
    let cols = a.ncols();
    let svd = to_dmatrix(a, cols).svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors were requested");
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    let sv = order.iter().map(|&k| svd.singular_values[k]).collect();
    let basis = Array2::from_shape_fn((cols, cols), |(i, j)| v_t[(order[j], i)].conj());
    (sv, basis)
}

/// Calibrates annihilation filters on an ACS block `(nc, h, w)`: right singular
/// vectors of `H(acs)` whose singular value is below `rank_threshold · σ_max`.
pub fn estimate_annihilation(
    acs: ArrayView3<Complex64>,
    cfg: HankelConfig,
    rank_threshold: f64,
) -> Result<AnnihilationFilter> {
    check_threshold(rank_threshold)?;
    let (nc, h, w) = acs.dim();
    if h < cfg.wy || w < cfg.wx || nc == 0 {
        return Err(Error::CalibrationTooSmall(format!(
            "ACS block {h}x{w} is smaller than the {}x{} window",
            cfg.wy, cfg.wx
        )));
    }
    if acs.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(Error::NonFinite("ACS data"));
    }
    let hm = hankelize(acs, cfg)?;
    let (sv, basis) = right_singular_basis(&hm);
    let smax = sv.first().copied().unwrap_or(0.0);
    let cut = rank_threshold * smax;
    let null: Vec<usize> = (0..sv.len()).filter(|&k| sv[k] < cut).collect();
    let mut filters = Array2::zeros((basis.nrows(), null.len()));
    for (j, &k) in null.iter().enumerate() {
        filters.column_mut(j).assign(&basis.column(k));
    }
    Ok(AnnihilationFilter { filters, window: cfg, nc, rank_threshold, singular_values: sv })
}

/// `X ↦ H*(H(X) B B^H)` for an orthonormal basis `B`, applied with FFT
/// correlations on the sample grid.
#[derive(Clone, Debug)]
struct LowRankGram {
    /// `DFT(conj(b_j[c]))` zero-padded to the grid, per basis vector and coil.
    spectra: Vec<Vec<Vec<Complex64>>>,
}

/// `H*(H(z) N N^H)` on a fixed grid. Uses `N` directly, or the complement
/// `H*H - H*(H(·) V V^H)` with `V ⟂ N` when that basis is smaller.
#[derive(Clone, Debug)]
pub struct SlrOperator {
    dims: Dims,
    window: HankelConfig,
    gram: Option<LowRankGram>,
    complement: bool,
    /// Number of valid patches covering each sample (`diag(H*H)`).
    coverage: Array2<f64>,
}

impl SlrOperator {
    pub fn new(filter: &AnnihilationFilter, dims: Dims) -> Result<Self> {
        let window = filter.window();
        window.check(dims.ky, dims.kx)?;
        if filter.nc() != dims.nc {
            return Err(Error::DimensionMismatch(format!(
                "filter calibrated for {} coils, data has {}",
                filter.nc(),
                dims.nc
            )));
        }
        let cols = filter.filters().nrows();
        let r = filter.len();
        let complement = r > cols - r;
        let basis = if complement { orthogonal_complement(filter.filters()) } else { filter.filters().clone() };
        let gram = (r > 0).then(|| LowRankGram::new(&basis, dims, window));
        let cy: Vec<f64> = (0..dims.ky).map(|q| coverage_1d(q, dims.ky, window.wy)).collect();
        let cx: Vec<f64> = (0..dims.kx).map(|q| coverage_1d(q, dims.kx, window.wx)).collect();
        let coverage = Array2::from_shape_fn(dims.grid(), |(y, x)| cy[y] * cx[x]);
        Ok(SlrOperator { dims, window, gram, complement, coverage })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn window(&self) -> HankelConfig {
        self.window
    }

    /// True when the filter bank is empty and the operator is zero.
    pub fn is_inert(&self) -> bool {
        self.gram.is_none()
    }

    /// `H*(H(z) N N^H)`.
    pub fn apply(&self, z: &Array3<Complex64>) -> Array3<Complex64> {
        let Some(gram) = &self.gram else {
            return Array3::zeros(self.dims.shape());
        };
        let low = gram.apply(z, self.dims, self.window);
        if !self.complement {
            return low;
        }
        let mut out = z.clone();
        for mut coil in out.axis_iter_mut(Axis(0)) {
            coil.zip_mut_with(&self.coverage, |v, &c| *v *= c);
        }
        out - low
    }

    /// `‖H(z) N‖²_F = <z, H*(H(z) N N^H)>`.
    pub fn penalty(&self, z: &Array3<Complex64>) -> f64 {
        inner(z, &self.apply(z)).re.max(0.0)
    }
}

fn coverage_1d(q: usize, n: usize, w: usize) -> f64 {
    // patch starts p with p <= q <= p + w - 1 and 0 <= p <= n - w
    let lo = q.saturating_sub(w - 1);
    let hi = q.min(n - w);
    (hi + 1 - lo) as f64
}

fn orthogonal_complement(n: &Array2<Complex64>) -> Array2<Complex64> {
    let cols = n.nrows();
    let proj = n.dot(&n.t().mapv(|v| v.conj()));
    let resid = Array2::from_shape_fn((cols, cols), |(a, b)| {
        (if a == b { Complex64::new(1.0, 0.0) } else { ZERO }) - proj[[a, b]]
    });
    let (sv, basis) = right_singular_basis(&resid);
    let keep = sv.iter().filter(|&&s| s > 0.5).count();
    basis.slice(ndarray::s![.., ..keep]).to_owned()
}

impl LowRankGram {
    fn new(basis: &Array2<Complex64>, dims: Dims, window: HankelConfig) -> Self {
        let (ky, kx) = dims.grid();
        let patch = window.wy * window.wx;
        let spectra = basis
            .columns()
            .into_iter()
            .map(|b| {
                (0..dims.nc)
                    .map(|c| {
                        let mut buf = vec![ZERO; ky * kx];
                        for o in 0..patch {
                            buf[(o / window.wx) * kx + o % window.wx] = b[c * patch + o].conj();
                        }
                        dft2_in_place(&mut buf, ky, kx, false);
                        buf
                    })
                    .collect()
            })
            .collect();
        LowRankGram { spectra }
    }

    fn apply(&self, z: &Array3<Complex64>, dims: Dims, window: HankelConfig) -> Array3<Complex64> {
        let (ky, kx) = dims.grid();
        let n = (ky * kx) as f64;
        let (vy, vx) = (ky + 1 - window.wy, kx + 1 - window.wx);
        let zhat: Vec<Vec<Complex64>> = z
            .axis_iter(Axis(0))
            .map(|coil| {
                let mut buf: Vec<Complex64> = coil.iter().copied().collect();
                dft2_in_place(&mut buf, ky, kx, false);
                buf
            })
            .collect();
        let mut acc = vec![vec![ZERO; ky * kx]; dims.nc];
        let mut y = vec![ZERO; ky * kx];
        for phi in &self.spectra {
            // correlation with the filter: y = H(z) b, one value per valid patch
            y.iter_mut().for_each(|v| *v = ZERO);
            for (zc, pc) in zhat.iter().zip(phi) {
                for ((v, a), p) in y.iter_mut().zip(zc).zip(pc) {
                    *v += a * p.conj();
                }
            }
            dft2_in_place(&mut y, ky, kx, true);
            for (idx, v) in y.iter_mut().enumerate() {
                if idx / kx < vy && idx % kx < vx {
                    *v /= n;
                } else {
                    *v = ZERO;
                }
            }
            dft2_in_place(&mut y, ky, kx, false);
            for (ac, pc) in acc.iter_mut().zip(phi) {
                for ((o, a), p) in ac.iter_mut().zip(&y).zip(pc) {
                    *o += a * p;
                }
            }
        }
        let mut out = Array3::zeros(dims.shape());
        for (c, mut buf) in acc.into_iter().enumerate() {
            dft2_in_place(&mut buf, ky, kx, true);
            for (dst, v) in out.index_axis_mut(Axis(0), c).iter_mut().zip(buf) {
                *dst = v / n;
            }
        }
        out
    }
}

fn inner(a: &Array3<Complex64>, b: &Array3<Complex64>) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &Array3<Complex64>) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Result of one penalized consistency solve.
#[derive(Clone, Debug)]
pub struct SlrOutcome {
    pub z: KSpace,
    pub iterations: usize,
    /// `‖b - A z‖ / ‖b‖` at the returned iterate.
    pub relative_residual: f64,
}

/// Prepared solver for repeated corrections on one grid with one filter bank.
#[derive(Clone, Debug)]
pub struct SlrSolver {
    op: SlrOperator,
}

impl SlrSolver {
    pub fn new(filter: &AnnihilationFilter, dims: Dims) -> Result<Self> {
        Ok(SlrSolver { op: SlrOperator::new(filter, dims)? })
    }

    pub fn operator(&self) -> &SlrOperator {
        &self.op
    }

    fn check_inputs(&self, z_prime: &KSpace, y: &KSpace, mask: &SamplingMask, lambda: f64) -> Result<()> {
        let d = self.op.dims();
        if z_prime.dims() != d || y.dims() != d || mask.dims() != d.grid() {
            return Err(Error::DimensionMismatch("SLR inputs disagree in shape".into()));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(())
    }

    /// `½‖M z - y‖² + ‖H(z) N‖²_F + λ‖z - z'‖²`.
    pub fn objective(&self, z: &KSpace, z_prime: &KSpace, y: &KSpace, mask: &SamplingMask, lambda: f64) -> Result<f64> {
        self.check_inputs(z_prime, y, mask, lambda)?;
        let data = (&mask.apply(z)? - y).norm_sqr();
        let prox = (z - z_prime).norm_sqr();
        Ok(0.5 * data + self.op.penalty(z.data()) + lambda * prox)
    }

    /// Conjugate gradients on `(M + 2 H*(·N N^H) + 2λ) z = y + 2λ z'`, started at `z'`.
    pub fn solve(
        &self,
        z_prime: &KSpace,
        y: &KSpace,
        mask: &SamplingMask,
        lambda: f64,
        cg_iters: usize,
        cg_tol: f64,
    ) -> Result<SlrOutcome> {
        self.check_inputs(z_prime, y, mask, lambda)?;
        let w = mask.weights();
        let apply = |x: &Array3<Complex64>| -> Array3<Complex64> {
            let mut out = self.op.apply(x) * 2.0;
            for ((c, yy, xx), v) in out.indexed_iter_mut() {
                *v += x[[c, yy, xx]] * (w[[yy, xx]] + 2.0 * lambda);
            }
            out
        };
        let b = mask.apply(y)?.into_data() + &(z_prime.data() * (2.0 * lambda));
        let bnorm = norm(&b);
        let mut x = z_prime.data().clone();
        let mut r = &b - &apply(&x);
        let mut rr = inner(&r, &r).re;
        let scale = if bnorm > 0.0 { bnorm } else { 1.0 };
        let mut p = r.clone();
        let mut iterations = 0;
        let mut growth = 0;
        while iterations < cg_iters && rr.sqrt() > cg_tol * scale {
            let ap = apply(&p);
            let pap = inner(&p, &ap).re;
            if !(pap > 0.0) {
                break;
            }
            let alpha = rr / pap;
            x.scaled_add(Complex64::new(alpha, 0.0), &p);
            r.scaled_add(Complex64::new(-alpha, 0.0), &ap);
            let rr_new = inner(&r, &r).re;
            iterations += 1;
            if !rr_new.is_finite() {
                return Err(Error::NumericalFailure("non-finite CG residual".into()));
            }
            growth = if rr_new > rr { growth + 1 } else { 0 };
            if growth >= 5 {
                return Err(Error::NumericalFailure(format!(
                    "CG residual grew for 5 consecutive iterations (iteration {iterations})"
                )));
            }
            let beta = rr_new / rr;
            rr = rr_new;
            p = &r + &(p * beta);
        }
        Ok(SlrOutcome {
            z: KSpace::new(x)?,
            iterations,
            relative_residual: rr.sqrt() / scale,
        })
    }
}

/// One-shot penalized consistency solve; see [`SlrSolver::solve`].
pub fn slr_correct(
    z_prime: &KSpace,
    y: &KSpace,
    mask: &SamplingMask,
    filter: &AnnihilationFilter,
    lambda: f64,
    cg_iters: usize,
    cg_tol: f64,
) -> Result<KSpace> {
    Ok(SlrSolver::new(filter, z_prime.dims())?
        .solve(z_prime, y, mask, lambda, cg_iters, cg_tol)?
        .z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::complex_normal;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn one_dimensional_hankel() {
        let z = Array3::from_shape_vec((1, 1, 4), vec![c(1., 0.), c(2., 0.), c(3., 0.), c(4., 0.)]).unwrap();
        let h = hankelize(z.view(), HankelConfig::new(1, 2)).unwrap();
        let expected = [[1., 2.], [2., 3.], [3., 4.]];
        assert_eq!(h.dim(), (3, 2));
        for r in 0..3 {
            for k in 0..2 {
                assert_eq!(h[[r, k]], c(expected[r][k], 0.0));
            }
        }
        assert!(hankelize(z.view(), HankelConfig::new(2, 2)).is_err());
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Dims::new(2, 7, 9);
        let cfg = HankelConfig::new(3, 4);
        let z = complex_normal(d, &mut rng);
        let (rows, cols) = cfg.shape(d);
        let y = complex_normal(Dims::new(1, rows, cols), &mut rng).index_axis_move(Axis(0), 0);
        let lhs: Complex64 = hankelize(z.view(), cfg).unwrap().iter().zip(&y).map(|(a, b)| a.conj() * b).sum();
        let rhs = inner(&z, &hankel_adjoint(&y, d, cfg).unwrap());
        assert!((lhs - rhs).norm() <= 1e-12 * lhs.norm().max(1.0));
    }

    #[test]
    fn exponential_is_annihilated() {
        let alpha = Complex64::from_polar(1.0, 0.7);
        let z = Array3::from_shape_fn((1, 1, 12), |(_, _, k)| alpha.powu(k as u32));
        let f = estimate_annihilation(z.view(), HankelConfig::new(1, 2), 0.05).unwrap();
        assert_eq!(f.len(), 1);
        let n = f.filters().column(0).to_owned();
        // proportional to [-alpha, 1]
        let ratio = n[0] / n[1];
        assert!((ratio + alpha).norm() < 1e-10);
        assert!(f.residual_sqr(z.view()).unwrap().sqrt() <= 1e-10);
    }

    #[test]
    fn white_noise_has_no_nullspace() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let acs = complex_normal(Dims::new(2, 16, 32), &mut rng);
        let f = estimate_annihilation(acs.view(), HankelConfig::new(3, 3), 0.05).unwrap();
        assert!(f.is_empty());
        assert!(f.empty_nullspace_warning());
    }

    #[test]
    fn linearly_dependent_coils() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = complex_normal(Dims::new(1, 6, 6), &mut rng);
        let k = c(0.3, -1.2);
        let acs = Array3::from_shape_fn((2, 6, 6), |(ch, y, x)| base[[0, y, x]] * if ch == 0 { c(1.0, 0.0) } else { k });
        let f = estimate_annihilation(acs.view(), HankelConfig::new(1, 1), 0.05).unwrap();
        assert_eq!(f.len(), 1);
        let n = f.filters().column(0).to_owned();
        let expected = [-k / (1.0 + k.norm_sqr()).sqrt(), c(1.0 / (1.0 + k.norm_sqr()).sqrt(), 0.0)];
        let phase = n[1] / expected[1];
        assert!((phase.norm() - 1.0).abs() < 1e-10);
        assert!((n[0] - expected[0] * phase).norm() < 1e-10);
    }

    #[test]
    fn calibration_too_small() {
        let acs = Array3::zeros((1, 3, 8));
        assert!(matches!(
            estimate_annihilation(acs.view(), HankelConfig::new(4, 4), 0.05),
            Err(Error::CalibrationTooSmall(_))
        ));
    }

    #[test]
    fn fft_operator_matches_explicit_lifting() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = Dims::new(2, 8, 10);
        let cfg = HankelConfig::new(3, 2);
        // a random orthonormal bank, small and large, to exercise both modes
        let raw = complex_normal(Dims::new(1, 12, 12), &mut rng).index_axis_move(Axis(0), 0);
        let (_, basis) = right_singular_basis(&raw);
        let z = complex_normal(d, &mut rng);
        for r in [3, 10] {
            let n = basis.slice(ndarray::s![.., ..r]).to_owned();
            let f = AnnihilationFilter::new(n.clone(), cfg, 2, 0.05).unwrap();
            let op = SlrOperator::new(&f, d).unwrap();
            let h = hankelize(z.view(), cfg).unwrap();
            let explicit = hankel_adjoint(&h.dot(&n).dot(&n.t().mapv(|v| v.conj())), d, cfg).unwrap();
            let fast = op.apply(&z);
            let err = norm(&(&fast - &explicit)) / norm(&explicit);
            assert!(err < 1e-12, "r={r}: {err}");
        }
    }

    #[test]
    fn huge_lambda_returns_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = Dims::new(1, 8, 8);
        let zp = KSpace::new(complex_normal(d, &mut rng)).unwrap();
        let mask = crate::mask::make_mask(crate::mask::MaskKind::Uniform, 8, 8, 2, 2, 0).unwrap();
        let y = mask.apply(&KSpace::new(complex_normal(d, &mut rng)).unwrap()).unwrap();
        let f = AnnihilationFilter::empty(HankelConfig::new(2, 2), 1, 0.05);
        let out = slr_correct(&zp, &y, &mask, &f, 1e8, 10, 1e-12).unwrap();
        assert!((&out - &zp).norm() / zp.norm() <= 1e-4);
    }

    #[test]
    fn zero_lambda_full_mask_recovers_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = Dims::new(2, 8, 8);
        let zp = KSpace::new(complex_normal(d, &mut rng)).unwrap();
        let y = KSpace::new(complex_normal(d, &mut rng)).unwrap();
        let mask = SamplingMask::full(8, 8);
        let f = AnnihilationFilter::empty(HankelConfig::new(2, 2), 2, 0.05);
        let out = slr_correct(&zp, &y, &mask, &f, 0.0, 10, 1e-14).unwrap();
        assert!(out.max_abs_diff(&y) < 1e-12);
    }
}
