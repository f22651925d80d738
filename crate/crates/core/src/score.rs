//! Score models, the residual score parameterization, and denoising score matching.
//!
//! A [`ScoreModel`] maps a noisy, attenuated k-space `ẑ_i` to an estimate of `ẑ_0`.
//! The score follows as `(Ĝ_i ⊙ h - ẑ_i) / sigma_i^2` restricted to the range of
//! `S̄S̄*` (the pseudo-inverse of an orthogonal projection is the projection).

use ndarray::{Array2, Axis, Zip};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coils::CoilSensitivities;
use crate::error::{Error, Result};
use crate::forward::{perturb_with_noise, sample_perturbation};
use crate::noise::complex_normal;
use crate::schedule::DiffusionSchedule;
use crate::tensor::{fft2, ifft2, KSpace};

pub trait ScoreModel: Send + Sync {
    /// Estimate of `ẑ_0` from `z` at reverse step `step`.
    fn denoise(&self, z: &KSpace, step: usize) -> Result<KSpace>;
}

/// Knows the answer: always returns the stored ground truth.
#[derive(Clone, Debug)]
pub struct DeltaOracle {
    truth: KSpace,
}

impl DeltaOracle {
    pub fn new(truth: KSpace) -> Self {
        DeltaOracle { truth }
    }

    pub fn truth(&self) -> &KSpace {
        &self.truth
    }
}

impl ScoreModel for DeltaOracle {
    fn denoise(&self, z: &KSpace, _step: usize) -> Result<KSpace> {
        if z.dims() != self.truth.dims() {
            return Err(Error::DimensionMismatch(format!(
                "oracle holds {:?}, got {:?}",
                self.truth.dims(),
                z.dims()
            )));
        }
        Ok(self.truth.clone())
    }
}

/// Posterior mean under a Gaussian prior on the coil-combined spectrum
/// `u = S̄* ẑ_0 ~ CN(mean, variance)` (variance is `E|u - mean|^2` per frequency).
/// The denoiser combines coils with `S̄*`, applies the per-frequency Wiener filter,
/// and re-expands with `S̄`. It is the exact posterior mean when the coil maps
/// are spatially uniform.
#[derive(Clone, Debug)]
pub struct GaussianPriorOracle {
    mean: Array2<Complex64>,
    variance: Array2<f64>,
    sens: CoilSensitivities,
    sched: DiffusionSchedule,
}

impl GaussianPriorOracle {
    pub fn new(
        mean: Array2<Complex64>,
        variance: Array2<f64>,
        sens: CoilSensitivities,
        sched: DiffusionSchedule,
    ) -> Result<Self> {
        let grid = sens.dims().grid();
        if mean.dim() != grid || variance.dim() != grid {
            return Err(Error::DimensionMismatch("prior grid differs from coil grid".into()));
        }
        sched.check_grid(grid)?;
        if variance.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("prior variance must be finite and >= 0".into()));
        }
        Ok(GaussianPriorOracle { mean, variance, sens, sched })
    }

    /// Wiener gain on the combined spectrum at `step`.
    pub fn gain(&self, step: usize) -> Array2<f64> {
        let g = self.sched.ghat(step);
        let noise = 2.0 * self.sched.kernel_scale(step).powi(2);
        Zip::from(g).and(&self.variance).map_collect(|&g, &v| {
            let den = g * g * v + noise;
            if den > 0.0 {
                g * v / den
            } else {
                0.0
            }
        })
    }
}

impl ScoreModel for GaussianPriorOracle {
    fn denoise(&self, z: &KSpace, step: usize) -> Result<KSpace> {
        self.sched.check_index(step)?;
        let u = self.sens.adjoint_kspace(z)?;
        let g = self.sched.ghat(step);
        let w = self.gain(step);
        let mut est = u.into_data();
        {
            let mut e = est.index_axis_mut(Axis(0), 0);
            Zip::from(&mut e)
                .and(&self.mean)
                .and(g)
                .and(&w)
                .for_each(|e, &m, &g, &w| *e = m + (*e - m * g) * w);
        }
        self.sens.forward_kspace(&KSpace::new(est)?)
    }
}

/// Per-step, per-frequency complex gains shared across coils: `h(z, i) = g_i ⊙ z`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearDenoiser {
    gains: Vec<Array2<Complex64>>,
}

impl LinearDenoiser {
    pub fn new(gains: Vec<Array2<Complex64>>) -> Result<Self> {
        let Some(first) = gains.first() else {
            return Err(Error::InvalidArgument("need at least one gain map".into()));
        };
        let grid = first.dim();
        if gains.iter().any(|g| g.dim() != grid) {
            return Err(Error::DimensionMismatch("gain maps differ in shape".into()));
        }
        if gains.iter().flatten().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite("linear denoiser gains"));
        }
        Ok(LinearDenoiser { gains })
    }

    /// Pass-through gains (`g = 1`) for steps `0..=n_steps`.
    pub fn identity(n_steps: usize, ky: usize, kx: usize) -> Self {
        Self::constant(n_steps, ky, kx, Complex64::new(1.0, 0.0))
    }

    pub fn constant(n_steps: usize, ky: usize, kx: usize, value: Complex64) -> Self {
        LinearDenoiser { gains: vec![Array2::from_elem((ky, kx), value); n_steps + 1] }
    }

    pub fn gains(&self) -> &[Array2<Complex64>] {
        &self.gains
    }

    pub fn gain(&self, step: usize) -> &Array2<Complex64> {
        &self.gains[step]
    }

    pub fn set_gain(&mut self, step: usize, g: Array2<Complex64>) {
        assert_eq!(g.dim(), self.gains[step].dim());
        self.gains[step] = g;
    }

    pub fn n_steps(&self) -> usize {
        self.gains.len() - 1
    }
}

impl ScoreModel for LinearDenoiser {
    fn denoise(&self, z: &KSpace, step: usize) -> Result<KSpace> {
        let g = self.gains.get(step).ok_or(Error::IndexOutOfRange {
            index: step,
            max: self.n_steps(),
        })?;
        if g.dim() != z.dims().grid() {
            return Err(Error::DimensionMismatch("gain grid differs from data grid".into()));
        }
        KSpace::new(z.weighted_complex(g).into_data())
    }
}

/// `(1 / sigma_i^2) S̄S̄* (Ĝ_i ⊙ h - ẑ_i)`.
pub fn score_from_denoiser(
    h: &KSpace,
    z: &KSpace,
    sens: &CoilSensitivities,
    sched: &DiffusionSchedule,
    i: usize,
) -> Result<KSpace> {
    sched.check_index(i)?;
    let var = sched.sigma(i).powi(2);
    if !(var > 0.0) {
        return Err(Error::NumericalFailure(format!("noise level at step {i} is zero")));
    }
    let resid = &h.weighted(sched.ghat(i)) - z;
    Ok(&sens.apply_ss_star(&resid)? * (1.0 / var))
}

/// Loss weight `lambda(i) = sigma_i^2`.
pub fn dsm_weight(sched: &DiffusionSchedule, i: usize) -> f64 {
    sched.sigma(i).powi(2)
}

fn check_training_step(sched: &DiffusionSchedule, i: usize) -> Result<()> {
    sched.check_index(i)?;
    if i == 0 {
        return Err(Error::InvalidArgument("score matching needs step >= 1".into()));
    }
    Ok(())
}

/// `lambda(i) ‖S̄*(Ĝ_i ⊙ (h - ẑ_0))‖^2` for a given estimate `h`.
pub fn dsm_residual_loss(
    h: &KSpace,
    z0: &KSpace,
    sens: &CoilSensitivities,
    sched: &DiffusionSchedule,
    i: usize,
) -> Result<f64> {
    let r = (h - z0).weighted(sched.ghat(i));
    Ok(dsm_weight(sched, i) * sens.combine(&ifft2(&r))?.norm_sqr())
}

/// One-draw Monte-Carlo denoising score-matching loss at step `i`.
pub fn dsm_loss<M: ScoreModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    z0: &KSpace,
    sens: &CoilSensitivities,
    sched: &DiffusionSchedule,
    i: usize,
    rng: &mut R,
) -> Result<f64> {
    check_training_step(sched, i)?;
    let zi = sample_perturbation(z0, sens, sched, i, rng)?;
    let h = model.denoise(&zi, i)?;
    dsm_residual_loss(&h, z0, sens, sched, i)
}

/// Loss and gradient of the linear denoiser at step `i` for a fixed draw `zi`.
/// The gradient is returned as `∂ℓ/∂Re g + i ∂ℓ/∂Im g` per frequency.
pub fn linear_sample_loss_grad(
    gain: &Array2<Complex64>,
    zi: &KSpace,
    z0: &KSpace,
    sens: &CoilSensitivities,
    sched: &DiffusionSchedule,
    i: usize,
) -> Result<(f64, Array2<Complex64>)> {
    let g = sched.ghat(i);
    let lambda = dsm_weight(sched, i);
    let r = (&zi.weighted_complex(gain) - z0).weighted(g);
    let pr = sens.apply_ss_star(&r)?;
    let loss = lambda * r.inner(&pr).re;
    let mut grad = Array2::zeros(g.dim());
    for (zc, pc) in zi.data().axis_iter(Axis(0)).zip(pr.data().axis_iter(Axis(0))) {
        Zip::from(&mut grad)
            .and(&zc)
            .and(&pc)
            .and(g)
            .for_each(|d, z, p, &g| *d += z.conj() * p * (2.0 * lambda * g));
    }
    Ok((loss, grad))
}

/// Precomputed pieces for the noise-expected loss of the linear denoiser.
#[derive(Clone, Debug)]
pub struct ExpectedLossKernel {
    kernel_hat: KSpace,
    kernel_center: f64,
    mean_outer: Array2<Complex64>,
    sqrt_n: f64,
}

impl ExpectedLossKernel {
    pub fn new(sens: &CoilSensitivities) -> Result<Self> {
        let k = sens.projection_kernel();
        let (ky, kx) = k.dim();
        let kernel_center = k[[ky / 2, kx / 2]];
        let kc = k.mapv(|v| Complex64::new(v, 0.0)).insert_axis(Axis(0));
        // treat the k-space kernel as a "signal" and move to its conjugate domain
        let kernel_hat = KSpace::new(ifft2(&KSpace::new(kc)?).into_data())?;
        Ok(ExpectedLossKernel {
            kernel_hat,
            kernel_center,
            mean_outer: sens.mean_outer(),
            sqrt_n: ((ky * kx) as f64).sqrt(),
        })
    }

    /// Circular convolution `(K ⊛ d)(w) = sum_w' K(w - w') d(w')` on the k-space grid.
    fn convolve(&self, d: &Array2<Complex64>) -> Result<Array2<Complex64>> {
        let dk = KSpace::new(d.clone().insert_axis(Axis(0)))?;
        let dh = ifft2(&dk).into_data();
        let prod = &dh * self.kernel_hat.data() * self.sqrt_n;
        let out = fft2(&crate::tensor::Image::new(prod)?);
        Ok(out.into_data().index_axis_move(Axis(0), 0))
    }
}

/// Noise-expected loss `E_n lambda ‖S̄*(Ĝ_i ⊙ (g ⊙ ẑ_i - ẑ_0))‖^2` over the
/// perturbation kernel, its gradient (same convention as
/// [`linear_sample_loss_grad`]) and the diagonal of `∂²/∂g∂ḡ`.
pub fn linear_expected_loss_grad(
    gain: &Array2<Complex64>,
    z0: &KSpace,
    sens: &CoilSensitivities,
    sched: &DiffusionSchedule,
    i: usize,
    kern: &ExpectedLossKernel,
) -> Result<(f64, Array2<Complex64>, Array2<f64>)> {
    let g = sched.ghat(i);
    let lambda = dsm_weight(sched, i);
    let s2 = sched.kernel_scale(i).powi(2);

    // signal part: a = Ĝ ⊙ (g ⊙ Ĝ ⊙ z0 - z0)
    let gz0 = z0.weighted(g);
    let a = (&gz0.weighted_complex(gain) - z0).weighted(g);
    let pa = sens.apply_ss_star(&a)?;
    let signal = a.inner(&pa).re;

    // noise part: 2 s^2 sum conj(d) (K ⊛ d), d = Ĝ ⊙ g
    let d = Zip::from(gain).and(g).map_collect(|&v, &g| v * g);
    let kd = kern.convolve(&d)?;
    let noise = 2.0 * s2 * Zip::from(&d).and(&kd).fold(0.0, |acc, a, b| acc + (a.conj() * b).re);

    let loss = lambda * (signal + noise);

    let mut grad = Zip::from(&kd)
        .and(g)
        .map_collect(|k, &g| k * (2.0 * lambda * 2.0 * s2 * g));
    for (zc, pc) in z0.data().axis_iter(Axis(0)).zip(pa.data().axis_iter(Axis(0))) {
        Zip::from(&mut grad)
            .and(&zc)
            .and(&pc)
            .and(g)
            .for_each(|d, z, p, &g| *d += z.conj() * p * (2.0 * lambda * g * g));
    }

    let nc = z0.dims().nc;
    let z0d = z0.data();
    let hess = Array2::from_shape_fn(g.dim(), |(y, x)| {
        let gv = g[[y, x]];
        let mut quad = Complex64::new(0.0, 0.0);
        for a in 0..nc {
            for b in 0..nc {
                quad += z0d[[a, y, x]].conj() * kern.mean_outer[[a, b]] * z0d[[b, y, x]];
            }
        }
        lambda * (gv.powi(4) * quad.re + 2.0 * s2 * gv * gv * kern.kernel_center)
    });
    Ok((loss, grad, hess))
}

/// Largest discrepancy between the analytic gradient of the one-draw loss and
/// central finite differences (step 1e-6) over every real gain parameter,
/// normalized by the largest analytic gradient entry.
pub fn gradient_check<R: Rng + ?Sized>(
    model: &LinearDenoiser,
    z0: &KSpace,
    sens: &CoilSensitivities,
    sched: &DiffusionSchedule,
    i: usize,
    rng: &mut R,
) -> Result<f64> {
    check_training_step(sched, i)?;
    let zi = sample_perturbation(z0, sens, sched, i, rng)?;
    let gain = model.gain(i);
    let (_, grad) = linear_sample_loss_grad(gain, &zi, z0, sens, sched, i)?;
    let h = 1e-6;
    let loss_at = |g: &Array2<Complex64>| -> Result<f64> {
        dsm_residual_loss(&zi.weighted_complex(g), z0, sens, sched, i)
    };
    let mut probe = gain.clone();
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for idx in 0..gain.len() {
        let (y, x) = (idx / gain.ncols(), idx % gain.ncols());
        let base = probe[[y, x]];
        let mut fd = [0.0; 2];
        for (part, dir) in [Complex64::new(h, 0.0), Complex64::new(0.0, h)].into_iter().enumerate() {
            probe[[y, x]] = base + dir;
            let up = loss_at(&probe)?;
            probe[[y, x]] = base - dir;
            let down = loss_at(&probe)?;
            fd[part] = (up - down) / (2.0 * h);
        }
        probe[[y, x]] = base;
        let an = grad[[y, x]];
        worst = worst.max((an.re - fd[0]).abs()).max((an.im - fd[1]).abs());
        scale = scale.max(an.re.abs()).max(an.im.abs());
    }
    Ok(if scale > 0.0 { worst / scale } else { worst })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientEstimate {
    /// Exact expectation over the perturbation noise (deterministic).
    #[default]
    Expected,
    /// One fresh noise draw per sample, step and iteration.
    SingleDraw,
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub lr: f64,
    pub iters: usize,
    pub estimate: GradientEstimate,
    /// Starting gains; pass-through when `None`.
    pub init: Option<LinearDenoiser>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { lr: 0.5, iters: 50, estimate: GradientEstimate::Expected, init: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: LinearDenoiser,
    pub iteration: usize,
    /// Objective before each update, averaged over samples and steps `1..=N`.
    pub loss_history: Vec<f64>,
}

/// Fits per-step gains by diagonally preconditioned gradient descent on the
/// score-matching objective averaged over the training set and steps `1..=N`.
///
/// Each update is `g ← g - lr · (∂J/∂ḡ) / (∂²J/∂g∂ḡ)`; with spatially uniform
/// coils the curvature is exactly diagonal and `lr = 1` is a Newton step.
/// Aborts with a step-size error once the objective exceeds ten times its
/// starting value.
pub fn train_linear_denoiser<R: Rng + ?Sized>(
    set: &[KSpace],
    sens: &CoilSensitivities,
    sched: &DiffusionSchedule,
    opts: &TrainOptions,
    rng: &mut R,
) -> Result<TrainState> {
    let Some(first) = set.first() else {
        return Err(Error::InvalidArgument("training set is empty".into()));
    };
    if !(opts.lr >= 0.0 && opts.lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate must be >= 0, got {}", opts.lr)));
    }
    let dims = first.dims();
    if set.iter().any(|z| z.dims() != dims) {
        return Err(Error::DimensionMismatch("training samples differ in shape".into()));
    }
    sched.check_grid(dims.grid())?;
    let n = sched.n_steps();
    let (ky, kx) = dims.grid();
    let mut model = match &opts.init {
        Some(m) if m.n_steps() == n && m.gain(0).dim() == (ky, kx) => m.clone(),
        Some(_) => return Err(Error::DimensionMismatch("initial gains do not fit the schedule".into())),
        None => LinearDenoiser::identity(n, ky, kx),
    };
    let kern = ExpectedLossKernel::new(sens)?;
    let norm = 1.0 / (set.len() * n) as f64;
    let mut history = Vec::with_capacity(opts.iters);

    for it in 0..opts.iters {
        let mut total = 0.0;
        let mut updates = Vec::with_capacity(n);
        for i in 1..=n {
            let gain = model.gain(i);
            let mut grad = Array2::<Complex64>::zeros((ky, kx));
            let mut hess = Array2::<f64>::zeros((ky, kx));
            for z0 in set {
                let (loss, gr, h) = linear_expected_loss_grad(gain, z0, sens, sched, i, &kern)?;
                hess += &h;
                match opts.estimate {
                    GradientEstimate::Expected => {
                        total += loss;
                        grad += &gr;
                    }
                    GradientEstimate::SingleDraw => {
                        let noise = complex_normal(dims, rng);
                        let zi = perturb_with_noise(z0, sens, sched, i, noise)?;
                        let (l, gr) = linear_sample_loss_grad(gain, &zi, z0, sens, sched, i)?;
                        total += l;
                        grad += &gr;
                    }
                }
            }
            updates.push((grad, hess));
        }
        let loss = total * norm;
        if !loss.is_finite() {
            return Err(Error::NumericalFailure(format!("training loss is {loss} at iteration {it}")));
        }
        if let Some(&first) = history.first() {
            if loss > 10.0 * first {
                return Err(Error::StepSize(format!(
                    "loss {loss:e} exceeds 10x the initial {first:e} at iteration {it}"
                )));
            }
        }
        history.push(loss);
        for (i, (grad, hess)) in (1..=n).zip(updates) {
            let mut g = model.gain(i).clone();
            Zip::from(&mut g).and(&grad).and(&hess).for_each(|g, d, &h| {
                if h > 0.0 {
                    // the returned gradient is 2 ∂J/∂ḡ
                    *g -= d * (opts.lr * 0.5 / h);
                }
            });
            model.set_gain(i, g);
        }
    }
    Ok(TrainState { model, iteration: opts.iters, loss_history: history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;
    use ndarray::Array3;
    use crate::schedule::ScheduleParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(nc: usize, n: usize, seed: u64) -> (CoilSensitivities, DiffusionSchedule, KSpace) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sens = CoilSensitivities::normalize(complex_normal(Dims::new(nc, n, n), &mut rng)).unwrap();
        let p = ScheduleParams { n_steps: 8, tau_n: 30.0, ..Default::default() };
        let sched = DiffusionSchedule::build(&p, n, n).unwrap();
        let x = crate::tensor::Image::new(complex_normal(Dims::new(1, n, n), &mut rng)).unwrap();
        let z0 = fft2(&sens.expand(&x).unwrap());
        (sens, sched, z0)
    }

    #[test]
    fn zero_residual_gives_zero_score() {
        let (sens, sched, z0) = setup(2, 8, 1);
        let zi = z0.weighted(sched.ghat(3));
        let s = score_from_denoiser(&z0, &zi, &sens, &sched, 3).unwrap();
        assert_eq!(s.norm(), 0.0);
    }

    #[test]
    fn delta_oracle_score_is_negative_noise() {
        let (sens, sched, z0) = setup(3, 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let i = 5;
        let noise = sens
            .apply_ss_star(&KSpace::new(complex_normal(z0.dims(), &mut rng)).unwrap())
            .unwrap();
        let sigma = sched.sigma(i);
        let mut zi = z0.weighted(sched.ghat(i));
        zi.axpy(sigma, &noise);
        let oracle = DeltaOracle::new(z0.clone());
        let s = score_from_denoiser(&oracle.denoise(&zi, i).unwrap(), &zi, &sens, &sched, i).unwrap();
        let expected = &noise * (-1.0 / sigma);
        assert!(s.max_abs_diff(&expected) <= 1e-10);
    }

    #[test]
    fn score_is_linear_in_residual() {
        let (sens, sched, z0) = setup(2, 8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let zi = KSpace::new(complex_normal(z0.dims(), &mut rng)).unwrap();
        let h = KSpace::new(complex_normal(z0.dims(), &mut rng)).unwrap();
        let s1 = score_from_denoiser(&h, &zi, &sens, &sched, 4).unwrap();
        // doubling the residual: h' with Ĝh' - z = 2 (Ĝh - z)
        let g = sched.ghat(4);
        let h2 = KSpace::new(Array3::from_shape_fn(h.dims().shape(), |(c, y, x)| {
            (h.data()[[c, y, x]] * 2.0 * g[[y, x]] - zi.data()[[c, y, x]]) / g[[y, x]]
        }))
        .unwrap();
        let s2 = score_from_denoiser(&h2, &zi, &sens, &sched, 4).unwrap();
        assert!((&s2 - &(&s1 * 2.0)).norm() <= 1e-12 * s2.norm().max(1.0));
    }

    #[test]
    fn delta_oracle_has_zero_loss() {
        let (sens, sched, z0) = setup(2, 8, 4);
        let oracle = DeltaOracle::new(z0.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 1..=sched.n_steps() {
            assert_eq!(dsm_loss(&oracle, &z0, &sens, &sched, i, &mut rng).unwrap(), 0.0);
        }
        assert!(dsm_loss(&oracle, &z0, &sens, &sched, 0, &mut rng).is_err());
    }

    #[test]
    fn zero_gain_on_zero_data() {
        let (sens, sched, z0) = setup(2, 8, 5);
        let zero = KSpace::zeros(z0.dims()).unwrap();
        let model = LinearDenoiser::constant(sched.n_steps(), 8, 8, Complex64::new(0.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(dsm_loss(&model, &zero, &sens, &sched, 3, &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn expected_loss_matches_monte_carlo() {
        let (sens, sched, z0) = setup(2, 8, 6);
        let kern = ExpectedLossKernel::new(&sens).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gain = Array2::from_shape_fn((8, 8), |(y, x)| Complex64::new(0.5 + 0.03 * y as f64, 0.02 * x as f64));
        let i = 6;
        let (expected, _, _) = linear_expected_loss_grad(&gain, &z0, &sens, &sched, i, &kern).unwrap();
        let draws = 4000;
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for _ in 0..draws {
            let zi = sample_perturbation(&z0, &sens, &sched, i, &mut rng).unwrap();
            let (l, _) = linear_sample_loss_grad(&gain, &zi, &z0, &sens, &sched, i).unwrap();
            acc += l;
            acc2 += l * l;
        }
        let mean = acc / draws as f64;
        let se = ((acc2 / draws as f64 - mean * mean) / draws as f64).sqrt();
        assert!((mean - expected).abs() < 4.0 * se, "mc {mean} vs exact {expected} (se {se})");
    }

    #[test]
    fn expected_gradient_matches_finite_differences() {
        let (sens, sched, z0) = setup(2, 6, 7);
        let kern = ExpectedLossKernel::new(&sens).unwrap();
        let gain = Array2::from_shape_fn((6, 6), |(y, x)| Complex64::new(0.3 * y as f64 - 0.4, 0.1 * x as f64));
        let i = 4;
        let (_, grad, hess) = linear_expected_loss_grad(&gain, &z0, &sens, &sched, i, &kern).unwrap();
        let h = 1e-6;
        let scale = grad.iter().map(|v| v.re.abs().max(v.im.abs())).fold(0.0, f64::max);
        let hmax = hess.iter().copied().fold(0.0, f64::max);
        for y in 0..6 {
            for x in 0..6 {
                for (part, dir) in [Complex64::new(h, 0.0), Complex64::new(0.0, h)].into_iter().enumerate() {
                    let mut up = gain.clone();
                    up[[y, x]] += dir;
                    let mut down = gain.clone();
                    down[[y, x]] -= dir;
                    let lu = linear_expected_loss_grad(&up, &z0, &sens, &sched, i, &kern).unwrap().0;
                    let ld = linear_expected_loss_grad(&down, &z0, &sens, &sched, i, &kern).unwrap().0;
                    let fd = (lu - ld) / (2.0 * h);
                    let an = if part == 0 { grad[[y, x]].re } else { grad[[y, x]].im };
                    assert!((an - fd).abs() <= 1e-5 * scale, "({y},{x}) {an} vs {fd}");
                }
                // curvature along the real direction equals 2 * diag(∂²/∂g∂ḡ)
                let mut up = gain.clone();
                up[[y, x]] += Complex64::new(1e-3, 0.0);
                let mut down = gain.clone();
                down[[y, x]] -= Complex64::new(1e-3, 0.0);
                let (l0, _, _) = linear_expected_loss_grad(&gain, &z0, &sens, &sched, i, &kern).unwrap();
                let lu = linear_expected_loss_grad(&up, &z0, &sens, &sched, i, &kern).unwrap().0;
                let ld = linear_expected_loss_grad(&down, &z0, &sens, &sched, i, &kern).unwrap().0;
                let curv = (lu - 2.0 * l0 + ld) / 1e-6;
                assert!((curv - 2.0 * hess[[y, x]]).abs() <= 1e-4 * curv.abs() + 1e-6 * hmax);
            }
        }
    }

    #[test]
    fn zero_learning_rate_keeps_gains() {
        let (sens, sched, z0) = setup(2, 8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let opts = TrainOptions { lr: 0.0, iters: 5, ..Default::default() };
        let st = train_linear_denoiser(&[z0], &sens, &sched, &opts, &mut rng).unwrap();
        assert_eq!(st.model, LinearDenoiser::identity(sched.n_steps(), 8, 8));
        assert_eq!(st.loss_history.len(), 5);
        assert!(st.loss_history.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn oversized_steps_abort() {
        let (sens, sched, z0) = setup(2, 8, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let opts = TrainOptions { lr: 5.0, iters: 20, ..Default::default() };
        let err = train_linear_denoiser(&[z0], &sens, &sched, &opts, &mut rng).unwrap_err();
        assert!(matches!(err, Error::StepSize(_)));
        assert!(train_linear_denoiser(&[], &sens, &sched, &TrainOptions::default(), &mut rng).is_err());
    }

    #[test]
    fn single_draw_training_is_reproducible() {
        let (sens, sched, z0) = setup(2, 8, 10);
        let opts = TrainOptions { iters: 4, estimate: GradientEstimate::SingleDraw, ..Default::default() };
        let a = train_linear_denoiser(std::slice::from_ref(&z0), &sens, &sched, &opts, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = train_linear_denoiser(&[z0], &sens, &sched, &opts, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_oracle_is_passthrough_without_noise() {
        let (_, _, _) = setup(1, 8, 11);
        let sens = CoilSensitivities::uniform(&[Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8)], 8, 8).unwrap();
        let sched = DiffusionSchedule::from_levels_unchecked(vec![0.0, 1.0], vec![0.1, 0.1], 8, 8);
        let oracle = GaussianPriorOracle::new(
            Array2::zeros((8, 8)),
            Array2::from_elem((8, 8), 4.0),
            sens.clone(),
            sched.clone(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = crate::tensor::Image::new(complex_normal(Dims::new(1, 8, 8), &mut rng)).unwrap();
        let z0 = fft2(&sens.expand(&x).unwrap());
        let zi = z0.weighted(sched.ghat(1));
        let h = oracle.denoise(&zi, 1).unwrap();
        assert!(h.max_abs_diff(&z0) < 1e-12);
    }
}
