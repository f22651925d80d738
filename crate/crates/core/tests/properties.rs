//! Randomized invariants over operators, schedules, containers and metrics.

use akd_core::config::RunConfig;
use akd_core::container::{Payload, Role, TensorContainer};
use akd_core::forward::attenuate;
use akd_core::metrics::{nmse, sos_combine};
use akd_core::noise::complex_normal;
use akd_core::phantom::make_phantom;
use akd_core::sampler::predictor_update;
use akd_core::slr::{estimate_annihilation, hankel_adjoint, hankelize, HankelConfig, SlrSolver};
use akd_core::{fft2, ifft2, CoilSensitivities, DiffusionSchedule, Dims, Image, KSpace, MaskKind, NoiseMode, ScheduleParams};
use akd_core::mask::make_mask;
use ndarray::{Array2, Array3};
use num_complex::{Complex32, Complex64};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_kspace(d: Dims, seed: u64) -> KSpace {
    KSpace::new(complex_normal(d, &mut ChaCha8Rng::seed_from_u64(seed))).unwrap()
}

fn inner_re(a: &Array3<Complex64>, b: &Array3<Complex64>) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fft_round_trip_and_parseval(nc in 1usize..4, ky in 2usize..24, kx in 2usize..24, seed in any::<u64>()) {
        let z = random_kspace(Dims::new(nc, ky, kx), seed);
        let img = ifft2(&z);
        prop_assert!((img.norm() - z.norm()).abs() <= 1e-10 * z.norm());
        let back = fft2(&img);
        prop_assert!(back.max_abs_diff(&z) <= 1e-10 * z.norm());
    }

    #[test]
    fn hankel_adjoint_identity(nc in 1usize..3, n in 6usize..14, wy in 2usize..5, wx in 2usize..5, seed in any::<u64>()) {
        let d = Dims::new(nc, n, n);
        let cfg = HankelConfig::new(wy, wx);
        let z = random_kspace(d, seed);
        let (rows, cols) = cfg.shape(d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let h = complex_normal(Dims::new(1, rows, cols), &mut rng).into_shape_with_order((rows, cols)).unwrap();
        let hz = hankelize(z.data().view(), cfg).unwrap();
        let lhs: Complex64 = hz.iter().zip(h.iter()).map(|(a, b)| a.conj() * b).sum();
        let rhs = inner_re(z.data(), &hankel_adjoint(&h, d, cfg).unwrap());
        prop_assert!((lhs - rhs).norm() <= 1e-9 * (1.0 + lhs.norm()));
    }

    #[test]
    fn coil_projection_is_idempotent(nc in 1usize..5, seed in any::<u64>()) {
        let (_, sens) = make_phantom(16, 16, nc, seed % 1000).unwrap();
        let z = random_kspace(Dims::new(nc, 16, 16), seed);
        let p = sens.apply_ss_star(&z).unwrap();
        let pp = sens.apply_ss_star(&p).unwrap();
        prop_assert!(pp.max_abs_diff(&p) <= 1e-10 * (1.0 + z.norm()));
        prop_assert!(p.norm() <= z.norm() * (1.0 + 1e-12));
    }

    #[test]
    fn schedule_is_monotone_with_exponential_masks(
        n_steps in 1usize..60, gamma in 0.5f64..3.0, tau_n in 1.0f64..500.0, a in 0.0f64..50.0, b in 0.0f64..50.0,
    ) {
        let p = ScheduleParams { n_steps, gamma, tau_n, ..Default::default() };
        let s = DiffusionSchedule::build(&p, 12, 10).unwrap();
        for i in 0..n_steps {
            prop_assert!(s.tau(i + 1) >= s.tau(i));
            prop_assert!(s.sigma(i + 1) > s.sigma(i));
            prop_assert!(s.ghat(i + 1).iter().zip(s.ghat(i).iter()).all(|(u, v)| u <= v && *u > 0.0));
        }
        prop_assert!(s.ghat(0).iter().all(|&v| v == 1.0));
        let prod = s.mask_for_tau(a) * s.mask_for_tau(b);
        let joint = s.mask_for_tau(a + b);
        prop_assert!(prod.iter().zip(joint.iter()).all(|(u, v)| (u - v).abs() <= 1e-12));
    }

    #[test]
    fn container_round_trips(nc in 1usize..4, ky in 1usize..9, kx in 1usize..9, kind in 0u8..3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = complex_normal(Dims::new(nc, ky, kx), &mut rng);
        let (role, payload) = match kind {
            0 => (Role::Kspace, Payload::C64(z.mapv(|v| Complex32::new(v.re as f32, v.im as f32)))),
            1 => (Role::Image, Payload::F32(z.mapv(|v| v.re as f32))),
            _ => (Role::Mask, Payload::U8(z.mapv(|v| (v.re > 0.0) as u8))),
        };
        let c = TensorContainer { role, payload };
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        prop_assert_eq!(TensorContainer::read_from(buf.as_slice()).unwrap(), c);
    }

    #[test]
    fn truncated_container_is_rejected(cut in 1usize..40, seed in any::<u64>()) {
        let z = random_kspace(Dims::new(1, 3, 3), seed);
        let mut buf = Vec::new();
        TensorContainer::from_kspace(&z).write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - cut.min(buf.len() - 1));
        prop_assert!(TensorContainer::read_from(buf.as_slice()).is_err());
    }

    #[test]
    fn nmse_is_scale_invariant(scale in 1e-3f64..1e3, seed in any::<u64>()) {
        let a = sos_combine(&ifft2(&random_kspace(Dims::new(2, 8, 8), seed)));
        let b = sos_combine(&ifft2(&random_kspace(Dims::new(2, 8, 8), seed ^ 7)));
        let base = nmse(&a, &b).unwrap();
        let scaled = nmse(&(&a * scale), &(&b * scale)).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-10 * base);
        prop_assert_eq!(nmse(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn uniform_mask_is_union_of_lattice_and_band(ky in 8usize..80, kx in 1usize..8, r in 1usize..9, acs in 0usize..8) {
        let acs = acs.min(ky);
        let m = make_mask(MaskKind::Uniform, ky, kx, r, acs, 0).unwrap();
        let start = ky / 2 - acs / 2;
        let lines = (0..ky).filter(|y| y % r == 0 || (start..start + acs).contains(y)).count();
        prop_assert_eq!(m.count(), lines * kx);
    }

    #[test]
    fn slr_output_never_raises_the_objective(lambda in 1e-3f64..5.0, seed in any::<u64>()) {
        let (x, sens) = make_phantom(16, 16, 2, seed % 50).unwrap();
        let truth = fft2(&sens.expand(&x).unwrap());
        let filter = estimate_annihilation(truth.data().view(), HankelConfig::new(3, 3), 0.05).unwrap();
        let mask = make_mask(MaskKind::Uniform, 16, 16, 2, 4, 0).unwrap();
        let y = mask.apply(&truth).unwrap();
        let z_prime = random_kspace(truth.dims(), seed);
        let solver = SlrSolver::new(&filter, truth.dims()).unwrap();
        let out = solver.solve(&z_prime, &y, &mask, lambda, 10, 1e-8).unwrap();
        let f = |z: &KSpace| solver.objective(z, &z_prime, &y, &mask, lambda).unwrap();
        prop_assert!(f(&out.z) <= f(&z_prime) * (1.0 + 1e-12));
    }

    #[test]
    fn run_config_json_round_trip(n in 1usize..200, lambda in 0.0f64..1.0, seed in any::<u64>(), tau in prop::option::of(1.0f64..100.0)) {
        let mut cfg = RunConfig::default();
        cfg.schedule.n_steps = n;
        cfg.schedule.tau_n = tau;
        cfg.sampler.lambda = lambda;
        cfg.sampler.seed = seed;
        let text = serde_json::to_string(&cfg).unwrap();
        prop_assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn noiseless_predictor_follows_the_attenuation_path(i in 0usize..20, seed in any::<u64>()) {
        let (x, sens) = make_phantom(16, 16, 2, seed % 100).unwrap();
        let z0 = fft2(&sens.expand(&x).unwrap());
        let p = ScheduleParams { n_steps: 20, tau_n: 60.0, ..Default::default() };
        let sched = DiffusionSchedule::build(&p, 16, 16).unwrap();
        let z_next = attenuate(&z0, &sched, i + 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = predictor_update(&z_next, &z0, &z0, &sens, &sched, i, NoiseMode::Zero, &mut rng).unwrap();
        let want = attenuate(&z0, &sched, i).unwrap();
        prop_assert!(z.max_abs_diff(&want) <= 1e-9 * z0.norm());
    }
}

#[test]
fn sos_of_uniform_coils_is_the_magnitude() {
    let sens = CoilSensitivities::uniform(&[Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.8)], 4, 4).unwrap();
    let x = Image::new(Array3::from_shape_fn((1, 4, 4), |(_, y, x)| Complex64::new(y as f64, -(x as f64)))).unwrap();
    let sos = sos_combine(&sens.expand(&x).unwrap());
    let mag = Array2::from_shape_fn((4, 4), |(y, x)| Complex64::new(y as f64, -(x as f64)).norm());
    assert!(sos.iter().zip(mag.iter()).all(|(a, b)| (a - b).abs() <= 1e-12));
}
