//! Subcommand implementations.

use std::path::Path;

use akd_core::baselines::{grappa_operator_reconstruct, pm_flow, zero_filled};
use akd_core::config::RunConfig;
use akd_core::container::{Role, TensorContainer};
use akd_core::forward::{attenuate, sample_perturbation};
use akd_core::mask::make_mask;
use akd_core::metrics::{nmse, psnr, sos_combine, ssim};
use akd_core::phantom::make_phantom;
use akd_core::sampler::{reconstruct, ReconConfig};
use akd_core::schedule::acs_matched_tau;
use akd_core::score::{
    train_linear_denoiser, DeltaOracle, GaussianPriorOracle, GradientEstimate, LinearDenoiser, ScoreModel,
    TrainOptions,
};
use akd_core::slr::estimate_annihilation;
use akd_core::{fft2, ifft2, CoilSensitivities, Error, Image, KSpace, Result, SamplingMask};
use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::output::{save, warn, write_json, write_png, MetricsReport};
use crate::{
    BaselineArgs, BaselineMethod, Command, ForwardArgs, MaskArgs, MetricsArgs, ModelArg, PhantomArgs,
    ReconstructArgs, TrainArgs,
};

pub const THREADS_ENV: &str = "AKD_THREADS";

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Phantom(a) => phantom(a),
        Command::Mask(a) => mask(a),
        Command::Forward(a) => forward(a),
        Command::Train(a) => train(a),
        Command::Reconstruct(a) => reconstruct_cmd(a),
        Command::Baseline(a) => baseline(a),
        Command::Metrics(a) => metrics(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn read(path: &Path) -> Result<TensorContainer> {
    TensorContainer::read_file(path).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Io(e) => Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))),
        other => other,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// Magnitude preview of a container: root-sum-of-squares over coils, after an
/// inverse transform for k-space.
fn magnitude(c: &TensorContainer) -> Result<Array2<f64>> {
    let img = c.to_image()?;
    Ok(match c.role {
        Role::Kspace => sos_combine(&ifft2(&KSpace::new(img.into_data())?)),
        _ => sos_combine(&img),
    })
}

fn kspace_preview(z: &KSpace) -> Array2<f64> {
    sos_combine(&ifft2(z))
}

fn phantom(a: PhantomArgs) -> Result<()> {
    create_dir(&a.out_dir)?;
    let (x, sens) = make_phantom(a.ky, a.kx, a.nc, a.seed)?;
    let z = fft2(&sens.expand(&x)?);
    let meta = |what: &str| json!({ "seed": a.seed, "ky": a.ky, "kx": a.kx, "nc": a.nc, "content": what });
    save(&a.out_dir.join("truth.mcks"), &TensorContainer::from_image(&x), &meta("ground-truth image"))?;
    save(&a.out_dir.join("sens.mcks"), &TensorContainer::from_sens(&sens), &meta("coil sensitivities"))?;
    save(&a.out_dir.join("kspace.mcks"), &TensorContainer::from_kspace(&z), &meta("fully sampled k-space"))?;
    write_png(&a.out_dir.join("truth.png"), &sos_combine(&x))
}

fn mask(a: MaskArgs) -> Result<()> {
    let kind = a.kind.into();
    let lines = match kind {
        akd_core::MaskKind::AcsOnly => a.acs_size,
        _ => a.acs_lines,
    };
    let m = make_mask(kind, a.ky, a.kx, a.r, lines, a.seed)?;
    let meta = json!({
        "seed": a.seed, "kind": kind, "R": a.r, "acs_lines": lines, "ky": a.ky, "kx": a.kx,
        "sampled": m.count(),
    });
    save(&a.out, &TensorContainer::from_mask(&m), &meta)?;
    write_png(&a.out.with_extension("png"), &m.weights())
}

fn forward(a: ForwardArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let z0 = read(&a.kspace)?.to_kspace()?;
    let sens = read(&a.sens)?.to_sens()?;
    let (ky, kx) = z0.dims().grid();
    cfg.validate(ky, kx)?;
    if a.every < 1 {
        return Err(Error::InvalidArgument("--every must be >= 1".into()));
    }
    let sched = cfg.schedule(ky, kx)?;
    let seed = a.seed.unwrap_or(cfg.sampler.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    create_dir(&a.out_dir)?;
    let n = sched.n_steps();
    let mut steps: Vec<usize> = (0..=n).step_by(a.every).collect();
    if steps.last() != Some(&n) {
        steps.push(n);
    }
    for i in steps {
        let z = if a.perturb { sample_perturbation(&z0, &sens, &sched, i, &mut rng)? } else { attenuate(&z0, &sched, i)? };
        let stem = a.out_dir.join(format!("step_{i:03}"));
        let meta = json!({
            "seed": seed, "step": i, "tau": sched.tau(i), "sigma": sched.sigma(i), "perturbed": a.perturb,
        });
        save(&stem.with_extension("mcks"), &TensorContainer::from_kspace(&z), &meta)?;
        write_png(&stem.with_extension("png"), &kspace_preview(&z))?;
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let sens = read(&a.sens)?.to_sens()?;
    let set = a.kspace.iter().map(|p| read(p)?.to_kspace()).collect::<Result<Vec<_>>>()?;
    let (ky, kx) = sens.dims().grid();
    cfg.validate(ky, kx)?;
    let sched = cfg.schedule(ky, kx)?;
    let seed = a.seed.unwrap_or(cfg.sampler.seed);
    let opts = TrainOptions {
        lr: a.lr,
        iters: a.iters,
        estimate: if a.single_draw { GradientEstimate::SingleDraw } else { GradientEstimate::Expected },
        init: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let state = train_linear_denoiser(&set, &sens, &sched, &opts, &mut rng)?;
    let meta = json!({
        "seed": seed, "lr": a.lr, "iterations": state.iteration, "estimate": opts.estimate,
        "samples": set.len(), "N": sched.n_steps(), "loss_history": state.loss_history,
    });
    save(&a.out, &TensorContainer::from_gains(&state.model), &meta)
}

/// Number of worker threads: the requested job count capped by `AKD_THREADS`.
fn thread_count(jobs: usize) -> Result<usize> {
    let mut n = jobs.max(1);
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let cap: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        if cap < 1 {
            return Err(Error::InvalidArgument(format!("{THREADS_ENV} must be >= 1")));
        }
        n = n.min(cap);
    }
    Ok(n)
}

fn model_for(
    a: &ReconstructArgs,
    k: usize,
    sens: &CoilSensitivities,
    sched: &akd_core::DiffusionSchedule,
    gains: Option<&LinearDenoiser>,
) -> Result<Box<dyn ScoreModel>> {
    let truth = || -> Result<KSpace> {
        let p = match a.truth.len() {
            1 => &a.truth[0],
            n if n == a.kspace.len() => &a.truth[k],
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "this model needs --truth once or once per slice ({} slices)",
                    a.kspace.len()
                )))
            }
        };
        read(p)?.to_kspace()
    };
    Ok(match a.model {
        ModelArg::Delta => Box::new(DeltaOracle::new(truth()?)),
        ModelArg::Gaussian => {
            let u = sens.adjoint_kspace(&truth()?)?;
            let variance = u.coil(0).mapv(|v| v.norm_sqr());
            let mean = Array2::<Complex64>::zeros(variance.dim());
            Box::new(GaussianPriorOracle::new(mean, variance, sens.clone(), sched.clone())?)
        }
        ModelArg::Linear => {
            let g = gains.ok_or_else(|| Error::InvalidArgument("--model linear needs --gains".into()))?;
            if g.n_steps() != sched.n_steps() {
                return Err(Error::Config(format!(
                    "gains cover {} steps but the schedule has {}",
                    g.n_steps(),
                    sched.n_steps()
                )));
            }
            Box::new(g.clone())
        }
    })
}

fn reconstruct_cmd(a: ReconstructArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.sampler.seed = seed;
    }
    if let Some(lambda) = a.lambda {
        cfg.sampler.lambda = lambda;
    }
    let mask: SamplingMask = read(&a.mask)?.to_mask()?;
    let sens = read(&a.sens)?.to_sens()?;
    let (ky, kx) = mask.dims();
    if cfg.schedule.tau_n.is_none() {
        cfg.schedule.tau_n = Some(acs_matched_tau(mask.acs().height().max(1), ky));
    }
    cfg.validate(ky, kx)?;
    let sched = cfg.schedule(ky, kx)?;
    let gains = a.gains.as_deref().map(|p| read(p)?.to_gains()).transpose()?;
    let base = cfg.recon_config();
    let threads = thread_count(a.jobs)?;
    create_dir(&a.out_dir)?;

    let slice = |k: usize| -> Result<()> {
        let z = read(&a.kspace[k])?.to_kspace()?;
        let y = mask.apply(&z)?;
        let filter = estimate_annihilation(mask.acs().extract(&y).view(), cfg.window(), cfg.slr.rank_threshold)?;
        if filter.empty_nullspace_warning() {
            warn("empty-nullspace", &format!("slice {k}: no annihilation filters below the rank threshold"));
        }
        let model = model_for(&a, k, &sens, &sched, gains.as_ref())?;
        let seed = base.seed + k as u64;
        let rc = ReconConfig { seed, record_trajectory: a.trajectory, ..base.clone() };
        let out = reconstruct(&y, &mask, &sens, &filter, model.as_ref(), &sched, &rc)?;
        let stem = a.out_dir.join(format!("recon_{k:03}"));
        let meta = json!({
            "seed": seed, "slice": k, "input": a.kspace[k].display().to_string(), "model": format!("{:?}", a.model).to_lowercase(),
            "lambda": rc.lambda, "r": rc.r, "N": rc.n_steps, "M": rc.corrector_steps,
            "filters": filter.len(), "skipped_correctors": out.skipped_correctors,
        });
        save(&stem.with_extension("mcks"), &TensorContainer::from_kspace(&out.z), &meta)?;
        write_png(&stem.with_extension("png"), &kspace_preview(&out.z))?;
        for (i, zi) in &out.trajectory {
            write_png(&a.out_dir.join(format!("recon_{k:03}_step_{i:03}.png")), &kspace_preview(zi))?;
        }
        Ok(())
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| (0..a.kspace.len()).into_par_iter().map(slice).collect::<Result<Vec<()>>>())?;
    Ok(())
}

fn baseline(a: BaselineArgs) -> Result<()> {
    let z = read(&a.kspace)?.to_kspace()?;
    let mask = read(&a.mask)?.to_mask()?;
    let sens = read(&a.sens)?.to_sens()?;
    let y = mask.apply(&z)?;
    let (container, preview) = match a.method {
        BaselineMethod::ZeroFilled => image_output(zero_filled(&y, &mask, &sens)?),
        BaselineMethod::Pm => image_output(pm_flow(&y, &mask, &sens, a.lambda, a.step, a.iters, a.eps)?),
        BaselineMethod::GrappaOp => {
            let k = grappa_operator_reconstruct(&y, &mask)?;
            let preview = kspace_preview(&k);
            (TensorContainer::from_kspace(&k), preview)
        }
    };
    let meta = json!({
        "method": format!("{:?}", a.method).to_lowercase(), "lambda": a.lambda, "step": a.step,
        "iters": a.iters, "eps": a.eps, "sampled": mask.count(),
    });
    save(&a.out, &container, &meta)?;
    write_png(&a.out.with_extension("png"), &preview)
}

fn image_output(x: Image) -> (TensorContainer, Array2<f64>) {
    let preview = sos_combine(&x);
    (TensorContainer::from_image(&x), preview)
}

fn metrics(a: MetricsArgs) -> Result<()> {
    let r = magnitude(&read(&a.reference)?)?;
    let t = magnitude(&read(&a.test)?)?;
    if r.dim() != t.dim() {
        return Err(Error::DimensionMismatch(format!("reference {:?} vs test {:?}", r.dim(), t.dim())));
    }
    let report = MetricsReport { nmse: nmse(&r, &t)?, psnr_db: psnr(&r, &t)?.into(), ssim: ssim(&r, &t)? };
    let line = serde_json::to_string(&report)?;
    println!("{line}");
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(())
}
