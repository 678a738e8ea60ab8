use std::path::{Path, PathBuf};
use std::time::Instant;

use pisd_core::datagen::{build_dataset, default_codec, sample_rng, Dataset, Task};
use pisd_core::denoiser::DenoiserCheckpoint;
use pisd_core::residuals::{residual_value, ResidualSpec};
use pisd_core::sampler::{karras_schedule, sample, GuidanceSpec, MeasurementOperator};
use pisd_core::spectral::{lemma1_check, Codec};
use pisd_core::training::{loss_csv, precompute_latents, train, LatentMatrix};
use pisd_core::FieldGrid;

use crate::config::{ExperimentConfig, SampleConfig};
use crate::error::{CliError, CliResult};
use crate::image::write_ppm;
use crate::metrics::{
    format_table, read_csv, relative_error, relative_error_iter, summarize, write_csv, MetricsRow,
    SummaryRow, TimeRow, TimingRow,
};
use crate::observe::pick_observations;
use crate::{derive_seed, STREAM_NOISE, STREAM_OBSERVATIONS};

fn log(msg: impl AsRef<str>) {
    eprintln!("{}", msg.as_ref());
}

pub fn generate_data(cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    let start = Instant::now();
    let ds = build_dataset(&cfg.data)?;
    ds.save(&cfg.paths.dataset)?;
    log(format!(
        "generated {} {} samples ({} time steps, grid {}) in {:.1}s → {}",
        ds.samples.len(),
        cfg.task().name(),
        ds.time_steps(),
        ds.resolution(),
        start.elapsed().as_secs_f64(),
        cfg.paths.dataset.display()
    ));
    Ok(cfg.paths.dataset.clone())
}

/// Loads the dataset and checks it was produced by this configuration.
pub fn load_dataset(cfg: &ExperimentConfig) -> CliResult<Dataset> {
    let path = &cfg.paths.dataset;
    if !path.exists() {
        return Err(CliError::io(format!(
            "dataset {} not found; run generate-data first",
            path.display()
        )));
    }
    let ds = Dataset::load(path)?;
    let expected_steps = if cfg.task() == Task::NavierStokes {
        cfg.data.ns_time_steps
    } else {
        1
    };
    if ds.task != cfg.task()
        || ds.seed != cfg.seed
        || ds.samples.len() != cfg.data.count
        || ds.resolution() != cfg.data.resolution
        || ds.time_steps() != expected_steps
    {
        return Err(CliError::Mismatch(format!(
            "{} holds {} {} samples (seed {}, grid {}) but the config asks for {} {} samples (seed {}, grid {})",
            path.display(),
            ds.samples.len(),
            ds.task.name(),
            ds.seed,
            ds.resolution(),
            cfg.data.count,
            cfg.task().name(),
            cfg.seed,
            cfg.data.resolution
        )));
    }
    Ok(ds)
}

pub fn load_codec(cfg: &ExperimentConfig, ds: &Dataset) -> CliResult<Codec> {
    let path = &cfg.paths.codec;
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::io(format!("{}: {e}; run fit-codec first", path.display())))?;
    let codec = Codec::from_bytes(&bytes)?;
    if codec.grid_size() != ds.resolution()
        || codec.time_steps() != ds.time_steps()
        || codec.channels() != ds.channels()
    {
        return Err(CliError::Mismatch(format!(
            "codec {} does not match the dataset geometry",
            path.display()
        )));
    }
    Ok(codec)
}

pub fn load_checkpoint(cfg: &ExperimentConfig, codec: &Codec) -> CliResult<DenoiserCheckpoint> {
    let path = &cfg.paths.checkpoint;
    if !path.exists() {
        return Err(CliError::io(format!(
            "checkpoint {} not found; run train first",
            path.display()
        )));
    }
    let ck = DenoiserCheckpoint::load(path)?;
    if ck.codec_fingerprint != codec.fingerprint() {
        return Err(pisd_core::Error::Fingerprint {
            expected: codec.fingerprint(),
            found: ck.codec_fingerprint,
        }
        .into());
    }
    Ok(ck)
}

fn train_split<'a>(cfg: &ExperimentConfig, ds: &'a Dataset) -> &'a [FieldGrid] {
    ds.split(cfg.train_count).0
}

/// Fits mode scales on the training split; also writes the Sobolev
/// variance-vs-moment check per `(time, channel)` slice.
pub fn fit_codec(cfg: &ExperimentConfig) -> CliResult<Codec> {
    let ds = load_dataset(cfg)?;
    let train = train_split(cfg, &ds);
    let codec =
        default_codec(cfg.task(), ds.resolution(), ds.time_steps())?.fit(train, cfg.eps_floor)?;
    pisd_core::io::write_atomic(&cfg.paths.codec, &codec.to_bytes())?;

    let mut report = String::from("time,channel,order,lhs,rhs,holds\n");
    let mut all_hold = true;
    for t in 0..codec.time_steps() {
        for c in 0..codec.channels() {
            let coeffs: Vec<_> = train
                .iter()
                .map(|s| codec.mode_coefficients(s.slice(t, c), c))
                .collect();
            for order in 0..=2 {
                let r = lemma1_check(
                    codec.scales(t, c),
                    &codec.truncation(c).modes,
                    &coeffs,
                    order,
                );
                all_hold &= r.holds;
                report.push_str(&format!(
                    "{t},{c},{order},{:e},{:e},{}\n",
                    r.lhs, r.rhs, r.holds
                ));
            }
        }
    }
    let report_path = cfg.paths.codec.with_extension("sobolev.csv");
    pisd_core::io::write_atomic(&report_path, report.as_bytes())?;
    log(format!(
        "fitted codec on {} samples: latent dim {}, fingerprint {:016x}; variance ≤ second moment for orders 0..2: {}",
        train.len(),
        codec.latent_dim(),
        codec.fingerprint(),
        if all_hold { "yes" } else { "NO" }
    ));
    Ok(codec)
}

pub fn train_model(cfg: &ExperimentConfig, out: &Path) -> CliResult<DenoiserCheckpoint> {
    let ds = load_dataset(cfg)?;
    let codec = load_codec(cfg, &ds)?;
    let train_samples = train_split(cfg, &ds);
    let cached = match LatentMatrix::load(&cfg.paths.latents, codec.fingerprint()) {
        Ok(l) if l.rows == train_samples.len() => Some(l),
        _ => None,
    };
    let latents = match cached {
        Some(l) => l,
        None => {
            let l = precompute_latents(train_samples, &codec)?;
            l.save(&cfg.paths.latents)?;
            l
        }
    };
    let net_config = cfg.denoiser_config(codec.latent_dim());
    log(format!(
        "training {} parameters on {} latents of dim {} for {} steps",
        net_config.parameter_count(),
        latents.rows,
        latents.dim,
        cfg.train.total_steps
    ));
    let start = Instant::now();
    let ck_dir = out.join("checkpoints");
    let outcome = train(&latents, net_config, &cfg.train, |ck| {
        let path = ck_dir.join(format!("step_{:07}.bin", ck.train_steps));
        ck.save(&path)?;
        log(format!(
            "  step {} ({:.0}s) → {}",
            ck.train_steps,
            start.elapsed().as_secs_f64(),
            path.display()
        ));
        Ok(())
    })?;
    outcome.checkpoint.save(&cfg.paths.checkpoint)?;
    pisd_core::io::write_atomic(&out.join("loss.csv"), loss_csv(&outcome.losses).as_bytes())?;
    let tail = outcome.losses.len().clamp(1, 500);
    let tail_loss = outcome
        .losses
        .iter()
        .rev()
        .take(tail)
        .map(|l| l.1)
        .sum::<f64>()
        / tail as f64;
    log(format!(
        "trained in {:.1}s, mean loss over last {tail} steps {tail_loss:.4e}",
        start.elapsed().as_secs_f64()
    ));
    Ok(outcome.checkpoint)
}

pub fn run_dir(out: &Path, label: &str) -> PathBuf {
    out.join("runs").join(label)
}

fn run_file(out: &Path, label: &str, run: usize) -> PathBuf {
    run_dir(out, label).join(format!("run_{run:03}.pisd"))
}

/// Held-out truth of run `run` and the observations drawn from it.
pub fn run_setup<'a>(
    cfg: &ExperimentConfig,
    sc: &SampleConfig,
    ds: &'a Dataset,
    run: usize,
) -> CliResult<(&'a FieldGrid, MeasurementOperator)> {
    let held_out = ds.split(cfg.train_count).1;
    if held_out.is_empty() {
        return Err(CliError::config(
            "no held-out samples: train_count must be below count",
        ));
    }
    let truth = &held_out[run % held_out.len()];
    let mut rng = sample_rng(derive_seed(cfg.seed, STREAM_OBSERVATIONS), run as u64);
    let mut picks = Vec::new();
    for &t in &sc.observation_times {
        for c in sc.problem.channels(cfg.task())? {
            let (points, _) = pick_observations(truth.slice(t, c), sc.observation_count, &mut rng)?;
            picks.push((t, c, points));
        }
    }
    let m = MeasurementOperator::from_truth(truth, picks)?;
    Ok((truth, m))
}

pub fn residual_spec(cfg: &ExperimentConfig) -> CliResult<ResidualSpec> {
    Ok(cfg.data.residual_spec()?)
}

pub fn guidance_spec(
    cfg: &ExperimentConfig,
    sc: &SampleConfig,
    channels: usize,
) -> CliResult<GuidanceSpec> {
    let observed = sc.problem.channels(cfg.task())?;
    let lambda_obs = (0..channels)
        .map(|c| {
            if sc.guidance && observed.contains(&c) {
                sc.lambda_obs
            } else {
                0.0
            }
        })
        .collect();
    Ok(GuidanceSpec {
        lambda_obs,
        lambda_pde: if sc.guidance { sc.lambda_pde } else { 0.0 },
        adam: sc.adam.clone(),
        residual: residual_spec(cfg)?,
    })
}

/// Scores one generated field against its truth.
pub fn score(
    cfg: &ExperimentConfig,
    sc: &SampleConfig,
    run: usize,
    generated: &FieldGrid,
    truth: &FieldGrid,
    measurement: &MeasurementOperator,
    spec: &ResidualSpec,
) -> CliResult<(MetricsRow, Vec<TimeRow>)> {
    let channel_err = |c: usize| {
        let g = generated.data.index_axis(ndarray::Axis(1), c);
        let t = truth.data.index_axis(ndarray::Axis(1), c);
        relative_error_iter(g.iter().zip(t.iter()))
    };
    let residual = residual_value(generated, spec)?;
    let row = MetricsRow {
        run_id: run,
        label: sc.label.clone(),
        task: sc.problem.name().to_string(),
        pde: cfg.task().name().to_string(),
        obs_count: sc.observation_count,
        rel_err_u: channel_err(0),
        rel_err_a: if generated.channels() > 1 {
            channel_err(1)
        } else {
            f64::NAN
        },
        pde_residual: residual.value,
        obs_rel_err: if measurement.is_empty() {
            f64::NAN
        } else {
            measurement.relative_error(generated)
        },
    };
    let mut times = Vec::new();
    if generated.time_steps() > 1 {
        let per = residual.per_time.unwrap_or_default();
        for t in 0..generated.time_steps() {
            let interior = t >= 1 && t + 1 < generated.time_steps();
            times.push(TimeRow {
                run_id: run,
                time_index: t,
                rel_err: relative_error(generated.slice(t, 0), truth.slice(t, 0)),
                pde_residual: if interior {
                    per.get(t - 1).copied().unwrap_or(f64::NAN)
                } else {
                    f64::NAN
                },
            });
        }
    }
    Ok((row, times))
}

fn selected<'a>(cfg: &'a ExperimentConfig, only: Option<&str>) -> CliResult<Vec<&'a SampleConfig>> {
    match only {
        Some(label) => Ok(vec![cfg.sample_config(label)?]),
        None if cfg.samples.is_empty() => Err(CliError::config(
            "no [sample.<label>] sections in the config",
        )),
        None => Ok(cfg.samples.iter().collect()),
    }
}

/// Runs every configured sampling experiment (or just `only`) and writes
/// fields, metrics, and timings under `runs/<label>/`.
pub fn sample_runs(
    cfg: &ExperimentConfig,
    out: &Path,
    only: Option<&str>,
) -> CliResult<Vec<MetricsRow>> {
    let ds = load_dataset(cfg)?;
    let codec = load_codec(cfg, &ds)?;
    let ck = load_checkpoint(cfg, &codec)?;
    let spec = residual_spec(cfg)?;
    let mut all = Vec::new();
    for sc in selected(cfg, only)? {
        let guidance = guidance_spec(cfg, sc, codec.channels())?;
        let schedule = karras_schedule(
            sc.steps,
            sc.sigma_max.unwrap_or(ck.sigma_max),
            sc.sigma_min,
            sc.rho,
        )?;
        let (mut rows, mut time_rows, mut timings) = (Vec::new(), Vec::new(), Vec::new());
        for run in 0..sc.num_runs {
            let (truth, measurement) = run_setup(cfg, sc, &ds, run)?;
            let mut rng = sample_rng(derive_seed(cfg.seed, STREAM_NOISE), run as u64);
            let start = Instant::now();
            let outcome = sample(
                &ck,
                &codec,
                &schedule,
                &guidance,
                &measurement,
                sc.optimizer,
                &mut rng,
            )?;
            let wall = start.elapsed().as_secs_f64();
            let generated = Dataset {
                task: cfg.task(),
                seed: cfg.seed,
                samples: vec![outcome.field],
            };
            generated.save(&run_file(out, &sc.label, run))?;
            let (row, times) = score(
                cfg,
                sc,
                run,
                &generated.samples[0],
                truth,
                &measurement,
                &spec,
            )?;
            log(format!(
                "[{}] run {run}: rel_err_u {:.4} rel_err_a {:.4} residual {:.3e} obs_rel_err {:.3e} ({wall:.2}s)",
                sc.label, row.rel_err_u, row.rel_err_a, row.pde_residual, row.obs_rel_err
            ));
            rows.push(row);
            time_rows.extend(times);
            timings.push(TimingRow {
                run_id: run,
                wall_time_s: wall,
            });
        }
        let dir = run_dir(out, &sc.label);
        write_csv(&dir.join("metrics.csv"), &rows)?;
        if !time_rows.is_empty() {
            write_csv(&dir.join("per_time.csv"), &time_rows)?;
        }
        write_csv(&dir.join("timings.csv"), &timings)?;
        all.extend(rows);
    }
    Ok(all)
}

/// Recomputes metrics from the stored run fields.
pub fn evaluate(
    cfg: &ExperimentConfig,
    out: &Path,
    only: Option<&str>,
) -> CliResult<Vec<MetricsRow>> {
    let ds = load_dataset(cfg)?;
    let spec = residual_spec(cfg)?;
    let mut all = Vec::new();
    for sc in selected(cfg, only)? {
        let (mut rows, mut time_rows) = (Vec::new(), Vec::new());
        for run in 0..sc.num_runs {
            let path = run_file(out, &sc.label, run);
            if !path.exists() {
                return Err(CliError::io(format!(
                    "{} not found; run sample first",
                    path.display()
                )));
            }
            let stored = Dataset::load(&path)?;
            let generated = stored
                .samples
                .first()
                .ok_or_else(|| CliError::io(format!("{} holds no field", path.display())))?;
            let (truth, measurement) = run_setup(cfg, sc, &ds, run)?;
            if generated.data.dim() != truth.data.dim() {
                return Err(CliError::Mismatch(format!(
                    "{} does not match the dataset geometry",
                    path.display()
                )));
            }
            let (row, times) = score(cfg, sc, run, generated, truth, &measurement, &spec)?;
            rows.push(row);
            time_rows.extend(times);
        }
        let dir = run_dir(out, &sc.label);
        write_csv(&dir.join("metrics.csv"), &rows)?;
        if !time_rows.is_empty() {
            write_csv(&dir.join("per_time.csv"), &time_rows)?;
        }
        log(format!("[{}] evaluated {} runs", sc.label, rows.len()));
        all.extend(rows);
    }
    Ok(all)
}

/// Aggregates metrics per configuration and renders run 0 of each as images.
pub fn report(
    cfg: &ExperimentConfig,
    out: &Path,
    only: Option<&str>,
) -> CliResult<Vec<SummaryRow>> {
    let ds = load_dataset(cfg)?;
    let mut summaries = Vec::new();
    for sc in selected(cfg, only)? {
        let dir = run_dir(out, &sc.label);
        let rows: Vec<MetricsRow> = read_csv(&dir.join("metrics.csv"))?;
        let timings: Vec<TimingRow> = read_csv(&dir.join("timings.csv")).unwrap_or_default();
        summaries.push(summarize(&rows, &timings)?);

        let generated = Dataset::load(&run_file(out, &sc.label, 0))?;
        let generated = &generated.samples[0];
        let (truth, _) = run_setup(cfg, sc, &ds, 0)?;
        let img_dir = out.join("images").join(&sc.label);
        for t in 0..generated.time_steps() {
            for c in 0..generated.channels() {
                let g = generated.slice(t, c);
                let tr = truth.slice(t, c);
                let err = (&g - &tr).mapv(f64::abs);
                write_ppm(&img_dir.join(format!("c{c}_t{t}_generated.ppm")), g)?;
                write_ppm(&img_dir.join(format!("c{c}_t{t}_truth.ppm")), tr)?;
                write_ppm(
                    &img_dir.join(format!("c{c}_t{t}_abs_error.ppm")),
                    err.view(),
                )?;
            }
        }
    }
    write_csv(&out.join("report.csv"), &summaries)?;
    let table = format_table(&summaries);
    pisd_core::io::write_atomic(&out.join("report.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(summaries)
}
