use std::path::{Path, PathBuf};

use pisd_core::datagen::{DataConfig, Task, DEFAULT_NS_TIME_STEPS, DEFAULT_VISCOSITY};
use pisd_core::denoiser::DenoiserConfig;
use pisd_core::sampler::{AdamGuidance, GuidanceOptimizer};
use pisd_core::spectral::DEFAULT_EPS_FLOOR;
use pisd_core::training::{SigmaSampling, TrainConfig};

use crate::error::{CliError, CliResult};
use crate::ini::Ini;

/// Which quantities a sampling run observes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Problem {
    /// Observe the coefficient `a`, infer `u`.
    Forward,
    /// Observe the solution `u`, infer `a`.
    Inverse,
    /// Observe both channels.
    Joint,
    /// Observe vorticity at selected time slices.
    NsTemporal,
    Unconditional,
}

impl Problem {
    pub fn parse(s: &str) -> CliResult<Self> {
        Ok(match s {
            "forward" => Problem::Forward,
            "inverse" => Problem::Inverse,
            "joint" => Problem::Joint,
            "ns-temporal" => Problem::NsTemporal,
            "unconditional" => Problem::Unconditional,
            other => return Err(CliError::config(format!("unknown problem {other}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Problem::Forward => "forward",
            Problem::Inverse => "inverse",
            Problem::Joint => "joint",
            Problem::NsTemporal => "ns-temporal",
            Problem::Unconditional => "unconditional",
        }
    }

    /// Observed channel indices for a task.
    pub fn channels(self, task: Task) -> CliResult<Vec<usize>> {
        let elliptic = task != Task::NavierStokes;
        match (self, elliptic) {
            (Problem::Forward, true) => Ok(vec![1]),
            (Problem::Inverse, true) => Ok(vec![0]),
            (Problem::Joint, true) => Ok(vec![0, 1]),
            (Problem::NsTemporal, false) => Ok(vec![0]),
            (Problem::Unconditional, _) => Ok(vec![]),
            _ => Err(CliError::config(format!(
                "problem {} does not apply to task {}",
                self.name(),
                task.name()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleConfig {
    pub label: String,
    pub problem: Problem,
    /// Points per observed (time, channel) slice.
    pub observation_count: usize,
    pub observation_times: Vec<usize>,
    pub num_runs: usize,
    pub steps: usize,
    pub rho: f64,
    pub sigma_min: f64,
    /// Defaults to the checkpoint's training maximum.
    pub sigma_max: Option<f64>,
    pub guidance: bool,
    pub lambda_obs: f64,
    pub lambda_pde: f64,
    pub optimizer: GuidanceOptimizer,
    pub adam: AdamGuidance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Paths {
    pub dataset: PathBuf,
    pub codec: PathBuf,
    pub latents: PathBuf,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataConfig,
    /// Leading samples used for codec fitting and training; the rest are held out.
    pub train_count: usize,
    pub eps_floor: f64,
    pub hidden_width: usize,
    pub depth: usize,
    pub sigma_embed_dim: usize,
    pub train: TrainConfig,
    pub samples: Vec<SampleConfig>,
    pub paths: Paths,
}

impl ExperimentConfig {
    pub fn load(path: &Path, seed_override: Option<u64>, out: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, seed_override, out)
    }

    /// Artifact paths in the config resolve against `out`.
    pub fn parse(text: &str, seed_override: Option<u64>, out: &Path) -> CliResult<Self> {
        let ini = Ini::parse(text)?;
        let seed = match seed_override {
            Some(s) => {
                ini.raw("", "seed");
                s
            }
            None => ini.get_or("", "seed", 0u64)?,
        };

        let task = Task::parse(
            &ini.get::<String>("data", "task")?
                .ok_or_else(|| CliError::config("[data] task is required"))?,
        )?;
        let count: usize = ini.get_or("data", "count", 0)?;
        let resolution: usize = ini.get_or("data", "resolution", 32)?;
        let mut data = DataConfig::new(task, count, seed, resolution);
        data.grf_tau = ini.get_or("data", "grf_tau", data.grf_tau)?;
        data.grf_alpha = ini.get_or("data", "grf_alpha", data.grf_alpha)?;
        data.grf_energy = ini.get_or("data", "grf_energy", data.grf_energy)?;
        data.viscosity = ini.get_or("data", "viscosity", DEFAULT_VISCOSITY)?;
        data.ns_time_steps = ini.get_or("data", "time_steps", DEFAULT_NS_TIME_STEPS)?;
        data.ns_dt = ini.get_or("data", "ns_dt", data.ns_dt)?;
        let train_count: usize = ini.get_or("data", "train_count", count)?;
        if count < 2 || train_count < 2 || train_count > count {
            return Err(CliError::config(format!(
                "need count ≥ 2 and 2 ≤ train_count ≤ count (got count {count}, train_count {train_count})"
            )));
        }

        let eps_floor = ini.get_or("codec", "eps_floor", DEFAULT_EPS_FLOOR)?;
        let hidden_width = ini.get_or("model", "hidden_width", 128)?;
        let depth = ini.get_or("model", "depth", 2)?;
        let sigma_embed_dim = ini.get_or("model", "sigma_embed_dim", 16)?;

        let d = TrainConfig::default();
        let sigma_sampling = match ini.get::<String>("train", "sigma_sampling")?.as_deref() {
            None | Some("log-uniform") => SigmaSampling::LogUniform,
            Some("uniform") => SigmaSampling::Uniform,
            Some(other) => return Err(CliError::config(format!("unknown sigma_sampling {other}"))),
        };
        let train = TrainConfig {
            batch_size: ini.get_or("train", "batch_size", d.batch_size)?,
            total_steps: ini.get_or("train", "steps", d.total_steps)?,
            learning_rate: ini.get_or("train", "learning_rate", d.learning_rate)?,
            final_lr_fraction: ini.get_or("train", "final_lr_fraction", d.final_lr_fraction)?,
            adam_beta1: ini.get_or("train", "beta1", d.adam_beta1)?,
            adam_beta2: ini.get_or("train", "beta2", d.adam_beta2)?,
            adam_eps: d.adam_eps,
            sigma_min: ini.get_or("train", "sigma_min", d.sigma_min)?,
            sigma_max: ini.get_or("train", "sigma_max", d.sigma_max)?,
            sigma_sampling,
            seed: crate::derive_seed(seed, crate::STREAM_TRAIN),
            checkpoint_every: ini.get_or("train", "checkpoint_every", 0)?,
        };
        train.validate()?;

        let samples = ini
            .sections_with_prefix("sample.")
            .iter()
            .map(|name| parse_sample(&ini, name, task, resolution, data.ns_time_steps))
            .collect::<CliResult<Vec<_>>>()?;
        // `[sample]` only holds defaults, which runs may not all read.
        for key in ini.keys("sample") {
            if !SAMPLE_KEYS.contains(&key.as_str()) {
                return Err(CliError::config(format!("unknown key {key} in [sample]")));
            }
            ini.raw("sample", &key);
        }
        let labels: std::collections::BTreeSet<_> = samples.iter().map(|s| &s.label).collect();
        if labels.len() != samples.len() {
            return Err(CliError::config("repeated sample label"));
        }

        let path = |key: &str, default: &str| -> CliResult<PathBuf> {
            Ok(out.join(ini.get_or::<String>("paths", key, default.to_string())?))
        };
        let paths = Paths {
            dataset: path("dataset", "dataset.pisd")?,
            codec: path("codec", "codec.bin")?,
            latents: path("latents", "latents.bin")?,
            checkpoint: path("checkpoint", "checkpoint.bin")?,
        };
        ini.ensure_consumed()?;
        Ok(Self {
            seed,
            data,
            train_count,
            eps_floor,
            hidden_width,
            depth,
            sigma_embed_dim,
            train,
            samples,
            paths,
        })
    }

    pub fn task(&self) -> Task {
        self.data.task
    }

    pub fn sample_config(&self, label: &str) -> CliResult<&SampleConfig> {
        self.samples
            .iter()
            .find(|s| s.label == label)
            .ok_or_else(|| CliError::config(format!("no [sample.{label}] section")))
    }

    pub fn denoiser_config(&self, latent_dim: usize) -> DenoiserConfig {
        DenoiserConfig {
            latent_dim,
            hidden_width: self.hidden_width,
            depth: self.depth,
            sigma_embed_dim: self.sigma_embed_dim,
            sigma_data: 1.0,
        }
    }
}

const SAMPLE_KEYS: [&str; 18] = [
    "problem",
    "observation_count",
    "observation_times",
    "num_runs",
    "steps",
    "rho",
    "sigma_min",
    "sigma_max",
    "guidance",
    "lambda_obs",
    "lambda_pde",
    "optimizer",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "lr_low",
    "lr_high",
    "low_band_cutoff",
];

/// Looks a sampling key up in `[sample.<label>]`, then in `[sample]`.
fn sample_value<T: std::str::FromStr>(ini: &Ini, section: &str, key: &str) -> CliResult<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match ini.get(section, key)? {
        Some(v) => Ok(Some(v)),
        None => ini.get("sample", key),
    }
}

fn parse_sample(
    ini: &Ini,
    section: &str,
    task: Task,
    resolution: usize,
    time_steps: usize,
) -> CliResult<SampleConfig> {
    let label = section.trim_start_matches("sample.").to_string();
    if label.is_empty()
        || !label
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
    {
        return Err(CliError::config(format!(
            "sample label {label:?} must be alphanumeric, '-' or '_'"
        )));
    }
    let problem = Problem::parse(
        &sample_value::<String>(ini, section, "problem")?
            .ok_or_else(|| CliError::config(format!("[{section}] problem is required")))?,
    )?;
    let channels = problem.channels(task)?;
    let full = resolution * resolution;
    let observation_count =
        match sample_value::<String>(ini, section, "observation_count")?.as_deref() {
            None | Some("full") => full,
            Some(v) => v.parse().map_err(|e| {
                CliError::config(format!("[{section}] observation_count = {v}: {e}"))
            })?,
        };
    if observation_count > full {
        return Err(CliError::config(format!(
            "[{section}] observation_count {observation_count} exceeds {full} grid points"
        )));
    }
    let steps_in_data = if task == Task::NavierStokes {
        time_steps
    } else {
        1
    };
    let observation_times = match ini.get_list::<usize>(section, "observation_times")? {
        Some(t) => t,
        None => ini
            .get_list::<usize>("sample", "observation_times")?
            .unwrap_or_else(|| {
                if steps_in_data > 1 {
                    vec![0, steps_in_data - 1]
                } else {
                    vec![0]
                }
            }),
    };
    if observation_times.iter().any(|t| *t >= steps_in_data) {
        return Err(CliError::config(format!(
            "[{section}] observation time out of range 0..{steps_in_data}"
        )));
    }
    let adam_default = if observation_count == full && !channels.is_empty() {
        AdamGuidance::full()
    } else {
        AdamGuidance::sparse()
    };
    let adam = AdamGuidance {
        beta1: sample_value(ini, section, "adam_beta1")?.unwrap_or(adam_default.beta1),
        beta2: sample_value(ini, section, "adam_beta2")?.unwrap_or(adam_default.beta2),
        eps: sample_value(ini, section, "adam_eps")?.unwrap_or(adam_default.eps),
        lr_low: sample_value(ini, section, "lr_low")?.unwrap_or(adam_default.lr_low),
        lr_high: sample_value(ini, section, "lr_high")?.unwrap_or(adam_default.lr_high),
        low_band_cutoff: sample_value(ini, section, "low_band_cutoff")?,
        weights: None,
    };
    let optimizer = match sample_value::<String>(ini, section, "optimizer")?.as_deref() {
        None | Some("adam") => GuidanceOptimizer::FrequencyAdam,
        Some("sgd") => GuidanceOptimizer::GradientDescent,
        Some(other) => {
            return Err(CliError::config(format!(
                "[{section}] unknown optimizer {other}"
            )))
        }
    };
    let num_runs: usize = sample_value(ini, section, "num_runs")?.unwrap_or(1);
    if num_runs == 0 {
        return Err(CliError::config(format!(
            "[{section}] num_runs must be ≥ 1"
        )));
    }
    Ok(SampleConfig {
        label,
        problem,
        observation_count,
        observation_times,
        num_runs,
        steps: sample_value(ini, section, "steps")?.unwrap_or(80),
        rho: sample_value(ini, section, "rho")?.unwrap_or(7.0),
        sigma_min: sample_value(ini, section, "sigma_min")?.unwrap_or(2e-3),
        sigma_max: sample_value(ini, section, "sigma_max")?,
        guidance: sample_value(ini, section, "guidance")?.unwrap_or(true),
        lambda_obs: sample_value(ini, section, "lambda_obs")?.unwrap_or(1.0),
        lambda_pde: sample_value(ini, section, "lambda_pde")?.unwrap_or(1.0),
        optimizer,
        adam,
    })
}
