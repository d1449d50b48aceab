use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Dataset, ExperimentConfig, Method};
use super::idx::{parse_idx_images, parse_idx_labels};
use crate::baselines::{guide_from_estimates, l2_oracle, GuideOptions};
use crate::error::{Error, Result};
use crate::forward_model::{build_blur, observe, psnr, LinearModel};
use crate::generator::load_weights;
use crate::generator::GeneratorNet;
use crate::laplace::{laplace_fit, ExpansionOptions};
use crate::latent::{LatentInit, LatentOptions, LatentPosterior};
use crate::rng::derive_seed;
use crate::synthetic::{suite_generator, suite_truths};

pub const CSV_HEADER: &str = "image_id,eta,sigma,repeat,method,psnr,wall_ms,seed,converged";
/// Seed path tag of the synthetic ground truths.
pub const SUITE_TRUTH_TAG: u64 = 0x7472_7574_6873;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub image_id: usize,
    pub eta: f64,
    pub sigma: f64,
    pub repeat: usize,
    pub method: Method,
    pub psnr: f64,
    pub wall_ms: f64,
    pub seed: u64,
    pub converged: bool,
}

/// A (cell, method) pair that raised an error; it has no record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub image_id: usize,
    pub eta: f64,
    pub sigma: f64,
    pub repeat: usize,
    pub method: Method,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSeed {
    pub image_id: usize,
    pub eta: f64,
    pub sigma_exponent: i32,
    pub repeat: usize,
    pub seed: u64,
}

/// Ground truths and the generator a sweep runs against.
#[derive(Debug, Clone)]
pub struct SweepInput {
    pub net: GeneratorNet,
    pub truths: Vec<DVector<f64>>,
    pub height: usize,
    pub width: usize,
    /// `"bundled-suite"` or the weights path.
    pub generator_source: String,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    /// Ordered by image, η (config order), σ, repeat, then method.
    pub records: Vec<ExperimentRecord>,
    pub failures: Vec<CellFailure>,
    pub cells: Vec<CellSeed>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output: SweepOutput,
    pub csv_path: PathBuf,
    pub manifest_path: PathBuf,
}

pub fn cell_seed(base: u64, image_id: usize, eta: f64, sigma_exponent: i32, repeat: usize) -> u64 {
    derive_seed(base, &[image_id as u64, eta.to_bits(), sigma_exponent as i64 as u64, repeat as u64])
}

pub fn sigma_of(exponent: i32) -> f64 {
    10f64.powi(-exponent)
}

/// Resolves the generator and ground truths named by the config.
pub fn load_input(cfg: &ExperimentConfig) -> Result<SweepInput> {
    let (net, source) = match &cfg.generator {
        Some(path) => (load_weights(path)?, path.display().to_string()),
        None => match cfg.dataset {
            Dataset::Synthetic { .. } => (suite_generator()?, "bundled-suite".to_string()),
            Dataset::Idx { .. } => {
                return Err(Error::Validation("an idx dataset needs a generator weights file".into()));
            }
        },
    };
    let (truths, height, width) = match &cfg.dataset {
        Dataset::Synthetic { off_manifold } => {
            let side = (net.output_dim() as f64).sqrt().round() as usize;
            if side * side != net.output_dim() {
                return Err(Error::Validation(format!(
                    "generator output dimension {} is not a square image",
                    net.output_dim()
                )));
            }
            let seed = derive_seed(cfg.seed, &[SUITE_TRUTH_TAG]);
            (suite_truths(&net, cfg.image_count, *off_manifold, seed)?, side, side)
        }
        Dataset::Idx { images, labels } => {
            let parsed = parse_idx_images(&std::fs::read(images)?, cfg.image_count)?;
            let labels = parse_idx_labels(&std::fs::read(labels)?, cfg.image_count)?;
            if labels.len() < parsed.pixels.len() {
                return Err(Error::Parse(format!(
                    "idx labels: {} labels for {} images",
                    labels.len(),
                    parsed.pixels.len()
                )));
            }
            let truths = parsed
                .pixels
                .iter()
                .map(|px| DVector::from_iterator(px.len(), px.iter().map(|&v| v as f64 / 255.0)))
                .collect();
            (truths, parsed.rows, parsed.cols)
        }
    };
    if net.output_dim() != height * width {
        return Err(Error::Shape {
            what: "generator output vs image pixels",
            expected: height * width,
            got: net.output_dim(),
        });
    }
    Ok(SweepInput {
        net,
        truths,
        height,
        width,
        generator_source: source,
    })
}

struct Timed<T> {
    value: std::result::Result<T, String>,
    ms: f64,
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Timed<T> {
    let start = Instant::now();
    let value = f().map_err(|e| e.to_string());
    Timed {
        value,
        ms: start.elapsed().as_secs_f64() * 1e3,
    }
}

struct Cell {
    image_id: usize,
    eta_index: usize,
    sigma_index: usize,
    repeat: usize,
}

/// Runs every (image, η, σ, repeat) cell in parallel. Per-method errors are
/// collected as failures and the sweep continues.
pub fn run_sweep(cfg: &ExperimentConfig, input: &SweepInput) -> Result<SweepOutput> {
    cfg.validate()?;
    let models: Vec<Vec<LinearModel>> = cfg
        .eta_list
        .iter()
        .map(|&eta| {
            let blur = build_blur(eta, input.height, input.width, cfg.blur_radius)?;
            cfg.sigma_exponents
                .iter()
                .map(|&s| LinearModel::new(blur.matrix().clone(), sigma_of(s).powi(2)))
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for image_id in 0..input.truths.len() {
        for eta_index in 0..cfg.eta_list.len() {
            for sigma_index in 0..cfg.sigma_exponents.len() {
                for repeat in 0..cfg.repeats {
                    cells.push(Cell {
                        image_id,
                        eta_index,
                        sigma_index,
                        repeat,
                    });
                }
            }
        }
    }

    let latent = LatentOptions {
        search_restarts: cfg.search_restarts,
        ..LatentOptions::default()
    };
    let guide_opts = GuideOptions {
        virtual_noise: cfg.guide.virtual_noise,
        cross_validated: cfg.guide.cross_validated,
        laplace: ExpansionOptions {
            latent,
            ..ExpansionOptions::default()
        },
        latent,
    };
    let grid = cfg.lambda_grid.values();

    let results: Vec<(CellSeed, Vec<ExperimentRecord>, Vec<CellFailure>)> = cells
        .par_iter()
        .map(|cell| {
            let model = &models[cell.eta_index][cell.sigma_index];
            let eta = cfg.eta_list[cell.eta_index];
            let s = cfg.sigma_exponents[cell.sigma_index];
            let seed = cell_seed(cfg.seed, cell.image_id, eta, s, cell.repeat);
            let meta = CellSeed {
                image_id: cell.image_id,
                eta,
                sigma_exponent: s,
                repeat: cell.repeat,
                seed,
            };
            let (records, failures) = run_cell(cfg, input, model, &grid, &guide_opts, &meta);
            (meta, records, failures)
        })
        .collect();

    let mut out = SweepOutput {
        records: Vec::new(),
        failures: Vec::new(),
        cells: Vec::new(),
    };
    for (meta, records, failures) in results {
        out.cells.push(meta);
        out.records.extend(records);
        out.failures.extend(failures);
    }
    Ok(out)
}

fn run_cell(
    cfg: &ExperimentConfig,
    input: &SweepInput,
    model: &LinearModel,
    grid: &[f64],
    guide_opts: &GuideOptions,
    meta: &CellSeed,
) -> (Vec<ExperimentRecord>, Vec<CellFailure>) {
    let x_true = &input.truths[meta.image_id];
    let sigma = sigma_of(meta.sigma_exponent);
    let fail = |method: Method, message: String| CellFailure {
        image_id: meta.image_id,
        eta: meta.eta,
        sigma,
        repeat: meta.repeat,
        method,
        message,
    };
    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();

    let y = match observe(model, x_true, derive_seed(meta.seed, &[0])) {
        Ok(y) => y,
        Err(e) => return (Vec::new(), methods.iter().map(|&m| fail(m, e.to_string())).collect()),
    };
    let wants = |m: Method| methods.contains(&m);
    let needs_both = wants(Method::Guide);

    let laplace = (wants(Method::Laplace) || needs_both).then(|| {
        timed(|| {
            let fit = laplace_fit(model, &y, &input.net, &guide_opts.laplace)?;
            Ok((fit.posterior.mean, fit.trace.converged()))
        })
    });
    let latent = (wants(Method::Latent) || needs_both).then(|| {
        timed(|| {
            let est = LatentPosterior::new(model, &input.net)?.estimate(&y, &LatentInit::LeastSquares, &guide_opts.latent)?;
            Ok((est.x, est.diagnostics.converged))
        })
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut push = |method: Method, outcome: Timed<(DVector<f64>, bool)>| match outcome.value {
        Ok((x, converged)) => records.push(ExperimentRecord {
            image_id: meta.image_id,
            eta: meta.eta,
            sigma,
            repeat: meta.repeat,
            method,
            psnr: psnr(x_true, &x, 1.0),
            wall_ms: if cfg.record_wall_time { outcome.ms } else { 0.0 },
            seed: meta.seed,
            converged,
        }),
        Err(e) => failures.push(fail(method, e)),
    };

    for method in methods {
        let outcome = match method {
            Method::L2 => timed(|| Ok((l2_oracle(model.a(), &y, x_true, grid)?.x, true))),
            Method::Laplace | Method::Latent => {
                let src = if method == Method::Laplace { &laplace } else { &latent };
                let t = src.as_ref().expect("computed above");
                Timed {
                    value: t.value.clone(),
                    ms: t.ms,
                }
            }
            Method::Guide => {
                let (lap, lat) = (laplace.as_ref().expect("computed"), latent.as_ref().expect("computed"));
                match (&lap.value, &lat.value) {
                    (Ok((xl, cl)), Ok((xm, cm))) => {
                        let g = timed(|| {
                            let verdict = guide_from_estimates(
                                model,
                                &input.net,
                                xl.clone(),
                                xm.clone(),
                                guide_opts,
                                derive_seed(meta.seed, &[1]),
                            )?;
                            Ok((verdict.estimate().clone(), *cl && *cm))
                        });
                        Timed {
                            value: g.value,
                            ms: g.ms + lap.ms + lat.ms,
                        }
                    }
                    (Err(e), _) | (_, Err(e)) => Timed {
                        value: Err(format!("guide input failed: {e}")),
                        ms: 0.0,
                    },
                }
            }
        };
        push(method, outcome);
    }
    (records, failures)
}

/// Fixed 10-significant-digit scientific notation; `inf`, `-inf`, `nan`
/// for non-finite values.
pub fn format_number(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.9e}")
    }
}

pub fn records_to_csv(records: &[ExperimentRecord]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::with_capacity(64 * (records.len() + 1)));
    let header: Vec<&str> = CSV_HEADER.split(',').collect();
    writer.write_record(&header).expect("in-memory write");
    for r in records {
        writer
            .write_record([
                r.image_id.to_string(),
                format_number(r.eta),
                format_number(r.sigma),
                r.repeat.to_string(),
                r.method.to_string(),
                format_number(r.psnr),
                format_number(r.wall_ms),
                r.seed.to_string(),
                r.converged.to_string(),
            ])
            .expect("in-memory write");
    }
    let bytes = writer.into_inner().expect("in-memory flush");
    String::from_utf8(bytes).expect("csv fields are ASCII")
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    config: &'a ExperimentConfig,
    generator: &'a str,
    image_height: usize,
    image_width: usize,
    image_count: usize,
    record_count: usize,
    cells: &'a [CellSeed],
    failures: &'a [CellFailure],
}

pub fn manifest_json(cfg: &ExperimentConfig, input: &SweepInput, output: &SweepOutput) -> Result<String> {
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        generator: &input.generator_source,
        image_height: input.height,
        image_width: input.width,
        image_count: input.truths.len(),
        record_count: output.records.len(),
        cells: &output.cells,
        failures: &output.failures,
    };
    serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(format!("manifest: {e}")))
}

pub const CSV_NAME: &str = "results.csv";
pub const MANIFEST_NAME: &str = "manifest.json";

/// Loads the input, runs the sweep and writes `results.csv` and
/// `manifest.json` into `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let input = load_input(cfg)?;
    let output = run_sweep(cfg, &input)?;
    write_outputs(cfg, &input, output, &cfg.output_dir)
}

pub fn write_outputs(cfg: &ExperimentConfig, input: &SweepInput, output: SweepOutput, dir: &Path) -> Result<RunSummary> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join(CSV_NAME);
    let manifest_path = dir.join(MANIFEST_NAME);
    std::fs::write(&csv_path, records_to_csv(&output.records))?;
    std::fs::write(&manifest_path, manifest_json(cfg, input, &output)?)?;
    if !output.failures.is_empty() {
        log::warn!("{} (cell, method) pairs failed; see {}", output.failures.len(), manifest_path.display());
    }
    Ok(RunSummary {
        output,
        csv_path,
        manifest_path,
    })
}
