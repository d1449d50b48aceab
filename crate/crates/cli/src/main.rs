mod imageio;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};

use genprior::baselines::{guide_from_estimates, l2_oracle, GuideChoice, GuideOptions, VirtualNoise};
use genprior::experiments::idx::parse_idx_images;
use genprior::experiments::run::SUITE_TRUTH_TAG;
use genprior::experiments::{run_experiment, write_report, ExperimentConfig};
use genprior::forward_model::DEFAULT_BLUR_RADIUS;
use genprior::generator::load_weights;
use genprior::laplace::{laplace_fit, marginal_pixel_std};
use genprior::latent::{LatentInit, LatentOptions};
use genprior::linalg::spd_factor;
use genprior::rng::derive_seed;
use genprior::synthetic::{suite_generator, suite_truths};
use genprior::{build_blur, observe, psnr, GeneratorNet, LatentPosterior, LinearModel};

use imageio::{read_gray, write_gray, write_grid, Gray};

type CliResult<T> = Result<T, String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

#[derive(Parser)]
#[command(name = "genprior", version, about = "Deblurring with generative-model priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw images from the generator and tile them into a grid.
    Generate {
        #[command(flatten)]
        gen: GeneratorArg,
        #[arg(long, default_value_t = 64)]
        count: usize,
        #[arg(long, default_value_t = 8)]
        cols: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Tile the mean images g(z) instead of full draws.
        #[arg(long)]
        mean: bool,
        #[arg(long, default_value = "draws.png")]
        out: PathBuf,
    },
    /// Write an image next to its blurred versions for several η.
    BlurDemo {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        gen: GeneratorArg,
        #[arg(long, value_delimiter = ',', default_values_t = [2.0, 3.0, 4.0, 5.0])]
        etas: Vec<f64>,
        /// Noise level added after blurring.
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "blur-demo")]
        out: PathBuf,
    },
    /// Reconstruct one blurred image with one method.
    Infer {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        gen: GeneratorArg,
        #[arg(long, value_enum, default_value_t = MethodArg::Laplace)]
        method: MethodArg,
        #[arg(long, default_value_t = 3.0)]
        eta: f64,
        #[arg(long, default_value_t = 1e-2)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Posterior samples for the latent pixel standard deviation.
        #[arg(long, default_value_t = 500)]
        samples: usize,
        #[arg(long, default_value = "infer")]
        out: PathBuf,
    },
    /// Run a sweep described by a TOML config.
    Experiment {
        /// Defaults apply to every key the file leaves out; no file means
        /// all defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Also write the report next to the results.
        #[arg(long)]
        report: bool,
        /// Print the effective config and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Summary table and SVG charts from a results CSV.
    Report {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Check that a weights file loads and report its shape.
    ValidateWeights { path: PathBuf },
}

#[derive(Args)]
struct GeneratorArg {
    /// Generator weights file; the bundled 8×8 suite generator if absent.
    #[arg(long)]
    weights: Option<PathBuf>,
}

impl GeneratorArg {
    fn load(&self) -> CliResult<GeneratorNet> {
        match &self.weights {
            Some(p) => load_weights(p).map_err(|e| format!("{}: {e}", p.display())),
            None => suite_generator().map_err(err),
        }
    }
}

#[derive(Args)]
struct SourceArgs {
    /// Grayscale .png or .pgm ground truth.
    #[arg(long, conflicts_with = "idx")]
    image: Option<PathBuf>,
    /// IDX image file holding the ground truth (see --index).
    #[arg(long)]
    idx: Option<PathBuf>,
    /// Index into the IDX file or into the synthetic suite.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Off-manifold offset of a synthetic suite truth.
    #[arg(long, default_value_t = 0.03)]
    off_manifold: f64,
    /// Base seed of the synthetic suite, as in the experiment config.
    #[arg(long, default_value_t = 0)]
    suite_seed: u64,
}

impl SourceArgs {
    fn load(&self, net: &GeneratorNet) -> CliResult<Gray> {
        if let Some(p) = &self.image {
            return read_gray(p);
        }
        if let Some(p) = &self.idx {
            let bytes = std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()))?;
            let parsed = parse_idx_images(&bytes, self.index + 1).map_err(err)?;
            let px = parsed
                .pixels
                .get(self.index)
                .ok_or_else(|| format!("{}: no image at index {}", p.display(), self.index))?;
            return Ok(Gray {
                height: parsed.rows,
                width: parsed.cols,
                pixels: DVector::from_iterator(px.len(), px.iter().map(|&v| v as f64 / 255.0)),
            });
        }
        let side = square_side(net)?;
        let seed = derive_seed(self.suite_seed, &[SUITE_TRUTH_TAG]);
        let truths = suite_truths(net, self.index + 1, self.off_manifold, seed).map_err(err)?;
        Ok(Gray {
            height: side,
            width: side,
            pixels: truths[self.index].clone(),
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    L2,
    Latent,
    Laplace,
    Guide,
}

fn square_side(net: &GeneratorNet) -> CliResult<usize> {
    let side = (net.output_dim() as f64).sqrt().round() as usize;
    if side * side == net.output_dim() {
        Ok(side)
    } else {
        Err(format!("generator output dimension {} is not a square image", net.output_dim()))
    }
}

fn generate(net: &GeneratorNet, count: usize, cols: usize, seed: u64, mean: bool, out: &Path) -> CliResult<()> {
    let side = square_side(net)?;
    let draws = (0..count)
        .map(|i| {
            let s = derive_seed(seed, &[i as u64]);
            if mean {
                let z = genprior::rng::standard_normal_vec(&mut genprior::rng::seeded(s), net.latent_dim());
                net.g_mean(&z)
            } else {
                net.sample_prior_draw(s)
            }
        })
        .collect::<genprior::Result<Vec<_>>>()
        .map_err(err)?;
    let total = (count * net.output_dim()).max(1) as f64;
    let inside = draws
        .iter()
        .flat_map(|d| d.iter())
        .filter(|v| (-0.2..=1.2).contains(*v))
        .count() as f64;
    write_grid(out, &draws, side, side, cols)?;
    println!("wrote {count} draws to {}", out.display());
    println!("pixels within [-0.2, 1.2]: {:.2}%", 100.0 * inside / total);
    Ok(())
}

fn blur_demo(truth: &Gray, etas: &[f64], sigma: f64, seed: u64, out: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out).map_err(err)?;
    write_gray(&out.join("original.png"), &truth.pixels, truth.height, truth.width, 0.0, 1.0)?;
    let mut tiles = vec![truth.pixels.clone()];
    for &eta in etas {
        let model = build_blur(eta, truth.height, truth.width, DEFAULT_BLUR_RADIUS)
            .and_then(|b| b.into_model(sigma.powi(2).max(f64::MIN_POSITIVE)))
            .map_err(err)?;
        let y = genprior::forward_model::observe_with_sigma(model.a(), &truth.pixels, sigma, seed).map_err(err)?;
        let name = format!("blurred_eta{}.png", eta.to_string().replace('.', "p"));
        write_gray(&out.join(&name), &y, truth.height, truth.width, 0.0, 1.0)?;
        println!(
            "eta = {eta}: condition number {:.3e}, PSNR of blurred image {:.2} dB",
            model.condition_estimate(),
            psnr(&truth.pixels, &y, 1.0)
        );
        tiles.push(y);
    }
    write_grid(&out.join("grid.png"), &tiles, truth.height, truth.width, tiles.len())?;
    println!("wrote {}", out.display());
    Ok(())
}

/// Posterior standard deviation under the Gaussian prior `N(0, σ²/λ·I)`
/// that the Tikhonov solution is the mean of.
fn tikhonov_std(model: &LinearModel, lambda: f64) -> CliResult<DVector<f64>> {
    let mut h: DMatrix<f64> = model.ata().clone();
    for i in 0..h.nrows() {
        h[(i, i)] += lambda;
    }
    let inv = spd_factor(&h).map_err(err)?.inverse();
    Ok(inv.diagonal().map(|v| (v * model.sigma2()).sqrt()))
}

fn latent_std(post: &LatentPosterior, y: &DVector<f64>, samples: usize, seed: u64) -> CliResult<DVector<f64>> {
    let zs = post.posterior_samples(y, samples.max(2), seed).map_err(err)?;
    let xs = zs.iter().map(|z| post.net.g_mean(z)).collect::<genprior::Result<Vec<_>>>().map_err(err)?;
    let n = xs.len() as f64;
    let mean = xs.iter().fold(DVector::zeros(post.net.output_dim()), |acc, x| acc + x) / n;
    let var = xs.iter().fold(DVector::zeros(mean.len()), |acc, x| acc + (x - &mean).map(|v| v * v)) / (n - 1.0);
    Ok(var.map(f64::sqrt))
}

#[allow(clippy::too_many_arguments)]
fn infer(
    truth: &Gray,
    net: &GeneratorNet,
    method: MethodArg,
    eta: f64,
    sigma: f64,
    seed: u64,
    samples: usize,
    out: &Path,
) -> CliResult<()> {
    if !(sigma > 0.0) {
        return Err("--sigma must be positive".into());
    }
    let model = build_blur(eta, truth.height, truth.width, DEFAULT_BLUR_RADIUS)
        .and_then(|b| b.into_model(sigma * sigma))
        .map_err(err)?;
    let x = &truth.pixels;
    let y = observe(&model, x, seed).map_err(err)?;
    let post = LatentPosterior::new(&model, net).map_err(err)?;
    let opts = GuideOptions::default();
    let laplace_run = || -> CliResult<(DVector<f64>, DVector<f64>)> {
        let fit = laplace_fit(&model, &y, net, &opts.laplace).map_err(err)?;
        let std = marginal_pixel_std(&fit.posterior);
        Ok((fit.posterior.mean, std))
    };
    let latent_point = || -> CliResult<DVector<f64>> {
        Ok(post.estimate(&y, &LatentInit::LeastSquares, &LatentOptions::default()).map_err(err)?.x)
    };

    let (xhat, std, label) = match method {
        MethodArg::L2 => {
            let fit = l2_oracle(model.a(), &y, x, &genprior::baselines::default_lambda_grid()).map_err(err)?;
            let std = tikhonov_std(&model, fit.lambda)?;
            (fit.x, std, format!("l2 (oracle lambda = {:.3e})", fit.lambda))
        }
        MethodArg::Laplace => {
            let (m, s) = laplace_run()?;
            (m, s, "laplace".to_string())
        }
        MethodArg::Latent => {
            let m = latent_point()?;
            (m, latent_std(&post, &y, samples, seed)?, "latent".to_string())
        }
        MethodArg::Guide => {
            let (lap, lap_std) = laplace_run()?;
            let lat = latent_point()?;
            let verdict = guide_from_estimates(&model, net, lap, lat, &GuideOptions {
                virtual_noise: VirtualNoise::Fresh,
                ..opts
            }, derive_seed(seed, &[1]))
            .map_err(err)?;
            let std = match verdict.chosen {
                GuideChoice::Laplace => lap_std,
                GuideChoice::Latent => latent_std(&post, &y, samples, seed)?,
            };
            let label = format!(
                "guide -> {:?} (virtual errors: laplace {:.3e}, latent {:.3e})",
                verdict.chosen, verdict.err_laplace, verdict.err_latent
            );
            (verdict.estimate().clone(), std, label)
        }
    };

    std::fs::create_dir_all(out).map_err(err)?;
    let (h, w) = (truth.height, truth.width);
    write_gray(&out.join("truth.png"), x, h, w, 0.0, 1.0)?;
    write_gray(&out.join("observed.png"), &y, h, w, 0.0, 1.0)?;
    write_gray(&out.join("reconstruction.png"), &xhat, h, w, 0.0, 1.0)?;
    write_gray(&out.join("pixel_std.png"), &std, h, w, 0.0, std.max())?;
    println!("method: {label}");
    println!("PSNR: {:.4} dB", psnr(x, &xhat, 1.0));
    println!("max pixel std: {:.4e}", std.max());
    println!("wrote {}", out.display());
    Ok(())
}

fn experiment(config: Option<&Path>, output_dir: Option<PathBuf>, report: bool, print_config: bool) -> CliResult<()> {
    let mut cfg = match config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| format!("{}: {e}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    if print_config {
        print!("{}", cfg.to_toml_string().map_err(err)?);
        return Ok(());
    }
    let summary = run_experiment(&cfg).map_err(err)?;
    println!(
        "{} records, {} failures",
        summary.output.records.len(),
        summary.output.failures.len()
    );
    println!("wrote {}", summary.csv_path.display());
    println!("wrote {}", summary.manifest_path.display());
    if report {
        let files = write_report(&summary.csv_path, &cfg.output_dir).map_err(err)?;
        println!("wrote {}", files.summary.display());
    }
    Ok(())
}

fn validate_weights(path: &Path) -> CliResult<()> {
    let net = load_weights(path).map_err(|e| format!("{}: {e}", path.display()))?;
    println!("ok: {}", path.display());
    println!("latent_dim: {}", net.latent_dim());
    println!("output_dim: {}", net.output_dim());
    println!("cov_head: {:?} (eps_gamma = {:e})", net.cov_head().variant(), net.cov_head().eps_gamma());
    println!("encoder: {}", if net.encoder().is_some() { "present" } else { "absent" });
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate {
            gen,
            count,
            cols,
            seed,
            mean,
            out,
        } => generate(&gen.load()?, count, cols, seed, mean, &out),
        Command::BlurDemo {
            source,
            gen,
            etas,
            sigma,
            seed,
            out,
        } => {
            let truth = source.load(&gen.load()?)?;
            blur_demo(&truth, &etas, sigma, seed, &out)
        }
        Command::Infer {
            source,
            gen,
            method,
            eta,
            sigma,
            seed,
            samples,
            out,
        } => {
            let net = gen.load()?;
            let truth = source.load(&net)?;
            infer(&truth, &net, method, eta, sigma, seed, samples, &out)
        }
        Command::Experiment {
            config,
            output_dir,
            report,
            print_config,
        } => experiment(config.as_deref(), output_dir, report, print_config),
        Command::Report { csv, out } => {
            let files = write_report(&csv, &out).map_err(err)?;
            println!("wrote {}", files.summary.display());
            for c in files.charts {
                println!("wrote {}", c.display());
            }
            Ok(())
        }
        Command::ValidateWeights { path } => validate_weights(&path),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
