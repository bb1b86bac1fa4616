use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use msct::config::ExperimentConfig;
use msct::error::Result;
use msct::metrics::{psnr, ssim};
use msct::pipeline::{run_until, Stage};
use msct::io;

#[derive(Parser)]
#[command(name = "msct", about = "Multi-spectral CT simulation and reconstruction", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// CLI overrides mirroring config keys.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// Output directory (overrides [output].dir)
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// RNG seed (overrides top-level seed)
    #[arg(long)]
    seed: Option<u64>,
    /// Outer solver: fbs or bregman
    #[arg(long)]
    method: Option<String>,
    /// Regularizer: tv or dtv
    #[arg(long)]
    regularizer: Option<String>,
    /// Regularization weights; repeat for a sweep
    #[arg(long = "alpha")]
    alphas: Vec<f64>,
    /// Outer iteration budget
    #[arg(long)]
    max_iters: Option<usize>,
    /// Relative decrease tolerance of the outer solver
    #[arg(long)]
    tol: Option<f64>,
    /// TV weight of the side-information reconstruction
    #[arg(long)]
    side_info_alpha: Option<f64>,
    /// Edge-field strength cap in [0, 1)
    #[arg(long)]
    eta_cap: Option<f64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(d) = &self.out_dir {
            cfg.output.dir = d.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = &self.method {
            cfg.reconstruction.method = m.clone();
        }
        if let Some(r) = &self.regularizer {
            cfg.reconstruction.regularizer = r.clone();
        }
        if !self.alphas.is_empty() {
            cfg.reconstruction.alphas = self.alphas.clone();
        }
        if let Some(n) = self.max_iters {
            cfg.reconstruction.max_iters = n;
        }
        if let Some(t) = self.tol {
            cfg.reconstruction.tol = t;
        }
        if let Some(a) = self.side_info_alpha {
            cfg.side_info.alpha = a;
        }
        if let Some(c) = self.eta_cap {
            cfg.edge_field.eta_cap = c;
        }
    }
}

#[derive(Args, Debug)]
struct ConfigRun {
    /// Experiment configuration (TOML)
    #[arg(long, short)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

impl ConfigRun {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        self.overrides.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate per-channel noisy sinograms from the configured phantom
    Simulate(ConfigRun),
    /// Simulate or load the channels and write the fused sinogram
    Fuse(ConfigRun),
    /// Run through the side-information reconstruction
    Sideinfo(ConfigRun),
    /// Full run: simulate, fuse, side info, reconstruct, evaluate
    Reconstruct(ConfigRun),
    /// Compare two images and print SSIM and PSNR
    Evaluate {
        /// Image under test
        #[arg(long)]
        image: PathBuf,
        /// Reference image (defines the dynamic range)
        #[arg(long)]
        reference: PathBuf,
    },
    /// Full run (same as reconstruct)
    Pipeline(ConfigRun),
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(c) => run_stage(&c, Stage::Simulate),
        Command::Fuse(c) => run_stage(&c, Stage::Fuse),
        Command::Sideinfo(c) => run_stage(&c, Stage::SideInfo),
        Command::Reconstruct(c) | Command::Pipeline(c) => run_stage(&c, Stage::Full),
        Command::Evaluate { image, reference } => {
            let x = io::read_image(&image)?;
            let r = io::read_image(&reference)?;
            println!("ssim: {:.6}", ssim(&x, &r)?);
            let p = psnr(&x, &r)?;
            if p.is_finite() {
                println!("psnr: {p:.4}");
            } else {
                println!("psnr: inf");
            }
            Ok(())
        }
    }
}

fn run_stage(c: &ConfigRun, stage: Stage) -> Result<()> {
    let cfg = c.load()?;
    let report = run_until(&cfg, stage)?;
    println!("output: {}", report.output_dir.display());
    for b in &report.best {
        println!(
            "best: channel={} alpha={:e} iter={} ssim={:.6}",
            b.channel, b.alpha, b.iter, b.ssim
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
