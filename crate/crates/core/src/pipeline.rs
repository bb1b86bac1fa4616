//! Batch pipeline orchestration: simulate -> fuse -> side information ->
//! per-channel reconstruction -> evaluation, with a MANIFEST recording
//! content hashes of every input and output.

use std::collections::VecDeque;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::config::{configured_threads, ExperimentConfig, ReconConfig};
use crate::diffops::DirectionalWeight;
use crate::error::{Error, Result};
use crate::geometry::{ScanGeometry, Sinogram};
use crate::grid::ImageGrid;
use crate::io;
use crate::metrics::{build_side_information, fuse_sinograms, psnr, ssim, SideInfoSettings};
use crate::optimizers::{
    bregman_solve, fbs_solve, Regularization, SmoothDataFit, SolverOptions, SolverTrace,
};
use crate::projector::estimate_operator_norm;
use crate::regularizers::build_xi;
use crate::sim::simulate_sinogram;

/// Holds the run-directory lock for the lifetime of a pipeline run.
struct RunLock {
    path: PathBuf,
}

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join("run.lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "run directory is locked by another process: {}",
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// How far into the pipeline to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Simulate,
    Fuse,
    SideInfo,
    Full,
}

#[derive(Debug, Clone)]
pub struct BestEntry {
    pub channel: String,
    pub alpha: f64,
    pub ssim: f64,
    pub iter: usize,
}

#[derive(Debug)]
pub struct PipelineReport {
    pub output_dir: PathBuf,
    pub best: Vec<BestEntry>,
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("[{name}] {m}")),
        Error::Numerical(m) => Error::Numerical(format!("[{name}] {m}")),
        Error::Format(m) => Error::Format(format!("[{name}] {m}")),
        e @ Error::Io(_) => e,
    })
}

struct Artifacts {
    dir: PathBuf,
    outputs: Mutex<Vec<PathBuf>>,
}

impl Artifacts {
    fn record(&self, path: PathBuf) {
        self.outputs.lock().unwrap().push(path);
    }

    fn write_image(&self, rel: &str, img: &ImageGrid<f64>) -> Result<PathBuf> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        io::write_image(&path, img)?;
        self.record(path.clone());
        let preview = path.with_extension("pgm");
        io::write_pgm_preview(&preview, img)?;
        Ok(path)
    }

    fn write_sinogram(&self, rel: &str, s: &Sinogram<f64>) -> Result<PathBuf> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        io::write_sinogram(&path, s)?;
        self.record(path.clone());
        Ok(path)
    }

    fn write_trace(&self, rel: &str, trace: &SolverTrace<f64>) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        io::write_trace_csv(&path, trace)
    }

    fn write_text(&self, rel: &str, text: &str) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, text)?;
        Ok(())
    }
}

struct ChannelData {
    label: String,
    sinogram: Sinogram<f64>,
    reference: Option<ImageGrid<f64>>,
}

fn gather_channel_data(
    cfg: &ExperimentConfig,
    geometry: &ScanGeometry<f64>,
    artifacts: &Artifacts,
    inputs: &mut Vec<PathBuf>,
) -> Result<Vec<ChannelData>> {
    let mut out = Vec::new();
    for (k, ch) in cfg.channels.iter().enumerate() {
        let label = ch.channel.label.clone();
        let sinogram = match &ch.sinogram {
            Some(path) => {
                inputs.push(path.clone());
                let s = io::read_sinogram(path)?;
                if !s.geometry().same_shape(geometry) {
                    return Err(Error::Config(format!(
                        "channel {label}: sinogram geometry does not match the configured geometry"
                    )));
                }
                s
            }
            None => {
                let phantom = cfg
                    .phantom
                    .as_ref()
                    .ok_or_else(|| Error::Config("no phantom configured".into()))?;
                let gt = phantom.rasterize(k)?;
                artifacts.write_image(&format!("{label}_ground_truth.raw"), &gt)?;
                let s = simulate_sinogram(&gt, geometry, &ch.channel, cfg.seed.wrapping_add(k as u64))?;
                artifacts.write_sinogram(&format!("{label}_sinogram.raw"), &s)?;
                s
            }
        };
        let reference = match &ch.reference {
            Some(path) => {
                inputs.push(path.clone());
                Some(io::read_image(path)?)
            }
            None => match &cfg.phantom {
                Some(ph) => Some(ph.rasterize(k)?),
                None => None,
            },
        };
        out.push(ChannelData { label, sinogram, reference });
    }
    Ok(out)
}

struct JobResult {
    channel_idx: usize,
    alpha: f64,
    best: Option<(usize, f64)>,
}

#[allow(clippy::too_many_arguments)]
fn reconstruct_one(
    artifacts: &Artifacts,
    recon: &ReconConfig,
    data: &ChannelData,
    weight: Option<&DirectionalWeight<f64>>,
    grid: (usize, usize, f64),
    sigma0: f64,
    alpha_idx: usize,
    alpha: f64,
    channel_idx: usize,
) -> Result<JobResult> {
    let (rows, cols, pixel_size) = grid;
    let fit = SmoothDataFit::new(data.sinogram.clone(), rows, cols, pixel_size)?;
    let reg = match recon.regularizer.as_str() {
        "tv" => Regularization::tv(alpha),
        "dtv" => {
            let w = weight
                .ok_or_else(|| Error::Config("dTV reconstruction requires side information".into()))?;
            Regularization::dtv(alpha, w.clone())
        }
        other => return Err(Error::Config(format!("unknown regularizer '{other}'"))),
    };
    let mut opts = SolverOptions::new(sigma0)?;
    opts.prox_max_iters = recon.prox_max_iters;
    opts.prox_tol = recon.prox_tol;
    opts.reference = data.reference.clone();

    let subdir = format!("alpha_{alpha_idx}");
    let label = &data.label;
    let (image, trace) = match recon.method.as_str() {
        "fbs" => {
            let u0 = ImageGrid::constant(rows, cols, pixel_size, 1.0);
            let out = fbs_solve(&fit, &reg, &opts, recon.tol, recon.max_iters, &u0)
                .map_err(|f| f.error)?;
            (out.image, out.trace)
        }
        "bregman" => {
            let out = bregman_solve(&fit, &reg, &opts, recon.max_iters, recon.checkpoint_every)
                .map_err(|f| f.error)?;
            for cp in &out.checkpoints {
                artifacts.write_image(
                    &format!("{subdir}/{label}_checkpoint_{:05}.raw", cp.iter),
                    &cp.image,
                )?;
            }
            (out.image, out.trace)
        }
        other => return Err(Error::Config(format!("unknown method '{other}'"))),
    };

    artifacts.write_image(&format!("{subdir}/{label}_recon.raw"), &image)?;
    artifacts.write_trace(&format!("{subdir}/{label}_trace.csv"), &trace)?;

    let best = match (&data.reference, recon.method.as_str()) {
        (Some(reference), "fbs") => {
            let s = ssim(&image, reference)?;
            Some((trace.records.last().map(|r| r.iter).unwrap_or(0), s))
        }
        (Some(_), _) => trace.best_ssim(),
        (None, _) => None,
    };

    let mut summary = String::new();
    summary.push_str(&format!("channel: {label}\nmethod: {}\n", recon.method));
    summary.push_str(&format!("regularizer: {}\nalpha: {alpha:e}\n", recon.regularizer));
    summary.push_str(&format!("iterations: {}\n", trace.len()));
    if let Some(reference) = &data.reference {
        summary.push_str(&format!("ssim: {:.6}\n", ssim(&image, reference)?));
        summary.push_str(&format!("psnr: {:.4}\n", psnr(&image, reference)?));
        if let Some((it, s)) = best {
            summary.push_str(&format!("best_iter: {it}\nbest_ssim: {s:.6}\n"));
        }
    }
    artifacts.write_text(&format!("{subdir}/{label}_metrics.txt"), &summary)?;

    Ok(JobResult { channel_idx, alpha, best })
}

fn write_manifest(
    dir: &Path,
    status: &str,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
    best: &[BestEntry],
    error: Option<&str>,
) -> Result<()> {
    let mut text = String::new();
    text.push_str(&format!("status: {status}\n"));
    if let Some(e) = error {
        text.push_str(&format!("error: {e}\n"));
    }
    let mut inputs: Vec<_> = inputs.to_vec();
    inputs.sort();
    inputs.dedup();
    for p in &inputs {
        if p.exists() {
            text.push_str(&format!("input: {} {}\n", p.display(), io::file_sha256(p)?));
        }
    }
    let mut outputs: Vec<_> = outputs.to_vec();
    outputs.sort();
    outputs.dedup();
    for p in &outputs {
        if p.exists() {
            let rel = p.strip_prefix(dir).unwrap_or(p);
            text.push_str(&format!("output: {} {}\n", rel.display(), io::file_sha256(p)?));
        }
    }
    for b in best {
        text.push_str(&format!(
            "best: channel={} alpha={:e} iter={} ssim={:.6}\n",
            b.channel, b.alpha, b.iter, b.ssim
        ));
    }
    fs::write(dir.join("MANIFEST"), text)?;
    Ok(())
}

/// Run the full experiment pipeline. On failure a MANIFEST marking the run
/// incomplete is left in the output directory with the artifacts produced so
/// far.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineReport> {
    run_until(cfg, Stage::Full)
}

/// Run the pipeline up to and including `until`.
pub fn run_until(cfg: &ExperimentConfig, until: Stage) -> Result<PipelineReport> {
    cfg.validate()?;
    configured_threads()?;
    let dir = cfg.output.dir.clone();
    fs::create_dir_all(&dir)?;
    let _lock = RunLock::acquire(&dir)?;
    let artifacts = Artifacts { dir: dir.clone(), outputs: Mutex::new(Vec::new()) };
    let mut inputs = Vec::new();

    let result = run_stages(cfg, &artifacts, &mut inputs, until);
    let outputs = artifacts.outputs.into_inner().unwrap();
    match result {
        Ok(best) => {
            write_manifest(&dir, "complete", &inputs, &outputs, &best, None)?;
            Ok(PipelineReport { output_dir: dir, best })
        }
        Err(e) => {
            write_manifest(&dir, "incomplete", &inputs, &outputs, &[], Some(&e.to_string()))?;
            Err(e)
        }
    }
}

fn run_stages(
    cfg: &ExperimentConfig,
    artifacts: &Artifacts,
    inputs: &mut Vec<PathBuf>,
    until: Stage,
) -> Result<Vec<BestEntry>> {
    let geometry = stage("geometry", cfg.geometry.build())?;
    let (rows, cols, pixel_size) = (cfg.grid.rows, cfg.grid.cols, cfg.grid.pixel_size);

    let channels = stage("data", gather_channel_data(cfg, &geometry, artifacts, inputs))?;
    if until < Stage::Fuse {
        return Ok(Vec::new());
    }

    let fused = stage(
        "fuse",
        fuse_sinograms(&channels.iter().map(|c| c.sinogram.clone()).collect::<Vec<_>>()),
    )?;
    stage("fuse", artifacts.write_sinogram("fused_sinogram.raw", &fused))?;
    if until < Stage::SideInfo {
        return Ok(Vec::new());
    }

    let side_info = match &cfg.side_info.path {
        Some(path) => {
            inputs.push(path.clone());
            stage("sideinfo", io::read_image(path))?
        }
        None => {
            let mut settings = SideInfoSettings::new(cfg.side_info.alpha);
            settings.tol = cfg.side_info.tol;
            settings.max_iters = cfg.side_info.max_iters;
            stage(
                "sideinfo",
                build_side_information(&fused, rows, cols, pixel_size, &settings),
            )?
        }
    };
    stage("sideinfo", artifacts.write_image("side_info.raw", &side_info))?;
    if until < Stage::Full {
        return Ok(Vec::new());
    }

    let params = stage("edge_field", cfg.edge_field.params())?;
    let weight = stage("edge_field", build_xi(&side_info, &params))?;
    let xi_mag = {
        let mut img = ImageGrid::zeros(rows, cols, pixel_size);
        for idx in 0..weight.xi().len() {
            img.values_mut()[idx] = weight.xi().norm_at(idx);
        }
        img
    };
    stage("edge_field", artifacts.write_image("xi_magnitude.raw", &xi_mag))?;

    let norm = stage(
        "operator_norm",
        estimate_operator_norm(&geometry, rows, cols, pixel_size, 100, 1e-6),
    )?;
    if norm <= 0.0 {
        return Err(Error::Numerical("[operator_norm] estimate is zero".into()));
    }
    let sigma0 = 1.0 / (norm * norm);

    // one job per (channel, alpha)
    struct Job<'a> {
        recon: &'a ReconConfig,
        data: &'a ChannelData,
        alpha_idx: usize,
        alpha: f64,
        channel_idx: usize,
    }
    let mut jobs = Vec::new();
    for (k, data) in channels.iter().enumerate() {
        let recon = cfg.recon_for(k);
        stage("reconstruct", recon.validate())?;
        for (ai, &alpha) in recon.alphas.iter().enumerate() {
            jobs.push(Job { recon, data, alpha_idx: ai, alpha, channel_idx: k });
        }
    }

    let threads = stage("reconstruct", configured_threads())?.min(jobs.len().max(1));
    let run_job = |job: &Job| -> Result<JobResult> {
        reconstruct_one(
            artifacts,
            job.recon,
            job.data,
            Some(&weight),
            (rows, cols, pixel_size),
            sigma0,
            job.alpha_idx,
            job.alpha,
            job.channel_idx,
        )
    };

    let results: Vec<JobResult> = if threads <= 1 {
        let mut acc = Vec::new();
        for job in &jobs {
            acc.push(stage("reconstruct", run_job(job))?);
        }
        acc
    } else {
        let queue: Mutex<VecDeque<&Job>> = Mutex::new(jobs.iter().collect());
        let collected: Mutex<Vec<Result<JobResult>>> = Mutex::new(Vec::new());
        std::thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(|| loop {
                    let job = { queue.lock().unwrap().pop_front() };
                    match job {
                        Some(j) => {
                            let r = run_job(j);
                            collected.lock().unwrap().push(r);
                        }
                        None => break,
                    }
                });
            }
        });
        let mut acc = Vec::new();
        for r in collected.into_inner().unwrap() {
            acc.push(stage("reconstruct", r)?);
        }
        acc
    };

    // best SSIM per channel across the alpha sweep
    let mut best: Vec<BestEntry> = Vec::new();
    for (k, data) in channels.iter().enumerate() {
        let mut channel_best: Option<BestEntry> = None;
        for r in results.iter().filter(|r| r.channel_idx == k) {
            if let Some((iter, s)) = r.best {
                let candidate = BestEntry {
                    channel: data.label.clone(),
                    alpha: r.alpha,
                    ssim: s,
                    iter,
                };
                channel_best = match channel_best {
                    Some(b) if b.ssim >= s => Some(b),
                    _ => Some(candidate),
                };
            }
        }
        if let Some(b) = channel_best {
            best.push(b);
        }
    }
    // deterministic ordering regardless of worker scheduling
    let _ = &results;
    Ok(best)
}
