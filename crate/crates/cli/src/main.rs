use std::path::{Path, PathBuf};
use std::process::ExitCode;

use biofuse_core::config::{key_help, ConfigBuilder, PipelineConfig};
use biofuse_core::eval::{evaluate, export_report, ReportFormat};
use biofuse_core::gabor::{build_bank, magnitude_response};
use biofuse_core::imageio::{load_pgm, write_pgm, PgmEncoding};
use biofuse_core::matching::{Metric, MetricKind, TemplateStore};
use biofuse_core::pipeline::{ingest_datasets, load_preprocessed, train, ModelBundle, Operational};
use biofuse_core::{enhance, Error, FeatureVector, GrayImage, Modality, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "biofuse", version, about = "Face and fingerprint recognition with feature-level fusion")]
struct Cli {
    /// TOML config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config key (repeatable), e.g. --set bank.scales=3
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Histogram-equalize a PGM image
    #[command(after_help = key_help())]
    Equalize { input: PathBuf, output: PathBuf },

    /// Write every filter's magnitude response as s{scale}_o{orientation}.pgm
    #[command(after_help = key_help())]
    GaborDump { input: PathBuf, out_dir: PathBuf },

    /// Scan the configured datasets and write their manifests to output.dir
    #[command(after_help = key_help())]
    Ingest,

    /// Fit PCA and whitening models on the training split and write them to model.dir
    #[command(after_help = key_help())]
    Train,

    /// Add a template for SUBJECT to a store file (created if missing)
    #[command(after_help = key_help())]
    Enroll {
        #[arg(long)]
        subject: String,
        #[command(flatten)]
        target: Target,
    },

    /// Rank enrolled subjects for a probe
    #[command(after_help = key_help())]
    Identify {
        #[command(flatten)]
        target: Target,
        /// Number of ranked templates to print
        #[arg(long, default_value_t = 5)]
        top: usize,
    },

    /// Accept or reject a claimed identity
    #[command(after_help = key_help())]
    Verify {
        #[arg(long)]
        subject: String,
        #[arg(long)]
        threshold: f64,
        #[command(flatten)]
        target: Target,
    },

    /// Run the train/test evaluation and write report.csv and report.json to output.dir
    #[command(after_help = key_help())]
    Evaluate,
}

#[derive(Args)]
struct Target {
    /// Template store file
    #[arg(long)]
    store: PathBuf,
    /// Face image (PGM)
    #[arg(long)]
    face: Option<PathBuf>,
    /// Fingerprint image (PGM); with --face the two are fused
    #[arg(long)]
    fingerprint: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.kind();
            let code = match kind {
                biofuse_core::ErrorKind::Config => 2,
                biofuse_core::ErrorKind::Data => 3,
                biofuse_core::ErrorKind::Io => 4,
            };
            let line = serde_json::json!({
                "error": kind.as_str(),
                "code": code,
                "message": e.to_string(),
            });
            eprintln!("{line}");
            ExitCode::from(code)
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut b = ConfigBuilder::new();
    if let Some(path) = &cli.config {
        b = b.file(path)?;
    }
    b = b.env(std::env::vars())?;
    for s in &cli.set {
        b = b.assign(s)?;
    }
    b.build()
}

fn run(cli: Cli) -> Result<()> {
    // config errors surface before any file is touched
    let cfg = load_config(&cli)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| dispatch(cli.command, cfg))
}

fn dispatch(command: Command, cfg: PipelineConfig) -> Result<()> {
    match command {
        Command::Equalize { input, output } => {
            let img = load_pgm(&input)?;
            let table = enhance::equalization_table(&enhance::histogram(&img), img.levels());
            if table.is_none() {
                // constant image: nothing to stretch, keep the file as it was
                std::fs::copy(&input, &output).map_err(|e| Error::io(&output, e))?;
                return Ok(());
            }
            write_pgm(&enhance::equalize(&img), &output, PgmEncoding::Binary)
        }
        Command::GaborDump { input, out_dir } => gabor_dump(&input, &out_dir, &cfg),
        Command::Ingest => {
            let (face, fp) = ingest_datasets(&cfg)?;
            create_dir(&cfg.output_dir)?;
            for m in std::iter::once(&face).chain(fp.as_ref()) {
                let path = cfg.output_dir.join(format!("{}.manifest.json", m.modality));
                write_text(&path, &m.to_json())?;
                println!("{}: {} subjects, {} samples -> {}", m.modality, m.subjects.len(), m.sample_count(), path.display());
            }
            Ok(())
        }
        Command::Train => {
            let (face, fp) = ingest_datasets(&cfg)?;
            let fp = fp.ok_or_else(|| Error::Config("train needs fingerprint.root".into()))?;
            let bundle = train(&face, &fp, &cfg)?;
            let manifest = bundle.save(&cfg.model_dir, &cfg)?;
            println!("trained {} components -> {}", manifest.components, cfg.model_dir.display());
            Ok(())
        }
        Command::Enroll { subject, target } => {
            let (op, probe) = probe(&cfg, &target)?;
            let mut store = if target.store.exists() {
                TemplateStore::load(&target.store)?
            } else {
                TemplateStore::new(probe.modality(), probe.dim(), metric(&cfg, &op, probe.modality())?)?
            };
            store.enroll(subject.clone(), probe)?;
            store.save(&target.store)?;
            println!("enrolled {subject} ({} templates)", store.len());
            Ok(())
        }
        Command::Identify { target, top } => {
            let (_, probe) = probe(&cfg, &target)?;
            let store = TemplateStore::load(&target.store)?;
            let id = store.identify(&probe, cfg.match_k)?;
            println!("subject {}", id.subject);
            for (rank, c) in id.ranked.iter().take(top).enumerate() {
                println!("{}\t{}\t{:?}", rank + 1, c.subject, c.distance);
            }
            Ok(())
        }
        Command::Verify { subject, threshold, target } => {
            let (_, probe) = probe(&cfg, &target)?;
            let store = TemplateStore::load(&target.store)?;
            let v = store.verify(&subject, &probe, threshold)?;
            println!("{} {:?}", if v.accepted { "accept" } else { "reject" }, v.score);
            Ok(())
        }
        Command::Evaluate => {
            let (face, fp) = ingest_datasets(&cfg)?;
            let report = evaluate(&face, fp.as_ref(), &cfg)?;
            create_dir(&cfg.output_dir)?;
            export_report(&report, ReportFormat::Csv, cfg.output_dir.join("report.csv"))?;
            export_report(&report, ReportFormat::Json, cfg.output_dir.join("report.json"))?;
            let show = |r: Option<f64>| r.map_or("-".to_string(), |v| format!("{:.4}", v));
            println!(
                "rank-1 face {} fingerprint {} fused {} (k={}, {} probes)",
                show(report.face_rate),
                show(report.fingerprint_rate),
                show(report.fused_rate),
                report.components,
                report.probes
            );
            Ok(())
        }
    }
}

fn probe(cfg: &PipelineConfig, target: &Target) -> Result<(Operational, FeatureVector)> {
    let bundle = ModelBundle::load(&cfg.model_dir, cfg.tanh_c)?;
    let op = Operational::new(cfg.clone(), bundle)?;
    let v = match (&target.face, &target.fingerprint) {
        (Some(f), Some(p)) => op.fused(f, p)?,
        (Some(f), None) => op.unimodal(f, Modality::Face)?,
        (None, Some(p)) => op.unimodal(p, Modality::Fingerprint)?,
        (None, None) => return Err(Error::Config("give --face, --fingerprint or both".into())),
    };
    Ok((op, v))
}

fn metric(cfg: &PipelineConfig, op: &Operational, modality: Modality) -> Result<Metric> {
    match (cfg.metric, modality) {
        (MetricKind::Euclidean, _) => Ok(Metric::Euclidean),
        (MetricKind::Mahalanobis, Modality::Fused) => {
            Err(Error::Config("match.metric=mahalanobis applies to unimodal stores only".into()))
        }
        (MetricKind::Mahalanobis, m) => Ok(Metric::Mahalanobis(op.bundle.stats(m)?.clone())),
    }
}

fn gabor_dump(input: &Path, out_dir: &Path, cfg: &PipelineConfig) -> Result<()> {
    let bank = build_bank(&cfg.bank)?;
    let img = load_preprocessed(input, cfg)?;
    create_dir(out_dir)?;
    for f in bank.filters() {
        let resp = magnitude_response(&img, &f.params, bank.kernel_radius())?;
        let path = out_dir.join(format!("s{}_o{}.pgm", f.scale, f.orientation));
        write_pgm(&to_gray(resp.width(), resp.height(), resp.values())?, &path, PgmEncoding::Binary)?;
    }
    println!("wrote {} responses to {}", bank.len(), out_dir.display());
    Ok(())
}

/// Linear map of `[min, max]` onto `[0, 255]`; a flat response becomes 0.
fn to_gray(width: usize, height: usize, values: &[f64]) -> Result<GrayImage> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let px = values
        .iter()
        .map(|v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u16 } else { 0 })
        .collect();
    GrayImage::new(width, height, 256, px)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
