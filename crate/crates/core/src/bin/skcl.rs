use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use skcl::bench::{self, BenchMeta, SweepSpec};
use skcl::engine::{self, EngineConfig};
use skcl::eval::{classify_and_score, kmeans_pp, sse, EvalReport};
use skcl::io::{self, CentroidFile, TruthFile};
use skcl::sketch::{compute_sketch, draw_frequencies, estimate_scale_subsampled, RadiusLaw};
use skcl::synth::{gen_gmm, SynthSpec};
use skcl::{Error, Result};

#[derive(Parser)]
#[command(name = "skcl", version, about = "Sketched clustering with CL-AMP")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic GMM dataset.
    Synth(SynthArgs),
    /// Compress a dataset into a sketch.
    Sketch(SketchArgs),
    /// Recover centroids from a sketch with CL-AMP.
    Cluster(ClusterArgs),
    /// Cluster a dataset with k-means++.
    Kmeans(KmeansArgs),
    /// Score centroids; prints one report CSV row.
    Eval(EvalArgs),
    /// Run a benchmark sweep; writes report CSV.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    k: usize,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    t: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training set output (binary, or CSV for a .csv extension).
    #[arg(long)]
    out: PathBuf,
    /// Test-set size; requires --test-out.
    #[arg(long, default_value_t = 0, requires = "test_out")]
    test_t: usize,
    #[arg(long)]
    test_out: Option<PathBuf>,
    /// Means and labels as JSON.
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

#[derive(Args)]
struct SketchArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Radius law: gaussian or adapted_radius.
    #[arg(long, default_value = "adapted_radius")]
    law: RadiusLaw,
    /// Frequency scale; estimated from a data subsample when omitted.
    #[arg(long)]
    scale: Option<f64>,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    sketch: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    restarts: usize,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long, default_value_t = 0.7)]
    damping: f64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep alpha and tau at their initial values.
    #[arg(long)]
    no_em: bool,
    /// Starting centroids for the first restart.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Per-iteration engine diagnostics as JSON lines.
    #[arg(long, alias = "trace")]
    json_trace: Option<PathBuf>,
}

#[derive(Args)]
struct KmeansArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    replicates: usize,
    #[arg(long, default_value_t = 1.0)]
    rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    centroids: PathBuf,
    /// Training set for the SSE.
    #[arg(long)]
    train: PathBuf,
    /// Test set; with --truth, adds error and Bayes rates.
    #[arg(long, requires = "truth")]
    test: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value = "unknown")]
    algorithm: String,
    #[arg(long, default_value = "")]
    m_or_rate: String,
    #[arg(long, default_value_t = 1)]
    replicates: usize,
    #[arg(long, default_value = "")]
    seed: String,
    /// Print the CSV header first.
    #[arg(long)]
    header: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 10_000)]
    t: usize,
    #[arg(long, default_value_t = bench::DEFAULT_TEST_SIZE)]
    test_t: usize,
    #[arg(long, default_value_t = bench::DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated sketch sizes; log-spaced over [KN, 10KN] when omitted.
    #[arg(long, value_delimiter = ',')]
    m_grid: Option<Vec<usize>>,
    #[arg(long, default_value_t = 5)]
    m_points: usize,
    /// Comma-separated k-means++ subsampling rates.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    rates: Vec<f64>,
    /// Comma-separated k-means++ replicate counts (clipped to 64).
    #[arg(long, value_delimiter = ',', default_value = "1")]
    replicates: Vec<usize>,
    #[arg(long, default_value = "adapted_radius")]
    law: RadiusLaw,
    #[arg(long, default_value_t = 2)]
    restarts: usize,
    #[arg(long)]
    out: PathBuf,
    /// Metadata sidecar; defaults to the output path with a .meta.json suffix.
    #[arg(long)]
    meta: Option<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        test_t: a.test_t,
        ..SynthSpec::new(a.k, a.n, a.t, a.seed)
    };
    let data = gen_gmm(&spec)?;
    io::save_dataset(&a.out, &data.train)?;
    if let (Some(path), Some(test)) = (&a.test_out, &data.test) {
        io::save_dataset(path, test)?;
    }
    if let Some(path) = &a.truth_out {
        let truth = TruthFile {
            k: a.k,
            n: a.n,
            seed: a.seed,
            means: data.means.to_rows(),
            train_labels: data.train_labels,
            test_labels: data.test_labels,
        };
        io::save_truth(path, &truth)?;
    }
    Ok(())
}

fn sketch(a: SketchArgs) -> Result<()> {
    let data = io::load_dataset(&a.input)?;
    let scale = match a.scale {
        Some(s) => s,
        None => estimate_scale_subsampled(&data, a.seed)?,
    };
    let freqs = draw_frequencies(data.dim(), a.m, a.law, scale, a.seed)?;
    let y = compute_sketch(&data, &freqs)?;
    io::save_sketch(&a.out, &y)
}

fn cluster(a: ClusterArgs) -> Result<()> {
    let y = io::load_sketch(&a.sketch)?;
    let freqs = y.frequencies()?;
    let config = EngineConfig {
        max_iters: a.max_iters,
        tol: a.tol,
        damping: a.damping,
        restarts: a.restarts,
        em_enabled: !a.no_em,
        seed: a.seed,
        ..EngineConfig::default()
    };
    let init = a
        .init
        .as_deref()
        .map(|p| io::load_centroids(p)?.centroids())
        .transpose()?;
    let out = engine::run(&y, &freqs, a.k, &config, init.as_ref())?;
    io::save_centroids(
        &a.out,
        &CentroidFile::new(&out.centroids, Some(out.hyper.clone())),
    )?;
    if let Some(path) = &a.json_trace {
        let mut w = create(path)?;
        out.diagnostics.write_trace(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn kmeans(a: KmeansArgs) -> Result<()> {
    let data = io::load_dataset(&a.input)?;
    let out = kmeans_pp(&data, a.k, a.replicates, a.rate, a.seed)?;
    io::save_centroids(&a.out, &CentroidFile::new(&out.centroids, None))
}

fn eval(a: EvalArgs) -> Result<()> {
    let centroids = io::load_centroids(&a.centroids)?.centroids()?;
    let train = io::load_dataset(&a.train)?;
    let start = Instant::now();
    let mut report = EvalReport {
        algorithm: a.algorithm,
        k: centroids.count(),
        n: centroids.dim(),
        t: train.len(),
        m_or_rate: a.m_or_rate,
        replicates: a.replicates,
        sse: sse(&train, &centroids)?,
        error_rate: f64::NAN,
        bayes_rate: f64::NAN,
        runtime_seconds: 0.0,
        sketch_seconds: 0.0,
        seed: a.seed,
    };
    if let (Some(test), Some(truth)) = (&a.test, &a.truth) {
        let test = io::load_dataset(test)?;
        let truth = io::load_truth(truth)?;
        let means = skcl::Centroids::from_rows(&truth.means)?;
        let score = classify_and_score(&test, &truth.test_labels, &centroids, &means)?;
        report.error_rate = score.error_rate;
        report.bayes_rate = score.bayes_rate;
    }
    report.runtime_seconds = start.elapsed().as_secs_f64();
    io::write_reports(&[report], std::io::stdout().lock(), a.header)
}

fn run_bench(a: BenchArgs) -> Result<()> {
    let spec = SweepSpec {
        test_t: a.test_t,
        m_grid: a
            .m_grid
            .unwrap_or_else(|| bench::default_m_grid(a.k, a.n, a.m_points)),
        kmeans_rates: a.rates,
        kmeans_replicates: a.replicates,
        trials: a.trials,
        seed: a.seed,
        radius_law: a.law,
        engine: EngineConfig {
            restarts: a.restarts,
            ..EngineConfig::default()
        },
        ..SweepSpec::new(a.k, a.n, a.t)
    };
    let rows = bench::run_sweep(&spec)?;
    let mut w = create(&a.out)?;
    io::write_reports(&rows, &mut w, true)?;
    w.flush()?;
    let meta_path = a.meta.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".meta.json");
        p.into()
    });
    let mut w = create(&meta_path)?;
    serde_json::to_writer_pretty(&mut w, &BenchMeta::new(&spec))?;
    w.flush()?;
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("SKCL_THREADS") else {
        return Ok(());
    };
    let threads: usize = v.parse().ok().filter(|&t| t > 0).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "SKCL_THREADS must be a positive integer, got {v:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidConfig(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Synth(a) => synth(a),
        Command::Sketch(a) => sketch(a),
        Command::Cluster(a) => cluster(a),
        Command::Kmeans(a) => kmeans(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => run_bench(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("skcl: {e}");
            ExitCode::FAILURE
        }
    }
}
