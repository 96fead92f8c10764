use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spmagic::config::RunConfig;
use spmagic::data::io::{
    load_dataset, read_expression, read_expression_binary, read_labels_csv, write_dataset, write_expression_binary,
    write_expression_csv, write_matrix_market, ExprFormat,
};
use spmagic::data::ExpressionMatrix;
use spmagic::eval::{
    adjusted_rand_index, generate_synthetic, kmeans_cluster, run_benchmark, LabeledClustering, SpatialLayout,
    Strategy, SyntheticSpec,
};
use spmagic::pipeline::run_impute;
use spmagic::{Error, Result};

/// Failure class, mapped to the process exit code.
enum Failure {
    /// Invalid configuration or arguments; exit code 2.
    Usage(Error),
    /// Anything that fails after the configuration was accepted; exit code 1.
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter { .. } => Failure::Usage(e),
            other => Failure::Run(other),
        }
    }
}

type CliResult = std::result::Result<(), Failure>;

#[derive(Parser)]
#[command(name = "spmagic", version, about = "Spatial transcriptomics imputation by graph diffusion and spatial attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Impute a dataset and write the reconstructed matrix and model checkpoint.
    Impute(ImputeArgs),
    /// Write a synthetic labeled dataset.
    Simulate(SimulateArgs),
    /// Cluster a matrix with k-means and print its ARI against labels.
    Evaluate(EvaluateArgs),
    /// Compare imputation strategies by clustering ARI.
    Benchmark(BenchmarkArgs),
}

/// Tunables. Precedence is flag, then `--config` file, then default.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Config file of `key = value` lines using the key names below.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Highly variable genes kept (key hvg_count) [default: 3000]
    #[arg(long)]
    hvg_count: Option<usize>,
    /// Principal components for the neighbor graph (key pca_dims) [default: 100]
    #[arg(long)]
    pca_dims: Option<usize>,
    /// Neighbors defining the adaptive bandwidth (key knn_k) [default: 5]
    #[arg(long)]
    knn_k: Option<usize>,
    /// Neighbors kept per spot in the graph (key knn_max) [default: 15]
    #[arg(long)]
    knn_max: Option<usize>,
    /// Affinity kernel exponent (key alpha) [default: 1]
    #[arg(long)]
    alpha: Option<f64>,
    /// Diffusion steps (key diffusion_t) [default: 3]
    #[arg(long)]
    diffusion_t: Option<usize>,
    /// Spatial embedding width (key embed_dim) [default: 32]
    #[arg(long)]
    embed_dim: Option<usize>,
    /// Attention heads (key heads) [default: 2]
    #[arg(long)]
    heads: Option<usize>,
    /// Fraction of expression entries masked per batch (key mask_rate) [default: 0.2]
    #[arg(long)]
    mask_rate: Option<f64>,
    /// Spots per training batch (key batch_size) [default: 256]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam step size (key learning_rate) [default: 0.001]
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Training epochs (key epochs) [default: 50]
    #[arg(long)]
    epochs: Option<usize>,
    /// Root random seed (key seed) [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Use sequential reductions everywhere (key deterministic) [default: false]
    #[arg(long)]
    deterministic: bool,
    /// Keep attention weights at initialization (key freeze_attention) [default: false]
    #[arg(long)]
    freeze_attention: bool,
    /// Dropout between encoder layers (key dropout_rate) [default: 0.1]
    #[arg(long)]
    dropout_rate: Option<f64>,
    /// Landmark keys for attention, 0 for all spots (key landmarks) [default: 0]
    #[arg(long)]
    landmarks: Option<usize>,
    /// Worker threads, 0 for all cores (key threads) [default: 0]
    #[arg(long, env = "SPMAGIC_THREADS")]
    threads: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> std::result::Result<RunConfig, Failure> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_file(p).map_err(Failure::Usage)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { c.$f = v; })*};
        }
        set!(
            hvg_count,
            pca_dims,
            knn_k,
            knn_max,
            alpha,
            diffusion_t,
            embed_dim,
            heads,
            mask_rate,
            batch_size,
            learning_rate,
            epochs,
            seed,
            dropout_rate,
            landmarks,
            threads
        );
        c.deterministic |= self.deterministic;
        c.freeze_attention |= self.freeze_attention;
        c.validate().map_err(Failure::Usage)?;
        Ok(c)
    }
}

#[derive(Args)]
struct ImputeArgs {
    /// Expression matrix (CSV, or MatrixMarket with spots.txt and genes.txt).
    #[arg(long)]
    expr: PathBuf,
    /// Coordinates CSV with header spot_id,x,y.
    #[arg(long)]
    coords: PathBuf,
    /// Expression format; inferred from the extension when omitted.
    #[arg(long)]
    format: Option<ExprFormat>,
    /// Output directory for imputed matrix, checkpoint, and loss history.
    #[arg(long)]
    out: PathBuf,
    /// Write the imputed matrix in the compact binary format.
    #[arg(long)]
    binary: bool,
    /// Also write the transition matrix as MatrixMarket.
    #[arg(long, value_name = "PATH")]
    dump_operator: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 600)]
    n_spots: usize,
    #[arg(long, default_value_t = 100)]
    n_genes: usize,
    #[arg(long, default_value_t = 3)]
    n_clusters: usize,
    /// Marker genes are raised by a factor of 1 + separation.
    #[arg(long, default_value_t = 2.0)]
    separation: f64,
    /// Probability that an entry is zeroed.
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    /// `blocks` or `stripes`.
    #[arg(long, default_value = "blocks")]
    layout: SpatialLayout,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SimulateArgs {
    fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            n_spots: self.n_spots,
            n_genes: self.n_genes,
            n_clusters: self.n_clusters,
            cluster_separation: self.separation,
            dropout_rate: self.dropout,
            spatial_layout: self.layout,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    /// Matrix to cluster (CSV, MatrixMarket, or `.bin`).
    #[arg(long)]
    imputed: PathBuf,
    /// Labels CSV with header spot_id,label.
    #[arg(long)]
    labels: PathBuf,
    /// Cluster count; defaults to the number of distinct labels.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    format: Option<ExprFormat>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Expression matrix; when omitted a synthetic dataset is generated.
    #[arg(long, requires_all = ["coords", "labels"])]
    expr: Option<PathBuf>,
    #[arg(long)]
    coords: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    format: Option<ExprFormat>,
    /// Comma-separated strategies.
    #[arg(long, value_delimiter = ',', default_value = "raw,diffusion-only,attention-pca-fusion,full-hybrid")]
    strategies: Vec<Strategy>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    /// Output directory for benchmark.csv and benchmark.md.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    synthetic: SyntheticArgs,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SyntheticArgs {
    #[arg(long, default_value_t = 600)]
    sim_spots: usize,
    #[arg(long, default_value_t = 100)]
    sim_genes: usize,
    #[arg(long, default_value_t = 3)]
    sim_clusters: usize,
    #[arg(long, default_value_t = 2.0)]
    sim_separation: f64,
    #[arg(long, default_value_t = 0.5)]
    sim_dropout: f64,
    #[arg(long, default_value = "blocks")]
    sim_layout: SpatialLayout,
    #[arg(long, default_value_t = 0)]
    sim_seed: u64,
}

fn format_for(path: &Path, explicit: Option<ExprFormat>) -> ExprFormat {
    explicit.unwrap_or_else(|| ExprFormat::from_path(path))
}

fn read_matrix(path: &Path, format: Option<ExprFormat>) -> Result<ExpressionMatrix> {
    if format.is_none() && path.extension().is_some_and(|e| e == "bin") {
        return read_expression_binary(path);
    }
    read_expression(path, format_for(path, format))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn impute(args: &ImputeArgs) -> CliResult {
    let cfg = args.config.resolve()?;
    let data = load_dataset(&args.expr, &args.coords, None, format_for(&args.expr, args.format))?;
    let out = cfg.install(|| run_impute(&data, &cfg.to_pipeline()))??;
    create_dir(&args.out)?;
    if args.binary {
        write_expression_binary(&args.out.join("imputed.bin"), &out.imputed)?;
    } else {
        write_expression_csv(&args.out.join("imputed.csv"), &out.imputed)?;
    }
    out.checkpoint.save(&args.out.join("model.ckpt"))?;
    let mut loss = String::from("epoch,mean_loss\n");
    for (i, l) in out.loss_history.iter().enumerate() {
        loss += &format!("{},{l}\n", i + 1);
    }
    write_text(&args.out.join("loss.csv"), &loss)?;
    if let Some(p) = &args.dump_operator {
        write_matrix_market(p, &out.prepared.magic.operator.transition)?;
    }
    println!(
        "imputed {} spots x {} genes",
        out.imputed.n_spots(),
        out.imputed.n_genes()
    );
    println!("{}", out.timings);
    Ok(())
}

fn simulate(args: &SimulateArgs) -> CliResult {
    let data = generate_synthetic(&args.spec())?;
    create_dir(&args.out)?;
    write_dataset(&args.out, &data)?;
    println!(
        "wrote {} spots x {} genes to {}",
        data.n_spots(),
        data.expression.n_genes(),
        args.out.display()
    );
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> CliResult {
    let x = read_matrix(&args.imputed, args.format)?;
    let labels: HashMap<String, i64> = read_labels_csv(&args.labels)?.into_iter().collect();
    let aligned = x
        .spot_ids()
        .iter()
        .map(|id| {
            labels
                .get(id)
                .copied()
                .ok_or_else(|| Error::Alignment(format!("spot `{id}` has no label")))
        })
        .collect::<Result<Vec<i64>>>()?;
    let truth = LabeledClustering::from_values(&aligned);
    let k = args.k.unwrap_or(truth.k());
    let result = kmeans_cluster(x.to_dense_array().view(), k, args.seed, spmagic::eval::benchmark::KMEANS_RESTARTS)?;
    println!("ari={}", adjusted_rand_index(&result.clustering, &truth)?);
    Ok(())
}

fn benchmark(args: &BenchmarkArgs) -> CliResult {
    let cfg = args.config.resolve()?;
    let data = match (&args.expr, &args.coords, &args.labels) {
        (Some(e), Some(c), Some(l)) => load_dataset(e, c, Some(l), format_for(e, args.format))?,
        _ => {
            let s = &args.synthetic;
            generate_synthetic(&SyntheticSpec {
                n_spots: s.sim_spots,
                n_genes: s.sim_genes,
                n_clusters: s.sim_clusters,
                cluster_separation: s.sim_separation,
                dropout_rate: s.sim_dropout,
                spatial_layout: s.sim_layout,
                seed: s.sim_seed,
            })?
        }
    };
    let report = cfg.install(|| run_benchmark(&data, &args.strategies, &cfg.to_pipeline(), &args.seeds))??;
    create_dir(&args.out)?;
    write_text(&args.out.join("benchmark.csv"), &report.to_csv())?;
    write_text(&args.out.join("benchmark.md"), &report.to_markdown())?;
    for s in &report.strategies {
        println!("{:22} mean ARI {:.4}", s.name(), report.mean_ari(*s).unwrap_or(f64::NAN));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Impute(a) => impute(a),
        Command::Simulate(a) => simulate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Benchmark(a) => benchmark(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
