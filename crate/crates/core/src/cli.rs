//! The `noisycf` command line: ingest, evaluate, sweep, significance.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::baselines::{CorrelationPredictor, PersonalityDiagnosis};
use crate::config::{Algorithm, PairPriorKind, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{
    paired_significance, plan_protocol, read_records, run_protocol, sweep, write_records,
    write_sweep, AlgorithmRun, EvalReport, PredictionRecord, RatingPredictor, ReportOptions,
    SweepCell, DEFAULT_PERMUTATIONS, DEFAULT_SAMPLES,
};
use crate::predictor::{NoisySensorPredictor, Variant};
use crate::ratings::{
    load_ratings, pair_prior, split_users, write_triples, LoadedRatings, PairPrior, Rating,
    RatingScale, RatingsMatrix, SplitSpec, TestUser,
};
use crate::seed::{self, Stream};

#[derive(Debug, Parser)]
#[command(
    name = "noisycf",
    version,
    about = "Noisy-sensor collaborative filtering experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a ratings file and write it as normalized `user item rating` triples.
    Ingest(IngestArgs),
    /// Score algorithms under test protocols and write report + records.
    Evaluate(RunArgs),
    /// MAE over a grid of (max user sensors, max item sensors).
    Sweep(SweepArgs),
    /// Paired randomization test between two prediction record sets.
    Significance(SignificanceArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 1)]
    scale_min: Rating,
    #[arg(long, default_value_t = 5)]
    scale_max: Rating,
    /// Also write `users.tsv` / `items.tsv` (external → internal id) here.
    #[arg(long)]
    id_maps: Option<PathBuf>,
}

/// Flags mirroring [`RunConfig`]; any flag given overrides the config file.
#[derive(Debug, Args)]
struct RunArgs {
    /// TOML run description.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    scale_min: Option<Rating>,
    #[arg(long)]
    scale_max: Option<Rating>,
    /// Comma-separated: noisy1, noisy2, pd, correlation.
    #[arg(long, value_delimiter = ',')]
    algorithms: Option<Vec<String>>,
    /// Comma-separated: allbut1, given2, given5, ...
    #[arg(long, value_delimiter = ',')]
    protocols: Option<Vec<String>>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long, short = 'u')]
    u: Option<usize>,
    #[arg(long, short = 'i')]
    i: Option<usize>,
    #[arg(long)]
    min_corated_noisy1: Option<usize>,
    #[arg(long)]
    min_corated_noisy2: Option<usize>,
    #[arg(long)]
    sigma2_floor: Option<f64>,
    /// marginal | empirical
    #[arg(long)]
    pair_prior: Option<String>,
    #[arg(long)]
    pair_sample_size: Option<usize>,
    #[arg(long)]
    pd_sigma: Option<f64>,
    #[arg(long)]
    pd_prior_mix: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    permutations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value = "noisy2")]
    variant: String,
    /// Protocol to sweep; defaults to the first configured one.
    #[arg(long)]
    protocol: Option<String>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0,10,20,30,40,50,60,70,80,90,100"
    )]
    u_grid: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,10,20")]
    i_grid: Vec<usize>,
}

#[derive(Debug, Args)]
struct SignificanceArgs {
    records_a: PathBuf,
    records_b: PathBuf,
    #[arg(long)]
    algorithm_a: Option<String>,
    #[arg(long)]
    algorithm_b: Option<String>,
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = DEFAULT_PERMUTATIONS)]
    permutations: usize,
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => cmd_ingest(&a),
        Command::Evaluate(a) => resolve(&a).and_then(|cfg| cmd_evaluate(&cfg)),
        Command::Sweep(a) => cmd_sweep_args(&a),
        Command::Significance(a) => cmd_significance(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("noisycf: {e}");
            e.exit_code()
        }
    }
}

fn resolve(a: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = &a.$field {
                cfg.$field = v.clone().into();
            }
        )*};
    }
    set!(
        dataset,
        scale_min,
        scale_max,
        protocols,
        train_fraction,
        k,
        u,
        i,
        min_corated_noisy1,
        min_corated_noisy2,
        sigma2_floor,
        pair_sample_size,
        pd_sigma,
        pd_prior_mix,
        samples,
        permutations,
        seed,
        output_dir,
        threads
    );
    if let Some(algs) = &a.algorithms {
        cfg.algorithms = algs.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    }
    if let Some(p) = &a.pair_prior {
        cfg.pair_prior = match p.as_str() {
            "marginal" => PairPriorKind::Marginal,
            "empirical" => PairPriorKind::Empirical,
            _ => return Err(Error::Config(format!("unknown pair prior `{p}`"))),
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(f),
    }
}

fn cmd_ingest(a: &IngestArgs) -> Result<()> {
    let scale =
        RatingScale::range(a.scale_min, a.scale_max).map_err(|e| Error::Config(e.to_string()))?;
    let loaded = load_ratings(BufReader::new(File::open(&a.input)?), &scale)?;
    let mut buf = Vec::new();
    write_triples(&loaded, &mut buf)?;
    let mut maps = Vec::new();
    if a.id_maps.is_some() {
        let (mut users, mut items) = (Vec::new(), Vec::new());
        loaded.users.write_to(&mut users)?;
        loaded.items.write_to(&mut items)?;
        maps.push(("users.tsv", users));
        maps.push(("items.tsv", items));
    }
    write_file(&a.output, &buf)?;
    if let Some(dir) = &a.id_maps {
        fs::create_dir_all(dir)?;
        for (name, bytes) in maps {
            write_file(&dir.join(name), &bytes)?;
        }
    }
    println!(
        "{} ratings, {} users, {} items",
        loaded.matrix.n_entries(),
        loaded.users.len(),
        loaded.items.len()
    );
    Ok(())
}

/// A loaded dataset split into training matrix and held-out test users.
pub struct Experiment {
    pub loaded: LoadedRatings,
    pub train: RatingsMatrix,
    pub test_users: Vec<TestUser>,
    pub global_mean: f64,
    pub pair_prior: PairPrior,
    pub seed: u64,
}

impl Experiment {
    pub fn prepare(cfg: &RunConfig) -> Result<Self> {
        let seed = cfg.seed()?;
        let path = cfg
            .dataset
            .as_ref()
            .ok_or_else(|| Error::Config("no dataset given".into()))?;
        let loaded = load_ratings(BufReader::new(File::open(path)?), &cfg.scale()?)?;
        let split_seed = seed::derive(seed, Stream::UserSplit, &[]);
        let (train, test_users) = split_users(&loaded.matrix, cfg.train_fraction, split_seed)?;
        let global_mean = train.mean_rating().ok_or(Error::EmptyTraining)?;
        let pair_prior = pair_prior(
            &train,
            cfg.pair_prior_mode(),
            seed::derive(seed, Stream::PairSample, &[]),
        )?;
        Ok(Self {
            loaded,
            train,
            test_users,
            global_mean,
            pair_prior,
            seed,
        })
    }

    /// Runs `f` with the predictor for `alg` configured per `cfg`.
    pub fn with_predictor<T>(
        &self,
        cfg: &RunConfig,
        alg: Algorithm,
        f: impl FnOnce(&dyn RatingPredictor) -> Result<T>,
    ) -> Result<T> {
        match alg {
            Algorithm::Noisy1 | Algorithm::Noisy2 => {
                let variant = alg.variant().expect("noisy algorithm");
                let p = NoisySensorPredictor::new(
                    &self.train,
                    &self.pair_prior,
                    cfg.predictor_config(variant),
                )?;
                f(&p)
            }
            Algorithm::Pd => f(&PersonalityDiagnosis::with_prior_mix(
                &self.train,
                cfg.pd_sigma,
                cfg.pd_prior_mix,
            )?),
            Algorithm::Correlation => f(&CorrelationPredictor::new(&self.train)?),
        }
    }
}

/// Runs every configured algorithm under every protocol on shared splits.
pub fn evaluate(cfg: &RunConfig) -> Result<(EvalReport, Vec<AlgorithmRun>)> {
    cfg.validate()?;
    in_pool(cfg.threads, || {
        let exp = Experiment::prepare(cfg)?;
        let mut runs = Vec::new();
        for spec in cfg.protocol_specs()? {
            for &alg in &cfg.algorithms {
                let run = exp.with_predictor(cfg, alg, |p| {
                    run_protocol(&exp.train, &exp.test_users, spec, p, exp.seed)
                })?;
                runs.push(AlgorithmRun {
                    algorithm: alg.to_string(),
                    run,
                });
            }
        }
        let report = EvalReport::build(
            &runs,
            ReportOptions {
                seed: exp.seed,
                global_mean: exp.global_mean,
                n_samples: cfg.samples,
                permutations: cfg.permutations,
            },
        )?;
        Ok((report, runs))
    })
}

fn output_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("results"))
}

/// Evaluates and writes `report.txt`, `report.json`, `records.tsv` and the
/// resolved `run.toml`. Nothing is written unless every step succeeds.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let (report, runs) = evaluate(cfg)?;
    let table = report.to_table();
    let mut records = Vec::new();
    write_records(&runs, &mut records)?;

    let dir = output_dir(cfg);
    fs::create_dir_all(&dir)?;
    write_file(&dir.join("report.txt"), table.as_bytes())?;
    write_file(&dir.join("report.json"), report.to_json().as_bytes())?;
    write_file(&dir.join("records.tsv"), &records)?;
    write_file(&dir.join("run.toml"), cfg.to_toml().as_bytes())?;
    print!("{table}");
    Ok(())
}

/// Sweeps `(U, I)` for one noisy variant under one protocol.
pub fn run_sweep(
    cfg: &RunConfig,
    variant: Variant,
    spec: SplitSpec,
    user_grid: &[usize],
    item_grid: &[usize],
) -> Result<Vec<SweepCell>> {
    cfg.validate()?;
    in_pool(cfg.threads, || {
        let exp = Experiment::prepare(cfg)?;
        let predictor =
            NoisySensorPredictor::new(&exp.train, &exp.pair_prior, cfg.predictor_config(variant))?;
        let plan = plan_protocol(&exp.test_users, spec, exp.seed);
        sweep(&exp.train, &plan, &predictor, user_grid, item_grid)
    })
}

fn cmd_sweep_args(a: &SweepArgs) -> Result<()> {
    let cfg = resolve(&a.run)?;
    let variant: Variant = a.variant.parse()?;
    let spec = match &a.protocol {
        Some(p) => p.parse()?,
        None => cfg.protocol_specs()?[0],
    };
    let cells = run_sweep(&cfg, variant, spec, &a.u_grid, &a.i_grid)?;
    let mut buf = Vec::new();
    write_sweep(&cells, &mut buf)?;
    let dir = output_dir(&cfg);
    fs::create_dir_all(&dir)?;
    write_file(&dir.join("sweep.tsv"), &buf)?;
    std::io::stdout().write_all(&buf)?;
    Ok(())
}

fn select(
    path: &Path,
    algorithm: Option<&str>,
    protocol: Option<&str>,
) -> Result<(String, Vec<PredictionRecord>)> {
    let tagged = read_records(BufReader::new(File::open(path)?))?;
    let kept: Vec<_> = tagged
        .into_iter()
        .filter(|t| algorithm.is_none_or(|a| t.algorithm == a))
        .filter(|t| protocol.is_none_or(|p| t.protocol.eq_ignore_ascii_case(p)))
        .collect();
    let Some(first) = kept.first() else {
        return Err(Error::MismatchedRecords(format!(
            "{}: no matching records",
            path.display()
        )));
    };
    let group = (first.algorithm.clone(), first.protocol.clone());
    if kept
        .iter()
        .any(|t| (&t.algorithm, &t.protocol) != (&group.0, &group.1))
    {
        return Err(Error::Config(format!(
            "{} holds several algorithm/protocol groups; pick one with --algorithm-a/-b and --protocol",
            path.display()
        )));
    }
    Ok((group.0, kept.into_iter().map(|t| t.record).collect()))
}

fn cmd_significance(a: &SignificanceArgs) -> Result<()> {
    let protocol = a.protocol.as_deref();
    let (name_a, ra) = select(&a.records_a, a.algorithm_a.as_deref(), protocol)?;
    let (name_b, rb) = select(&a.records_b, a.algorithm_b.as_deref(), protocol)?;
    let (ab, ba) = paired_significance(&ra, &rb, a.samples, a.permutations, a.seed)?;
    println!("{name_a} vs {name_b}\t{ab}");
    println!("{name_b} vs {name_a}\t{ba}");
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}
