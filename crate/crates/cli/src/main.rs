use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use ctxgcn::baselines::OperatorMode;
use ctxgcn::data::{chunk_all, load_sequences, save_sequences, synthesize_task, SynthConfig};
use ctxgcn::oracle::{pipeline_gradcheck, GradcheckCase};
use ctxgcn::reparam::gamma_lower_bound;
use ctxgcn::train::{
    evaluate, load_artifact, load_training_data, metrics_line, run_ablation_grid, save_artifact, train,
    AblationGrid, MetricsWriter, TrainConfig,
};
use ctxgcn::{ConstraintKind, Error};

#[derive(Parser, Debug)]
#[command(name = "ctxgcn", version, about = "Graph convolution with learned context matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model and stream per-epoch metrics.
    Train(TrainArgs),
    /// Loss and macro accuracy of a saved model on a sequence file.
    Eval(EvalArgs),
    /// Train every cell of a mode × constraint × K grid.
    Ablate(AblateArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Smallest inverse temperature that guarantees ε-orthogonality.
    Bound(BoundArgs),
    /// Turn sequences into per-node chunk descriptors.
    Chunk(ChunkArgs),
    /// Write a synthetic train/test pair.
    Synth(SynthArgs),
}

macro_rules! config_flags {
    ($($field:ident),* $(,)?) => {
        /// One flag per configuration key; values use the config-file syntax.
        #[derive(Args, Debug, Default)]
        struct ConfigFlags {
            $(
                #[arg(long, value_name = "VALUE", help_heading = "Configuration")]
                $field: Option<String>,
            )*
        }

        impl ConfigFlags {
            fn pairs(&self) -> Vec<(&'static str, Option<&str>)> {
                vec![$((stringify!($field), self.$field.as_deref())),*]
            }
        }
    };
}

config_flags!(
    epochs,
    batch_size,
    momentum,
    lr0,
    lr_factor,
    constraint,
    mode,
    k,
    gamma_base,
    eps,
    delta,
    anneal,
    noise_std,
    noise_policy,
    m,
    channels,
    activation,
    differential,
    init_std,
    leader_gap,
    skeleton,
    dry_run,
    checkpoint_every,
    train_path,
    test_path,
    fold_path,
    train_fraction,
    metrics_path,
    artifact_path,
    checkpoint_path,
);

#[derive(Args, Debug)]
struct TrainArgs {
    /// Flat `key = value` configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    base: TrainArgs,
    /// Comma-separated operator modes.
    #[arg(long, value_delimiter = ',', default_value = "hpm,lpm,ours")]
    modes: Vec<String>,
    /// Comma-separated constraints.
    #[arg(long, value_delimiter = ',', default_value = "none,sym,orth,stc,sym+orth,orth+stc")]
    kinds: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1,4,8")]
    ks: Vec<usize>,
    /// Write the table as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value = "orth+stc")]
    spec: String,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 5)]
    n: usize,
    /// Restrict to one operator mode (all three by default).
    #[arg(long)]
    mode: Option<String>,
    /// Restrict to one differential setting (both by default).
    #[arg(long)]
    differential: Option<bool>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct BoundArgs {
    #[arg(long)]
    k: usize,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    eps: f64,
}

#[derive(Args, Debug)]
struct ChunkArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 8)]
    m: usize,
    /// Standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 12)]
    nodes: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 40)]
    samples_per_class: usize,
    #[arg(long, default_value_t = 1)]
    hidden_seed: u64,
    #[arg(long, default_value_t = 0.0)]
    noise_std: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

enum Failure {
    Core(Error),
    /// Message plus exit code for failures that are not library errors.
    Other(String, u8),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Constraint(_) | Error::Domain(_) => 1,
        Error::Parse { .. }
        | Error::Io(_)
        | Error::Split(_)
        | Error::Input(_)
        | Error::Dimension { .. }
        | Error::IsolatedNode(_) => 2,
        Error::Divergence { .. } | Error::NonFinite(_) | Error::State(_) => 3,
    }
}

fn build_config(args: &TrainArgs) -> Result<TrainConfig, Error> {
    let mut cfg = match &args.config {
        Some(path) => TrainConfig::from_kv(&fs::read_to_string(path).map_err(Error::io_at(path))?)?,
        None => TrainConfig::default(),
    };
    for (key, value) in args.flags.pairs() {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    cfg.seed = args.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run_train(args: &TrainArgs) -> Result<(), Failure> {
    let cfg = build_config(args)?;
    let (train_set, test_set) = load_training_data(&cfg)?;
    let joints = train_set
        .joints()
        .ok_or_else(|| Error::Input("training set is empty".into()))?;
    let skeleton = cfg.skeleton.build(joints)?;

    let mut file_sink = match &cfg.metrics_path {
        Some(p) => Some(MetricsWriter::create(Path::new(p))?),
        None => None,
    };
    let stdout = io::stdout();
    let outcome = train(&cfg, &skeleton, &train_set, Some(&test_set), &mut |view| {
        match &mut file_sink {
            Some(w) => w.write(view.metrics),
            None => {
                let mut out = stdout.lock();
                out.write_all(metrics_line(view.metrics).as_bytes())?;
                out.flush()?;
                Ok(())
            }
        }
    })?;
    if let Some(path) = &cfg.artifact_path {
        save_artifact(Path::new(path), &outcome.artifact(&cfg, &train_set.vocab))?;
        info!("model written to {path}");
    }
    Ok(())
}

fn run_eval(args: &EvalArgs) -> Result<(), Failure> {
    let artifact = load_artifact(&args.model)?;
    let data = load_sequences(&args.data, Some(&artifact.vocab))?;
    let (loss, acc) = evaluate(&artifact, &data)?;
    println!("{}", serde_json::json!({ "loss": loss, "macro_accuracy": acc, "samples": data.len() }));
    Ok(())
}

fn parse_list<T: std::str::FromStr<Err = Error>>(items: &[String]) -> Result<Vec<T>, Error> {
    items.iter().map(|s| s.parse()).collect()
}

fn run_ablate(args: &AblateArgs) -> Result<(), Failure> {
    let base = build_config(&args.base)?;
    let grid = AblationGrid {
        modes: parse_list::<OperatorMode>(&args.modes)?,
        kinds: parse_list::<ConstraintKind>(&args.kinds)?,
        ks: args.ks.clone(),
    };
    if grid.ks.contains(&0) {
        return Err(Error::Constraint("operator count K must be at least 1".into()).into());
    }
    let (train_set, test_set) = load_training_data(&base)?;
    let joints = train_set
        .joints()
        .ok_or_else(|| Error::Input("training set is empty".into()))?;
    let skeleton = base.skeleton.build(joints)?;
    let table = run_ablation_grid(&base, &grid, &skeleton, &train_set, &test_set)?;
    print!("{}", table.render());
    if let Some(path) = &args.out {
        let text = serde_json::to_string_pretty(&table.to_json()).expect("table serializes");
        fs::write(path, text + "\n")?;
    }
    Ok(())
}

fn run_gradcheck(args: &GradcheckArgs) -> Result<(), Failure> {
    let kind: ConstraintKind = args.spec.parse()?;
    let modes = match &args.mode {
        Some(m) => vec![m.parse::<OperatorMode>()?],
        None => OperatorMode::ALL.to_vec(),
    };
    let diffs = match args.differential {
        Some(d) => vec![d],
        None => vec![false, true],
    };
    let mut worst: f64 = 0.0;
    let mut failed = 0;
    for (i, &mode) in modes.iter().enumerate() {
        for (j, &differential) in diffs.iter().enumerate() {
            let case = GradcheckCase {
                mode,
                kind,
                k: args.k,
                n: args.n,
                differential,
                seed: args.seed.wrapping_add((2 * i + j) as u64),
            };
            let r = pipeline_gradcheck(case)?;
            worst = worst.max(r.max_error);
            if !r.ok {
                failed += 1;
            }
            println!(
                "{} mode={mode} spec={kind} k={} n={} differential={differential} max_error={:.3e} worst={} checked={}",
                if r.ok { "PASS" } else { "FAIL" },
                args.k,
                args.n,
                r.max_error,
                r.worst_block,
                r.checked
            );
        }
    }
    println!("max_error={worst:.3e}");
    if failed > 0 {
        return Err(Failure::Other(format!("{failed} gradient check(s) failed"), 3));
    }
    Ok(())
}

fn run_bound(args: &BoundArgs) -> Result<(), Failure> {
    println!("{}", gamma_lower_bound(args.k, args.delta, args.eps)?);
    Ok(())
}

fn run_chunk(args: &ChunkArgs) -> Result<(), Failure> {
    let data = load_sequences(&args.input, None)?;
    let signals = chunk_all(&data.sequences, args.m)?;
    let mut out = output(args.output.as_deref())?;
    for (seq, u) in data.sequences.iter().zip(&signals) {
        let m = u.matrix();
        let rows: Vec<&[f64]> = (0..m.rows()).map(|r| m.row(r)).collect();
        let record = serde_json::json!({
            "format": 1,
            "label": data.vocab[seq.label],
            "descriptor": rows,
        });
        writeln!(out, "{record}")?;
    }
    out.flush()?;
    Ok(())
}

fn run_synth(args: &SynthArgs) -> Result<(), Failure> {
    let task = synthesize_task(&SynthConfig {
        n_nodes: args.nodes,
        n_classes: args.classes,
        samples_per_class: args.samples_per_class,
        hidden_adjacency_seed: args.hidden_seed,
        noise_std: args.noise_std,
        seed: args.seed,
        ..SynthConfig::default()
    })?;
    fs::create_dir_all(&args.out_dir)?;
    save_sequences(&args.out_dir.join("train.jsonl"), &task.train)?;
    save_sequences(&args.out_dir.join("test.jsonl"), &task.test)?;
    let hidden = serde_json::json!({ "nodes": task.hidden.n(), "edges": task.hidden.edges() });
    fs::write(args.out_dir.join("hidden.json"), format!("{hidden}\n"))?;
    println!(
        "wrote {} train and {} test sequences to {}",
        task.train.len(),
        task.test.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Ablate(a) => run_ablate(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::Bound(a) => run_bound(a),
        Command::Chunk(a) => run_chunk(a),
        Command::Synth(a) => run_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Other(msg, code)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
