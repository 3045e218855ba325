//! Command-line pipeline around the fibervar library: synthesize fiber sets,
//! assemble Gram matrices, run the dictionary-learning clustering, evaluate
//! clusterings, and sweep kernel bandwidths.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors.

use clap::{Args, Parser, Subcommand};
use fibervar::evaluation::{adjusted_rand_index, silhouette, AssignmentSource, ClusterAssignment};
use fibervar::io::{
    load_fibers, load_gram, load_labels, load_result, save_fibers, save_gram, save_labels,
    save_result, ResultFile,
};
use fibervar::{
    compute_gram, cosine_angle, fit, hard_assign, nystrom_gram, FitConfig, KernelModel,
    KernelParams, SignalProfile, SyntheticBundleSpec,
};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fibervar", version, about = "Fiber clustering with functional-varifold kernels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic fiber set with planted bundle labels
    Synth(SynthArgs),
    /// Compute the pairwise Gram matrix for a fiber file
    Gram(GramArgs),
    /// Cluster a Gram matrix by dictionary learning with sparse coding
    Cluster(ClusterArgs),
    /// Score a clustering: silhouette, and ARI against planted labels
    Eval(EvalArgs),
    /// Sweep kernel bandwidths and report pairwise angles as CSV
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Number of bundles
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    bundles: u64,
    /// Fibers per bundle
    #[arg(long = "per-bundle", value_parser = clap::value_parser!(u64).range(1..))]
    per_bundle: u64,
    /// Vertices per fiber
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(2..))]
    points: u64,
    /// Std-dev (mm) of vertex jitter
    #[arg(long, default_value_t = 0.5)]
    jitter: f64,
    /// RNG seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-bundle signal profiles, comma separated:
    /// const:V | linear:START:END | bump:BASE:PEAK:CENTER:WIDTH
    #[arg(long = "signal-profiles")]
    signal_profiles: Option<String>,
    /// Per-bundle template-curve indices, comma separated; repeat an index to
    /// make two bundles share geometry
    #[arg(long = "geometry-templates")]
    geometry_templates: Option<String>,
    /// Output fiber file (JSON Lines)
    #[arg(short, long)]
    output: PathBuf,
    /// Output planted-labels file (defaults to `<output>.labels.json`)
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args)]
struct GramArgs {
    /// Kernel model: fvar | var | signal | mcp
    #[arg(long)]
    model: String,
    /// Spatial bandwidth lambda_w (mm)
    #[arg(long = "lambda-w", default_value_t = 7.0)]
    lambda_w: f64,
    /// Signal bandwidth lambda_m
    #[arg(long = "lambda-m", default_value_t = 0.01)]
    lambda_m: f64,
    /// RBF coefficient gamma for the MCP model
    #[arg(long, default_value_t = 0.007)]
    gamma: f64,
    /// Input fiber file
    #[arg(short, long)]
    input: PathBuf,
    /// Output Gram file
    #[arg(short, long)]
    output: PathBuf,
    /// Landmark count for the Nyström approximation (omit for exact)
    #[arg(long)]
    nystrom: Option<usize>,
    /// Landmark-sampling seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ClusterArgs {
    /// Input Gram file
    #[arg(short, long)]
    input: PathBuf,
    /// Output result file (JSON)
    #[arg(short, long)]
    output: PathBuf,
    /// Atom (bundle) count
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    m: u64,
    /// Sparsity bound per fiber
    #[arg(long = "s-max", default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    s_max: u64,
    /// Outer alternation cap
    #[arg(long = "max-iters", default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    max_iters: u64,
    /// Multiplicative dictionary-update steps per alternation
    #[arg(long = "dict-iters", default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..))]
    dict_iters: u64,
    /// Relative objective-decrease stopping tolerance
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Atom-initialization seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// Gram file the clustering was computed from
    #[arg(short, long)]
    gram: PathBuf,
    /// Result file from `cluster`
    #[arg(short, long)]
    result: PathBuf,
    /// Planted labels for an additional ARI score
    #[arg(long)]
    planted: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Input fiber file
    #[arg(short, long)]
    input: PathBuf,
    /// Kernel model: fvar | var | signal | mcp
    #[arg(long, default_value = "fvar")]
    model: String,
    /// Fiber index pairs, e.g. 0:1,2:3
    #[arg(long)]
    pairs: String,
    /// lambda_w grid (mm), comma separated
    #[arg(long = "lambda-w", default_value = "3,5,7,9,11")]
    lambda_w: String,
    /// lambda_m grid, comma separated
    #[arg(long = "lambda-m", default_value = "0.001,0.005,0.01,0.05,0.1")]
    lambda_m: String,
    /// RBF coefficient gamma for the MCP model
    #[arg(long, default_value_t = 0.007)]
    gamma: f64,
    /// Output CSV path (stdout when omitted)
    #[arg(short, long)]
    output: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn runtime<E: std::fmt::Display>(e: E) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth(args) => run_synth(args),
        Command::Gram(args) => run_gram(args),
        Command::Cluster(args) => run_cluster(args),
        Command::Eval(args) => run_eval(args),
        Command::Sweep(args) => run_sweep(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn parse_model(name: &str) -> Result<KernelModel, CliError> {
    KernelModel::parse(name)
        .ok_or_else(|| CliError::Usage(format!("unknown model '{name}' (fvar|var|signal|mcp)")))
}

fn parse_profile(text: &str) -> Result<SignalProfile, CliError> {
    let parts: Vec<&str> = text.split(':').collect();
    let num = |s: &str| -> Result<f64, CliError> {
        s.parse()
            .map_err(|_| CliError::Usage(format!("bad number '{s}' in profile '{text}'")))
    };
    match parts.as_slice() {
        ["const", v] => Ok(SignalProfile::Constant { value: num(v)? }),
        ["linear", a, b] => Ok(SignalProfile::Linear {
            start: num(a)?,
            end: num(b)?,
        }),
        ["bump", base, peak, center, width] => Ok(SignalProfile::Bump {
            base: num(base)?,
            peak: num(peak)?,
            center: num(center)?,
            width: num(width)?,
        }),
        _ => Err(CliError::Usage(format!(
            "bad profile '{text}' (const:V | linear:A:B | bump:BASE:PEAK:CENTER:WIDTH)"
        ))),
    }
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| CliError::Usage(format!("bad {what} entry '{s}'")))
        })
        .collect()
}

fn run_synth(args: SynthArgs) -> Result<(), CliError> {
    let bundles = args.bundles as usize;
    let mut spec = SyntheticBundleSpec::new(
        bundles,
        args.per_bundle as usize,
        args.points as usize,
        args.jitter,
        args.seed,
    );
    if let Some(text) = &args.signal_profiles {
        let profiles: Vec<SignalProfile> = text
            .split(',')
            .map(parse_profile)
            .collect::<Result<_, _>>()?;
        if profiles.len() != bundles {
            return Err(CliError::Usage(format!(
                "{} signal profiles for {bundles} bundles",
                profiles.len()
            )));
        }
        spec.signal_profiles = profiles;
    }
    if let Some(text) = &args.geometry_templates {
        let templates: Vec<usize> = parse_list(text, "geometry template")?;
        if templates.len() != bundles {
            return Err(CliError::Usage(format!(
                "{} geometry templates for {bundles} bundles",
                templates.len()
            )));
        }
        spec.geometry_templates = templates;
    }
    let (fibers, labels) = fibervar::synthesize(&spec).map_err(CliError::runtime)?;
    save_fibers(&args.output, &fibers).map_err(CliError::runtime)?;
    let labels_path = args.labels.unwrap_or_else(|| {
        let mut p = args.output.as_os_str().to_owned();
        p.push(".labels.json");
        PathBuf::from(p)
    });
    save_labels(&labels_path, &labels).map_err(CliError::runtime)?;
    eprintln!(
        "wrote {} fibers to {} (labels: {})",
        fibers.len(),
        args.output.display(),
        labels_path.display()
    );
    Ok(())
}

fn run_gram(args: GramArgs) -> Result<(), CliError> {
    let model = parse_model(&args.model)?;
    let params = KernelParams {
        lambda_w: args.lambda_w,
        lambda_m: args.lambda_m,
        gamma: args.gamma,
    };
    params.validate().map_err(CliError::Usage)?;
    let fibers = load_fibers(&args.input).map_err(CliError::runtime)?;
    let gram = match args.nystrom {
        Some(landmarks) => nystrom_gram(&fibers, model, &params, landmarks, args.seed)
            .map_err(CliError::runtime)?,
        None => compute_gram(&fibers, model, &params).map_err(CliError::runtime)?,
    };
    save_gram(&args.output, &gram).map_err(CliError::runtime)?;
    eprintln!(
        "wrote {}x{} {} Gram to {}",
        gram.n(),
        gram.n(),
        model,
        args.output.display()
    );
    Ok(())
}

fn run_cluster(args: ClusterArgs) -> Result<(), CliError> {
    let gram = load_gram(&args.input).map_err(CliError::runtime)?;
    let config = FitConfig {
        m: args.m as usize,
        s_max: args.s_max as usize,
        max_outer_iters: args.max_iters as usize,
        dict_update_iters: args.dict_iters as usize,
        objective_tolerance: args.tol,
        seed: args.seed,
    };
    let result = fit(&gram, &config).map_err(CliError::runtime)?;
    let labels = hard_assign(&result.codes).labels().to_vec();
    let file = ResultFile::from_fit(&result, labels, &config);
    save_result(&args.output, &file).map_err(CliError::runtime)?;
    eprintln!(
        "clustered {} fibers into {} atoms in {} iterations (objective {:.6})",
        file.n,
        file.m,
        result.iterations_run,
        result.objective_trace.last().unwrap()
    );
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<(), CliError> {
    let gram = load_gram(&args.gram).map_err(CliError::runtime)?;
    let result = load_result(&args.result).map_err(CliError::runtime)?;
    if result.n != gram.n() {
        return Err(CliError::Runtime(format!(
            "result holds {} fibers but the Gram matrix has {}",
            result.n,
            gram.n()
        )));
    }
    let assignment =
        ClusterAssignment::new(result.labels.clone(), result.m, AssignmentSource::ArgmaxOfCodes)
            .map_err(CliError::runtime)?;
    let report = silhouette(&gram, &assignment).map_err(CliError::runtime)?;
    let mut output = serde_json::json!({
        "mean_silhouette": report.mean,
        "per_cluster": report.per_cluster_mean,
        "n_unassigned": report.excluded,
    });
    if let Some(path) = &args.planted {
        let planted = load_labels(path).map_err(CliError::runtime)?;
        let planted = ClusterAssignment::from_planted(planted);
        let ari = adjusted_rand_index(&planted, &assignment).map_err(CliError::runtime)?;
        output["ari"] = serde_json::json!(ari);
    }
    println!("{}", serde_json::to_string_pretty(&output).unwrap());
    Ok(())
}

fn run_sweep(args: SweepArgs) -> Result<(), CliError> {
    let model = parse_model(&args.model)?;
    let pairs: Vec<(usize, usize)> = args
        .pairs
        .split(',')
        .map(|p| {
            let (a, b) = p
                .split_once(':')
                .ok_or_else(|| CliError::Usage(format!("bad pair '{p}' (use I:J)")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| CliError::Usage(format!("bad fiber index '{s}'")))
            };
            Ok((parse(a)?, parse(b)?))
        })
        .collect::<Result<_, CliError>>()?;
    let lambda_ws: Vec<f64> = parse_list(&args.lambda_w, "lambda_w")?;
    let lambda_ms: Vec<f64> = parse_list(&args.lambda_m, "lambda_m")?;

    let fibers = load_fibers(&args.input).map_err(CliError::runtime)?;
    for &(i, j) in &pairs {
        if i >= fibers.len() || j >= fibers.len() {
            return Err(CliError::Runtime(format!(
                "pair index {i}:{j} out of range for {} fibers",
                fibers.len()
            )));
        }
    }

    let mut csv = String::from("lambda_w,lambda_m,pair_id,angle_deg\n");
    for &lw in &lambda_ws {
        for &lm in &lambda_ms {
            let params = KernelParams {
                lambda_w: lw,
                lambda_m: lm,
                gamma: args.gamma,
            };
            params.validate().map_err(CliError::Usage)?;
            for (pair_id, &(i, j)) in pairs.iter().enumerate() {
                let angle = cosine_angle(&fibers[i], &fibers[j], model, &params)
                    .map_err(CliError::runtime)?;
                writeln!(csv, "{lw},{lm},{pair_id},{angle}").unwrap();
            }
        }
    }
    match &args.output {
        Some(path) => std::fs::write(path, csv).map_err(CliError::runtime)?,
        None => print!("{csv}"),
    }
    Ok(())
}
