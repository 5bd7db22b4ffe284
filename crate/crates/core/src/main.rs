use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use jscn::data::{
    domain_from_edges, edge_stats, filter_min_interactions, generate_synthetic, load_ratings, to_implicit,
    align_shared_users, DatasetBundle, SynthSpec,
};
use jscn::eval::DEFAULT_KS;
use jscn::graph::{build_feedback_matrix, build_laplacian, eigendecompose_with_cap, DEFAULT_SPECTRUM_CAP};
use jscn::model::MappingKind;
use jscn::runner::{run_training, RunConfig, TrainedModel, Variant};
use jscn::training::gradcheck::{gradient_check, GradCheckOptions};
use jscn::error::file_err;
use jscn::{JscnError, Result};

#[derive(Parser)]
#[command(name = "jscn", version, about = "Joint spectral convolutional network for cross-domain recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Size and sparsity of rating files after filtering
    Stats(StatsArgs),
    /// Generate a synthetic multi-domain bundle
    Synth(SynthArgs),
    /// Eigendecompose one domain and cache the spectrum
    Spectrum(SpectrumArgs),
    /// Train a model
    Train(TrainArgs),
    /// Evaluate a checkpoint on a bundle
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct StatsArgs {
    /// Rating CSV; the first is the target, repeat for sources
    #[arg(long, required_unless_present = "bundle")]
    input: Vec<PathBuf>,
    /// Bundle directory instead of rating files
    #[arg(long, conflicts_with = "input")]
    bundle: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    min_degree: usize,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON generator spec; defaults apply to missing fields
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SpectrumArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    min_degree: usize,
    #[arg(long, default_value_t = DEFAULT_SPECTRUM_CAP)]
    cap: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Bundle directory (train on its target train split and sources)
    #[arg(long, conflicts_with_all = ["target", "source"])]
    bundle: Option<PathBuf>,
    /// Target rating CSV, split per user into train and test
    #[arg(long)]
    target: Option<PathBuf>,
    /// Source rating CSV (repeatable)
    #[arg(long)]
    source: Vec<PathBuf>,
    /// Write the bundle derived from --target/--source here
    #[arg(long)]
    bundle_out: Option<PathBuf>,
    /// JSON run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch JSON-lines loss log
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    variant: Option<Variant>,
    /// Cross-domain loss weight
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    bundle: PathBuf,
    /// Cutoffs, comma separated
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    /// Also write the JSON report here
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-user metrics CSV
    #[arg(long)]
    per_user: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// linear, mlp, or both
    #[arg(long, default_value = "both")]
    mapping: String,
    /// Adds this to the first analytic coordinate (fault injection)
    #[arg(long, hide = true)]
    perturb: Option<f64>,
}

/// Outcome of a subcommand that ran to completion.
enum Outcome {
    Ok,
    Failed,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("JSCN_LOG_LEVEL", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Stats(a) => cmd_stats(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Spectrum(a) => cmd_spectrum(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

/// Pretty JSON with sorted keys and a trailing newline.
fn to_json(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON value serializes");
    s.push('\n');
    s
}

fn print_json(v: &Value) {
    print!("{}", to_json(v));
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(file_err(path))
}

fn shared_counts(names: &[String], shared: &jscn::training::SharedUserIndex) -> Value {
    let pairs: Vec<Value> = shared
        .unordered()
        .map(|(m, n, rows)| json!({ "domains": [names[m], names[n]], "users": rows.len() }))
        .collect();
    Value::Array(pairs)
}

fn cmd_stats(a: StatsArgs) -> Result<Outcome> {
    let (graphs, names) = match &a.bundle {
        Some(dir) => {
            let b = DatasetBundle::read_dir(dir)?;
            let names = b.domain_names();
            (b.domains().into_iter().cloned().collect::<Vec<_>>(), names)
        }
        None => {
            let mut graphs = Vec::new();
            for p in &a.input {
                let edges = filter_min_interactions(&to_implicit(&load_ratings(p)?), a.min_degree)?;
                graphs.push(domain_from_edges(&edges, &p.display().to_string())?);
            }
            let names = (0..graphs.len())
                .map(|k| if k == 0 { "target".to_string() } else { format!("source_{}", k - 1) })
                .collect();
            (graphs, names)
        }
    };
    let shared = align_shared_users(&graphs);
    let stats: Vec<Value> = graphs
        .iter()
        .zip(&names)
        .map(|(g, name)| {
            let edges = g
                .edges()
                .iter()
                .map(|&(u, i)| (g.users()[u].clone(), g.items()[i].clone()))
                .collect();
            let mut v = serde_json::to_value(edge_stats(&edges)).expect("stats serialize");
            v["name"] = json!(name);
            v["category"] = json!(g.category());
            v
        })
        .collect();
    let mut out = stats[0].clone();
    out["sources"] = Value::Array(stats[1..].to_vec());
    out["shared_counts"] = shared_counts(&names, &shared);
    print_json(&out);
    Ok(Outcome::Ok)
}

fn cmd_synth(a: SynthArgs) -> Result<Outcome> {
    let spec: SynthSpec = match &a.spec {
        Some(p) => serde_json::from_str(&read_text(p)?).map_err(|e| JscnError::Config(format!("spec: {e}")))?,
        None => SynthSpec::default(),
    };
    let bundle = generate_synthetic(&spec, a.seed)?;
    bundle.write_dir(&a.out)?;
    let names = bundle.domain_names();
    let domains: Vec<Value> = bundle
        .domains()
        .iter()
        .zip(&names)
        .map(|(d, n)| json!({ "name": n, "n_users": d.n_users(), "n_items": d.n_items(), "n_edges": d.edges().len(), "sparsity": d.sparsity() }))
        .collect();
    print_json(&json!({
        "out": a.out.display().to_string(),
        "domains": domains,
        "n_test_edges": bundle.target_test.len(),
        "shared_counts": shared_counts(&names, &bundle.shared),
    }));
    Ok(Outcome::Ok)
}

fn cmd_spectrum(a: SpectrumArgs) -> Result<Outcome> {
    let edges = filter_min_interactions(&to_implicit(&load_ratings(&a.input)?), a.min_degree)?;
    let category = a.input.display().to_string();
    let domain = domain_from_edges(&edges, &category)?;
    let lap = build_laplacian(&build_feedback_matrix(&domain))?;
    let spectrum = eigendecompose_with_cap(&lap, a.cap)?;
    spectrum.save(&a.out, &category)?;
    let ev = &spectrum.eigenvalues;
    print_json(&json!({
        "n": spectrum.n(),
        "n_users": domain.n_users(),
        "n_items": domain.n_items(),
        "min_eigenvalue": ev[0],
        "max_eigenvalue": ev[ev.len() - 1],
        "out": a.out.display().to_string(),
    }));
    Ok(Outcome::Ok)
}

fn cmd_train(a: TrainArgs) -> Result<Outcome> {
    let mut rc = match &a.config {
        Some(p) => RunConfig::from_json(&read_text(p)?, a.seed.is_some())?,
        None => {
            if a.seed.is_none() {
                return Err(JscnError::Config("a seed is required: pass --seed or set it in --config".into()));
            }
            RunConfig::default()
        }
    };
    if let Some(s) = a.seed {
        rc.train.seed = s;
    }
    if let Some(e) = a.epochs {
        rc.train.epochs = e;
    }
    if let Some(v) = a.variant {
        rc.variant = v;
    }
    if let Some(mu) = a.mu {
        rc.train.cross_weight = mu;
    }
    if let Some(lr) = a.learning_rate {
        rc.train.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        rc.train.batch_size = b;
    }
    if let Some(t) = a.threads {
        rc.train.threads = t;
    }
    if a.bundle.is_some() {
        rc.bundle = a.bundle.clone();
    }
    if a.target.is_some() {
        rc.target = a.target.clone();
        rc.sources = a.source.clone();
        rc.bundle = None;
    }

    let bundle = match (&rc.bundle, &rc.target) {
        (Some(dir), _) => DatasetBundle::read_dir(dir)?,
        (None, Some(t)) => DatasetBundle::from_csv(t, &rc.sources, rc.min_degree, rc.test_fraction, rc.train.seed)?,
        (None, None) => return Err(JscnError::Config("give --bundle or --target".into())),
    };
    if let Some(dir) = &a.bundle_out {
        bundle.write_dir(dir)?;
    }
    log::info!(
        "training {:?} on {} domain(s), seed {}",
        rc.variant,
        if rc.variant == Variant::SingleDomain { 1 } else { 1 + bundle.sources.len() },
        rc.train.seed
    );
    let mut log_file = match &a.log {
        Some(p) => Some(BufWriter::new(File::create(p).map_err(file_err(p))?)),
        None => None,
    };
    let (model, history) = run_training(&bundle, &rc, log_file.as_mut().map(|w| w as &mut dyn Write))?;
    if let Some(mut w) = log_file {
        w.flush()?;
    }
    model.save(&a.out)?;
    let last = history.last();
    print_json(&json!({
        "checkpoint": a.out.display().to_string(),
        "domains": model.domain_names,
        "epochs": history.len(),
        "final_loss_total": last.map(|l| l.loss_total),
        "seed": rc.train.seed,
        "variant": rc.variant,
    }));
    Ok(Outcome::Ok)
}

fn cmd_eval(a: EvalArgs) -> Result<Outcome> {
    let model = TrainedModel::load(&a.model)?;
    let bundle = DatasetBundle::read_dir(&a.bundle)?;
    let ks = if a.k.is_empty() { DEFAULT_KS.to_vec() } else { a.k.clone() };
    let (report, per_user) = model.evaluate_bundle(&bundle, &ks)?;
    let v = serde_json::to_value(&report)?;
    if let Some(p) = &a.out {
        std::fs::write(p, to_json(&v)).map_err(file_err(p))?;
    }
    if let Some(p) = &a.per_user {
        let mut w = BufWriter::new(File::create(p).map_err(file_err(p))?);
        let header: Vec<String> = ks
            .iter()
            .map(|k| format!("recall@{k}"))
            .chain(ks.iter().map(|k| format!("ap@{k}")))
            .collect();
        writeln!(w, "user,{}", header.join(","))?;
        for m in &per_user {
            let vals: Vec<String> = m.recall.iter().chain(&m.ap).map(|x| x.to_string()).collect();
            writeln!(w, "{},{}", model.user_ids[0][m.user], vals.join(","))?;
        }
        w.flush()?;
    }
    print_json(&v);
    eprint!("{}", report.to_table());
    Ok(Outcome::Ok)
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<Outcome> {
    let kinds = match a.mapping.as_str() {
        "linear" => vec![MappingKind::Linear],
        "mlp" => vec![MappingKind::Mlp],
        "both" => vec![MappingKind::Linear, MappingKind::Mlp],
        other => return Err(JscnError::Config(format!("unknown mapping {other:?} (linear, mlp, both)"))),
    };
    let mut reports = Vec::new();
    let mut passed = true;
    for kind in kinds {
        let mut opts = GradCheckOptions::small(a.seed, kind);
        opts.perturb = a.perturb;
        let r = gradient_check(&opts)?;
        eprintln!(
            "{:?}: {} coordinates, {} failed, max rel error {:.3e}; worst: domain {} {}[{}] analytic {:.6e} numeric {:.6e}",
            kind, r.n_coordinates, r.n_failed, r.max_rel_error, r.worst.domain, r.worst.tensor, r.worst.index,
            r.worst.analytic, r.worst.numeric
        );
        passed &= r.passed;
        reports.push(serde_json::to_value(&r)?);
    }
    print_json(&json!({ "passed": passed, "reports": reports }));
    Ok(if passed { Outcome::Ok } else { Outcome::Failed })
}
