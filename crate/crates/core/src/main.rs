use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use kgbench::bench::{evaluate, load_model, prepare, run_benchmark, run_sweep, training_edges, RunConfig, Track};
use kgbench::ingest::{write_synthetic, SyntheticSpec};
use kgbench::metrics::render_table;
use kgbench::split::write_manifest;
use kgbench::topo::{top_k_novel, write_predictions};
use kgbench::{EntityKind, Error, Relation, Result};

#[derive(Parser)]
#[command(name = "kgbench", version, about = "Link-prediction benchmark for drug knowledge graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// transe, transr, rotate, complex, distmult or topo
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    data_fraction: Option<f64>,
    /// Embedding width (KGE) or shared width (topo)
    #[arg(long)]
    dim: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Load the inputs and print what was read
    Ingest(Common),
    /// Split every relation and write the manifest
    Split(Common),
    /// Train, evaluate and write all run artifacts
    Train(Common),
    /// Re-evaluate a saved checkpoint
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to <out>/model.ckpt
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run a scaling sweep
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = TrackArg::Both)]
        track: TrackArg,
    },
    /// Write the top-k novel pairs of a relation from a saved checkpoint
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "drug_indication")]
        relation: String,
        #[arg(long, default_value_t = 100)]
        top_k: usize,
    },
    /// Generate a planted-block graph as input files
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 200)]
        per_kind: usize,
        #[arg(long, default_value_t = 4)]
        blocks: usize,
        #[arg(long, default_value_t = 0.3)]
        intra: f64,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        /// Also write protein features of this width
        #[arg(long)]
        feature_dim: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TrackArg {
    Data,
    Params,
    Both,
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(m) = &c.model {
        cfg.model = m.parse()?;
    }
    if let Some(f) = c.data_fraction {
        cfg.data_fraction = f;
    }
    if let Some(d) = c.dim {
        cfg.set_dim(d);
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn ingest(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    cfg.validate()?;
    let data = prepare(&cfg)?;
    for kind in EntityKind::ALL {
        println!("{:<11} {}", kind.as_str(), data.graph.count(kind));
    }
    for rel in Relation::ALL {
        let pos = data.graph.edges_of(rel).count();
        let neg = data.train_pool.of_relation(rel).count() + data.test_pool.of_relation(rel).count();
        println!("{:<16} {pos} edges, {neg} negatives", rel.as_str());
    }
    for t in [&data.protein_features, &data.drug_features].into_iter().flatten() {
        println!(
            "{} features: dim {}, {} vectors, {} missing, {} rows skipped",
            t.kind.as_str(),
            t.dim,
            t.vectors.len(),
            t.missing.len(),
            t.skipped
        );
    }
    for n in &data.notes {
        println!("# {n}");
    }
    Ok(())
}

fn split(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    cfg.validate()?;
    let data = prepare(&cfg)?;
    mkdir(&cfg.out)?;
    let path = cfg.out.join("manifest.tsv");
    write_manifest(&path, &data.graph, &data.splits)?;
    for s in &data.splits {
        let a = &s.audit;
        println!(
            "{:<16} total {} historical {} relocated {} train {} validation {} test {}",
            s.relation.as_str(),
            a.total,
            a.initial_train,
            a.relocated,
            a.train,
            a.validation,
            a.test
        );
    }
    println!("manifest written to {}", path.display());
    Ok(())
}

fn train(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let report = run_benchmark(&cfg)?;
    print!("{}", report.render());
    println!("artifacts in {}", cfg.out.display());
    Ok(())
}

fn eval(c: &Common, checkpoint: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(c)?;
    cfg.validate()?;
    let data = prepare(&cfg)?;
    let ckpt = checkpoint.unwrap_or_else(|| cfg.out.join("model.ckpt"));
    let model = load_model(&ckpt, &cfg, &data)?;
    let reports = evaluate(&cfg.seeded(), &data, &model);
    let json = serde_json::to_string_pretty(&reports).map_err(|e| Error::Config(e.to_string()))?;
    mkdir(&cfg.out)?;
    write(&cfg.out.join("eval.json"), &json)?;
    let table = render_table(&reports);
    write(&cfg.out.join("eval.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn sweep(c: &Common, track: TrackArg) -> Result<()> {
    let cfg = load_config(c)?;
    let tracks: &[Track] = match track {
        TrackArg::Data => &[Track::DataScaling],
        TrackArg::Params => &[Track::ParamScaling],
        TrackArg::Both => &[Track::DataScaling, Track::ParamScaling],
    };
    for &t in tracks {
        let report = run_sweep(&cfg, t)?;
        print!("{}", report.render());
    }
    Ok(())
}

fn predict(c: &Common, checkpoint: Option<PathBuf>, relation: &str, k: usize) -> Result<()> {
    let cfg = load_config(c)?;
    cfg.validate()?;
    let relation: Relation = relation
        .parse()
        .map_err(|_| Error::Config(format!("unknown relation `{relation}`")))?;
    let data = prepare(&cfg)?;
    let ckpt = checkpoint.unwrap_or_else(|| cfg.out.join("model.ckpt"));
    let model = load_model(&ckpt, &cfg, &data)?;
    // novelty is judged against the edges the model was trained on
    let train = training_edges(&cfg, &data);
    let train_graph = data.graph.subgraph(&train)?;
    let preds = top_k_novel(&model, &train_graph, relation, k);
    mkdir(&cfg.out)?;
    let path = cfg.out.join(format!("predictions_{}.tsv", relation.as_str()));
    write_predictions(&path, &data.graph, &preds)?;
    println!("{} predictions written to {}", preds.len(), path.display());
    Ok(())
}

fn synth(
    c: &Common,
    per_kind: usize,
    blocks: usize,
    intra: f64,
    noise: f64,
    feature_dim: Option<usize>,
) -> Result<()> {
    let mut cfg = load_config(c)?;
    let spec = match cfg.synthetic.take() {
        Some(s) if c.config.is_some() => s,
        _ => SyntheticSpec::uniform(per_kind, blocks, intra, noise, cfg.seed),
    };
    mkdir(&cfg.out)?;
    let (_, _, files) = write_synthetic(&cfg.out, &spec, feature_dim.unwrap_or(0))?;
    // paths in the written config are relative to its own directory
    let name = |p: &Path| PathBuf::from(p.file_name().unwrap_or_default());
    let mut run = RunConfig {
        edges: Some(name(&files.edges)),
        negatives: Some(name(&files.negatives)),
        protein_features: files.protein_features.as_deref().map(name),
        out: PathBuf::from("run"),
        ..cfg.clone()
    };
    if let Some(d) = feature_dim {
        run.topo.protein_feature_dim = d;
    }
    write(&cfg.out.join("config.toml"), &run.to_toml()?)?;
    println!("wrote {} and {}", files.edges.display(), files.negatives.display());
    if let Some(p) = &files.protein_features {
        println!("wrote {}", p.display());
    }
    println!("run config in {}", cfg.out.join("config.toml").display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(c) => ingest(&c),
        Command::Split(c) => split(&c),
        Command::Train(c) => train(&c),
        Command::Eval { common, checkpoint } => eval(&common, checkpoint),
        Command::Sweep { common, track } => sweep(&common, track),
        Command::Predict {
            common,
            checkpoint,
            relation,
            top_k,
        } => predict(&common, checkpoint, &relation, top_k),
        Command::Synth {
            common,
            per_kind,
            blocks,
            intra,
            noise,
            feature_dim,
        } => synth(&common, per_kind, blocks, intra, noise, feature_dim),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
