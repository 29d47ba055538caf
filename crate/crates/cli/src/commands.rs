use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use vnegnn::diffengine::{load_checkpoint, save_checkpoint, ParamStore};
use vnegnn::expressivity::run_kchain;
use vnegnn::graphio::{
    graph_to_pdb, parse_pdb_lite, structure_graphs, synthetic_dataset, GraphDump, ProteinGraph, Structure,
    DEFAULT_LABEL_RADIUS,
};
use vnegnn::inference::ClusteredPrediction;
use vnegnn::model::init_params;
use vnegnn::training::{evaluate, predict_structure, train, SelectMetric, TrainConfig};

use crate::args::{
    DataSource, EvaluateArgs, GraphCommand, KchainArgs, Overrides, PredictArgs, SelectArg, SynthArgs, TrainArgs,
};
use crate::config::RunConfig;
use crate::exit::CliError;

type CmdResult = Result<(), CliError>;

fn write_file(path: &Path, contents: &str) -> CmdResult {
    fs::write(path, contents).map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(path: &Path) -> CmdResult {
    fs::create_dir_all(path).map_err(|e| CliError::input(format!("cannot create {}: {e}", path.display())))
}

fn structure_id(path: &Path) -> String {
    path.file_stem().map_or_else(|| "structure".into(), |s| s.to_string_lossy().into_owned())
}

/// Parse one PDB file into per-chain graphs.
pub fn load_structure(path: &Path, label_radius: f64, min_ligand_atoms: usize) -> Result<Structure, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let id = structure_id(path);
    let in_file = |e: vnegnn::Error| {
        let mut err = CliError::from(e);
        err.message = format!("{}: {}", path.display(), err.message);
        err
    };
    let parsed = parse_pdb_lite(&text).map_err(in_file)?;
    if parsed.skipped_lines > 0 {
        log::warn!("{}: {} malformed lines skipped", path.display(), parsed.skipped_lines);
    }
    structure_graphs(&parsed, &id, label_radius, min_ligand_atoms).map_err(in_file)
}

fn pdb_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::input(format!("cannot read {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| x.eq_ignore_ascii_case("pdb") || x.eq_ignore_ascii_case("ent"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::input(format!("no .pdb files in {}", dir.display())));
    }
    Ok(files)
}

fn load_structures(source: &DataSource, config: &RunConfig) -> Result<Vec<Structure>, CliError> {
    match (&source.data, source.synthetic) {
        (Some(dir), _) => {
            let label_radius = config.train.model.label_radius;
            let files = pdb_files(dir)?;
            files
                .iter()
                .map(|f| load_structure(f, label_radius, config.min_ligand_atoms))
                .collect()
        }
        (None, Some(n)) => Ok(synthetic_dataset(config.train.seed, n, &config.synthetic)?
            .into_iter()
            .map(Structure::from_graph)
            .collect()),
        (None, None) => Err(CliError::input("either --data or --synthetic is required")),
    }
}

pub fn cmd_train(args: &TrainArgs) -> CmdResult {
    let mut config = RunConfig::from_overrides(&args.overrides)?;
    if let Some(e) = args.epochs {
        config.train.epochs = e;
    }
    if let Some(m) = args.select_metric {
        config.train.select_metric = match m {
            SelectArg::Loss => SelectMetric::Loss,
            SelectArg::Dcc => SelectMetric::Dcc,
        };
    }
    config.train.validate()?;
    let structures = load_structures(&args.source, &config)?;
    let all: Vec<ProteinGraph> = structures.into_iter().flat_map(|s| s.chains).collect();
    let total = all.len();
    let graphs: Vec<ProteinGraph> = all.into_iter().filter(|g| !g.sites.is_empty()).collect();
    if graphs.len() < total {
        log::warn!("{} of {total} chains carry no binding site and are not trained on", total - graphs.len());
    }
    if graphs.is_empty() {
        return Err(CliError::input("no chain with a binding site to train on"));
    }
    let outcome = train(&graphs, &config.train)?;
    create_dir(&args.out)?;
    let meta = json!({ "train": config.train, "best_epoch": outcome.best_epoch });
    save_checkpoint(&args.out.join("checkpoint.json"), &outcome.params, meta)?;
    write_file(&args.out.join("losses.csv"), &outcome.history_csv())?;
    write_file(&args.out.join("config.json"), &config.to_json())?;
    println!(
        "trained {} epochs on {} graphs; best epoch {}; wrote {}",
        config.train.epochs,
        graphs.len(),
        outcome.best_epoch,
        args.out.display()
    );
    Ok(())
}

/// Parameters and training configuration from a checkpoint, with inference
/// flags applied. Architecture flags that disagree with the stored
/// parameters are reported as checkpoint errors.
pub fn load_model(path: &Path, overrides: &Overrides) -> Result<(RunConfig, ParamStore), CliError> {
    let (stored, meta) = load_checkpoint(path).map_err(|e| match e {
        vnegnn::Error::Io(io) => CliError::checkpoint(format!("cannot read checkpoint {}: {io}", path.display())),
        other => other.into(),
    })?;
    let train: TrainConfig = serde_json::from_value(meta.get("train").cloned().unwrap_or_default())
        .map_err(|e| CliError::checkpoint(format!("checkpoint {} has no usable config: {e}", path.display())))?;
    let mut config = RunConfig::load(overrides.config.as_deref())?;
    config.train = train;
    config.apply(overrides);
    config.train.model.validate()?;
    let mut params = init_params(&config.train.model, &mut ChaCha8Rng::seed_from_u64(0))?;
    params
        .load_values_from(&stored)
        .map_err(|e| CliError::checkpoint(format!("checkpoint {} does not fit the model: {e}", path.display())))?;
    Ok((config, params))
}

#[derive(Serialize)]
struct ChainOutput {
    id: String,
    residues: usize,
    probabilities: Vec<f64>,
}

#[derive(Serialize)]
struct PredictOutput {
    id: String,
    seed: u64,
    predictions: Vec<ClusteredPrediction>,
    chains: Vec<ChainOutput>,
}

pub fn cmd_predict(args: &PredictArgs) -> CmdResult {
    let (config, params) = load_model(&args.checkpoint, &args.overrides)?;
    let structure = load_structure(&args.pdb, config.train.model.label_radius, config.min_ligand_atoms)?;
    let seed = config.train.seed;
    let p = predict_structure(&structure.chains, &config.train.model, &params, seed)?;
    let out = PredictOutput {
        id: structure.id,
        seed,
        predictions: p.clusters,
        chains: p
            .chain_probabilities
            .into_iter()
            .map(|(id, probabilities)| ChainOutput {
                id,
                residues: probabilities.len(),
                probabilities,
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&out).expect("predictions serialize");
    match &args.out {
        Some(path) => write_file(path, &text),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> CmdResult {
    let (config, params) = load_model(&args.checkpoint, &args.overrides)?;
    let structures = load_structures(&args.source, &config)?;
    let t = config.train.threshold;
    let (metrics, results) = evaluate(&structures, &config.train.model, &params, t, config.train.seed)?;
    create_dir(&args.out)?;
    write_file(&args.out.join("metrics.csv"), &metrics.sweep_csv())?;
    let mut lines = String::new();
    for r in &results {
        lines.push_str(&serde_json::to_string(r).expect("results serialize"));
        lines.push('\n');
    }
    write_file(&args.out.join("predictions.jsonl"), &lines)?;
    println!(
        "DCC {:.4} DCA {:.4} at {t} Å over {} sites in {} structures ({} skipped without sites)",
        metrics.dcc_rate(),
        metrics.dca_rate(),
        metrics.sites,
        metrics.proteins,
        metrics.skipped
    );
    Ok(())
}

pub fn cmd_kchain(args: &KchainArgs) -> CmdResult {
    let mut c = RunConfig::load(args.config.as_deref())?.kchain;
    if let Some(v) = args.n {
        c.n = v;
    }
    if let Some(v) = &args.layers {
        c.layers.clone_from(v);
    }
    if let Some(v) = &args.dims {
        c.dims.clone_from(v);
    }
    if let Some(v) = args.reruns {
        c.reruns = v;
    }
    if let Some(v) = args.epochs {
        c.epochs = v;
    }
    if let Some(v) = args.lr {
        c.lr = v;
    }
    if let Some(v) = args.seed {
        c.seed = v;
    }
    c.with_virtual_node |= args.virtual_node;
    let grid = run_kchain(&c)?;
    print!("{}", grid.to_table());
    if let Some(path) = &args.csv {
        write_file(path, &grid.to_csv())?;
    }
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> CmdResult {
    let mut config = RunConfig::from_overrides(&args.overrides)?;
    if let Some(n) = args.nodes {
        config.synthetic.n_nodes = n;
    }
    if let Some(p) = args.pockets {
        config.synthetic.n_pockets = p;
    }
    let graphs = synthetic_dataset(config.train.seed, args.count, &config.synthetic)?;
    create_dir(&args.out)?;
    for g in &graphs {
        write_file(&args.out.join(format!("{}.pdb", g.id)), &graph_to_pdb(g))?;
    }
    println!("wrote {} structures to {}", graphs.len(), args.out.display());
    Ok(())
}

pub fn cmd_graph(cmd: &GraphCommand) -> CmdResult {
    match cmd {
        GraphCommand::Dump {
            pdb,
            label_radius,
            min_ligand_atoms,
        } => {
            let s = load_structure(
                pdb,
                label_radius.unwrap_or(DEFAULT_LABEL_RADIUS),
                min_ligand_atoms.unwrap_or(vnegnn::graphio::DEFAULT_MIN_LIGAND_ATOMS),
            )?;
            let dumps: Vec<GraphDump> = s.chains.iter().map(GraphDump::from).collect();
            println!("{}", serde_json::to_string_pretty(&dumps).expect("graphs serialize"));
            Ok(())
        }
    }
}
