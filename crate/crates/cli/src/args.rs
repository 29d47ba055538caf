use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "vnegnn", version, about = "Binding-site prediction with virtual-node EGNNs")]
pub struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and keep the best-validation checkpoint.
    Train(TrainArgs),
    /// Predict binding-site centers for one PDB file.
    Predict(PredictArgs),
    /// DCC/DCA success rates of a checkpoint on a labelled dataset.
    Evaluate(EvaluateArgs),
    /// Separation experiment on n-chain graph pairs.
    Kchain(KchainArgs),
    /// Write synthetic proteins with planted pockets as PDB files.
    Synth(SynthArgs),
    /// Inspect parsed graphs.
    #[command(subcommand)]
    Graph(GraphCommand),
}

#[derive(Subcommand, Debug)]
pub enum GraphCommand {
    /// Print the per-chain graphs of a PDB file as JSON.
    Dump {
        #[arg(long)]
        pdb: PathBuf,
        #[arg(long)]
        label_radius: Option<f64>,
        #[arg(long)]
        min_ligand_atoms: Option<usize>,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Heterogeneous,
    Homogeneous,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SelectArg {
    Loss,
    Dcc,
}

/// Settings shared by every command that reads a JSON config.
#[derive(Args, Debug, Default, Clone)]
pub struct Overrides {
    /// JSON run configuration; flags below take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub virtual_nodes: Option<usize>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub label_radius: Option<f64>,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

/// Where graphs come from: a directory of PDB files or the synthetic generator.
#[derive(Args, Debug, Clone)]
#[group(required = true, multiple = false)]
pub struct DataSource {
    /// Directory of `.pdb` / `.ent` files.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Generate this many synthetic proteins from the config's synthetic spec.
    #[arg(long)]
    pub synthetic: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: DataSource,
    /// Output directory for checkpoint.json, losses.csv and config.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_enum)]
    pub select_metric: Option<SelectArg>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub pdb: PathBuf,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub source: DataSource,
    /// Output directory for metrics.csv and predictions.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args, Debug)]
pub struct KchainArgs {
    /// JSON run configuration; its `kchain` section is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Interior chain length.
    #[arg(long)]
    pub n: Option<usize>,
    /// Layer counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
    /// Feature widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    #[arg(long)]
    pub reruns: Option<usize>,
    /// Optimizer steps per rerun.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub virtual_node: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the grid as CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub pockets: Option<usize>,
    #[command(flatten)]
    pub overrides: Overrides,
}
