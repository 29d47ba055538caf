mod args;
mod commands;
mod config;
mod exit;

use clap::Parser;

use args::{Cli, Command};

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .init();
    let result = match &cli.command {
        Command::Train(a) => commands::cmd_train(a),
        Command::Predict(a) => commands::cmd_predict(a),
        Command::Evaluate(a) => commands::cmd_evaluate(a),
        Command::Kchain(a) => commands::cmd_kchain(a),
        Command::Synth(a) => commands::cmd_synth(a),
        Command::Graph(g) => commands::cmd_graph(g),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
