mod args;
mod commands;
mod manifest;
mod settings;

use std::process::ExitCode;

use clap::Parser;
use fewshot_stack::synth::SynthSpec;
use fewshot_stack::{Error, ErrorKind};

use args::{Cli, Command};

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Io => 1,
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Incompatible => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { paths } => return commands::validate(&paths),
        Command::Eval {
            run,
            reshape,
            hidden,
            save_head,
        } => commands::eval(&run, reshape, hidden, save_head.as_deref()),
        Command::Sweep {
            run,
            reshape,
            hidden,
            k_values,
        } => commands::sweep(&run, reshape, hidden, &k_values),
        Command::Ablate {
            run,
            reshape,
            hidden,
            subset,
        } => commands::ablate(&run, reshape, &hidden, &subset),
        Command::Tsne {
            run,
            reshape,
            hidden,
            raw_features,
            perplexity,
            iterations,
        } => commands::tsne(
            &run,
            commands::TsneArgs {
                reshape,
                hidden,
                raw_features,
                perplexity,
                iterations,
            },
        ),
        Command::Params {
            dim,
            reshape,
            filters,
            hidden,
            ways,
            backbones,
        } => commands::params(dim, reshape, filters, hidden, ways, &backbones),
        Command::Synth {
            out,
            dims,
            classes,
            per_class,
            separation,
            sigma,
            seed,
        } => commands::synth(
            &out,
            SynthSpec {
                dims,
                n_classes: classes,
                per_class,
                separation,
                sigma,
                seed,
            },
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
