mod args;
mod commands;
mod staging;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, EvalCommand, OtCommand, PerturbCommand};

/// Bad flags or inputs detected by the CLI itself.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Invalid(pub String);

const EXIT_VALIDATION: u8 = 1;
const EXIT_IO: u8 = 2;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<grfnet_core::Error>() {
            return if e.is_io() { EXIT_IO } else { EXIT_VALIDATION };
        }
        if cause.is::<Invalid>() {
            return EXIT_VALIDATION;
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_VALIDATION
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Sync(a) => commands::sync(a),
        Command::Label(a) => commands::label(a),
        Command::Ot(OtCommand::Fit(a)) => commands::ot_fit(a),
        Command::Ot(OtCommand::Apply(a)) => commands::ot_apply(a),
        Command::Train(a) => commands::train(a),
        Command::Estimate(a) => commands::estimate(a),
        Command::Eval(EvalCommand::Contacts(a)) => commands::eval_contacts(a),
        Command::Eval(EvalCommand::Vgrf(a)) => commands::eval_vgrf(a),
        Command::Eval(EvalCommand::Cop(a)) => commands::eval_cop(a),
        Command::Eval(EvalCommand::Footskate(a)) => commands::eval_footskate(a),
        Command::Perturb(PerturbCommand::Noise(a)) => commands::perturb_noise(a),
        Command::Perturb(PerturbCommand::Blend(a)) => commands::perturb_blend(a),
        Command::Cleanup(a) => commands::cleanup(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
