//! `eyefield`: reconstructs a radiance field of the scene reflected in a
//! person's cornea from fixed-camera images plus per-frame ellipse
//! estimates. Exit codes: 0 success, 2 configuration, 3 I/O, 4 numerical.

use clap::{Parser, Subcommand};
use eyefield::ErrorClass;
use eyefield_cli::commands::{self, AblateOpts, EvalOpts, RenderOpts, SynthOpts, TrainOpts};

#[derive(Parser)]
#[command(name = "eyefield", version, about = "Scene reconstruction from cornea reflections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic capture with a ground-truth sidecar.
    Synth(SynthOpts),
    /// Fit the scene field, iris texture, and pose refinements to a dataset.
    Train(TrainOpts),
    /// Render turntable views (color + accumulation) of a checkpoint.
    Render(RenderOpts),
    /// Score a checkpoint against its dataset's exact references.
    Eval(EvalOpts),
    /// Sweep radius-noise levels with and without pose optimization.
    Ablate(AblateOpts),
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(opts) => commands::cmd_synth(opts).map(drop),
        Command::Train(opts) => commands::cmd_train(opts).map(drop),
        Command::Render(opts) => commands::cmd_render(opts).map(drop),
        Command::Eval(opts) => commands::cmd_eval(opts).map(drop),
        Command::Ablate(opts) => commands::cmd_ablate(opts).map(drop),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(match err.class() {
            ErrorClass::Config => 2,
            ErrorClass::Io => 3,
            ErrorClass::Numerical => 4,
        });
    }
}
