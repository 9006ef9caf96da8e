mod args;
mod commands;
mod run;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};

use args::*;

/// Rotation bins, pose codecs, voxel grids, shape retrieval and a small
/// two-stage trainer.
#[derive(Debug, Parser)]
#[command(name = "posekit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a rotation bin table
    GenBins(GenBinsArgs),
    /// Generate a translation bin table
    GenTbins(GenTbinsArgs),
    /// Voxelize an OBJ mesh
    Voxelize(VoxelizeArgs),
    /// Rotate a binvox grid about its center
    RotateVoxel(RotateVoxelArgs),
    /// Rotation → bin index and delta
    EncodePose(EncodePoseArgs),
    /// Bin index and delta → rotation
    DecodePose(DecodePoseArgs),
    /// Build a shape database from embeddings
    BuildDb(BuildDbArgs),
    /// Nearest database entries for query embeddings
    Retrieve(RetrieveArgs),
    /// Train one stage of the toy model
    TrainToy(TrainToyArgs),
    /// Metrics report for a prediction file
    Evaluate(EvaluateArgs),
    /// Gradient and roundtrip self-checks
    Selftest(SelftestArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenBins(_) => "gen-bins",
            Command::GenTbins(_) => "gen-tbins",
            Command::Voxelize(_) => "voxelize",
            Command::RotateVoxel(_) => "rotate-voxel",
            Command::EncodePose(_) => "encode-pose",
            Command::DecodePose(_) => "decode-pose",
            Command::BuildDb(_) => "build-db",
            Command::Retrieve(_) => "retrieve",
            Command::TrainToy(_) => "train-toy",
            Command::Evaluate(_) => "evaluate",
            Command::Selftest(_) => "selftest",
        }
    }

    fn run(&self) -> run::Outcome<()> {
        match self {
            Command::GenBins(a) => commands::gen_bins(a),
            Command::GenTbins(a) => commands::gen_tbins(a),
            Command::Voxelize(a) => commands::voxelize(a),
            Command::RotateVoxel(a) => commands::rotate_voxel(a),
            Command::EncodePose(a) => commands::encode_pose_cmd(a),
            Command::DecodePose(a) => commands::decode_pose_cmd(a),
            Command::BuildDb(a) => commands::build_db(a),
            Command::Retrieve(a) => commands::retrieve(a),
            Command::TrainToy(a) => commands::train_toy(a),
            Command::Evaluate(a) => commands::evaluate(a),
            Command::Selftest(a) => commands::selftest(a),
        }
    }
}

/// Usage line of `sub`, or of the whole tool.
fn synopsis(sub: Option<&str>) -> String {
    let mut cmd = Cli::command();
    cmd.build();
    match sub.and_then(|s| cmd.find_subcommand_mut(s)) {
        Some(c) => c.render_usage().to_string(),
        None => cmd.render_usage().to_string(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                return ExitCode::SUCCESS;
            }
            if e.kind() == ErrorKind::InvalidSubcommand {
                eprintln!("\nCommands:");
                for sub in Cli::command().get_subcommands() {
                    eprintln!(
                        "  {:<13} {}",
                        sub.get_name(),
                        sub.get_about().map(|a| a.to_string()).unwrap_or_default()
                    );
                }
            } else if !e.to_string().contains("Usage:") {
                // Value errors carry no synopsis of their own.
                eprintln!("\n{}", synopsis(std::env::args().nth(1).as_deref()));
            }
            return ExitCode::from(1);
        }
    };
    match cli.command.run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            if let run::Failure::Usage(_) = f {
                eprintln!("\n{}", synopsis(Some(cli.command.name())));
            }
            ExitCode::from(f.exit_code())
        }
    }
}
