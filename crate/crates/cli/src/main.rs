use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod config;
mod disturb;
mod output;
mod quadratic;
mod referee;
mod tournament;
mod train;

/// Stackelberg multi-agent training, evaluation and verification.
#[derive(Debug, Parser)]
#[command(name = "stmarl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train actor-critic pairs, one per seed.
    Train(train::TrainArgs),
    /// Play every player-1 checkpoint against every player-2 checkpoint.
    Tournament(tournament::TournamentArgs),
    /// Analytic and learned equilibria of a quadratic game.
    SolveQuadratic(quadratic::SolveArgs),
    /// Check the differential Stackelberg conditions at a point.
    VerifyDse(quadratic::VerifyArgs),
    /// Score a fencing tick stream.
    Referee(referee::RefereeArgs),
    /// Evaluate a protagonist under random tip disturbances.
    DisturbEval(disturb::DisturbArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train::run(a).map(|_| true),
        Command::Tournament(a) => tournament::run(a).map(|_| true),
        Command::SolveQuadratic(a) => quadratic::solve(a).map(|_| true),
        Command::VerifyDse(a) => quadratic::verify(a),
        Command::Referee(a) => referee::run(a).map(|_| true),
        Command::DisturbEval(a) => disturb::run(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
