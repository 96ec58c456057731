use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use stmarl_core::fencing::{read_ticks_csv, referee_run, referee_trace, DwellRule};

#[derive(Debug, Args)]
pub struct RefereeArgs {
    /// CSV with header `t,bat_a_in_target,bats_contact,bat_p_in_target`.
    pub ticks: PathBuf,
    /// Dwell bonus rule: `once_per_stay` or `every_tick`.
    #[arg(long, default_value = "once_per_stay")]
    pub rule: DwellRule,
    #[arg(long, default_value_t = 1000)]
    pub horizon: usize,
    /// Print only the final score.
    #[arg(long)]
    pub quiet: bool,
}

pub fn run(args: RefereeArgs) -> Result<()> {
    let f = File::open(&args.ticks).with_context(|| format!("opening {}", args.ticks.display()))?;
    let ticks = read_ticks_csv(BufReader::new(f)).with_context(|| format!("{}", args.ticks.display()))?;
    let score = referee_run(&ticks, args.horizon, args.rule)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    if !args.quiet {
        writeln!(out, "t,delta,score")?;
        let mut total = 0;
        for (t, d) in referee_trace(&ticks, args.rule).into_iter().enumerate() {
            total += d;
            writeln!(out, "{t},{d},{total}")?;
        }
    }
    writeln!(out, "final score: {score}")?;
    Ok(())
}
