//! Command implementations behind the `kgh` binary.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod files;
pub mod serve;

use args::{Cli, Command};
use commands::Context;
use error::CliResult;

pub fn run(cli: Cli) -> CliResult<()> {
    if let Command::Fixture {
        kind,
        out,
        depth,
        nodes,
        fixture_seed,
    } = &cli.command
    {
        return commands::cmd_fixture(*kind, out, *depth, *nodes, *fixture_seed).map(drop);
    }
    let ctx = Context::from_args(&cli.global)?;
    match cli.command {
        Command::Classify { passes } => commands::cmd_classify(&ctx, passes).map(drop),
        Command::Generate {
            strategy,
            classification,
        } => commands::cmd_generate(&ctx, strategy.map(Into::into), classification).map(drop),
        Command::Merge {
            deltas,
            corrections,
            subgraphs,
            out,
        } => commands::cmd_merge(&ctx, &deltas, &corrections, &subgraphs, out).map(drop),
        Command::Stats { before } => commands::cmd_stats(&ctx, before).map(drop),
        Command::ReviewExport { rate, reviewer } => commands::cmd_review_export(&ctx, rate, reviewer).map(drop),
        Command::ReviewApply { corrections, samples } => {
            commands::cmd_review_apply(&ctx, &corrections, samples).map(drop)
        }
        Command::Experiment { noise, seeds } => commands::cmd_experiment(&ctx, noise, seeds).map(drop),
        Command::Serve { bind, live } => serve::cmd_serve(&ctx, &bind, live),
        Command::Fixture { .. } => unreachable!("handled above"),
    }
}
