use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use kgh_core::fixtures::{gold_candidate_sets, gold_edges, roots_only, synthetic_gold};
use kgh_core::provider::CorruptionMode;
use kgh_core::stats::{edge_score, edge_score_by_depth};
use kgh_core::{
    generate, GenerateOptions, MockOracle, MockOracleConfig, NodeId, Strategy, StrategyOverride, TemplateSet,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate_error, Context};
use crate::config::ExperimentSettings;
use crate::error::{CliError, CliResult};
use crate::files;

pub const EXPERIMENT_FILE: &str = "experiment.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthRow {
    pub noise_rate: f64,
    pub strategy: Strategy,
    /// Gold level of the edge's child.
    pub depth: u32,
    pub seeds: usize,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
    pub min_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallRow {
    pub noise_rate: f64,
    pub strategy: Strategy,
    pub seeds: usize,
    pub mean_f1: f64,
    pub mean_provider_calls: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub depth: u32,
    pub nodes: usize,
    pub fixture_seed: u64,
    pub corruption_mode: CorruptionMode,
    pub seeds: u64,
    pub rows: Vec<DepthRow>,
    pub overall: Vec<OverallRow>,
}

/// Precision, recall, F1.
type Prf = (f64, f64, f64);

struct Run {
    noise: usize,
    strategy: Strategy,
    by_depth: BTreeMap<u32, Prf>,
    f1: f64,
    calls: usize,
}

/// Generates every category of the gold graph from scratch for each
/// (noise rate, seed, strategy) and scores the edges per gold depth.
pub fn run_experiment(
    settings: &ExperimentSettings,
    templates: &TemplateSet,
    options: &GenerateOptions,
) -> CliResult<ExperimentReport> {
    if settings.seeds == 0 || settings.noise_rates.is_empty() {
        return Err(CliError::config("experiment needs at least one seed and one noise rate"));
    }
    if let Some(bad) = settings.noise_rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(CliError::config(format!("noise rate {bad} outside [0, 1]")));
    }
    let gold = synthetic_gold(settings.depth, settings.nodes, settings.fixture_seed);
    let base = roots_only(&gold);
    let sets = gold_candidate_sets(&gold);
    let all_gold: BTreeSet<(NodeId, NodeId)> = sets.iter().flat_map(|s| gold_edges(&gold, &s.l1_category)).collect();
    let options = GenerateOptions {
        max_depth: options.max_depth.max(settings.depth),
        ..options.clone()
    };

    let tasks: Vec<(usize, u64, Strategy)> = (0..settings.noise_rates.len())
        .flat_map(|n| {
            (0..settings.seeds).flat_map(move |s| [Strategy::OneShot, Strategy::Cyclical].map(|st| (n, s, st)))
        })
        .collect();
    let runs: Vec<Run> = tasks
        .into_par_iter()
        .map(|(noise, seed, strategy)| {
            let mock = MockOracle::new(
                gold.clone(),
                MockOracleConfig::noisy(settings.noise_rates[noise], seed, settings.corruption_mode),
            );
            let forced = match strategy {
                Strategy::OneShot => StrategyOverride::OneShot,
                Strategy::Cyclical => StrategyOverride::Cyclical,
            };
            let mut predicted = BTreeSet::new();
            let mut calls = 0;
            for set in &sets {
                let (_, delta) =
                    generate(&base, set, &mock, templates, &options, forced).map_err(|e| generate_error(&e))?;
                calls += delta.passes;
                predicted.extend(delta.edges_added.iter().map(|e| (e.parent.clone(), e.child.clone())));
            }
            let by_depth = edge_score_by_depth(&predicted, &all_gold, &gold)
                .into_iter()
                .map(|(d, s)| (d, (s.precision, s.recall, s.f1)))
                .collect();
            Ok(Run {
                noise,
                strategy,
                by_depth,
                f1: edge_score(&predicted, &all_gold).f1,
                calls,
            })
        })
        .collect::<CliResult<_>>()?;

    let mut cells: BTreeMap<(usize, Strategy, u32), Vec<Prf>> = BTreeMap::new();
    let mut totals: BTreeMap<(usize, Strategy), Vec<(f64, usize)>> = BTreeMap::new();
    for r in &runs {
        for (d, v) in &r.by_depth {
            cells.entry((r.noise, r.strategy, *d)).or_default().push(*v);
        }
        totals.entry((r.noise, r.strategy)).or_default().push((r.f1, r.calls));
    }
    let mean = |xs: &mut dyn Iterator<Item = f64>, n: usize| xs.sum::<f64>() / n as f64;
    let rows = cells
        .into_iter()
        .map(|((noise, strategy, depth), v)| DepthRow {
            noise_rate: settings.noise_rates[noise],
            strategy,
            depth,
            seeds: v.len(),
            mean_precision: mean(&mut v.iter().map(|x| x.0), v.len()),
            mean_recall: mean(&mut v.iter().map(|x| x.1), v.len()),
            mean_f1: mean(&mut v.iter().map(|x| x.2), v.len()),
            min_f1: v.iter().map(|x| x.2).fold(f64::INFINITY, f64::min),
        })
        .collect();
    let overall = totals
        .into_iter()
        .map(|((noise, strategy), v)| OverallRow {
            noise_rate: settings.noise_rates[noise],
            strategy,
            seeds: v.len(),
            mean_f1: mean(&mut v.iter().map(|x| x.0), v.len()),
            mean_provider_calls: mean(&mut v.iter().map(|x| x.1 as f64), v.len()),
        })
        .collect();
    Ok(ExperimentReport {
        depth: settings.depth,
        nodes: settings.nodes,
        fixture_seed: settings.fixture_seed,
        corruption_mode: settings.corruption_mode,
        seeds: settings.seeds,
        rows,
        overall,
    })
}

pub fn render_experiment(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "gold: depth {}, {} nodes, fixture seed {}; corruption {:?}",
        report.depth, report.nodes, report.fixture_seed, report.corruption_mode
    );
    let mut noises: Vec<f64> = report.rows.iter().map(|r| r.noise_rate).collect();
    noises.dedup();
    for noise in noises {
        let _ = writeln!(out, "\nnoise {noise:.2}");
        let _ = writeln!(
            out,
            "{:>5}  {:>30}  {:>30}",
            "depth", "one_shot P / R / F1 (seeds)", "cyclical P / R / F1 (seeds)"
        );
        let depths: BTreeSet<u32> = report.rows.iter().filter(|r| r.noise_rate == noise).map(|r| r.depth).collect();
        for d in depths {
            let cell = |s: Strategy| {
                report
                    .rows
                    .iter()
                    .find(|r| r.noise_rate == noise && r.strategy == s && r.depth == d)
                    .map_or_else(
                        || "-".to_string(),
                        |r| format!("{:.3} / {:.3} / {:.3} ({})", r.mean_precision, r.mean_recall, r.mean_f1, r.seeds),
                    )
            };
            let _ = writeln!(out, "{d:>5}  {:>30}  {:>30}", cell(Strategy::OneShot), cell(Strategy::Cyclical));
        }
        for r in report.overall.iter().filter(|r| r.noise_rate == noise) {
            let _ = writeln!(
                out,
                "  {}: mean edge F1 {:.3} over {} seeds, {:.1} provider calls per run",
                r.strategy, r.mean_f1, r.seeds, r.mean_provider_calls
            );
        }
    }
    out
}

pub fn cmd_experiment(ctx: &Context, noise: Option<Vec<f64>>, seeds: Option<u64>) -> CliResult<ExperimentReport> {
    let mut settings = ctx.config.experiment.clone();
    if let Some(n) = noise {
        settings.noise_rates = n;
    }
    if let Some(s) = seeds {
        settings.seeds = s;
    }
    let report = run_experiment(&settings, &ctx.templates()?, &ctx.config.generate_options())?;
    print!("{}", render_experiment(&report));
    files::write_json(&ctx.out(EXPERIMENT_FILE), &report)?;
    Ok(report)
}
