use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use gnnbench_core::defense::{prepare_graph, DefenseId, DefenseParams};
use gnnbench_core::experiment::{read_results, Experiment, ExperimentConfig, OutputLayout};
use gnnbench_core::explain::{encode_mask, Explainer, FrozenModel, GnnExplainer, MaskEncoding, SubgraphX};
use gnnbench_core::graph::{convert_linqs, load_graph_bundle, save_graph_bundle};
use gnnbench_core::models::load_checkpoint;

/// Benchmark explanations of defended graph neural networks.
#[derive(Parser)]
#[command(name = "gnnbench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train, explain and score every cell of an experiment grid.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory. Defaults to the config's `output`, then to
        /// `$GNNBENCH_OUT/<dataset>`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = "GNNBENCH_OUT", default_value = "results")]
        out_root: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Reuse cells already completed in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Explain one node with a saved model and print the mask.
    ExplainOne {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Graph bundle directory.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        node: usize,
        #[arg(long, value_enum, default_value_t = ExplainerArg::Gnnexplainer)]
        explainer: ExplainerArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Experiment config supplying defense and explainer settings.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the mask here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dense: bool,
    },
    /// Recompute metrics from the checkpoints and masks of a finished run.
    MetricsOnly {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a raw dataset into a graph bundle.
    ConvertDataset {
        #[arg(long, value_enum)]
        format: Format,
        /// Node file: id, features, label per line.
        #[arg(long)]
        content: PathBuf,
        /// Edge file: one `cited citing` pair per line.
        #[arg(long)]
        cites: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        name: Option<String>,
    },
    /// Check a config, including its dataset, without running anything.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExplainerArg {
    Gnnexplainer,
    Subgraphx,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Linqs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command.execute() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

impl Command {
    fn execute(self) -> Result<()> {
        match self {
            Command::Run {
                config,
                out,
                out_root,
                workers,
                seed,
                resume,
            } => {
                let cfg = load_config(&config, seed)?;
                let workers = workers.or(cfg.workers).unwrap_or(1);
                let out = out
                    .or_else(|| cfg.output.clone())
                    .unwrap_or_else(|| out_root.join(cfg.dataset.display_name()));
                let exp = Experiment::new(cfg)?;
                log::info!(
                    "{} cells on {} ({} nodes), writing to {}",
                    exp.cells().len(),
                    exp.dataset(),
                    exp.graph().num_nodes(),
                    out.display()
                );
                let results = exp.run(Some(&OutputLayout::new(&out)), workers, resume)?;
                let failed: Vec<String> = results.iter().filter(|c| !c.is_ok()).map(|c| c.key.slug()).collect();
                if !failed.is_empty() {
                    bail!("{} of {} cells failed: {}", failed.len(), results.len(), failed.join(", "));
                }
                println!("{}", fs::read_to_string(out.join("summary.csv"))?);
                Ok(())
            }
            Command::ExplainOne {
                checkpoint,
                dataset,
                node,
                explainer,
                seed,
                config,
                out,
                dense,
            } => {
                let cfg = config.map(|c| ExperimentConfig::load(&c)).transpose()?;
                let model = load_checkpoint(&checkpoint)?;
                let defense: DefenseId = model.meta.defense.parse()?;
                let params = cfg.as_ref().map_or_else(DefenseParams::default, |c| c.defense.clone());
                let graph = prepare_graph(defense, &params, &load_graph_bundle(&dataset)?)?;
                if node >= graph.num_nodes() {
                    bail!("node {node} out of range for a {}-node graph", graph.num_nodes());
                }
                let explainer: Box<dyn Explainer> = match explainer {
                    ExplainerArg::Gnnexplainer => Box::new(GnnExplainer::new(
                        cfg.as_ref().map(|c| c.gnnexplainer.clone()).unwrap_or_default(),
                    )),
                    ExplainerArg::Subgraphx => Box::new(SubgraphX::new(
                        cfg.as_ref().map(|c| c.subgraphx.clone()).unwrap_or_default(),
                    )),
                };
                let mask = explainer.explain(&FrozenModel::new(&model), &graph, node, seed, None)?;
                let encoding = if dense { MaskEncoding::Dense } else { MaskEncoding::Sparse };
                let text = encode_mask(&mask, encoding)?;
                match out {
                    Some(p) => fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                    None => print!("{text}"),
                }
                Ok(())
            }
            Command::MetricsOnly { config, out } => {
                let exp = Experiment::new(load_config(&config, None)?)?;
                let layout = OutputLayout::new(&out);
                let stored = read_results(&layout.results())?;
                let mut lines = String::new();
                let mut mismatched = Vec::new();
                for cell in &stored {
                    let again = exp.recompute(&layout, cell)?;
                    if again != *cell {
                        mismatched.push(cell.key.slug());
                    }
                    lines.push_str(&serde_json::to_string(&again)?);
                    lines.push('\n');
                }
                let path = out.join("metrics_only.jsonl");
                fs::write(&path, lines).with_context(|| format!("writing {}", path.display()))?;
                if !mismatched.is_empty() {
                    bail!("recomputed metrics differ for {}", mismatched.join(", "));
                }
                println!("{} cells recomputed identically; wrote {}", stored.len(), path.display());
                Ok(())
            }
            Command::ConvertDataset {
                format: Format::Linqs,
                content,
                cites,
                out,
                name,
            } => {
                let read = |p: &Path| fs::read_to_string(p).with_context(|| format!("reading {}", p.display()));
                let (graph, mut meta) = convert_linqs(&read(&content)?, &read(&cites)?)?;
                meta.name = name.or(meta.name);
                save_graph_bundle(&graph, &out, Some(&meta))?;
                println!(
                    "{}: {} nodes, {} edges, {} features, {} classes",
                    out.display(),
                    graph.num_nodes(),
                    graph.num_edges(),
                    graph.num_features(),
                    graph.num_classes()
                );
                Ok(())
            }
            Command::ValidateConfig { config } => {
                let cfg = ExperimentConfig::load(&config)?;
                let exp = Experiment::new(cfg)?;
                println!(
                    "ok: {} cells over {} ({} nodes)",
                    exp.cells().len(),
                    exp.dataset(),
                    exp.graph().num_nodes()
                );
                Ok(())
            }
        }
    }
}
