use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, warn};

use toposem::eval::sim::{load_spec, simulate_scene};
use toposem::io::bundle::{load_bundle, write_bundle};
use toposem::io::config::PipelineConfig;
use toposem::io::export::{export_outputs, plan_jsonl, read_graph, read_manifest, write_metrics};
use toposem::io::pipeline::{recompute_metrics, run_pipeline, PlanRequest, PlanResult};
use toposem::planner::{build_adjacency, plan};
use toposem::semantics::RoomLabel;
use toposem::Result;

#[derive(Parser)]
#[command(name = "toposem", version, about = "Topological semantic mapping from keyframe embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a dataset bundle and write graph, clusters, trajectory and metrics.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        /// TOML config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Room-to-room plan request, e.g. `bathroom:garden`.
        #[arg(long)]
        plan: Option<PlanRequest>,
    },
    /// Recompute metrics.json for an output directory.
    Eval {
        #[arg(long)]
        out: PathBuf,
        /// Bundle holding ground truth; defaults to the one recorded in the manifest.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Write a simulated dataset bundle.
    Simulate {
        /// Scene spec JSON file or a preset name.
        #[arg(long)]
        spec: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plan between two room labels on an exported graph.jsonl; prints plan lines.
    Plan {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        /// Count hops instead of metres.
        #[arg(long)]
        unit_weights: bool,
    },
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { dataset, config, out, plan } => {
            let cfg = match &config {
                Some(p) => PipelineConfig::load(p)?,
                None => PipelineConfig::default(),
            }
            .with_env_seed()?;
            let loaded = load_bundle(&dataset)?;
            for w in &loaded.warnings {
                warn!("{w}");
            }
            let run = run_pipeline(&loaded.bundle, &cfg, plan.as_ref())?;
            export_outputs(&run, &out, &dataset.display().to_string(), &cfg)?;
            for m in &run.metrics {
                println!("{}", serde_json::to_string(m).expect("serializable"));
            }
            info!("wrote {}", out.display());
        }
        Command::Eval { out, dataset } => {
            let (recorded, _) = read_manifest(&out)?;
            let dataset = dataset.unwrap_or_else(|| PathBuf::from(recorded));
            let gt = load_bundle(&dataset)?.bundle.ground_truth;
            let run = read_graph(&out.join(toposem::io::export::GRAPH_FILE))?;
            let metrics = recompute_metrics(&run, gt.as_ref())?;
            write_metrics(&metrics, &out)?;
            for m in &metrics {
                println!("{}", serde_json::to_string(m).expect("serializable"));
            }
        }
        Command::Simulate { spec, seed, out } => {
            let mut spec = load_spec(&spec)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let bundle = simulate_scene(&spec)?;
            write_bundle(&bundle, &out)?;
            info!("wrote {} keyframes to {}", bundle.keyframes.len(), out.display());
        }
        Command::Plan { graph, from, to, unit_weights } => {
            let run = read_graph(&graph)?;
            let request = PlanRequest { from: RoomLabel::new(from)?, to: RoomLabel::new(to)? };
            let adj = build_adjacency(&run.snapshot, &run.clusters, unit_weights);
            let outcome = plan(&adj, &run.snapshot, &run.clusters, &request.from, &request.to)?;
            print!("{}", plan_jsonl(&run, &PlanResult { request, outcome }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
