//! Command-line interface. The binary only parses, sets up logging and
//! maps errors to exit codes; everything else lives here.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::RunError;
use crate::policy::PolicyKind;
use crate::runner::{cmd_eval, CodebookFit, RunConfig};
use crate::server::{serve, ServerConfig};
use crate::tools::{cmd_export_supervision, cmd_fit_codebook, cmd_make_misleading, cmd_render};

/// Environment variable holding the log filter.
pub const LOG_ENV: &str = "CANVAS_NAV_LOG";

#[derive(Debug, Parser)]
#[command(name = "canvas-nav", version, about = "Sketch-guided navigation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an evaluation campaign and write reports.
    Eval(EvalArgs),
    /// Fit a waypoint codebook on a dataset.
    FitCodebook(FitArgs),
    /// Export token supervision records and their images.
    ExportSupervision(ExportArgs),
    /// Render the base map, canvas and front view of a datapoint.
    Render(RenderArgs),
    /// Derive a misleading twin of a precise datapoint.
    MakeMisleading(MisleadingArgs),
    /// Serve the annotation and teleoperation endpoints.
    Serve(ServeArgs),
}

/// Flags shared by the campaign-style subcommands. Flags override the
/// config file.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML or JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// baseline, oracle or remote:<endpoint>.
    #[arg(long)]
    pub policy: Option<PolicyKind>,
    /// Environment directories or dataset roots.
    #[arg(long = "datasets", num_args = 1..)]
    pub datasets: Vec<PathBuf>,
    /// Parallel workers, 0 for every core.
    #[arg(long)]
    pub workers: Option<usize>,
}

impl CommonArgs {
    pub fn run_config(&self) -> Result<RunConfig, RunError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(p) = &self.policy {
            cfg.policy = p.clone();
        }
        if !self.datasets.is_empty() {
            cfg.datasets = self.datasets.clone();
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub suite: Option<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub codebook: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Codebook file to write.
    #[arg(long, default_value = "codebook.json")]
    pub out: PathBuf,
    #[arg(long, default_value_t = crate::tokenizer::DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = CodebookFit::default().rollout_rounds)]
    pub rollout_rounds: usize,
    #[arg(long, default_value_t = CodebookFit::default().rollout_iterations)]
    pub rollout_iterations: usize,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub codebook: PathBuf,
    /// Required codebook size.
    #[arg(long, default_value_t = crate::tokenizer::DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value = "runs/supervision")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Datapoint file inside `<env>/datapoints/`.
    pub datapoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub tick: usize,
    #[arg(long, default_value = "runs/render")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MisleadingArgs {
    /// Precise datapoint file inside `<env>/datapoints/`.
    pub datapoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output datapoint file; defaults to `<id>_m.json` beside the input.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "datasets")]
    pub datasets: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: std::net::SocketAddr,
}

/// Runs one parsed command, printing a short summary to stdout.
pub fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Eval(a) => {
            let mut cfg = a.common.run_config()?;
            if let Some(o) = a.out {
                cfg.out = o;
            }
            if let Some(s) = a.suite {
                cfg.suite = Some(s);
            }
            if let Some(i) = a.iterations {
                cfg.iterations = i;
            }
            if let Some(c) = a.codebook {
                cfg.codebook = Some(c);
            }
            let summary = cmd_eval(&cfg)?;
            print!("{}", summary.report.render_text());
            println!("wrote {}", summary.out_dir.display());
        }
        Command::FitCodebook(a) => {
            let cfg = a.common.run_config()?;
            let fit = CodebookFit {
                k: a.k,
                seed: a.common.seed.unwrap_or(0),
                rollout_rounds: a.rollout_rounds,
                rollout_iterations: a.rollout_iterations,
            };
            let s = cmd_fit_codebook(&cfg, &fit, &a.out)?;
            println!("K = {}, {} waypoints", s.codebook.k, s.corpus_len);
            println!("inertia = {:.6}", s.inertia);
            println!("max_radius = {:.6}", s.codebook.max_radius);
            println!("wrote {}", a.out.display());
        }
        Command::ExportSupervision(a) => {
            let cfg = a.common.run_config()?;
            let n = cmd_export_supervision(&cfg, &a.codebook, a.k, &a.out)?;
            println!("wrote {n} records to {}", a.out.join(crate::tools::SUPERVISION_FILE).display());
        }
        Command::Render(a) => {
            let files = cmd_render(&a.datapoint, a.tick, &a.out)?;
            for f in [files.base, files.canvas, files.front] {
                println!("wrote {}", f.display());
            }
        }
        Command::MakeMisleading(a) => {
            let (path, dp) = cmd_make_misleading(&a.datapoint, a.seed, a.out.as_deref())?;
            match dp.fd_sketch_demo {
                Some(fd) => println!("wrote {} (FD {fd:.3} m)", path.display()),
                None => println!("wrote {}", path.display()),
            }
        }
        Command::Serve(a) => {
            let cfg = ServerConfig {
                datasets: a.datasets,
                bind: a.bind,
                ..ServerConfig::default()
            };
            let rt = tokio::runtime::Runtime::new().map_err(RunError::io("tokio runtime"))?;
            rt.block_on(serve(cfg)).map_err(|e| RunError::Config(e.to_string()))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from([
            "canvas-nav", "eval", "--seed", "7", "--policy", "oracle", "--out", "x", "--datasets", "a", "b",
        ])
        .unwrap();
        let Command::Eval(a) = cli.command else { panic!("not eval") };
        let cfg = a.common.run_config().unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.policy, PolicyKind::Oracle);
        assert_eq!(cfg.datasets, vec![PathBuf::from("a"), PathBuf::from("b")]);
        assert_eq!(a.out, Some(PathBuf::from("x")));
    }

    #[test]
    fn every_subcommand_parses() {
        for args in [
            vec!["fit-codebook", "--k", "64", "--out", "cb.json"],
            vec!["export-supervision", "--codebook", "cb.json"],
            vec!["render", "d/datapoints/dp_0000.json", "--tick", "2"],
            vec!["make-misleading", "d/datapoints/dp_0000.json", "--seed", "3"],
            vec!["serve", "--bind", "127.0.0.1:0"],
        ] {
            Cli::try_parse_from(std::iter::once("canvas-nav").chain(args.iter().copied())).unwrap();
        }
        assert!(Cli::try_parse_from(["canvas-nav", "eval", "--policy", "vlm"]).is_err());
    }
}
