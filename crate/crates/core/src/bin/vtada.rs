use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use vtada_core::analysis::{self, tsne, TsneParams};
use vtada_core::checks::{gradcheck_suite, GRADCHECK_H, GRADCHECK_TOL};
use vtada_core::data::{self, Domain, DomainDataset};
use vtada_core::train::{self, checkpoint_load, DataSource, TrainConfig};
use vtada_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "vtada",
    version,
    about = "ViT feature extractor with adversarial domain adaptation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Pca,
    Tsne,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file; writes metrics.csv and final.ckpt.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Accuracy of a checkpoint. `builtin` regenerates the run's own data.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "builtin")]
        data: String,
    },
    /// Finite-difference check of every differentiable primitive.
    Gradcheck {
        /// 100 seeds per primitive instead of 10.
        #[arg(long)]
        full: bool,
    },
    /// Write the source and target sets described by a config as PGM trees.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extractor features for every image, plus a `.tags.csv` sidecar.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "builtin")]
        data: String,
        /// Domain tag for images loaded from a directory.
        #[arg(long, default_value = "target")]
        domain: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// 2-D projection of an embedding file; writes CSV and an SVG beside it.
    Project {
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30.0)]
        perplexity: f64,
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Overlay target-accuracy curves from one or more metrics files.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn pct(x: f64) -> String {
    if x.is_nan() {
        "n/a".into()
    } else {
        format!("{:.2}%", 100.0 * x)
    }
}

fn load_external(spec: &str, domain: Domain) -> Result<DomainDataset> {
    let ds = match DataSource::parse(spec) {
        DataSource::Builtin => unreachable!("checked by caller"),
        DataSource::Dir(p) => data::load_image_dir(&p)?,
        DataSource::Manifest(p) => data::load_manifest(&p)?,
    };
    Ok(ds.with_domain(domain))
}

fn run_config(text: &str) -> Result<TrainConfig> {
    if text.is_empty() {
        return Err(Error::Config(
            "checkpoint carries no training config; pass --data <dir>".into(),
        ));
    }
    TrainConfig::parse(text)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, out } => {
            let cfg = TrainConfig::from_file(&config)?;
            let outcome = train::train(&cfg, Some(&out))?;
            if let Some(last) = outcome.state.metrics.last() {
                println!(
                    "epoch {}: src_acc {}  tgt_acc {}  disc_acc {}",
                    last.epoch,
                    pct(last.src_acc),
                    pct(last.tgt_acc),
                    pct(last.disc_acc)
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Eval { checkpoint, data } => {
            let ck = checkpoint_load(&checkpoint)?;
            if data == "builtin" {
                let run = train::load_run_data(&run_config(&ck.config_text)?)?;
                println!("src_acc {}", pct(train::evaluate(&ck.model, &run.source)?));
                println!("tgt_acc {}", pct(train::evaluate(&ck.model, &run.target)?));
            } else {
                let ds = load_external(&data, Domain::Target)?;
                println!("acc {} on {} images", pct(train::evaluate(&ck.model, &ds)?), ds.len());
            }
        }
        Command::Gradcheck { full } => {
            let seeds = if full { 100 } else { 10 };
            let summaries = gradcheck_suite(seeds, GRADCHECK_H, GRADCHECK_TOL)?;
            let mut failed = false;
            for s in &summaries {
                println!(
                    "{:<22} {} seeds  worst rel err {:.3e} (seed {})  {}",
                    s.op,
                    s.seeds,
                    s.worst_rel_error,
                    s.worst_seed,
                    if s.passed() { "ok" } else { "FAIL" }
                );
                failed |= !s.passed();
            }
            if failed {
                return Err(Error::NumericDomain {
                    op: "gradcheck",
                    detail: "analytic and numeric gradients disagree".into(),
                });
            }
        }
        Command::GenData { spec, out } => {
            let cfg = TrainConfig::from_file(&spec)?;
            let run = train::load_run_data(&cfg)?;
            data::write_image_dir(&run.source, &out.join("source"))?;
            data::write_image_dir(&run.target, &out.join("target"))?;
            println!(
                "wrote {} source and {} target images under {}",
                run.source.len(),
                run.target.len(),
                out.display()
            );
        }
        Command::ExportEmbeddings {
            checkpoint,
            data,
            domain,
            out,
        } => {
            let ck = checkpoint_load(&checkpoint)?;
            let set = if data == "builtin" {
                let run = train::load_run_data(&run_config(&ck.config_text)?)?;
                analysis::export_embeddings(&ck.model, &[&run.source, &run.target])?
            } else {
                let domain = match domain.as_str() {
                    "source" => Domain::Source,
                    "target" => Domain::Target,
                    other => {
                        return Err(Error::Config(format!(
                            "--domain must be source or target, got '{other}'"
                        )))
                    }
                };
                let ds = load_external(&data, domain)?;
                analysis::export_embeddings(&ck.model, &[&ds])?
            };
            analysis::write_embeddings(&set, &out)?;
            println!(
                "wrote {} embeddings of dim {} to {}",
                set.len(),
                set.dim(),
                out.display()
            );
        }
        Command::Project {
            method,
            input,
            out,
            perplexity,
            iterations,
            seed,
        } => {
            let set = analysis::read_embeddings(&input)?;
            let proj = match method {
                Method::Pca => analysis::pca_project(&set)?,
                Method::Tsne => analysis::tsne_project(
                    &set,
                    &TsneParams {
                        perplexity,
                        iterations,
                        seed,
                    },
                )?,
            };
            if let analysis::ProjectionMethod::Tsne { kl_trace, .. } = &proj.method {
                if let Some((early, last)) = tsne::kl_after_exaggeration(kl_trace) {
                    println!("KL after exaggeration {early:.6}, final {last:.6}");
                }
            }
            analysis::write_projection_csv(&proj, &set.domains, &set.labels, &out)?;
            let svg = out.with_extension("svg");
            analysis::scatter_svg(&proj, &set.domains, &set.labels, &svg)?;
            println!("wrote {} and {}", out.display(), svg.display());
        }
        Command::Report { metrics, out } => {
            let paths: Vec<&Path> = metrics.iter().map(PathBuf::as_path).collect();
            analysis::convergence_report(&paths, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
