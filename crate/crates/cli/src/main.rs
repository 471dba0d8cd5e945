//! `reloc`: build submap databases, relocalise queries, train the verifier
//! and evaluate query sets.
//!
//! Exit codes: 0 success or accepted, 1 rejected, 2 error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reloc_core::pipeline::{self, FieldValue, PipelineConfig, QueryInput, Relocaliser};
use reloc_core::pose_graph::{merge, parse_edge_line, PoseGraph};
use reloc_core::synthetic::{self, PointFeatureKind, Scenario, ScenarioConfig};
use reloc_core::verify::VerifyParams;
use reloc_core::{Error, Result};

const ACCEPTED: u8 = 0;
const REJECTED: u8 = 1;
const FAILED: u8 = 2;

#[derive(Parser)]
#[command(name = "reloc", version, about = "Lidar/camera re-localisation against a prior submap map")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration file (`section.key = value`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for all randomised stages.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Database directory.
    #[arg(long)]
    db: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Describe the submaps listed in `<input>/poses.txt` and write a database.
    BuildDb {
        #[command(flatten)]
        common: Common,
        /// Map directory holding `poses.txt` and the clouds it names.
        #[arg(long)]
        input: PathBuf,
    },
    /// Relocalise one query cloud and image against a database.
    Relocalise {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFiles,
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Keypoint file to use instead of the configured source.
        #[arg(long)]
        keypoints: Option<PathBuf>,
        /// Pixel feature file to use instead of the image's sidecar.
        #[arg(long)]
        pixel_features: Option<PathBuf>,
        /// Query session root node an accepted edge points to.
        #[arg(long, default_value_t = 0)]
        query_node: u64,
        /// Query id in the report (default: the cloud file stem).
        #[arg(long)]
        name: Option<String>,
        /// Emit JSON instead of `key: value` lines.
        #[arg(long)]
        json: bool,
    },
    /// Train the verification classifier on a labelled samples file.
    TrainSvc {
        #[command(flatten)]
        common: Common,
        /// Lines of `<class> <mcs> <alignment ratio>`.
        #[arg(long)]
        samples: PathBuf,
        /// Model file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Relocalise every query of a query set and report metrics.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFiles,
        /// Directory of query directories, each with a `truth.txt`.
        #[arg(long)]
        queries: PathBuf,
        /// Also write `recall.csv` and `scatter.csv` here.
        #[arg(long)]
        csv_dir: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Attach a query session to the prior graph through an accepted edge.
    Merge {
        /// Prior pose graph.
        #[arg(long)]
        prior: PathBuf,
        /// Query session pose graph.
        #[arg(long)]
        session: PathBuf,
        /// `edge <from> <to> <pose>` line as printed by `relocalise`.
        #[arg(long)]
        edge: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic scenario: prior map, queries and training samples.
    Synth {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        roots: usize,
        #[arg(long, default_value_t = 14)]
        revisits: usize,
        #[arg(long, default_value_t = 3)]
        corrupted: usize,
        #[arg(long, default_value_t = 3)]
        unrelated: usize,
        /// Scenes behind `svc_samples.txt`; three samples each.
        #[arg(long, default_value_t = 80)]
        train_scenes: usize,
        /// Colour point features for the baseline provider instead of
        /// planted embeddings.
        #[arg(long)]
        colour: bool,
    },
}

#[derive(Args)]
struct ModelFiles {
    /// Camera calibration file.
    #[arg(long)]
    calib: Option<PathBuf>,
    /// Trained classifier file.
    #[arg(long)]
    svc: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    path.map_or_else(|| Ok(PipelineConfig::default()), PipelineConfig::load)
}

fn pick(flag: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| configured.clone())
        .ok_or_else(|| Error::InvalidArgument(format!("no {what} given on the command line or in the config")))
}

fn open(common: &Common, model: ModelFiles, config: PipelineConfig) -> Result<Relocaliser> {
    let db = pick(common.db.clone(), &config.db, "database (--db)")?;
    let calib = pick(model.calib, &config.calib, "calibration (--calib)")?;
    let svc = pick(model.svc, &config.svc_model, "classifier (--svc)")?;
    Relocaliser::open(config, &db, &calib, &svc)
}

fn json_value(v: &FieldValue) -> serde_json::Value {
    match v {
        FieldValue::Text(s) => s.clone().into(),
        FieldValue::Int(i) => (*i).into(),
        FieldValue::Float(f) => serde_json::Number::from_f64(*f).map_or(serde_json::Value::Null, Into::into),
        FieldValue::Bool(b) => (*b).into(),
    }
}

fn print_json(fields: &[(String, FieldValue)]) {
    let map: serde_json::Map<String, serde_json::Value> =
        fields.iter().map(|(k, v)| (k.clone(), json_value(v))).collect();
    println!("{}", serde_json::Value::Object(map));
}

/// `key: value` lines back into typed fields for the JSON body.
fn typed(text: &str) -> Vec<(String, FieldValue)> {
    text.lines()
        .filter_map(|l| l.split_once(": "))
        .map(|(k, v)| {
            let value = if let Ok(i) = v.parse::<u64>() {
                FieldValue::Int(i)
            } else if let Ok(f) = v.parse::<f64>() {
                FieldValue::Float(f)
            } else {
                FieldValue::Text(v.to_string())
            };
            (k.to_string(), value)
        })
        .collect()
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::BuildDb { common, input } => {
            let config = load_config(common.config.as_deref())?;
            let db = pick(common.db, &config.db, "database (--db)")?;
            let out = pipeline::build_database(&input, &config)?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            out.database.save(&db)?;
            println!("records: {}", out.database.len());
            println!("db: {}", db.display());
            Ok(ACCEPTED)
        }
        Command::Relocalise {
            common,
            model,
            cloud,
            image,
            keypoints,
            pixel_features,
            query_node,
            name,
            json,
        } => {
            let config = load_config(common.config.as_deref())?;
            let relocaliser = open(&common, model, config)?;
            let mut query = QueryInput::new(cloud, image);
            query.keypoints = keypoints;
            query.pixel_features = pixel_features;
            query.node = query_node;
            if let Some(n) = name {
                query.name = n;
            }
            let report = relocaliser.relocalise(&query, common.seed)?;
            if json {
                print_json(&report.fields());
            } else {
                print!("{}", report.to_text());
                eprint!("stage times (ms)\n{}", report.runtime_table());
            }
            Ok(if report.accepted { ACCEPTED } else { REJECTED })
        }
        Command::TrainSvc { common, samples, out } => {
            let config = load_config(common.config.as_deref())?;
            let (model, accuracy) = pipeline::train_svc(&samples, &config.svc)?;
            model.save(&out)?;
            println!("training_accuracy: {accuracy}");
            println!("model: {}", out.display());
            Ok(ACCEPTED)
        }
        Command::Evaluate {
            common,
            model,
            queries,
            csv_dir,
            json,
        } => {
            let config = load_config(common.config.as_deref())?;
            let relocaliser = open(&common, model, config)?;
            let eval = pipeline::evaluate(&relocaliser, &queries, common.seed)?;
            if let Some(dir) = csv_dir {
                std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
                for (file, body) in [("recall.csv", eval.recall_csv()), ("scatter.csv", eval.scatter_csv())] {
                    let path = dir.join(file);
                    std::fs::write(&path, body).map_err(|e| Error::Io { path, source: e })?;
                }
            }
            if json {
                print_json(&typed(&eval.to_text()));
            } else {
                print!("{}", eval.to_text());
                eprint!("stage times (ms, mean ± std over {} queries)\n{}", eval.outcomes.len(), eval.runtime_table());
            }
            Ok(ACCEPTED)
        }
        Command::Merge {
            prior,
            session,
            edge,
            out,
        } => {
            let prior = PoseGraph::load(&prior).map_err(|e| e.in_file(&prior))?;
            let revisit = PoseGraph::load(&session).map_err(|e| e.in_file(&session))?;
            let edge = parse_edge_line(edge.trim().trim_start_matches("edge:").trim())?;
            let merged = merge(&prior, &revisit, &edge)?;
            merged.save(&out)?;
            println!("nodes: {}", merged.node_count());
            println!("edges: {}", merged.edges().len());
            Ok(ACCEPTED)
        }
        Command::Synth {
            seed,
            out,
            roots,
            revisits,
            corrupted,
            unrelated,
            train_scenes,
            colour,
        } => {
            let kind = if colour { PointFeatureKind::Colour } else { PointFeatureKind::Planted };
            let scenario = Scenario::generate(ScenarioConfig {
                seed,
                roots,
                revisits,
                corrupted,
                unrelated,
                point_features: kind,
                ..ScenarioConfig::default()
            })?;
            scenario.write(&out)?;
            let samples =
                synthetic::training_samples(seed, train_scenes, kind, &scenario.camera, &VerifyParams::default())?;
            synthetic::write_training_samples(&out.join("svc_samples.txt"), &samples)?;
            println!("roots: {}", scenario.prior.len());
            println!("queries: {}", scenario.queries.len());
            println!("training_samples: {}", samples.len());
            println!("out: {}", out.display());
            Ok(ACCEPTED)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(FAILED)
        }
    }
}
