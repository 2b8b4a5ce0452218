mod store;

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use tbs_core::cluster::{matrix_to_csv, ClusterAssignment, CrossPlayMatrix, SimilarityMatrix};
use tbs_core::coordinator::{decision_log_csv, ClusterModel, TbsAgent};
use tbs_core::eval::{episode_seed, AblationAxis, EvalReport, Method};
use tbs_core::pipeline::{self, BrEnsemble, Pools, RunConfig, ToMModels, Trained};
use tbs_core::play::{run_episode, Actor, Greedy};
use tbs_core::Seat;

use store::{Stage, Store};

#[derive(Parser)]
#[command(
    name = "tbs",
    version,
    about = "Staged pipeline for ToM-based best-response selection"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalOpts {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: logical CPU count).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Artifact directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Write TBS decision logs during evaluation.
    #[arg(long, global = true)]
    trace: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train (or plant) the training and held-out partner pools.
    BuildPool,
    /// Cross-play and similarity matrices over the training pool.
    Crossplay,
    /// Strategy clusters from the similarity matrix.
    Cluster,
    /// One best response per cluster plus the single-BR baseline.
    TrainBr,
    /// Cluster and global ToM models, assembled into the cluster model.
    TrainTom,
    /// Evaluate methods against the held-out pool.
    Evaluate {
        /// Comma-separated methods (tbs, single_br, random_selection, oracle, uniform_random).
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
    },
    /// Sweep one axis and evaluate every grid point.
    Ablate {
        /// pool_size, k_fixed, window, steps_per_selection or concept_set.
        #[arg(long)]
        axis: String,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<String>,
    },
    /// Every stage in order, reusing artifacts that are already current.
    RunAll,
}

fn load_config(opts: &GlobalOpts) -> Result<RunConfig> {
    let mut cfg = match &opts.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            RunConfig::from_json(&text)
                .with_context(|| format!("invalid config {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if let Some(out) = &opts.out {
        cfg.artifact_dir = out.to_string_lossy().into_owned();
    }
    cfg.validate().context("invalid configuration")?;
    Ok(cfg)
}

fn stage_err(stage: Stage) -> impl FnOnce(tbs_core::TbsError) -> anyhow::Error {
    move |e| anyhow::anyhow!("stage `{}` failed: {e}", stage.command())
}

fn build_pool(store: &Store, cfg: &RunConfig) -> Result<Pools> {
    let pools = pipeline::stage_pools(cfg).map_err(stage_err(Stage::Pool))?;
    store.write_json(cfg, Stage::Pool, "pools.json", &pools)?;
    let manifest = [pools.train.manifest(), pools.heldout.manifest()];
    store.write_json(cfg, Stage::Pool, "manifest.json", &manifest)?;
    Ok(pools)
}

#[derive(Serialize, Deserialize)]
struct Matrices {
    crossplay: CrossPlayMatrix,
    similarity: SimilarityMatrix,
}

fn crossplay(store: &Store, cfg: &RunConfig) -> Result<Matrices> {
    let pools: Pools = store.read_json(cfg, Stage::Pool, "pools.json")?;
    let (crossplay, similarity) =
        pipeline::stage_crossplay(cfg, &pools.train).map_err(stage_err(Stage::Crossplay))?;
    store.write_text(
        cfg,
        Stage::Crossplay,
        "crossplay.csv",
        &matrix_to_csv(&crossplay.x),
    )?;
    store.write_text(
        cfg,
        Stage::Crossplay,
        "similarity.csv",
        &matrix_to_csv(&similarity.s),
    )?;
    let m = Matrices {
        crossplay,
        similarity,
    };
    store.write_json(cfg, Stage::Crossplay, "crossplay.json", &m)?;
    Ok(m)
}

fn cluster(store: &Store, cfg: &RunConfig) -> Result<ClusterAssignment> {
    let m: Matrices = store.read_json(cfg, Stage::Crossplay, "crossplay.json")?;
    let a = pipeline::stage_cluster(cfg, &m.similarity).map_err(stage_err(Stage::Cluster))?;
    log::info!("k = {}, labels {:?}", a.k, a.labels);
    store.write_json(cfg, Stage::Cluster, "assignment.json", &a)?;
    Ok(a)
}

fn train_br(store: &Store, cfg: &RunConfig) -> Result<BrEnsemble> {
    let pools: Pools = store.read_json(cfg, Stage::Pool, "pools.json")?;
    let a: ClusterAssignment = store.read_json(cfg, Stage::Cluster, "assignment.json")?;
    let brs = pipeline::stage_train_br(cfg, &pools.train, &a).map_err(stage_err(Stage::TrainBr))?;
    store.write_json(cfg, Stage::TrainBr, "best_responses.json", &brs)?;
    Ok(brs)
}

fn train_tom(store: &Store, cfg: &RunConfig) -> Result<ClusterModel> {
    let pools: Pools = store.read_json(cfg, Stage::Pool, "pools.json")?;
    let a: ClusterAssignment = store.read_json(cfg, Stage::Cluster, "assignment.json")?;
    let brs: BrEnsemble = store.read_json(cfg, Stage::TrainBr, "best_responses.json")?;
    let datasets = pipeline::stage_tom_datasets(cfg, &pools.train, &a, &brs.clusters)
        .map_err(stage_err(Stage::TrainTom))?;
    let tom: ToMModels =
        pipeline::stage_train_tom(cfg, &datasets).map_err(stage_err(Stage::TrainTom))?;
    let model = pipeline::assemble_model(cfg, a, &brs, tom);
    store.write_json(cfg, Stage::TrainTom, "model.json", &model)?;
    Ok(model)
}

fn load_trained(store: &Store, cfg: &RunConfig) -> Result<Trained> {
    let pools: Pools = store.read_json(cfg, Stage::Pool, "pools.json")?;
    let m: Matrices = store.read_json(cfg, Stage::Crossplay, "crossplay.json")?;
    let brs: BrEnsemble = store.read_json(cfg, Stage::TrainBr, "best_responses.json")?;
    let model: ClusterModel = store.read_json(cfg, Stage::TrainTom, "model.json")?;
    Ok(Trained {
        pools,
        crossplay: m.crossplay,
        similarity: m.similarity,
        model,
        single_br: brs.single,
    })
}

fn write_traces(store: &Store, cfg: &RunConfig, trained: &Trained) -> Result<()> {
    let eval_seed = cfg.stage_seed("evaluate", 0);
    let mut env = cfg.env.build()?;
    for (i, partner) in trained.pools.heldout.pairs.iter().enumerate() {
        for seat in cfg.env.cooperator_seats() {
            let mut tbs = TbsAgent::new(&trained.model, seat, cfg.coordinator)?;
            tbs.enable_trace();
            let mut other = Greedy(partner.seat(seat.other()));
            let actors: [&mut dyn Actor; 2] = match seat {
                Seat::First => [&mut tbs, &mut other],
                Seat::Second => [&mut other, &mut tbs],
            };
            let s = episode_seed(eval_seed, partner.provenance.seed, seat, 0);
            run_episode(env.as_mut(), actors, s, false)?;
            let file = format!("trace/partner{i}_seat{}.csv", seat.number());
            store.write_text(
                cfg,
                Stage::Evaluate,
                &file,
                &decision_log_csv(&tbs.take_trace()),
            )?;
        }
    }
    Ok(())
}

fn evaluate(store: &Store, cfg: &RunConfig, trace: bool) -> Result<EvalReport> {
    let trained = load_trained(store, cfg)?;
    let report =
        pipeline::evaluate(cfg, &trained, "base", "-").map_err(stage_err(Stage::Evaluate))?;
    store.write_json(cfg, Stage::Evaluate, "report.json", &report)?;
    store.write_text(cfg, Stage::Evaluate, "report.csv", &report.to_csv())?;
    if trace {
        write_traces(store, cfg, &trained)?;
    }
    Ok(report)
}

type StageFn = fn(&Store, &RunConfig) -> Result<()>;

/// Runs the stages whose artifacts are missing or stale.
fn ensure_trained(store: &Store, cfg: &RunConfig) -> Result<()> {
    let stages: [(Stage, &str, StageFn); 5] = [
        (Stage::Pool, "pools.json", |s, c| build_pool(s, c).map(drop)),
        (Stage::Crossplay, "crossplay.json", |s, c| {
            crossplay(s, c).map(drop)
        }),
        (Stage::Cluster, "assignment.json", |s, c| {
            cluster(s, c).map(drop)
        }),
        (Stage::TrainBr, "best_responses.json", |s, c| {
            train_br(s, c).map(drop)
        }),
        (Stage::TrainTom, "model.json", |s, c| {
            train_tom(s, c).map(drop)
        }),
    ];
    for (stage, file, run) in stages {
        if store.exists(cfg, stage, file)
            && store
                .read_json::<serde_json::Value>(cfg, stage, file)
                .is_ok()
        {
            log::info!(
                "{}: cached at {}",
                stage.command(),
                store.stage_dir(cfg, stage).display()
            );
        } else {
            log::info!("{}: running", stage.command());
            run(store, cfg)?;
        }
    }
    Ok(())
}

fn ablate(store: &Store, base: &RunConfig, axis: &str, grid: &[String]) -> Result<PathBuf> {
    let axis = AblationAxis::parse(axis)?;
    let mut report = EvalReport::default();
    for value in grid {
        let cfg = axis
            .apply(base, value)
            .with_context(|| format!("grid value `{value}`"))?;
        cfg.validate()
            .with_context(|| format!("grid value `{value}`"))?;
        ensure_trained(store, &cfg)?;
        let trained = load_trained(store, &cfg)?;
        let point = pipeline::evaluate(&cfg, &trained, axis.name(), value)
            .map_err(stage_err(Stage::Evaluate))?;
        report.merge(point);
    }
    let key = tbs_core::seed::hash_json(&serde_json::json!({
        "base": base.hash(),
        "axis": axis.name(),
        "grid": grid,
    }));
    let dir = PathBuf::from(&base.artifact_dir).join("ablate").join(key);
    let mut json = report.to_json()?;
    json.push('\n');
    store::write_atomic(&dir.join("report.json"), json.as_bytes())?;
    store::write_atomic(&dir.join("report.csv"), report.to_csv().as_bytes())?;
    print!("{}", report.to_csv());
    Ok(dir)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.global)?;
    if let Command::Evaluate { methods: Some(m) } = &cli.command {
        cfg.eval.methods = m
            .iter()
            .map(|s| Method::parse(s))
            .collect::<tbs_core::Result<_>>()?;
        if cfg.eval.methods.is_empty() {
            bail!("--methods needs at least one method");
        }
    }
    let store = Store::new(&cfg.artifact_dir);
    match &cli.command {
        Command::BuildPool => {
            let pools = build_pool(&store, &cfg)?;
            log::info!(
                "built {} training and {} held-out pairs",
                pools.train.len(),
                pools.heldout.len()
            );
        }
        Command::Crossplay => {
            crossplay(&store, &cfg)?;
        }
        Command::Cluster => {
            cluster(&store, &cfg)?;
        }
        Command::TrainBr => {
            train_br(&store, &cfg)?;
        }
        Command::TrainTom => {
            train_tom(&store, &cfg)?;
        }
        Command::Evaluate { .. } => {
            print!("{}", evaluate(&store, &cfg, cli.global.trace)?.to_csv())
        }
        Command::Ablate { axis, grid } => {
            let dir = ablate(&store, &cfg, axis, grid)?;
            log::info!("ablation report in {}", dir.display());
        }
        Command::RunAll => {
            ensure_trained(&store, &cfg)?;
            print!("{}", evaluate(&store, &cfg, cli.global.trace)?.to_csv());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(w) = cli.global.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build_global()
        {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
