use std::path::{Path, PathBuf};
use std::time::Instant;

use gsn_core::bench::{fit_linear_cost, run_grid, write_bench_csv, BenchOp, BenchPoint, BenchSettings};
use gsn_core::eval::{evaluate, format_table, AggregateReport, EdgeClassifier};
use gsn_core::force::{DegreeFeatures, ForceParams, ModelKind, ParamFile};
use gsn_core::graph::{compute_node_statics, hide_signs, write_dump, HiddenSet, SignedGraph, SplitSpec};
use gsn_core::gsn::{ForceField, DEFAULT_EPS};
use gsn_core::sim::{
    init_state, simulate_field, write_embeddings_binary, write_embeddings_text, Integrator, SimConfig,
};
use gsn_core::train::{
    write_history_csv, Checkpoint, InitPolicy, LossConfig, LossDomain, TargetEncoding, TrainConfig, Trainer,
};
use gsn_core::Matrix;
use serde::Serialize;
use serde_json::json;

use crate::cli::*;
use crate::config::{self, pick, pick_flag, ConfigFile};
use crate::error::{CliError, CliResult};
use crate::files::{self, load_graph, read_embeddings, read_hidden, write_hidden, write_json, write_with, LoadedGraph};
use crate::manifest::RunManifest;

/// Settings shared by every command.
pub struct Context {
    pub seed: u64,
    pub parallel: bool,
    pub file: ConfigFile,
    pub out: PathBuf,
    pub argv: Vec<String>,
    pub cwd: PathBuf,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn input(&self, args: &InputArgs) -> CliResult<PathBuf> {
        args.input.clone().or_else(|| self.file.input.clone()).ok_or_else(|| CliError::Usage("missing --input".into()))
    }

    fn manifest(
        &self,
        command: &str,
        config: serde_json::Value,
        inputs: &[&Path],
        artifacts: &[&str],
    ) -> CliResult<RunManifest> {
        let config_hash = files::sha256_hex(serde_json::to_string(&config)?.as_bytes())[..16].to_string();
        let mut seeds = serde_json::Map::new();
        seeds.insert("seed".into(), self.seed.into());
        let manifest = RunManifest {
            tool: "gsn".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            cwd: self.cwd.clone(),
            argv: self.argv.clone(),
            config,
            config_hash,
            inputs: RunManifest::digest_inputs(inputs)?,
            seeds,
            artifacts: artifacts.iter().map(|a| self.path(a)).collect(),
        };
        manifest.write(&self.out)?;
        Ok(manifest)
    }

    fn split_spec(&self, flags: &SplitFlags) -> SplitSpec {
        let f = &self.file;
        SplitSpec::new(
            pick(flags.p_hidden, f.p_hidden, config::P_HIDDEN),
            pick(flags.split_seed, f.split_seed, self.seed),
        )
        .exact(pick_flag(flags.exact_split, f.exact_split))
    }

    fn sim_config(&self, flags: &SimFlags, k_default: usize, seed: u64) -> SimConfig {
        let f = &self.file;
        SimConfig {
            k: pick(flags.k, f.k, k_default),
            dt: pick(flags.dt, f.dt, config::DT),
            damping: pick(flags.damping, f.damping, config::DAMPING),
            n_steps: pick(flags.steps, f.steps, config::STEPS),
            seed,
            eps: DEFAULT_EPS,
            integrator: if pick_flag(flags.semi_implicit, f.semi_implicit) {
                Integrator::SemiImplicit
            } else {
                Integrator::Explicit
            },
            parallel: self.parallel,
        }
    }
}

fn format_name(f: InputFormat) -> &'static str {
    match f {
        InputFormat::Plain => "plain",
        InputFormat::RatingCsv => "rating_csv",
        InputFormat::Dump => "dump",
    }
}

/// Graph with its hidden edges: an explicit hidden file wins, then edges
/// already hidden in the input, otherwise signs are hidden at random.
fn split_view(
    loaded: &LoadedGraph,
    hidden_file: Option<&Path>,
    spec: &SplitSpec,
) -> CliResult<(SignedGraph, HiddenSet)> {
    if let Some(path) = hidden_file {
        let hidden = read_hidden(path, &loaded.graph)?;
        return Ok((loaded.graph.with_hidden(&hidden)?, hidden));
    }
    let own = loaded.graph.hidden_edges();
    if !own.is_empty() {
        return Ok((loaded.graph.clone(), own));
    }
    Ok(hide_signs(&loaded.graph, spec)?)
}

fn write_split(ctx: &Context, graph: &SignedGraph, hidden: &HiddenSet) -> CliResult<()> {
    write_with(&ctx.path("split.dump"), |w| write_dump(graph, w))?;
    write_hidden(&ctx.path("hidden.txt"), graph, hidden)
}

pub fn ingest(ctx: &Context, args: &InputArgs) -> CliResult<()> {
    let input = ctx.input(args)?;
    let loaded = load_graph(&input, args.format)?;
    let g = &loaded.graph;
    let positive = g.edges().iter().filter(|e| e.true_sign.is_positive()).count();
    let statics = compute_node_statics(g);
    let (staged_edges, staged_nodes, staged_positive) =
        loaded.staged.unwrap_or((g.n_edges(), g.n_nodes(), positive as f64 / g.n_edges().max(1) as f64));
    let stats = json!({
        "staged_edges": staged_edges,
        "staged_nodes": staged_nodes,
        "staged_positive_fraction": staged_positive,
        "nodes": g.n_nodes(),
        "edges": g.n_edges(),
        "positive_fraction": positive as f64 / g.n_edges().max(1) as f64,
        "degree_p80": statics.p80,
    });
    ctx.manifest(
        "ingest",
        json!({ "input": input, "format": format_name(loaded.format) }),
        &[&input],
        &["graph.dump", "stats.json"],
    )?;
    write_with(&ctx.path("graph.dump"), |w| write_dump(g, w))?;
    write_json(&ctx.path("stats.json"), &stats)?;
    println!(
        "{} directed edges on {} nodes ({:.3} positive); {} undirected edges",
        staged_edges,
        staged_nodes,
        staged_positive,
        g.n_edges()
    );
    Ok(())
}

pub fn split(ctx: &Context, args: &SplitArgs) -> CliResult<()> {
    let input = ctx.input(&args.input)?;
    let loaded = load_graph(&input, args.input.format)?;
    let spec = ctx.split_spec(&args.split);
    ctx.manifest(
        "split",
        json!({ "input": input, "format": format_name(loaded.format), "split": spec }),
        &[&input],
        &["split.dump", "hidden.txt"],
    )?;
    let (graph, hidden) = hide_signs(&loaded.graph.revealed(), &spec)?;
    write_split(ctx, &graph, &hidden)?;
    println!("hid {} of {} edge signs", hidden.len(), graph.n_edges());
    Ok(())
}

fn train_config(ctx: &Context, args: &TrainArgs) -> TrainConfig {
    let f = &ctx.file;
    let mut sim = ctx.sim_config(&args.sim, config::K, 0);
    sim.seed = 0;
    TrainConfig {
        model: pick(args.model, f.model, ModelKind::SprNn),
        epochs: pick(args.epochs, f.epochs, config::EPOCHS),
        sim,
        loss: LossConfig {
            mu: pick(args.mu, f.mu, config::MU),
            domain: pick(
                args.loss_domain.map(|d| match d {
                    CliLossDomain::VisibleOnly => LossDomain::VisibleOnly,
                    CliLossDomain::AllEdgesOracle => LossDomain::AllEdgesOracle,
                }),
                f.loss_domain,
                LossDomain::VisibleOnly,
            ),
            target_encoding: pick(
                args.targets.map(|t| match t {
                    CliTargets::PlusMinusOne => TargetEncoding::PlusMinusOne,
                    CliTargets::ZeroOne => TargetEncoding::ZeroOne,
                }),
                f.targets,
                TargetEncoding::PlusMinusOne,
            ),
        },
        lr: pick(args.lr, f.lr, config::LR),
        clip_lo: -1.0,
        clip_hi: 1.0,
        seed: ctx.seed,
        init_policy: pick(
            args.init_policy.map(|p| match p {
                CliInitPolicy::Resample => InitPolicy::ResampleEachEpoch,
                CliInitPolicy::Fixed => InitPolicy::Fixed,
            }),
            f.init_policy,
            InitPolicy::ResampleEachEpoch,
        ),
        validation_fraction: pick(args.validation_fraction, f.validation_fraction, config::VALIDATION_FRACTION),
        degree_features: pick(
            args.degree_features.map(|d| match d {
                CliDegreeFeatures::Normalized => DegreeFeatures::Normalized,
                CliDegreeFeatures::Raw => DegreeFeatures::Raw,
            }),
            f.degree_features,
            DegreeFeatures::Normalized,
        ),
    }
}

pub fn train(ctx: &Context, args: &TrainArgs) -> CliResult<()> {
    let input = ctx.input(&args.input)?;
    let cfg = train_config(ctx, args);
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let spec = ctx.split_spec(&args.split);
    let checkpoint_every = args.checkpoint_every.or(ctx.file.checkpoint_every);
    let loaded = load_graph(&input, args.input.format)?;
    let (graph, hidden) = split_view(&loaded, None, &spec)?;

    let mut inputs = vec![input.as_path()];
    if let Some(r) = &args.resume {
        inputs.push(r);
    }
    ctx.manifest(
        "train",
        json!({
            "input": input,
            "format": format_name(loaded.format),
            "split": spec,
            "train": cfg,
            "checkpoint_every": checkpoint_every,
            "resume": args.resume,
        }),
        &inputs,
        &["params.json", "history.csv", "checkpoint.json", "split.dump", "hidden.txt"],
    )?;
    write_split(ctx, &graph, &hidden)?;

    let mut trainer = match &args.resume {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
            let ckpt = Checkpoint::from_json(&text)?;
            if ckpt.config != (TrainConfig { epochs: ckpt.config.epochs, ..cfg.clone() }) {
                log::warn!("resuming with the settings stored in {}", path.display());
            }
            Trainer::from_checkpoint(&graph, &ckpt, Some(cfg.epochs))?
        }
        None => Trainer::new(&graph, &cfg)?,
    };
    log::info!(
        "training {} on {} nodes, {} edges ({} hidden, {} held out for validation)",
        cfg.model,
        graph.n_nodes(),
        graph.n_edges(),
        hidden.len(),
        trainer.validation_edges().len()
    );
    while !trainer.is_done() {
        trainer.run_epoch()?;
        if checkpoint_every.is_some_and(|n| n > 0 && trainer.epoch() % n == 0) {
            write_json(&ctx.path("checkpoint.json"), &trainer.checkpoint())?;
        }
    }
    let params = ParamFile::from_params(trainer.params(), Some(trainer.config().sim.k));
    std::fs::write(ctx.path("params.json"), params.to_json()? + "\n").map_err(CliError::io(ctx.path("params.json")))?;
    write_with(&ctx.path("history.csv"), |w| write_history_csv(trainer.history(), w))?;
    write_json(&ctx.path("checkpoint.json"), &trainer.checkpoint())?;
    if let Some(last) = trainer.history().last() {
        println!("epoch {}: loss {:.6}", last.epoch, last.loss);
    }
    Ok(())
}

fn load_params(path: &Path) -> CliResult<(ForceParams, Option<usize>)> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    let file = ParamFile::from_json(&text)?;
    Ok((file.to_params()?, file.embedding_dim))
}

/// Dimension from flags or settings, checked against the trained one.
fn resolve_k(ctx: &Context, flags: &SimFlags, trained: Option<usize>) -> CliResult<usize> {
    match (flags.k.or(ctx.file.k), trained) {
        (Some(k), Some(t)) if k != t => Err(CliError::Runtime(format!(
            "embedding dimension mismatch: parameters were trained with k = {t}, requested k = {k}"
        ))),
        (Some(k), _) => Ok(k),
        (None, Some(t)) => Ok(t),
        (None, None) => Ok(config::K),
    }
}

/// Simulates `graph` from a seeded initial state. Returns the embeddings and
/// the solver time in milliseconds (force-field preparation excluded).
fn run_embedding(
    graph: &SignedGraph,
    params: &ForceParams,
    sim: &SimConfig,
    precision: Precision,
) -> CliResult<(Matrix, f64)> {
    let statics = compute_node_statics(graph);
    let field = ForceField::new(graph, &statics, params)?;
    match precision {
        Precision::F64 => {
            let s0 = init_state::<f64>(graph.n_nodes(), sim)?;
            let start = Instant::now();
            let s = simulate_field(s0, graph, &field, sim)?;
            Ok((s.x, start.elapsed().as_secs_f64() * 1e3))
        }
        Precision::F32 => {
            let field = field.cast::<f32>();
            let s0 = init_state::<f32>(graph.n_nodes(), sim)?;
            let start = Instant::now();
            let s = simulate_field(s0, graph, &field, sim)?;
            let ms = start.elapsed().as_secs_f64() * 1e3;
            Ok((s.x.map(|v| v as f64), ms))
        }
    }
}

pub fn embed(ctx: &Context, args: &EmbedArgs) -> CliResult<()> {
    let input = ctx.input(&args.input)?;
    let params_path = args
        .params
        .clone()
        .or_else(|| ctx.file.params.clone())
        .ok_or_else(|| CliError::Usage("missing --params".into()))?;
    let (params, trained_k) = load_params(&params_path)?;
    let k = resolve_k(ctx, &args.sim, trained_k)?;
    let sim = SimConfig { k, ..ctx.sim_config(&args.sim, k, ctx.seed) };
    sim.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let spec = ctx.split_spec(&args.split);
    let precision = args.precision.unwrap_or(Precision::F64);
    let binary = pick_flag(args.binary, ctx.file.binary);
    let emb_name = if binary { "embeddings.bin" } else { "embeddings.txt" };

    let loaded = load_graph(&input, args.input.format)?;
    let mut inputs = vec![input.as_path(), params_path.as_path()];
    if let Some(h) = &args.hidden {
        inputs.push(h);
    }
    ctx.manifest(
        "embed",
        json!({
            "input": input,
            "format": format_name(loaded.format),
            "params": params_path,
            "hidden": args.hidden,
            "split": spec,
            "sim": sim,
            "precision": format!("{precision:?}").to_lowercase(),
            "binary": binary,
        }),
        &inputs,
        &[emb_name, "split.dump", "hidden.txt", "embed.json"],
    )?;
    let (graph, hidden) = split_view(&loaded, args.hidden.as_deref(), &spec)?;
    write_split(ctx, &graph, &hidden)?;
    let (x, ms) = run_embedding(&graph, &params, &sim, precision)?;
    if binary {
        write_with(&ctx.path(emb_name), |w| write_embeddings_binary(&x, w))?;
    } else {
        write_with(&ctx.path(emb_name), |w| write_embeddings_text(&x, w))?;
    }
    write_json(
        &ctx.path("embed.json"),
        &json!({
            "embed_ms": ms,
            "n_nodes": graph.n_nodes(),
            "n_edges": graph.n_edges(),
            "k": k,
            "n_steps": sim.n_steps,
            "seed": ctx.seed,
        }),
    )?;
    println!("embedded {} nodes in {:.1} ms ({} steps)", graph.n_nodes(), ms, sim.n_steps);
    Ok(())
}

fn classifier(graph: &SignedGraph, x: &Matrix, mu: f64, calibrate: bool) -> CliResult<EdgeClassifier> {
    if calibrate {
        Ok(EdgeClassifier::fit_visible(graph, x)?)
    } else {
        Ok(EdgeClassifier::threshold(mu))
    }
}

pub fn eval(ctx: &Context, args: &EvalArgs) -> CliResult<()> {
    let input = ctx.input(&args.input)?;
    let mu = pick(args.mu, ctx.file.mu, config::MU);
    let calibrate = pick_flag(args.calibrate, ctx.file.calibrate);
    let loaded = load_graph(&input, args.input.format)?;
    let params_path = args.params.clone().or_else(|| ctx.file.params.clone());
    match (&args.embeddings, params_path) {
        (Some(emb), _) => {
            let spec = ctx.split_spec(&args.split);
            let config = json!({
                "input": input,
                "format": format_name(loaded.format),
                "embeddings": emb,
                "hidden": args.hidden,
                "split": spec,
                "mu": mu,
                "calibrate": calibrate,
            });
            let mut inputs = vec![input.as_path(), emb.as_path()];
            if let Some(h) = &args.hidden {
                inputs.push(h);
            }
            let manifest = ctx.manifest("eval", config, &inputs, &["report.json", "report.txt"])?;
            let (graph, hidden) = split_view(&loaded, args.hidden.as_deref(), &spec)?;
            let x = read_embeddings(emb)?;
            if x.rows() != graph.n_nodes() {
                return Err(CliError::Runtime(format!(
                    "embeddings have {} rows but the graph has {} nodes",
                    x.rows(),
                    graph.n_nodes()
                )));
            }
            let mut report = evaluate(&graph, &hidden, &x, &classifier(&graph, &x, mu, calibrate)?)?;
            report.seed = ctx.seed;
            report.config_hash = manifest.config_hash;
            write_json(&ctx.path("report.json"), &report)?;
            let table = format_table(std::slice::from_ref(&report));
            std::fs::write(ctx.path("report.txt"), &table).map_err(CliError::io(ctx.path("report.txt")))?;
            print!("{table}");
            Ok(())
        }
        (None, Some(params_path)) => eval_seeds(ctx, args, &input, &loaded, &params_path, mu, calibrate),
        (None, None) => Err(CliError::Usage("eval needs --embeddings or --params".into())),
    }
}

/// Embeds and scores once per seed, then aggregates.
fn eval_seeds(
    ctx: &Context,
    args: &EvalArgs,
    input: &Path,
    loaded: &LoadedGraph,
    params_path: &Path,
    mu: f64,
    calibrate: bool,
) -> CliResult<()> {
    let (params, trained_k) = load_params(params_path)?;
    let k = resolve_k(ctx, &args.sim, trained_k)?;
    let n_seeds = pick(args.seeds, ctx.file.seeds, config::SEEDS);
    if n_seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| ctx.seed + i).collect();
    let base_spec = ctx.split_spec(&args.split);
    let sim = SimConfig { k, ..ctx.sim_config(&args.sim, k, ctx.seed) };
    sim.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let config = json!({
        "input": input,
        "format": format_name(loaded.format),
        "params": params_path,
        "hidden": args.hidden,
        "p_hidden": base_spec.p_hidden,
        "exact_split": base_spec.exact,
        "seeds": seeds,
        "sim": SimConfig { seed: 0, ..sim },
        "mu": mu,
        "calibrate": calibrate,
    });
    let mut artifacts: Vec<String> = seeds.iter().map(|s| format!("reports/seed_{s}.json")).collect();
    artifacts.extend(["aggregate.json".into(), "report.txt".into()]);
    let artifact_refs: Vec<&str> = artifacts.iter().map(String::as_str).collect();
    let mut inputs = vec![input, params_path];
    if let Some(h) = &args.hidden {
        inputs.push(h);
    }
    let manifest = ctx.manifest("eval", config, &inputs, &artifact_refs)?;
    std::fs::create_dir_all(ctx.path("reports")).map_err(CliError::io(ctx.path("reports")))?;

    let mut reports = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        // A split given by the input (dump or hidden file) stays fixed; a
        // random split is redrawn per seed.
        let spec = SplitSpec { seed, ..base_spec };
        let (graph, hidden) = split_view(loaded, args.hidden.as_deref(), &spec)?;
        let (x, ms) = run_embedding(&graph, &params, &SimConfig { seed, ..sim }, Precision::F64)?;
        let mut report = evaluate(&graph, &hidden, &x, &classifier(&graph, &x, mu, calibrate)?)?;
        report.seed = seed;
        report.config_hash = manifest.config_hash.clone();
        log::info!("seed {seed}: F1-MA {:.4}, AUC-L {:.4} ({ms:.0} ms)", report.f1_macro, report.auc_l);
        write_json(&ctx.path(&format!("reports/seed_{seed}.json")), &report)?;
        reports.push(report);
    }
    let aggregate = AggregateReport::new(&reports)?;
    write_json(&ctx.path("aggregate.json"), &aggregate)?;
    let table = format_table(&reports);
    std::fs::write(ctx.path("report.txt"), &table).map_err(CliError::io(ctx.path("report.txt")))?;
    print!("{table}");
    Ok(())
}

#[derive(Serialize)]
struct Ratio {
    op: &'static str,
    varied: &'static str,
    from: (usize, usize, usize),
    to: (usize, usize, usize),
    ratio: f64,
}

/// Time ratios between grid points that double `M` or `k` with the rest fixed.
fn doubling_ratios(points: &[BenchPoint]) -> Vec<Ratio> {
    let mut out = Vec::new();
    for a in points {
        for b in points {
            if a.op != b.op || a.n_nodes != b.n_nodes {
                continue;
            }
            let varied = if a.k == b.k && b.n_edges == 2 * a.n_edges {
                "edges"
            } else if a.n_edges == b.n_edges && b.k == 2 * a.k {
                "dim"
            } else {
                continue;
            };
            out.push(Ratio {
                op: a.op.name(),
                varied,
                from: (a.n_nodes, a.n_edges, a.k),
                to: (b.n_nodes, b.n_edges, b.k),
                ratio: b.median_ms / a.median_ms,
            });
        }
    }
    out
}

pub fn bench(ctx: &Context, args: &BenchArgs) -> CliResult<()> {
    let f = &ctx.file;
    let grid_text = pick(args.grid.clone(), f.grid.clone(), config::DEFAULT_GRID.to_string());
    let grid = parse_grid(&grid_text).map_err(CliError::Usage)?;
    let settings = BenchSettings {
        model: pick(args.model, f.model, ModelKind::SprNn),
        seed: ctx.seed,
        repeats: pick(args.repeats, f.repeats, gsn_core::bench::DEFAULT_REPEATS),
        sim_steps: pick(args.sim_steps, f.sim_steps, 10),
        min_sample_ms: pick(args.min_sample_ms, f.min_sample_ms, gsn_core::bench::DEFAULT_MIN_SAMPLE_MS),
        parallel: ctx.parallel,
    };
    if settings.repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    ctx.manifest("bench", json!({ "grid": grid, "settings": settings }), &[], &["bench.csv", "bench_summary.json"])?;
    let points = run_grid(&grid, &settings)?;
    write_with(&ctx.path("bench.csv"), |w| write_bench_csv(&points, w))?;
    let fits: serde_json::Map<String, serde_json::Value> = [BenchOp::GsnApply, BenchOp::Simulate]
        .into_iter()
        .map(|op| {
            let subset: Vec<BenchPoint> = points.iter().filter(|p| p.op == op).cloned().collect();
            (op.name().to_string(), json!(fit_linear_cost(&subset)))
        })
        .collect();
    let ratios = doubling_ratios(&points);
    for r in &ratios {
        println!("{:<10} doubling {:<5} {:?} -> {:?}: x{:.2}", r.op, r.varied, r.from, r.to, r.ratio);
    }
    write_json(&ctx.path("bench_summary.json"), &json!({ "fit": fits, "ratios": ratios }))?;
    Ok(())
}
