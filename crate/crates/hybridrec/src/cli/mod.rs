//! Command-line pipeline: synthesize data, prepare interactions, fit ALS,
//! train the hybrid network, evaluate, recommend and run coverage analysis.
//!
//! Exit codes: 0 success, 2 config error, 3 empty data, 4 missing artifact,
//! 1 internal error.

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::als::{self, AlsError};
use crate::coverage as cov;
use crate::dataset::{self, io as dio, stats, synth, DatasetError};
use crate::embeddings::{synth_table, synth_table_from_content};
use crate::hybridnet::{self, persist, Head, HybridError, TargetSource, VisitorContext};
use crate::metrics::{self, Averaging, MatrixView};

pub use config::{RunConfig, SimilaritySource};

pub const EVENTS_FILE: &str = "events.csv";
pub const VISITOR_FEATURES_FILE: &str = "visitor_features.csv";
pub const DEVICE_FEATURES_FILE: &str = "device_features.csv";
pub const DESCRIPTIONS_FILE: &str = "device_descriptions.csv";
pub const MATRIX_FILE: &str = "matrix.txt";
pub const ROWS_FILE: &str = "rows.txt";
pub const ALS_MODEL_FILE: &str = "als_model.txt";
pub const ALS_OBJECTIVE_FILE: &str = "als_objective.csv";
pub const ALS_METRICS_FILE: &str = "als_metrics.csv";
pub const MODEL_DIR: &str = "model";
pub const TRAIN_CURVE_FILE: &str = "train_curve.csv";
pub const EVAL_CSV_FILE: &str = "eval_report.csv";
pub const EVAL_TEXT_FILE: &str = "eval_report.txt";
pub const RECOMMEND_FILE: &str = "recommendations.csv";
pub const COVERAGE_FILE: &str = "coverage_report.csv";
pub const CONFIG_ECHO_FILE: &str = "config.echo";

#[derive(Debug)]
pub enum CliError {
    Config(String),
    EmptyData(String),
    MissingArtifact(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::EmptyData(_) => 3,
            CliError::MissingArtifact(_) => 4,
            CliError::Internal(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m)
            | CliError::EmptyData(m)
            | CliError::MissingArtifact(m)
            | CliError::Internal(m) => m,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match &e {
            DatasetError::InvalidPercentile(_)
            | DatasetError::InvalidFraction(_)
            | DatasetError::InvalidConfig(_)
            | DatasetError::TooFewRows(_)
            | DatasetError::Parse { .. }
            | DatasetError::DuplicatePair { .. }
            | DatasetError::UnsetScore { .. } => CliError::Config(e.to_string()),
            DatasetError::EmptyAggregates => CliError::EmptyData(e.to_string()),
            DatasetError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                CliError::MissingArtifact(e.to_string())
            }
            DatasetError::Io { .. } => CliError::Internal(e.to_string()),
        }
    }
}

impl From<AlsError> for CliError {
    fn from(e: AlsError) -> Self {
        match &e {
            AlsError::BadHyper(_) | AlsError::Parse { .. } => CliError::Config(e.to_string()),
            AlsError::EmptyMatrix => CliError::EmptyData(e.to_string()),
            AlsError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                CliError::MissingArtifact(e.to_string())
            }
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<HybridError> for CliError {
    fn from(e: HybridError) -> Self {
        match &e {
            HybridError::BadConfig(_)
            | HybridError::FeatureWidth { .. }
            | HybridError::TargetWidth { .. }
            | HybridError::BadK { .. } => CliError::Config(e.to_string()),
            HybridError::NoTrainingRows { .. } => CliError::EmptyData(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<crate::metrics::MetricError> for CliError {
    fn from(e: crate::metrics::MetricError) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<cov::CoverageError> for CliError {
    fn from(e: cov::CoverageError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "hybridrec",
    about = "Hybrid recommender pipeline: implicit-feedback ALS fused with a four-branch deep network",
    version
)]
struct Cli {
    /// Config file with `key = value` lines (# comments allowed)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; drives every random choice in the pipeline
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory for artifacts
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic events/features/descriptions dataset
    Synth {
        #[arg(long)]
        visitors: Option<usize>,
        #[arg(long)]
        devices: Option<usize>,
        #[arg(long)]
        events: Option<usize>,
        #[arg(long)]
        popularity_skew: Option<f64>,
    },
    /// Score, reduce and materialize the interaction matrix and training rows
    Prep {
        /// Events CSV (defaults to <out>/events.csv)
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long)]
        percentile: Option<f64>,
        #[arg(long)]
        sequence_length: Option<usize>,
    },
    /// Fit the implicit-feedback ALS factor model
    Als {
        #[arg(long)]
        factors: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        solver: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Train the four-branch hybrid network
    Train {
        #[arg(long)]
        head: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        n3_fusion: Option<String>,
        #[arg(long)]
        target_source: Option<String>,
    },
    /// Evaluate the trained model on the validation split
    Eval {
        #[arg(long)]
        threshold: Option<f64>,
        /// Macro-average precision/recall instead of micro
        #[arg(long)]
        macro_average: bool,
    },
    /// Rank devices for a visitor (cold start supported)
    Recommend {
        #[arg(long)]
        visitor: Option<String>,
        /// Comma-separated device sequence, oldest first
        #[arg(long)]
        sequence: Option<String>,
        /// Fully cold query: unknown visitor, empty sequence, default features
        #[arg(long)]
        cold: bool,
        #[arg(short, long)]
        k: Option<usize>,
        #[arg(long)]
        include_seen: bool,
        /// Visitor feature CSV (defaults to <out>/visitor_features.csv)
        #[arg(long)]
        visitor_features: Option<PathBuf>,
        /// Device feature CSV (defaults to <out>/device_features.csv)
        #[arg(long)]
        device_features: Option<PathBuf>,
    },
    /// Greedy budgeted coverage maximization over device neighborhoods
    Coverage {
        #[arg(long)]
        lambda_n: Option<f64>,
        #[arg(short, long)]
        k: Option<usize>,
        /// First-line device whose neighborhood counts as already covered
        #[arg(long)]
        seed_device: Option<String>,
        /// Similarity source: factors | matrix
        #[arg(long)]
        similarity: Option<String>,
    },
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage errors exit 2 (the config-error contract);
            // --help/--version print to stdout and exit 0.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        if !path.exists() {
            return Err(CliError::MissingArtifact(format!(
                "config file {} does not exist",
                path.display()
            )));
        }
        cfg.apply_file(path).map_err(CliError::Config)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string()).map_err(CliError::Config)?;
    }
    let out = cli.out.clone();
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::Internal(format!("cannot create {}: {e}", out.display())))?;

    match cli.command {
        Command::Synth {
            visitors,
            devices,
            events,
            popularity_skew,
        } => {
            if let Some(v) = visitors {
                cfg.synth.visitors = v;
            }
            if let Some(d) = devices {
                cfg.synth.devices = d;
            }
            if let Some(e) = events {
                cfg.synth.events = e;
            }
            if let Some(s) = popularity_skew {
                cfg.synth.popularity_skew = s;
            }
            echo_config(&cfg, &out)?;
            cmd_synth(&cfg, &out)
        }
        Command::Prep {
            events,
            percentile,
            sequence_length,
        } => {
            if let Some(p) = percentile {
                cfg.percentile = p;
            }
            if let Some(m) = sequence_length {
                cfg.sequence_length = m;
            }
            echo_config(&cfg, &out)?;
            let events_path = events.unwrap_or_else(|| out.join(EVENTS_FILE));
            cmd_prep(&cfg, &out, &events_path)
        }
        Command::Als {
            factors,
            iterations,
            solver,
            alpha,
        } => {
            if let Some(f) = factors {
                cfg.als.factors = f;
            }
            if let Some(i) = iterations {
                cfg.als.iterations = i;
            }
            if let Some(s) = solver {
                cfg.set("als.solver", &s).map_err(CliError::Config)?;
            }
            if let Some(a) = alpha {
                cfg.als.alpha = a;
            }
            echo_config(&cfg, &out)?;
            cmd_als(&cfg, &out)
        }
        Command::Train {
            head,
            epochs,
            batch,
            n3_fusion,
            target_source,
        } => {
            if let Some(h) = head {
                cfg.set("net.head", &h).map_err(CliError::Config)?;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(b) = batch {
                cfg.batch = b;
            }
            if let Some(f) = n3_fusion {
                cfg.set("net.n3_fusion", &f).map_err(CliError::Config)?;
            }
            if let Some(t) = target_source {
                cfg.set("net.target_source", &t).map_err(CliError::Config)?;
            }
            echo_config(&cfg, &out)?;
            cmd_train(&cfg, &out)
        }
        Command::Eval {
            threshold,
            macro_average,
        } => {
            if let Some(t) = threshold {
                cfg.eval_threshold = t;
            }
            if macro_average {
                cfg.eval_averaging = Averaging::Macro;
            }
            echo_config(&cfg, &out)?;
            cmd_eval(&cfg, &out)
        }
        Command::Recommend {
            visitor,
            sequence,
            cold,
            k,
            include_seen,
            visitor_features,
            device_features,
        } => {
            if let Some(k) = k {
                cfg.recommend_k = k;
            }
            if include_seen {
                cfg.include_seen = true;
            }
            echo_config(&cfg, &out)?;
            cmd_recommend(
                &cfg,
                &out,
                visitor,
                sequence,
                cold,
                visitor_features,
                device_features,
            )
        }
        Command::Coverage {
            lambda_n,
            k,
            seed_device,
            similarity,
        } => {
            if let Some(l) = lambda_n {
                cfg.coverage_lambda_n = l;
            }
            if let Some(k) = k {
                cfg.coverage_k = k;
            }
            if let Some(s) = similarity {
                cfg.set("coverage.similarity", &s).map_err(CliError::Config)?;
            }
            echo_config(&cfg, &out)?;
            cmd_coverage(&cfg, &out, seed_device)
        }
    }
}

fn echo_config(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    std::fs::write(out.join(CONFIG_ECHO_FILE), cfg.to_text())
        .map_err(|e| CliError::Internal(format!("cannot write config echo: {e}")))
}

fn require(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact(format!(
            "missing artifact: {}",
            path.display()
        )))
    }
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content)
        .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let data = synth::synth_generate(&cfg.synth)?;
    dio::write_events_csv(&out.join(EVENTS_FILE), &data.events)?;
    dio::write_feature_csv(&out.join(VISITOR_FEATURES_FILE), &data.visitor_features)?;
    dio::write_feature_csv(&out.join(DEVICE_FEATURES_FILE), &data.device_features)?;
    dio::write_descriptions_csv(&out.join(DESCRIPTIONS_FILE), &data.descriptions)?;
    println!(
        "synth: wrote {} events over {} visitors x {} devices to {}",
        data.events.len(),
        cfg.synth.visitors,
        cfg.synth.devices,
        out.display()
    );
    Ok(())
}

pub fn cmd_prep(cfg: &RunConfig, out: &Path, events_path: &Path) -> Result<(), CliError> {
    require(events_path)?;
    require(&out.join(VISITOR_FEATURES_FILE))?;
    require(&out.join(DEVICE_FEATURES_FILE))?;
    let events = dio::read_events_csv(events_path)?;
    let visitor_features = dio::read_feature_csv(&out.join(VISITOR_FEATURES_FILE))?;
    let device_features = dio::read_feature_csv(&out.join(DEVICE_FEATURES_FILE))?;

    let aggs = dataset::aggregate(&events);
    let reduction = dataset::reduce_by_percentile(&aggs, cfg.percentile)?;
    let mut kept = reduction.aggregates.clone();
    if kept.is_empty() {
        return Err(CliError::EmptyData(
            "no interactions survive the percentile reduction".into(),
        ));
    }
    dataset::weight_scores(&mut kept);
    dataset::normalize_scores(&mut kept);
    let matrix = dataset::build_matrix(&kept)?;
    let (rows, denorm_report) = dataset::denormalize(
        &matrix,
        &events,
        cfg.sequence_length,
        &visitor_features,
        &device_features,
    );
    if denorm_report.imputed_visitors > 0 || denorm_report.imputed_devices > 0 {
        eprintln!(
            "warning: imputed features for {} visitors and {} device rows",
            denorm_report.imputed_visitors, denorm_report.imputed_devices
        );
    }
    dio::write_matrix(&out.join(MATRIX_FILE), &matrix)?;
    dio::write_rows(&out.join(ROWS_FILE), &rows, &matrix.device_index)?;

    let st = stats::prep_stats(&kept);
    write_file(&out.join("prep_stats_hits_histogram.csv"), &st.hits_histogram.to_csv())?;
    write_file(&out.join("prep_stats_avg_histogram.csv"), &st.avg_histogram.to_csv())?;
    write_file(&out.join("prep_stats_correlation.csv"), &st.correlation_csv())?;

    let mut summary = String::new();
    let _ = writeln!(summary, "percentile = {}", cfg.percentile);
    let _ = writeln!(summary, "hits_threshold = {}", reduction.threshold);
    let _ = writeln!(
        summary,
        "devices = {} -> {}",
        reduction.devices_before, reduction.devices_after
    );
    let _ = writeln!(
        summary,
        "visitors = {} -> {}",
        reduction.visitors_before, reduction.visitors_after
    );
    let _ = writeln!(summary, "interactions = {}", kept.len());
    let _ = writeln!(
        summary,
        "corr(weighted, normalized) = {:.6}",
        st.correlation_at("weighted_score", "normalized_score")
    );
    write_file(&out.join("prep_summary.txt"), &summary)?;
    print!("prep: {summary}");
    Ok(())
}

pub fn cmd_als(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    require(&out.join(MATRIX_FILE))?;
    let matrix = dio::read_matrix(&out.join(MATRIX_FILE))?;
    let model = als::als_fit(&matrix, &cfg.als)?;
    als::write_model(&out.join(ALS_MODEL_FILE), &model)?;

    let mut objective = String::from("sweep,objective\n");
    for (i, j) in model.objective_trace.iter().enumerate() {
        let _ = writeln!(objective, "{},{j:.10}", i + 1);
    }
    write_file(&out.join(ALS_OBJECTIVE_FILE), &objective)?;

    // Observed-cell reconstruction error.
    let recon = als::reconstruct(&model);
    let (mut se, mut ae, mut count) = (0.0, 0.0, 0usize);
    for u in 0..matrix.visitors() {
        for d in 0..matrix.devices() {
            let r = matrix.get(u, d);
            if r > 0.0 {
                let e = recon.get(u, d) - r;
                se += e * e;
                ae += e.abs();
                count += 1;
            }
        }
    }
    let mut metrics_csv = String::from("metric,value\n");
    let _ = writeln!(metrics_csv, "observed_rmse,{:.10}", (se / count as f64).sqrt());
    let _ = writeln!(metrics_csv, "observed_mae,{:.10}", ae / count as f64);
    let _ = writeln!(
        metrics_csv,
        "final_objective,{:.10}",
        model.objective_trace.last().copied().unwrap_or(f64::NAN)
    );
    write_file(&out.join(ALS_METRICS_FILE), &metrics_csv)?;
    println!(
        "als: f={} solver={} sweeps={} final objective {:.4}",
        cfg.als.factors,
        cfg.als.solver.as_str(),
        cfg.als.iterations,
        model.objective_trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

/// Text tables and names shared by train/eval/recommend.
fn build_text_tables(
    cfg: &RunConfig,
    out: &Path,
) -> Result<
    (
        crate::embeddings::EmbeddingTable,
        crate::embeddings::EmbeddingTable,
        std::collections::BTreeMap<String, String>,
    ),
    CliError,
> {
    require(&out.join(DESCRIPTIONS_FILE))?;
    let descriptions = dio::read_descriptions_csv(&out.join(DESCRIPTIONS_FILE))?;
    let word_tokens: Vec<String> = descriptions
        .iter()
        .flat_map(|d| d.name.split_whitespace().map(String::from))
        .collect();
    let word = synth_table(&word_tokens, cfg.word_dim, cfg.seed ^ 0x77);
    let sent_entries: Vec<(String, String)> = descriptions
        .iter()
        .map(|d| (d.device_id.clone(), d.description.clone()))
        .collect();
    let sent = synth_table_from_content(&sent_entries, cfg.sent_dim, cfg.seed ^ 0x5e);
    let names = descriptions
        .into_iter()
        .map(|d| (d.device_id, d.name))
        .collect();
    Ok((word, sent, names))
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    require(&out.join(ROWS_FILE))?;
    require(&out.join(ALS_MODEL_FILE))?;
    let (mut rows, device_index) = dio::read_rows(&out.join(ROWS_FILE))?;
    if rows.len() < 2 {
        return Err(CliError::EmptyData(format!(
            "need at least 2 rows to split, found {}",
            rows.len()
        )));
    }
    let als_model = als::read_model(&out.join(ALS_MODEL_FILE))?;
    if als_model.device_index != device_index {
        return Err(CliError::Config(
            "device index mismatch between rows file and ALS model; re-run prep and als".into(),
        ));
    }
    if cfg.target_source == TargetSource::AlsReconstruction {
        let recon = als::reconstruct(&als_model);
        hybridnet::retarget_from_reconstruction(&mut rows, &recon);
    }
    let (emb_visitor, emb_device) = als::export_embeddings(&als_model);
    let (word, sent, names) = build_text_tables(cfg, out)?;

    let feature_count = rows[0].feature_vector.len();
    let device_count = device_index.len();
    let net_config = cfg.hybrid_config(feature_count, device_count);
    let mut net = hybridnet::HybridNet::build(
        net_config,
        device_index,
        emb_visitor,
        emb_device,
        word,
        sent,
        names,
    )?;

    let (train_rows, val_rows) = dataset::split(rows, cfg.train_fraction, cfg.seed)?;
    let report = hybridnet::train(&mut net, &train_rows, &val_rows)?;
    if report.skipped_zero_target_rows > 0 {
        eprintln!(
            "warning: skipped {} all-zero target rows in classification training",
            report.skipped_zero_target_rows
        );
    }
    let mut curve = String::from("epoch,train_loss,validation_loss\n");
    for e in &report.epochs {
        let _ = writeln!(curve, "{},{:.10},{:.10}", e.epoch, e.train_loss, e.validation_loss);
    }
    write_file(&out.join(TRAIN_CURVE_FILE), &curve)?;
    persist::save(&mut net, &out.join(MODEL_DIR))?;
    let last = report.epochs.last();
    println!(
        "train: head={} epochs={} final train loss {:.6} validation loss {:.6}",
        cfg.head.as_str(),
        report.epochs.len(),
        last.map_or(f64::NAN, |e| e.train_loss),
        last.map_or(f64::NAN, |e| e.validation_loss),
    );
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    require(&out.join(ROWS_FILE))?;
    require(&out.join(MODEL_DIR).join(persist::CONFIG_FILE))?;
    let (rows, _) = dio::read_rows(&out.join(ROWS_FILE))?;
    let mut net = persist::load(&out.join(MODEL_DIR))?;
    let (_, val_rows) = dataset::split(rows, cfg.train_fraction, cfg.seed)?;
    if val_rows.is_empty() {
        return Err(CliError::EmptyData("validation split is empty".into()));
    }
    let stats = net
        .feature_stats
        .clone()
        .ok_or_else(|| CliError::Internal("model carries no feature statistics".into()))?;
    let prepared = net.prepare_rows(&val_rows, Some(&stats))?;
    let (kept, targets, _) = hybridnet::make_targets(&prepared, net.config.head);
    if kept.is_empty() {
        return Err(CliError::EmptyData("no evaluable validation rows".into()));
    }
    let eval_rows: Vec<hybridnet::PreparedRow> = kept
        .iter()
        .zip(&targets)
        .map(|(&i, t)| {
            let mut r = prepared[i].clone();
            r.target = t.clone();
            r
        })
        .collect();
    let pred = net.predict_rows(&eval_rows);
    let d = net.config.device_count;
    let target_data: Vec<f64> = eval_rows.iter().flat_map(|r| r.target.iter().copied()).collect();
    let pred_view = MatrixView::new(eval_rows.len(), d, &pred.data);
    let target_view = MatrixView::new(eval_rows.len(), d, &target_data);

    let mut report = match net.config.head {
        Head::Regression => metrics::regression_report(&pred_view, &target_view)?,
        Head::Classification => metrics::classification_report(
            &pred_view,
            &target_view,
            cfg.eval_threshold,
            net.config.k_top,
            cfg.eval_averaging,
        )?,
    };
    // Baseline: raw ALS reconstruction error on the same validation rows.
    if net.config.head == Head::Regression && out.join(ALS_MODEL_FILE).exists() {
        let als_model = als::read_model(&out.join(ALS_MODEL_FILE))?;
        let recon = als::reconstruct(&als_model);
        let mut base = Vec::with_capacity(target_data.len());
        for row in &eval_rows {
            match recon.visitor_pos(&row.visitor_id) {
                Some(pos) => base.extend_from_slice(recon.row(pos)),
                None => base.extend(std::iter::repeat_n(0.0, d)),
            }
        }
        let base_view = MatrixView::new(eval_rows.len(), d, &base);
        report
            .entries
            .push(("als_reconstruction_rmse".into(), metrics::rmse(&base_view, &target_view)?));
    }
    write_file(&out.join(EVAL_CSV_FILE), &report.to_csv())?;
    write_file(&out.join(EVAL_TEXT_FILE), &report.to_text())?;
    print!("{}", report.to_text());
    Ok(())
}

pub fn cmd_recommend(
    cfg: &RunConfig,
    out: &Path,
    visitor: Option<String>,
    sequence: Option<String>,
    cold: bool,
    visitor_features: Option<PathBuf>,
    device_features: Option<PathBuf>,
) -> Result<(), CliError> {
    require(&out.join(MODEL_DIR).join(persist::CONFIG_FILE))?;
    let mut net = persist::load(&out.join(MODEL_DIR))?;
    let context = if cold {
        VisitorContext::cold()
    } else {
        let visitor_id = visitor.unwrap_or_else(|| dataset::UNK_TOKEN.to_string());
        let device_sequence: Vec<String> = sequence
            .map(|s| s.split(',').map(|d| d.trim().to_string()).collect())
            .unwrap_or_default();
        let features = assemble_query_features(
            &visitor_id,
            &device_sequence,
            &visitor_features.unwrap_or_else(|| out.join(VISITOR_FEATURES_FILE)),
            &device_features.unwrap_or_else(|| out.join(DEVICE_FEATURES_FILE)),
            net.config.feature_count,
        )?;
        VisitorContext {
            visitor_id,
            device_sequence,
            features,
        }
    };
    let recs = hybridnet::recommend(&mut net, &context, cfg.recommend_k, cfg.include_seen)?;
    let mut csv = String::from("rank,device_id,score\n");
    println!(
        "recommendations for {} (sequence: {}):",
        context.visitor_id,
        if context.device_sequence.is_empty() {
            "none".to_string()
        } else {
            context.device_sequence.join(",")
        }
    );
    for (rank, (device, score)) in recs.iter().enumerate() {
        println!("{:>3}. {device}  {score:.6}", rank + 1);
        let _ = writeln!(csv, "{},{device},{score:.10}", rank + 1);
    }
    write_file(&out.join(RECOMMEND_FILE), &csv)?;
    Ok(())
}

/// Visitor features followed by the mean of the sequence devices' features,
/// mirroring the training-time assembly; anything missing falls back to
/// column means (or model defaults when the files are absent).
fn assemble_query_features(
    visitor_id: &str,
    sequence: &[String],
    visitor_features_path: &Path,
    device_features_path: &Path,
    expected_width: usize,
) -> Result<Option<Vec<f64>>, CliError> {
    if !visitor_features_path.exists() || !device_features_path.exists() {
        return Ok(None);
    }
    let vf = dio::read_feature_csv(visitor_features_path)?;
    let df = dio::read_feature_csv(device_features_path)?;
    let mut features = vf
        .rows
        .get(visitor_id)
        .cloned()
        .unwrap_or_else(|| vf.column_means());
    let mut dev = vec![0.0; df.width()];
    if sequence.is_empty() {
        dev = df.column_means();
    } else {
        let means = df.column_means();
        for device in sequence {
            let row = df.rows.get(device).cloned().unwrap_or_else(|| means.clone());
            for (d, v) in dev.iter_mut().zip(&row) {
                *d += v;
            }
        }
        for d in &mut dev {
            *d /= sequence.len() as f64;
        }
    }
    features.extend(dev);
    if features.len() != expected_width {
        return Err(CliError::Config(format!(
            "assembled feature vector has {} entries, model expects {}",
            features.len(),
            expected_width
        )));
    }
    Ok(Some(features))
}

pub fn cmd_coverage(cfg: &RunConfig, out: &Path, seed_device: Option<String>) -> Result<(), CliError> {
    let index = match cfg.coverage_similarity {
        SimilaritySource::Factors => {
            require(&out.join(ALS_MODEL_FILE))?;
            let model = als::read_model(&out.join(ALS_MODEL_FILE))?;
            cov::build_index(&model, cfg.coverage_lambda_n)?
        }
        SimilaritySource::Matrix => {
            require(&out.join(MATRIX_FILE))?;
            let matrix = dio::read_matrix(&out.join(MATRIX_FILE))?;
            cov::build_index_from_matrix(&matrix, cfg.coverage_lambda_n)?
        }
    };
    let seed_pos = match &seed_device {
        Some(id) => Some(index.device_pos(id).ok_or_else(|| {
            CliError::Config(format!("unknown seed device `{id}`"))
        })?),
        None => None,
    };
    let outcome = cov::greedy_pdrc(&index, cfg.coverage_k, seed_pos)?;
    if outcome.truncated_budget {
        eprintln!(
            "warning: budget k={} exceeds device count {}; truncated",
            cfg.coverage_k,
            index.devices()
        );
    }
    println!(
        "coverage: lambda_n = {} similarity = {} devices = {} budget = {}{}",
        cfg.coverage_lambda_n,
        cfg.coverage_similarity.as_str(),
        index.devices(),
        cfg.coverage_k,
        seed_device
            .as_ref()
            .map(|s| format!(" seed_device = {s}"))
            .unwrap_or_default()
    );
    let mut csv = String::from("rank,device_id,marginal_gain,cumulative_coverage\n");
    for (rank, pick) in outcome.picks.iter().enumerate() {
        let device = &index.device_index[pick.device];
        println!(
            "{:>3}. {device}  gain {}  covered {}",
            rank + 1,
            pick.marginal_gain,
            pick.cumulative_coverage
        );
        let _ = writeln!(
            csv,
            "{},{device},{},{}",
            rank + 1,
            pick.marginal_gain,
            pick.cumulative_coverage
        );
    }
    println!("total coverage: {}", outcome.coverage);
    write_file(&out.join(COVERAGE_FILE), &csv)?;
    Ok(())
}
