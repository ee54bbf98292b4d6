//! Run configuration: one `key = value` per line, `#` comments, unknown keys
//! rejected. The effective config is echoed into every output directory.

use std::fmt::Write as _;
use std::path::Path;

use crate::als::{AlsHyper, RowSolver};
use crate::dataset::synth::SynthConfig;
use crate::hybridnet::{Fusion, Head, HybridConfig, TargetSource};
use crate::metrics::Averaging;

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub percentile: f64,
    pub sequence_length: usize,
    pub train_fraction: f64,
    pub als: AlsHyper,
    pub head: Head,
    pub n3_fusion: Fusion,
    pub target_source: TargetSource,
    pub conv_blocks: usize,
    pub conv_filters: Vec<usize>,
    pub n1_dense: Vec<usize>,
    pub lstm_units: usize,
    pub n2_dense: usize,
    pub n3_dense: Vec<usize>,
    pub n4_dense: usize,
    pub shared_dense: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub word_dim: usize,
    pub sent_dim: usize,
    pub train_als_embeddings: bool,
    pub recommend_k: usize,
    pub include_seen: bool,
    pub coverage_lambda_n: f64,
    pub coverage_k: usize,
    pub coverage_similarity: SimilaritySource,
    pub eval_threshold: f64,
    pub eval_averaging: Averaging,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimilaritySource {
    Factors,
    Matrix,
}

impl SimilaritySource {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "factors" => Some(SimilaritySource::Factors),
            "matrix" => Some(SimilaritySource::Matrix),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SimilaritySource::Factors => "factors",
            SimilaritySource::Matrix => "matrix",
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let net = HybridConfig::defaults();
        RunConfig {
            seed: 1,
            synth: SynthConfig::default(),
            percentile: 90.0,
            sequence_length: net.m,
            train_fraction: 0.75,
            als: AlsHyper::default(),
            head: net.head,
            n3_fusion: net.n3_fusion,
            target_source: net.target_source,
            conv_blocks: net.conv_blocks,
            conv_filters: net.conv_filters.clone(),
            n1_dense: net.n1_dense.clone(),
            lstm_units: net.lstm_units,
            n2_dense: net.n2_dense,
            n3_dense: net.n3_dense.clone(),
            n4_dense: net.n4_dense,
            shared_dense: net.shared_dense,
            dropout: net.dropout_rate,
            epochs: net.epochs,
            batch: net.batch,
            learning_rate: net.learning_rate,
            word_dim: 32,
            sent_dim: 32,
            train_als_embeddings: net.train_als_embeddings,
            recommend_k: 5,
            include_seen: false,
            coverage_lambda_n: 0.5,
            coverage_k: 5,
            coverage_similarity: SimilaritySource::Factors,
            eval_threshold: 0.5,
            eval_averaging: Averaging::Micro,
        }
    }
}

fn usizes_csv(v: &[usize]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// Applies one `key = value` assignment; unknown keys and bad values are
    /// errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn p<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("bad value `{value}` for key `{key}`"))
        }
        fn list(key: &str, value: &str) -> Result<Vec<usize>, String> {
            value
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| format!("bad value `{value}` for key `{key}`"))
                })
                .collect()
        }
        match key {
            "seed" => {
                self.seed = p(key, value)?;
                // the global seed also drives the generator, ALS and the net
                self.synth.seed = self.seed;
                self.als.seed = self.seed;
            }
            "synth.visitors" => self.synth.visitors = p(key, value)?,
            "synth.devices" => self.synth.devices = p(key, value)?,
            "synth.events" => self.synth.events = p(key, value)?,
            "synth.popularity_skew" => self.synth.popularity_skew = p(key, value)?,
            "synth.archetypes" => self.synth.archetypes = p(key, value)?,
            "synth.visitor_feature_cols" => self.synth.visitor_feature_cols = p(key, value)?,
            "synth.context_feature_cols" => self.synth.context_feature_cols = p(key, value)?,
            "synth.device_feature_cols" => self.synth.device_feature_cols = p(key, value)?,
            "prep.percentile" => self.percentile = p(key, value)?,
            "prep.sequence_length" => self.sequence_length = p(key, value)?,
            "split.train_fraction" => self.train_fraction = p(key, value)?,
            "als.factors" => self.als.factors = p(key, value)?,
            "als.alpha" => self.als.alpha = p(key, value)?,
            "als.lambda" => self.als.lambda_reg = p(key, value)?,
            "als.iterations" => self.als.iterations = p(key, value)?,
            "als.cg_steps" => self.als.cg_steps = p(key, value)?,
            "als.solver" => {
                self.als.solver = RowSolver::parse(value)
                    .ok_or_else(|| format!("bad value `{value}` for key `{key}` (direct|cg)"))?;
            }
            "net.head" => {
                self.head = Head::parse(value).ok_or_else(|| {
                    format!("bad value `{value}` for key `{key}` (regression|classification)")
                })?;
            }
            "net.n3_fusion" => {
                self.n3_fusion = Fusion::parse(value).ok_or_else(|| {
                    format!("bad value `{value}` for key `{key}` (dot|concatenate)")
                })?;
            }
            "net.target_source" => {
                self.target_source = TargetSource::parse(value).ok_or_else(|| {
                    format!("bad value `{value}` for key `{key}` (input_matrix|als_reconstruction)")
                })?;
            }
            "net.conv_blocks" => self.conv_blocks = p(key, value)?,
            "net.conv_filters" => self.conv_filters = list(key, value)?,
            "net.n1_dense" => self.n1_dense = list(key, value)?,
            "net.lstm_units" => self.lstm_units = p(key, value)?,
            "net.n2_dense" => self.n2_dense = p(key, value)?,
            "net.n3_dense" => self.n3_dense = list(key, value)?,
            "net.n4_dense" => self.n4_dense = p(key, value)?,
            "net.shared_dense" => self.shared_dense = p(key, value)?,
            "net.dropout" => self.dropout = p(key, value)?,
            "net.epochs" => self.epochs = p(key, value)?,
            "net.batch" => self.batch = p(key, value)?,
            "net.learning_rate" => self.learning_rate = p(key, value)?,
            "net.word_dim" => self.word_dim = p(key, value)?,
            "net.sent_dim" => self.sent_dim = p(key, value)?,
            "net.train_als_embeddings" => self.train_als_embeddings = p(key, value)?,
            "recommend.k" => self.recommend_k = p(key, value)?,
            "recommend.include_seen" => self.include_seen = p(key, value)?,
            "coverage.lambda_n" => self.coverage_lambda_n = p(key, value)?,
            "coverage.k" => self.coverage_k = p(key, value)?,
            "coverage.similarity" => {
                self.coverage_similarity = SimilaritySource::parse(value)
                    .ok_or_else(|| format!("bad value `{value}` for key `{key}` (factors|matrix)"))?;
            }
            "eval.threshold" => self.eval_threshold = p(key, value)?,
            "eval.averaging" => {
                self.eval_averaging = match value {
                    "micro" => Averaging::Micro,
                    "macro" => Averaging::Macro,
                    _ => return Err(format!("bad value `{value}` for key `{key}` (micro|macro)")),
                };
            }
            _ => return Err(format!("unknown config key `{key}`")),
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies `key = value` lines from any source; `origin` labels errors.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), String> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("{}:{}: expected `key = value`", origin, i + 1))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| format!("{}:{}: {e}", origin, i + 1))?;
        }
        Ok(())
    }

    /// The effective configuration, echoable and re-parseable.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# effective hybridrec configuration\n");
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("synth.visitors", self.synth.visitors.to_string());
        kv("synth.devices", self.synth.devices.to_string());
        kv("synth.events", self.synth.events.to_string());
        kv("synth.popularity_skew", format!("{}", self.synth.popularity_skew));
        kv("synth.archetypes", self.synth.archetypes.to_string());
        kv(
            "synth.visitor_feature_cols",
            self.synth.visitor_feature_cols.to_string(),
        );
        kv(
            "synth.context_feature_cols",
            self.synth.context_feature_cols.to_string(),
        );
        kv(
            "synth.device_feature_cols",
            self.synth.device_feature_cols.to_string(),
        );
        kv("prep.percentile", format!("{}", self.percentile));
        kv("prep.sequence_length", self.sequence_length.to_string());
        kv("split.train_fraction", format!("{}", self.train_fraction));
        kv("als.factors", self.als.factors.to_string());
        kv("als.alpha", format!("{}", self.als.alpha));
        kv("als.lambda", format!("{}", self.als.lambda_reg));
        kv("als.iterations", self.als.iterations.to_string());
        kv("als.cg_steps", self.als.cg_steps.to_string());
        kv("als.solver", self.als.solver.as_str().to_string());
        kv("net.head", self.head.as_str().to_string());
        kv("net.n3_fusion", self.n3_fusion.as_str().to_string());
        kv("net.target_source", self.target_source.as_str().to_string());
        kv("net.conv_blocks", self.conv_blocks.to_string());
        kv("net.conv_filters", usizes_csv(&self.conv_filters));
        kv("net.n1_dense", usizes_csv(&self.n1_dense));
        kv("net.lstm_units", self.lstm_units.to_string());
        kv("net.n2_dense", self.n2_dense.to_string());
        kv("net.n3_dense", usizes_csv(&self.n3_dense));
        kv("net.n4_dense", self.n4_dense.to_string());
        kv("net.shared_dense", self.shared_dense.to_string());
        kv("net.dropout", format!("{}", self.dropout));
        kv("net.epochs", self.epochs.to_string());
        kv("net.batch", self.batch.to_string());
        kv("net.learning_rate", format!("{}", self.learning_rate));
        kv("net.word_dim", self.word_dim.to_string());
        kv("net.sent_dim", self.sent_dim.to_string());
        kv(
            "net.train_als_embeddings",
            self.train_als_embeddings.to_string(),
        );
        kv("recommend.k", self.recommend_k.to_string());
        kv("recommend.include_seen", self.include_seen.to_string());
        kv("coverage.lambda_n", format!("{}", self.coverage_lambda_n));
        kv("coverage.k", self.coverage_k.to_string());
        kv(
            "coverage.similarity",
            self.coverage_similarity.as_str().to_string(),
        );
        kv("eval.threshold", format!("{}", self.eval_threshold));
        kv(
            "eval.averaging",
            match self.eval_averaging {
                Averaging::Micro => "micro".to_string(),
                Averaging::Macro => "macro".to_string(),
            },
        );
        out
    }

    /// The hybrid-network config induced by this run config; data-dependent
    /// fields (feature/device counts) come from the prepared artifacts.
    pub fn hybrid_config(&self, feature_count: usize, device_count: usize) -> HybridConfig {
        HybridConfig {
            m: self.sequence_length,
            feature_count,
            device_count,
            head: self.head,
            n3_fusion: self.n3_fusion,
            target_source: self.target_source,
            conv_blocks: self.conv_blocks,
            conv_filters: self.conv_filters.clone(),
            n1_dense: self.n1_dense.clone(),
            lstm_units: self.lstm_units,
            n2_dense: self.n2_dense,
            n3_dense: self.n3_dense.clone(),
            n4_dense: self.n4_dense,
            shared_dense: self.shared_dense,
            dropout_rate: self.dropout,
            k_top: self.recommend_k.min(device_count.max(1)),
            epochs: self.epochs,
            batch: self.batch,
            learning_rate: self.learning_rate,
            train_als_embeddings: self.train_als_embeddings,
            seed: self.seed,
        }
    }
}
