//! Model directory: config, parameter snapshot, the four embedding tables,
//! device names, feature statistics and the output device index.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::FeatureStats;
use crate::embeddings::{load_table, write_table, EmbeddingTable};
use crate::tensorcore::snapshot::{read_snapshot, write_snapshot};
use crate::tensorcore::Tensor;

use super::{Fusion, Head, HybridConfig, HybridError, HybridNet, TargetSource};

pub const CONFIG_FILE: &str = "config.txt";
pub const PARAMS_FILE: &str = "params.txt";
pub const EMB_VISITOR_FILE: &str = "emb_visitor.emb";
pub const EMB_DEVICE_FILE: &str = "emb_device.emb";
pub const EMB_WORD_FILE: &str = "emb_word.emb";
pub const EMB_SENT_FILE: &str = "emb_sent.emb";
pub const NAMES_FILE: &str = "names.csv";
pub const STATS_FILE: &str = "feature_stats.txt";
pub const DEVICE_INDEX_FILE: &str = "device_index.txt";

fn persist_err(msg: impl Into<String>) -> HybridError {
    HybridError::Persist(msg.into())
}

impl HybridNet {
    /// Walks every tensor that belongs in the parameter snapshot, in a fixed
    /// order (ALS embedding tables are stored as embedding files instead).
    fn visit_state(&mut self, f: &mut dyn FnMut(&'static str, &mut Tensor)) {
        for c in &mut self.n1_convs {
            f("n1.conv2d.kernel", &mut c.kernel.value);
            f("n1.conv2d.bias", &mut c.bias.value);
        }
        for b in &mut self.n1_bns {
            f("n1.batchnorm.gamma", &mut b.gamma.value);
            f("n1.batchnorm.beta", &mut b.beta.value);
            f("n1.batchnorm.running_mean", &mut b.running_mean);
            f("n1.batchnorm.running_var", &mut b.running_var);
        }
        for d in &mut self.n1_dense {
            f("n1.dense.weight", &mut d.weight.value);
            f("n1.dense.bias", &mut d.bias.value);
        }
        f("n2.lstm.w_input", &mut self.n2_lstm.w_input.value);
        f("n2.lstm.w_hidden", &mut self.n2_lstm.w_hidden.value);
        f("n2.lstm.bias", &mut self.n2_lstm.bias.value);
        f("n2.dense.weight", &mut self.n2_dense.weight.value);
        f("n2.dense.bias", &mut self.n2_dense.bias.value);
        for d in &mut self.n3_dense {
            f("n3.dense.weight", &mut d.weight.value);
            f("n3.dense.bias", &mut d.bias.value);
        }
        f("n4.dense.weight", &mut self.n4_dense.weight.value);
        f("n4.dense.bias", &mut self.n4_dense.bias.value);
        f("shared.dense.weight", &mut self.fuse_dense.weight.value);
        f("shared.dense.bias", &mut self.fuse_dense.bias.value);
        f("head.dense.weight", &mut self.head_dense.weight.value);
        f("head.dense.bias", &mut self.head_dense.bias.value);
    }

    fn emb_visitor_table(&self) -> EmbeddingTable {
        table_from_lookup(&self.emb_visitor_tokens, &self.emb_visitor.table.value)
    }

    fn emb_device_table(&self) -> EmbeddingTable {
        table_from_lookup(&self.emb_device_tokens, &self.emb_device.table.value)
    }
}

fn table_from_lookup(tokens: &[String], values: &Tensor) -> EmbeddingTable {
    let dim = values.shape[1];
    let rows = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), values.data[i * dim..(i + 1) * dim].to_vec()))
        .collect();
    EmbeddingTable::from_rows(dim, rows)
}

fn usizes_csv(v: &[usize]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_usizes(s: &str) -> Result<Vec<usize>, HybridError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| persist_err(format!("bad integer list `{s}`")))
        })
        .collect()
}

pub fn config_text(config: &HybridConfig, lo: f64, hi: f64) -> String {
    let mut out = String::from("# hybridnet model config\n");
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    kv("m", config.m.to_string());
    kv("feature_count", config.feature_count.to_string());
    kv("device_count", config.device_count.to_string());
    kv("head", config.head.as_str().to_string());
    kv("n3_fusion", config.n3_fusion.as_str().to_string());
    kv("target_source", config.target_source.as_str().to_string());
    kv("conv_blocks", config.conv_blocks.to_string());
    kv("conv_filters", usizes_csv(&config.conv_filters));
    kv("n1_dense", usizes_csv(&config.n1_dense));
    kv("lstm_units", config.lstm_units.to_string());
    kv("n2_dense", config.n2_dense.to_string());
    kv("n3_dense", usizes_csv(&config.n3_dense));
    kv("n4_dense", config.n4_dense.to_string());
    kv("shared_dense", config.shared_dense.to_string());
    kv("dropout_rate", format!("{:.16e}", config.dropout_rate));
    kv("k_top", config.k_top.to_string());
    kv("epochs", config.epochs.to_string());
    kv("batch", config.batch.to_string());
    kv("learning_rate", format!("{:.16e}", config.learning_rate));
    kv(
        "train_als_embeddings",
        config.train_als_embeddings.to_string(),
    );
    kv("seed", config.seed.to_string());
    kv("trained_lo", format!("{lo:.16e}"));
    kv("trained_hi", format!("{hi:.16e}"));
    kv("emb_visitor", EMB_VISITOR_FILE.to_string());
    kv("emb_device", EMB_DEVICE_FILE.to_string());
    kv("emb_word", EMB_WORD_FILE.to_string());
    kv("emb_sent", EMB_SENT_FILE.to_string());
    out
}

pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, HybridError> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| persist_err(format!("line {}: expected `key = value`", i + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub fn save(net: &mut HybridNet, dir: &Path) -> Result<(), HybridError> {
    std::fs::create_dir_all(dir).map_err(|e| persist_err(format!("create {dir:?}: {e}")))?;
    std::fs::write(dir.join(CONFIG_FILE), config_text(&net.config, net.lo, net.hi))
        .map_err(|e| persist_err(format!("write config: {e}")))?;

    let mut records: Vec<(String, Tensor)> = Vec::new();
    net.visit_state(&mut |kind, tensor| records.push((kind.to_string(), tensor.clone())));
    let refs: Vec<(String, &Tensor)> = records.iter().map(|(k, t)| (k.clone(), t)).collect();
    std::fs::write(dir.join(PARAMS_FILE), write_snapshot(&refs))
        .map_err(|e| persist_err(format!("write params: {e}")))?;

    let emb_err = |e: crate::embeddings::EmbeddingError| persist_err(e.to_string());
    write_table(&dir.join(EMB_VISITOR_FILE), &net.emb_visitor_table()).map_err(emb_err)?;
    write_table(&dir.join(EMB_DEVICE_FILE), &net.emb_device_table()).map_err(emb_err)?;
    write_table(&dir.join(EMB_WORD_FILE), &net.word_table).map_err(emb_err)?;
    write_table(&dir.join(EMB_SENT_FILE), &net.sent_table).map_err(emb_err)?;

    let mut names = String::from("device_id,name\n");
    for (id, name) in &net.names {
        let _ = writeln!(names, "{id},{name}");
    }
    std::fs::write(dir.join(NAMES_FILE), names)
        .map_err(|e| persist_err(format!("write names: {e}")))?;

    let mut stats = String::new();
    if let Some(fs) = &net.feature_stats {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:.16e}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let _ = writeln!(stats, "mean {}", join(&fs.mean));
        let _ = writeln!(stats, "std {}", join(&fs.std));
    }
    std::fs::write(dir.join(STATS_FILE), stats)
        .map_err(|e| persist_err(format!("write stats: {e}")))?;

    std::fs::write(dir.join(DEVICE_INDEX_FILE), net.device_index.join("\n") + "\n")
        .map_err(|e| persist_err(format!("write device index: {e}")))?;
    Ok(())
}

fn req<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str, HybridError> {
    map.get(key)
        .map(|s| s.as_str())
        .ok_or_else(|| persist_err(format!("missing config key `{key}`")))
}

pub fn load(dir: &Path) -> Result<HybridNet, HybridError> {
    let text = std::fs::read_to_string(dir.join(CONFIG_FILE))
        .map_err(|e| persist_err(format!("read config: {e}")))?;
    let map = parse_key_values(&text)?;
    let parse_usize = |k: &str| -> Result<usize, HybridError> {
        req(&map, k)?
            .parse()
            .map_err(|_| persist_err(format!("bad integer for `{k}`")))
    };
    let parse_f64 = |k: &str| -> Result<f64, HybridError> {
        req(&map, k)?
            .parse()
            .map_err(|_| persist_err(format!("bad float for `{k}`")))
    };
    let config = HybridConfig {
        m: parse_usize("m")?,
        feature_count: parse_usize("feature_count")?,
        device_count: parse_usize("device_count")?,
        head: Head::parse(req(&map, "head")?)
            .ok_or_else(|| persist_err("bad head"))?,
        n3_fusion: Fusion::parse(req(&map, "n3_fusion")?)
            .ok_or_else(|| persist_err("bad n3_fusion"))?,
        target_source: TargetSource::parse(req(&map, "target_source")?)
            .ok_or_else(|| persist_err("bad target_source"))?,
        conv_blocks: parse_usize("conv_blocks")?,
        conv_filters: parse_usizes(req(&map, "conv_filters")?)?,
        n1_dense: parse_usizes(req(&map, "n1_dense")?)?,
        lstm_units: parse_usize("lstm_units")?,
        n2_dense: parse_usize("n2_dense")?,
        n3_dense: parse_usizes(req(&map, "n3_dense")?)?,
        n4_dense: parse_usize("n4_dense")?,
        shared_dense: parse_usize("shared_dense")?,
        dropout_rate: parse_f64("dropout_rate")?,
        k_top: parse_usize("k_top")?,
        epochs: parse_usize("epochs")?,
        batch: parse_usize("batch")?,
        learning_rate: parse_f64("learning_rate")?,
        train_als_embeddings: req(&map, "train_als_embeddings")? == "true",
        seed: parse_usize("seed")? as u64,
    };
    let lo = parse_f64("trained_lo")?;
    let hi = parse_f64("trained_hi")?;

    let emb_err = |e: crate::embeddings::EmbeddingError| persist_err(e.to_string());
    let emb_visitor = load_table(&dir.join(req(&map, "emb_visitor")?)).map_err(emb_err)?;
    let emb_device = load_table(&dir.join(req(&map, "emb_device")?)).map_err(emb_err)?;
    let word_table = load_table(&dir.join(req(&map, "emb_word")?)).map_err(emb_err)?;
    let sent_table = load_table(&dir.join(req(&map, "emb_sent")?)).map_err(emb_err)?;

    let names_text = std::fs::read_to_string(dir.join(NAMES_FILE))
        .map_err(|e| persist_err(format!("read names: {e}")))?;
    let mut names = BTreeMap::new();
    for line in names_text.lines().skip(1) {
        if let Some((id, name)) = line.split_once(',') {
            names.insert(id.to_string(), name.to_string());
        }
    }

    let device_index: Vec<String> = std::fs::read_to_string(dir.join(DEVICE_INDEX_FILE))
        .map_err(|e| persist_err(format!("read device index: {e}")))?
        .lines()
        .map(String::from)
        .collect();

    let mut net = HybridNet::build(
        config,
        device_index,
        emb_visitor,
        emb_device,
        word_table,
        sent_table,
        names,
    )?;
    net.lo = lo;
    net.hi = hi;

    let params_text = std::fs::read_to_string(dir.join(PARAMS_FILE))
        .map_err(|e| persist_err(format!("read params: {e}")))?;
    let records = read_snapshot(&params_text).map_err(|e| persist_err(e.to_string()))?;
    let mut iter = records.into_iter();
    let mut failure: Option<String> = None;
    net.visit_state(&mut |kind, tensor| {
        if failure.is_some() {
            return;
        }
        match iter.next() {
            Some((k, t)) if k == kind && t.shape == tensor.shape => *tensor = t,
            Some((k, t)) => {
                failure = Some(format!(
                    "snapshot mismatch: expected {kind} {:?}, found {k} {:?}",
                    tensor.shape, t.shape
                ));
            }
            None => failure = Some("snapshot truncated".into()),
        }
    });
    if let Some(msg) = failure {
        return Err(persist_err(msg));
    }

    let stats_text = std::fs::read_to_string(dir.join(STATS_FILE))
        .map_err(|e| persist_err(format!("read stats: {e}")))?;
    if !stats_text.trim().is_empty() {
        let mut mean = None;
        let mut std = None;
        for line in stats_text.lines() {
            if let Some(rest) = line.strip_prefix("mean ") {
                mean = Some(parse_floats(rest)?);
            } else if let Some(rest) = line.strip_prefix("std ") {
                std = Some(parse_floats(rest)?);
            }
        }
        if let (Some(mean), Some(std)) = (mean, std) {
            net.feature_stats = Some(FeatureStats { mean, std });
        }
    }
    Ok(net)
}

fn parse_floats(s: &str) -> Result<Vec<f64>, HybridError> {
    s.split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| persist_err(format!("bad float `{t}`")))
        })
        .collect()
}
