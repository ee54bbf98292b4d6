//! Four-branch hybrid network: a CNN over concatenated device text
//! embeddings (N1), an LSTM over the device sequence (N2), a neural
//! collaborative filter over ALS embeddings (N3) and a feature processor
//! (N4), fused at a shared layer with a regression or classification head.

pub mod persist;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::dataset::{DenormalizedRow, FeatureStats, InteractionMatrix, PAD_TOKEN, UNK_TOKEN};
use crate::embeddings::{device_word_matrix, EmbeddingTable};
use crate::tensorcore::{
    concat_cols, split_cols, Adam, BatchNorm2d, Conv2d, Dense, DotProduct, Dropout,
    EmbeddingLookup, Flatten, GlobalMaxPool1d, LambdaRange, LeakyRelu, Lstm, MaxPool2d, Mode,
    Param, ParamVisitor, Relu, Sigmoid, Softmax, Tensor,
};

#[derive(Debug, Error)]
pub enum HybridError {
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },
    #[error("no usable training rows ({reason})")]
    NoTrainingRows { reason: String },
    #[error("feature width mismatch: expected {expected}, row `{visitor}` has {found}")]
    FeatureWidth {
        expected: usize,
        found: usize,
        visitor: String,
    },
    #[error("target width mismatch: expected {expected}, row `{visitor}` has {found}")]
    TargetWidth {
        expected: usize,
        found: usize,
        visitor: String,
    },
    #[error("k = {k} exceeds device count {devices}")]
    BadK { k: usize, devices: usize },
    #[error("model persistence: {0}")]
    Persist(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Regression,
    Classification,
}

impl Head {
    pub fn parse(s: &str) -> Option<Head> {
        match s {
            "regression" => Some(Head::Regression),
            "classification" => Some(Head::Classification),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Head::Regression => "regression",
            Head::Classification => "classification",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fusion {
    Dot,
    Concatenate,
}

impl Fusion {
    pub fn parse(s: &str) -> Option<Fusion> {
        match s {
            "dot" => Some(Fusion::Dot),
            "concatenate" => Some(Fusion::Concatenate),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Fusion::Dot => "dot",
            Fusion::Concatenate => "concatenate",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetSource {
    InputMatrix,
    AlsReconstruction,
}

impl TargetSource {
    pub fn parse(s: &str) -> Option<TargetSource> {
        match s {
            "input_matrix" => Some(TargetSource::InputMatrix),
            "als_reconstruction" => Some(TargetSource::AlsReconstruction),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TargetSource::InputMatrix => "input_matrix",
            TargetSource::AlsReconstruction => "als_reconstruction",
        }
    }
}

#[derive(Clone, Debug)]
pub struct HybridConfig {
    pub m: usize,
    pub feature_count: usize,
    pub device_count: usize,
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
    pub dropout_rate: f64,
    pub k_top: usize,
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub train_als_embeddings: bool,
    pub seed: u64,
}

impl HybridConfig {
    /// Library defaults; `m`, `feature_count` and `device_count` still have
    /// to be set from the data.
    pub fn defaults() -> HybridConfig {
        HybridConfig {
            m: 8,
            feature_count: 0,
            device_count: 0,
            head: Head::Regression,
            n3_fusion: Fusion::Dot,
            target_source: TargetSource::InputMatrix,
            conv_blocks: 3,
            conv_filters: vec![16, 32, 64],
            n1_dense: vec![64, 32, 16],
            lstm_units: 64,
            n2_dense: 32,
            n3_dense: vec![32, 16],
            n4_dense: 64,
            shared_dense: 64,
            dropout_rate: 0.3,
            k_top: 5,
            epochs: 20,
            batch: 64,
            learning_rate: 1e-3,
            train_als_embeddings: false,
            seed: 1,
        }
    }

    fn validate(&self, text_width: usize) -> Result<(), HybridError> {
        if self.conv_blocks < 1 {
            return Err(HybridError::BadConfig("conv_blocks must be >= 1".into()));
        }
        if self.conv_filters.len() != self.conv_blocks {
            return Err(HybridError::BadConfig(format!(
                "conv_filters has {} entries but conv_blocks is {}",
                self.conv_filters.len(),
                self.conv_blocks
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(HybridError::BadConfig("dropout_rate must be in [0,1)".into()));
        }
        if self.n1_dense.is_empty() || self.n3_dense.is_empty() {
            return Err(HybridError::BadConfig("dense chains must be nonempty".into()));
        }
        if self.device_count == 0 {
            return Err(HybridError::BadConfig("device_count must be >= 1".into()));
        }
        if self.k_top > self.device_count {
            return Err(HybridError::BadConfig(format!(
                "k_top {} exceeds device count {}",
                self.k_top, self.device_count
            )));
        }
        if self.batch == 0 {
            return Err(HybridError::BadConfig("batch must be >= 1".into()));
        }
        // Each pooling halves both spatial dims and needs them >= 2 first.
        let (mut h, mut w) = (self.m, text_width);
        for block in 0..self.conv_blocks {
            if h < 2 || w < 2 {
                return Err(HybridError::BadConfig(format!(
                    "sequence length m={} / text width {} cannot survive {} poolings \
                     (stuck at {}x{} before block {})",
                    self.m,
                    text_width,
                    self.conv_blocks,
                    h,
                    w,
                    block + 1
                )));
            }
            h /= 2;
            w /= 2;
        }
        Ok(())
    }
}

/// Per-row tensors assembled once so epochs only copy slices.
#[derive(Clone, Debug)]
pub struct PreparedRow {
    pub visitor_id: String,
    pub n1_text: Vec<f64>,     // m * text_width
    pub n2_sent: Vec<f64>,     // m * sent_dim
    pub visitor_slot: usize,   // emb1 row
    pub device_slots: Vec<usize>, // m emb2 rows
    pub features: Vec<f64>,    // standardized
    pub target: Vec<f64>,      // D (head-specific)
}

/// One assembled mini-batch of network inputs.
pub struct Batch {
    pub n1: Tensor,       // [B, 1, m, W]
    pub n2: Tensor,       // [B, m, ds]
    pub visitors: Vec<usize>,
    pub devices: Vec<usize>, // B * m
    pub features: Tensor, // [B, n]
    pub target: Tensor,   // [B, D]
}

#[derive(Clone, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub skipped_zero_target_rows: usize,
}

/// Query for [`HybridNet::recommend`]: any field may be cold.
#[derive(Clone, Debug)]
pub struct VisitorContext {
    pub visitor_id: String,
    pub device_sequence: Vec<String>,
    pub features: Option<Vec<f64>>,
}

impl VisitorContext {
    pub fn cold() -> VisitorContext {
        VisitorContext {
            visitor_id: UNK_TOKEN.to_string(),
            device_sequence: Vec::new(),
            features: None,
        }
    }
}

pub struct HybridNet {
    pub config: HybridConfig,
    pub device_index: Vec<String>,
    word_table: EmbeddingTable,
    sent_table: EmbeddingTable,
    names: BTreeMap<String, String>,
    emb_visitor_tokens: Vec<String>,
    emb_device_tokens: Vec<String>,
    visitor_slots: BTreeMap<String, usize>,
    device_slots: BTreeMap<String, usize>,
    emb_visitor: EmbeddingLookup,
    emb_device: EmbeddingLookup,

    n1_convs: Vec<Conv2d>,
    n1_conv_relus: Vec<Relu>,
    n1_bns: Vec<BatchNorm2d>,
    n1_pools: Vec<MaxPool2d>,
    n1_flatten: Flatten,
    n1_dense: Vec<Dense>,
    n1_relus: Vec<Relu>,
    n1_drops: Vec<Dropout>,

    n2_lstm: Lstm,
    n2_lrelu1: LeakyRelu,
    n2_drop1: Dropout,
    n2_pool: GlobalMaxPool1d,
    n2_dense: Dense,
    n2_lrelu2: LeakyRelu,
    n2_drop2: Dropout,

    n3_dot: DotProduct,
    n3_flatten: Flatten,
    n3_dense: Vec<Dense>,
    n3_relus: Vec<Relu>,
    n3_drops: Vec<Dropout>,
    n3_concat_cache: Option<(usize, usize, usize)>, // (batch, m, f)

    n4_dense: Dense,
    n4_relu: Relu,
    n4_drop: Dropout,

    fuse_drop0: Dropout,
    fuse_dense: Dense,
    fuse_relu: Relu,
    fuse_drop1: Dropout,
    head_dense: Dense,
    head_sigmoid: Sigmoid,
    head_softmax: Softmax,

    /// Regression output range observed on training targets.
    pub lo: f64,
    pub hi: f64,
    pub feature_stats: Option<FeatureStats>,
}

impl Clone for HybridNet {
    fn clone(&self) -> Self {
        HybridNet {
            config: self.config.clone(),
            device_index: self.device_index.clone(),
            word_table: self.word_table.clone(),
            sent_table: self.sent_table.clone(),
            names: self.names.clone(),
            emb_visitor_tokens: self.emb_visitor_tokens.clone(),
            emb_device_tokens: self.emb_device_tokens.clone(),
            visitor_slots: self.visitor_slots.clone(),
            device_slots: self.device_slots.clone(),
            emb_visitor: self.emb_visitor.clone(),
            emb_device: self.emb_device.clone(),
            n1_convs: self.n1_convs.clone(),
            n1_conv_relus: self.n1_conv_relus.clone(),
            n1_bns: self.n1_bns.clone(),
            n1_pools: self.n1_pools.clone(),
            n1_flatten: self.n1_flatten.clone(),
            n1_dense: self.n1_dense.clone(),
            n1_relus: self.n1_relus.clone(),
            n1_drops: self.n1_drops.clone(),
            n2_lstm: self.n2_lstm.clone(),
            n2_lrelu1: self.n2_lrelu1.clone(),
            n2_drop1: self.n2_drop1.clone(),
            n2_pool: self.n2_pool.clone(),
            n2_dense: self.n2_dense.clone(),
            n2_lrelu2: self.n2_lrelu2.clone(),
            n2_drop2: self.n2_drop2.clone(),
            n3_dot: self.n3_dot.clone(),
            n3_flatten: self.n3_flatten.clone(),
            n3_dense: self.n3_dense.clone(),
            n3_relus: self.n3_relus.clone(),
            n3_drops: self.n3_drops.clone(),
            n3_concat_cache: self.n3_concat_cache,
            n4_dense: self.n4_dense.clone(),
            n4_relu: self.n4_relu.clone(),
            n4_drop: self.n4_drop.clone(),
            fuse_drop0: self.fuse_drop0.clone(),
            fuse_dense: self.fuse_dense.clone(),
            fuse_relu: self.fuse_relu.clone(),
            fuse_drop1: self.fuse_drop1.clone(),
            head_dense: self.head_dense.clone(),
            head_sigmoid: self.head_sigmoid.clone(),
            head_softmax: self.head_softmax.clone(),
            lo: self.lo,
            hi: self.hi,
            feature_stats: self.feature_stats.clone(),
        }
    }
}

impl HybridNet {
    /// Builds the network around the four embedding tables. `emb_visitor` and
    /// `emb_device` are the ALS exports (trainable behind a config flag);
    /// `word_table` / `sent_table` stay frozen.
    pub fn build(
        config: HybridConfig,
        device_index: Vec<String>,
        emb_visitor: EmbeddingTable,
        emb_device: EmbeddingTable,
        word_table: EmbeddingTable,
        sent_table: EmbeddingTable,
        names: BTreeMap<String, String>,
    ) -> Result<HybridNet, HybridError> {
        let text_width = word_table.dim() + sent_table.dim();
        config.validate(text_width)?;
        let factor_dim = emb_visitor.dim();
        if emb_device.dim() != factor_dim {
            return Err(HybridError::BadConfig(
                "visitor/device embedding dims differ".into(),
            ));
        }

        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
        let mut drop_seed = config.seed ^ 0x9e3779b97f4a7c15;
        let dropout_rate = config.dropout_rate;
        let mut next_dropout = move || {
            drop_seed = drop_seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            Dropout::new(dropout_rate, ChaCha12Rng::seed_from_u64(drop_seed))
        };

        // N1 conv stack geometry.
        let mut n1_convs = Vec::new();
        let mut n1_bns = Vec::new();
        let (mut h, mut w) = (config.m, text_width);
        let mut in_ch = 1usize;
        for &filters in &config.conv_filters {
            n1_convs.push(Conv2d::new(in_ch, filters, 3, 3, &mut rng));
            n1_bns.push(BatchNorm2d::new(filters));
            in_ch = filters;
            h /= 2;
            w /= 2;
        }
        let n1_flat_width = in_ch * h * w;
        let mut n1_dense = Vec::new();
        let mut prev = n1_flat_width;
        for &units in &config.n1_dense {
            n1_dense.push(Dense::new(prev, units, &mut rng));
            prev = units;
        }
        let n1_out = prev;

        let n2_lstm = Lstm::new(sent_table.dim(), config.lstm_units, &mut rng);
        let n2_dense = Dense::new(config.lstm_units, config.n2_dense, &mut rng);

        let n3_in = match config.n3_fusion {
            Fusion::Dot => config.m,
            Fusion::Concatenate => config.m * 2 * factor_dim,
        };
        let mut n3_dense = Vec::new();
        let mut prev3 = n3_in;
        for &units in &config.n3_dense {
            n3_dense.push(Dense::new(prev3, units, &mut rng));
            prev3 = units;
        }
        let n3_out = prev3;

        let n4_dense = Dense::new(config.feature_count, config.n4_dense, &mut rng);

        let concat_width = n1_out + config.n2_dense + n3_out + config.n4_dense;
        let fuse_dense = Dense::new(concat_width, config.shared_dense, &mut rng);
        let head_dense = Dense::new(config.shared_dense, config.device_count, &mut rng);

        let visitor_slots = emb_visitor
            .tokens()
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        let device_slots = emb_device
            .tokens()
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();

        Ok(HybridNet {
            emb_visitor_tokens: emb_visitor.tokens().to_vec(),
            emb_device_tokens: emb_device.tokens().to_vec(),
            visitor_slots,
            device_slots,
            emb_visitor: EmbeddingLookup::new(emb_visitor.as_tensor(), config.train_als_embeddings),
            emb_device: EmbeddingLookup::new(emb_device.as_tensor(), config.train_als_embeddings),
            n1_conv_relus: vec![Relu::new(); config.conv_blocks],
            n1_pools: vec![MaxPool2d::new(); config.conv_blocks],
            n1_flatten: Flatten::new(),
            n1_relus: vec![Relu::new(); config.n1_dense.len()],
            n1_drops: (0..config.n1_dense.len()).map(|_| next_dropout()).collect(),
            n2_lrelu1: LeakyRelu::new(),
            n2_drop1: next_dropout(),
            n2_pool: GlobalMaxPool1d::new(),
            n2_lrelu2: LeakyRelu::new(),
            n2_drop2: next_dropout(),
            n3_dot: DotProduct::new(),
            n3_flatten: Flatten::new(),
            n3_relus: vec![Relu::new(); config.n3_dense.len()],
            n3_drops: (0..config.n3_dense.len()).map(|_| next_dropout()).collect(),
            n3_concat_cache: None,
            n4_relu: Relu::new(),
            n4_drop: next_dropout(),
            fuse_drop0: next_dropout(),
            fuse_relu: Relu::new(),
            fuse_drop1: next_dropout(),
            head_sigmoid: Sigmoid::new(),
            head_softmax: Softmax::new(),
            lo: 0.0,
            hi: 1.0,
            feature_stats: None,
            config,
            device_index,
            word_table,
            sent_table,
            names,
            n1_convs,
            n1_bns,
            n1_dense,
            n2_lstm,
            n2_dense,
            n3_dense,
            n4_dense,
            fuse_dense,
            head_dense,
        })
    }

    pub fn text_width(&self) -> usize {
        self.word_table.dim() + self.sent_table.dim()
    }

    pub fn factor_dim(&self) -> usize {
        self.emb_visitor.dim()
    }

    fn visitor_slot(&self, id: &str) -> usize {
        if id == UNK_TOKEN {
            return self.emb_visitor.unk_index();
        }
        self.visitor_slots
            .get(id)
            .copied()
            .unwrap_or_else(|| self.emb_visitor.unk_index())
    }

    fn device_slot(&self, id: &str) -> usize {
        if id == PAD_TOKEN {
            return self.emb_device.pad_index();
        }
        self.device_slots
            .get(id)
            .copied()
            .unwrap_or_else(|| self.emb_device.unk_index())
    }

    /// Standardized feature vector for a query, falling back to the training
    /// means (zero after standardization) when absent.
    fn query_features(&self, features: Option<&[f64]>) -> Vec<f64> {
        match features {
            Some(f) => {
                let mut v = f.to_vec();
                if let Some(stats) = &self.feature_stats {
                    stats.apply_vec(&mut v);
                }
                v
            }
            None => vec![0.0; self.config.feature_count],
        }
    }

    /// Builds the per-row tensors, standardizing features with the supplied
    /// stats (already applied rows pass `None`).
    pub fn prepare_rows(
        &self,
        rows: &[DenormalizedRow],
        stats: Option<&FeatureStats>,
    ) -> Result<Vec<PreparedRow>, HybridError> {
        let m = self.config.m;
        let ds = self.sent_table.dim();
        let mut out = Vec::with_capacity(rows.len());
        for row in rows {
            if row.feature_vector.len() != self.config.feature_count {
                return Err(HybridError::FeatureWidth {
                    expected: self.config.feature_count,
                    found: row.feature_vector.len(),
                    visitor: row.visitor_id.clone(),
                });
            }
            if row.target_row.len() != self.config.device_count {
                return Err(HybridError::TargetWidth {
                    expected: self.config.device_count,
                    found: row.target_row.len(),
                    visitor: row.visitor_id.clone(),
                });
            }
            let mut sequence = row.device_sequence.clone();
            // Re-pad to the model's m if the rows were built with another.
            if sequence.len() < m {
                let mut padded = vec![PAD_TOKEN.to_string(); m - sequence.len()];
                padded.extend(sequence);
                sequence = padded;
            } else if sequence.len() > m {
                sequence = sequence[sequence.len() - m..].to_vec();
            }
            let text =
                device_word_matrix(&sequence, &self.names, &self.word_table, &self.sent_table);
            let mut n2_sent = Vec::with_capacity(m * ds);
            for device in &sequence {
                if device == PAD_TOKEN {
                    n2_sent.extend(std::iter::repeat_n(0.0, ds));
                } else {
                    n2_sent.extend(self.sent_table.lookup(device));
                }
            }
            let mut features = row.feature_vector.clone();
            if let Some(stats) = stats {
                stats.apply_vec(&mut features);
            }
            out.push(PreparedRow {
                visitor_id: row.visitor_id.clone(),
                n1_text: text.data,
                n2_sent,
                visitor_slot: self.visitor_slot(&row.visitor_id),
                device_slots: sequence.iter().map(|d| self.device_slot(d)).collect(),
                features,
                target: row.target_row.clone(),
            });
        }
        Ok(out)
    }

    pub fn assemble(&self, rows: &[&PreparedRow]) -> Batch {
        let b = rows.len();
        let m = self.config.m;
        let w = self.text_width();
        let ds = self.sent_table.dim();
        let n = self.config.feature_count;
        let d = self.config.device_count;
        let mut n1 = Vec::with_capacity(b * m * w);
        let mut n2 = Vec::with_capacity(b * m * ds);
        let mut visitors = Vec::with_capacity(b);
        let mut devices = Vec::with_capacity(b * m);
        let mut features = Vec::with_capacity(b * n);
        let mut target = Vec::with_capacity(b * d);
        for row in rows {
            n1.extend_from_slice(&row.n1_text);
            n2.extend_from_slice(&row.n2_sent);
            visitors.push(row.visitor_slot);
            devices.extend_from_slice(&row.device_slots);
            features.extend_from_slice(&row.features);
            target.extend_from_slice(&row.target);
        }
        Batch {
            n1: Tensor::from_vec(&[b, 1, m, w], n1),
            n2: Tensor::from_vec(&[b, m, ds], n2),
            visitors,
            devices,
            features: Tensor::from_vec(&[b, n], features),
            target: Tensor::from_vec(&[b, d], target),
        }
    }

    pub fn forward_n1(&mut self, input: &Tensor, mode: Mode) -> Tensor {
        let mut x = input.clone();
        for i in 0..self.config.conv_blocks {
            x = self.n1_convs[i].forward(&x);
            x = self.n1_conv_relus[i].forward(&x);
            x = self.n1_bns[i].forward(&x, mode);
            x = self.n1_pools[i].forward(&x);
        }
        x = self.n1_flatten.forward(&x);
        for i in 0..self.n1_dense.len() {
            x = self.n1_dense[i].forward(&x);
            x = self.n1_relus[i].forward(&x);
            x = self.n1_drops[i].forward(&x, mode);
        }
        x
    }

    pub fn backward_n1(&mut self, grad: &Tensor) -> Tensor {
        let mut g = grad.clone();
        for i in (0..self.n1_dense.len()).rev() {
            g = self.n1_drops[i].backward(&g);
            g = self.n1_relus[i].backward(&g);
            g = self.n1_dense[i].backward(&g);
        }
        g = self.n1_flatten.backward(&g);
        for i in (0..self.config.conv_blocks).rev() {
            g = self.n1_pools[i].backward(&g);
            g = self.n1_bns[i].backward(&g);
            g = self.n1_conv_relus[i].backward(&g);
            g = self.n1_convs[i].backward(&g);
        }
        g
    }

    pub fn forward_n2(&mut self, input: &Tensor, mode: Mode) -> Tensor {
        let mut x = self.n2_lstm.forward(input);
        x = self.n2_lrelu1.forward(&x);
        x = self.n2_drop1.forward(&x, mode);
        x = self.n2_pool.forward(&x);
        x = self.n2_dense.forward(&x);
        x = self.n2_lrelu2.forward(&x);
        self.n2_drop2.forward(&x, mode)
    }

    pub fn backward_n2(&mut self, grad: &Tensor) -> Tensor {
        let mut g = self.n2_drop2.backward(grad);
        g = self.n2_lrelu2.backward(&g);
        g = self.n2_dense.backward(&g);
        g = self.n2_pool.backward(&g);
        g = self.n2_drop1.backward(&g);
        g = self.n2_lrelu1.backward(&g);
        self.n2_lstm.backward(&g)
    }

    pub fn forward_n3(&mut self, visitors: &[usize], devices: &[usize], mode: Mode) -> Tensor {
        let b = visitors.len();
        let m = self.config.m;
        let f = self.factor_dim();
        let user = self.emb_visitor.forward(visitors, &[b]); // [B, f]
        let items = self.emb_device.forward(devices, &[b, m]); // [B, m, f]
        let fused = match self.config.n3_fusion {
            Fusion::Dot => self.n3_dot.forward(&user, &items), // [B, m]
            Fusion::Concatenate => {
                // Tile the user vector against each device slot: [B, m, 2f].
                self.n3_concat_cache = Some((b, m, f));
                let mut data = Vec::with_capacity(b * m * 2 * f);
                for bi in 0..b {
                    let u = &user.data[bi * f..(bi + 1) * f];
                    for j in 0..m {
                        data.extend_from_slice(u);
                        data.extend_from_slice(&items.data[(bi * m + j) * f..(bi * m + j + 1) * f]);
                    }
                }
                Tensor::from_vec(&[b, m, 2 * f], data)
            }
        };
        let mut x = self.n3_flatten.forward(&fused);
        for i in 0..self.n3_dense.len() {
            x = self.n3_dense[i].forward(&x);
            x = self.n3_relus[i].forward(&x);
            x = self.n3_drops[i].forward(&x, mode);
        }
        x
    }

    pub fn backward_n3(&mut self, grad: &Tensor) {
        let mut g = grad.clone();
        for i in (0..self.n3_dense.len()).rev() {
            g = self.n3_drops[i].backward(&g);
            g = self.n3_relus[i].backward(&g);
            g = self.n3_dense[i].backward(&g);
        }
        g = self.n3_flatten.backward(&g);
        match self.config.n3_fusion {
            Fusion::Dot => {
                let (gu, gi) = self.n3_dot.backward(&g);
                self.emb_visitor.backward(&gu);
                self.emb_device.backward(&gi);
            }
            Fusion::Concatenate => {
                let (b, m, f) = self
                    .n3_concat_cache
                    .take()
                    .expect("n3 concat backward without forward");
                let mut gu = Tensor::zeros(&[b, f]);
                let mut gi = Tensor::zeros(&[b, m, f]);
                for bi in 0..b {
                    for j in 0..m {
                        let base = (bi * m + j) * 2 * f;
                        let gur = &mut gu.data[bi * f..(bi + 1) * f];
                        for (o, &v) in gur.iter_mut().zip(&g.data[base..base + f]) {
                            *o += v;
                        }
                        gi.data[(bi * m + j) * f..(bi * m + j + 1) * f]
                            .copy_from_slice(&g.data[base + f..base + 2 * f]);
                    }
                }
                self.emb_visitor.backward(&gu);
                self.emb_device.backward(&gi);
            }
        }
    }

    pub fn forward_n4(&mut self, input: &Tensor, mode: Mode) -> Tensor {
        let x = self.n4_dense.forward(input);
        let x = self.n4_relu.forward(&x);
        self.n4_drop.forward(&x, mode)
    }

    pub fn backward_n4(&mut self, grad: &Tensor) -> Tensor {
        let g = self.n4_drop.backward(grad);
        let g = self.n4_relu.backward(&g);
        self.n4_dense.backward(&g)
    }

    pub fn forward_batch(&mut self, batch: &Batch, mode: Mode) -> Tensor {
        let y1 = self.forward_n1(&batch.n1, mode);
        let y2 = self.forward_n2(&batch.n2, mode);
        let y3 = self.forward_n3(&batch.visitors, &batch.devices, mode);
        let y4 = self.forward_n4(&batch.features, mode);
        let fused = concat_cols(&[&y1, &y2, &y3, &y4]);
        let x = self.fuse_drop0.forward(&fused, mode);
        let x = self.fuse_dense.forward(&x);
        let x = self.fuse_relu.forward(&x);
        let x = self.fuse_drop1.forward(&x, mode);
        let x = self.head_dense.forward(&x);
        match self.config.head {
            Head::Regression => {
                let s = self.head_sigmoid.forward(&x);
                let lambda = LambdaRange::new(self.lo, self.hi);
                lambda.forward(&s)
            }
            Head::Classification => self.head_softmax.forward(&x),
        }
    }

    pub fn backward_batch(&mut self, grad: &Tensor) {
        let g = match self.config.head {
            Head::Regression => {
                let lambda = LambdaRange::new(self.lo, self.hi);
                let g = lambda.backward(grad);
                self.head_sigmoid.backward(&g)
            }
            Head::Classification => self.head_softmax.backward(grad),
        };
        let g = self.head_dense.backward(&g);
        let g = self.fuse_drop1.backward(&g);
        let g = self.fuse_relu.backward(&g);
        let g = self.fuse_dense.backward(&g);
        let g = self.fuse_drop0.backward(&g);
        let widths = [
            *self.config.n1_dense.last().unwrap(),
            self.config.n2_dense,
            *self.config.n3_dense.last().unwrap(),
            self.config.n4_dense,
        ];
        let parts = split_cols(&g, &widths);
        self.backward_n1(&parts[0]);
        self.backward_n2(&parts[1]);
        self.backward_n3(&parts[2]);
        self.backward_n4(&parts[3]);
    }

    /// Inference forward over prepared rows: `[rows, D]` scores.
    pub fn predict_rows(&mut self, rows: &[PreparedRow]) -> Tensor {
        let d = self.config.device_count;
        let mut out = Tensor::zeros(&[rows.len(), d]);
        let chunk = self.config.batch.max(1);
        let mut offset = 0;
        for group in rows.chunks(chunk) {
            let refs: Vec<&PreparedRow> = group.iter().collect();
            let batch = self.assemble(&refs);
            let pred = self.forward_batch(&batch, Mode::Infer);
            out.data[offset * d..(offset + group.len()) * d].copy_from_slice(&pred.data);
            offset += group.len();
        }
        out
    }

    pub fn zero_grads(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }
}

impl ParamVisitor for HybridNet {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for c in &mut self.n1_convs {
            c.visit_params(f);
        }
        for b in &mut self.n1_bns {
            b.visit_params(f);
        }
        for d in &mut self.n1_dense {
            d.visit_params(f);
        }
        self.n2_lstm.visit_params(f);
        self.n2_dense.visit_params(f);
        for d in &mut self.n3_dense {
            d.visit_params(f);
        }
        self.emb_visitor.visit_params(f);
        self.emb_device.visit_params(f);
        self.n4_dense.visit_params(f);
        self.fuse_dense.visit_params(f);
        self.head_dense.visit_params(f);
    }
}

/// Mean squared error over every output cell; gradient w.r.t. predictions.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> (f64, Tensor) {
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(&pred.shape);
    for ((g, &p), &t) in grad.data.iter_mut().zip(&pred.data).zip(&target.data) {
        let e = p - t;
        loss += e * e;
        *g = 2.0 * e / n;
    }
    (loss / n, grad)
}

/// Categorical cross-entropy against one-hot targets; mean over rows.
pub fn cross_entropy_loss(pred: &Tensor, target: &Tensor) -> (f64, Tensor) {
    let rows = pred.dim(0) as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(&pred.shape);
    for ((g, &p), &t) in grad.data.iter_mut().zip(&pred.data).zip(&target.data) {
        if t > 0.0 {
            let clamped = p.max(1e-12);
            loss -= t * clamped.ln();
            *g = -t / (clamped * rows);
        }
    }
    (loss / rows, grad)
}

/// Converts target rows for the configured head: regression keeps them as
/// they are, classification one-hots the argmax (first index wins ties) and
/// drops all-zero rows. Returns kept row indices and the drop count.
pub fn make_targets(
    rows: &[PreparedRow],
    head: Head,
) -> (Vec<usize>, Vec<Vec<f64>>, usize) {
    match head {
        Head::Regression => (
            (0..rows.len()).collect(),
            rows.iter().map(|r| r.target.clone()).collect(),
            0,
        ),
        Head::Classification => {
            let mut kept = Vec::new();
            let mut targets = Vec::new();
            let mut skipped = 0;
            for (i, row) in rows.iter().enumerate() {
                if row.target.iter().all(|&v| v == 0.0) {
                    skipped += 1;
                    continue;
                }
                let mut best = 0;
                for (j, &v) in row.target.iter().enumerate().skip(1) {
                    if v > row.target[best] {
                        best = j;
                    }
                }
                let mut one_hot = vec![0.0; row.target.len()];
                one_hot[best] = 1.0;
                kept.push(i);
                targets.push(one_hot);
            }
            (kept, targets, skipped)
        }
    }
}

/// Replaces row targets with the ALS reconstruction rows for the same
/// visitors (used when `target_source = als_reconstruction`).
pub fn retarget_from_reconstruction(
    rows: &mut [DenormalizedRow],
    reconstruction: &InteractionMatrix,
) {
    for row in rows.iter_mut() {
        if let Some(pos) = reconstruction.visitor_pos(&row.visitor_id) {
            row.target_row = reconstruction.row(pos).to_vec();
        }
    }
}

/// Trains the network: fits feature statistics on the training split only,
/// runs seeded shuffled mini-batches with Adam, and records train/validation
/// loss per epoch.
pub fn train(
    net: &mut HybridNet,
    train_rows: &[DenormalizedRow],
    validation_rows: &[DenormalizedRow],
) -> Result<TrainReport, HybridError> {
    if train_rows.is_empty() {
        return Err(HybridError::NoTrainingRows {
            reason: "empty training split".into(),
        });
    }
    let stats = FeatureStats::fit(train_rows);
    net.feature_stats = Some(stats.clone());
    let prepared_train = net.prepare_rows(train_rows, Some(&stats))?;
    let prepared_val = net.prepare_rows(validation_rows, Some(&stats))?;

    let (kept, targets, skipped) = make_targets(&prepared_train, net.config.head);
    if kept.is_empty() {
        return Err(HybridError::NoTrainingRows {
            reason: "all rows had zero targets".into(),
        });
    }
    let train_set: Vec<PreparedRow> = kept
        .iter()
        .zip(&targets)
        .map(|(&i, t)| {
            let mut row = prepared_train[i].clone();
            row.target = t.clone();
            row
        })
        .collect();
    let (val_kept, val_targets, _) = make_targets(&prepared_val, net.config.head);
    let val_set: Vec<PreparedRow> = val_kept
        .iter()
        .zip(&val_targets)
        .map(|(&i, t)| {
            let mut row = prepared_val[i].clone();
            row.target = t.clone();
            row
        })
        .collect();

    // Regression output range from training targets only.
    if net.config.head == Head::Regression {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for row in &train_set {
            for &v in &row.target {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if hi <= lo {
            hi = lo + 1e-6;
        }
        net.lo = lo;
        net.hi = hi;
    }

    let mut optimizer = Adam::new(net.config.learning_rate);
    let mut shuffle_rng = ChaCha12Rng::seed_from_u64(net.config.seed.wrapping_add(0x5317));
    let mut report = TrainReport {
        skipped_zero_target_rows: skipped,
        ..Default::default()
    };
    let batch_size = net.config.batch;
    for epoch in 0..net.config.epochs {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut cells = 0usize;
        for (batch_idx, chunk) in order.chunks(batch_size).enumerate() {
            let refs: Vec<&PreparedRow> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch = net.assemble(&refs);
            net.zero_grads();
            let pred = net.forward_batch(&batch, Mode::Train);
            let (loss, grad) = match net.config.head {
                Head::Regression => mse_loss(&pred, &batch.target),
                Head::Classification => cross_entropy_loss(&pred, &batch.target),
            };
            if !loss.is_finite() {
                return Err(HybridError::NanLoss {
                    epoch: epoch + 1,
                    batch: batch_idx,
                });
            }
            net.backward_batch(&grad);
            optimizer.step(net);
            epoch_loss += loss * chunk.len() as f64;
            cells += chunk.len();
        }
        let train_loss = epoch_loss / cells as f64;
        let validation_loss = if val_set.is_empty() {
            f64::NAN
        } else {
            evaluate_loss(net, &val_set)
        };
        report.epochs.push(EpochStats {
            epoch: epoch + 1,
            train_loss,
            validation_loss,
        });
    }
    Ok(report)
}

/// Mean loss over prepared rows in inference mode.
pub fn evaluate_loss(net: &mut HybridNet, rows: &[PreparedRow]) -> f64 {
    let pred = net.predict_rows(rows);
    let d = net.config.device_count;
    let target = Tensor::from_vec(
        &[rows.len(), d],
        rows.iter().flat_map(|r| r.target.iter().copied()).collect(),
    );
    match net.config.head {
        Head::Regression => mse_loss(&pred, &target).0,
        Head::Classification => cross_entropy_loss(&pred, &target).0,
    }
}

/// Ranked `(device_id, score)` recommendations for a possibly cold visitor.
/// Devices already in the visitor's sequence are excluded unless
/// `include_seen` is set.
pub fn recommend(
    net: &mut HybridNet,
    context: &VisitorContext,
    k: usize,
    include_seen: bool,
) -> Result<Vec<(String, f64)>, HybridError> {
    let d = net.config.device_count;
    if k > d {
        return Err(HybridError::BadK { k, devices: d });
    }
    let m = net.config.m;
    let mut sequence = vec![PAD_TOKEN.to_string(); m.saturating_sub(context.device_sequence.len())];
    let start = context.device_sequence.len().saturating_sub(m);
    sequence.extend(context.device_sequence[start..].iter().cloned());

    let features = net.query_features(context.features.as_deref());
    if features.len() != net.config.feature_count {
        return Err(HybridError::FeatureWidth {
            expected: net.config.feature_count,
            found: features.len(),
            visitor: context.visitor_id.clone(),
        });
    }
    let text = device_word_matrix(&sequence, &net.names, &net.word_table, &net.sent_table);
    let ds = net.sent_table.dim();
    let mut n2_sent = Vec::with_capacity(m * ds);
    for device in &sequence {
        if device == PAD_TOKEN {
            n2_sent.extend(std::iter::repeat_n(0.0, ds));
        } else {
            n2_sent.extend(net.sent_table.lookup(device));
        }
    }
    let row = PreparedRow {
        visitor_id: context.visitor_id.clone(),
        n1_text: text.data,
        n2_sent,
        visitor_slot: net.visitor_slot(&context.visitor_id),
        device_slots: sequence.iter().map(|s| net.device_slot(s)).collect(),
        features,
        target: vec![0.0; d],
    };
    let scores = net.predict_rows(std::slice::from_ref(&row));
    let seen: std::collections::BTreeSet<&String> = context.device_sequence.iter().collect();
    let mut ranked: Vec<(usize, f64)> = (0..d)
        .filter(|i| include_seen || !seen.contains(&net.device_index[*i]))
        .map(|i| (i, scores.data[i]))
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    Ok(ranked
        .into_iter()
        .take(k)
        .map(|(i, s)| (net.device_index[i].clone(), s))
        .collect())
}
