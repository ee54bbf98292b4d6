//! Seeded synthetic interaction generator.
//!
//! Visitors belong to latent archetypes; each archetype concentrates its
//! events on one "leader" device among the popular head of a power-law
//! device distribution, and visitor/context/device features carry a noisy
//! encoding of the archetype. That gives every branch of the hybrid network
//! a learnable signal while keeping the global popularity curve power-law.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::{DatasetError, EventType, FeatureTable, InteractionEvent};

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub visitors: usize,
    pub devices: usize,
    pub events: usize,
    pub seed: u64,
    /// Power-law exponent for device popularity; larger = more skewed.
    pub popularity_skew: f64,
    pub archetypes: usize,
    pub visitor_feature_cols: usize,
    pub context_feature_cols: usize,
    pub device_feature_cols: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            visitors: 2000,
            devices: 60,
            events: 40_000,
            seed: 1,
            popularity_skew: 1.1,
            archetypes: 6,
            visitor_feature_cols: 8,
            context_feature_cols: 4,
            device_feature_cols: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceDescription {
    pub device_id: String,
    pub name: String,
    pub description: String,
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub events: Vec<InteractionEvent>,
    pub visitor_features: FeatureTable,
    pub device_features: FeatureTable,
    pub descriptions: Vec<DeviceDescription>,
}

fn visitor_id(i: usize) -> String {
    format!("v{i:05}")
}

fn device_id(i: usize) -> String {
    format!("d{i:03}")
}

/// Share of a visitor's events that go to their archetype's leader device.
const ARCHETYPE_AFFINITY: f64 = 0.55;

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthData, DatasetError> {
    if cfg.visitors == 0 || cfg.devices == 0 || cfg.events == 0 {
        return Err(DatasetError::InvalidConfig(
            "visitors, devices and events must all be >= 1".into(),
        ));
    }
    if cfg.popularity_skew < 0.0 {
        return Err(DatasetError::InvalidConfig(
            "popularity_skew must be >= 0".into(),
        ));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let k = cfg.archetypes.clamp(1, cfg.devices);

    // Cumulative power-law weights over devices; device index = popularity rank.
    let weights: Vec<f64> = (0..cfg.devices)
        .map(|d| 1.0 / ((d + 1) as f64).powf(cfg.popularity_skew))
        .collect();
    let mut cumulative = Vec::with_capacity(cfg.devices);
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        cumulative.push(acc);
    }
    let total_weight = acc;

    let archetype: Vec<usize> = (0..cfg.visitors).map(|_| rng.random_range(0..k)).collect();

    let mut last_ts: Vec<u64> = (0..cfg.visitors)
        .map(|v| 1_600_000_000 + v as u64)
        .collect();
    let mut events = Vec::with_capacity(cfg.events);
    for _ in 0..cfg.events {
        let v = rng.random_range(0..cfg.visitors);
        let d = if rng.random::<f64>() < ARCHETYPE_AFFINITY {
            archetype[v] // leaders are the k most popular devices
        } else {
            let x = rng.random::<f64>() * total_weight;
            cumulative.partition_point(|&c| c < x).min(cfg.devices - 1)
        };
        let event_type = {
            let r = rng.random::<f64>();
            if r < 0.90 {
                EventType::View
            } else if r < 0.98 {
                EventType::Cart
            } else {
                EventType::Order
            }
        };
        last_ts[v] += rng.random_range(60..3600);
        events.push(InteractionEvent {
            visitor_id: visitor_id(v),
            device_id: device_id(d),
            event_type,
            timestamp: last_ts[v],
        });
    }

    // Visitor features: a noisy archetype one-hot in the leading columns,
    // noise elsewhere; context columns carry a weaker archetype trace.
    let mut visitor_columns: Vec<String> = (0..cfg.visitor_feature_cols)
        .map(|i| format!("vf_{i}"))
        .collect();
    visitor_columns.extend((0..cfg.context_feature_cols).map(|i| format!("ctx_{i}")));
    let mut visitor_rows = std::collections::BTreeMap::new();
    for (v, &a) in archetype.iter().enumerate() {
        let mut row = Vec::with_capacity(visitor_columns.len());
        for j in 0..cfg.visitor_feature_cols {
            let base = if j < k && a == j { 1.0 } else { 0.0 };
            row.push(base + 0.05 * rng.random_range(-1.0..1.0));
        }
        for _ in 0..cfg.context_feature_cols {
            row.push(a as f64 / k as f64 + 0.2 * rng.random_range(-1.0..1.0));
        }
        visitor_rows.insert(visitor_id(v), row);
    }

    // Device features: popularity rank, group id, then noise.
    let device_columns: Vec<String> = (0..cfg.device_feature_cols)
        .map(|i| format!("df_{i}"))
        .collect();
    let mut device_rows = std::collections::BTreeMap::new();
    for d in 0..cfg.devices {
        let mut row = Vec::with_capacity(cfg.device_feature_cols);
        for j in 0..cfg.device_feature_cols {
            let v = match j {
                0 => d as f64 / cfg.devices as f64,
                1 => (d % k) as f64 / k as f64,
                _ => rng.random_range(-0.5..0.5),
            };
            row.push(v);
        }
        device_rows.insert(device_id(d), row);
    }

    // Names/descriptions share group tokens so text embeddings carry signal.
    let descriptions: Vec<DeviceDescription> = (0..cfg.devices)
        .map(|d| {
            let group = d % k;
            let tier = d * 4 / cfg.devices;
            DeviceDescription {
                device_id: device_id(d),
                name: format!("brand{group} model{d:03}"),
                description: format!(
                    "brand{group} handset tier{tier} camera cam{} display size{}",
                    d % 5,
                    d % 3
                ),
            }
        })
        .collect();

    Ok(SynthData {
        events,
        visitor_features: FeatureTable {
            columns: visitor_columns,
            rows: visitor_rows,
        },
        device_features: FeatureTable {
            columns: device_columns,
            rows: device_rows,
        },
        descriptions,
    })
}
