//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured numbers (run with `--nocapture` to see them).

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use hybridrec::als::{self, AlsHyper, RowSolver, ScaledItems};
use hybridrec::coverage;
use hybridrec::dataset::{self, synth::SynthConfig, EventType, InteractionMatrix};
use hybridrec::embeddings::{synth_table, synth_table_from_content, EmbeddingTable};
use hybridrec::hybridnet::{
    self, cross_entropy_loss, mse_loss, Fusion, Head, HybridConfig, HybridNet, PreparedRow,
    TargetSource, VisitorContext,
};
use hybridrec::metrics::{self, MatrixView};
use hybridrec::tensorcore::gradcheck::{max_param_rel_error, FD_STEP};
use hybridrec::tensorcore::{
    BatchNorm2d, Conv2d, Dense, DotProduct, Dropout, Flatten, GlobalMaxPool1d, LambdaRange,
    LeakyRelu, Lstm, MaxPool2d, Mode, Param, ParamVisitor, Relu, Reshape, Sigmoid, Softmax,
    Tensor,
};

const GRAD_TOL: f64 = 1e-3;

fn seeded_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let len: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn weighted_loss(out: &Tensor) -> (f64, Tensor) {
    let w: Vec<f64> = (0..out.len()).map(|i| (i as f64 * 0.31).sin() + 0.2).collect();
    let loss = out.data.iter().zip(&w).map(|(o, wv)| o * wv).sum();
    (loss, Tensor::from_vec(&out.shape, w))
}

#[derive(Clone)]
struct WithInput<L: Clone> {
    input: Param,
    layer: L,
}

impl<L: ParamVisitor + Clone> ParamVisitor for WithInput<L> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.input);
        self.layer.visit_params(f);
    }
}

#[derive(Clone)]
struct InputOnly<L: Clone> {
    input: Param,
    layer: L,
}

impl<L: Clone> ParamVisitor for InputOnly<L> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.input);
    }
}

macro_rules! check_layer {
    ($name:expr, $proto:expr, $run:expr, $worst:ident) => {{
        let err = max_param_rel_error(&$proto, $run, FD_STEP);
        assert!(err < GRAD_TOL, "{} gradient rel error {err}", $name);
        $worst = $worst.max(err);
    }};
}

/// Shared fixture: the default synthetic dataset taken through scoring,
/// reduction at the 90th percentile, and de-normalization.
struct DefaultData {
    matrix: InteractionMatrix,
    rows: Vec<dataset::DenormalizedRow>,
    word: EmbeddingTable,
    sent: EmbeddingTable,
    names: std::collections::BTreeMap<String, String>,
}

fn default_dataset(seed: u64) -> DefaultData {
    let cfg = SynthConfig {
        seed,
        ..Default::default()
    };
    let data = dataset::synth::synth_generate(&cfg).expect("synth");
    let aggs = dataset::aggregate(&data.events);
    let reduction = dataset::reduce_by_percentile(&aggs, 90.0).expect("reduce");
    let mut kept = reduction.aggregates;
    dataset::weight_scores(&mut kept);
    dataset::normalize_scores(&mut kept);
    let matrix = dataset::build_matrix(&kept).expect("matrix");
    let (rows, _) = dataset::denormalize(
        &matrix,
        &data.events,
        8,
        &data.visitor_features,
        &data.device_features,
    );
    let word_tokens: Vec<String> = data
        .descriptions
        .iter()
        .flat_map(|d| d.name.split_whitespace().map(String::from))
        .collect();
    let word = synth_table(&word_tokens, 32, seed ^ 0x77);
    let sent_entries: Vec<(String, String)> = data
        .descriptions
        .iter()
        .map(|d| (d.device_id.clone(), d.description.clone()))
        .collect();
    let sent = synth_table_from_content(&sent_entries, 32, seed ^ 0x5e);
    let names = data
        .descriptions
        .into_iter()
        .map(|d| (d.device_id, d.name))
        .collect();
    DefaultData {
        matrix,
        rows,
        word,
        sent,
        names,
    }
}

fn default_net(data: &DefaultData, head: Head, seed: u64, epochs: usize) -> HybridNet {
    let model = als::als_fit(&data.matrix, &AlsHyper { seed, ..Default::default() }).expect("als");
    let (emb_v, emb_d) = als::export_embeddings(&model);
    let feature_count = data.rows[0].feature_vector.len();
    let config = HybridConfig {
        feature_count,
        device_count: data.matrix.devices(),
        head,
        k_top: 5,
        epochs,
        seed,
        ..HybridConfig::defaults()
    };
    HybridNet::build(
        config,
        data.matrix.device_index.clone(),
        emb_v,
        emb_d,
        data.word.clone(),
        data.sent.clone(),
        data.names.clone(),
    )
    .expect("net build")
}

/// Tiny geometry from the end-to-end gradient-check contract: m=4,
/// d_w=d_s=8, f=4, D=5, 2-filter conv blocks. Three 2x poolings would need
/// m >= 8, so the tiny net runs two blocks.
fn tiny_net(head: Head) -> (HybridNet, Vec<dataset::DenormalizedRow>) {
    let devices: Vec<String> = (0..5).map(|i| format!("d{i}")).collect();
    let visitors: Vec<String> = (0..6).map(|i| format!("v{i}")).collect();
    let names: std::collections::BTreeMap<String, String> = devices
        .iter()
        .enumerate()
        .map(|(i, d)| (d.clone(), format!("brand{} model{i}", i % 2)))
        .collect();
    let word_tokens: Vec<String> = names
        .values()
        .flat_map(|n| n.split_whitespace().map(String::from))
        .collect();
    let sent_entries: Vec<(String, String)> = devices
        .iter()
        .map(|d| (d.clone(), format!("text for {d}")))
        .collect();
    let config = HybridConfig {
        m: 4,
        feature_count: 4,
        device_count: 5,
        head,
        n3_fusion: Fusion::Dot,
        target_source: TargetSource::InputMatrix,
        conv_blocks: 2,
        conv_filters: vec![2, 2],
        n1_dense: vec![8, 4],
        lstm_units: 6,
        n2_dense: 5,
        n3_dense: vec![6, 4],
        n4_dense: 6,
        shared_dense: 8,
        dropout_rate: 0.2,
        k_top: 5,
        epochs: 1,
        batch: 4,
        learning_rate: 1e-3,
        train_als_embeddings: false,
        seed: 7,
    };
    let net = HybridNet::build(
        config,
        devices.clone(),
        synth_table(&visitors, 4, 13),
        synth_table(&devices, 4, 14),
        synth_table(&word_tokens, 8, 11),
        synth_table_from_content(&sent_entries, 8, 12),
        names,
    )
    .expect("tiny net");
    // Full (PAD-free) sequences keep the check away from the relu kink at
    // exactly-zero conv inputs with zero-initialized biases.
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let rows: Vec<dataset::DenormalizedRow> = (0..3)
        .map(|i| {
            let mut target = vec![0.0; 5];
            target[i % 5] = 0.4 + 0.4 * rng.random::<f64>();
            dataset::DenormalizedRow {
                visitor_id: format!("v{i}"),
                device_sequence: (0..4).map(|j| devices[(i + j) % 5].clone()).collect(),
                feature_vector: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
                target_row: target,
            }
        })
        .collect();
    (net, rows)
}

#[test]
fn criterion_1_gradient_correctness() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;

    // Every tensorcore layer kind.
    check_layer!(
        "dense",
        WithInput {
            input: Param::new(seeded_tensor(&[3, 4], 1)),
            layer: Dense::new(4, 5, &mut ChaCha12Rng::seed_from_u64(2)),
        },
        |m: &mut WithInput<Dense>| {
            let out = m.layer.forward(&m.input.value);
            let (loss, g) = weighted_loss(&out);
            m.input.grad = m.layer.backward(&g);
            loss
        },
        worst
    );
    check_layer!(
        "relu",
        InputOnly {
            input: Param::new(seeded_tensor(&[2, 6], 3)),
            layer: Relu::new(),
        },
        |m: &mut InputOnly<Relu>| {
            let out = m.layer.forward(&m.input.value);
            let (loss, g) = weighted_loss(&out);
            m.input.grad = m.layer.backward(&g);
            loss
        },
        worst
    );
    check_layer!(
        "leakyrelu",
        InputOnly {
            input: Param::new(seeded_tensor(&[2, 6], 4)),
            layer: LeakyRelu::new(),
        },
        |m: &mut InputOnly<LeakyRelu>| {
            let out = m.layer.forward(&m.input.value);
            let (loss, g) = weighted_loss(&out);
            m.input.grad = m.layer.backward(&g);
            loss
        },
        worst
    );
    check_layer!(
        "sigmoid",
        InputOnly {
            input: Param::new(seeded_tensor(&[2, 5], 5)),
            layer: Sigmoid::new(),
        },
        |m: &mut InputOnly<Sigmoid>| {
            let out = m.layer.forward(&m.input.value);
            let (loss, g) = weighted_loss(&out);
            m.input.grad = m.layer.backward(&g);
            loss
        },
        worst
    );
    check_layer!(
        "softmax",
        InputOnly {
            input: Param::new(seeded_tensor(&[3, 4], 6)),
            layer: Softmax::new(),
        },
        |m: &mut InputOnly<Softmax>| {
            let out = m.layer.forward(&m.input.value);
            let (loss, g) = weighted_loss(&out);
            m.input.grad = m.layer.backward(&g);
            loss
        },
        worst
    );
    check_layer!(
        "dropout",
        InputOnly {
            input: Param::new(seeded_tensor(&[4, 5], 7)),
            layer: Dropout::new(0.4, ChaCha12Rng::seed_from_u64(8)),
        },
        |m: &mut InputOnly<Dropout>| {
            let out = m.layer.forward(&m.input.value, Mode::Train);
            let (loss, g) = weighted_loss(&out);
            m.input.grad = m.layer.backward(&g);
            loss
        },
        worst
    );
    check_layer!(
        "conv2d",
        WithInput {
            input: Param::new(seeded_tensor(&[2, 2, 4, 6], 12)),
            layer: Conv2d::new(2, 3, 3, 3, &mut ChaCha12Rng::seed_from_u64(13)),
        },
        |m: &mut WithInput<Conv2d>| {
            let out = m.layer.forward(&m.input.value);
            let (loss, g) = weighted_loss(&out);
            m.input.grad = m.layer.backward(&g);
            loss
        },
        worst
    );
    check_layer!(
        "batchnorm",
        WithInput {
            input: Param::new(seeded_tensor(&[4, 2, 3, 3], 14)),
            layer: BatchNorm2d::new(2),
        },
        |m: &mut WithInput<BatchNorm2d>| {
            let out = m.layer.forward(&m.input.value, Mode::Train);
            let (loss, g) = weighted_loss(&out);
            m.input.grad = m.layer.backward(&g);
            loss
        },
        worst
    );
    check_layer!(
        "maxpool2d",
        InputOnly {
            input: Param::new(seeded_tensor(&[2, 2, 4, 4], 15)),
            layer: MaxPool2d::new(),
        },
        |m: &mut InputOnly<MaxPool2d>| {
            let out = m.layer.forward(&m.input.value);
            let (loss, g) = weighted_loss(&out);
            m.input.grad = m.layer.backward(&g);
            loss
        },
        worst
    );
    check_layer!(
        "globalmaxpool1d",
        InputOnly {
            input: Param::new(seeded_tensor(&[3, 5, 4], 16)),
            layer: GlobalMaxPool1d::new(),
        },
        |m: &mut InputOnly<GlobalMaxPool1d>| {
            let out = m.layer.forward(&m.input.value);
            let (loss, g) = weighted_loss(&out);
            m.input.grad = m.layer.backward(&g);
            loss
        },
        worst
    );
    check_layer!(
        "reshape",
        InputOnly {
            input: Param::new(seeded_tensor(&[2, 6], 26)),
            layer: Reshape::new(&[3, 2]),
        },
        |m: &mut InputOnly<Reshape>| {
            let out = m.layer.forward(&m.input.value);
            let (loss, g) = weighted_loss(&out);
            m.input.grad = m.layer.backward(&g);
            loss
        },
        worst
    );
    check_layer!(
        "flatten",
        InputOnly {
            input: Param::new(seeded_tensor(&[2, 3, 2], 17)),
            layer: Flatten::new(),
        },
        |m: &mut InputOnly<Flatten>| {
            let out = m.layer.forward(&m.input.value);
            let (loss, g) = weighted_loss(&out);
            m.input.grad = m.layer.backward(&g);
            loss
        },
        worst
    );
    check_layer!(
        "lstm",
        WithInput {
            input: Param::new(seeded_tensor(&[2, 4, 3], 18)),
            layer: Lstm::new(3, 4, &mut ChaCha12Rng::seed_from_u64(19)),
        },
        |m: &mut WithInput<Lstm>| {
            let out = m.layer.forward(&m.input.value);
            let (loss, g) = weighted_loss(&out);
            m.input.grad = m.layer.backward(&g);
            loss
        },
        worst
    );
    check_layer!(
        "lambda",
        InputOnly {
            input: Param::new(seeded_tensor(&[2, 4], 22)),
            layer: LambdaRange::new(0.1, 0.9),
        },
        |m: &mut InputOnly<LambdaRange>| {
            let out = m.layer.forward(&m.input.value);
            let (loss, g) = weighted_loss(&out);
            m.input.grad = m.layer.backward(&g);
            loss
        },
        worst
    );

    #[derive(Clone)]
    struct DotBoth {
        user: Param,
        items: Param,
        layer: DotProduct,
    }
    impl ParamVisitor for DotBoth {
        fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
            f(&mut self.user);
            f(&mut self.items);
        }
    }
    check_layer!(
        "dot",
        DotBoth {
            user: Param::new(seeded_tensor(&[2, 3], 20)),
            items: Param::new(seeded_tensor(&[2, 4, 3], 21)),
            layer: DotProduct::new(),
        },
        |m: &mut DotBoth| {
            let out = m.layer.forward(&m.user.value, &m.items.value);
            let (loss, g) = weighted_loss(&out);
            let (gu, gi) = m.layer.backward(&g);
            m.user.grad = gu;
            m.items.grad = gi;
            loss
        },
        worst
    );

    #[derive(Clone)]
    struct EmbOnly {
        layer: hybridrec::tensorcore::EmbeddingLookup,
    }
    impl ParamVisitor for EmbOnly {
        fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
            self.layer.visit_params(f);
        }
    }
    check_layer!(
        "embedding",
        EmbOnly {
            layer: hybridrec::tensorcore::EmbeddingLookup::new(seeded_tensor(&[5, 3], 23), true),
        },
        |m: &mut EmbOnly| {
            let out = m.layer.forward(&[0, 2, 0], &[3]);
            let (loss, g) = weighted_loss(&out);
            m.layer.backward(&g);
            loss
        },
        worst
    );

    // Every branch of the hybrid network, plus both end-to-end heads.
    for which in ["n1", "n2", "n3", "n4"] {
        let (net, rows) = tiny_net(Head::Regression);
        let prepared = net.prepare_rows(&rows, None).expect("prepare");
        let which_owned = which.to_string();
        let err = max_param_rel_error(
            &net,
            move |m: &mut HybridNet| {
                let refs: Vec<&PreparedRow> = prepared.iter().collect();
                let batch = m.assemble(&refs);
                m.zero_grads();
                let out = match which_owned.as_str() {
                    "n1" => m.forward_n1(&batch.n1, Mode::Train),
                    "n2" => m.forward_n2(&batch.n2, Mode::Train),
                    "n3" => m.forward_n3(&batch.visitors, &batch.devices, Mode::Train),
                    _ => m.forward_n4(&batch.features, Mode::Train),
                };
                let (loss, g) = weighted_loss(&out);
                match which_owned.as_str() {
                    "n1" => {
                        m.backward_n1(&g);
                    }
                    "n2" => {
                        m.backward_n2(&g);
                    }
                    "n3" => m.backward_n3(&g),
                    _ => {
                        m.backward_n4(&g);
                    }
                }
                loss
            },
            FD_STEP,
        );
        assert!(err < GRAD_TOL, "branch {which} gradient rel error {err}");
        worst = worst.max(err);
    }
    for head in [Head::Regression, Head::Classification] {
        let (net, rows) = tiny_net(head);
        let prepared = net.prepare_rows(&rows, None).expect("prepare");
        let (kept, targets, _) = hybridnet::make_targets(&prepared, head);
        let rows_t: Vec<PreparedRow> = kept
            .iter()
            .zip(&targets)
            .map(|(&i, t)| {
                let mut r = prepared[i].clone();
                r.target = t.clone();
                r
            })
            .collect();
        let err = max_param_rel_error(
            &net,
            move |m: &mut HybridNet| {
                let refs: Vec<&PreparedRow> = rows_t.iter().collect();
                let batch = m.assemble(&refs);
                m.zero_grads();
                let pred = m.forward_batch(&batch, Mode::Train);
                let (loss, grad) = match m.config.head {
                    Head::Regression => mse_loss(&pred, &batch.target),
                    Head::Classification => cross_entropy_loss(&pred, &batch.target),
                };
                m.backward_batch(&grad);
                loss
            },
            FD_STEP,
        );
        assert!(err < GRAD_TOL, "end-to-end {head:?} gradient rel error {err}");
        worst = worst.max(err);
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "runtime {elapsed:?} exceeds 60 s");
    println!(
        "acceptance criterion 1: PASS — all layer/branch/end-to-end gradients within {GRAD_TOL} \
         (worst rel error {worst:.2e}, runtime {elapsed:.2?})"
    );
}

#[test]
fn criterion_2_als_monotone_and_cg_equivalence() {
    let start = Instant::now();
    let data = default_dataset(1);
    let hyper = AlsHyper {
        iterations: 10,
        solver: RowSolver::Direct,
        ..Default::default()
    };
    let model = als::als_fit(&data.matrix, &hyper).expect("als fit");
    assert_eq!(model.objective_trace.len(), 10);
    for w in model.objective_trace.windows(2) {
        assert!(
            w[1] <= w[0] * (1.0 + 1e-12),
            "objective increased across sweeps: {} -> {}",
            w[0],
            w[1]
        );
    }

    // Row-level CG equivalence: rebuild each user row's normal equations from
    // the trained item factors and solve both ways with cg_steps = f.
    let f = hyper.factors;
    let nd = data.matrix.devices();
    let mut gram = vec![0.0; f * f];
    for d in 0..nd {
        let y = model.item_row(d);
        for i in 0..f {
            for j in 0..f {
                gram[i * f + j] += y[i] * y[j];
            }
        }
    }
    let mut worst_rel: f64 = 0.0;
    for u in 0..data.matrix.visitors() {
        let row = data.matrix.row(u);
        let mut scaled = Vec::new();
        let mut rhs = vec![0.0; f];
        for (d, &r) in row.iter().enumerate() {
            if r > 0.0 {
                let c = 1.0 + hyper.alpha * r;
                scaled.push((d, c - 1.0));
                for (b, &yv) in rhs.iter_mut().zip(model.item_row(d)) {
                    *b += c * yv;
                }
            }
        }
        let mut dense = gram.clone();
        for &(d, s) in &scaled {
            let y = model.item_row(d);
            for i in 0..f {
                for j in 0..f {
                    dense[i * f + j] += s * y[i] * y[j];
                }
            }
        }
        let direct = als::solve_row_direct(&dense, &rhs, hyper.lambda_reg).expect("direct");
        let items = ScaledItems {
            item_factors: &model.item_factors,
            factors: f,
            observed: &scaled,
        };
        let cg = als::solve_row_cg(&gram, &items, &rhs, hyper.lambda_reg, f);
        let num: f64 = direct
            .iter()
            .zip(&cg)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den: f64 = direct.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let rel = num / den;
        assert!(rel < 1e-6, "row {u}: CG deviates from direct by {rel}");
        worst_rel = worst_rel.max(rel);
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 30, "runtime {elapsed:?} exceeds 30 s");
    println!(
        "acceptance criterion 2: PASS — objective non-increasing over 10 sweeps \
         ({:.3} -> {:.3}); CG(f steps) vs direct worst row rel diff {worst_rel:.2e} \
         (runtime {elapsed:.2?})",
        model.objective_trace[0],
        model.objective_trace[9],
    );
}

#[test]
fn criterion_3_hybrid_beats_als_rmse() {
    let start = Instant::now();
    // Documented seeds for the 5 runs.
    let seeds = [11u64, 12, 13, 14, 15];
    let mut wins = 0;
    let mut detail = String::new();
    for &seed in &seeds {
        let data = default_dataset(seed);
        let (train_rows, val_rows) =
            dataset::split(data.rows.clone(), 0.75, seed).expect("split");
        let mut net = default_net(&data, Head::Regression, seed, 20);
        hybridnet::train(&mut net, &train_rows, &val_rows).expect("train");

        let stats = net.feature_stats.clone().expect("stats");
        let prepared = net.prepare_rows(&val_rows, Some(&stats)).expect("prepare");
        let pred = net.predict_rows(&prepared);
        let d = net.config.device_count;
        let targets: Vec<f64> = val_rows.iter().flat_map(|r| r.target_row.iter().copied()).collect();
        let hybrid_rmse = metrics::rmse(
            &MatrixView::new(val_rows.len(), d, &pred.data),
            &MatrixView::new(val_rows.len(), d, &targets),
        )
        .expect("rmse");

        let als_model =
            als::als_fit(&data.matrix, &AlsHyper { seed, ..Default::default() }).expect("als");
        let recon = als::reconstruct(&als_model);
        let mut base = Vec::with_capacity(targets.len());
        for row in &val_rows {
            let pos = recon.visitor_pos(&row.visitor_id).expect("val visitor in matrix");
            base.extend_from_slice(recon.row(pos));
        }
        let als_rmse = metrics::rmse(
            &MatrixView::new(val_rows.len(), d, &base),
            &MatrixView::new(val_rows.len(), d, &targets),
        )
        .expect("rmse");
        let win = hybrid_rmse < als_rmse;
        if win {
            wins += 1;
        }
        detail.push_str(&format!(
            "\n  seed {seed}: hybrid {hybrid_rmse:.6} vs ALS {als_rmse:.6} -> {}",
            if win { "hybrid wins" } else { "hybrid loses" }
        ));
    }
    let elapsed = start.elapsed();
    assert!(
        wins >= 4,
        "hybrid must beat the raw ALS reconstruction on >= 4 of 5 seeds, won {wins}:{detail}"
    );
    assert!(elapsed.as_secs() < 600, "runtime {elapsed:?} exceeds 10 min");
    println!(
        "acceptance criterion 3: PASS — hybrid regression beat ALS reconstruction on {wins}/5 \
         seeds (runtime {elapsed:.2?}){detail}"
    );
}

#[test]
fn criterion_4_classification_sanity() {
    let data = default_dataset(2);
    let (train_rows, val_rows) = dataset::split(data.rows.clone(), 0.75, 2).expect("split");
    // Default architecture; 12 epochs is enough for the popularity-skewed
    // archetype signal and keeps the suite inside its runtime budget.
    let mut net = default_net(&data, Head::Classification, 2, 12);
    hybridnet::train(&mut net, &train_rows, &val_rows).expect("train");

    let stats = net.feature_stats.clone().expect("stats");
    let prepared = net.prepare_rows(&val_rows, Some(&stats)).expect("prepare");
    let (kept, targets, _) = hybridnet::make_targets(&prepared, Head::Classification);
    let eval_rows: Vec<PreparedRow> = kept
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
    let pv = MatrixView::new(eval_rows.len(), d, &pred.data);
    let tv = MatrixView::new(eval_rows.len(), d, &target_data);
    let accuracy = metrics::accuracy(&pv, &tv).expect("accuracy");
    let top5 = metrics::topk_accuracy(&pv, &tv, 5.min(d)).expect("top5");
    let baseline = 1.0 / d as f64;
    assert!(
        accuracy > 3.0 * baseline,
        "accuracy {accuracy:.4} must exceed 3x the 1/{d} baseline ({:.4})",
        3.0 * baseline
    );
    assert!(
        top5 >= accuracy,
        "top-5 accuracy {top5:.4} must be >= accuracy {accuracy:.4}"
    );
    println!(
        "acceptance criterion 4: PASS — accuracy {accuracy:.4} > 3/{d} = {:.4}; \
         top-5 {top5:.4} >= accuracy",
        3.0 * baseline
    );
}

#[test]
fn criterion_5_cold_start_totality() {
    let data = default_dataset(3);
    let (train_rows, val_rows) = dataset::split(data.rows.clone(), 0.75, 3).expect("split");
    // One epoch: totality must not depend on training quality.
    let mut net = default_net(&data, Head::Regression, 3, 1);
    hybridnet::train(&mut net, &train_rows, &val_rows).expect("train");

    let mut rng = ChaCha12Rng::seed_from_u64(99);
    let mut failures = 0;
    for case in 0..100 {
        // Randomized cold inputs: unknown visitor ids, empty or unknown-device
        // sequences, absent features.
        let visitor_id = format!("stranger-{}", rng.random::<u64>());
        let device_sequence = match case % 3 {
            0 => Vec::new(),
            1 => vec![format!("ghost-device-{}", rng.random::<u32>())],
            _ => vec![
                format!("ghost-{}", rng.random::<u32>()),
                format!("ghost-{}", rng.random::<u32>()),
            ],
        };
        let ctx = VisitorContext {
            visitor_id,
            device_sequence,
            features: None,
        };
        match hybridnet::recommend(&mut net, &ctx, 5, true) {
            Ok(recs) => {
                if recs.len() != 5 || recs.iter().any(|(_, s)| !s.is_finite()) {
                    failures += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    assert_eq!(failures, 0, "{failures} of 100 cold queries failed");
    println!(
        "acceptance criterion 5: PASS — 100/100 randomized cold queries returned 5 finite-scored \
         devices"
    );
}

/// Independent brute force in a second enumeration order (ascending bitmask
/// integers) for validating the exact solver.
fn exact_by_bitmask(index: &coverage::NeighborhoodIndex, k: usize) -> usize {
    let d = index.devices();
    let mut best = 0usize;
    for mask in 0u32..(1 << d) {
        if mask.count_ones() as usize > k {
            continue;
        }
        let sel: Vec<usize> = (0..d).filter(|&i| mask & (1 << i) != 0).collect();
        best = best.max(coverage::coverage(index, &sel).expect("coverage"));
    }
    best
}

#[test]
fn criterion_6_coverage_guarantee() {
    let start = Instant::now();
    let bound = 1.0 - 1.0 / std::f64::consts::E;
    let (d, k) = (10usize, 3usize);
    let mut min_ratio = f64::INFINITY;
    for seed in 0..1000u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(40_000 + seed);
        let rows: Vec<Vec<f64>> = (0..d)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let model = als::FactorModel {
            visitor_index: vec!["v0".into()],
            device_index: (0..d).map(|i| format!("d{i:02}")).collect(),
            user_factors: vec![0.0; 3],
            item_factors: rows.iter().flatten().copied().collect(),
            factors: 3,
            alpha: 40.0,
            lambda_reg: 0.01,
            objective_trace: vec![],
        };
        let index = coverage::build_index(&model, 0.3).expect("index");
        let greedy = coverage::greedy_pdrc(&index, k, None).expect("greedy");
        let (_, opt) = coverage::exact_pdrc(&index, k).expect("exact");
        assert_eq!(
            opt,
            exact_by_bitmask(&index, k),
            "seed {seed}: exact solver disagrees with the independent enumeration"
        );
        let ratio = if opt == 0 {
            1.0
        } else {
            greedy.coverage as f64 / opt as f64
        };
        assert!(
            ratio >= bound - 1e-9,
            "seed {seed}: greedy/opt ratio {ratio:.4} below 1-1/e"
        );
        min_ratio = min_ratio.min(ratio);
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "runtime {elapsed:?} exceeds 60 s");
    println!(
        "acceptance criterion 6: PASS — 1000/1000 instances meet the (1-1/e) bound \
         (worst ratio {min_ratio:.4}); exact solver matches the independent enumeration \
         (runtime {elapsed:.2?})"
    );
}

fn auc_pairwise_oracle(pred: &[f64], target: &[f64]) -> f64 {
    let pos: Vec<f64> = pred
        .iter()
        .zip(target)
        .filter(|(_, &t)| t == 1.0)
        .map(|(&p, _)| p)
        .collect();
    let neg: Vec<f64> = pred
        .iter()
        .zip(target)
        .filter(|(_, &t)| t == 0.0)
        .map(|(&p, _)| p)
        .collect();
    let mut score = 0.0;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                score += 1.0;
            } else if p == n {
                score += 0.5;
            }
        }
    }
    score / (pos.len() * neg.len()) as f64
}

#[test]
fn criterion_7_metric_oracles() {
    let mut rng = ChaCha12Rng::seed_from_u64(777);
    let mut worst_auc_diff: f64 = 0.0;
    for case in 0..100 {
        let rows = rng.random_range(2..10);
        let cols = rng.random_range(2..8);
        // Coarse score grid forces ties, exercising the tie handling in both
        // the trapezoid and the pairwise oracle.
        let pred: Vec<f64> = (0..rows * cols)
            .map(|_| rng.random_range(0..25) as f64 / 25.0)
            .collect();
        let target: Vec<f64> = (0..rows)
            .flat_map(|_| {
                let hot = rng.random_range(0..cols);
                (0..cols).map(move |c| if c == hot { 1.0 } else { 0.0 })
            })
            .collect();
        let pv = MatrixView::new(rows, cols, &pred);
        let tv = MatrixView::new(rows, cols, &target);
        let ours = metrics::auc(&pv, &tv).expect("auc");
        let oracle = auc_pairwise_oracle(&pred, &target);
        let diff = (ours - oracle).abs();
        assert!(diff < 1e-9, "case {case}: AUC {ours} vs oracle {oracle}");
        worst_auc_diff = worst_auc_diff.max(diff);

        // RMSE dominates MAE on every instance.
        let noise: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        let nv = MatrixView::new(rows, cols, &noise);
        assert!(metrics::rmse(&nv, &tv).unwrap() + 1e-12 >= metrics::mae(&nv, &tv).unwrap());

        // top-k accuracy is monotone in k.
        let mut prev = 0.0;
        for k in 1..=cols {
            let acc = metrics::topk_accuracy(&pv, &tv, k).expect("topk");
            assert!(acc + 1e-12 >= prev, "top-k not monotone at k={k}");
            prev = acc;
        }
    }
    println!(
        "acceptance criterion 7: PASS — AUC matches the Mann-Whitney oracle within 1e-9 on \
         100 instances (worst diff {worst_auc_diff:.2e}); RMSE >= MAE and top-k monotone \
         on all instances"
    );
}

#[test]
fn criterion_8_pipeline_invariants() {
    // Normalized scores stay in [0, 1] across a spread of generator configs.
    for (v, d, e, skew, seed) in [
        (50usize, 8usize, 700usize, 0.5f64, 1u64),
        (200, 20, 4000, 1.1, 2),
        (80, 5, 1500, 2.0, 3),
        (2000, 60, 40_000, 1.1, 4),
    ] {
        let cfg = SynthConfig {
            visitors: v,
            devices: d,
            events: e,
            popularity_skew: skew,
            seed,
            ..Default::default()
        };
        let data = dataset::synth::synth_generate(&cfg).expect("synth");
        let mut aggs = dataset::aggregate(&data.events);
        dataset::weight_scores(&mut aggs);
        dataset::normalize_scores(&mut aggs);
        for a in &aggs {
            let n = a.normalized_score.unwrap();
            assert!(
                (0.0..=1.0).contains(&n),
                "normalized score {n} out of [0,1] for config ({v},{d},{e})"
            );
        }
    }

    // Percentile reduction is monotone in the percentile.
    let data = dataset::synth::synth_generate(&SynthConfig {
        visitors: 300,
        devices: 30,
        events: 6000,
        seed: 5,
        ..Default::default()
    })
    .expect("synth");
    let aggs = dataset::aggregate(&data.events);
    let mut prev = usize::MAX;
    for p in [5.0, 25.0, 50.0, 75.0, 90.0, 99.0] {
        let out = dataset::reduce_by_percentile(&aggs, p).expect("reduce");
        assert!(
            out.devices_after <= prev,
            "raising the percentile enlarged the device set at p={p}"
        );
        prev = out.devices_after;
    }

    // Fixed-seed end-to-end runs are bit-reproducible: identical metric CSVs.
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("repro.cfg");
    std::fs::write(
        &cfg_path,
        concat!(
            "seed = 9\n",
            "synth.visitors = 100\n",
            "synth.devices = 10\n",
            "synth.events = 2000\n",
            "prep.percentile = 40\n",
            "als.factors = 6\n",
            "als.iterations = 4\n",
            "net.conv_blocks = 2\n",
            "net.conv_filters = 4,4\n",
            "net.n1_dense = 16,8\n",
            "net.lstm_units = 8\n",
            "net.n2_dense = 8\n",
            "net.n3_dense = 8,8\n",
            "net.n4_dense = 8\n",
            "net.shared_dense = 16\n",
            "net.word_dim = 8\n",
            "net.sent_dim = 8\n",
            "net.epochs = 2\n",
            "net.batch = 32\n",
        ),
    )
    .unwrap();
    let bin = env!("CARGO_BIN_EXE_hybridrec");
    let run_all = |out: &std::path::Path| {
        for sub in ["synth", "prep", "als", "train", "eval"] {
            let status = std::process::Command::new(bin)
                .args([
                    sub,
                    "--out",
                    out.to_str().unwrap(),
                    "--config",
                    cfg_path.to_str().unwrap(),
                ])
                .output()
                .expect("spawn hybridrec");
            assert!(
                status.status.success(),
                "{sub} failed: {}",
                String::from_utf8_lossy(&status.stderr)
            );
        }
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_all(&a);
    run_all(&b);
    for artifact in ["eval_report.csv", "als_metrics.csv", "train_curve.csv"] {
        let fa = std::fs::read(a.join(artifact)).unwrap();
        let fb = std::fs::read(b.join(artifact)).unwrap();
        assert_eq!(fa, fb, "{artifact} differs between identically seeded runs");
    }
    println!(
        "acceptance criterion 8: PASS — normalized scores in [0,1] on 4 generator configs; \
         percentile reduction monotone; fixed-seed end-to-end runs byte-identical"
    );
}

#[test]
fn criterion_9_scoring_constants() {
    let table = [
        (EventType::View, 0.02),
        (EventType::Cart, 0.04),
        (EventType::Order, 1.0),
    ];
    for (event, expected) in table {
        let got = dataset::event_score(event);
        assert_eq!(got, expected, "event_score({event:?})");
    }
    println!(
        "acceptance criterion 9: PASS — event scores are exactly view=0.02, cart=0.04, order=1.0"
    );
}
