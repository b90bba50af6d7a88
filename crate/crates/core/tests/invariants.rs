//! Property tests for the library-wide invariants.

mod common;

use std::f64::consts::TAU;

use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stopmap::baselines::{knn_classify, pca_fit, svm_train, SvmHyper};
use stopmap::dataset::{load_manifest, simulate, simulate_track, write_dataset, CageLayout, CageTraits, SimConfig};
use stopmap::eval::{metrics, run_loco_stacks, train, ConfigEcho, ConfusionMatrix, EvalReport, LabeledStack};
use stopmap::explain::{capture_activations, class_average, export_heatmap, read_heatmap_csv, HeatmapFormat};
use stopmap::featurize::{
    build_histogram_stack, compute_velocity, detect_stops, tile_index, FeaturizeConfig, HistogramStack, Normalization,
    StopEvent, TrajectorySample,
};
use stopmap::nn::ops::{conv2d, maxpool2d, maxpool2d_backward};
use stopmap::nn::{forward, softmax_cross_entropy, Arch, ModelParams, TrainConfig};
use stopmap::{Stereotype, Tensor};

use common::{conv_oracle, knn_oracle, stops_oracle};

fn tensor(shape: Vec<usize>, seed: u64, zero_fraction: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.random::<f64>() < zero_fraction { 0.0 } else { rng.random_range(-2.0..2.0) })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn stereotype() -> impl Strategy<Value = Stereotype> {
    (0..4usize).prop_map(|i| Stereotype::from_index(i).unwrap())
}

/// One step of a synthetic track: gap or regular frame, and a speed that is
/// zero, exactly at threshold, slow, or fast.
fn track_strategy() -> impl Strategy<Value = Vec<TrajectorySample>> {
    let step = (0..20u8, 0..4u8, 0.0..1.0f64, 0.0..TAU);
    prop::collection::vec(step, 1..150).prop_map(|steps| {
        let (mut t, mut x, mut y) = (0.0, 25.0, 25.0);
        let mut out = Vec::with_capacity(steps.len());
        for (gap, kind, u, angle) in steps {
            out.push(TrajectorySample::new(t, x, y));
            let dt = if gap == 0 { 0.4 + 0.4 * u } else { 1.0 / 30.0 };
            let speed = match kind {
                0 => 0.0,
                1 => 5.0,
                2 => 4.9 * u,
                _ => 5.1 + 25.0 * u,
            };
            t += dt;
            x = (x + speed * dt * angle.cos()).clamp(0.0, 50.0);
            y = (y + speed * dt * angle.sin()).clamp(0.0, 50.0);
        }
        out
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // ---- network

    #[test]
    fn softmax_gradient_sums_to_zero(logits in prop::collection::vec(-30.0..30.0f64, 4), label in 0..4usize) {
        let t = Tensor::from_vec(vec![4], logits).unwrap();
        let (loss, grad) = softmax_cross_entropy(&t, label).unwrap();
        prop_assert!(loss >= 0.0);
        prop_assert!(grad.sum().abs() <= 1e-12, "{}", grad.sum());
    }

    #[test]
    fn conv_matches_direct_summation(
        c_in in 1..4usize, c_out in 1..4usize, h in 1..9usize, w in 1..9usize,
        k in prop::sample::select(vec![1usize, 3, 5, 9]), seed: u64, sparsity in 0.0..0.95f64,
    ) {
        let input = tensor(vec![c_in, h, w], seed, sparsity);
        let weights = tensor(vec![c_out, c_in, k, k], seed ^ 1, 0.0);
        let bias = tensor(vec![c_out], seed ^ 2, 0.0);
        let got = conv2d(&input, &weights, &bias).unwrap();
        for (a, b) in got.data().iter().zip(conv_oracle(&input, &weights, &bias)) {
            prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn maxpool_bounds_and_routes_gradient(c in 1..3usize, h in 2..9usize, w in 2..9usize, seed: u64) {
        let input = tensor(vec![c, h, w], seed, 0.3);
        let pooled = maxpool2d(&input).unwrap();
        let (ph, pw) = (h / 2, w / 2);
        for ch in 0..c {
            for i in 0..ph {
                for j in 0..pw {
                    let window = [(0, 0), (0, 1), (1, 0), (1, 1)].map(|(di, dj)| input.get(&[ch, 2 * i + di, 2 * j + dj]));
                    let v = pooled.output.get(&[ch, i, j]);
                    prop_assert!(window.iter().all(|&x| x <= v));
                    prop_assert!(window.contains(&v));
                }
            }
        }
        let grad_out: Vec<f64> = tensor(vec![c * ph * pw], seed ^ 3, 0.0).into_data();
        let grad_in = maxpool2d_backward(&grad_out, &pooled.argmax, input.shape());
        let routed: f64 = grad_in.data().iter().sum();
        let incoming: f64 = grad_out.iter().sum();
        prop_assert!((routed - incoming).abs() <= 1e-12);
        for (i, g) in grad_in.data().iter().enumerate() {
            if *g != 0.0 {
                prop_assert!(pooled.argmax.contains(&i));
            }
        }
    }

    #[test]
    fn forward_is_deterministic_and_weights_round_trip(seed: u64, t in 1..4usize, n in 2..7usize) {
        let arch = Arch::new(t, n).unwrap();
        let params = ModelParams::init(arch, seed);
        let input = tensor(arch.input_shape().to_vec(), seed ^ 5, 0.5);
        let a = forward(&params, &input).unwrap();
        let b = forward(&params, &input).unwrap();
        prop_assert_eq!(a.logits.data(), b.logits.data());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        params.save(&path).unwrap();
        let back = ModelParams::load(&path).unwrap();
        for ((_, x), (_, y)) in params.tensors().iter().zip(back.tensors().iter()) {
            prop_assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    // ---- featurization

    #[test]
    fn stops_match_oracle_and_are_disjoint(track in track_strategy(), min_duration in 0.05..1.5f64) {
        let cfg = FeaturizeConfig { min_duration, ..FeaturizeConfig::default() };
        let stops = detect_stops(&track, &cfg).unwrap();
        prop_assert_eq!(&stops, &stops_oracle(&track, &cfg));
        for s in &stops {
            prop_assert!(s.t_start < s.t_end);
        }
        for pair in stops.windows(2) {
            prop_assert!(pair[0].t_end < pair[1].t_start);
        }
    }

    #[test]
    fn histogram_conserves_stops(track in track_strategy(), t_bins in 1..4usize, interval_len in 0.5..3.0f64) {
        let cfg = FeaturizeConfig { intervals_t: t_bins, interval_len, grid_n: 7, min_duration: 0.1, ..FeaturizeConfig::default() };
        let stops = detect_stops(&track, &cfg).unwrap();
        let stack = build_histogram_stack(&stops, &cfg).unwrap();
        let qualifying = stops.iter().filter(|s| s.t_start < t_bins as f64 * interval_len).count();
        prop_assert_eq!(stack.total(), qualifying as f64);
        prop_assert_eq!(stack.discarded, stops.len() - qualifying);
    }

    #[test]
    fn binning_shifts_with_translation(xs in prop::collection::vec((64..2944u32, 64..2944u32), 1..20)) {
        // Positions on a 1/64 cm lattice, tile width 2 cm: all arithmetic is exact.
        let cfg = FeaturizeConfig { grid_n: 25, intervals_t: 1, ..FeaturizeConfig::default() };
        let width = cfg.cage_w / cfg.grid_n as f64;
        let stop = |x: f64, y: f64| StopEvent { t_start: 0.0, t_end: 1.0, x, y };
        let base: Vec<StopEvent> = xs.iter().map(|&(a, b)| stop(a as f64 / 64.0, b as f64 / 64.0)).collect();
        let moved: Vec<StopEvent> = base.iter().map(|s| stop(s.x + width, s.y + width)).collect();
        let a = build_histogram_stack(&base, &cfg).unwrap();
        let b = build_histogram_stack(&moved, &cfg).unwrap();
        let n = cfg.grid_n;
        for i in 0..n - 1 {
            for j in 0..n - 1 {
                prop_assert_eq!(a.counts.get(&[0, i, j]), b.counts.get(&[0, i + 1, j + 1]));
            }
        }
        for s in &base {
            prop_assert_eq!(tile_index(s.x + width, cfg.cage_w, n), tile_index(s.x, cfg.cage_w, n) + 1);
        }
    }

    #[test]
    fn motion_at_exactly_threshold_is_a_stop(angle in 0.0..TAU, frames in 31..200usize, x0 in 5.0..10.0f64) {
        let cfg = FeaturizeConfig::default();
        let track: Vec<TrajectorySample> = (0..frames)
            .map(|i| {
                let t = i as f64 / 30.0;
                TrajectorySample::new(t, x0 + cfg.v_max * t * angle.cos() + 20.0, x0 + cfg.v_max * t * angle.sin() + 20.0)
            })
            .collect();
        let stops = detect_stops(&track, &cfg).unwrap();
        prop_assert_eq!(stops.len(), 1);
        prop_assert_eq!(stops[0].t_start, 0.0);
        prop_assert_eq!(stops[0].t_end, track[frames - 1].t);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    // ---- simulator and dataset

    #[test]
    fn simulated_speeds_separate_stops_from_travel(seed: u64, class in stereotype(), trait_p in 0.0..0.5f64) {
        let cfg = SimConfig { duration: 90.0, cage_trait: trait_p, cage_rest: 0.3, ..SimConfig::default() };
        let layout = CageLayout::default();
        let traits = CageTraits::draw(&cfg, &layout, seed ^ 9);
        let track = simulate_track(&cfg, &layout, class, &traits, seed).unwrap();
        let speeds = compute_velocity(&track.samples).unwrap();
        let v_max = FeaturizeConfig::default().v_max;
        for (i, &(t, v)) in speeds.iter().enumerate() {
            let next = track.samples[i + 1].t;
            let inside = track.stops.iter().any(|s| s.t_start <= t && next <= s.t_end);
            if inside {
                prop_assert!(v <= v_max, "stop speed {v} at {t}");
            } else {
                prop_assert!(v > v_max, "travel speed {v} at {t}");
            }
        }
    }

    #[test]
    fn manifest_round_trips(seed: u64) {
        let cfg = SimConfig { cages: 2, mice_per_cage: 1, duration: 20.0, rng_seed: seed, ..SimConfig::default() };
        let layout = CageLayout::default();
        let recs = simulate(&cfg, &layout).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(dir.path(), &recs, &layout).unwrap();
        let back = load_manifest(&manifest, &layout).unwrap();
        prop_assert_eq!(back.len(), recs.len());
        for (a, b) in recs.iter().zip(&back) {
            prop_assert_eq!(&a.recording_id, &b.recording_id);
            prop_assert_eq!(a.class(), b.class());
            prop_assert_eq!(a.samples.len(), b.samples.len());
            for (p, q) in a.samples.iter().zip(&b.samples) {
                prop_assert!((p.t - q.t).abs() <= 1e-6 && (p.x - q.x).abs() <= 1e-6 && (p.y - q.y).abs() <= 1e-6);
            }
        }
    }

    // ---- evaluation

    #[test]
    fn loco_tests_every_recording_once(cages in prop::collection::vec(0..5u8, 2..20), seed: u64) {
        prop_assume!(cages.iter().any(|&c| c != cages[0]));
        let stacks: Vec<LabeledStack> = cages
            .iter()
            .enumerate()
            .map(|(i, &c)| LabeledStack {
                recording_id: format!("r{i}"),
                cage_id: format!("cage{c}"),
                class: Stereotype::from_index(i % 4).unwrap(),
                stack: HistogramStack { t_bins: 1, n: 2, counts: tensor(vec![1, 2, 2], seed ^ i as u64, 0.5).map(f64::abs), discarded: 0 },
            })
            .collect();
        let tcfg = TrainConfig { epochs: 1, normalization: Normalization::None, rng_seed: seed, ..TrainConfig::default() };
        let run = run_loco_stacks(&stacks, &FeaturizeConfig::default(), &tcfg, 1).unwrap();
        prop_assert_eq!(run.report.aggregate.total(), stacks.len() as u64);
        let mut seen: Vec<&str> = run.report.folds.iter().flat_map(|f| f.predictions.iter().map(|p| p.recording_id.as_str())).collect();
        seen.sort_unstable();
        let mut ids: Vec<&str> = stacks.iter().map(|s| s.recording_id.as_str()).collect();
        ids.sort_unstable();
        prop_assert_eq!(seen, ids);
        for f in &run.report.folds {
            for p in &f.predictions {
                let s = stacks.iter().find(|s| s.recording_id == p.recording_id).unwrap();
                prop_assert_eq!(&s.cage_id, &f.cage_id);
            }
        }

        // Report self-consistency, also after a JSON round trip.
        let m = metrics(&run.report.aggregate);
        prop_assert_eq!((m.overall, m.male, m.female), (run.report.overall_accuracy, run.report.male_accuracy, run.report.female_accuracy));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        run.report.save(&path).unwrap();
        let back = EvalReport::load(&path).unwrap();
        prop_assert_eq!(back.metrics(), m);

        let again = run_loco_stacks(&stacks, &FeaturizeConfig::default(), &tcfg, 2).unwrap();
        prop_assert_eq!(again.report.folds, run.report.folds);
    }

    #[test]
    fn training_is_deterministic(seed: u64) {
        let data: Vec<(HistogramStack, Stereotype)> = (0..6)
            .map(|i| {
                let counts = tensor(vec![2, 4, 4], seed ^ i, 0.6).map(f64::abs);
                (HistogramStack { t_bins: 2, n: 4, counts, discarded: 0 }, Stereotype::from_index(i as usize % 4).unwrap())
            })
            .collect();
        let set: Vec<_> = data.iter().map(|(s, c)| (s, *c)).collect();
        let cfg = TrainConfig { epochs: 3, batch_size: 4, rng_seed: seed, ..TrainConfig::default() };
        let a = train(&set, &cfg).unwrap();
        let b = train(&set, &cfg).unwrap();
        prop_assert_eq!(a.loss_trace, b.loss_trace);
        prop_assert_eq!(a.params, b.params);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_ignore_sample_order(pairs in prop::collection::vec((stereotype(), stereotype()), 1..60), seed: u64) {
        let build = |ps: &[(Stereotype, Stereotype)]| {
            let mut cm = ConfusionMatrix::default();
            ps.iter().for_each(|&(t, p)| cm.record(t, p));
            cm
        };
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(metrics(&build(&pairs)), metrics(&build(&shuffled)));

        let folds = vec![stopmap::eval::FoldReport { cage_id: "c".into(), confusion: build(&pairs), predictions: Vec::new(), final_loss: None }];
        let echo = ConfigEcho { featurize: FeaturizeConfig::default(), train: TrainConfig::default() };
        let report = EvalReport::from_folds(folds, echo, 0.0);
        let m = metrics(&report.aggregate);
        prop_assert_eq!(report.overall_accuracy, m.overall);
        prop_assert_eq!(report.male_accuracy, m.male);
        prop_assert_eq!(report.female_accuracy, m.female);
    }

    // ---- baselines

    #[test]
    fn pca_matches_covariance_eigendecomposition(seed: u64, m in 4..9usize, d in 3..9usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let k = d.min(m - 1);
        let model = pca_fit(&data, k).unwrap();

        for (i, a) in model.components.iter().enumerate() {
            for (j, b) in model.components.iter().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                prop_assert!((dot - expected).abs() <= 1e-9);
            }
        }
        prop_assert!(model.eigenvalues.windows(2).all(|w| w[0] >= w[1]));

        let x = DMatrix::from_fn(m, d, |i, j| data[i][j]);
        let mean = x.row_mean();
        let centred = DMatrix::from_fn(m, d, |i, j| x[(i, j)] - mean[j]);
        let cov = centred.transpose() * &centred / (m - 1) as f64;
        let total_variance = cov.trace();
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        for (r, &i) in order.iter().take(k).enumerate() {
            // Skip near-degenerate pairs, where eigenvectors are ill-defined.
            let gap = order.iter().filter(|&&j| j != i).map(|&j| (eig.eigenvalues[i] - eig.eigenvalues[j]).abs()).fold(f64::INFINITY, f64::min);
            prop_assert!((model.eigenvalues[r] - eig.eigenvalues[i]).abs() <= 1e-8);
            if gap > 1e-3 {
                let v = eig.eigenvectors.column(i);
                let same = (0..d).map(|j| (model.components[r][j] - v[j]).abs()).fold(0.0, f64::max);
                let flipped = (0..d).map(|j| (model.components[r][j] + v[j]).abs()).fold(0.0, f64::max);
                prop_assert!(same.min(flipped) <= 1e-8, "component {r}: {same} / {flipped}");
            }
        }
        if k == m - 1 {
            let captured: f64 = model.eigenvalues.iter().sum();
            prop_assert!((captured - total_variance).abs() <= 1e-8, "{captured} vs {total_variance}");
        }
    }

    #[test]
    fn knn_matches_sort_oracle(
        train in prop::collection::vec((prop::collection::vec(0..4u8, 3), 0..4usize), 1..25),
        query in prop::collection::vec(0..4u8, 3),
        k_pick in 0.0..1.0f64,
    ) {
        let train: Vec<(Vec<f64>, usize)> = train.into_iter().map(|(x, c)| (x.into_iter().map(f64::from).collect(), c)).collect();
        let query: Vec<f64> = query.into_iter().map(f64::from).collect();
        let k = 1 + ((train.len() as f64 * k_pick) as usize).min(train.len() - 1);
        prop_assert_eq!(knn_classify(&train, &query, k).unwrap(), knn_oracle(&train, &query, k));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn svm_objective_never_increases(seed: u64, n in 8..30usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<(Vec<f64>, usize)> = (0..n)
            .map(|i| ((0..3).map(|_| rng.random_range(-1.0..1.0) + (i % 4) as f64).collect(), i % 4))
            .collect();
        let model = svm_train(&data, &SvmHyper { epochs: 100, ..SvmHyper::default() }).unwrap();
        for trace in &model.objective_trace {
            prop_assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    // ---- explainability

    #[test]
    fn activations_are_non_negative_and_inert(seed: u64, copies in prop::collection::vec(stereotype(), 1..8)) {
        let arch = Arch::new(2, 6).unwrap();
        let params = ModelParams::init(arch, seed);
        let mut sets = Vec::new();
        for (i, class) in copies.iter().enumerate() {
            let input = tensor(arch.input_shape().to_vec(), seed ^ i as u64, 0.4);
            let before = forward(&params, &input).unwrap().logits;
            let set = capture_activations(&params, &input, &format!("r{i}"), *class).unwrap();
            prop_assert!(set.branch_a.data().iter().chain(set.branch_b.data()).all(|&v| v >= 0.0));
            prop_assert_eq!(set.logits.data(), before.data());
            let after = forward(&params, &input).unwrap().logits;
            prop_assert_eq!(after.data(), before.data());
            sets.push(set);
        }
        let maps = class_average(&sets).unwrap();
        prop_assert_eq!(maps.total_count(), sets.len());
        for class in Stereotype::ALL {
            prop_assert_eq!(maps.get(class).is_some(), copies.contains(&class));
        }

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let map = sets[0].branch_a.slice_outer(0);
        export_heatmap(&map, &path, HeatmapFormat::Csv).unwrap();
        let back = read_heatmap_csv(&path).unwrap();
        prop_assert_eq!(back.shape(), map.shape());
        prop_assert!(back.data().iter().zip(map.data()).all(|(a, b)| (a - b).abs() <= 1e-9));
    }
}
