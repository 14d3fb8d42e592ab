use echo_vrp::mdp::{Action, FleetState};
use echo_vrp::model::*;
use echo_vrp::numerics::{NormMode, Tape, Tensor};
use echo_vrp::problem::{distance_matrix, generate_instance, Customer, Distribution, GenConfig, Instance, Vehicle};
use echo_vrp::Error;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(d: usize) -> ModelConfig {
    ModelConfig::with_dims(d, 2, EdgeFeatures::KnnSorted { k: 3 })
}

fn instance(m: usize, n: usize, seed: u64) -> Instance {
    generate_instance(&GenConfig::new(n, m, seed)).unwrap()
}

#[test]
fn init_shapes_and_determinism() {
    let cfg = small_config(8);
    let p = ParameterSet::<f32>::init(&cfg, 3).unwrap();
    assert_eq!(p.get("node.w_no").unwrap().shape(), &[3, 8]);
    assert_eq!(p.get("node.layer0.ff.w1").unwrap().shape(), &[8, 32]);
    assert_eq!(p.get("node.gate.w_g").unwrap().shape(), &[16, 1]);
    assert!(p.get("node.depot_token").unwrap().data().iter().all(|v| *v == 0.0));
    assert!(p.get("node.layer1.bn2.gamma").unwrap().data().iter().all(|v| *v == 1.0));
    assert!(p.is_finite());
    assert_eq!(p, ParameterSet::<f32>::init(&cfg, 3).unwrap());
    assert_ne!(p, ParameterSet::<f32>::init(&cfg, 4).unwrap());
}

#[test]
fn init_rejects_bad_width() {
    let mut cfg = small_config(8);
    cfg.embed_dim = 12;
    assert!(matches!(ParameterSet::<f32>::init(&cfg, 0), Err(Error::Config(_))));
}

#[test]
fn init_moments_and_bounds() {
    let cfg = ModelConfig::with_dims(64, 2, EdgeFeatures::KnnSorted { k: 3 });
    let p = ParameterSet::<f64>::init(&cfg, 11).unwrap();
    let layout = Layout::for_config(&cfg);
    let mut samples = Vec::new();
    for ((name, shape, init), t) in layout.params.iter().zip(p.tensors()) {
        if *init != Init::FanIn {
            continue;
        }
        let bound = 1.0 / (shape[0] as f64).sqrt();
        assert!(t.data().iter().all(|v| v.abs() < bound), "{name}");
        samples.extend_from_slice(t.data());
    }
    samples.truncate(100_000);
    assert_eq!(samples.len(), 100_000);
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(mean.abs() < 3.0 * sd / n.sqrt(), "mean {mean}, sd {sd}");
}

#[test]
fn pfca_adds_no_parameters() {
    let mut cfg = small_config(16);
    let on = ParameterSet::<f32>::init(&cfg, 1).unwrap().count();
    cfg.pfca = false;
    let off = ParameterSet::<f32>::init(&cfg, 1).unwrap().count();
    assert_eq!(on, off);
}

fn line_instance() -> Instance {
    Instance::new(
        "line",
        Distribution::Uniform,
        [0.1, 0.5],
        vec![
            Customer { x: 0.3, y: 0.5, demand: 1 },
            Customer { x: 0.5, y: 0.5, demand: 1 },
        ],
        vec![Vehicle { capacity: 5, speed: 1.0 }],
    )
    .unwrap()
}

#[test]
fn knn_line_geometry() {
    let inst = line_instance();
    let e = edge_features::<f64>(&distance_matrix(&inst), EdgeFeatures::KnnSorted { k: 2 }).unwrap();
    let s = 0.2;
    let mid = &e.data()[2..4];
    assert!((mid[0] - s).abs() < 1e-12 && (mid[1] - s).abs() < 1e-12, "{mid:?}");
    assert!((e.data()[0] - s).abs() < 1e-12 && (e.data()[1] - 2.0 * s).abs() < 1e-12);
    assert!(matches!(
        edge_features::<f64>(&distance_matrix(&inst), EdgeFeatures::KnnSorted { k: 3 }),
        Err(Error::Config(_))
    ));
}

#[test]
fn knn_matches_sort_oracle() {
    for seed in 0..20 {
        let inst = instance(3, 12, seed);
        let dist = distance_matrix(&inst);
        let k = 5;
        let e = edge_features::<f64>(&dist, EdgeFeatures::KnnSorted { k }).unwrap();
        for j in 0..inst.n_nodes() {
            let row = &e.data()[j * k..(j + 1) * k];
            assert!(row.windows(2).all(|w| w[0] <= w[1]));
            let mut oracle: Vec<f64> = (0..inst.n_nodes())
                .filter(|o| *o != j)
                .map(|o| {
                    let (a, b) = (inst.coords(j), inst.coords(o));
                    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
                })
                .collect();
            oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (x, y) in row.iter().zip(&oracle[..k]) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn full_row_keeps_self_zero() {
    let inst = instance(2, 4, 1);
    let dist = distance_matrix(&inst);
    let e = edge_features::<f64>(&dist, EdgeFeatures::FullRow { nodes: 5 }).unwrap();
    assert_eq!(e.shape(), &[5, 5]);
    for j in 0..5 {
        assert_eq!(e.data()[j * 5 + j], 0.0);
        assert_eq!(&e.data()[j * 5..j * 5 + 5], dist.row(j));
    }
    assert!(edge_features::<f64>(&dist, EdgeFeatures::FullRow { nodes: 6 }).is_err());
}

#[test]
fn dual_modality_off_returns_block_output() {
    let mut cfg = small_config(16);
    cfg.dual_modality = false;
    let p = ParameterSet::<f64>::init(&cfg, 2).unwrap();
    let inst = instance(2, 6, 4);
    let mut tape = Tape::new();
    let policy = Policy::bind(&mut tape, &cfg, &p, false, NormMode::Train).unwrap();
    let enc = policy.encode_nodes(&mut tape, &[&inst]).unwrap();
    assert_eq!(enc.nodes, enc.blocks);
    assert!(enc.gate.is_none());
    assert!(p.get("node.w_ed").is_none());
}

#[test]
fn zero_edge_projection_leaves_blocks_untouched() {
    let cfg = small_config(16);
    let mut p = ParameterSet::<f64>::init(&cfg, 2).unwrap();
    p.get_mut("node.w_ed").unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
    let inst = instance(2, 6, 4);
    let mut tape = Tape::new();
    let policy = Policy::bind(&mut tape, &cfg, &p, false, NormMode::Train).unwrap();
    let enc = policy.encode_nodes(&mut tape, &[&inst]).unwrap();
    assert_eq!(tape.value(enc.nodes).data(), tape.value(enc.blocks).data());
    let gate = tape.value(enc.gate.unwrap());
    assert_eq!(gate.shape(), &[1, 7, 1]);
}

fn encode_f32(cfg: &ModelConfig, p: &ParameterSet<f32>, inst: &Instance) -> Tensor<f32> {
    let mut tape = Tape::new();
    let policy = Policy::bind(&mut tape, cfg, p, false, NormMode::Inference).unwrap();
    let enc = policy.encode_nodes(&mut tape, &[inst]).unwrap();
    tape.value(enc.nodes).clone()
}

#[test]
fn node_encoder_customer_equivariance() {
    let cfg = ModelConfig::with_dims(32, 2, EdgeFeatures::KnnSorted { k: 4 });
    let p = ParameterSet::<f32>::init(&cfg, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..10 {
        let inst = instance(3, 8, trial);
        let mut order: Vec<usize> = (0..8).collect();
        order.shuffle(&mut rng);
        let perm = inst.permute_customers(&order).unwrap();
        let a = encode_f32(&cfg, &p, &inst);
        let b = encode_f32(&cfg, &p, &perm);
        let d = 32;
        let row = |t: &Tensor<f32>, r: usize| t.data()[r * d..(r + 1) * d].to_vec();
        let mut worst = 0.0f32;
        for (new, old) in std::iter::once((0, 0)).chain(order.iter().enumerate().map(|(k, o)| (k + 1, o + 1))) {
            for (x, y) in row(&b, new).iter().zip(row(&a, old)) {
                worst = worst.max((x - y).abs());
            }
        }
        assert!(worst < 1e-6, "trial {trial}: {worst}");
    }
}

fn vehicle_embeddings(cfg: &ModelConfig, p: &ParameterSet<f32>, state: &FleetState<'_>) -> Tensor<f32> {
    let mut tape = Tape::new();
    let policy = Policy::bind(&mut tape, cfg, p, false, NormMode::Inference).unwrap();
    let enc = policy.encode_nodes(&mut tape, &[state.instance()]).unwrap();
    let ctx = policy.node_context(&mut tape, enc.nodes).unwrap();
    let m = policy.encode_vehicles(&mut tape, enc.nodes, ctx, &[state]).unwrap();
    tape.value(m).clone()
}

#[test]
fn identical_vehicles_get_identical_rows() {
    let cfg = small_config(16);
    let p = ParameterSet::<f32>::init(&cfg, 5).unwrap();
    let mut inst = instance(3, 6, 2);
    inst.vehicles[2] = inst.vehicles[0];
    let dist = distance_matrix(&inst);
    let state = FleetState::new(&inst, &dist);
    let m = vehicle_embeddings(&cfg, &p, &state);
    assert_eq!(&m.data()[0..16], &m.data()[32..48]);
}

#[test]
fn vehicle_encoder_sees_only_depot_when_all_served() {
    let cfg = small_config(16);
    let p = ParameterSet::<f64>::init(&cfg, 5).unwrap();
    let inst = instance(2, 4, 6);
    let dist = distance_matrix(&inst);
    let mut state = FleetState::new(&inst, &dist);
    for j in 1..=4 {
        if !state.is_feasible(0, j) {
            state.step(Action::new(0, 0)).unwrap();
        }
        state.step(Action::new(0, j)).unwrap();
    }
    assert_eq!(node_key_mask(&state), vec![true, false, false, false, false]);

    let mut tape = Tape::new();
    let policy = Policy::bind(&mut tape, &cfg, &p, false, NormMode::Inference).unwrap();
    let enc = policy.encode_nodes(&mut tape, &[&inst]).unwrap();
    let ctx = policy.node_context(&mut tape, enc.nodes).unwrap();
    let m = policy.encode_vehicles(&mut tape, enc.nodes, ctx, &[&state]).unwrap();
    assert!(tape.value(m).is_finite());

    // With one visible key every query receives the depot value row.
    let depot_v = tape.value(ctx.values).data()[..16].to_vec();
    let q = tape.constant(Tensor::from_fn(&[1, 2, 16], |i| (i as f64 * 0.37).sin()));
    let a = tape
        .attention(q, ctx.keys, ctx.values, 8, 0.5, Some(&node_key_mask(&state)))
        .unwrap();
    for i in 0..2 {
        assert_eq!(&tape.value(a).data()[i * 16..(i + 1) * 16], depot_v.as_slice());
    }
}

#[test]
fn vehicle_permutation_equivariance() {
    let cfg = ModelConfig::with_dims(32, 2, EdgeFeatures::KnnSorted { k: 4 });
    let p = ParameterSet::<f32>::init(&cfg, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..10 {
        let inst = instance(4, 8, 100 + trial);
        let dist = distance_matrix(&inst);
        let mut state = FleetState::new(&inst, &dist);
        for _ in 0..rng.gen_range(0..6) {
            let mask = state.action_mask().unwrap();
            let open: Vec<usize> = (0..mask.as_slice().len()).filter(|i| mask.as_slice()[*i]).collect();
            state.step(mask.action_at(*open.choose(&mut rng).unwrap())).unwrap();
            if state.is_terminal() {
                break;
            }
        }
        let mut order: Vec<usize> = (0..4).collect();
        order.shuffle(&mut rng);
        let pinst = inst.permute_vehicles(&order).unwrap();
        let pdist = distance_matrix(&pinst);
        let mut pstate = FleetState::new(&pinst, &pdist);
        pstate.used_capacity = order.iter().map(|o| state.used_capacity[*o]).collect();
        pstate.clock = order.iter().map(|o| state.clock[*o]).collect();
        pstate.location = order.iter().map(|o| state.location[*o]).collect();
        pstate.remaining_demand = state.remaining_demand.clone();
        let a = vehicle_embeddings(&cfg, &p, &state);
        let b = vehicle_embeddings(&cfg, &p, &pstate);
        for (new, old) in order.iter().enumerate() {
            for c in 0..32 {
                let diff = (b.data()[new * 32 + c] - a.data()[old * 32 + c]).abs();
                assert!(diff < 1e-6, "trial {trial}: {diff}");
            }
        }
    }
}

#[test]
fn pfca_first_step_and_closed_form() {
    let mut tape = Tape::<f64>::new();
    let n = tape.constant(Tensor::from_f64(&[1, 2, 1], &[1.0, 2.0]).unwrap());
    assert_eq!(pfca_update(&mut tape, None, n).unwrap(), n);
    let ms = tape.constant(Tensor::from_f64(&[1, 1, 1], &[3.0]).unwrap());
    let out = pfca_update(&mut tape, Some(ms), n).unwrap();
    assert_eq!(tape.value(out).data(), &[4.0, 5.0]);

    let mut t32 = Tape::<f32>::new();
    let n = t32.constant(Tensor::from_f64(&[1, 2, 1], &[1.0, 2.0]).unwrap());
    let ms = t32.constant(Tensor::from_f64(&[1, 1, 1], &[3.0]).unwrap());
    let out = pfca_update(&mut t32, Some(ms), n).unwrap();
    assert_eq!(t32.value(out).data(), &[4.0, 5.0]);
}

#[test]
fn pfca_matches_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let nv: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mv: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut tape = Tape::<f64>::new();
    let n = tape.constant(Tensor::from_f64(&[1, 3, 4], &nv).unwrap());
    let ms = tape.constant(Tensor::from_f64(&[1, 1, 4], &mv).unwrap());
    let out = pfca_update(&mut tape, Some(ms), n).unwrap();
    // One key, so each row receives the whole selected embedding.
    for r in 0..3 {
        for c in 0..4 {
            let expect = mv[c] + nv[r * 4 + c];
            assert!((tape.value(out).data()[r * 4 + c] - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn pfca_off_keeps_nodes() {
    let mut cfg = small_config(16);
    cfg.pfca = false;
    let p = ParameterSet::<f64>::init(&cfg, 2).unwrap();
    let mut tape = Tape::new();
    let policy = Policy::bind(&mut tape, &cfg, &p, false, NormMode::Train).unwrap();
    let n = tape.constant(Tensor::from_fn(&[1, 3, 16], |i| i as f64));
    let ms = tape.constant(Tensor::from_fn(&[1, 1, 16], |i| i as f64));
    assert_eq!(policy.decoder_nodes(&mut tape, Some(ms), n).unwrap(), n);
}

#[test]
fn logits_recomputation_and_clip() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (m, s, d) = (3, 5, 8);
    let mv: Vec<f64> = (0..m * d).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let nv: Vec<f64> = (0..s * d).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let mut tape = Tape::<f64>::new();
    let mt = tape.constant(Tensor::from_f64(&[1, m, d], &mv).unwrap());
    let nt = tape.constant(Tensor::from_f64(&[1, s, d], &nv).unwrap());
    let beta = pair_logits(&mut tape, mt, nt, 10.0).unwrap();
    let beta = tape.value(beta).data().to_vec();
    for i in 0..m {
        for j in 0..s {
            let dot: f64 = (0..d).map(|c| mv[i * d + c] * nv[j * d + c]).sum();
            let expect = 10.0 * (dot / (d as f64).sqrt()).tanh();
            assert!((beta[i * s + j] - expect).abs() < 1e-12);
            assert!(beta[i * s + j].abs() <= 10.0);
        }
    }
    let zeros = tape.constant(Tensor::zeros(&[1, s, d]));
    let z = pair_logits(&mut tape, mt, zeros, 10.0).unwrap();
    assert!(tape.value(z).data().iter().all(|v| *v == 0.0));
}

#[test]
fn masking_and_probabilities() {
    let masked = apply_mask(&[1.0f64, 2.0, 3.0], &[false, true, false]).unwrap();
    assert_eq!(masked[0], f64::NEG_INFINITY);
    assert_eq!(action_probabilities(&masked).unwrap(), vec![0.0, 1.0, 0.0]);
    let masked = apply_mask(&[0.7f32, 0.7, 3.0], &[true, true, false]).unwrap();
    assert_eq!(action_probabilities(&masked).unwrap(), vec![0.5, 0.5, 0.0]);
    assert!(matches!(apply_mask(&[1.0f64], &[false]), Err(Error::Contract(_))));
    assert!(action_probabilities(&[f64::NEG_INFINITY; 2]).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let vals: Vec<f64> = (0..12).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let feas: Vec<bool> = (0..12).map(|i| i == 0 || rng.gen_bool(0.6)).collect();
        let p = action_probabilities(&apply_mask(&vals, &feas).unwrap()).unwrap();
        let z: f64 = vals.iter().zip(&feas).filter(|(_, f)| **f).map(|(v, _)| v.exp()).sum();
        for i in 0..12 {
            let expect = if feas[i] { vals[i].exp() / z } else { 0.0 };
            assert!((p[i] - expect).abs() < 1e-12);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn greedy_ties_take_smallest_index() {
    assert_eq!(greedy_index(&[1.0f64, 3.0, 3.0], &[true, true, true]), Some(1));
    assert_eq!(greedy_index(&[1.0f64, 3.0, 3.0], &[true, false, true]), Some(2));
    assert_eq!(greedy_index(&[1.0f64], &[false]), None);
}

fn probe_logits(cfg: &ModelConfig, p: &ParameterSet<f64>) -> Vec<f64> {
    let inst = instance(2, 5, 77);
    let dist = distance_matrix(&inst);
    let state = FleetState::new(&inst, &dist);
    let mut tape = Tape::new();
    let policy = Policy::bind(&mut tape, cfg, p, false, NormMode::Inference).unwrap();
    let enc = policy.encode_nodes(&mut tape, &[&inst]).unwrap();
    let ctx = policy.node_context(&mut tape, enc.nodes).unwrap();
    let m = policy.encode_vehicles(&mut tape, enc.nodes, ctx, &[&state]).unwrap();
    let n_hat = policy.decoder_nodes(&mut tape, None, enc.nodes).unwrap();
    let beta = policy.pair_logits(&mut tape, m, n_hat).unwrap();
    tape.value(beta).data().to_vec()
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let cfg = small_config(16);
    let p = ParameterSet::<f64>::init(&cfg, 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&p, &cfg, &path).unwrap();
    let (q, cfg2) = load_checkpoint::<f64>(&path).unwrap();
    assert_eq!(cfg, cfg2);
    assert_eq!(p, q);
    let a = probe_logits(&cfg, &p);
    let b = probe_logits(&cfg2, &q);
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    save_checkpoint(&q, &cfg2, dir.path().join("again.ckpt")).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(dir.path().join("again.ckpt")).unwrap());
}

#[test]
fn checkpoint_rejects_other_width() {
    let cfg = small_config(16);
    let p = ParameterSet::<f32>::init(&cfg, 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&p, &cfg, &path).unwrap();
    let other = small_config(24);
    assert!(matches!(load_checkpoint_for::<f32>(&path, &other), Err(Error::Shape(_))));
    assert!(load_checkpoint_for::<f32>(&path, &cfg).is_ok());
}

#[test]
fn checkpoint_truncation_and_corruption() {
    let cfg = small_config(8);
    let p = ParameterSet::<f32>::init(&cfg, 8).unwrap();
    let bytes = checkpoint_bytes(&p, &cfg).unwrap();
    let path = std::path::Path::new("probe.ckpt");
    for cut in [bytes.len() - 1, bytes.len() - 100, 20] {
        let r = checkpoint_from_bytes::<f32>(&bytes[..cut], path);
        assert!(matches!(r, Err(Error::Integrity { .. })), "cut {cut}: {r:?}");
    }
    let mut flipped = bytes.clone();
    let last = flipped.len() - 3;
    flipped[last] ^= 0x40;
    assert!(matches!(checkpoint_from_bytes::<f32>(&flipped, path), Err(Error::Integrity { .. })));
    assert!(matches!(checkpoint_from_bytes::<f32>(b"NOTACKPT0000", path), Err(Error::Format { .. })));
}
