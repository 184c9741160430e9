use proptest::prelude::*;
use simtune::align::{dpo_loss, dro_loss, sft_loss, PreferencePair, RewardSample};
use simtune::flow::{draw_noise, flow_targets, fm_loss, traced_row_errors, FlowBatch, NoiseDraw};
use simtune::rng::Rng;
use simtune::tensor::{Graph, LoraAdapter, MlpConfig, MlpModel, Tensor, Trainable};

fn model(seed: u64) -> MlpModel {
    MlpModel::init(
        MlpConfig {
            latent_dim: 6,
            cond_dim: 6,
            hidden: vec![16, 16],
        },
        seed,
    )
}

fn samples(n: usize, seed: u64, label: impl Fn(usize) -> u8) -> Vec<RewardSample> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|i| RewardSample {
            prompt_id: format!("p{i}"),
            x0: rng.normal_vec(6),
            cond: rng.normal_vec(6),
            o: label(i),
            tilt_deg: 0.0,
        })
        .collect()
}

/// Per-row squared velocity errors, computed without the graph.
fn row_errors(m: &MlpModel, batch: &[RewardSample], noise: &NoiseDraw) -> Vec<f64> {
    let fb = FlowBatch::new(batch.iter().map(|s| s.x0.clone()).collect(), batch.iter().map(|s| s.cond.clone()).collect()).unwrap();
    let (xt, v) = flow_targets(&fb.x0, noise).unwrap();
    let pred = m.forward_batch(None, &xt, &fb.cond, &noise.t).unwrap();
    (0..batch.len())
        .map(|i| pred.row(i).iter().zip(v.row(i)).map(|(a, b)| (a - b).powi(2)).sum())
        .collect()
}

#[test]
fn dro_on_all_stable_batch_equals_flow_matching() {
    let m = model(1);
    let batch = samples(9, 2, |_| 1);
    let fb = FlowBatch::new(batch.iter().map(|s| s.x0.clone()).collect(), batch.iter().map(|s| s.cond.clone()).collect()).unwrap();
    for seed in 0..5 {
        let dro = dro_loss(&m, None, &batch, seed).unwrap();
        let fm = fm_loss(&m, None, &fb, seed).unwrap();
        let sft = sft_loss(&m, None, &batch, seed).unwrap();
        assert!((dro - fm).abs() <= 1e-12, "{dro} {fm}");
        assert_eq!(sft, fm);
    }
}

#[test]
fn dro_matches_signed_mean_oracle() {
    let m = model(3);
    let batch = samples(10, 4, |i| (i % 3 == 0) as u8);
    let noise = draw_noise(batch.len(), 6, 17);
    let e = row_errors(&m, &batch, &noise);
    let oracle: f64 = batch.iter().zip(&e).map(|(s, e)| if s.o == 1 { *e } else { -*e }).sum::<f64>() / batch.len() as f64;
    let got = dro_loss(&m, None, &batch, 17).unwrap();
    assert!((got - oracle).abs() <= 1e-12 * oracle.abs().max(1.0), "{got} {oracle}");
}

#[test]
fn identical_sample_with_opposite_labels_cancels() {
    let m = model(5);
    let a = {
        let mut a = LoraAdapter::init(&m, 4, 8.0, 1);
        for l in &mut a.layers {
            l.b.values_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 0.01 * (i as f64).sin());
        }
        a
    };
    let s = samples(1, 6, |_| 1).remove(0);
    let x0 = Tensor::matrix(2, 6, [s.x0.clone(), s.x0.clone()].concat()).unwrap();
    let cond = Tensor::matrix(2, 6, [s.cond.clone(), s.cond.clone()].concat()).unwrap();
    let one = draw_noise(1, 6, 9);
    let noise = NoiseDraw {
        t: vec![one.t[0]; 2],
        eps: Tensor::matrix(2, 6, [one.eps.values(), one.eps.values()].concat()).unwrap(),
    };
    for trainable in [Trainable::Base, Trainable::Adapter] {
        let mut g = Graph::new();
        let vars = m.bind(&mut g, Some(&a), trainable).unwrap();
        let err = traced_row_errors(&mut g, &vars, &m, &x0, &cond, &noise).unwrap();
        let loss = g.weighted_mean(err, vec![1.0, -1.0]).unwrap();
        assert_eq!(g.value(loss).item(), 0.0);
        let grads = g.backward(loss).unwrap();
        for v in vars.trainable(trainable) {
            assert!(grads.get(v).map_or(true, |t| t.values().iter().all(|x| *x == 0.0)));
        }
    }
}

#[test]
fn dpo_against_itself_is_ln2_for_any_beta() {
    let m = model(7);
    let mut rng = Rng::new(8);
    let pairs: Vec<PreferencePair> = (0..4)
        .map(|i| PreferencePair {
            prompt_id: format!("p{i}"),
            winner: rng.normal_vec(6),
            loser: rng.normal_vec(6),
            cond: rng.normal_vec(6),
        })
        .collect();
    for beta in [1.0, 50.0, 500.0] {
        let l = dpo_loss(&m, None, &m, &pairs, beta, 2).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12, "{l}");
    }
    assert!(dpo_loss(&m, None, &m, &pairs, 0.0, 2).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn flipping_every_label_negates_dro(seed in 0u64..1000, n in 1usize..12, mask in any::<u16>()) {
        let m = model(seed);
        let batch = samples(n, seed + 1, |i| ((mask >> i) & 1) as u8);
        let flipped: Vec<RewardSample> = batch.iter().cloned().map(|mut s| { s.o = 1 - s.o; s }).collect();
        let a = dro_loss(&m, None, &batch, seed).unwrap();
        let b = dro_loss(&m, None, &flipped, seed).unwrap();
        prop_assert_eq!(a, -b);
    }

    #[test]
    fn dro_is_bounded_by_flow_matching(seed in 0u64..1000, mask in any::<u8>()) {
        let m = model(seed);
        let batch = samples(8, seed, |i| ((mask >> i) & 1) as u8);
        let fb = FlowBatch::new(batch.iter().map(|s| s.x0.clone()).collect(), batch.iter().map(|s| s.cond.clone()).collect()).unwrap();
        let dro = dro_loss(&m, None, &batch, seed).unwrap();
        let fm = fm_loss(&m, None, &fb, seed).unwrap();
        prop_assert!(dro.abs() <= fm + 1e-12);
    }
}
