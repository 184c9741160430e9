use simtune::align::{dpo_loss, dro_loss, sft_loss, traced_dpo_loss, traced_dro_loss, traced_sft_loss, PreferencePair, RewardSample};
use simtune::rng::Rng;
use simtune::tensor::{Graph, LoraAdapter, MlpConfig, MlpModel, Trainable};

const H: f64 = 1e-5;
const MAX_REL: f64 = 1e-4;

fn model() -> MlpModel {
    MlpModel::init(
        MlpConfig {
            latent_dim: 6,
            cond_dim: 6,
            hidden: vec![12, 12],
        },
        11,
    )
}

fn samples(n: usize, seed: u64) -> Vec<RewardSample> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|i| RewardSample {
            prompt_id: format!("p{}", i % 2),
            x0: rng.normal_vec(6),
            cond: rng.normal_vec(6),
            o: (i % 3 != 0) as u8,
            tilt_deg: 0.0,
        })
        .collect()
}

fn pairs(n: usize, seed: u64) -> Vec<PreferencePair> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|i| PreferencePair {
            prompt_id: format!("p{i}"),
            winner: rng.normal_vec(6),
            loser: rng.normal_vec(6),
            cond: rng.normal_vec(6),
        })
        .collect()
}

fn adapter(m: &MlpModel) -> LoraAdapter {
    let mut a = LoraAdapter::init(m, 3, 6.0, 5);
    let mut rng = Rng::new(99);
    for l in &mut a.layers {
        for v in l.b.values_mut() {
            *v = rng.uniform_range(-0.3, 0.3);
        }
    }
    a
}

fn rel_err(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-6)
}

/// Central differences over every coordinate of `params`, compared with `grads`.
fn check<P>(params: &mut P, n_tensors: usize, grads: &[Vec<f64>], mut coords: impl FnMut(&mut P, usize) -> &mut [f64], mut f: impl FnMut(&P) -> f64) -> f64 {
    let mut worst = 0.0f64;
    for ti in 0..n_tensors {
        let len = coords(params, ti).len();
        for k in 0..len {
            let orig = coords(params, ti)[k];
            coords(params, ti)[k] = orig + H;
            let up = f(params);
            coords(params, ti)[k] = orig - H;
            let down = f(params);
            coords(params, ti)[k] = orig;
            let fd = (up - down) / (2.0 * H);
            worst = worst.max(rel_err(grads[ti][k], fd));
        }
    }
    worst
}

#[test]
fn dro_and_sft_base_gradients_match_finite_differences() {
    let batch = samples(5, 1);
    let refs: Vec<&RewardSample> = batch.iter().collect();
    for sft in [false, true] {
        let mut m = model();
        let mut g = Graph::new();
        let vars = m.bind(&mut g, None, Trainable::Base).unwrap();
        let loss = if sft {
            traced_sft_loss(&mut g, &vars, &m, &refs, 3).unwrap()
        } else {
            traced_dro_loss(&mut g, &vars, &m, &refs, 3).unwrap()
        };
        let mut grads = g.backward(loss).unwrap();
        let ad: Vec<Vec<f64>> = vars
            .trainable(Trainable::Base)
            .into_iter()
            .map(|v| grads.take(v).unwrap().into_values())
            .collect();
        let n = ad.len();
        let worst = check(
            &mut m,
            n,
            &ad,
            |m, i| m.parameters_mut().into_iter().nth(i).unwrap().values_mut(),
            |m| {
                if sft {
                    sft_loss(m, None, &batch, 3).unwrap()
                } else {
                    dro_loss(m, None, &batch, 3).unwrap()
                }
            },
        );
        assert!(worst < MAX_REL, "sft={sft} worst relative error {worst:e}");
    }
}

#[test]
fn lora_gradients_match_finite_differences_for_dro_and_dpo() {
    let m = model();
    let reference = m.clone();
    let batch = samples(4, 2);
    let refs: Vec<&RewardSample> = batch.iter().collect();
    let pp = pairs(3, 4);
    let prefs: Vec<&PreferencePair> = pp.iter().collect();
    for dpo in [false, true] {
        let mut a = adapter(&m);
        let mut g = Graph::new();
        let vars = m.bind(&mut g, Some(&a), Trainable::Adapter).unwrap();
        let loss = if dpo {
            traced_dpo_loss(&mut g, &vars, &m, &reference, &prefs, 2.0, 8).unwrap()
        } else {
            traced_dro_loss(&mut g, &vars, &m, &refs, 8).unwrap()
        };
        let mut grads = g.backward(loss).unwrap();
        let ad: Vec<Vec<f64>> = vars
            .trainable(Trainable::Adapter)
            .into_iter()
            .map(|v| grads.take(v).unwrap().into_values())
            .collect();
        let n = ad.len();
        assert_eq!(n, 2 * m.layers.len());
        let worst = check(
            &mut a,
            n,
            &ad,
            |a, i| a.parameters_mut().into_iter().nth(i).unwrap().values_mut(),
            |a| {
                if dpo {
                    dpo_loss(&m, Some(a), &reference, &pp, 2.0, 8).unwrap()
                } else {
                    dro_loss(&m, Some(a), &batch, 8).unwrap()
                }
            },
        );
        assert!(worst < MAX_REL, "dpo={dpo} worst relative error {worst:e}");
    }
}

#[test]
fn zero_initialized_adapter_leaves_outputs_unchanged() {
    let m = model();
    let a = LoraAdapter::init(&m, 8, 16.0, 3);
    let batch = samples(6, 7);
    assert_eq!(dro_loss(&m, None, &batch, 1).unwrap(), dro_loss(&m, Some(&a), &batch, 1).unwrap());
    let mut rng = Rng::new(1);
    let x = simtune::tensor::Tensor::matrix(3, 6, rng.normal_vec(18)).unwrap();
    let c = simtune::tensor::Tensor::matrix(3, 6, rng.normal_vec(18)).unwrap();
    let t = [0.1, 0.5, 0.9];
    assert_eq!(m.forward_batch(None, &x, &c, &t).unwrap(), m.forward_batch(Some(&a), &x, &c, &t).unwrap());
}

#[test]
fn zero_initialized_adapter_gets_gradient_only_in_b() {
    let m = model();
    let a = LoraAdapter::init(&m, 4, 8.0, 3);
    let batch = samples(4, 9);
    let refs: Vec<&RewardSample> = batch.iter().collect();
    let mut g = Graph::new();
    let vars = m.bind(&mut g, Some(&a), Trainable::Adapter).unwrap();
    let loss = traced_dro_loss(&mut g, &vars, &m, &refs, 2).unwrap();
    let grads = g.backward(loss).unwrap();
    for (la, lb) in vars.lora.as_ref().unwrap() {
        assert!(grads.get(*la).map_or(true, |t| t.values().iter().all(|v| *v == 0.0)));
        assert!(grads.get(*lb).unwrap().values().iter().any(|v| *v != 0.0));
    }
}
