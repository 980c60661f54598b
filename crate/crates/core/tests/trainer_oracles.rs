use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use survmark_core::trainer::{
    pairwise_rank_loss, train_age_model, train_risk_model, AdamW, HeadKind, LossForm, ModelMeta, RiskModel, TrainConfig,
};

fn toy(n: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    // few distinct times so ties appear
    let times: Vec<f64> = (0..n).map(|_| rng.random_range(1..=12) as f64).collect();
    let events: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
    (xs, times, events)
}

fn naive_loss(risk: &[f64], times: &[f64], events: &[bool], lambda: f64) -> f64 {
    let n = risk.len();
    let (mut sum, mut pairs) = (0.0, 0usize);
    for i in 0..n {
        for j in 0..n {
            if events[i] && times[i] < times[j] {
                sum += (1.0 + (-(risk[i] - risk[j])).exp()).ln();
                pairs += 1;
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]).then(a.cmp(&b)));
    let smooth: f64 = order.windows(2).map(|w| (risk[w[1]] - risk[w[0]]).powi(2)).sum();
    sum / pairs as f64 + lambda * smooth
}

#[test]
fn rank_loss_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let n = rng.random_range(3..30);
        let risk: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let times: Vec<f64> = (0..n).map(|_| rng.random_range(1..8) as f64).collect();
        let mut events: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        events[0] = true;
        let mut times = times;
        times[0] = 0.0;
        let r = pairwise_rank_loss(&risk, &times, &events, 0.3).unwrap();
        let oracle = naive_loss(&risk, &times, &events, 0.3);
        assert!((r.loss - oracle).abs() < 1e-12, "{} vs {oracle}", r.loss);
    }
}

fn check_gradient(model: &RiskModel, xs: &[Vec<f64>], times: &[f64], events: &[bool], form: LossForm) {
    let lambda = 0.05;
    let (_, grad) = model.rank_loss_grad(xs, times, events, lambda, form).unwrap();
    let scale = grad.iter().map(|g| g.abs()).fold(0.0, f64::max);
    let h = 1e-6;
    for k in 0..model.params().len() {
        let mut up = model.params().to_vec();
        let mut dn = up.clone();
        up[k] += h;
        dn[k] -= h;
        let f = |p: Vec<f64>| {
            RiskModel::from_params(model.dim(), model.head(), p).unwrap().rank_loss_grad(xs, times, events, lambda, form).unwrap().0
        };
        let fd = (f(up) - f(dn)) / (2.0 * h);
        let denom = grad[k].abs().max(fd.abs()).max(1e-3 * scale);
        assert!((grad[k] - fd).abs() / denom < 1e-5, "param {k}: {} vs {fd}", grad[k]);
    }
}

#[test]
fn linear_head_gradient_matches_finite_differences() {
    let (xs, times, events) = toy(40, 6, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params: Vec<f64> = (0..7).map(|_| rng.random::<f64>() - 0.5).collect();
    let model = RiskModel::from_params(6, HeadKind::Linear, params).unwrap();
    check_gradient(&model, &xs, &times, &events, LossForm::Logistic);
}

#[test]
fn mlp_head_gradient_matches_finite_differences() {
    let (xs, times, events) = toy(30, 4, 2);
    let head = HeadKind::Mlp { hidden: 5 };
    let n_params = 5 * 4 + 5 + 5 + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let params: Vec<f64> = (0..n_params).map(|_| rng.random::<f64>() - 0.5).collect();
    let model = RiskModel::from_params(4, head, params).unwrap();
    check_gradient(&model, &xs, &times, &events, LossForm::Logistic);
}

#[test]
fn l1_gradient_matches_finite_differences() {
    let (xs, _, _) = toy(25, 3, 3);
    let targets: Vec<f64> = (0..25).map(|i| 40.0 + i as f64).collect();
    let model = RiskModel::from_params(3, HeadKind::Linear, vec![0.5, -1.0, 2.0, 50.0]).unwrap();
    let (_, grad) = model.l1_loss_grad(&xs, &targets).unwrap();
    let h = 1e-7;
    for k in 0..4 {
        let mut up = model.params().to_vec();
        let mut dn = up.clone();
        up[k] += h;
        dn[k] -= h;
        let f = |p: Vec<f64>| RiskModel::from_params(3, HeadKind::Linear, p).unwrap().l1_loss_grad(&xs, &targets).unwrap().0;
        let fd = (f(up) - f(dn)) / (2.0 * h);
        assert!((grad[k] - fd).abs() < 1e-5 * grad[k].abs().max(1e-3), "param {k}: {} vs {fd}", grad[k]);
    }
}

#[test]
fn adamw_first_steps_follow_reference_arithmetic() {
    let cfg = TrainConfig { learning_rate: 0.1, weight_decay: 0.5, ..TrainConfig::default() };
    let mut opt = AdamW::new(1, &cfg);
    let mut p = [1.0];
    opt.step(&mut p, &[2.0]);
    // decay: 1 - 0.1*0.5*1 = 0.95; bias-corrected moments give update lr * 2/(2 + eps)
    let expected = 0.95 - 0.1 * 2.0 / (2.0 + 1e-8);
    assert!((p[0] - expected).abs() < 1e-15);
    let before = p[0];
    opt.step(&mut p, &[-1.0]);
    let decayed = before - 0.1 * 0.5 * before;
    let (g1, g2) = (2.0, -1.0);
    let m = (0.9 * 0.1 * g1 + 0.1 * g2) / (1.0 - 0.81);
    let v = (0.999 * 0.001 * 4.0 + 0.001 * 1.0) / (1.0 - 0.999f64.powi(2));
    assert!((p[0] - (decayed - 0.1 * m / (v.sqrt() + 1e-8))).abs() < 1e-14);
}

fn linear_risk_data(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..8).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    let times: Vec<f64> = xs.iter().map(|x| (-rng.random::<f64>().ln() / (0.01 * (2.0 * x[0]).exp())).ceil()).collect();
    let events: Vec<bool> = (0..n).map(|_| rng.random_bool(0.8)).collect();
    (xs, times, events)
}

#[test]
fn identical_seeds_give_bit_identical_models() {
    let (xs, times, events) = linear_risk_data(300, 1);
    let cfg = TrainConfig { epochs: 3, learning_rate: 1e-3, ..TrainConfig::default() };
    let a = train_risk_model(&xs, &times, &events, &cfg).unwrap();
    let b = train_risk_model(&xs, &times, &events, &cfg).unwrap();
    let bits = |m: &RiskModel| m.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.model), bits(&b.model));
    assert_eq!(a.trace, b.trace);
    let c = train_risk_model(&xs, &times, &events, &TrainConfig { seed: 1, ..cfg.clone() }).unwrap();
    assert_ne!(bits(&a.model), bits(&c.model));

    let meta = ModelMeta { task: "risk".into(), seed: 0, epoch: 3, config: cfg };
    let (loaded, m) = RiskModel::from_bytes(&a.model.to_bytes(&meta).unwrap()).unwrap();
    assert_eq!(loaded, a.model.quantized());
    assert_eq!(m.epoch, 3);
}

#[test]
fn training_reduces_full_batch_loss() {
    let (xs, times, events) = linear_risk_data(200, 2);
    let cfg = TrainConfig { epochs: 20, learning_rate: 1e-2, batch_size: 200, shuffle_each_epoch: false, ..TrainConfig::default() };
    let out = train_risk_model(&xs, &times, &events, &cfg).unwrap();
    let losses: Vec<f64> = out.trace.iter().map(|e| e.train_loss).collect();
    for w in losses.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{losses:?}");
    }
    assert!(out.model.weights().unwrap()[0] > 0.05);
}

#[test]
fn age_head_learns_a_linear_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let xs: Vec<Vec<f64>> = (0..400).map(|_| (0..4).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
    let ages: Vec<f64> = xs.iter().map(|x| 60.0 + 10.0 * x[0] - 5.0 * x[2]).collect();
    let cfg = TrainConfig { epochs: 300, learning_rate: 0.5, batch_size: 64, weight_decay: 0.0, ..TrainConfig::default() };
    let out = train_age_model(&xs, &ages, &cfg).unwrap();
    let last = out.trace.last().unwrap();
    assert!(last.val_mae < 2.0, "val MAE {}", last.val_mae);
    assert!(last.val_mae < out.trace[0].val_mae);
}
