use nalgebra::{DMatrix, DVector};

use ordinal_affect::data::{synth_generate, synth_trace_set, SynthConfig};
use ordinal_affect::metrics::ccc;
use ordinal_affect::model::{train, ModelConfig, Sequence, TrainConfig};
use ordinal_affect::representation::{interval_representation, Family};

fn synth_cfg() -> SynthConfig {
    SynthConfig {
        items: 20,
        groups: 10,
        windows: 19,
        seed: 21,
        ..SynthConfig::default()
    }
}

#[test]
fn features_linearly_encode_the_latent() {
    let cfg = synth_cfg();
    let items = synth_generate(&cfg).unwrap();
    let rows: usize = items.iter().map(|i| i.latent.len()).sum();
    let d = cfg.feature_dim;
    let mut x = DMatrix::zeros(rows, d + 1);
    let mut y = DVector::zeros(rows);
    let mut r = 0;
    for item in &items {
        for (n, &z) in item.latent.iter().enumerate() {
            for (c, v) in item.features.matrix.row(n).iter().enumerate() {
                x[(r, c)] = *v;
            }
            x[(r, d)] = 1.0;
            y[r] = z;
            r += 1;
        }
    }
    let coef = x.clone().svd(true, true).solve(&y, 1e-12).unwrap();
    let fitted = &x * coef;
    let c = ccc(fitted.as_slice(), y.as_slice()).unwrap();
    assert!(c > 0.95, "reconstruction CCC {c}");
}

#[test]
fn lstm_learns_interval_mu_on_affine_task() {
    let cfg = synth_cfg();
    let items = synth_generate(&cfg).unwrap();
    let seqs: Vec<Sequence> = items
        .iter()
        .map(|item| {
            let set = synth_trace_set(&cfg, item).unwrap();
            let rep = interval_representation(&set, Family::Gaussian, 1).unwrap();
            Sequence::new(item.features.matrix.clone(), rep.mu()).unwrap()
        })
        .collect();
    let (train_set, valid) = seqs.split_at(16);
    let model_cfg = ModelConfig {
        hidden_dim: 16,
        ..ModelConfig::new(cfg.feature_dim, 3)
    };
    let train_cfg = TrainConfig {
        learning_rate: 3e-3,
        max_epochs: 200,
        segment_length: 19,
        ..TrainConfig::recola()
    };
    let model = train(train_set, valid, &model_cfg, &train_cfg).unwrap();
    let mut pred = Vec::new();
    let mut target = Vec::new();
    for s in valid {
        pred.extend(model.predict(&s.features).unwrap());
        target.extend_from_slice(&s.target);
    }
    let c = ccc(&pred, &target).unwrap();
    assert!(c > 0.9, "validation CCC {c}");

    // Best-checkpoint selection: the running best never increases and the
    // kept loss is the minimum seen.
    let mut best = f64::INFINITY;
    for h in &model.history {
        best = best.min(h.validation_loss);
    }
    assert!(model.best_validation_loss <= best);
    if model.best_epoch > 0 {
        assert_eq!(model.history[model.best_epoch - 1].validation_loss, model.best_validation_loss);
    }
    assert_eq!(model.history.len(), 200);

    let again = train(train_set, valid, &model_cfg, &train_cfg).unwrap();
    assert_eq!(again.network.weights(), model.network.weights());
    assert_eq!(again.best_epoch, model.best_epoch);
}
