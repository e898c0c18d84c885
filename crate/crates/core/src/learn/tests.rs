use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mlp::{gradient_check, mse, train_mlp, Mlp, MlpConfig};
use super::model::{Normalization, Regressor, TrainedModel, TrainingMetadata};
use super::select::{select_model, Candidate, Durations, Score};
use super::*;
use crate::control::Color;

fn random_rows(rng: &mut ChaCha8Rng, n_in: usize, n: usize) -> Vec<SparseRow> {
    (0..n)
        .map(|_| {
            let ones = (2..n_in as u16).filter(|_| rng.random_bool(0.3)).collect();
            SparseRow {
                tau_s: rng.random_range(0.0..200.0),
                distance_ft: rng.random_range(0.0..3000.0),
                ones,
            }
        })
        .collect()
}

fn model(regressor: Regressor, cost: f64) -> TrainedModel {
    TrainedModel {
        intersection_id: "I2".into(),
        regressor,
        params: SoftLabelParams {
            curve: Curve::Linear,
            cutoff: 0.95,
            no_pr_thres: 0.9,
        },
        feature_normalization: Normalization::identity(FEATURE_LEN),
        training_metadata: TrainingMetadata {
            train_cost: cost,
            ..Default::default()
        },
    }
}

fn trained_mlp() -> TrainedModel {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows = random_rows(&mut rng, FEATURE_LEN, 40);
    let y: Vec<f64> = rows.iter().map(|r| (r.tau_s / 200.0).min(1.0)).collect();
    let refs: Vec<&SparseRow> = rows.iter().collect();
    let norm = Normalization::fit(FEATURE_LEN, refs.iter().copied());
    let cfg = MlpConfig {
        hidden: vec![8, 4],
        lr: 1e-2,
        epochs: 5,
        batch: 8,
        seed: 11,
    };
    let (m, _) = train_mlp(&refs, &y, &norm, &cfg);
    let mut t = model(Regressor::from_mlp(&m), 0.0);
    t.feature_normalization = norm;
    t
}

#[test]
fn gradient_check_random_configs() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for c in 0..20 {
        let n_in = rng.random_range(4..40);
        let depth = rng.random_range(1..=2);
        let mut sizes = vec![n_in];
        for _ in 0..depth {
            sizes.push(rng.random_range(2..16));
        }
        sizes.push(1);
        let rows = random_rows(&mut rng, n_in, 6);
        let refs: Vec<&SparseRow> = rows.iter().collect();
        let y: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
        let norm = Normalization::fit(n_in, refs.iter().copied());
        let m = Mlp::new(&sizes, c);
        let err = gradient_check(&m, &norm, &refs, &y, 1e-5);
        assert!(err < 1e-4, "config {c} {sizes:?}: {err}");
    }
}

#[test]
fn gradient_check_zero_network() {
    let rows = vec![SparseRow {
        tau_s: 1.0,
        distance_ft: 2.0,
        ones: vec![3],
    }];
    let refs: Vec<&SparseRow> = rows.iter().collect();
    let mut m = Mlp::new(&[5, 3, 1], 0);
    m.params.iter_mut().for_each(|p| *p = 0.0);
    let norm = Normalization::identity(5);
    let a = gradient_check(&m, &norm, &refs, &[0.0], 1e-5);
    assert!(a < 1e-4, "{a}");
    assert_eq!(a, gradient_check(&m, &norm, &refs, &[0.0], 1e-5));
}

#[test]
fn mlp_overfits_one_sample() {
    let row = SparseRow {
        tau_s: 12.0,
        distance_ft: 800.0,
        ones: vec![5, 9, 200],
    };
    let refs = vec![&row];
    let norm = Normalization::identity(FEATURE_LEN);
    let cfg = MlpConfig {
        hidden: vec![16],
        lr: 1e-3,
        epochs: 500,
        batch: 1,
        seed: 1,
    };
    let (m, _) = train_mlp(&refs, &[0.7], &norm, &cfg);
    assert!(mse(&m, &norm, &refs, &[0.7]).sqrt() < 1e-2);
}

#[test]
fn mlp_training_is_deterministic_and_full_batch_descends() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rows = random_rows(&mut rng, 30, 64);
    let refs: Vec<&SparseRow> = rows.iter().collect();
    let y: Vec<f64> = rows.iter().map(|r| 0.002 * r.tau_s + 0.05 * r.ones.len() as f64).collect();
    let norm = Normalization::fit(30, refs.iter().copied());
    let cfg = MlpConfig {
        hidden: vec![8],
        lr: 1e-3,
        epochs: 10,
        batch: 64,
        seed: 5,
    };
    let (a, ha) = train_mlp(&refs, &y, &norm, &cfg);
    let (b, hb) = train_mlp(&refs, &y, &norm, &cfg);
    assert_eq!(a, b);
    assert_eq!(ha, hb);
    assert!(ha.windows(2).all(|w| w[1] < w[0]), "{ha:?}");
}

#[test]
fn prediction_is_clipped() {
    let row = SparseRow::default();
    let hi = model(Regressor::Constant { value: 1.7 }, 0.0);
    assert_eq!(hi.predict(&row.to_features()).unwrap(), 1.0);
    let c = model(Regressor::Constant { value: 0.3 }, 0.0);
    let mut fv = row.to_features();
    assert_eq!(c.predict(&fv).unwrap(), 0.3);
    fv.detector_hist.pop();
    assert!(c.predict(&fv).is_err());
}

#[test]
fn model_round_trip_predicts_identically() {
    let m = trained_mlp();
    let back = TrainedModel::from_json(&m.to_json()).unwrap();
    assert_eq!(back, m);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for r in random_rows(&mut rng, FEATURE_LEN, 100) {
        let fv = r.to_features();
        assert_eq!(m.predict(&fv).unwrap(), back.predict(&fv).unwrap());
    }
}

#[test]
fn truncated_and_foreign_files_fail() {
    let text = trained_mlp().to_json();
    assert!(TrainedModel::from_json(&text[..text.len() / 2]).is_err());
    let bumped = text.replacen("\"version\":1", "\"version\":9", 1);
    assert!(matches!(TrainedModel::from_json(&bumped), Err(crate::Error::ModelFile(_))));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.json");
    std::fs::write(&p, &text[..10]).unwrap();
    assert!(load_model(&p).is_err());
}

#[test]
fn corridor_round_trips_seven_models() {
    let c = CorridorPolicy {
        models: (1..8)
            .map(|k| {
                let mut m = model(Regressor::Constant { value: 0.1 * k as f64 }, 0.0);
                m.intersection_id = format!("I{}", k + 1);
                m
            })
            .collect(),
    };
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("corridor.json");
    save_corridor(&c, &p).unwrap();
    let back = load_corridor(&p).unwrap();
    assert_eq!(back.models.len(), 7);
    assert_eq!(back, c);
}

fn cand(score: f64, cost: f64) -> Candidate {
    Candidate {
        model: model(Regressor::Constant { value: 0.0 }, cost),
        t_pred: vec![],
        durations: Durations::default(),
        score: Score::Value(score),
    }
}

#[test]
fn selection_rules() {
    let no_delay = |_: &Candidate| -> crate::Result<f64> { panic!("delay not needed") };
    assert_eq!(select_model(&[cand(0.2, 1.0), cand(0.5, 1.0)], no_delay).unwrap(), 0);
    assert_eq!(select_model(&[cand(0.3, 10.0), cand(0.3, 7.0)], no_delay).unwrap(), 1);
    let mut b = cand(0.3, 7.0);
    b.t_pred = vec![1];
    let pick = select_model(&[cand(0.3, 7.0), b], |c| Ok(if c.t_pred.is_empty() { 5.0 } else { 3.0 }));
    assert_eq!(pick.unwrap(), 1);
    let mut rejected = cand(0.0, 1.0);
    rejected.score = Score::Rejected;
    assert!(select_model(&[rejected], no_delay).is_err());
}

#[test]
fn score_is_scale_free() {
    let a = model_score(10.0, 2.0, 4.0);
    let b = model_score(20.0, 4.0, 8.0);
    assert_eq!(a, b);
}

#[test]
fn sparse_rows_match_dense_layout() {
    let fv = FeatureVector {
        tau_s: 3.0,
        distance_ft: 120.0,
        detector_hist: (0..WINDOW).map(|k| (k % 7 == 0) as u8).collect(),
        signal_hist: (0..WINDOW)
            .map(|k| [Color::Red, Color::Green, Color::Yellow][k % 3])
            .collect(),
        upstream_preempt_hist: (0..WINDOW).map(|k| (k > 150) as u8).collect(),
    };
    let d = fv.to_dense();
    assert_eq!(d.len(), 802);
    for k in 0..WINDOW {
        let s: f64 = d[features::SIGNAL_OFFSET + 3 * k..features::SIGNAL_OFFSET + 3 * k + 3].iter().sum();
        assert_eq!(s, 1.0);
    }
    assert_eq!(fv.to_sparse().to_features(), fv);
}
