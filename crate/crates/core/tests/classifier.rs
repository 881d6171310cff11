mod common;

use common::{blobs, qp_oracle, sample};
use hlfr::classifier::{
    anchored_objective, svm_objective, train_adaptive_svm, train_svm, zero_one_loss, AsvmProblem,
    SvmModel, SvmTrainer,
};

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

#[test]
fn svm_matches_qp_oracle() {
    for seed in 0..5 {
        let data = blobs(20, seed, 0.8);
        let model = train_svm(&data, 1.0, 100_000).unwrap();
        let (_, _, oracle) = qp_oracle(&data, &[0.0, 0.0], 1.0);
        let ours = svm_objective(&model, 1.0, &data);
        assert!(rel_gap(ours, oracle) < 1e-3, "seed {seed}: {ours} vs {oracle}");
    }
}

#[test]
fn anchored_svm_matches_qp_oracle() {
    let anchor = SvmModel::new(vec![0.7, -1.3], 0.2, 1.0);
    for seed in 10..15 {
        let data = blobs(20, seed, 0.6);
        let problem = AsvmProblem {
            primary: data.clone(),
            anchor: anchor.clone(),
            c_reg: 1.0,
        };
        let model = train_adaptive_svm(&problem, 100_000).unwrap();
        let (_, _, oracle) = qp_oracle(&data, &anchor.w, 1.0);
        let ours = anchored_objective(&model.w, model.b, &anchor.w, 1.0, &data);
        assert!(rel_gap(ours, oracle) < 1e-3, "seed {seed}: {ours} vs {oracle}");
        // the anchor with its best bias is feasible, so the optimum cannot be worse
        let at_anchor = anchored_objective(&anchor.w, anchor.b, &anchor.w, 1.0, &data);
        assert!(ours <= at_anchor + 1e-9);
    }
}

#[test]
fn zero_anchor_reduces_to_plain_svm() {
    let data = blobs(20, 3, 0.7);
    let plain = train_svm(&data, 1.0, 100_000).unwrap();
    let anchored = SvmTrainer::new(1.0)
        .train_adaptive(&data, &SvmModel::new(vec![0.0, 0.0], 0.0, 1.0))
        .unwrap();
    let a = svm_objective(&plain, 1.0, &data);
    let b = svm_objective(&anchored, 1.0, &data);
    assert!(rel_gap(a, b) < 1e-3);
}

#[test]
fn zero_penalty_returns_anchor() {
    let data = blobs(20, 4, 1.0);
    let anchor = SvmModel::new(vec![0.25, -4.0], 1.5, 1.0);
    let model = SvmTrainer::new(0.0).train_adaptive(&data, &anchor).unwrap();
    assert_eq!(model.w, anchor.w);
    assert_eq!(model.b, anchor.b);
}

#[test]
fn separable_points_have_zero_hinge() {
    let data = vec![sample(1, vec![2.0, 1.0], 1), sample(2, vec![-2.0, -1.0], 0)];
    let model = train_svm(&data, 1.0, 1000).unwrap();
    assert_eq!(zero_one_loss(&model, &data).unwrap(), 0.0);
    for s in &data {
        let y = if s.y == 1 { 1.0 } else { -1.0 };
        assert!(y * model.score(&s.x) >= 1.0 - 1e-6);
    }
}

#[test]
fn inverted_model_loss_complements() {
    let data = blobs(200, 9, 0.5);
    let model = train_svm(&data, 1.0, 100_000).unwrap();
    let inverted = SvmModel::new(model.w.iter().map(|w| -w).collect(), -model.b, 1.0);
    let on_boundary = data.iter().filter(|s| model.score(&s.x) == 0.0).count() as f64 / 200.0;
    let a = zero_one_loss(&model, &data).unwrap();
    let b = zero_one_loss(&inverted, &data).unwrap();
    assert!((a + b - (1.0 - on_boundary)).abs() < 1e-12);
}

#[test]
fn model_text_record_round_trips() {
    let model = train_svm(&blobs(30, 1, 1.0), 1.0, 10_000).unwrap();
    let back: SvmModel = model.to_text().parse().unwrap();
    assert_eq!(back.w, model.w);
    assert_eq!(back.b, model.b);
}
