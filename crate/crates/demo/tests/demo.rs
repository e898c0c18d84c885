use evplab_demo::{label_curves, objective, time_space};

#[test]
fn label_curves_cover_all_shapes() {
    let all = label_curves(None, 0, 10, Some(6), 0.95).unwrap();
    assert_eq!(all.len(), 5);
    for s in &all {
        assert_eq!(s.t, (0..=6).collect::<Vec<_>>());
        assert_eq!(s.label[0], 0.0);
        assert!((s.label[6] - 1.0).abs() < 1e-12);
    }
    let not_needed = label_curves(Some("linear"), 0, 4, None, 0.9).unwrap();
    assert_eq!(not_needed[0].label, vec![0.0, 0.225, 0.45, 0.675, 0.9]);
    assert!(label_curves(Some("cubic"), 0, 4, None, 0.9).is_err());
}

#[test]
fn time_space_traces_erv_through_corridor() {
    let ts = time_space(1, 905, "cico").unwrap();
    assert_eq!(ts.mainline.len(), ts.positions_ft.len());
    assert!(ts.mainline.iter().all(|m| m.chars().count() >= ts.t.len() - 1));
    assert!(ts.erv_ft.windows(2).all(|w| w[1] >= w[0]));
    assert!(ts.calls_s.iter().skip(1).all(|c| c.is_some()));
    assert!(time_space(1, 905, "optimal").is_err());
}

#[test]
fn objective_sweep_ends_at_default() {
    let o = objective(1, 905, 3, 10).unwrap();
    assert_eq!(o.call_s.first(), Some(&905));
    assert!(o.call_s.iter().all(|&t| t < o.t_default));
    assert_eq!(o.call_s.len(), o.crossing_s.len());
    assert!(o.crossing_s.iter().all(|&c| c > 905.0 && c.is_finite()));
    assert!(o.default_crossing_s > o.t_default as f64);
    assert!(objective(1, 905, 0, 1).is_err());
}
