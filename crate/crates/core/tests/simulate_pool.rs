use oddshts::simulate::{sample_hierarchy_spec, simulate_dataset, simulate_selected, SimConfig};

#[test]
fn full_pool_shape_and_values() {
    let sim = SimConfig::default();
    let frame = simulate_dataset(&sim, 12).unwrap();
    assert_eq!(frame.n_series(), 1000);
    assert_eq!(frame.len(), 1000);
    for (id, col) in frame.iter() {
        assert!(col.iter().all(|&v| v >= 0.0 && v.fract() == 0.0), "{id}");
    }
    let again = simulate_dataset(&sim, 12).unwrap();
    assert_eq!(frame, again);

    // a sampled hierarchy draws its columns unchanged from the pool
    let spec = sample_hierarchy_spec(sim.n_vars, 3).unwrap();
    let picked = simulate_selected(&sim, 12, &spec.selected_indices().unwrap()).unwrap();
    let ids: Vec<&str> = spec.selected_ids.iter().map(String::as_str).collect();
    assert_eq!(picked, frame.select(ids).unwrap());
}

#[test]
fn hierarchy_sizes_follow_the_sampling_rule() {
    let mut total = 0usize;
    for seed in 0..400 {
        let spec = sample_hierarchy_spec(1000, seed).unwrap();
        assert_eq!(spec.mid_child_counts.len(), 6);
        assert!(spec.mid_child_counts.iter().all(|&j| (1..=9).contains(&j)));
        let mut ids = spec.selected_ids.clone();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), spec.n_selected());
        total += spec.n_selected();
    }
    // E[N] = 6 · 5 = 30; sd of the mean over 400 draws ≈ 0.28
    let mean = total as f64 / 400.0;
    assert!((mean - 30.0).abs() < 1.2, "{mean}");
}
