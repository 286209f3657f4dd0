use medseg_toy::gradcheck::{fixture, gradient_check, relative_error, GradCheckConfig};

#[test]
fn analytic_gradients_match_finite_differences() {
    let (model, cases) = fixture(11).unwrap();
    assert!(model.config.dim <= 16);
    let cfg = GradCheckConfig { coords: 256, seed: 11, ..Default::default() };
    let start = std::time::Instant::now();
    let report = gradient_check(&model, &cases, &cfg).unwrap();
    eprintln!("max rel error {:e} at {:?} in {:?}", report.max_rel_error, report.worst, start.elapsed());
    assert_eq!(report.checked.len(), 256);
    assert!(report.max_rel_error < 1e-3);
}

#[test]
fn relative_error_floor() {
    assert_eq!(relative_error(1.0, 1.0), 0.0);
    assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    assert!((relative_error(1e-9, 0.0) - 1e-3).abs() < 1e-15);
}

#[test]
fn frozen_parameters_get_no_update() {
    use medseg_toy::train::Optimizer;
    use medseg_toy::{Component, TrainConfig};
    let (mut model, cases) = fixture(3).unwrap();
    let (_, grads) = medseg_toy::train::batch_gradients(&model, &cases, &Default::default(), 3, 3).unwrap();
    let frozen: Vec<usize> = model.params.ids_of(Component::PromptEncoder).collect();
    assert!(frozen.iter().any(|&id| grads[id].data.iter().any(|&g| g != 0.0)));
    let before = model.params.clone();
    let cfg = TrainConfig { lr: 1e-2, ..Default::default() };
    let mut opt = Optimizer::new(&model);
    opt.step(&mut model, &grads.into_iter().map(Some).collect::<Vec<_>>(), &cfg);
    for id in 0..model.params.len() {
        let same = model.params.values[id] == before.values[id];
        assert_eq!(same, frozen.contains(&id), "{}", model.params.specs[id].name);
    }
}
