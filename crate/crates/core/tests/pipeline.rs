use sfm_core::eval::{ate, pair_errors, rra_rta, RtaMode, Trajectory};
use sfm_core::geometry::PointMap;
use sfm_core::pipeline::*;
use sfm_core::retrieval::FeatureMap;
use sfm_core::synth::{generate_scene, simulate_view, NoiseConfig, SceneKind};
use sfm_core::Error;

fn tokens(n: usize, seed: u64) -> Vec<FeatureMap> {
    let scene = generate_scene(SceneKind::Boxes, n, seed).unwrap();
    (0..n).map(|k| simulate_view(&scene, k, &NoiseConfig::default()).unwrap().tokens).collect()
}

#[test]
fn pair_selection_modes() {
    let t = tokens(8, 1);
    let mut cfg = PipelineConfig::default();
    cfg.graph.keyframes = 3;
    cfg.graph.neighbors = 2;
    let (retrieval, s) = select_pairs(&t, &cfg).unwrap();
    assert!(s.is_some() && retrieval.is_connected());
    let budget = retrieval.edges.len();
    cfg.graph_mode = GraphMode::Complete;
    assert_eq!(select_pairs(&t, &cfg).unwrap().0.edges.len(), 28);
    cfg.graph_mode = GraphMode::Random;
    assert_eq!(select_pairs(&t, &cfg).unwrap().0.edges.len(), budget);
    cfg.graph_mode = GraphMode::LocalWindow;
    let window = select_pairs(&t, &cfg).unwrap().0;
    assert!(window.is_connected() && window.edges.contains(&(0, 1)));
    let (single, none) = select_pairs(&t[..1], &cfg).unwrap();
    assert!(single.edges.is_empty() && none.is_none());
    assert!(matches!(select_pairs(&[], &cfg), Err(Error::BadCount { .. })));
    for m in [GraphMode::Retrieval, GraphMode::Complete, GraphMode::LocalWindow, GraphMode::Random] {
        assert_eq!(GraphMode::parse(m.name()), Some(m));
    }
}

#[test]
fn missing_prediction_is_reported() {
    let scene = generate_scene(SceneKind::Boxes, 3, 0).unwrap();
    let cfg = PipelineConfig { graph_mode: GraphMode::Complete, ..Default::default() };
    let mut input = prepare_synthetic(&scene, &NoiseConfig::default(), &cfg).unwrap();
    input.predictions.pop();
    let mono: Vec<Option<&PointMap>> = vec![None; 3];
    let err = solve(&input.graph, None, &input.predictions, &mono, &cfg).unwrap_err();
    assert!(matches!(err, Error::MissingPrediction(..)));
}

#[test]
fn rescaling_one_pair_is_absorbed() {
    let scene = generate_scene(SceneKind::Boxes, 5, 4).unwrap();
    let noise = NoiseConfig { depth_noise: 0.01, ..Default::default() };
    let mut cfg = PipelineConfig { graph_mode: GraphMode::Complete, ..Default::default() };
    cfg.optim.refine_iters = 0;
    let input = prepare_synthetic(&scene, &noise, &cfg).unwrap();
    let mono: Vec<Option<&PointMap>> = vec![None; 5];
    let base = solve(&input.graph, None, &input.predictions, &mono, &cfg).unwrap();
    let mut scaled = input.predictions.clone();
    // a pair whose own maps are not the first estimate of either view
    let p = scaled.iter_mut().find(|p| p.edge == (2, 4)).unwrap();
    for m in [&mut p.view_a, &mut p.view_b_in_a, &mut p.view_b, &mut p.view_a_in_b] {
        m.points.iter_mut().for_each(|x| *x *= 1.7);
    }
    let other = solve(&input.graph, None, &scaled, &mono, &cfg).unwrap();
    let (a, b) = (base.state.trajectory(), other.state.trajectory());
    assert!(ate(&a, &b).unwrap() < 1e-6, "{}", ate(&a, &b).unwrap());
    for e in pair_errors(&a, &b, RtaMode::Translation) {
        let (r, t) = e.unwrap();
        assert!(r < 1e-4 && t < 1e-4);
    }
}

#[test]
fn zero_noise_recovers_ground_truth() {
    for kind in [SceneKind::Boxes, SceneKind::Blobs] {
        let scene = generate_scene(kind, 5, 2).unwrap();
        let (sol, _) = run_synthetic(&scene, &NoiseConfig::default(), &PipelineConfig::default()).unwrap();
        let est = sol.state.trajectory();
        let gt = Trajectory::from_poses(&scene.gt_poses());
        assert_eq!(rra_rta(&est, &gt, 1.0), (100.0, 100.0), "{kind:?}");
        assert!(ate(&est, &gt).unwrap() < 1e-4);
    }
}

#[test]
fn invalid_configuration_is_rejected() {
    let cfg = PipelineConfig { anchor_spacing: 0, ..Default::default() };
    assert!(cfg.validate().is_err());
    let scene = generate_scene(SceneKind::Boxes, 2, 0).unwrap();
    assert!(run_synthetic(&scene, &NoiseConfig::default(), &cfg).is_err());
}
