use occ_core::bev::EgoPose;
use occ_core::eval::EMPTY;
use occ_core::harness::{
    gen_scene, run_pipeline, BoxObstacle, DepthProvider, PipelineConfig, PipelineWeights,
    ReparamMode, SceneSpec,
};
use occ_core::view::GridSpec;
use occ_core::Error;

fn small() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.model.channels = 4;
    cfg.model.semantic_channels = 4;
    cfg.model.history = 3;
    cfg.scene.frames = 4;
    cfg.scene.boxes = 6;
    cfg
}

/// One box straight ahead of the forward camera.
fn single_box(cfg: &PipelineConfig) -> SceneSpec {
    SceneSpec {
        grid: cfg.grid,
        rig: cfg.cameras.clone(),
        obstacles: vec![BoxObstacle {
            min: [8.0, -1.0, -1.0],
            max: [10.0, 1.0, 1.5],
            class: 4,
        }],
        trajectory: vec![EgoPose::identity()],
    }
}

#[test]
fn scene_generation_is_reproducible() {
    let cfg = small();
    let a = gen_scene(&SceneSpec::random(&cfg).unwrap()).unwrap();
    let b = gen_scene(&SceneSpec::random(&cfg).unwrap()).unwrap();
    assert_eq!(a, b);
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(
        SceneSpec::random(&other).unwrap().obstacles,
        a.spec.obstacles
    );
}

#[test]
fn pipeline_is_deterministic() {
    let cfg = small();
    let scene = gen_scene(&SceneSpec::random(&cfg).unwrap()).unwrap();
    let w = PipelineWeights::<f32>::seeded(&cfg).unwrap();
    let a = run_pipeline(&cfg, &w, &scene, 0.4).unwrap();
    let b = run_pipeline(&cfg, &PipelineWeights::seeded(&cfg).unwrap(), &scene, 0.4).unwrap();
    assert_eq!(a.logits, b.logits);
    assert_eq!(a.lifted, b.lifted);
}

#[test]
fn box_ahead_reports_its_front_face() {
    let cfg = small();
    let bundle = gen_scene(&single_box(&cfg)).unwrap();
    let depth = &bundle.depth[0][0];
    for v in [7, 8] {
        for u in [21, 22] {
            assert!(
                (depth.get(&[v, u]) - 8.0).abs() < 1e-9,
                "{}",
                depth.get(&[v, u])
            );
        }
    }
    // the rear camera sees nothing
    assert!(bundle.depth[0][1].data().iter().all(|&z| z == 0.0));
    let inside = cfg.grid.voxel_of([9.0, 0.0, 0.0]).unwrap();
    assert_eq!(bundle.labels[0].labels().get(&inside), 4);
    assert_eq!(
        bundle.visible[0].tensor().get(&inside),
        0,
        "occluded interior"
    );
    let face = cfg.grid.voxel_of([8.1, 0.1, 0.3]).unwrap();
    assert_eq!(bundle.visible[0].tensor().get(&face), 1);
}

#[test]
fn ground_truth_depth_moves_mass_toward_the_box() {
    let mut cfg = small();
    cfg.depth.provider = DepthProvider::Stub;
    let scene = gen_scene(&single_box(&cfg)).unwrap();
    let w = PipelineWeights::<f64>::seeded(&cfg).unwrap();
    let gt = run_pipeline(&cfg, &w, &scene, 0.0).unwrap().lifted;
    let pred = run_pipeline(&cfg, &w, &scene, 1.0).unwrap().lifted;
    let diff = gt.sub(&pred).unwrap();
    let pool = cfg.grid.downsampled(2).unwrap();
    let [nx, ny, nz] = pool.counts;
    let mut best = (f64::MIN, [0; 3]);
    for x in 0..nx {
        for y in 0..ny {
            for z in 0..nz {
                let m: f64 = (0..cfg.model.channels)
                    .map(|c| diff.get(&[c, x, y, z]))
                    .sum();
                if m > best.0 {
                    best = (m, [x, y, z]);
                }
            }
        }
    }
    let c = pool.voxel_center(best.1);
    assert!(best.0 > 0.0);
    assert!((5.5..=10.0).contains(&c[0]) && c[1].abs() < 1.5, "{c:?}");
}

#[test]
fn empty_world_is_all_free_space() {
    let cfg = small();
    let mut spec = single_box(&cfg);
    spec.obstacles.clear();
    let b = gen_scene(&spec).unwrap();
    assert!(b.labels[0].labels().data().iter().all(|&c| c == EMPTY));
    assert!(b.depth[0]
        .iter()
        .all(|d| d.data().iter().all(|&z| z == 0.0)));
}

#[test]
fn full_scale_output_shape() {
    let mut cfg = PipelineConfig::default();
    cfg.grid = GridSpec::full_scale();
    cfg.cameras.feature_size = [4, 8];
    cfg.depth.bins = 4;
    cfg.model.channels = 2;
    cfg.model.semantic_channels = 2;
    cfg.model.history = 1;
    cfg.model.reparam_kernel = [3, 3, 1];
    cfg.scene.frames = 2;
    cfg.scene.boxes = 4;
    let scene = gen_scene(&SceneSpec::random(&cfg).unwrap()).unwrap();
    let out = run_pipeline(
        &cfg,
        &PipelineWeights::<f32>::seeded(&cfg).unwrap(),
        &scene,
        0.5,
    )
    .unwrap();
    assert_eq!(out.logits.shape(), &[18, 200, 200, 16]);
    assert_eq!(out.lifted.shape(), &[2, 100, 100, 8]);
}

#[test]
fn train_mode_matches_deploy_mode() {
    let mut cfg = small();
    let scene = gen_scene(&SceneSpec::random(&cfg).unwrap()).unwrap();
    let w = PipelineWeights::<f32>::seeded(&cfg).unwrap();
    let deploy = run_pipeline(&cfg, &w, &scene, 0.2).unwrap().logits;
    cfg.model.reparam_mode = ReparamMode::Train;
    let train = run_pipeline(&cfg, &w, &scene, 0.2).unwrap().logits;
    assert!(deploy.max_abs_diff(&train).unwrap() <= 1e-4);
}

#[test]
fn bad_configs_are_config_errors() {
    let cases = [
        "seed = 1\nbogus = 2\n",
        "[cameras]\nhfov_deg = 200.0\n",
        "[model]\nchannels = 0\n",
        "[model]\nchannels = 8\nsemantic_channels = 4\nshare_bvl = true\n",
        "[scene]\nframes = 0\n",
    ];
    for text in cases {
        assert!(
            matches!(PipelineConfig::from_toml(text), Err(Error::Config(_))),
            "{text}"
        );
    }
    let cfg = small();
    assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
}

#[test]
fn scene_from_another_config_rejected() {
    let cfg = small();
    let scene = gen_scene(&SceneSpec::random(&cfg).unwrap()).unwrap();
    let mut other = cfg.clone();
    other.grid = GridSpec::new([-9.6, -9.6, -1.0, 9.6, 9.6, 2.2], [48, 48, 8]).unwrap();
    let w = PipelineWeights::<f32>::seeded(&other).unwrap();
    assert!(matches!(
        run_pipeline(&other, &w, &scene, 0.0),
        Err(Error::Config(_))
    ));
}
