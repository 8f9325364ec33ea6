use rtsr_zoo::{build, mandatory_names, zoo_catalog, Layer, Mode, ModelSpec, Registry, ZooError};

#[test]
fn catalog_is_deterministic_and_complete() {
    let a = zoo_catalog();
    assert_eq!(a, zoo_catalog());
    assert!(mandatory_names().len() >= 7);
    for spec in &a {
        spec.validate().unwrap();
    }
}

#[test]
fn deploy_params_within_budget() {
    let reg = Registry::builtin();
    for arch in reg.iter() {
        let spec = reg.spec(arch.name(), None).unwrap();
        let g = build(&spec, Mode::Deploy, 0).unwrap();
        let n = g.param_count();
        assert!(n <= 80_000, "{} has {n} params", arch.name());
        let fused = build(&spec, Mode::Train, 0).unwrap().to_deploy().unwrap();
        assert_eq!(fused.param_count(), n, "{}", arch.name());
    }
    let reptcn = build(&reg.spec("reptcn", None).unwrap(), Mode::Deploy, 0).unwrap();
    assert!((8_000..=12_000).contains(&reptcn.param_count()));
}

#[test]
fn reptcn_has_three_convs() {
    let spec = Registry::builtin().spec("reptcn", None).unwrap();
    let g = build(&spec, Mode::Train, 1).unwrap().to_deploy().unwrap();
    assert!(g.is_fused());
    assert_eq!(g.conv_count(), 3);
}

#[test]
fn lanczos_pp_gains_x4() {
    let spec = Registry::builtin().spec("lanczos_pp", None).unwrap();
    assert_eq!(spec.layers.first(), Some(&Layer::PixelUnshuffle { r: 3 }));
    assert_eq!(spec.layers.last(), Some(&Layer::PixelShuffle { r: 12 }));
    let shapes = spec.infer_shapes().unwrap();
    let last = shapes.last().unwrap();
    assert_eq!((last.channels, last.num, last.den), (3, 4, 1));
}

#[test]
fn registry_lookup_and_errors() {
    let mut reg = Registry::builtin();
    assert!(matches!(reg.spec("nope", None), Err(ZooError::UnknownModel(_))));
    let names: Vec<String> = reg.names().iter().map(|s| s.to_string()).collect();
    assert!(names.iter().any(|n| n == "etds"));
    struct Tiny;
    impl rtsr_zoo::Architecture for Tiny {
        fn name(&self) -> &str {
            "reptcn"
        }
        fn summary(&self) -> &str {
            ""
        }
        fn mandatory(&self) -> bool {
            false
        }
        fn default_width(&self) -> usize {
            4
        }
        fn spec(&self, _: usize) -> ModelSpec {
            unreachable!()
        }
    }
    assert!(matches!(reg.register(Box::new(Tiny)), Err(ZooError::Duplicate(_))));
    let w8 = reg.spec("reptcn", Some(8)).unwrap();
    assert_eq!(w8.channels, 8);
}

#[test]
fn spec_json_round_trip() {
    for spec in zoo_catalog() {
        let text = serde_json::to_string(&spec).unwrap();
        let back: ModelSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}

#[test]
fn mismatched_final_channels_rejected() {
    let mut spec = Registry::builtin().spec("reptcn", None).unwrap();
    if let Layer::Conv { out_ch, .. } = &mut spec.layers[4] {
        *out_ch = 32;
    }
    assert!(matches!(build(&spec, Mode::Train, 0), Err(ZooError::Layer { .. })));
}
