use binfer::archmodel::ArchParams;
use binfer::formats::{
    arch_to_toml, fold_model, parse_arch, write_predictions_csv, ModelFile, ThresholdFile,
    WeightFile,
};
use binfer::layers::{run_batch, Prediction};
use binfer::network::NetworkSpec;
use binfer::verify::{case_rng, random_fixed, random_toy_network, Instance};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dumped_instances_reload_identically(seed in any::<u64>()) {
        let mut rng = case_rng(seed, 0);
        let spec = random_toy_network(&mut rng);
        let inst = Instance::random(&spec, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        inst.dump(dir.path()).unwrap();

        let mf = ModelFile::load(&dir.path().join("model.toml")).unwrap();
        prop_assert_eq!(&mf.spec, &spec);
        prop_assert_eq!(mf.to_toml().unwrap(), inst.model_file().to_toml().unwrap());
        prop_assert_eq!(ModelFile::parse(&mf.to_toml().unwrap()).unwrap(), mf.clone());

        let wf = WeightFile::load(&dir.path().join("weights.bnnw")).unwrap();
        wf.check(&spec).unwrap();
        prop_assert_eq!(wf.clone().into_weights(), inst.packed_weights().unwrap());
        let mut bytes = Vec::new();
        wf.write(&mut bytes).unwrap();
        prop_assert_eq!(bytes, std::fs::read(dir.path().join("weights.bnnw")).unwrap());

        let tf = ThresholdFile::load(&dir.path().join("thresholds.bin")).unwrap();
        tf.check(&spec).unwrap();
        prop_assert_eq!(&tf, &inst.thresholds().unwrap());
        prop_assert_eq!(fold_model(&mf).unwrap(), tf);

        let model = binfer::formats::load_model(
            &dir.path().join("model.toml"),
            &dir.path().join("weights.bnnw"),
            &dir.path().join("thresholds.bin"),
        ).unwrap();
        let x = random_fixed(&mut rng, spec.input);
        prop_assert_eq!(
            run_batch(&model, std::slice::from_ref(&x)).unwrap(),
            run_batch(&inst.packed_model().unwrap(), &[x]).unwrap()
        );
    }
}

#[test]
fn arch_round_trip() {
    let net = NetworkSpec::reference();
    let arch = ArchParams::reference();
    let text = arch_to_toml(&arch).unwrap();
    assert_eq!(parse_arch(&text, &net).unwrap(), arch);
    let by_index = "[[layers]]\nlayer = 0\nuf = 27\np = 32\nii = 2\n";
    assert!(
        parse_arch(by_index, &net).is_err(),
        "incomplete arch must be rejected"
    );
    assert!(parse_arch("[[layers]]\nname = \"nope\"\nuf = 1\np = 1\n", &net).is_err());
}

#[test]
fn reference_model_round_trips() {
    let text = include_str!("../models/bcnn_cifar10.toml");
    let mf = ModelFile::parse(text).unwrap();
    assert_eq!(mf.spec, NetworkSpec::reference());
    assert_eq!(ModelFile::parse(&mf.to_toml().unwrap()).unwrap(), mf);
}

#[test]
fn csv_is_deterministic() {
    let preds = vec![Prediction {
        class: 2,
        scores: vec![0.1, -3.0, 7.25],
    }];
    let mut a = Vec::new();
    let mut b = Vec::new();
    write_predictions_csv(&mut a, &[None], &preds).unwrap();
    write_predictions_csv(&mut b, &[None], &preds).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        String::from_utf8(a).unwrap(),
        "index,label,prediction,score_0,score_1,score_2\n0,,2,0.1,-3,7.25\n"
    );
}

#[test]
fn weight_file_errors_name_the_layer() {
    let mut rng = case_rng(3, 0);
    let spec = ModelFile::parse(include_str!("../models/toy.toml"))
        .unwrap()
        .spec;
    let inst = Instance::random(&spec, &mut rng).unwrap();
    let dir = tempfile::tempdir().unwrap();
    inst.dump(dir.path()).unwrap();
    let mut wf = WeightFile::load(&dir.path().join("weights.bnnw")).unwrap();
    wf.layers.pop();
    let err = wf.check(&spec).unwrap_err().to_string();
    let last = spec.layers.len() - 1;
    assert!(
        err.contains(&format!("layer {last}")) && err.contains(&spec.layers[last].name),
        "{err}"
    );
    let mut tf = ThresholdFile::load(&dir.path().join("thresholds.bin")).unwrap();
    tf.layers.truncate(1);
    let err = tf.check(&spec).unwrap_err().to_string();
    assert!(err.contains("layer 1"), "{err}");
}
