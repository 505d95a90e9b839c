use melp_core::analysis::AnalysisConfig;
use melp_core::audio::{build_manifest, read_manifest, read_wav_8k, write_manifest};
use melp_core::corpus::write_corpus;
use melp_core::nn::{ModelSpec, NetworkWeights};
use melp_core::pipeline::{
    decode_bytes, encode_to_bytes, evaluate, extract_pairs, load_items, Models, PairKind, PipelineConfig, Placement, Variant,
};
use melp_core::synthesis::SynthConfig;
use melp_core::train::{train_from_manifests, write_feature_manifest, TrainConfig};

#[test]
fn corpus_to_trained_model_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_corpus(dir.path(), 3, 6.0, 11).unwrap();
    assert_eq!(files.speech.len(), 3);
    let entries = build_manifest(&dir.path().join("speech"), &dir.path().join("noise"), &[0.0, 10.0]).unwrap();
    assert_eq!(entries.len(), 12);
    let manifest = dir.path().join("mix.tsv");
    write_manifest(&entries, &manifest).unwrap();
    let items = load_items(&read_manifest(&manifest).unwrap()).unwrap();

    let cfg = AnalysisConfig::default();
    let pairs = extract_pairs(PairKind::Param(Placement::Decoder), &items, &cfg).unwrap();
    let mut paths = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        let name = format!("p{i}.mpfp");
        p.save(dir.path().join(&name)).unwrap();
        paths.push(name.into());
    }
    let list = dir.path().join("pairs.list");
    write_feature_manifest(&paths, &list).unwrap();

    let tcfg = TrainConfig { max_epochs: 2, ..TrainConfig::default() };
    let out = train_from_manifests(&ModelSpec::preset("param_small").unwrap(), &list, &list, &tcfg).unwrap();
    assert_eq!(out.log.len(), 2);
    let model = dir.path().join("m.mpwt");
    out.weights.save(&model).unwrap();
    let net = NetworkWeights::load(&model).unwrap();

    let speech = read_wav_8k(&files.speech[0]).unwrap();
    let bytes = encode_to_bytes(&speech, &cfg, None).unwrap();
    let plain = decode_bytes(&bytes, &SynthConfig::default(), None, 4).unwrap();
    let enhanced = decode_bytes(&bytes, &SynthConfig::default(), Some(&net), 4).unwrap();
    assert_eq!(plain.len(), enhanced.len());
    assert!(enhanced.samples.iter().all(|v| v.is_finite()));

    let models = Models { param_enc: None, param_dec: Some(net), irm: None };
    let report = evaluate(Variant::ParamDec, &items, &models, &PipelineConfig::default()).unwrap();
    assert_eq!(report.rows.len(), 4);
    assert!(report.rows.iter().all(|r| r.utterances == 3 && r.lsd_db.is_finite() && (0.0..=1.0).contains(&r.stoi)));
}
