use gradsup::data::{gen_spurious_ood, pair_index, SpuriousConfig};
use gradsup::evaluation::{accuracy, evaluate_suite, gradient_alignment, SuiteOptions};
use gradsup::gs::GsConfig;
use gradsup::models::{load_checkpoint, save_checkpoint};
use gradsup::training::{prepare, train_ensemble, Ablation, ModelSpec, TrainConfig};
use gradsup::Activation;

fn config(lambda: f64) -> TrainConfig {
    TrainConfig { max_epochs: 25, gs: GsConfig { lambda, ..Default::default() }, seed: 4, ..Default::default() }
}

#[test]
fn supervision_lowers_gs_loss_and_survives_a_checkpoint() {
    let data = gen_spurious_ood(&SpuriousConfig { seed: 4, ..Default::default() }).unwrap();
    let p = prepare(Ablation::None, &data.train, &data.validation, 4).unwrap();
    let init = ModelSpec::default().build(10, 1, 4).unwrap();
    let out = gradsup::train(&init, &p.train, &p.pairs, &p.validation, &config(10.0)).unwrap();
    let epochs = &out.history.epochs;
    assert!(epochs.last().unwrap().gs_loss.unwrap() < epochs[0].gs_loss.unwrap());

    let before = gradient_alignment(std::slice::from_ref(&init), &p.pairs, &p.train, &GsConfig::default()).unwrap();
    let after =
        gradient_alignment(std::slice::from_ref(&out.params), &p.pairs, &p.train, &GsConfig::default()).unwrap();
    assert!(after.mean_cosine > before.mean_cosine);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    save_checkpoint(&out.params, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, out.params);
    assert_eq!(accuracy(&loaded, &data.ood_test).unwrap(), accuracy(&out.params, &data.ood_test).unwrap());
}

#[test]
fn ensemble_report_is_reproducible() {
    let data = gen_spurious_ood(&SpuriousConfig { n: 600, seed: 8, ..Default::default() }).unwrap();
    let pairs = pair_index(&data.train);
    let spec = ModelSpec { hidden: vec![8], activation: Activation::Tanh };
    let run = || {
        let members: Vec<_> = train_ensemble(&spec, &data.train, &pairs, &data.validation, &config(10.0), 3)
            .unwrap()
            .into_iter()
            .map(|o| o.params)
            .collect();
        let splits = [("validation", &data.validation), ("ood_test", &data.ood_test)];
        evaluate_suite(&members, &splits, Some(("train", &data.train, &pairs)), &SuiteOptions::default())
            .unwrap()
            .to_json()
            .unwrap()
    };
    assert_eq!(run(), run());
}
