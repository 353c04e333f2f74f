use smart_tmle::config_file::{load_config, resolve_config};
use smart_tmle_core::config::{HWeightMode, Population};
use smart_tmle_core::learners::NamedLearner;

#[test]
fn file_settings_load_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("analysis.toml");
    let text = r#"
seed = 17
h_weight_mode = "treatment_prevalence"
population = "initiators"
known_g1 = 0.5
known_g2 = [{ a1 = 1, y1 = 0, p = 0.5 }, { a1 = 1, y1 = 1, p = 0.5 }]

[roles]
baseline = ["age", "sex"]
w1 = ["adherence"]

[[blip_library]]
name = "mean"
kind = "mean"
"#;
    std::fs::write(&path, text).unwrap();
    let cfg = load_config(&path).unwrap();
    assert_eq!(cfg.seed, 17);
    assert_eq!(cfg.h_weight_mode, HWeightMode::TreatmentPrevalence);
    assert_eq!(cfg.population, Population::Initiators);
    assert_eq!(cfg.known_g2.as_ref().map(Vec::len), Some(2));
    assert_eq!(cfg.roles.baseline, ["age", "sex"]);
    assert_eq!(cfg.roles.a1, "a1");
    assert_eq!(cfg.blip_library, Some(vec![NamedLearner::mean()]));
}

#[test]
fn environment_overrides_file_values() {
    let vars = [("SMART_TMLE_Q_BOUND".to_string(), "0.01".to_string()), ("SMART_TMLE_FOLDS".to_string(), "5".to_string())];
    let cfg = resolve_config("q_bound = 0.001\n", vars).unwrap();
    assert_eq!(cfg.q_bound, 0.01);
    assert_eq!(cfg.folds, 5);
}

#[test]
fn malformed_files_are_validation_errors() {
    for text in ["seed = ", "h_weight_mode = \"sometimes\"", "known_g1 = 1.5", "unknown_key = 1"] {
        let err = resolve_config(text, std::iter::empty()).unwrap_err();
        assert!(err.is_validation(), "{text}");
    }
}

#[test]
fn documented_example_parses() {
    let readme = include_str!("../../../README.md");
    let start = readme.find("```toml\n").unwrap() + 8;
    let len = readme[start..].find("```").unwrap();
    let cfg = resolve_config(&readme[start..start + len], std::iter::empty()).unwrap();
    assert_eq!(cfg.roles.w1, ["adherence"]);
    assert_eq!(cfg.blip_library.map(|l| l.len()), Some(1));
}
