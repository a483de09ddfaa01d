use twinmigrate::error::Error;
use twinmigrate::scenario::{
    fig3_scenario, load_scenario, sample_scenario, save_scenario, scenario_from_json, scenario_to_json, ScenarioFile,
    ScenarioSpec,
};

#[test]
fn saved_scenarios_load_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..5 {
        let s = sample_scenario(&ScenarioSpec { n_msps: 5, n_mrps: 3, seed, ..ScenarioSpec::default() }).unwrap();
        let path = dir.path().join(format!("s{seed}.json"));
        save_scenario(&s, &path).unwrap();
        assert_eq!(load_scenario(&path).unwrap(), s);
    }
}

#[test]
fn scenario_file_is_single_document_with_version() {
    let text = scenario_to_json(&fig3_scenario());
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(v.get("version").is_some());
    assert_eq!(v["msps"].as_array().unwrap().len(), 3);
    assert_eq!(v["mrps"].as_array().unwrap().len(), 2);
    let file: ScenarioFile = serde_json::from_str(&text).unwrap();
    assert_eq!(file.into_scenario().unwrap(), fig3_scenario());
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_scenario(dir.path().join("absent.json")), Err(Error::Io(_))));
}

#[test]
fn malformed_and_invalid_files_are_rejected() {
    assert!(matches!(scenario_from_json("{not json"), Err(Error::Parse(_))));
    assert!(matches!(scenario_from_json(r#"{"version":1}"#), Err(Error::Schema(_))));

    let mut v: serde_json::Value = serde_json::from_str(&scenario_to_json(&fig3_scenario())).unwrap();
    v["mrps"][0]["cost"] = serde_json::json!(-1.0);
    assert!(matches!(scenario_from_json(&v.to_string()), Err(Error::Invariant(_))));
}

#[test]
fn unknown_fields_are_ignored() {
    let mut v: serde_json::Value = serde_json::from_str(&scenario_to_json(&fig3_scenario())).unwrap();
    v["comment"] = serde_json::json!("hand edited");
    assert_eq!(scenario_from_json(&v.to_string()).unwrap(), fig3_scenario());
}
