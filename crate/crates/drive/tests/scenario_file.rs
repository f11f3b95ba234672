use std::io::Write;

use scvx_drive::scenario_file::{CurvatureFile, Side};
use scvx_drive::{load_scenario, ScenarioFile, ScenarioFileError, PRESETS};
use scvx_drive_core::model::state;
use scvx_drive_core::scenario::ScenarioError;

fn write_temp(text: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

#[test]
fn presets_round_trip() {
    for name in PRESETS {
        let (file, scenario) = load_scenario(name).unwrap();
        let text = file.to_json().unwrap();
        let tmp = write_temp(&text);
        let (again_file, again) = load_scenario(tmp.path().to_str().unwrap()).unwrap();
        assert_eq!(again_file, file, "{name}");
        assert_eq!(again, scenario, "{name}");
    }
}

#[test]
fn preset_values() {
    let (_, stop) = load_scenario("stop-50m").unwrap();
    assert_eq!((stop.nodes, stop.s_span, stop.v0, stop.v_final), (40, 50.0, 20.0, 0.5));
    assert_eq!(stop.constraints.mu, 0.6);
    assert_eq!(stop.params.l_r(), 1.4);
    assert_eq!(stop.params.l_f(), 1.4);
    assert!((stop.constraints.delta_max - 27f64.to_radians()).abs() < 1e-15);
    assert!((stop.constraints.steer_rate_max - 60f64.to_radians()).abs() < 1e-15);
    assert!((stop.curvature.eval(10.0).unwrap() - 0.005).abs() < 1e-15);
    assert!(stop.trigger.is_none());

    let (file, obstacle) = load_scenario("stop-obstacle").unwrap();
    assert_eq!(file.obstacles[0].side, Side::Right);
    for k in 0..40 {
        let hi = obstacle.constraints.corridor[k].1;
        assert_eq!(hi, if (20..=24).contains(&k) { -0.5 } else { 3.0 });
    }

    let (file, evasion) = load_scenario("evasion-trigger").unwrap();
    assert_eq!(evasion.v0, 25.0);
    let t = file.trigger.unwrap();
    assert_eq!((t.gate_speed, t.offset, t.side, t.final_nodes), (1.0, 1.0, Side::Left, 2));
    assert_eq!(evasion.trigger.unwrap().nodes, [38, 39]);
}

#[test]
fn degree_keys_match_radians() {
    let mut file = ScenarioFile::preset("stop-50m").unwrap();
    file.constraints.delta_max_deg = Some(20.0);
    let deg = file.resolve().unwrap();
    file.constraints.delta_max_deg = None;
    file.constraints.delta_max = Some(20f64.to_radians());
    assert_eq!(file.resolve().unwrap(), deg);

    file.constraints.delta_max_deg = Some(20.0);
    assert!(matches!(file.resolve(), Err(ScenarioFileError::DuplicateAngle("delta_max"))));
}

#[test]
fn serialized_angles_are_radians() {
    let mut file = ScenarioFile::preset("stop-50m").unwrap();
    file.constraints.delta_rate_max_deg = Some(45.0);
    let json = file.to_json().unwrap();
    assert!(!json.contains("_deg"));
    let back = ScenarioFile::from_json(&json).unwrap();
    assert!((back.constraints.delta_rate_max.unwrap() - 45f64.to_radians()).abs() < 1e-15);
}

#[test]
fn parse_errors_carry_the_line() {
    let err = ScenarioFile::from_json("{\n  \"schema_version\": 1,\n  \"name\": oops\n}").unwrap_err();
    match err {
        ScenarioFileError::Parse { line, .. } => assert_eq!(line, 3),
        other => panic!("{other}"),
    }
}

#[test]
fn invalid_scenarios_name_the_invariant() {
    let mut file = ScenarioFile::preset("stop-50m").unwrap();
    file.nodes = 5;
    assert!(matches!(file.resolve(), Err(ScenarioFileError::Invalid(ScenarioError::TooFewNodes(5)))));

    let mut file = ScenarioFile::preset("stop-50m").unwrap();
    file.v_final = 30.0;
    assert!(matches!(file.resolve(), Err(ScenarioFileError::Invalid(ScenarioError::Speeds { .. }))));

    let mut file = ScenarioFile::preset("stop-obstacle").unwrap();
    file.obstacles[0].last_node = 40;
    let err = file.resolve().unwrap_err();
    assert!(matches!(err, ScenarioFileError::ObstacleRange { index: 0, last: 40, max: 39, .. }));
    assert!(err.to_string().contains("outside 0..=39"));

    let mut json: serde_json::Value = serde_json::from_str(&ScenarioFile::preset("stop-50m").unwrap().to_json().unwrap()).unwrap();
    json["schema_version"] = 2.into();
    assert!(matches!(ScenarioFile::from_json(&json.to_string()), Err(ScenarioFileError::Version(2))));

    json["schema_version"] = 1.into();
    json["colour"] = "red".into();
    assert!(matches!(ScenarioFile::from_json(&json.to_string()), Err(ScenarioFileError::Parse { .. })));
}

#[test]
fn unknown_names_list_the_presets() {
    let err = load_scenario("no-such-scenario").unwrap_err();
    let msg = err.to_string();
    for name in PRESETS {
        assert!(msg.contains(name), "{msg}");
    }
}

#[test]
fn curvature_shapes() {
    let mut file = ScenarioFile::preset("stop-50m").unwrap();
    file.curvature = CurvatureFile::ClothoidBlend { radius: 100.0, blend: 20.0 };
    let sc = file.resolve().unwrap();
    assert_eq!(sc.curvature.eval(0.0).unwrap(), 0.0);
    assert!((sc.curvature.eval(10.0).unwrap() - 0.005).abs() < 1e-15);
    assert!((sc.curvature.eval(40.0).unwrap() - 0.01).abs() < 1e-15);

    file.curvature = CurvatureFile::Straight;
    let sc = file.resolve().unwrap();
    // Zero curvature pins the initial steering angle at zero.
    assert_eq!(sc.constraints.pins.initial_state[state::DELTA], Some(0.0));
}
