use pedsearch_web::{classify_rgb, measure_height, search_scene, DEMO_FRAMES};
use serde_json::Value;

const QUERY: &str = r#"{"height_min_cm": 160, "height_max_cm": 175, "torso_color": "red", "gender": "female"}"#;

#[test]
fn classifier_ranks_exact_anchor_first() {
    let ranked: Value = serde_json::from_str(&classify_rgb(255, 0, 0)).unwrap();
    assert_eq!(ranked[0]["name"], "red");
    assert_eq!(ranked[0]["delta_e"], 0.0);
    let d: Vec<f64> = ranked
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["delta_e"].as_f64().unwrap())
        .collect();
    assert!(d.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn height_explorer_recovers_height() {
    let r = measure_height(400.0, 20.0, 1000.0, 175.0, 1200.0, 50.0).unwrap();
    assert_eq!(r.rgba().len(), (r.width() * r.height() * 4) as usize);
    let rep: Value = serde_json::from_str(&r.report()).unwrap();
    assert!(rep["error_cm"].as_f64().unwrap().abs() < 1.0, "{rep}");
    assert_eq!(rep["plausible"], true);

    assert!(measure_height(400.0, 20.0, 1000.0, 175.0, -500.0, 0.0).is_err());
}

#[test]
fn search_isolates_the_queried_person() {
    for frame in 0..DEMO_FRAMES {
        let r = search_scene(frame, QUERY).unwrap();
        let rep: Value = serde_json::from_str(&r.report()).unwrap();
        assert_eq!(rep["result"]["unique"], true, "frame {frame}: {rep}");
        assert_eq!(rep["result"]["survivors"][0]["detection_id"], "alice");
        assert_eq!(rep["trace"][0]["before"], 3);
    }
    assert!(search_scene(DEMO_FRAMES, QUERY).is_err());
    assert!(search_scene(0, r#"{"torso_color": "red"}"#).is_err());
}
