use quadpool_wasm::{explore_json, init_pool_json, simulate_json};

const BUG2: &str = include_str!("../../core/fixtures/bug2.json");

#[test]
fn init_renders_levels() {
    let v: serde_json::Value = serde_json::from_str(&init_pool_json(256, 1, 2).unwrap()).unwrap();
    assert_eq!(v["bits"], serde_json::json!(["F", "...."]));
    assert!(init_pool_json(100, 1, 2).is_err());
}

#[test]
fn simulate_returns_frames_and_report() {
    let v: serde_json::Value = serde_json::from_str(&simulate_json(BUG2, 1, "none", 500).unwrap()).unwrap();
    let frames = v["frames"].as_array().unwrap();
    assert!(frames.len() > 5);
    assert_eq!(frames[0]["pools"][0]["bits"][0], "F");
    assert!(v["report"]["exit_code"].is_number());
    assert!(simulate_json("{", 1, "", 10).is_err());
    assert!(simulate_json(BUG2, 1, "bug9", 10).is_err());
}

#[test]
fn explore_flags_bug2() {
    let on: serde_json::Value = serde_json::from_str(&explore_json(BUG2, "", 500).unwrap()).unwrap();
    assert_eq!(on["exit_code"], 1);
    let off: serde_json::Value = serde_json::from_str(&explore_json(BUG2, "none", 500).unwrap()).unwrap();
    assert_eq!(off["exit_code"], 0);
}
