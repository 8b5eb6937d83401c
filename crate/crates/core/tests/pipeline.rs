//! Cross-module integration: the remote-detector HTTP surface against a
//! local mock endpoint, and file-level flows between generation, detection
//! replay and localization.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;

use floc_core::config::RunConfig;
use floc_core::detection::{NoiseModel, ObservationSource};
use floc_core::eval::{run_localize, Modality};
use floc_core::geometry::{Polygon, Vec2};
use floc_core::maps::{LabeledFootprintMap, Landmark};
use floc_core::simworld::{
    generate_random_pose_dataset, generate_world, load_dataset, save_dataset, ArchetypeKind,
    ArchetypeSpec, ScanSimConfig,
};
use floc_core::visibility::CameraRig;
use floc_core::vlm::{vlm_detect, VlmEndpointConfig};

/// Minimal chat-completion mock: answers every POST with a canned reply.
/// Returns the bound base URL.
fn spawn_mock_endpoint(reply_text: &str, failures_before_success: usize) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let reply = reply_text.to_string();
    std::thread::spawn(move || {
        let mut failures_left = failures_before_success;
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let reply = reply.clone();
            let fail_now = failures_left > 0;
            if fail_now {
                failures_left -= 1;
            }
            std::thread::spawn(move || {
                // Read headers.
                let mut buf = Vec::new();
                let mut byte = [0u8; 1];
                while !buf.ends_with(b"\r\n\r\n") {
                    if stream.read_exact(&mut byte).is_err() {
                        return;
                    }
                    buf.push(byte[0]);
                }
                let headers = String::from_utf8_lossy(&buf);
                let content_length: usize = headers
                    .lines()
                    .find_map(|l| {
                        let (name, value) = l.split_once(':')?;
                        name.eq_ignore_ascii_case("content-length")
                            .then(|| value.trim().parse().ok())?
                    })
                    .unwrap_or(0);
                let mut body = vec![0u8; content_length];
                if stream.read_exact(&mut body).is_err() {
                    return;
                }
                let response_body = if fail_now {
                    let msg = r#"{"error": "overloaded"}"#;
                    format!(
                        "HTTP/1.1 503 Service Unavailable\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                        msg.len(),
                        msg
                    )
                } else {
                    let doc = serde_json::json!({
                        "choices": [{"message": {"role": "assistant", "content": reply}}]
                    });
                    let msg = doc.to_string();
                    format!(
                        "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                        msg.len(),
                        msg
                    )
                };
                let _ = stream.write_all(response_body.as_bytes());
            });
        }
    });
    format!("http://{addr}")
}

fn retail_map() -> LabeledFootprintMap {
    let mk = |label: &str, x: f64| {
        Landmark::new(
            label,
            Polygon::rect(Vec2::new(x, 0.0), Vec2::new(x + 1.0, 2.0)).unwrap(),
        )
        .unwrap()
    };
    LabeledFootprintMap::new(
        "map",
        vec![mk("snack shelf", 0.0), mk("drink shelf", 3.0), mk("staff-only door", 6.0)],
    )
    .unwrap()
}

fn tiny_images(dir: &std::path::Path, count: usize) -> Vec<PathBuf> {
    // Single-pixel PNG, enough for the transport test.
    const PNG: &[u8] = &[
        0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44,
        0x52, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x00, 0x00, 0x00, 0x00, 0x3a,
        0x7e, 0x9b, 0x55, 0x00, 0x00, 0x00, 0x0a, 0x49, 0x44, 0x41, 0x54, 0x78, 0x9c, 0x63, 0x62,
        0x00, 0x00, 0x00, 0x06, 0x00, 0x03, 0x36, 0x37, 0x7c, 0xa8, 0x00, 0x00, 0x00, 0x00, 0x49,
        0x45, 0x4e, 0x44, 0xae, 0x42, 0x60, 0x82,
    ];
    (0..count)
        .map(|i| {
            let path = dir.join(format!("cam{i}.png"));
            std::fs::write(&path, PNG).unwrap();
            path
        })
        .collect()
}

#[test]
fn vlm_detect_parses_mock_endpoint_reply() {
    let map = retail_map();
    let base_url = spawn_mock_endpoint("snack shelf\nDrink Shelf\ncup noodle", 0);
    let dir = tempfile::tempdir().unwrap();
    let images = tiny_images(dir.path(), 3);
    let cfg = VlmEndpointConfig {
        base_url,
        model_name: "mock".into(),
        api_key_env_var: "FLOC_TEST_NO_SUCH_KEY".into(),
        timeout_s: 5.0,
        max_retries: 1,
    };
    let obs = vlm_detect(&images, &map, &cfg).unwrap();
    assert_eq!(obs.source, ObservationSource::Vlm);
    assert_eq!(obs.camera_count(), 3);
    for cam in 0..3 {
        assert!(obs.per_camera[cam].contains("snack shelf"));
        assert!(obs.per_camera[cam].contains("drink shelf"));
        assert!(obs.off_map[cam].contains("cup noodle"));
    }
}

#[test]
fn vlm_detect_retries_transient_failures() {
    let map = retail_map();
    // First two requests fail with 503; retries must absorb them.
    let base_url = spawn_mock_endpoint("drink shelf", 2);
    let dir = tempfile::tempdir().unwrap();
    let images = tiny_images(dir.path(), 1);
    let cfg = VlmEndpointConfig {
        base_url,
        model_name: "mock".into(),
        api_key_env_var: "FLOC_TEST_NO_SUCH_KEY".into(),
        timeout_s: 5.0,
        max_retries: 2,
    };
    let obs = vlm_detect(&images, &map, &cfg).unwrap();
    assert!(obs.per_camera[0].contains("drink shelf"));
}

#[test]
fn vlm_detect_reports_detection_unavailable() {
    let map = retail_map();
    let base_url = spawn_mock_endpoint("ignored", usize::MAX);
    let dir = tempfile::tempdir().unwrap();
    let images = tiny_images(dir.path(), 1);
    let cfg = VlmEndpointConfig {
        base_url,
        model_name: "mock".into(),
        api_key_env_var: "FLOC_TEST_NO_SUCH_KEY".into(),
        timeout_s: 2.0,
        max_retries: 1,
    };
    match vlm_detect(&images, &map, &cfg) {
        Err(floc_core::Error::DetectionUnavailable(_)) => {}
        other => panic!("expected detection-unavailable, got {other:?}"),
    }
}

#[test]
fn empty_reply_yields_empty_set() {
    let map = retail_map();
    let base_url = spawn_mock_endpoint("none", 0);
    let dir = tempfile::tempdir().unwrap();
    let images = tiny_images(dir.path(), 2);
    let cfg = VlmEndpointConfig {
        base_url,
        model_name: "mock".into(),
        api_key_env_var: "FLOC_TEST_NO_SUCH_KEY".into(),
        timeout_s: 5.0,
        max_retries: 0,
    };
    let obs = vlm_detect(&images, &map, &cfg).unwrap();
    assert!(obs.per_camera.iter().all(|s| s.is_empty()));
    assert!(obs.off_map.iter().all(|s| s.is_empty()));
}

/// Dataset files written by generation feed localization unchanged, and a
/// confusion-noised dataset localizes worse than a clean one on the same
/// world (file-level version of the in-memory flows).
#[test]
fn file_level_generate_then_localize() {
    let spec = ArchetypeSpec::new(ArchetypeKind::UgDa, 42);
    let (map, grid) = generate_world(&spec).unwrap();
    let rig = CameraRig::default_three_camera();
    let records = generate_random_pose_dataset(
        &map,
        &grid,
        &rig,
        &NoiseModel::noiseless(0),
        &ScanSimConfig::default(),
        4,
        1.0,
        7,
    )
    .unwrap();

    let dir = tempfile::tempdir().unwrap();
    let dataset_path = dir.path().join("data.ndjson");
    save_dataset(&records, &dataset_path).unwrap();
    let loaded = load_dataset(&dataset_path).unwrap();

    let mut cfg = RunConfig::default();
    cfg.hypothesis_count = 20_000;
    let out = run_localize(&loaded, &map, &grid, &cfg, Modality::Fused, 3).unwrap();
    assert_eq!(out.rows.len(), 4);
    // Noiseless fused localization on a diverse-appearance world pins every
    // record well under a meter.
    assert!(
        out.summary.e_trans_mean < 1.0,
        "mean e_trans {} too high",
        out.summary.e_trans_mean
    );
}

#[test]
fn confusion_noise_in_dataset_flows_to_off_map() {
    let spec = ArchetypeSpec::new(ArchetypeKind::UgDa, 5);
    let (map, grid) = generate_world(&spec).unwrap();
    let rig = CameraRig::default_three_camera();
    let mut confusion = BTreeMap::new();
    // Every "A" sighting is reported as an unknown word.
    confusion.insert("A".to_string(), vec!["mystery".to_string()]);
    let noise = NoiseModel {
        drop_prob: 0.0,
        false_positive_prob: 0.0,
        confusion,
        seed: 0,
    };
    let records = generate_random_pose_dataset(
        &map,
        &grid,
        &rig,
        &noise,
        &ScanSimConfig::default(),
        8,
        1.0,
        13,
    )
    .unwrap();
    let mut saw_mystery = false;
    for record in &records {
        let obs = record.observation(&map).unwrap();
        for cam in 0..obs.camera_count() {
            assert!(!obs.per_camera[cam].contains("A"));
            assert!(!obs.per_camera[cam].contains("mystery"));
            saw_mystery |= obs.off_map[cam].contains("mystery");
        }
    }
    assert!(saw_mystery, "no record ever saw the confused landmark");
}
