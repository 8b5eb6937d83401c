//! Remote vision-language detector: sends each camera image with the label
//! list to a chat-completion endpoint and parses the reply into label sets.

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::Path;
use std::time::Duration;

use crate::detection::{LabelObservation, ObservationSource};
use crate::error::{Error, Result};
use crate::maps::LabeledFootprintMap;

/// Endpoint access configuration. The API key is read from the named
/// environment variable at call time and never persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VlmEndpointConfig {
    /// Base URL of the chat-completion API, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    pub model_name: String,
    pub api_key_env_var: String,
    pub timeout_s: f64,
    pub max_retries: u32,
}

impl Default for VlmEndpointConfig {
    fn default() -> Self {
        VlmEndpointConfig {
            base_url: "https://api.openai.com/v1".to_string(),
            model_name: "gpt-4.1".to_string(),
            api_key_env_var: "OPENAI_API_KEY".to_string(),
            timeout_s: 30.0,
            max_retries: 2,
        }
    }
}

impl VlmEndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_s > 0.0) {
            return Err(Error::Validation(format!(
                "timeout must be positive, got {}",
                self.timeout_s
            )));
        }
        Ok(())
    }
}

/// Recognition instruction sent with every image. `[OBJECT LIST]` is
/// replaced by the comma-separated map labels; the trailing line pins the
/// output format so replies parse as one label per line.
const PROMPT_TEMPLATE: &str = "You are an image recognition assistant. From the list below, \
identify only the objects that are clearly visible in the image. Include partially visible \
objects. Do not include any object if you are not confident it is present. Object list: \
[OBJECT LIST]";

const OUTPUT_FORMAT_SUFFIX: &str =
    "\nAnswer with one object name per line. If none of the listed objects are visible, answer: none";

/// The full prompt for a map's label vocabulary.
pub fn build_prompt(map: &LabeledFootprintMap) -> String {
    let list = map
        .label_set()
        .iter()
        .map(|s| s.as_str())
        .collect::<Vec<_>>()
        .join(", ");
    format!(
        "{}{}",
        PROMPT_TEMPLATE.replace("[OBJECT LIST]", &list),
        OUTPUT_FORMAT_SUFFIX
    )
}

/// Lenient reply parsing: split on newlines and commas, strip list bullets,
/// drop empties and the "none" answer. Matching against map labels happens
/// later in [`LabelObservation::from_raw`].
pub fn parse_reply(text: &str) -> Vec<String> {
    text.split(['\n', ','])
        .map(|item| item.trim().trim_start_matches(['-', '*', '•']).trim())
        .filter(|item| !item.is_empty())
        .filter(|item| item.to_lowercase() != "none")
        .map(|item| item.to_string())
        .collect()
}

fn image_mime(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_lowercase())
        .as_deref()
    {
        Some("jpg") | Some("jpeg") => "image/jpeg",
        _ => "image/png",
    }
}

fn request_one(
    client: &reqwest::blocking::Client,
    cfg: &VlmEndpointConfig,
    api_key: Option<&str>,
    prompt: &str,
    image_path: &Path,
) -> Result<String> {
    let bytes = std::fs::read(image_path).map_err(|e| Error::io(image_path.display(), e))?;
    let data_url = format!(
        "data:{};base64,{}",
        image_mime(image_path),
        base64::engine::general_purpose::STANDARD.encode(&bytes)
    );
    let payload = json!({
        "model": cfg.model_name,
        "messages": [{
            "role": "user",
            "content": [
                {"type": "text", "text": prompt},
                {"type": "image_url", "image_url": {"url": data_url}}
            ]
        }]
    });
    let url = format!("{}/chat/completions", cfg.base_url.trim_end_matches('/'));

    let mut last_error = String::new();
    for attempt in 0..=cfg.max_retries {
        let mut request = client.post(&url).json(&payload);
        if let Some(key) = api_key {
            request = request.bearer_auth(key);
        }
        match request.send() {
            Ok(response) => {
                let status = response.status();
                let body = response.text().unwrap_or_default();
                if status.is_success() {
                    return Ok(body);
                }
                last_error = format!("HTTP {status}: {}", body.chars().take(200).collect::<String>());
            }
            Err(e) => last_error = e.to_string(),
        }
        if attempt < cfg.max_retries {
            std::thread::sleep(Duration::from_millis(200 * (attempt as u64 + 1)));
        }
    }
    Err(Error::DetectionUnavailable(format!(
        "{url} failed after {} attempts: {last_error}",
        cfg.max_retries + 1
    )))
}

/// Extract the assistant text from a chat-completion response body.
fn reply_text(body: &str) -> Option<String> {
    let value: serde_json::Value = serde_json::from_str(body).ok()?;
    value
        .get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
        .map(|s| s.to_string())
}

/// Query the endpoint with one image per camera and assemble the observation.
///
/// Camera requests run concurrently; results are ordered by camera index.
/// Transport failure on any camera after the configured retries yields a
/// detection-unavailable error (callers may fall back to scan-only). A reply
/// that parses to nothing yields an empty set for that camera with a logged
/// warning.
pub fn vlm_detect(
    images: &[std::path::PathBuf],
    map: &LabeledFootprintMap,
    cfg: &VlmEndpointConfig,
) -> Result<LabelObservation> {
    cfg.validate()?;
    let prompt = build_prompt(map);
    let api_key = std::env::var(&cfg.api_key_env_var).ok();
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs_f64(cfg.timeout_s))
        .build()
        .map_err(|e| Error::DetectionUnavailable(format!("http client: {e}")))?;

    let results: Vec<Result<String>> = std::thread::scope(|scope| {
        let handles: Vec<_> = images
            .iter()
            .map(|path| {
                let client = &client;
                let cfg = &cfg;
                let prompt = &prompt;
                let api_key = api_key.as_deref();
                scope.spawn(move || request_one(client, cfg, api_key, prompt, path))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("request thread panicked")).collect()
    });

    let mut raw_per_camera = Vec::with_capacity(results.len());
    for (i, result) in results.into_iter().enumerate() {
        let body = result?;
        match reply_text(&body) {
            Some(text) => raw_per_camera.push(parse_reply(&text)),
            None => {
                log::warn!("camera {i}: unparseable detector reply, treating as empty");
                raw_per_camera.push(Vec::new());
            }
        }
    }
    Ok(LabelObservation::from_raw(
        raw_per_camera,
        map,
        ObservationSource::Vlm,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Polygon, Vec2};
    use crate::maps::Landmark;

    fn two_label_map() -> LabeledFootprintMap {
        let mk = |label: &str, x: f64| {
            Landmark::new(
                label,
                Polygon::rect(Vec2::new(x, 0.0), Vec2::new(x + 1.0, 1.0)).unwrap(),
            )
            .unwrap()
        };
        LabeledFootprintMap::new("map", vec![mk("snack shelf", 0.0), mk("drink shelf", 2.0)])
            .unwrap()
    }

    #[test]
    fn prompt_substitutes_sorted_label_list() {
        let map = two_label_map();
        let prompt = build_prompt(&map);
        assert!(prompt.contains("Object list: drink shelf, snack shelf"));
        assert!(prompt.starts_with("You are an image recognition assistant."));
        assert!(prompt.contains("one object name per line"));
    }

    #[test]
    fn reply_parsing_splits_lines_and_commas() {
        assert_eq!(
            parse_reply("snack shelf, drink shelf"),
            vec!["snack shelf", "drink shelf"]
        );
        assert_eq!(
            parse_reply("- snack shelf\n- drink shelf\n"),
            vec!["snack shelf", "drink shelf"]
        );
        assert!(parse_reply("none").is_empty());
        assert!(parse_reply("").is_empty());
        assert!(parse_reply("None\n").is_empty());
    }

    #[test]
    fn matched_reply_becomes_observation() {
        let map = two_label_map();
        let obs = LabelObservation::from_raw(
            vec![parse_reply("Snack Shelf, drink shelf")],
            &map,
            ObservationSource::Vlm,
        );
        assert_eq!(obs.per_camera[0].len(), 2);
        assert!(obs.per_camera[0].contains("snack shelf"));
        assert!(obs.per_camera[0].contains("drink shelf"));
    }

    #[test]
    fn off_map_reply_items_are_flagged_not_scored() {
        let map = two_label_map();
        let obs = LabelObservation::from_raw(
            vec![parse_reply("cup noodle\nsnack shelf")],
            &map,
            ObservationSource::Vlm,
        );
        assert_eq!(obs.per_camera[0].len(), 1);
        assert!(obs.off_map[0].contains("cup noodle"));
    }

    #[test]
    fn reply_text_extraction() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"snack shelf\nnone of the rest"}}]}"#;
        assert_eq!(
            reply_text(body).unwrap(),
            "snack shelf\nnone of the rest"
        );
        assert!(reply_text("not json").is_none());
        assert!(reply_text("{}").is_none());
    }
}
