//! Newline-delimited JSON records exchanged with an out-of-process scorer.
//!
//! ```text
//! {"type":"score_request","clip_id":7,"prompt":"...","frames":[{"events":{"key":false,"door":true,"goal":false}}]}
//! {"type":"score_response","clip_id":7,"score":1.0}
//! {"type":"shutdown"}
//! {"type":"bye"}
//! ```

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::EventTag;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Record {
    ScoreRequest {
        clip_id: u64,
        prompt: String,
        frames: Vec<Frame>,
    },
    ScoreResponse {
        clip_id: u64,
        score: f64,
    },
    Shutdown,
    Bye,
    Error {
        message: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Frame {
    Events { events: Events },
    Png { png_b64: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Events {
    pub key: bool,
    pub door: bool,
    pub goal: bool,
}

impl Frame {
    /// Event-tag payloads go out as `events`; anything else is treated as an
    /// encoded image and shipped base64.
    pub fn from_payload(payload: &[u8]) -> Frame {
        match EventTag::from_payload(payload) {
            Ok(tag) => Frame::Events {
                events: Events {
                    key: tag.key_picked_up,
                    door: tag.door_opened,
                    goal: tag.goal_reached,
                },
            },
            Err(_) => Frame::Png {
                png_b64: base64::engine::general_purpose::STANDARD.encode(payload),
            },
        }
    }
}

impl Record {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("wire records serialize");
        s.push('\n');
        s
    }

    pub fn parse(line: &str) -> Result<Record, serde_json::Error> {
        serde_json::from_str(line.trim_end())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_layout_is_exact() {
        let r = Record::ScoreRequest {
            clip_id: 7,
            prompt: "p".into(),
            frames: vec![
                Frame::from_payload(
                    &EventTag {
                        door_opened: true,
                        ..Default::default()
                    }
                    .to_payload(),
                ),
                Frame::from_payload(&[0x89, b'P', b'N', b'G']),
            ],
        };
        assert_eq!(
            r.to_line(),
            "{\"type\":\"score_request\",\"clip_id\":7,\"prompt\":\"p\",\"frames\":[\
             {\"events\":{\"key\":false,\"door\":true,\"goal\":false}},\
             {\"png_b64\":\"iVBORw==\"}]}\n"
        );
        assert_eq!(Record::Shutdown.to_line(), "{\"type\":\"shutdown\"}\n");
    }

    #[test]
    fn parses_responses() {
        assert_eq!(
            Record::parse("{\"type\":\"score_response\",\"clip_id\":3,\"score\":0.9}\n").unwrap(),
            Record::ScoreResponse { clip_id: 3, score: 0.9 }
        );
        assert_eq!(Record::parse("{\"type\":\"bye\"}").unwrap(), Record::Bye);
        assert!(Record::parse("{\"type\":\"nope\"}").is_err());
    }
}
