use std::sync::LazyLock;

use regex::Regex;

use super::{ChatRequest, LlmBackend, LlmError, LlmResponse};
use crate::hash::sha256_hex;
use crate::templates::extract_templates;

static EXACTLY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"exactly (\d+)").unwrap());
static CLASS_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^Class name: (.+)$").unwrap());
static TARGET_NAME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^Target dataset name: (.+)$").unwrap());

const QUERY_VERBS: [&str; 8] = [
    "Describe how a {} appears",
    "What does a {} look like",
    "Explain the visual features of a {}",
    "How would you recognize a {}",
    "List the distinctive details of a {}",
    "What colors and textures characterize a {}",
    "Describe the shape and layout of a {}",
    "How can a {} be told apart from similar things",
];

const QUERY_CONTEXTS: [&str; 8] = [
    "in a photograph",
    "in a low-resolution image",
    "seen from far away",
    "in a close-up shot",
    "under bright daylight",
    "in a cluttered scene",
    "from an unusual viewpoint",
    "in a grainy picture",
];

const OPENINGS: [&str; 10] = [
    "A photo showing",
    "An image of",
    "A clear view of",
    "A detailed picture of",
    "A wide shot of",
    "A typical example of",
    "A close look at",
    "A natural scene with",
    "A sharp photograph of",
    "A representative image of",
];

const DETAILS: [&str; 10] = [
    "with distinctive colors",
    "with fine texture visible",
    "framed against a plain background",
    "with soft natural lighting",
    "showing its characteristic shape",
    "captured from above",
    "with strong contrast",
    "in its usual surroundings",
    "with recognizable patterns",
    "seen in full detail",
];

/// A deterministic stand-in for a chat model.
///
/// * requests asking for "one-sentence descriptions" get a numbered list of
///   descriptions of the queried subject;
/// * requests carrying a fenced example list of templates get a fenced list
///   of new templates;
/// * anything else gets prose without a list, which is how models tend to
///   answer a meta-prompt that lacks example templates.
///
/// Output is a pure function of the request text and model name.
#[derive(Debug, Clone)]
pub struct SyntheticLlm {
    model: String,
}

impl SyntheticLlm {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
        }
    }

    fn requested_count(content: &str, default: usize) -> usize {
        EXACTLY
            .captures_iter(content)
            .last()
            .and_then(|c| c[1].parse().ok())
            .unwrap_or(default)
            .clamp(1, 1000)
    }

    fn descriptions(content: &str, seed: u64) -> String {
        let n = Self::requested_count(content, 10);
        let subject = CLASS_LINE
            .captures(content)
            .map(|c| c[1].trim().to_string())
            .unwrap_or_else(|| {
                content
                    .lines()
                    .next()
                    .unwrap_or("")
                    .trim()
                    .trim_end_matches(['.', '?', '!'])
                    .to_lowercase()
            });
        (0..n)
            .map(|i| {
                let k = seed as usize + i;
                format!(
                    "{}. {} {} {} (view {}).",
                    i + 1,
                    OPENINGS[k % OPENINGS.len()],
                    subject,
                    DETAILS[(k / OPENINGS.len() + i * 3) % DETAILS.len()],
                    i + 1
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn templates(content: &str, seed: u64) -> String {
        let n = Self::requested_count(content, 10);
        let target = TARGET_NAME
            .captures(content)
            .map(|c| c[1].trim().to_string())
            .unwrap_or_else(|| "the target dataset".to_string());
        let pool = QUERY_VERBS.len() * QUERY_CONTEXTS.len();
        let items: Vec<String> = (0..n)
            .map(|i| {
                let k = (seed as usize + i * 7) % pool;
                let base = format!(
                    "{} {} from the {} dataset?",
                    QUERY_VERBS[k % QUERY_VERBS.len()],
                    QUERY_CONTEXTS[(k / QUERY_VERBS.len()) % QUERY_CONTEXTS.len()],
                    target
                );
                if i < pool {
                    base
                } else {
                    format!("{base} (variant {})", i / pool + 1)
                }
            })
            .map(|t| format!("    '{}'", t.replace('\'', "\\'")))
            .collect();
        format!(
            "Here are the requested queries:\n```python\nqueries = [\n{}\n]\n```",
            items.join(",\n")
        )
    }
}

impl LlmBackend for SyntheticLlm {
    fn complete(&self, req: &ChatRequest) -> Result<LlmResponse, LlmError> {
        let content = req.last_user_content();
        let seed = u64::from_str_radix(&sha256_hex(content.as_bytes())[..8], 16).unwrap();
        let text = if content.contains("one-sentence descriptions") {
            Self::descriptions(content, seed)
        } else if content.contains("```") && extract_templates(content).is_ok() {
            Self::templates(content, seed)
        } else {
            "I would be happy to help. Could you clarify the format you expect for the queries?"
                .to_string()
        };
        Ok(LlmResponse::stop(text, self.model.clone()))
    }
}
