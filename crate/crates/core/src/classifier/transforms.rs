//! Seeded corpus transformations used by the robustness, scaling and
//! truncation ablations. Each class draws from its own generator, derived
//! from the seed and the class label, so classes do not perturb each other.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::ClassifierError;
use crate::domain::{PromptCorpus, VlmPrompt};

pub const TRUNCATE_MIN: f64 = 0.5;
pub const TRUNCATE_MAX: f64 = 0.7;

/// Absorbs float error in `w * n` so that e.g. 0.7 * 10 rounds up to 7, not 8.
const CEIL_SLACK: f64 = 1e-9;

fn class_rng(seed: u64, purpose: &str, class: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(purpose.as_bytes());
    h.update([0]);
    h.update(class.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    ChaCha8Rng::seed_from_u64(u64::from_le_bytes(bytes))
}

fn ceil_count(x: f64, n: usize) -> usize {
    ((x - CEIL_SLACK).ceil().max(1.0) as usize).min(n)
}

/// Keeps ⌈fraction · n⌉ prompts per class, drawn without replacement and
/// left in their stored order.
pub fn subsample_prompts(c: &PromptCorpus, fraction: f64, seed: u64) -> Result<PromptCorpus, ClassifierError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(ClassifierError::InvalidArgument(format!(
            "fraction must be in (0, 1], got {fraction}"
        )));
    }
    if fraction == 1.0 {
        return Ok(c.clone());
    }
    let mut out = c.clone();
    for (class, prompts) in out.entries.iter_mut() {
        let n = prompts.len();
        if n == 0 {
            continue;
        }
        let k = ceil_count(fraction * n as f64, n);
        let mut keep = sample(&mut class_rng(seed, "subsample", class), n, k).into_vec();
        keep.sort_unstable();
        *prompts = keep.into_iter().map(|i| prompts[i].clone()).collect();
    }
    Ok(out)
}

/// Window length for an `n`-token prompt at ratio `w`.
pub fn window_len(n: usize, w: f64) -> usize {
    ceil_count(w * n as f64, n)
}

fn strip_edges(token: &str) -> String {
    token
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

/// First occurrence of the label's tokens, as an inclusive token range.
fn label_span(tokens: &[&str], label: &str) -> Option<(usize, usize)> {
    let needle: Vec<String> = label.split_whitespace().map(strip_edges).collect();
    if needle.is_empty() || needle.len() > tokens.len() {
        return None;
    }
    let hay: Vec<String> = tokens.iter().map(|t| strip_edges(t)).collect();
    hay.windows(needle.len())
        .position(|w| w == needle.as_slice())
        .map(|s| (s, s + needle.len() - 1))
}

/// Keeps a window of ⌈w · n⌉ whitespace tokens. If the label occurs, the
/// window is the leftmost one containing its first occurrence (widened to
/// the span if the span alone is longer); otherwise it is a prefix.
pub fn truncate_text(text: &str, label: &str, w: f64) -> String {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let n = tokens.len();
    if n == 0 {
        return String::new();
    }
    let mut len = window_len(n, w);
    if len >= n {
        return text.to_string();
    }
    let start = match label_span(&tokens, label) {
        Some((s, e)) => {
            len = len.max(e - s + 1);
            (e + 1).saturating_sub(len)
        }
        None => 0,
    };
    tokens[start..start + len].join(" ")
}

pub fn truncate_prompts(c: &PromptCorpus, seed: u64) -> PromptCorpus {
    truncate_prompts_in_range(c, seed, TRUNCATE_MIN, TRUNCATE_MAX)
        .expect("default truncation range is valid")
}

/// Truncation with the window ratio drawn uniformly from `[lo, hi]`.
pub fn truncate_prompts_in_range(
    c: &PromptCorpus,
    seed: u64,
    lo: f64,
    hi: f64,
) -> Result<PromptCorpus, ClassifierError> {
    if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
        return Err(ClassifierError::InvalidArgument(format!(
            "truncation range [{lo}, {hi}] must satisfy 0 < lo <= hi <= 1"
        )));
    }
    let mut out = c.clone();
    for (class, prompts) in out.entries.iter_mut() {
        let mut rng = class_rng(seed, "truncate", class);
        for p in prompts.iter_mut() {
            let w = if lo == hi { lo } else { rng.random_range(lo..=hi) };
            let text = truncate_text(&p.text, class, w);
            if text != p.text {
                *p = VlmPrompt::new(&text, class.clone(), p.template_id.clone(), p.llm_id.clone());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::corpus_hash;
    use crate::domain::MetaGenConfig;
    use proptest::prelude::*;

    fn corpus(per_class: usize) -> PromptCorpus {
        let entries = ["Forest", "Sea or Lake", "River"]
            .iter()
            .map(|class| {
                let prompts = (0..per_class)
                    .map(|i| {
                        VlmPrompt::new(
                            &format!("photo {i} shows a {class} seen from far above the ground today"),
                            *class,
                            "t",
                            "gpt",
                        )
                    })
                    .collect();
                (class.to_string(), prompts)
            })
            .collect();
        PromptCorpus {
            dataset_name: "eurosat".into(),
            llm_id: "gpt".into(),
            entries,
            generation_config: MetaGenConfig::default(),
        }
    }

    #[test]
    fn full_fraction_is_identity() {
        let c = corpus(30);
        assert_eq!(corpus_hash(&subsample_prompts(&c, 1.0, 9).unwrap()).unwrap(), corpus_hash(&c).unwrap());
    }

    #[test]
    fn half_of_thirty_is_fifteen() {
        let s = subsample_prompts(&corpus(30), 0.5, 3).unwrap();
        assert!(s.entries.values().all(|p| p.len() == 15));
    }

    #[test]
    fn ceil_ignores_float_noise() {
        assert_eq!(window_len(10, 0.7), 7);
        assert_eq!(window_len(10, 0.5), 5);
        assert_eq!(window_len(3, 0.5), 2);
        assert_eq!(window_len(1, 0.5), 1);
        assert_eq!(ceil_count(0.1 * 30.0, 30), 3);
    }

    #[test]
    fn subsample_is_seeded() {
        let c = corpus(30);
        assert_eq!(subsample_prompts(&c, 0.3, 1).unwrap(), subsample_prompts(&c, 0.3, 1).unwrap());
        let distinct: std::collections::HashSet<_> = (0..20)
            .map(|s| corpus_hash(&subsample_prompts(&c, 0.3, s).unwrap()).unwrap())
            .collect();
        assert_eq!(distinct.len(), 20);
    }

    #[test]
    fn bad_fraction() {
        for f in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(subsample_prompts(&corpus(2), f, 0).is_err());
        }
    }

    #[test]
    fn prefix_without_label() {
        assert_eq!(truncate_text("a b c d e f g h i j", "zebra", 0.5), "a b c d e");
    }

    #[test]
    fn label_near_end_pulls_window() {
        // 1-based tokens 7..8 hold the label; the window of 5 ends at 8.
        let text = "t1 t2 t3 t4 t5 t6 sea lake t9 t10";
        assert_eq!(truncate_text(text, "Sea Lake", 0.5), "t4 t5 t6 sea lake");
    }

    #[test]
    fn label_match_ignores_case_and_edge_punctuation() {
        let text = "one two three four five six seven eight (Sea, or lake).";
        let out = truncate_text(text, "Sea or Lake", 0.5);
        assert!(out.ends_with("(Sea, or lake)."), "{out}");
        assert_eq!(out.split_whitespace().count(), 6);
    }

    #[test]
    fn long_label_widens_window() {
        let out = truncate_text("x a b c d", "a b c d", 0.5);
        assert_eq!(out, "a b c d");
    }

    #[test]
    fn unit_ratio_is_identity() {
        let c = corpus(4);
        assert_eq!(truncate_prompts_in_range(&c, 5, 1.0, 1.0).unwrap(), c);
    }

    #[test]
    fn truncation_is_seeded() {
        let c = corpus(8);
        assert_eq!(truncate_prompts(&c, 1), truncate_prompts(&c, 1));
    }

    proptest! {
        #[test]
        fn window_bounds_and_label_kept(
            pre in 0usize..20,
            post in 0usize..20,
            w in 0.5f64..=0.7,
            label_len in 1usize..3,
        ) {
            let label: Vec<String> = (0..label_len).map(|i| format!("Lbl{i}")).collect();
            let mut tokens: Vec<String> = (0..pre).map(|i| format!("p{i}")).collect();
            tokens.extend(label.iter().map(|t| t.to_lowercase()));
            tokens.extend((0..post).map(|i| format!("q{i}")));
            let n = tokens.len();
            prop_assume!(n >= 2 * label_len);
            let out = truncate_text(&tokens.join(" "), &label.join(" "), w);
            let m = out.split_whitespace().count();
            prop_assert!(m >= n.div_ceil(2) && m <= (7 * n).div_ceil(10), "n={} m={}", n, m);
            prop_assert!(out.contains(&label.join(" ").to_lowercase()));
        }

        #[test]
        fn subsample_counts(n in 1usize..50, f in 0.01f64..=1.0, seed in any::<u64>()) {
            let mut c = corpus(0);
            c.entries.insert(
                "Forest".into(),
                (0..n).map(|i| VlmPrompt::new(&format!("forest {i}"), "Forest", "t", "gpt")).collect(),
            );
            let s = subsample_prompts(&c, f, seed).unwrap();
            let kept = &s.entries["Forest"];
            let expect = ((f * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
            prop_assert_eq!(kept.len(), expect);
            let idx: Vec<usize> = kept.iter().map(|p| p.text[7..].parse().unwrap()).collect();
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
