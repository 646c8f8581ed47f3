//! Templated descriptions and the closed vocabulary.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::programs::{MotionLabel, Program, Rotation, Side};

pub const NULL_TOKEN: &str = "<null>";
pub const PAD_TOKEN: &str = "<pad>";
pub const NULL_ID: u32 = 0;
pub const PAD_ID: u32 = 1;

fn templates(program: Program) -> &'static [&'static str] {
    match program {
        Program::WalkForward => &[
            "a person walks forward {adv}",
            "someone walks straight ahead {adv}",
            "a man is walking forward {adv}",
        ],
        Program::Turn => &[
            "a person turns to the {side}",
            "someone turns {side} in place",
            "a man turns around to his {side}",
        ],
        Program::RaiseArm => &[
            "a person raises the {side} arm",
            "someone lifts the {side} arm up",
            "a man raises his {side} hand above his head",
        ],
        Program::Wave => &[
            "a person waves with the {side} hand",
            "someone waves the {side} hand",
            "a man is waving his {side} hand",
        ],
        Program::Jump => &[
            "a person jumps up",
            "someone jumps in place",
            "a man does a {size} jump",
        ],
        Program::WalkCircle => &[
            "a person walks in a circle {rot}",
            "someone walks around in a {size} circle",
            "a man walks {rot} in a circle",
        ],
    }
}

const SLOT_VALUES: &[(&str, &[&str])] = &[
    ("{adv}", &["slowly", "quickly", ""]),
    ("{side}", &["left", "right"]),
    ("{size}", &["small", "big"]),
    ("{rot}", &["clockwise", "counterclockwise"]),
];

/// Lowercases and collapses whitespace.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

fn fill(template: &str, label: &MotionLabel) -> String {
    let mut s = template.to_string();
    match *label {
        MotionLabel::WalkForward { speed } => {
            let adv = if speed < 0.9 {
                "slowly"
            } else if speed > 1.3 {
                "quickly"
            } else {
                ""
            };
            s = s.replace("{adv}", adv);
        }
        MotionLabel::Turn { side, .. } | MotionLabel::RaiseArm { side, .. } | MotionLabel::Wave { side, .. } => {
            s = s.replace("{side}", side.word());
        }
        MotionLabel::Jump { height } => {
            s = s.replace("{size}", if height > 0.375 { "big" } else { "small" });
        }
        MotionLabel::WalkCircle { rotation, radius, .. } => {
            s = s.replace("{rot}", rotation.word());
            s = s.replace("{size}", if radius < 0.9 { "small" } else { "big" });
        }
    }
    normalize_text(&s)
}

/// Picks a template with `rng` and fills its slots from the label.
pub fn describe(label: &MotionLabel, rng: &mut impl Rng) -> String {
    let options = templates(label.program());
    fill(options[rng.random_range(0..options.len())], label)
}

/// Closed word list. Ids 0 and 1 are the null and padding tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Self { words, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}

impl Vocabulary {
    /// Every word any template can produce, sorted, after the special tokens.
    pub fn standard() -> Self {
        let mut words = BTreeSet::new();
        for p in Program::ALL {
            for t in templates(p) {
                let mut variants = vec![t.to_string()];
                for (slot, values) in SLOT_VALUES {
                    variants = variants
                        .into_iter()
                        .flat_map(|v| {
                            if v.contains(slot) {
                                values.iter().map(|x| v.replace(slot, x)).collect()
                            } else {
                                vec![v]
                            }
                        })
                        .collect();
                }
                for v in variants {
                    words.extend(v.split_whitespace().map(str::to_string));
                }
            }
        }
        let mut all = vec![NULL_TOKEN.to_string(), PAD_TOKEN.to_string()];
        all.extend(words);
        Vocabulary::from(all)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    /// Whitespace tokenization of the normalized text. An empty text is the
    /// null condition.
    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>> {
        let norm = normalize_text(text);
        if norm.is_empty() {
            return Ok(vec![NULL_ID]);
        }
        norm.split(' ')
            .map(|w| self.id(w).ok_or_else(|| Error::Tokenization(w.to_string())))
            .collect()
    }

    pub fn detokenize(&self, tokens: &[u32]) -> Result<String> {
        let words = tokens
            .iter()
            .map(|&t| {
                self.words
                    .get(t as usize)
                    .map(String::as_str)
                    .ok_or_else(|| Error::Tokenization(format!("#{t}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(words.join(" "))
    }
}

/// Text and token ids for a label.
pub fn text_condition(label: &MotionLabel, vocab: &Vocabulary, rng: &mut impl Rng) -> Result<(String, Vec<u32>)> {
    let text = describe(label, rng);
    let tokens = vocab.tokenize(&text)?;
    Ok((text, tokens))
}

/// Words that name a side, used by side-sensitive rules and prompts.
pub fn side_of_text(text: &str) -> Option<Side> {
    let norm = normalize_text(text);
    let has = |w: &str| norm.split(' ').any(|x| x == w);
    match (has("left"), has("right")) {
        (true, false) => Some(Side::Left),
        (false, true) => Some(Side::Right),
        _ => None,
    }
}

/// Rotation named in a text, if any.
pub fn rotation_of_text(text: &str) -> Option<Rotation> {
    let norm = normalize_text(text);
    if norm.split(' ').any(|w| w == "counterclockwise") {
        Some(Rotation::Counterclockwise)
    } else if norm.split(' ').any(|w| w == "clockwise") {
        Some(Rotation::Clockwise)
    } else {
        None
    }
}
