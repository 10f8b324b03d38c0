//! Seeded synthetic column corpora.
//!
//! A corpus spec lists classes, each with a value generator and a range for
//! the number of values per column. Specs are TOML:
//!
//! ```toml
//! [[class]]
//! name = "day"
//! kind = "ints"
//! min = 1
//! max = 31
//!
//! [[class]]
//! name = "gender"
//! kind = "choice"
//! values = ["F", "M"]
//! ```

use rand::seq::IndexedRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{ColumnInstance, IngestError};
use crate::rng::{self, stream, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// Uniform integers in `[min, max]`.
    Ints { min: i64, max: i64 },
    /// Uniform draws from a fixed list.
    Choice { values: Vec<String> },
    /// Runs of consecutive day numbers within 1..=31.
    DayNumbers,
    /// Track lengths like `4:59`.
    Durations,
    /// Single-letter gender codes.
    GenderCodes,
    /// Two-letter US state codes with the odd county name mixed in.
    StateCodes,
    /// Short capitalised sentences.
    Descriptions,
    /// 13-digit ISBNs grouped as `978-d-dd-dddddd-d`.
    IsbnLike,
    /// Ages like `31 years`, with occasional `--` placeholders.
    Ages,
    /// Topic category names.
    Categories,
    /// Lowercase word salad.
    FreeText,
    /// Overlapping small-integer columns; easy to confuse with each other.
    Rank,
    Ranking,
    Position,
}

fn default_min_values() -> usize {
    3
}

fn default_max_values() -> usize {
    15
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    #[serde(flatten)]
    pub generator: Generator,
    #[serde(default = "default_min_values")]
    pub min_values: usize,
    #[serde(default = "default_max_values")]
    pub max_values: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(rename = "class")]
    pub classes: Vec<ClassSpec>,
}

impl SynthSpec {
    pub fn from_toml(text: &str) -> Result<Self, IngestError> {
        toml::from_str(text).map_err(|e| IngestError::Config(e.to_string()))
    }

    fn preset(classes: &[(&str, Generator)]) -> Self {
        SynthSpec {
            classes: classes
                .iter()
                .map(|(name, generator)| ClassSpec {
                    name: (*name).to_owned(),
                    generator: generator.clone(),
                    min_values: default_min_values(),
                    max_values: default_max_values(),
                })
                .collect(),
        }
    }

    /// Eight classes modelled on common column types: day numbers,
    /// durations, gender codes, state codes, descriptions, ISBNs, ages and
    /// categories.
    pub fn desk() -> Self {
        Self::preset(&[
            ("day", Generator::DayNumbers),
            ("duration", Generator::Durations),
            ("gender", Generator::GenderCodes),
            ("state", Generator::StateCodes),
            ("description", Generator::Descriptions),
            ("isbn", Generator::IsbnLike),
            ("age", Generator::Ages),
            ("category", Generator::Categories),
        ])
    }

    /// Two easily separated classes: day numbers and gender codes.
    pub fn sanity() -> Self {
        Self::preset(&[("day", Generator::DayNumbers), ("gender", Generator::GenderCodes)])
    }

    /// Look up a preset by name: `sanity`, `desk` or `confusable`.
    pub fn preset_named(name: &str) -> Option<Self> {
        match name {
            "sanity" => Some(Self::sanity()),
            "desk" => Some(Self::desk()),
            "confusable" => Some(Self::confusable()),
            _ => None,
        }
    }

    /// The desk corpus plus the rank/ranking/position triple whose values
    /// overlap heavily.
    pub fn confusable() -> Self {
        let mut spec = Self::desk();
        spec.classes.extend(
            Self::preset(&[
                ("rank", Generator::Rank),
                ("ranking", Generator::Ranking),
                ("position", Generator::Position),
            ])
            .classes,
        );
        spec
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.classes.len() < 2 {
            return Err(IngestError::Config("a corpus needs at least 2 classes".into()));
        }
        for c in &self.classes {
            if c.min_values == 0 || c.min_values > c.max_values {
                return Err(IngestError::Config(format!(
                    "class {:?}: bad value-count range {}..={}",
                    c.name, c.min_values, c.max_values
                )));
            }
            match &c.generator {
                Generator::Ints { min, max } if min > max => {
                    return Err(IngestError::Config(format!("class {:?}: min > max", c.name)))
                }
                Generator::Choice { values } if values.is_empty() => {
                    return Err(IngestError::Config(format!(
                        "class {:?}: empty choice list",
                        c.name
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

const STATES: &[&str] = &[
    "AL", "AK", "AZ", "AR", "CA", "CO", "CT", "DE", "FL", "GA", "HI", "ID", "IL", "IN", "IA", "KS",
    "KY", "LA", "ME", "MD", "MA", "MI", "MN", "MS", "MO", "MT", "NE", "NV", "NH", "NJ", "NM", "NY",
    "NC", "ND", "OH", "OK", "OR", "PA", "RI", "SC", "SD", "TN", "TX", "UT", "VT", "VA", "WA", "WV",
    "WI", "WY",
];
const COUNTIES: &[&str] = &["Warwickshire", "Kent", "Yorkshire", "Ontario", "Bavaria"];
const CATEGORIES: &[&str] = &[
    "Education", "Poverty", "Unemployment", "Employment", "Health", "Housing", "Transport",
    "Energy", "Agriculture", "Tourism", "Finance", "Crime", "Environment", "Culture", "Sports",
];
const VERBS: &[&str] = &[
    "Deletes", "Lets you edit", "Returns", "Creates", "Stops", "Updates", "Shows", "Hides",
    "Resets", "Copies",
];
const NOUNS: &[&str] = &[
    "the property", "the value", "a record", "the script", "the current page", "an element",
    "the selected item", "the user profile", "this field", "the window",
];
const TAILS: &[&str] = &[
    "", " of the property", " when execution stops", " for the session", " in the editor",
    " if it exists", " from the list",
];
const WORDS: &[&str] = &[
    "alpha", "river", "stone", "light", "market", "green", "paper", "signal", "orbit", "harbor",
    "maple", "tiger", "copper", "window", "silent", "echo",
];

fn sample_value(gen: &Generator, rng: &mut Rng, position: usize, start: i64) -> String {
    let pick = |rng: &mut Rng, list: &[&str]| (*list.choose(rng).expect("non-empty")).to_owned();
    match gen {
        Generator::Ints { min, max } => rng.random_range(*min..=*max).to_string(),
        Generator::Choice { values } => values.choose(rng).expect("validated").clone(),
        Generator::DayNumbers => ((start - 1 + position as i64) % 31 + 1).to_string(),
        Generator::Durations => format!("{}:{:02}", rng.random_range(0..10), rng.random_range(0..60)),
        Generator::GenderCodes => pick(rng, &["F", "M"]),
        Generator::StateCodes => {
            if rng.random_bool(0.1) {
                pick(rng, COUNTIES)
            } else {
                pick(rng, STATES)
            }
        }
        Generator::Descriptions => {
            format!("{} {}{}", pick(rng, VERBS), pick(rng, NOUNS), pick(rng, TAILS))
        }
        Generator::IsbnLike => format!(
            "97{}-{}-{:02}-{:06}-{}",
            rng.random_range(8..=9),
            rng.random_range(0..10),
            rng.random_range(0..100),
            rng.random_range(0..1_000_000),
            rng.random_range(0..10)
        ),
        Generator::Ages => {
            if rng.random_bool(0.1) {
                "--".to_owned()
            } else {
                format!("{} years", rng.random_range(18..90))
            }
        }
        Generator::Categories => pick(rng, CATEGORIES),
        Generator::FreeText => {
            let n = rng.random_range(1..=4);
            (0..n).map(|_| pick(rng, WORDS)).collect::<Vec<_>>().join(" ")
        }
        // `start` < 0 marks a consecutive 1..n column shared by the triple
        Generator::Rank if start < 0 => (position + 1).to_string(),
        Generator::Rank => rng.random_range(1..=150).to_string(),
        Generator::Ranking if start < 0 => (position + 1).to_string(),
        Generator::Ranking => rng.random_range(0..=120).to_string(),
        Generator::Position if start < 0 => (position + 1).to_string(),
        Generator::Position => (start + 2 * position as i64).to_string(),
    }
}

fn column_start(gen: &Generator, rng: &mut Rng) -> i64 {
    match gen {
        Generator::DayNumbers => rng.random_range(1..=28),
        Generator::Rank | Generator::Ranking | Generator::Position => {
            if rng.random_bool(0.5) {
                -1
            } else {
                rng.random_range(1..=5)
            }
        }
        _ => 0,
    }
}

/// Generate `n_per_class` columns per class. Output is grouped by class in
/// spec order. Each class draws from its own stream, so adding a class does
/// not change the columns of the others.
pub fn generate_synthetic_corpus(
    spec: &SynthSpec,
    n_per_class: usize,
    seed: u64,
) -> Result<Vec<ColumnInstance>, IngestError> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.classes.len() * n_per_class);
    for (ci, class) in spec.classes.iter().enumerate() {
        let mut rng = rng::derive(seed, &[stream::SYNTH, ci as u64]);
        for j in 0..n_per_class {
            let n = rng.random_range(class.min_values..=class.max_values);
            let start = column_start(&class.generator, &mut rng);
            let values: Vec<String> = (0..n)
                .map(|p| sample_value(&class.generator, &mut rng, p, start))
                .collect();
            let mut inst = ColumnInstance::new(values, Some(&class.name));
            inst.id = Some(format!("{}-{j}", class.name));
            out.push(inst);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_CLASS: &str = r#"
[[class]]
name = "day"
kind = "ints"
min = 1
max = 31

[[class]]
name = "gender"
kind = "choice"
values = ["F", "M"]
"#;

    #[test]
    fn count_contract() {
        let spec = SynthSpec::from_toml(TWO_CLASS).unwrap();
        let corpus = generate_synthetic_corpus(&spec, 2, 1).unwrap();
        assert_eq!(corpus.len(), 4);
        assert_eq!(corpus.iter().filter(|c| c.label.as_deref() == Some("day")).count(), 2);
        for c in &corpus {
            assert!(!c.values.is_empty());
        }
    }

    #[test]
    fn deterministic() {
        let spec = SynthSpec::confusable();
        let a = generate_synthetic_corpus(&spec, 5, 9).unwrap();
        let b = generate_synthetic_corpus(&spec, 5, 9).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        super::super::write_jsonl(&mut x, &a).unwrap();
        super::super::write_jsonl(&mut y, &b).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn unknown_generator_is_config_error() {
        let bad = "[[class]]\nname = \"x\"\nkind = \"nonsense\"\n";
        assert!(matches!(SynthSpec::from_toml(bad), Err(IngestError::Config(_))));
    }

    #[test]
    fn needs_two_classes() {
        let one = "[[class]]\nname = \"x\"\nkind = \"ages\"\n";
        let spec = SynthSpec::from_toml(one).unwrap();
        assert!(generate_synthetic_corpus(&spec, 1, 0).is_err());
    }
}
