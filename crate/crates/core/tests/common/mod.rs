//! Hand-labelled metric fixtures shared by the eval tests and the
//! acceptance run.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Deserialize;

pub fn fixture(name: &str) -> PathBuf {
    // Resolved from the crates directory so the CLI acceptance run can
    // share these files.
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .parent()
        .unwrap()
        .join("core/tests/fixtures")
        .join(name)
}

fn read_json<T: serde::de::DeserializeOwned>(name: &str) -> T {
    serde_json::from_str(&std::fs::read_to_string(fixture(name)).unwrap()).unwrap()
}

#[derive(Deserialize)]
pub struct RecallFixture {
    /// 1-based rank of the gold entity, or null when it never appears.
    pub gold_ranks: Vec<Option<usize>>,
    pub list_len: usize,
    pub expected: BTreeMap<usize, f64>,
}

impl RecallFixture {
    pub fn load() -> Self {
        read_json("metrics/recall_50.json")
    }

    /// Ranked lists with the gold entity `g` placed at its fixture rank.
    pub fn rankings(&self) -> (Vec<Vec<String>>, Vec<Option<String>>) {
        self.gold_ranks
            .iter()
            .enumerate()
            .map(|(i, rank)| {
                let gold = format!("g{i}");
                let list = (1..=self.list_len)
                    .map(|r| if Some(r) == *rank { gold.clone() } else { format!("x{i}_{r}") })
                    .collect();
                (list, Some(gold))
            })
            .unzip()
    }
}

/// (entity id, section index).
pub type Section = (String, usize);

#[derive(Deserialize)]
pub struct SectionFixture {
    pub cases: Vec<(Section, Option<Section>)>,
    pub expected: f64,
}

impl SectionFixture {
    pub fn load() -> Self {
        read_json("metrics/section_20.json")
    }
}

#[derive(Deserialize)]
pub struct AnswerCase {
    pub prediction: String,
    pub answers: Vec<String>,
    pub kind: String,
    pub expected: u8,
}

pub fn answer_cases() -> Vec<AnswerCase> {
    std::fs::read_to_string(fixture("metrics/answers_50.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}
