//! Fixture loading shared by the integration and acceptance tests.

#![allow(dead_code)]

use serde::Deserialize;

use llm_ens::situations::{parse_output_format_1, parse_output_format_2, SituationCatalog};

#[derive(Debug, Deserialize)]
pub struct ParserCase {
    pub name: String,
    pub format: u8,
    pub input: String,
    pub accept: bool,
    #[serde(default)]
    pub names: Option<Vec<String>>,
    #[serde(default)]
    pub first_description: Option<String>,
    #[serde(default)]
    pub id: Option<u32>,
}

pub fn parser_cases() -> Vec<ParserCase> {
    serde_json::from_str(include_str!("../fixtures/parser_cases.json")).expect("parser fixture parses")
}

/// The catalog that format-2 cases resolve against.
pub fn appendix_catalog() -> SituationCatalog {
    let first = parser_cases().into_iter().next().expect("fixture has cases");
    parse_output_format_1(&first.input).expect("appendix catalog parses")
}

/// `Ok(())` when the parser's outcome matches the case.
pub fn check_parser_case(case: &ParserCase, catalog: &SituationCatalog) -> Result<(), String> {
    match case.format {
        1 => match (parse_output_format_1(&case.input), case.accept) {
            (Ok(parsed), true) => {
                let names: Vec<String> = parsed.situations.iter().map(|s| s.name.clone()).collect();
                if let Some(expected) = &case.names {
                    if &names != expected {
                        return Err(format!("names {names:?}, expected {expected:?}"));
                    }
                }
                if let Some(expected) = &case.first_description {
                    if &parsed.situations[0].description != expected {
                        return Err(format!("first description {:?}", parsed.situations[0].description));
                    }
                }
                Ok(())
            }
            (Err(_), false) => Ok(()),
            (Ok(parsed), false) => Err(format!("accepted {} situations", parsed.len())),
            (Err(e), true) => Err(format!("rejected: {e}")),
        },
        2 => {
            let outcome = parse_output_format_2(&case.input).and_then(|(id, _)| catalog.resolve(id, None));
            match (outcome, case.accept) {
                (Ok(id), true) if Some(id) == case.id => Ok(()),
                (Ok(id), true) => Err(format!("id {id}, expected {:?}", case.id)),
                (Err(_), false) => Ok(()),
                (Ok(id), false) => Err(format!("accepted id {id}")),
                (Err(e), true) => Err(format!("rejected: {e}")),
            }
        }
        other => Err(format!("unknown format {other}")),
    }
}
