//! Situation catalogs, the three prompt templates, parsers for the two LLM
//! output formats, the categorization cadence and the categorizers.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{ChatMessage, GatewayError, LlmGateway};
use crate::mdp::{corridor, forage, EnvKind, EnvSpec, Environment, StateObs};

#[derive(Debug, Error)]
pub enum SituationError {
    #[error("no brace-delimited block found")]
    NoBraceBlock,
    #[error("need at least 2 situations, found {0}")]
    TooFewSituations(usize),
    #[error("duplicate situation name `{0}`")]
    DuplicateName(String),
    #[error("situation entry `{0}` has an empty name or description")]
    EmptyEntry(String),
    #[error("no situation id found in `{0}`")]
    NoSituationId(String),
    #[error("situation id {id} outside 1..={count}")]
    OutOfRange { id: i64, count: usize },
    #[error("template placeholder `{{{0}}}` left unresolved")]
    UnresolvedPlaceholder(String),
    #[error("prompt field `{0}` is empty")]
    EmptyField(&'static str),
    #[error("catalog is invalid: {0}")]
    InvalidCatalog(String),
    #[error("catalog is for `{found}`, expected `{expected}`")]
    EnvMismatch { expected: String, found: String },
    #[error("malformed catalog file: {0}")]
    Malformed(String),
    #[error("cadence K must be at least 1")]
    InvalidCadence,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

pub type SituationId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Situation {
    pub situation_id: SituationId,
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CatalogSource {
    LlmGenerated,
    Oracle,
    #[default]
    File,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SituationCatalog {
    pub env_name: String,
    pub situations: Vec<Situation>,
    #[serde(default)]
    pub source: CatalogSource,
}

impl SituationCatalog {
    /// Builds a catalog with ids 1..=N in the given order.
    pub fn from_entries(
        env_name: impl Into<String>,
        entries: Vec<(String, String)>,
        source: CatalogSource,
    ) -> Result<Self, SituationError> {
        let situations = entries
            .into_iter()
            .enumerate()
            .map(|(i, (name, description))| Situation {
                situation_id: i as u32 + 1,
                name,
                description,
            })
            .collect();
        let catalog = SituationCatalog {
            env_name: env_name.into(),
            situations,
            source,
        };
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn validate(&self) -> Result<(), SituationError> {
        if self.situations.len() < 2 {
            return Err(SituationError::TooFewSituations(self.situations.len()));
        }
        let mut names = HashSet::new();
        for (i, s) in self.situations.iter().enumerate() {
            if s.situation_id != i as u32 + 1 {
                return Err(SituationError::InvalidCatalog(format!(
                    "situation ids must be 1..N in order, found {} at position {}",
                    s.situation_id,
                    i + 1
                )));
            }
            if s.name.trim().is_empty() || s.description.trim().is_empty() {
                return Err(SituationError::EmptyEntry(s.name.clone()));
            }
            if !names.insert(s.name.as_str()) {
                return Err(SituationError::DuplicateName(s.name.clone()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.situations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.situations.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = SituationId> + '_ {
        self.situations.iter().map(|s| s.situation_id)
    }

    /// Maps a parsed id into the catalog, substituting `fallback` for
    /// out-of-range ids when one is configured.
    pub fn resolve(
        &self,
        id: i64,
        fallback: Option<SituationId>,
    ) -> Result<SituationId, SituationError> {
        if id >= 1 && id as usize <= self.len() {
            return Ok(id as SituationId);
        }
        match fallback {
            Some(f) if f >= 1 && f as usize <= self.len() => Ok(f),
            _ => Err(SituationError::OutOfRange {
                id,
                count: self.len(),
            }),
        }
    }

    /// Stable digest of the environment name and the situations, ignoring `source`.
    pub fn content_hash(&self) -> String {
        let canonical =
            serde_json::to_string(&(&self.env_name, &self.situations)).expect("catalog serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Renders the catalog in the situation-generation output format.
    pub fn to_output_format_1(&self) -> String {
        let body: Vec<String> = self
            .situations
            .iter()
            .map(|s| format!("{}: {}", s.name, s.description))
            .collect();
        format!("{{{}}}", body.join(", "))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SituationError> {
        let catalog: SituationCatalog =
            serde_json::from_str(text).map_err(|e| SituationError::Malformed(e.to_string()))?;
        catalog.validate()?;
        Ok(catalog)
    }
}

/// Ground-truth catalog for a registered environment.
pub fn oracle_catalog(spec: &EnvSpec) -> SituationCatalog {
    let entries: Vec<(&str, &str)> = match spec.kind {
        EnvKind::TwoZoneCorridor => vec![
            (
                "Zone A",
                "the agent is at positions 0 to 5, where FORWARD earns the reward",
            ),
            (
                "Zone B",
                "the agent is at positions 6 to 10, where JUMP earns the reward",
            ),
        ],
        EnvKind::FourRoomsForage { .. } => vec![
            (
                "Top-left room",
                "the agent is in room 1, the starting room in the upper left",
            ),
            (
                "Top-right room",
                "the agent is in room 2 in the upper right",
            ),
            (
                "Bottom-left room",
                "the agent is in room 3 in the lower left, which the hazard can enter",
            ),
            (
                "Bottom-right room",
                "the agent is in room 4 in the lower right, which the hazard can enter",
            ),
        ],
    };
    let entries = entries
        .into_iter()
        .map(|(n, d)| (n.to_string(), d.to_string()))
        .collect();
    SituationCatalog::from_entries(spec.name.clone(), entries, CatalogSource::Oracle)
        .expect("oracle catalog is valid")
}

/// Ground-truth situation of a state: corridor zone or gridworld room.
pub fn oracle_categorize(spec: &EnvSpec, state: &StateObs) -> SituationId {
    match spec.kind {
        EnvKind::TwoZoneCorridor => {
            if state.state_id <= u64::from(corridor::ZONE_A_LAST) {
                1
            } else {
                2
            }
        }
        EnvKind::FourRoomsForage { .. } => {
            u32::from(forage::room_of(forage::decode_agent(state.state_id)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorizerConfig {
    /// Categorization interval K.
    pub cadence: u32,
    pub fallback_situation: Option<SituationId>,
}

impl Default for CategorizerConfig {
    fn default() -> Self {
        CategorizerConfig {
            cadence: 30,
            fallback_situation: None,
        }
    }
}

impl CategorizerConfig {
    pub fn validate(&self) -> Result<(), SituationError> {
        if self.cadence == 0 {
            return Err(SituationError::InvalidCadence);
        }
        Ok(())
    }
}

pub fn should_categorize(step_index: u32, cadence: u32) -> bool {
    step_index % cadence == 0
}

/// Assigns the current state of an episode to a situation.
pub trait Categorizer {
    fn categorize(&mut self, env: &Environment) -> Result<SituationId, SituationError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OracleCategorizer;

impl Categorizer for OracleCategorizer {
    fn categorize(&mut self, env: &Environment) -> Result<SituationId, SituationError> {
        Ok(oracle_categorize(env.spec(), &env.observation()))
    }
}

/// Categorizes through the gateway: the categorization prompt as the system
/// message and the state's text rendering as the user message.
pub struct LlmCategorizer<'g> {
    gateway: &'g LlmGateway,
    catalog: SituationCatalog,
    system_prompt: String,
    fallback: Option<SituationId>,
    calls: u64,
}

impl<'g> LlmCategorizer<'g> {
    pub fn new(
        gateway: &'g LlmGateway,
        spec: &EnvSpec,
        catalog: SituationCatalog,
        fallback: Option<SituationId>,
        options: TemplateOptions,
    ) -> Result<Self, SituationError> {
        let task = build_task_description(spec)?;
        let system_prompt = build_state_categorization_prompt(spec, &catalog, &task, options)?;
        Ok(LlmCategorizer {
            gateway,
            catalog,
            system_prompt,
            fallback,
            calls: 0,
        })
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }

    pub fn system_prompt(&self) -> &str {
        &self.system_prompt
    }
}

impl Categorizer for LlmCategorizer<'_> {
    fn categorize(&mut self, env: &Environment) -> Result<SituationId, SituationError> {
        self.calls += 1;
        let request = self.gateway.request(vec![
            ChatMessage::system(self.system_prompt.clone()),
            ChatMessage::user(env.render()),
        ]);
        let reply = self.gateway.complete(&request)?;
        let (id, _reason) = match parse_output_format_2(&reply) {
            Ok(parsed) => parsed,
            Err(e) => return self.fallback.ok_or(e),
        };
        self.catalog.resolve(id, self.fallback)
    }
}

/// Asks the gateway for a catalog and parses the reply.
pub fn generate_situations(
    gateway: &LlmGateway,
    spec: &EnvSpec,
) -> Result<SituationCatalog, SituationError> {
    let prompt = build_situation_generation_prompt(spec)?;
    let reply = gateway.complete(&gateway.request(vec![ChatMessage::user(prompt)]))?;
    let mut catalog = parse_output_format_1(&reply)?;
    catalog.env_name = spec.name.clone();
    catalog.source = CatalogSource::LlmGenerated;
    Ok(catalog)
}

// ---------------------------------------------------------------------------
// Templates

pub const TASK_DESCRIPTION_TEMPLATE: &str = "The task is a reinforcement learning problem where an agent \
{TaskDetails}. The action space is {ActionDetails}. The agent receives a reward of {RewardDetails}. The game \
ends when {EndConditions}. The goal is to {GoalDetails}.";

pub const SITUATION_GENERATION_TEMPLATE: &str = "You are classifying all states in the Atari {EnvironmentName} \
environment into a few situations. {TaskDescription}. Please provide your classification and a brief \
description of it. Only present the classification method you consider most reasonable, using as few \
categories as possible. {OutputFormat1}.";

pub const OUTPUT_FORMAT_1: &str =
    "Your output format should be: {[situation 1]: [description 1], [situation 2]: [description 2], ...}.";

pub const STATE_CATEGORIZATION_TEMPLATE: &str = "In the Atari {EnvironmentName} environment, many different \
states may occur. {TaskDescription}. The states faced by the agent can be divided into {SituationNum} general \
categories, which are listed as follows: {GeneratedSituations}. Please classify the input image into one of \
these situations and attach a brief reason for your conclusion. {OutputFormat2}.";

pub const OUTPUT_FORMAT_2: &str = "Use the output format: {[situation ID], [reason]}.";

pub const PLACEHOLDERS: [&str; 11] = [
    "TaskDetails",
    "ActionDetails",
    "RewardDetails",
    "EndConditions",
    "GoalDetails",
    "EnvironmentName",
    "TaskDescription",
    "OutputFormat1",
    "SituationNum",
    "GeneratedSituations",
    "OutputFormat2",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateOptions {
    /// Say "input observation" instead of "input image" in the categorization prompt.
    pub observation_wording: bool,
}

/// Substitutes `{Name}` placeholders in one pass. Values are inserted
/// verbatim; a value ending in `.` directly before a literal `.` in the
/// template is not doubled. Brace runs that are not identifiers are literal.
pub fn fill_template(template: &str, values: &[(&str, &str)]) -> Result<String, SituationError> {
    let mut out = String::with_capacity(template.len() * 2);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let name_len = after
            .find('}')
            .filter(|&n| n > 0 && after[..n].chars().all(|c| c.is_ascii_alphanumeric()));
        let Some(n) = name_len else {
            out.push('{');
            rest = after;
            continue;
        };
        let name = &after[..n];
        let value = values
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| SituationError::UnresolvedPlaceholder(name.to_string()))?;
        rest = &after[n + 1..];
        let value = if rest.starts_with('.') {
            value.strip_suffix('.').unwrap_or(value)
        } else {
            value
        };
        out.push_str(value);
    }
    out.push_str(rest);
    Ok(out)
}

pub fn build_task_description(spec: &EnvSpec) -> Result<String, SituationError> {
    let fields = [
        ("TaskDetails", "task_details", spec.task_details.as_str()),
        (
            "ActionDetails",
            "action_details",
            spec.action_details.as_str(),
        ),
        (
            "RewardDetails",
            "reward_details",
            spec.reward_details.as_str(),
        ),
        (
            "EndConditions",
            "end_conditions",
            spec.end_conditions.as_str(),
        ),
        ("GoalDetails", "goal_details", spec.goal_details.as_str()),
    ];
    if let Some((_, field, _)) = fields.iter().find(|(_, _, v)| v.trim().is_empty()) {
        return Err(SituationError::EmptyField(field));
    }
    let values: Vec<(&str, &str)> = fields.iter().map(|(k, _, v)| (*k, *v)).collect();
    fill_template(TASK_DESCRIPTION_TEMPLATE, &values)
}

pub fn build_situation_generation_prompt(spec: &EnvSpec) -> Result<String, SituationError> {
    let task = build_task_description(spec)?;
    fill_template(
        SITUATION_GENERATION_TEMPLATE,
        &[
            ("EnvironmentName", &spec.display_name),
            ("TaskDescription", &task),
            ("OutputFormat1", OUTPUT_FORMAT_1),
        ],
    )
}

/// Situation listing inserted for `{GeneratedSituations}`.
pub fn render_situation_list(catalog: &SituationCatalog) -> String {
    catalog
        .situations
        .iter()
        .map(|s| format!("{}. {}: {}", s.situation_id, s.name, s.description))
        .collect::<Vec<_>>()
        .join("; ")
}

pub fn build_state_categorization_prompt(
    spec: &EnvSpec,
    catalog: &SituationCatalog,
    task_description: &str,
    options: TemplateOptions,
) -> Result<String, SituationError> {
    if catalog.is_empty() {
        return Err(SituationError::TooFewSituations(0));
    }
    let template = if options.observation_wording {
        STATE_CATEGORIZATION_TEMPLATE.replace("the input image", "the input observation")
    } else {
        STATE_CATEGORIZATION_TEMPLATE.to_string()
    };
    let count = catalog.len().to_string();
    let listing = render_situation_list(catalog);
    fill_template(
        &template,
        &[
            ("EnvironmentName", &spec.display_name),
            ("TaskDescription", task_description),
            ("SituationNum", &count),
            ("GeneratedSituations", &listing),
            ("OutputFormat2", OUTPUT_FORMAT_2),
        ],
    )
}

// ---------------------------------------------------------------------------
// Parsers

fn brace_block(text: &str) -> Option<&str> {
    let open = text.find('{')?;
    let close = text[open..].find('}')? + open;
    Some(&text[open + 1..close])
}

fn strip_wrapping(s: &str) -> &str {
    let s = s.trim();
    for (l, r) in [('[', ']'), ('"', '"'), ('\'', '\''), ('*', '*')] {
        if s.len() >= 2 && s.starts_with(l) && s.ends_with(r) {
            return strip_wrapping(&s[1..s.len() - 1]);
        }
    }
    s
}

/// Parses `{Name: description, Name: description, ...}` out of free text.
/// Comma-separated pieces without a colon continue the previous description.
pub fn parse_output_format_1(text: &str) -> Result<SituationCatalog, SituationError> {
    let block = brace_block(text).ok_or(SituationError::NoBraceBlock)?;
    let mut entries: Vec<(String, String)> = Vec::new();
    for piece in block.split(',') {
        match piece.split_once(':') {
            Some((name, description)) => {
                entries.push((strip_wrapping(name).to_string(), description.to_string()));
            }
            None => match entries.last_mut() {
                Some((_, description)) => {
                    description.push(',');
                    description.push_str(piece);
                }
                None if piece.trim().is_empty() => {}
                None => return Err(SituationError::EmptyEntry(piece.trim().to_string())),
            },
        }
    }
    let entries: Vec<(String, String)> = entries
        .into_iter()
        .map(|(n, d)| (n, strip_wrapping(&d).to_string()))
        .collect();
    if entries.len() < 2 {
        return Err(SituationError::TooFewSituations(entries.len()));
    }
    SituationCatalog::from_entries(String::new(), entries, CatalogSource::LlmGenerated)
}

/// Parses `{id, reason}`: the first integer in the brace block (or the whole
/// text when there is none) and the remainder as the reason.
pub fn parse_output_format_2(text: &str) -> Result<(i64, String), SituationError> {
    let core = brace_block(text).unwrap_or(text);
    let bytes = core.as_bytes();
    let start = bytes
        .iter()
        .position(u8::is_ascii_digit)
        .ok_or_else(|| SituationError::NoSituationId(text.to_string()))?;
    let end = bytes[start..]
        .iter()
        .position(|b| !b.is_ascii_digit())
        .map_or(bytes.len(), |n| start + n);
    let negative = start > 0
        && bytes[start - 1] == b'-'
        && (start < 2 || !bytes[start - 2].is_ascii_alphanumeric());
    let magnitude: i64 = core[start..end]
        .parse()
        .map_err(|_| SituationError::NoSituationId(text.to_string()))?;
    let id = if negative { -magnitude } else { magnitude };
    let rest = core[end..].trim_start_matches(|c: char| {
        c.is_whitespace()
            || matches!(
                c,
                ',' | ':' | ';' | '-' | '.' | ')' | ']' | '\u{2014}' | '\u{2013}'
            )
    });
    Ok((id, strip_wrapping(rest).to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::lookup;
    use proptest::prelude::*;

    fn corridor_spec() -> EnvSpec {
        lookup(corridor::NAME).unwrap()
    }

    #[test]
    fn task_description_substitutes_everything() {
        let spec = corridor_spec();
        let text = build_task_description(&spec).unwrap();
        assert!(text.contains(&format!("The action space is {}.", spec.action_details)));
        assert!(!text.contains('{') && !text.contains('}'));
        let mut empty = spec.clone();
        empty.goal_details = String::new();
        assert!(matches!(
            build_task_description(&empty),
            Err(SituationError::EmptyField("goal_details"))
        ));
    }

    #[test]
    fn generation_prompt_wording() {
        let prompt = build_situation_generation_prompt(&corridor_spec()).unwrap();
        assert!(prompt.starts_with(
            "You are classifying all states in the Atari TwoZoneCorridor environment"
        ));
        assert!(prompt.contains("using as few categories as possible"));
        assert!(prompt
            .ends_with("{[situation 1]: [description 1], [situation 2]: [description 2], ...}."));
        assert!(!prompt.replace("...", "").contains(".."));
        for name in PLACEHOLDERS {
            assert!(!prompt.contains(&format!("{{{name}}}")));
        }
    }

    #[test]
    fn categorization_prompt_wording() {
        let spec = corridor_spec();
        let task = build_task_description(&spec).unwrap();
        let catalog = parse_output_format_1("{A: one, B: two, C: three}").unwrap();
        let prompt =
            build_state_categorization_prompt(&spec, &catalog, &task, TemplateOptions::default())
                .unwrap();
        assert!(prompt.contains("can be divided into 3 general categories"));
        assert!(prompt.contains("classify the input image into one"));
        assert!(prompt.ends_with("Use the output format: {[situation ID], [reason]}."));
        let swapped = build_state_categorization_prompt(
            &spec,
            &catalog,
            &task,
            TemplateOptions {
                observation_wording: true,
            },
        )
        .unwrap();
        assert!(swapped.contains("classify the input observation into one"));
    }

    #[test]
    fn fill_template_errors_on_missing_value() {
        assert!(
            matches!(fill_template("a {X} b", &[]), Err(SituationError::UnresolvedPlaceholder(n)) if n == "X")
        );
        assert_eq!(
            fill_template("{[x]} {} {a b}", &[]).unwrap(),
            "{[x]} {} {a b}"
        );
        assert_eq!(fill_template("{X}.", &[("X", "end.")]).unwrap(), "end.");
        assert_eq!(fill_template("{X}!", &[("X", "end.")]).unwrap(), "end.!");
    }

    #[test]
    fn parse_format_1_examples() {
        let catalog = parse_output_format_1(
            "{Exploration: navigating terrain without threats, Combat: engaging an enemy, Evasion: dodging incoming projectiles}",
        )
        .unwrap();
        let names: Vec<&str> = catalog.situations.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["Exploration", "Combat", "Evasion"]);
        assert_eq!(catalog.ids().collect::<Vec<_>>(), [1, 2, 3]);
        assert_eq!(
            catalog.situations[0].description,
            "navigating terrain without threats"
        );

        assert!(matches!(
            parse_output_format_1("{A: x}"),
            Err(SituationError::TooFewSituations(1))
        ));
        let wrapped =
            parse_output_format_1("Sure! Here it is: {A: one, B: two} Hope this helps.").unwrap();
        assert_eq!(wrapped.len(), 2);
        assert!(matches!(
            parse_output_format_1("A: one, B: two"),
            Err(SituationError::NoBraceBlock)
        ));
        assert!(matches!(
            parse_output_format_1("{A: one, A: two}"),
            Err(SituationError::DuplicateName(_))
        ));
        let commas = parse_output_format_1("{A: one, two and three, B: four}").unwrap();
        assert_eq!(commas.situations[0].description, "one, two and three");
    }

    #[test]
    fn parse_format_2_examples() {
        assert_eq!(
            parse_output_format_2("{2, the agent is in the second zone}").unwrap(),
            (2, "the agent is in the second zone".to_string())
        );
        assert_eq!(
            parse_output_format_2("{situation 3 \u{2014} enemy visible}").unwrap(),
            (3, "enemy visible".to_string())
        );
        assert!(matches!(
            parse_output_format_2("I think it is hard to say."),
            Err(SituationError::NoSituationId(_))
        ));
        assert_eq!(
            parse_output_format_2("{[1], [left room]}").unwrap(),
            (1, "left room".to_string())
        );
        assert_eq!(parse_output_format_2("{-1, nowhere}").unwrap().0, -1);
    }

    #[test]
    fn resolve_with_and_without_fallback() {
        let catalog = oracle_catalog(&corridor_spec());
        assert_eq!(catalog.resolve(2, None).unwrap(), 2);
        assert!(matches!(
            catalog.resolve(3, None),
            Err(SituationError::OutOfRange { id: 3, count: 2 })
        ));
        assert_eq!(catalog.resolve(0, Some(1)).unwrap(), 1);
        assert!(catalog.resolve(9, Some(7)).is_err());
    }

    #[test]
    fn cadence_rule() {
        assert!(should_categorize(0, 30));
        assert!(should_categorize(30, 30));
        assert!(!should_categorize(29, 30));
        assert!(should_categorize(90, 30));
        assert!(CategorizerConfig {
            cadence: 0,
            fallback_situation: None
        }
        .validate()
        .is_err());
    }

    #[test]
    fn oracle_matches_zone_and_room_maps() {
        let spec = corridor_spec();
        for state_id in 0..=11 {
            let obs = StateObs {
                state_id,
                step_index: 0,
                done: false,
            };
            let expected = if state_id <= 5 { 1 } else { 2 };
            assert_eq!(oracle_categorize(&spec, &obs), expected);
        }
        let grid = lookup(forage::NAME).unwrap();
        for cell in forage::free_cells() {
            let obs = StateObs {
                state_id: cell.index() + 81 * 13,
                step_index: 0,
                done: false,
            };
            assert_eq!(
                oracle_categorize(&grid, &obs),
                u32::from(forage::room_of(cell))
            );
        }
        let obs = StateObs {
            state_id: forage::Cell::new(7, 7).index(),
            step_index: 0,
            done: false,
        };
        assert_eq!(oracle_categorize(&grid, &obs), 4);
    }

    #[test]
    fn catalog_json_and_hash() {
        let catalog = oracle_catalog(&corridor_spec());
        let back = SituationCatalog::from_json(&catalog.to_json()).unwrap();
        assert_eq!(back, catalog);
        let mut file = catalog.clone();
        file.source = CatalogSource::File;
        assert_eq!(file.content_hash(), catalog.content_hash());
        let mut renamed = catalog.clone();
        renamed.situations[0].name = "Zone Z".into();
        assert_ne!(renamed.content_hash(), catalog.content_hash());
        let bad = catalog
            .to_json()
            .replace("\"situation_id\": 2", "\"situation_id\": 5");
        assert!(matches!(
            SituationCatalog::from_json(&bad),
            Err(SituationError::InvalidCatalog(_))
        ));
    }

    fn word() -> impl Strategy<Value = String> {
        "[A-Za-z][A-Za-z0-9]{0,7}( [A-Za-z0-9]{1,8}){0,3}"
    }

    proptest! {
        #[test]
        fn format_1_round_trip(
            names in prop::collection::hash_set("[A-Z][a-z]{1,8}", 2..6),
            descs in prop::collection::vec(word(), 6),
        ) {
            let entries: Vec<(String, String)> = names.into_iter().zip(descs).collect();
            let catalog = SituationCatalog::from_entries("", entries, CatalogSource::LlmGenerated).unwrap();
            let parsed = parse_output_format_1(&format!("Here you go:\n{}\nThanks", catalog.to_output_format_1())).unwrap();
            prop_assert_eq!(parsed, catalog);
        }

        #[test]
        fn cadence_fires_ceil_len_over_k(len in 1u32..500, k in 1u32..60) {
            let fired = (0..len).filter(|t| should_categorize(*t, k)).count() as u32;
            prop_assert_eq!(fired, len.div_ceil(k));
        }
    }
}
