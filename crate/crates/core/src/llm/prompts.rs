//! The three prompt templates, shipped verbatim as text resources.
//!
//! Templates carry `{question}`, `{expected_answer}`, and
//! `{student_message}` / `{student_answer}` slots. Filling the slots is
//! the only transformation applied, so identical inputs always produce
//! byte-identical prompts.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Prompting strategy for the LLM-backed graders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    ZeroShot,
    FewShot,
    ChainOfThought,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::ZeroShot => "zero_shot",
            Strategy::FewShot => "few_shot",
            Strategy::ChainOfThought => "chain_of_thought",
        }
    }

    pub fn template(self) -> &'static str {
        match self {
            Strategy::ZeroShot => ZERO_SHOT_TEMPLATE,
            Strategy::FewShot => FEW_SHOT_TEMPLATE,
            Strategy::ChainOfThought => CHAIN_OF_THOUGHT_TEMPLATE,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero_shot" => Ok(Strategy::ZeroShot),
            "few_shot" => Ok(Strategy::FewShot),
            "chain_of_thought" => Ok(Strategy::ChainOfThought),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

/// Template resource version; bump when any template text changes.
pub const PROMPT_VERSION: &str = "1";

pub const ZERO_SHOT_TEMPLATE: &str = include_str!("../../resources/prompts/zero_shot.txt");
pub const FEW_SHOT_TEMPLATE: &str = include_str!("../../resources/prompts/few_shot.txt");
pub const CHAIN_OF_THOUGHT_TEMPLATE: &str =
    include_str!("../../resources/prompts/chain_of_thought.txt");

/// Fill the strategy's template with the question, expected answer, and
/// student response. Pure function of its inputs.
pub fn build_prompt(
    strategy: Strategy,
    question: &str,
    expected_answer: &str,
    student_response: &str,
) -> String {
    strategy
        .template()
        .trim_end()
        .replace("{question}", question)
        .replace("{expected_answer}", expected_answer)
        .replace("{student_message}", student_response)
        .replace("{student_answer}", student_response)
}

/// A fully specified model request. Carries only the three dataset
/// fields the graders are allowed to see; there is deliberately no slot
/// for user ids or demographics, and the temperature is pinned to 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptRequest {
    pub strategy: Strategy,
    pub question: String,
    pub expected_answer: String,
    pub student_response: String,
    pub model_name: String,
    pub temperature: f64,
}

impl PromptRequest {
    pub fn new(
        strategy: Strategy,
        question: &str,
        expected_answer: &str,
        student_response: &str,
        model_name: &str,
    ) -> Self {
        PromptRequest {
            strategy,
            question: question.to_string(),
            expected_answer: expected_answer.to_string(),
            student_response: student_response.to_string(),
            model_name: model_name.to_string(),
            temperature: 0.0,
        }
    }

    pub fn prompt_text(&self) -> String {
        build_prompt(
            self.strategy,
            &self.question,
            &self.expected_answer,
            &self.student_response,
        )
    }
}
