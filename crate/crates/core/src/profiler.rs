//! Natural-language user profiles: the LLM summarizes a user's taste as a
//! short keyword list, which the ranking prompt can then include.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{ItemId, UserId};
use crate::instructgen::Renderer;
use crate::llm_client::{CompletionClient, CompletionRequest, GenerationParams, LlmError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user: UserId,
    pub keywords: Vec<String>,
    pub raw_text: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProfileError {
    #[error("user {0}: completion contained no keywords")]
    EmptyProfile(UserId),
    #[error("user {0}: empty history")]
    EmptyHistory(UserId),
    #[error(transparent)]
    Client(#[from] LlmError),
}

/// Prompt listing the last `max_items` history items with their attribute
/// keywords, asking for a comma-separated preference summary.
pub fn build_profile_prompt(
    user: &UserId,
    history: &[ItemId],
    renderer: &Renderer<'_>,
    max_items: usize,
) -> Result<String, ProfileError> {
    if history.is_empty() {
        return Err(ProfileError::EmptyHistory(user.clone()));
    }
    let noun = &renderer.phrasing.noun;
    let mut prompt = format!(
        "Summarize the user's preferences as a short comma-separated list of keywords, \
         based on the {noun} the user interacted with and their keywords.\n"
    );
    let start = history.len().saturating_sub(max_items);
    for id in &history[start..] {
        prompt.push_str("- ");
        prompt.push_str(&renderer.render_id(id));
        if let Some(item) = renderer.catalog.get(id) {
            if !item.attributes.is_empty() {
                prompt.push_str(" (");
                prompt.push_str(&item.attributes.join(", "));
                prompt.push(')');
            }
        }
        prompt.push('\n');
    }
    prompt.push_str("Preferences:");
    Ok(prompt)
}

/// Splits a completion on commas and newlines. Bullets, list numbers and
/// surrounding quotes are stripped; repeats are dropped case-insensitively.
pub fn parse_keywords(text: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    text.split([',', '\n', ';'])
        .map(clean_phrase)
        .filter(|p| !p.is_empty())
        .filter(|p| seen.insert(p.to_lowercase()))
        .collect()
}

fn clean_phrase(raw: &str) -> String {
    let mut s = raw.trim();
    s = s.trim_start_matches(['-', '*', '\u{2022}']).trim_start();
    let digits = s.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 && matches!(s.as_bytes().get(digits), Some(b'.' | b')')) {
        s = s[digits + 1..].trim_start();
    }
    s.trim_matches(|c: char| c == '"' || c == '\'' || c == '.' || c.is_whitespace()).to_owned()
}

pub fn generate_profile(
    user: &UserId,
    prompt: String,
    client: &dyn CompletionClient,
    params: &GenerationParams,
) -> Result<UserProfile, ProfileError> {
    let resp = client.complete(&CompletionRequest {
        prompt,
        params: params.clone(),
        user: Some(user.clone()),
    })?;
    let keywords = parse_keywords(&resp.text);
    if keywords.is_empty() {
        return Err(ProfileError::EmptyProfile(user.clone()));
    }
    Ok(UserProfile { user: user.clone(), keywords, raw_text: resp.text })
}
