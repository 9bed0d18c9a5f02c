use std::sync::LazyLock;

use regex::Regex;

use super::{CompletionResponse, TokenLogprob};
use crate::error::GatewayError;

fn clean_token(token: &str) -> &str {
    token.trim_matches(|c: char| c.is_whitespace() || matches!(c, '.' | ':' | ')' | '(' | '*' | '"' | '\''))
}

fn position_of<'a>(tokens: &'a [TokenLogprob], options: &[&str]) -> Option<&'a TokenLogprob> {
    tokens
        .iter()
        .find(|t| options.contains(&clean_token(&t.token)))
        .or_else(|| {
            tokens
                .iter()
                .find(|t| t.top_logprobs.iter().any(|a| options.contains(&clean_token(&a.token))))
        })
}

/// Probability of `target` at the answer position, renormalized over the
/// `options` that appear among that position's top alternatives.
///
/// The answer position is the first generated token that is itself one of
/// the options (after trimming whitespace and punctuation), or failing that
/// the first token whose alternatives contain one. Alternatives mapping to
/// the same option (`"B"`, `" B"`) are summed. When only one option is
/// present its raw probability is returned.
pub fn choice_probability(resp: &CompletionResponse, target: &str, options: &[&str]) -> Result<f64, GatewayError> {
    let tokens = resp
        .token_logprobs
        .as_deref()
        .ok_or_else(|| GatewayError::UnparseableChoice("response carries no logprobs".into()))?;
    let pos = position_of(tokens, options)
        .ok_or_else(|| GatewayError::UnparseableChoice(format!("none of {options:?} at any answer position")))?;

    let mut seen: Vec<&str> = Vec::new();
    let mut mass = vec![0.0f64; options.len()];
    let sampled = std::iter::once((pos.token.as_str(), pos.logprob));
    let alternatives = pos.top_logprobs.iter().map(|a| (a.token.as_str(), a.logprob));
    for (tok, lp) in alternatives.chain(sampled) {
        if seen.contains(&tok) {
            continue;
        }
        seen.push(tok);
        if let Some(i) = options.iter().position(|o| *o == clean_token(tok)) {
            mass[i] += lp.exp();
        }
    }
    let present = mass.iter().filter(|m| **m > 0.0).count();
    let target_mass = options.iter().position(|o| *o == target).map(|i| mass[i]).unwrap_or(0.0);
    let p = match present {
        0 => return Err(GatewayError::UnparseableChoice("option tokens carry zero mass".into())),
        1 => target_mass,
        _ => target_mass / mass.iter().sum::<f64>(),
    };
    Ok(p.clamp(0.0, 1.0))
}

static LETTER_CHOICE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b([AB])\s*[.):]\s*(true|false)\b").expect("regex"));
static WORD_CHOICE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(true|false)\b").expect("regex"));

/// Verbalized A. True / B. False answer; `Some(true)` for True.
pub fn verbalized_choice(text: &str) -> Option<bool> {
    if let Some(c) = LETTER_CHOICE.captures(text) {
        return Some(c[1].eq_ignore_ascii_case("a"));
    }
    WORD_CHOICE.captures(text).map(|c| c[1].eq_ignore_ascii_case("true"))
}
