//! Final-answer checking against the gold answer.

use super::AnswerKind;

/// Relative tolerance for numeric equivalence of fill-in-the-blank answers.
pub const NUMERIC_RTOL: f64 = 1e-6;

/// Returns true if `predicted` matches `gold` under the rules for `kind`.
///
/// Multiple choice compares letters/digits only, case-insensitively. Fill in
/// the blank compares normalized strings, or numbers (decimals and `a/b`
/// fractions) up to a relative tolerance when both sides parse.
pub fn verify_answer(predicted: &str, gold: &str, kind: AnswerKind) -> bool {
    match kind {
        AnswerKind::MultipleChoice => normalize_choice(predicted) == normalize_choice(gold),
        AnswerKind::FillInBlank => {
            let (p, g) = (normalize_blank(predicted), normalize_blank(gold));
            if p == g {
                return true;
            }
            match (parse_number(&p), parse_number(&g)) {
                (Some(a), Some(b)) => numbers_match(a, b),
                _ => false,
            }
        }
    }
}

fn normalize_choice(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_uppercase)
        .collect()
}

fn normalize_blank(s: &str) -> String {
    let mut t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    t = t.trim_matches('$').to_string();
    while t.ends_with('.') {
        t.pop();
    }
    t.to_lowercase()
}

fn numbers_match(a: f64, b: f64) -> bool {
    let scale = a.abs().max(b.abs());
    (a - b).abs() <= NUMERIC_RTOL * scale
}

/// Parses `[+-]digits[.digits]` or a fraction of two such numbers.
pub(crate) fn parse_number(s: &str) -> Option<f64> {
    match s.split_once('/') {
        Some((num, den)) => {
            let (n, d) = (parse_decimal(num)?, parse_decimal(den)?);
            if d == 0.0 {
                None
            } else {
                Some(n / d)
            }
        }
        None => parse_decimal(s),
    }
}

fn parse_decimal(s: &str) -> Option<f64> {
    let body = s.strip_prefix(['+', '-']).unwrap_or(s);
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    let digits_ok = |p: &str| p.chars().all(|c| c.is_ascii_digit());
    if (int.is_empty() && frac.is_empty()) || !digits_ok(int) || !digits_ok(frac) {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}
