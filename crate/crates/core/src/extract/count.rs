//! Count-token conversion: digits, thousands separators, k/m suffixes and a
//! small word-number table.

const WORD_NUMBERS: &[(&str, u64)] = &[
    // en
    ("zero", 0),
    ("one", 1),
    ("two", 2),
    ("three", 3),
    ("four", 4),
    ("five", 5),
    ("six", 6),
    ("seven", 7),
    ("eight", 8),
    ("nine", 9),
    ("ten", 10),
    ("eleven", 11),
    ("twelve", 12),
    ("thirteen", 13),
    ("fourteen", 14),
    ("fifteen", 15),
    ("sixteen", 16),
    ("seventeen", 17),
    ("eighteen", 18),
    ("nineteen", 19),
    ("twenty", 20),
    ("thirty", 30),
    ("forty", 40),
    ("fifty", 50),
    ("hundred", 100),
    ("thousand", 1000),
    // es
    ("cero", 0),
    ("uno", 1),
    ("dos", 2),
    ("tres", 3),
    ("cuatro", 4),
    ("cinco", 5),
    ("seis", 6),
    ("siete", 7),
    ("ocho", 8),
    ("nueve", 9),
    ("diez", 10),
    ("once", 11),
    ("doce", 12),
    ("quince", 15),
    ("veinte", 20),
    ("treinta", 30),
    ("cien", 100),
    ("mil", 1000),
    // fr
    ("zéro", 0),
    ("deux", 2),
    ("trois", 3),
    ("quatre", 4),
    ("cinq", 5),
    ("sept", 7),
    ("huit", 8),
    ("neuf", 9),
    ("dix", 10),
    ("onze", 11),
    ("douze", 12),
    ("vingt", 20),
    ("trente", 30),
    ("cent", 100),
    ("mille", 1000),
    // zh
    ("零", 0),
    ("一", 1),
    ("二", 2),
    ("两", 2),
    ("三", 3),
    ("四", 4),
    ("五", 5),
    ("六", 6),
    ("七", 7),
    ("八", 8),
    ("九", 9),
    ("十", 10),
    ("百", 100),
    ("千", 1000),
];

fn trim_punct(token: &str) -> &str {
    token.trim_matches(|c: char| !c.is_alphanumeric())
}

fn is_grouped_thousands(s: &str) -> bool {
    let mut groups = s.split(',');
    let head = groups.next().unwrap_or("");
    if head.is_empty() || head.len() > 3 || !head.bytes().all(|b| b.is_ascii_digit()) {
        return false;
    }
    let mut any = false;
    for g in groups {
        if g.len() != 3 || !g.bytes().all(|b| b.is_ascii_digit()) {
            return false;
        }
        any = true;
    }
    any
}

/// Converts a count token to a non-negative integer; `None` when it is not a
/// recognisable count. Plain decimals such as `6.8` are rejected so that
/// magnitudes are never read as counts.
pub fn parse_count(token: &str) -> Option<u64> {
    let t = trim_punct(token.trim());
    if t.is_empty() {
        return None;
    }
    if t.bytes().all(|b| b.is_ascii_digit()) {
        return t.parse().ok();
    }
    if is_grouped_thousands(t) {
        return t.replace(',', "").parse().ok();
    }
    let last = t.chars().last()?;
    let multiplier = match last {
        'k' | 'K' => Some(1_000u64),
        'm' | 'M' => Some(1_000_000u64),
        _ => None,
    };
    if let Some(mult) = multiplier {
        let number = &t[..t.len() - 1];
        let valid = !number.is_empty()
            && number.bytes().all(|b| b.is_ascii_digit() || b == b'.')
            && number.bytes().filter(|&b| b == b'.').count() <= 1
            && !number.starts_with('.')
            && !number.ends_with('.');
        if valid {
            let value = number.parse::<f64>().ok()? * mult as f64;
            let rounded = value.round();
            if (value - rounded).abs() < 1e-6 && rounded <= u64::MAX as f64 {
                return Some(rounded as u64);
            }
        }
        return None;
    }
    let lower = t.to_lowercase();
    WORD_NUMBERS
        .iter()
        .find(|(w, _)| *w == lower)
        .map(|&(_, v)| v)
}
