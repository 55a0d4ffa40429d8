//! The line-oriented text format exporters serve:
//! `name{label="value",...} <float>`, with `#` comment lines.

use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct ExpositionLine {
    pub name: String,
    pub labels: BTreeMap<String, String>,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedExposition {
    pub lines: Vec<ExpositionLine>,
    /// Lines that could not be parsed and were skipped.
    pub errors: usize,
}

pub(crate) fn escape_label_value(v: &str) -> String {
    let mut out = String::with_capacity(v.len());
    for c in v.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out
}

fn is_name_char(c: char, first: bool) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == ':' || (!first && c.is_ascii_digit())
}

fn valid_name(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if is_name_char(c, true) => chars.all(|c| is_name_char(c, false)),
        _ => false,
    }
}

/// Parses `{k="v",...}` starting after the `{`. Returns the labels and the
/// rest of the line after the closing `}`.
fn parse_labels(mut s: &str) -> Option<(BTreeMap<String, String>, &str)> {
    let mut labels = BTreeMap::new();
    loop {
        s = s.trim_start();
        if let Some(rest) = s.strip_prefix('}') {
            return Some((labels, rest));
        }
        let eq = s.find('=')?;
        let key = s[..eq].trim();
        if !valid_name(key) || key.contains(':') {
            return None;
        }
        s = s[eq + 1..].trim_start().strip_prefix('"')?;
        let mut value = String::new();
        let mut chars = s.char_indices();
        let end = loop {
            let (i, c) = chars.next()?;
            match c {
                '"' => break i,
                '\\' => match chars.next()?.1 {
                    'n' => value.push('\n'),
                    '\\' => value.push('\\'),
                    '"' => value.push('"'),
                    _ => return None,
                },
                c => value.push(c),
            }
        };
        if labels.insert(key.to_string(), value).is_some() {
            return None;
        }
        s = s[end + 1..].trim_start();
        if let Some(rest) = s.strip_prefix(',') {
            s = rest;
        } else if !s.starts_with('}') {
            return None;
        }
    }
}

fn parse_value(s: &str) -> Option<f64> {
    match s {
        "+Inf" | "Inf" => Some(f64::INFINITY),
        "-Inf" => Some(f64::NEG_INFINITY),
        "NaN" => Some(f64::NAN),
        _ => s.parse().ok(),
    }
}

fn parse_line(line: &str) -> Option<ExpositionLine> {
    let name_end = line.find(|c: char| c == '{' || c.is_whitespace()).unwrap_or(line.len());
    let name = &line[..name_end];
    if !valid_name(name) {
        return None;
    }
    let mut rest = &line[name_end..];
    let mut labels = BTreeMap::new();
    if let Some(after) = rest.strip_prefix('{') {
        let (l, r) = parse_labels(after)?;
        labels = l;
        rest = r;
    }
    let mut fields = rest.split_whitespace();
    let value = parse_value(fields.next()?)?;
    // An optional trailing integer timestamp is accepted and ignored.
    if let Some(ts) = fields.next() {
        ts.parse::<i64>().ok()?;
    }
    if fields.next().is_some() {
        return None;
    }
    Some(ExpositionLine {
        name: name.to_string(),
        labels,
        value,
    })
}

pub fn parse_exposition(text: &str) -> ParsedExposition {
    let mut out = ParsedExposition::default();
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match parse_line(line) {
            Some(l) => out.lines.push(l),
            None => out.errors += 1,
        }
    }
    out
}

pub fn render_exposition(lines: &[ExpositionLine]) -> String {
    let mut out = String::new();
    for l in lines {
        out.push_str(&l.name);
        if !l.labels.is_empty() {
            out.push('{');
            for (i, (k, v)) in l.labels.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(k);
                out.push_str("=\"");
                out.push_str(&escape_label_value(v));
                out.push('"');
            }
            out.push('}');
        }
        out.push(' ');
        if l.value.is_nan() {
            out.push_str("NaN");
        } else if l.value.is_infinite() {
            out.push_str(if l.value > 0.0 { "+Inf" } else { "-Inf" });
        } else {
            out.push_str(&l.value.to_string());
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_sample() {
        let p = parse_exposition("jiriaf_pod_cpu_usage{pod=\"a\"} 42\n");
        assert_eq!(p.errors, 0);
        assert_eq!(p.lines.len(), 1);
        assert_eq!(p.lines[0].name, "jiriaf_pod_cpu_usage");
        assert_eq!(p.lines[0].labels["pod"], "a");
        assert_eq!(p.lines[0].value, 42.0);
    }

    #[test]
    fn empty_and_comments() {
        assert_eq!(parse_exposition(""), ParsedExposition::default());
        let p = parse_exposition("# HELP x y\n# TYPE x gauge\n\nx 1\n");
        assert_eq!(p.lines.len(), 1);
        assert_eq!(p.errors, 0);
    }

    #[test]
    fn malformed_lines_skipped_and_counted() {
        let text = "ok 1\nbad{pod=\"a\" 2\n9name 3\nnovalue\nx{a=\"1\",a=\"2\"} 4\ny 5 notats\nz{q=\"e\\\"sc\"} 6 1700000000\n";
        let p = parse_exposition(text);
        assert_eq!(p.errors, 5);
        assert_eq!(p.lines.len(), 2);
        assert_eq!(p.lines[1].labels["q"], "e\"sc");
    }

    #[test]
    fn special_values() {
        let p = parse_exposition("a +Inf\nb -Inf\nc NaN\nd 1e-3\n");
        assert_eq!(p.errors, 0);
        assert!(p.lines[0].value.is_infinite());
        assert!(p.lines[2].value.is_nan());
        assert_eq!(p.lines[3].value, 0.001);
    }

    fn arb_line() -> impl Strategy<Value = ExpositionLine> {
        (
            "[a-z_][a-z0-9_]{0,12}",
            proptest::collection::btree_map("[a-z_][a-z0-9_]{0,6}", "[ -~\n]{0,10}", 0..4),
            -1e12f64..1e12,
        )
            .prop_map(|(name, labels, value)| ExpositionLine { name, labels, value })
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(lines in proptest::collection::vec(arb_line(), 0..8)) {
            let text = render_exposition(&lines);
            let parsed = parse_exposition(&text);
            prop_assert_eq!(parsed.errors, 0);
            prop_assert_eq!(parsed.lines, lines);
        }
    }
}
