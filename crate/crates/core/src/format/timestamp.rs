use chrono::{DateTime, NaiveDate, NaiveDateTime};

const DATETIME_FORMATS: &[&str] = &[
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
    "%Y/%m/%d %H:%M:%S%.f",
    "%Y/%m/%d %H:%M",
];

/// A timestamp cell parsed either as a plain real number or as a calendar
/// date-time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParsedTime {
    Number(f64),
    DateTime(NaiveDateTime),
}

pub fn parse_time(text: &str) -> Option<ParsedTime> {
    let text = text.trim();
    if text.is_empty() {
        return None;
    }
    if let Ok(v) = text.parse::<f64>() {
        return v.is_finite().then_some(ParsedTime::Number(v));
    }
    parse_datetime(text).map(ParsedTime::DateTime)
}

pub fn parse_datetime(text: &str) -> Option<NaiveDateTime> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Some(dt.naive_utc());
    }
    for fmt in DATETIME_FORMATS {
        if let Ok(dt) = NaiveDateTime::parse_from_str(text, fmt) {
            return Some(dt);
        }
    }
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

/// Resolves a column of timestamp texts to reals. Purely numeric columns are
/// kept as-is; otherwise every cell must be a date-time and the result is
/// seconds elapsed since the earliest one. On failure returns the index of
/// the first offending cell.
pub fn resolve_times<'a, I>(cells: I) -> Result<Vec<f64>, usize>
where
    I: IntoIterator<Item = &'a str>,
{
    let parsed: Vec<Option<ParsedTime>> = cells.into_iter().map(parse_time).collect();
    if let Some(bad) = parsed.iter().position(Option::is_none) {
        return Err(bad);
    }
    let parsed: Vec<ParsedTime> = parsed.into_iter().flatten().collect();
    if parsed.iter().all(|p| matches!(p, ParsedTime::Number(_))) {
        return Ok(parsed
            .iter()
            .map(|p| match p {
                ParsedTime::Number(v) => *v,
                ParsedTime::DateTime(_) => unreachable!(),
            })
            .collect());
    }
    // mixed columns: numeric cells are not date-times
    let mut stamps = Vec::with_capacity(parsed.len());
    for (i, p) in parsed.iter().enumerate() {
        match p {
            ParsedTime::DateTime(dt) => stamps.push(*dt),
            ParsedTime::Number(_) => return Err(i),
        }
    }
    let Some(earliest) = stamps.iter().min().copied() else {
        return Ok(Vec::new());
    };
    Ok(stamps
        .iter()
        .map(|dt| {
            let d = *dt - earliest;
            d.num_seconds() as f64 + f64::from(d.subsec_nanos()) * 1e-9
        })
        .collect())
}
