//! Profile file parsing and per-sample normalization.
//!
//! Two native formats are accepted:
//!
//! * CSV with a mandatory header `program,version,function,run_id,threads,instructions,<counters...>`
//!   and `#` comment lines.
//! * JSONL, one object per line with the same keys and the counters nested
//!   under `"counters"`.
//!
//! A third adapter reads the machine-readable output of `perf stat -x,`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::profile::{CounterSpec, HpcSample, ProfileSet, Values, VersionTag};

pub const FIXED_COLUMNS: [&str; 6] = [
    "program",
    "version",
    "function",
    "run_id",
    "threads",
    "instructions",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    pub fn extension(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
        }
    }

    /// Guesses the format from a file extension.
    pub fn from_path(path: &std::path::Path) -> Option<Format> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(Format::Csv),
            "jsonl" | "ndjson" => Some(Format::Jsonl),
            _ => None,
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(format!("unknown format `{other}` (expected csv or jsonl)")),
        }
    }
}

/// One parsed record before it is checked against a counter spec.
#[derive(Debug, Clone, PartialEq)]
pub struct RawProfileRecord {
    pub program: String,
    pub version: VersionTag,
    pub function: String,
    pub run_id: String,
    pub thread_count: u32,
    pub instruction_count: u64,
    pub counters: BTreeMap<String, u64>,
}

fn parse_err(line: usize, field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Parse {
        line,
        field: field.into(),
        reason: reason.into(),
    }
}

fn parse_field<T: FromStr>(line: usize, field: &str, text: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    text.trim()
        .parse::<T>()
        .map_err(|e| parse_err(line, field, format!("`{}`: {e}", text.trim())))
}

/// Parses a profile file in the given format. Samples come back raw and in
/// input order.
pub fn parse_profiles<R: Read>(source: R, format: Format, spec: &CounterSpec) -> Result<ProfileSet> {
    let records = match format {
        Format::Csv => read_csv_records(source, spec)?,
        Format::Jsonl => read_jsonl_records(source)?,
    };
    assemble(records, spec)
}

fn read_csv_records<R: Read>(source: R, spec: &CounterSpec) -> Result<Vec<(usize, RawProfileRecord)>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source);

    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, "header", e.to_string()))?
        .clone();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(Error::NoSamples);
    }
    for (pos, expected) in FIXED_COLUMNS.iter().enumerate() {
        match headers.get(pos) {
            Some(h) if h == *expected => {}
            Some(h) => {
                return Err(parse_err(
                    1,
                    "header",
                    format!("column {pos} must be `{expected}`, found `{h}`"),
                ))
            }
            None => return Err(parse_err(1, "header", format!("missing column `{expected}`"))),
        }
    }
    let counter_columns: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .skip(FIXED_COLUMNS.len())
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    for name in spec.names() {
        if !counter_columns.iter().any(|(_, h)| h == name) {
            return Err(Error::MissingCounter(name.to_string()));
        }
    }

    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, "record", e.to_string())
        })?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        if row.len() != headers.len() {
            return Err(parse_err(
                line,
                "record",
                format!("expected {} fields, found {}", headers.len(), row.len()),
            ));
        }
        let version = VersionTag::parse(&row[1]).map_err(|e| parse_err(line, "version", e))?;
        let mut counters = BTreeMap::new();
        for (col, name) in &counter_columns {
            let value: u64 = parse_field(line, name, &row[*col])?;
            counters.insert(name.clone(), value);
        }
        out.push((
            line,
            RawProfileRecord {
                program: row[0].to_string(),
                version,
                function: row[2].to_string(),
                run_id: row[3].to_string(),
                thread_count: parse_field(line, "threads", &row[4])?,
                instruction_count: parse_field(line, "instructions", &row[5])?,
                counters,
            },
        ));
    }
    Ok(out)
}

fn json_str(obj: &serde_json::Map<String, Value>, line: usize, key: &str) -> Result<String> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(other) => Err(parse_err(line, key, format!("expected a string, found {other}"))),
        None => Err(parse_err(line, key, "missing")),
    }
}

fn json_u64(value: Option<&Value>, line: usize, key: &str) -> Result<u64> {
    match value {
        Some(v) => v
            .as_u64()
            .ok_or_else(|| parse_err(line, key, format!("expected a non-negative integer, found {v}"))),
        None => Err(parse_err(line, key, "missing")),
    }
}

fn read_jsonl_records<R: Read>(source: R) -> Result<Vec<(usize, RawProfileRecord)>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(source).lines().enumerate() {
        let line_no = i + 1;
        let text = line.map_err(|e| parse_err(line_no, "line", e.to_string()))?;
        let trimmed = text.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let value: Value =
            serde_json::from_str(trimmed).map_err(|e| parse_err(line_no, "line", e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| parse_err(line_no, "line", "expected a JSON object"))?;
        let version = VersionTag::parse(&json_str(obj, line_no, "version")?)
            .map_err(|e| parse_err(line_no, "version", e))?;
        let threads = json_u64(obj.get("threads"), line_no, "threads")?;
        let thread_count = u32::try_from(threads)
            .map_err(|_| parse_err(line_no, "threads", "out of range"))?;
        let counters_obj = obj
            .get("counters")
            .and_then(Value::as_object)
            .ok_or_else(|| parse_err(line_no, "counters", "missing or not an object"))?;
        let mut counters = BTreeMap::new();
        for (name, v) in counters_obj {
            counters.insert(name.clone(), json_u64(Some(v), line_no, name)?);
        }
        out.push((
            line_no,
            RawProfileRecord {
                program: json_str(obj, line_no, "program")?,
                version,
                function: json_str(obj, line_no, "function")?,
                run_id: json_str(obj, line_no, "run_id")?,
                thread_count,
                instruction_count: json_u64(obj.get("instructions"), line_no, "instructions")?,
                counters,
            },
        ));
    }
    Ok(out)
}

fn assemble(records: Vec<(usize, RawProfileRecord)>, spec: &CounterSpec) -> Result<ProfileSet> {
    let Some((_, first)) = records.first() else {
        return Err(Error::NoSamples);
    };
    let program = first.program.clone();
    let version = first.version.clone();
    let mut warned_extra = false;
    let mut samples = Vec::with_capacity(records.len());
    for (line, rec) in records {
        if rec.program != program {
            return Err(parse_err(
                line,
                "program",
                format!("`{}` differs from `{program}` on the first record", rec.program),
            ));
        }
        if rec.version != version {
            return Err(parse_err(
                line,
                "version",
                format!("`{}` differs from `{version}` on the first record", rec.version),
            ));
        }
        let mut values = Vec::with_capacity(spec.dim());
        for name in spec.names() {
            match rec.counters.get(name) {
                Some(v) => values.push(*v),
                None => return Err(Error::MissingCounter(name.to_string())),
            }
        }
        if !warned_extra && rec.counters.len() > spec.dim() {
            let extra: Vec<&str> = rec
                .counters
                .keys()
                .filter(|k| spec.index_of(k).is_none())
                .map(String::as_str)
                .collect();
            warn!("ignoring counters not in the counter spec: {}", extra.join(", "));
            warned_extra = true;
        }
        samples.push(HpcSample {
            function: rec.function,
            run_id: rec.run_id,
            thread_count: rec.thread_count,
            instruction_count: rec.instruction_count,
            values: Values::Raw(values),
        });
    }
    Ok(ProfileSet::new(program, version, spec.clone(), samples))
}

/// Writes a raw profile set in the given format.
pub fn write_profiles<W: Write>(set: &ProfileSet, format: Format, sink: W) -> Result<()> {
    match format {
        Format::Csv => write_csv(set, sink),
        Format::Jsonl => write_jsonl(set, sink),
    }
}

fn raw_values(sample: &HpcSample) -> Result<&[u64]> {
    sample.values.as_raw().ok_or(Error::WrongValueState { expected: "raw" })
}

fn write_csv<W: Write>(set: &ProfileSet, sink: W) -> Result<()> {
    let to_io = |e: csv::Error| Error::io("<csv sink>", std::io::Error::other(e));
    let mut writer = csv::Writer::from_writer(sink);
    let header: Vec<&str> = FIXED_COLUMNS
        .iter()
        .copied()
        .chain(set.counter_spec.names())
        .collect();
    writer.write_record(&header).map_err(to_io)?;
    let version = set.version.to_string();
    for sample in &set.samples {
        let values = raw_values(sample)?;
        let mut row = vec![
            set.program.clone(),
            version.clone(),
            sample.function.clone(),
            sample.run_id.clone(),
            sample.thread_count.to_string(),
            sample.instruction_count.to_string(),
        ];
        row.extend(values.iter().map(u64::to_string));
        writer.write_record(&row).map_err(to_io)?;
    }
    writer.flush().map_err(|e| Error::io("<csv sink>", e))?;
    Ok(())
}

fn write_jsonl<W: Write>(set: &ProfileSet, mut sink: W) -> Result<()> {
    let version = set.version.to_string();
    for sample in &set.samples {
        let values = raw_values(sample)?;
        let counters: serde_json::Map<String, Value> = set
            .counter_spec
            .names()
            .zip(values)
            .map(|(n, v)| (n.to_string(), Value::from(*v)))
            .collect();
        let obj = serde_json::json!({
            "program": set.program,
            "version": version,
            "function": sample.function,
            "run_id": sample.run_id,
            "threads": sample.thread_count,
            "instructions": sample.instruction_count,
            "counters": counters,
        });
        serde_json::to_writer(&mut sink, &obj)?;
        sink.write_all(b"\n").map_err(|e| Error::io("<jsonl sink>", e))?;
    }
    sink.flush().map_err(|e| Error::io("<jsonl sink>", e))?;
    Ok(())
}

/// Metadata for a `perf stat` invocation, which carries no function or run
/// information of its own.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub program: String,
    pub version: VersionTag,
    pub function: String,
    pub run_id: String,
    pub thread_count: u32,
    /// Used when the output has no `instructions` event line.
    pub instruction_count: Option<u64>,
}

const PERF_INSTRUCTIONS_EVENT: &str = "instructions";

/// Strips a trailing perf privilege modifier such as `:u` or `:ukh`.
fn strip_modifier(event: &str) -> &str {
    match event.rsplit_once(':') {
        Some((base, m)) if !m.is_empty() && m.chars().all(|c| "ukhHGpPS".contains(c)) => base,
        _ => event,
    }
}

/// Parses the output of `perf stat -x,` for one invocation into a single raw
/// sample.
///
/// Field layout per event line: `value,unit,event,run_time,pct_enabled,...`.
/// Lines starting with `#` and blank lines are skipped. Events not named by
/// the counter spec are ignored.
pub fn parse_perf_stat<R: Read>(source: R, spec: &CounterSpec, meta: &RunMeta) -> Result<ProfileSet> {
    let mut found: BTreeMap<usize, u64> = BTreeMap::new();
    let mut instructions: Option<u64> = None;
    let mut event_lines = 0usize;

    for (i, line) in BufReader::new(source).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| parse_err(line_no, "line", e.to_string()))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() < 3 || fields[2].is_empty() {
            continue;
        }
        event_lines += 1;
        let event = fields[2];
        let slot = spec
            .index_of(event)
            .or_else(|| spec.index_of(strip_modifier(event)));
        let is_instructions = strip_modifier(event) == PERF_INSTRUCTIONS_EVENT;
        if slot.is_none() && !is_instructions {
            continue;
        }
        let raw = fields[0];
        if raw.starts_with('<') {
            if raw.contains("not counted") {
                return Err(Error::NotCounted(event.to_string()));
            }
            return Err(parse_err(line_no, event, format!("unsupported event marker `{raw}`")));
        }
        let value: u64 = match raw.parse::<u64>() {
            Ok(v) => v,
            Err(_) => {
                let f: f64 = parse_field(line_no, event, raw)?;
                if !(f.is_finite() && f >= 0.0) {
                    return Err(parse_err(line_no, event, format!("invalid count `{raw}`")));
                }
                f.round() as u64
            }
        };
        if let Some(idx) = slot {
            found.insert(idx, value);
        }
        if is_instructions {
            instructions = Some(value);
        }
    }

    if event_lines == 0 {
        return Err(Error::NoSamples);
    }
    let mut values = Vec::with_capacity(spec.dim());
    for (idx, name) in spec.names().enumerate() {
        match found.get(&idx) {
            Some(v) => values.push(*v),
            None => return Err(Error::MissingCounter(name.to_string())),
        }
    }
    let instruction_count = instructions.or(meta.instruction_count).ok_or_else(|| {
        Error::MissingCounter(PERF_INSTRUCTIONS_EVENT.to_string())
    })?;
    let sample = HpcSample {
        function: meta.function.clone(),
        run_id: meta.run_id.clone(),
        thread_count: meta.thread_count,
        instruction_count,
        values: Values::Raw(values),
    };
    Ok(ProfileSet::new(
        meta.program.clone(),
        meta.version.clone(),
        spec.clone(),
        vec![sample],
    ))
}

/// Divides every raw counter by `instruction_count * thread_count`.
pub fn normalize(set: &ProfileSet) -> Result<ProfileSet> {
    if set.is_empty() {
        return Err(Error::NoSamples);
    }
    let mut samples = Vec::with_capacity(set.len());
    for (index, s) in set.samples.iter().enumerate() {
        let raw = match &s.values {
            Values::Raw(v) => v,
            Values::Normalized(_) => return Err(Error::DoubleNormalization),
        };
        if s.instruction_count == 0 {
            return Err(Error::InvalidSample {
                index,
                reason: "instruction count is zero".into(),
            });
        }
        if s.thread_count == 0 {
            return Err(Error::InvalidSample {
                index,
                reason: "thread count is zero".into(),
            });
        }
        // Exact for products below 2^53, so equal ratios give equal quotients.
        let denom = (u128::from(s.instruction_count) * u128::from(s.thread_count)) as f64;
        let values = raw.iter().map(|&v| v as f64 / denom).collect();
        samples.push(HpcSample {
            values: Values::Normalized(values),
            ..s.clone()
        });
    }
    Ok(ProfileSet {
        samples,
        ..set.clone()
    })
}

/// Normalizes a raw set, or passes an already-normalized one through.
pub fn ensure_normalized(set: &ProfileSet) -> Result<ProfileSet> {
    if set.is_normalized() {
        Ok(set.clone())
    } else {
        normalize(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::Version;

    fn spec2() -> CounterSpec {
        CounterSpec::new(["c0", "c1"]).unwrap()
    }

    #[test]
    fn one_line_csv_maps_fields_directly() {
        let text = "program,version,function,run_id,threads,instructions,c0,c1\n\
                    prog,old,foo,r0,2,1000,100,50\n";
        let set = parse_profiles(text.as_bytes(), Format::Csv, &spec2()).unwrap();
        assert_eq!(set.len(), 1);
        let s = &set.samples[0];
        assert_eq!(s.values, Values::Raw(vec![100, 50]));
        assert_eq!((s.instruction_count, s.thread_count), (1000, 2));
        assert_eq!(set.version.version, Version::Old);
    }

    #[test]
    fn csv_comments_and_extra_columns_are_tolerated() {
        let text = "# leading comment\n\
                    program,version,function,run_id,threads,instructions,c1,extra,c0\n\
                    # mid comment\n\
                    prog,new:v2,foo,r0,1,10,5,99,7\n";
        let set = parse_profiles(text.as_bytes(), Format::Csv, &spec2()).unwrap();
        assert_eq!(set.samples[0].values, Values::Raw(vec![7, 5]));
        assert_eq!(set.version.label, "v2");
    }

    #[test]
    fn csv_missing_counter_column_names_it() {
        let spec = CounterSpec::new(["c0", "HITM"]).unwrap();
        let text = "program,version,function,run_id,threads,instructions,c0\nprog,old,foo,r0,1,10,5\n";
        match parse_profiles(text.as_bytes(), Format::Csv, &spec) {
            Err(Error::MissingCounter(name)) => assert_eq!(name, "HITM"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_malformed_value_names_line_and_field() {
        let text = "program,version,function,run_id,threads,instructions,c0,c1\n\
                    prog,old,foo,r0,2,1000,100,50\n\
                    prog,old,foo,r1,2,1000,abc,50\n";
        match parse_profiles(text.as_bytes(), Format::Csv, &spec2()) {
            Err(Error::Parse { line, field, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(field, "c0");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_header_only_is_no_samples() {
        let text = "program,version,function,run_id,threads,instructions,c0,c1\n";
        assert!(matches!(
            parse_profiles(text.as_bytes(), Format::Csv, &spec2()),
            Err(Error::NoSamples)
        ));
        assert!(matches!(
            parse_profiles("".as_bytes(), Format::Csv, &spec2()),
            Err(Error::NoSamples)
        ));
    }

    #[test]
    fn jsonl_groups_runs() {
        let text = r#"{"program":"p","version":"old","function":"foo","run_id":"r0","threads":1,"instructions":10,"counters":{"c0":1,"c1":2}}
{"program":"p","version":"old","function":"foo","run_id":"r1","threads":1,"instructions":10,"counters":{"c0":3,"c1":4}}
"#;
        let set = parse_profiles(text.as_bytes(), Format::Jsonl, &spec2()).unwrap();
        assert_eq!(set.run_index.len(), 2);
        assert_eq!(set.run_index["r0"], vec![0]);
        assert_eq!(set.run_index["r1"], vec![1]);
    }

    #[test]
    fn jsonl_missing_field_is_reported_with_line() {
        let text = r#"{"program":"p","version":"old","function":"foo","threads":1,"instructions":10,"counters":{"c0":1,"c1":2}}"#;
        match parse_profiles(text.as_bytes(), Format::Jsonl, &spec2()) {
            Err(Error::Parse { line, field, .. }) => assert_eq!((line, field.as_str()), (1, "run_id")),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn meta() -> RunMeta {
        RunMeta {
            program: "p".into(),
            version: VersionTag::old(),
            function: "foo".into(),
            run_id: "r0".into(),
            thread_count: 1,
            instruction_count: Some(1000),
        }
    }

    #[test]
    fn perf_stat_two_events() {
        let text = "1200,,c0,2000,100.00,,\n7,,c1,2000,100.00,,\n";
        let set = parse_perf_stat(text.as_bytes(), &spec2(), &meta()).unwrap();
        assert_eq!(set.samples[0].values, Values::Raw(vec![1200, 7]));
    }

    #[test]
    fn perf_stat_not_counted_names_event() {
        let text = "1200,,c0,2000,100.00,,\n<not counted>,,c1,0,0.00,,\n";
        match parse_perf_stat(text.as_bytes(), &spec2(), &meta()) {
            Err(Error::NotCounted(ev)) => assert_eq!(ev, "c1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn perf_stat_without_events_is_no_samples() {
        let text = "# started on Thu\n\n";
        assert!(matches!(
            parse_perf_stat(text.as_bytes(), &spec2(), &meta()),
            Err(Error::NoSamples)
        ));
    }

    #[test]
    fn normalize_divides_by_instructions_times_threads() {
        let set = ProfileSet::new(
            "p",
            VersionTag::old(),
            spec2(),
            vec![
                HpcSample {
                    function: "f".into(),
                    run_id: "r".into(),
                    thread_count: 2,
                    instruction_count: 10_000,
                    values: Values::Raw(vec![1000, 500]),
                },
                HpcSample {
                    function: "f".into(),
                    run_id: "r".into(),
                    thread_count: 3,
                    instruction_count: 5,
                    values: Values::Raw(vec![0, 0]),
                },
            ],
        );
        let n = normalize(&set).unwrap();
        assert_eq!(n.samples[0].values, Values::Normalized(vec![0.05, 0.025]));
        assert_eq!(n.samples[1].values, Values::Normalized(vec![0.0, 0.0]));
        assert!(matches!(normalize(&n), Err(Error::DoubleNormalization)));
    }

    #[test]
    fn normalize_identity_ratio_and_zero_instructions() {
        let spec = CounterSpec::new(["c"]).unwrap();
        let mut s = HpcSample {
            function: "f".into(),
            run_id: "r".into(),
            thread_count: 1,
            instruction_count: 7,
            values: Values::Raw(vec![7]),
        };
        let set = ProfileSet::new("p", VersionTag::old(), spec.clone(), vec![s.clone()]);
        assert_eq!(normalize(&set).unwrap().samples[0].values, Values::Normalized(vec![1.0]));
        s.instruction_count = 0;
        let bad = ProfileSet::new("p", VersionTag::old(), spec, vec![s]);
        assert!(matches!(normalize(&bad), Err(Error::InvalidSample { index: 0, .. })));
    }
}
