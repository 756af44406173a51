//! Rendering command results as JSON or a plain text table.

use std::collections::BTreeSet;

use clap::ValueEnum;
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Table,
}

pub fn render(value: &Value, format: Format) -> String {
    match format {
        Format::Json => serde_json::to_string_pretty(value).expect("json values always serialize"),
        Format::Table => table(value),
    }
}

fn cell(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        Value::Null => "-".into(),
        other => other.to_string(),
    }
}

fn grid(header: Vec<String>, rows: Vec<Vec<String>>) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in &rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        padded.join("  ").trim_end().to_string()
    };
    let mut out = vec![line(&header)];
    out.extend(rows.iter().map(|r| line(r)));
    out.join("\n")
}

/// Arrays of objects get one column per key; objects get key/value rows.
fn table(value: &Value) -> String {
    match value {
        Value::Array(items) if items.is_empty() => "(none)".into(),
        Value::Array(items) if items.iter().all(Value::is_object) => {
            let keys: BTreeSet<&String> = items.iter().flat_map(|i| i.as_object().unwrap().keys()).collect();
            let rows = items.iter().map(|i| keys.iter().map(|k| cell(&i[k.as_str()])).collect()).collect();
            grid(keys.into_iter().cloned().collect(), rows)
        }
        Value::Array(items) => items.iter().map(cell).collect::<Vec<_>>().join("\n"),
        Value::Object(map) => {
            let rows = map.iter().map(|(k, v)| vec![k.clone(), cell(v)]).collect();
            grid(vec!["field".into(), "value".into()], rows)
        }
        scalar => cell(scalar),
    }
}
